//! Verb options. Each verb's flags double as a table of the TOML config
//! file (`[simulate]`, `[score]`, …); a flag given on the command line wins
//! over the file.

use std::path::{Path, PathBuf};

use bartr::sim::BehaviorModel;
use bartr::WorkspaceSpec;
use clap::Args;
use serde::Deserialize;

use crate::{read_text, CliResult, Failure};

macro_rules! overlay {
    ($cli:expr, $file:expr; $($f:ident),* $(,)?) => {
        $( if $cli.$f.is_none() { $cli.$f = $file.$f.clone(); } )*
    };
}

macro_rules! overlay_vec {
    ($cli:expr, $file:expr; $($f:ident),* $(,)?) => {
        $( if $cli.$f.is_empty() { $cli.$f = $file.$f.clone(); } )*
    };
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub workspace: WorkspaceArgs,
    pub simulate: SimulateArgs,
    #[serde(rename = "select-kernels")]
    pub select: SelectArgs,
    pub score: ScoreArgs,
    pub stats: StatsArgs,
    pub sus: SusArgs,
    pub aaut: AautArgs,
    pub heatmap: HeatmapArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceArgs {
    /// Inner workspace radius, cm.
    #[arg(long, global = true)]
    pub r_min: Option<f64>,
    /// Outer workspace radius, cm.
    #[arg(long, global = true)]
    pub r_max: Option<f64>,
    #[arg(long, global = true)]
    pub z_min: Option<f64>,
    #[arg(long, global = true)]
    pub z_max: Option<f64>,
}

impl WorkspaceArgs {
    pub fn overlay(&mut self, file: &WorkspaceArgs) {
        overlay!(self, file; r_min, r_max, z_min, z_max);
    }

    pub fn spec(&self) -> CliResult<WorkspaceSpec> {
        let d = WorkspaceSpec::default();
        let spec = WorkspaceSpec {
            r_min: self.r_min.unwrap_or(d.r_min),
            r_max: self.r_max.unwrap_or(d.r_max),
            z_min: self.z_min.unwrap_or(d.z_min),
            z_max: self.z_max.unwrap_or(d.z_max),
        };
        spec.validate().map_err(Failure::validation)?;
        Ok(spec)
    }
}

/// Generator parameters; unset fields keep the neurotypical preset.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorArgs {
    /// Log-odds of a right-hand reach at the midline.
    #[arg(long)]
    pub handedness_bias: Option<f64>,
    #[arg(long)]
    pub lateral_gain: Option<f64>,
    /// Log-odds shift away from the affected arm.
    #[arg(long)]
    pub nonuse_severity: Option<f64>,
    /// Reach speed, cm/s.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Reaction latency, s.
    #[arg(long)]
    pub latency: Option<f64>,
    /// Extra seconds per cm of target height.
    #[arg(long)]
    pub vertical_penalty: Option<f64>,
    /// Reach-time noise sd, s.
    #[arg(long)]
    pub time_noise: Option<f64>,
    /// left or right.
    #[arg(long = "affected-side")]
    pub affected_side: Option<String>,
}

impl BehaviorArgs {
    pub fn overlay(&mut self, file: &BehaviorArgs) {
        overlay!(self, file; handedness_bias, lateral_gain, nonuse_severity, speed, latency,
            vertical_penalty, time_noise, affected_side);
    }

    pub fn model(&self) -> CliResult<BehaviorModel> {
        let d = BehaviorModel::neurotypical();
        let affected_side = match &self.affected_side {
            Some(s) => s.parse().map_err(Failure::validation)?,
            None => d.affected_side,
        };
        let bm = BehaviorModel {
            handedness_bias: self.handedness_bias.unwrap_or(d.handedness_bias),
            lateral_gain: self.lateral_gain.unwrap_or(d.lateral_gain),
            nonuse_severity: self.nonuse_severity.unwrap_or(d.nonuse_severity),
            speed: self.speed.unwrap_or(d.speed),
            latency: self.latency.unwrap_or(d.latency),
            vertical_penalty: self.vertical_penalty.unwrap_or(d.vertical_penalty),
            time_noise: self.time_noise.unwrap_or(d.time_noise),
            affected_side,
        };
        bm.validate().map_err(Failure::validation)?;
        Ok(bm)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the session logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub participant: Option<String>,
    /// Sessions to simulate (1–3), each with both phases.
    #[arg(long)]
    pub sessions: Option<u8>,
    /// `[simulate.behavior]` in the config file.
    #[command(flatten)]
    pub behavior: BehaviorArgs,
}

impl SimulateArgs {
    pub fn overlay(&mut self, file: &SimulateArgs) {
        overlay!(self, file; seed, out, participant, sessions);
        self.behavior.overlay(&file.behavior);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Session log files.
    #[arg(long = "log", num_args = 1..)]
    pub logs: Vec<PathBuf>,
    /// `participant=side` pairs.
    #[arg(long, num_args = 1..)]
    pub affected: Vec<String>,
    /// Comma-separated candidate kernels (default: all 15).
    #[arg(long)]
    pub candidates: Option<String>,
}

impl SelectArgs {
    pub fn overlay(&mut self, file: &SelectArgs) {
        overlay!(self, file; seed, out, candidates);
        overlay_vec!(self, file; logs, affected);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Post-stroke session log files.
    #[arg(long = "log", num_args = 1..)]
    pub logs: Vec<PathBuf>,
    /// Neurotypical session log files.
    #[arg(long = "normative", num_args = 1..)]
    pub normative: Vec<PathBuf>,
    /// `participant=side` pairs.
    #[arg(long, num_args = 1..)]
    pub affected: Vec<String>,
    /// Fixed kernel for every model; disables kernel selection.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Comma-separated candidate kernels for selection (default: all 15).
    #[arg(long)]
    pub candidates: Option<String>,
    /// Monte-Carlo samples per score (≥ 1000).
    #[arg(long)]
    pub samples: Option<usize>,
}

impl ScoreArgs {
    pub fn overlay(&mut self, file: &ScoreArgs) {
        overlay!(self, file; seed, out, kernel, candidates, samples);
        overlay_vec!(self, file; logs, normative, affected);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsArgs {
    /// Score matrix CSV (participant,<session>,…) for ICC and session correlations.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// CSV with columns participant,x,y for Spearman and Pearson correlation.
    #[arg(long)]
    pub correlate: Option<PathBuf>,
    /// Single-column CSV (`value`) for the Wilcoxon test against --threshold.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also report the exact permutation p of Spearman's rho (n ≤ 10).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub permutation: Option<bool>,
    /// Output JSON file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl StatsArgs {
    pub fn overlay(&mut self, file: &StatsArgs) {
        overlay!(self, file; matrix, correlate, values, threshold, permutation, out);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SusArgs {
    /// SUS CSV (item1,…,item10).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SusArgs {
    pub fn overlay(&mut self, file: &SusArgs) {
        overlay!(self, file; input, threshold, out);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AautArgs {
    /// AAUT CSV files (spontaneous,constrained[,qom]), one per participant.
    #[arg(long = "input", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AautArgs {
    pub fn overlay(&mut self, file: &AautArgs) {
        overlay!(self, file; out);
        overlay_vec!(self, file; inputs);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spontaneous and constrained logs of one participant-session.
    #[arg(long = "log", num_args = 1..)]
    pub logs: Vec<PathBuf>,
    /// Affected side of the participant (left or right).
    #[arg(long)]
    pub affected: Option<String>,
    /// choice, success or time.
    #[arg(long)]
    pub field: Option<String>,
    /// Lattice points per axis (≥ 2).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Number of height slices.
    #[arg(long)]
    pub heights: Option<usize>,
    #[arg(long)]
    pub kernel: Option<String>,
}

impl HeatmapArgs {
    pub fn overlay(&mut self, file: &HeatmapArgs) {
        overlay!(self, file; seed, out, affected, field, resolution, heights, kernel);
        overlay_vec!(self, file; logs);
    }
}

pub(crate) fn require<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| Failure::validation(format!("--{flag} is required (flag or config file)")))
}
