//! The scoring pipeline: normative fit, per participant-session kernel
//! selection and scoring, and the cross-session reliability summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bartr::kernel::enumerate_candidate_kernels;
use bartr::nonuse::{
    nu_bartr, raw_c_bartr, raw_s_bartr, ModelKernels, NonuseScore, NormativeModel,
    NormativeSummary, ParticipantFits, ParticipantModel,
};
use bartr::selection::{select_from, Dataset, TaskKind, Visit};
use bartr::session::{Phase, SessionLog, Side};
use bartr::stats::{icc_1k, IccResult, ScoreMatrix};
use bartr::util::derive_seed;
use bartr::{KernelExpr, WorkspaceSpec};
use serde::Serialize;

use crate::{ingest, write_text, CliResult, Failure, FailureKind};

pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workspace: WorkspaceSpec,
    pub logs: Vec<PathBuf>,
    pub normative: Vec<PathBuf>,
    pub affected: BTreeMap<String, Side>,
    /// Fixed kernel for every model; `None` runs selection.
    pub kernel: Option<KernelExpr>,
    pub candidates: Vec<KernelExpr>,
    pub samples: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.workspace.validate().map_err(Failure::validation)?;
        if self.samples < MIN_SAMPLES {
            return Err(Failure::validation(format!(
                "samples must be at least {MIN_SAMPLES} (got {})",
                self.samples
            )));
        }
        if self.logs.is_empty() {
            return Err(Failure::validation("no participant logs given"));
        }
        if self.normative.is_empty() {
            return Err(Failure::validation("no normative logs given"));
        }
        if self.candidates.is_empty() && self.kernel.is_none() {
            return Err(Failure::validation("empty candidate kernel list"));
        }
        if let Some(p) = self
            .logs
            .iter()
            .chain(&self.normative)
            .find(|p| !p.is_file())
        {
            return Err(Failure::validation(format!(
                "{}: no such file",
                p.display()
            )));
        }
        Ok(())
    }
}

/// Parses `participant=side` pairs.
pub fn parse_affected(pairs: &[String]) -> CliResult<BTreeMap<String, Side>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (who, side) = pair.split_once('=').ok_or_else(|| {
            Failure::validation(format!("expected participant=side, got '{pair}'"))
        })?;
        let side: Side = side.trim().parse().map_err(Failure::validation)?;
        if map.insert(who.trim().to_string(), side).is_some() {
            return Err(Failure::validation(format!(
                "participant '{who}' listed twice"
            )));
        }
    }
    Ok(map)
}

/// Comma-separated kernel names; `None` means all 15 candidates.
pub fn parse_candidates(list: Option<&str>) -> CliResult<Vec<KernelExpr>> {
    match list {
        None => Ok(enumerate_candidate_kernels()),
        Some(s) => s
            .split(',')
            .map(|k| k.trim().parse::<KernelExpr>().map_err(Failure::validation))
            .collect(),
    }
}

/// Selection datasets of one visit: hand choice (affected = true) from the
/// spontaneous phase, success from the constrained phase and affected-arm
/// reach times from both.
pub fn visit_datasets(
    spontaneous: Option<&SessionLog>,
    constrained: Option<&SessionLog>,
    affected: Side,
) -> Visit {
    let mut visit = Vec::new();
    if let Some(s) = spontaneous {
        let (xs, ys): (Vec<_>, Vec<_>) = s
            .trials
            .iter()
            .filter_map(|t| t.hand.side().map(|h| (t.target, h == affected)))
            .unzip();
        visit.push((
            TaskKind::SideClassifier,
            Dataset::labels(xs, ys).expect("equal lengths"),
        ));
    }
    if let Some(c) = constrained {
        let (xs, ys): (Vec<_>, Vec<_>) = c.trials.iter().map(|t| (t.target, t.success)).unzip();
        visit.push((
            TaskKind::SuccessClassifier,
            Dataset::labels(xs, ys).expect("equal lengths"),
        ));
    }
    let (xs, ys): (Vec<_>, Vec<_>) = spontaneous
        .into_iter()
        .chain(constrained)
        .flat_map(|l| l.reaches_with(affected))
        .unzip();
    if !xs.is_empty() {
        visit.push((
            TaskKind::TimeRegressor,
            Dataset::times(xs, ys).expect("equal lengths"),
        ));
    }
    visit
}

/// Both phases of one participant-session.
#[derive(Debug, Default)]
pub struct SessionPair {
    pub spontaneous: Option<SessionLog>,
    pub constrained: Option<SessionLog>,
}

/// Groups logs by (participant, session); a phase given twice is an error.
pub fn pair_logs(logs: Vec<SessionLog>) -> CliResult<BTreeMap<(String, u8), SessionPair>> {
    let mut map: BTreeMap<(String, u8), SessionPair> = BTreeMap::new();
    for log in logs {
        let key = (log.participant.clone(), log.session);
        let slot = map.entry(key).or_default();
        let cell = match log.phase {
            Phase::Spontaneous => &mut slot.spontaneous,
            Phase::Constrained => &mut slot.constrained,
        };
        if cell.is_some() {
            return Err(Failure::validation(format!(
                "two {} logs for {} session {}",
                log.phase, log.participant, log.session
            )));
        }
        *cell = Some(log);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSeeds {
    pub selection: Option<u64>,
    pub fit: u64,
    pub monte_carlo: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryReport {
    pub participant: String,
    pub session: u8,
    pub affected: Option<Side>,
    pub status: Status,
    pub error: Option<String>,
    pub seeds: StageSeeds,
    pub kernels: Option<ModelKernels>,
    pub score: Option<NonuseScore>,
    pub raw_c_bartr: Option<f64>,
    pub raw_s_bartr: Option<f64>,
    pub fits: Option<ParticipantFits>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormativeReport {
    pub logs: usize,
    pub kernels: ModelKernels,
    pub seed: u64,
    pub summary: NormativeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reliability {
    pub icc: Option<IccResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub samples: usize,
    pub workspace: WorkspaceSpec,
    pub kernel_override: Option<KernelExpr>,
    pub candidates: Vec<KernelExpr>,
    pub normative: NormativeReport,
    pub entries: Vec<EntryReport>,
    /// Participant logs that failed ingestion.
    pub rejected: Vec<RejectedLog>,
    pub reliability: Reliability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLog {
    pub path: String,
    pub error: String,
}

impl Report {
    pub fn all_failed(&self) -> bool {
        self.entries.iter().all(|e| e.status == Status::Failed)
    }

    /// Participants × sessions matrix of nuBARTR; failed cells are empty.
    pub fn matrix(&self) -> ScoreMatrix {
        let participants: Vec<String> = {
            let mut p: Vec<String> = self.entries.iter().map(|e| e.participant.clone()).collect();
            p.dedup();
            p
        };
        let mut sessions: Vec<u8> = self.entries.iter().map(|e| e.session).collect();
        sessions.sort_unstable();
        sessions.dedup();
        let values = participants
            .iter()
            .map(|p| {
                sessions
                    .iter()
                    .map(|s| {
                        self.entries
                            .iter()
                            .find(|e| &e.participant == p && e.session == *s)
                            .and_then(|e| e.score.as_ref().map(|sc| sc.nu_bartr))
                    })
                    .collect()
            })
            .collect();
        ScoreMatrix {
            participants,
            sessions: sessions.iter().map(|s| format!("s{s}")).collect(),
            values,
        }
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from(
            "participant,session,status,nu_bartr,c_mean,s_mean,mc_se,raw_c_bartr,raw_s_bartr,side_kernel,success_kernel,time_kernel\n",
        );
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            let sc = e.score.as_ref();
            let k = |pick: fn(&ModelKernels) -> &KernelExpr| {
                e.kernels
                    .as_ref()
                    .map(|m| pick(m).to_string())
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.participant,
                e.session,
                if e.status == Status::Ok {
                    "ok"
                } else {
                    "failed"
                },
                f(sc.map(|s| s.nu_bartr)),
                f(sc.map(|s| s.c_mean)),
                f(sc.map(|s| s.s_mean)),
                f(sc.map(|s| s.mc_se)),
                f(e.raw_c_bartr),
                f(e.raw_s_bartr),
                k(|m| &m.side),
                k(|m| &m.success),
                k(|m| &m.time),
            );
        }
        out
    }

    /// Writes report.json, scores.csv and matrix.csv into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).map_err(Failure::numeric)?;
        write_text(&dir.join("report.json"), &(json + "\n"))?;
        write_text(&dir.join("scores.csv"), &self.scores_csv())?;
        write_text(&dir.join("matrix.csv"), &self.matrix().to_csv())
    }
}

fn select_kernels(
    visit: &Visit,
    candidates: &[KernelExpr],
    seed: u64,
) -> Result<ModelKernels, String> {
    let pick = |task: TaskKind| -> Result<KernelExpr, String> {
        let (_, data) = visit
            .iter()
            .find(|(t, _)| *t == task)
            .ok_or_else(|| format!("no {task} data for kernel selection"))?;
        select_from(data, task, candidates, seed)
            .map(|s| s.best)
            .map_err(|e| format!("{task} kernel selection: {e}"))
    };
    Ok(ModelKernels {
        side: pick(TaskKind::SideClassifier)?,
        success: pick(TaskKind::SuccessClassifier)?,
        time: pick(TaskKind::TimeRegressor)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_entry(
    cfg: &PipelineConfig,
    participant: &str,
    session: u8,
    pair: &SessionPair,
    nm: &NormativeModel,
    summary: &NormativeSummary,
    mc_seed: u64,
) -> EntryReport {
    let entry_seed = derive_seed(cfg.seed, &format!("{participant}/s{session}"));
    let seeds = StageSeeds {
        selection: cfg
            .kernel
            .is_none()
            .then(|| derive_seed(entry_seed, "selection")),
        fit: derive_seed(entry_seed, "fit"),
        monte_carlo: mc_seed,
    };
    let mut rep = EntryReport {
        participant: participant.to_string(),
        session,
        affected: cfg.affected.get(participant).copied(),
        status: Status::Failed,
        error: None,
        seeds,
        kernels: None,
        score: None,
        raw_c_bartr: None,
        raw_s_bartr: None,
        fits: None,
    };
    let result = (|| -> Result<(), String> {
        let affected = rep
            .affected
            .ok_or_else(|| format!("no affected side given for '{participant}'"))?;
        let (Some(spont), Some(cons)) = (&pair.spontaneous, &pair.constrained) else {
            return Err("session needs both a spontaneous and a constrained log".into());
        };
        for log in [spont, cons] {
            log.check_workspace(&cfg.workspace)
                .map_err(|e| format!("{} log: {e}", log.phase))?;
        }
        let kernels = match (&cfg.kernel, rep.seeds.selection) {
            (Some(k), _) => ModelKernels {
                side: k.clone(),
                success: k.clone(),
                time: k.clone(),
            },
            (None, Some(seed)) => select_kernels(
                &visit_datasets(Some(spont), Some(cons), affected),
                &cfg.candidates,
                seed,
            )?,
            (None, None) => unreachable!("selection seed is set when no kernel is fixed"),
        };
        rep.kernels = Some(kernels.clone());
        rep.raw_c_bartr = Some(raw_c_bartr(cons).map_err(|e| e.to_string())?);
        rep.raw_s_bartr = Some(raw_s_bartr(spont, affected, summary).map_err(|e| e.to_string())?);
        let (pm, fits) =
            ParticipantModel::fit(participant, affected, spont, cons, &kernels, rep.seeds.fit)
                .map_err(|e| e.to_string())?;
        rep.fits = Some(fits);
        rep.score = Some(
            nu_bartr(&pm, nm, &cfg.workspace, cfg.samples, mc_seed).map_err(|e| e.to_string())?,
        );
        Ok(())
    })();
    match result {
        Ok(()) => rep.status = Status::Ok,
        Err(e) => {
            log::warn!("{participant} session {session}: {e}");
            rep.error = Some(e);
        }
    }
    rep
}

/// Runs the whole pipeline. Participant-session failures are recorded in the
/// report; only configuration, ingestion of normative data and the
/// normative fit abort the run.
pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<Report> {
    cfg.validate()?;
    let normative_logs = cfg
        .normative
        .iter()
        .map(|p| ingest(p))
        .collect::<CliResult<Vec<_>>>()?;
    for (log, path) in normative_logs.iter().zip(&cfg.normative) {
        log.check_workspace(&cfg.workspace)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    }
    let mut logs = Vec::new();
    let mut rejected = Vec::new();
    for path in &cfg.logs {
        match ingest(path) {
            Ok(log) => logs.push(log),
            Err(e) => {
                log::warn!("skipping log: {e}");
                rejected.push(RejectedLog {
                    path: path.display().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    let pairs = pair_logs(logs)?;

    let normative_kernels = cfg
        .kernel
        .as_ref()
        .map(|k| ModelKernels {
            side: k.clone(),
            success: k.clone(),
            time: k.clone(),
        })
        .unwrap_or_default();
    let normative_seed = derive_seed(cfg.seed, "normative");
    let nm =
        NormativeModel::fit(&normative_logs, &normative_kernels, normative_seed).map_err(|e| {
            Failure {
                kind: FailureKind::Total,
                error: anyhow::anyhow!("normative model: {e}"),
            }
        })?;
    let summary = NormativeSummary::from_logs(&normative_logs).map_err(|e| Failure {
        kind: FailureKind::Total,
        error: anyhow::anyhow!("normative summary: {e}"),
    })?;

    // shared by every score
    let mc_seed = derive_seed(cfg.seed, "monte-carlo");
    let entries: Vec<EntryReport> = pairs
        .iter()
        .map(|((who, session), pair)| score_entry(cfg, who, *session, pair, &nm, &summary, mc_seed))
        .collect();

    let mut report = Report {
        seed: cfg.seed,
        samples: cfg.samples,
        workspace: cfg.workspace,
        kernel_override: cfg.kernel.clone(),
        candidates: if cfg.kernel.is_some() {
            Vec::new()
        } else {
            cfg.candidates.clone()
        },
        normative: NormativeReport {
            logs: normative_logs.len(),
            kernels: normative_kernels,
            seed: normative_seed,
            summary,
        },
        entries,
        rejected,
        reliability: Reliability {
            icc: None,
            error: None,
        },
    };
    match icc_1k(&report.matrix().values) {
        Ok(icc) => report.reliability.icc = Some(icc),
        Err(e) => report.reliability.error = Some(e.to_string()),
    }
    Ok(report)
}
