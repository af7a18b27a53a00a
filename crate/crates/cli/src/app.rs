//! Command-line surface: argument parsing and one handler per verb. Each
//! handler returns the text it prints on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bartr::nonuse::{ModelKernels, ParticipantModel};
use bartr::selection::{evaluation_table, TableRow, TaskKind};
use bartr::session::{Phase, Side};
use bartr::sim::{run_session, SimError};
use bartr::stats::{
    cronbach_alpha, icc_1k, parse_aaut_csv, parse_score_matrix, parse_sus_csv, pearson, score_aaut,
    score_sus, spearman, spearman_permutation_p, wilcoxon_signed_rank, Correlation, IccResult,
    StatsError, WilcoxonResult, SUS_THRESHOLD,
};
use bartr::util::derive_seed;
use bartr::{KernelExpr, WorkspaceSpec};
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{
    require, AautArgs, ConfigFile, HeatmapArgs, ScoreArgs, SelectArgs, SimulateArgs, StatsArgs,
    SusArgs, WorkspaceArgs,
};
use crate::heatmap::export_heatmap;
use crate::pipeline::{
    pair_logs, parse_affected, parse_candidates, run_pipeline, visit_datasets, PipelineConfig,
};
use crate::{ingest, read_text, write_text, Classify, CliResult, Failure, FailureKind};

#[derive(Debug, Parser)]
#[command(
    name = "bartr",
    version,
    about = "Arm-nonuse scoring from bimanual reaching sessions"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub workspace: WorkspaceArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate session logs from behavior parameters.
    Simulate(SimulateArgs),
    /// Cross-validate candidate kernels on session logs.
    #[command(name = "select-kernels")]
    SelectKernels(SelectArgs),
    /// Score participant logs against normative logs.
    Score(ScoreArgs),
    /// ICC, correlations and the Wilcoxon test on CSV inputs.
    Stats(StatsArgs),
    /// Score SUS questionnaires.
    Sus(SusArgs),
    /// Score AAUT amount-of-use records.
    Aaut(AautArgs),
    /// Export a fitted field as CSV grids.
    Heatmap(HeatmapArgs),
}

pub fn run(cli: Cli) -> CliResult<String> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut ws = cli.workspace;
    ws.overlay(&file.workspace);
    let spec = ws.spec()?;
    match cli.command {
        Command::Simulate(mut a) => {
            a.overlay(&file.simulate);
            simulate(&a, &spec)
        }
        Command::SelectKernels(mut a) => {
            a.overlay(&file.select);
            select_kernels(&a, &spec)
        }
        Command::Score(mut a) => {
            a.overlay(&file.score);
            score(&a, &spec)
        }
        Command::Stats(mut a) => {
            a.overlay(&file.stats);
            stats(&a)
        }
        Command::Sus(mut a) => {
            a.overlay(&file.sus);
            sus(&a)
        }
        Command::Aaut(mut a) => {
            a.overlay(&file.aaut);
            aaut(&a)
        }
        Command::Heatmap(mut a) => {
            a.overlay(&file.heatmap);
            heatmap(&a, &spec)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(Failure::numeric)
}

/// Writes JSON to `out`, or returns it for stdout.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<String> {
    let json = to_json(value)?;
    match out {
        Some(path) => {
            write_text(path, &json)?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(json),
    }
}

fn stats_failure(e: StatsError) -> Failure {
    match e {
        StatsError::Degenerate(_) | StatsError::UndefinedCorrelation(_) => Failure::numeric(e),
        StatsError::Validation(_) | StatsError::Csv { .. } => Failure::validation(e),
    }
}

/// A statistic that may be undefined for the given input.
#[derive(Debug, Serialize)]
struct Outcome<T> {
    value: Option<T>,
    error: Option<String>,
}

impl<T> From<Result<T, StatsError>> for Outcome<T> {
    fn from(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(v) => Outcome {
                value: Some(v),
                error: None,
            },
            Err(e) => Outcome {
                value: None,
                error: Some(e.to_string()),
            },
        }
    }
}

fn check_id(id: &str) -> CliResult<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(Failure::validation(format!(
            "participant id '{id}' must be non-empty [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, spec: &WorkspaceSpec) -> CliResult<String> {
    let seed = require(a.seed, "seed")?;
    let out = require(a.out.clone(), "out")?;
    let participant = a.participant.clone().unwrap_or_else(|| "p01".into());
    check_id(&participant)?;
    let sessions = a.sessions.unwrap_or(1);
    if !(1..=3).contains(&sessions) {
        return Err(Failure::validation(format!(
            "sessions must be 1–3 (got {sessions})"
        )));
    }
    let bm = a.behavior.model()?;
    let mut stdout = String::new();
    for session in 1..=sessions {
        for phase in [Phase::Spontaneous, Phase::Constrained] {
            let log_seed = derive_seed(seed, &format!("{participant}/s{session}/{phase}"));
            let mut log = run_session(&bm, phase, spec, log_seed).map_err(|e| match e {
                SimError::InvalidModel(_) | SimError::Workspace(_) => Failure::validation(e),
                SimError::Protocol(_) => Failure::numeric(e),
            })?;
            log.participant = participant.clone();
            log.session = session;
            let path = out.join(format!("{participant}_s{session}_{phase}.jsonl"));
            write_text(&path, &log.to_jsonl())?;
            let _ = writeln!(stdout, "wrote {}", path.display());
        }
    }
    Ok(stdout)
}

#[derive(Debug, Serialize)]
struct SelectionSummary {
    seed: u64,
    visits: Vec<String>,
    best: Option<ModelKernels>,
    rows: Vec<TableRow>,
}

/// Lowest mean NLML per task; ties go to fewer hyperparameters, then the
/// earlier candidate.
fn best_rows(rows: &[TableRow], task: TaskKind) -> Option<KernelExpr> {
    rows.iter()
        .filter(|r| r.task == task)
        .filter_map(|r| Some((r.nlml?, r.kernel.parse::<KernelExpr>().ok()?)))
        .enumerate()
        .min_by(|(i, (a, ka)), (j, (b, kb))| {
            a.total_cmp(b)
                .then(ka.leaf_count().cmp(&kb.leaf_count()))
                .then(i.cmp(j))
        })
        .map(|(_, (_, k))| k)
}

fn select_kernels(a: &SelectArgs, spec: &WorkspaceSpec) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let out = require(a.out.clone(), "out")?;
    if a.logs.is_empty() {
        return Err(Failure::validation("no --log files given"));
    }
    let affected = parse_affected(&a.affected)?;
    let candidates = parse_candidates(a.candidates.as_deref())?;
    let mut logs = Vec::new();
    for path in &a.logs {
        let log = ingest(path)?;
        log.check_workspace(spec)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        logs.push(log);
    }
    let mut names = Vec::new();
    let mut visits = Vec::new();
    for ((who, session), pair) in pair_logs(logs)? {
        let side = *affected
            .get(&who)
            .ok_or_else(|| Failure::validation(format!("no affected side given for '{who}'")))?;
        names.push(format!("{who}/s{session}"));
        visits.push(visit_datasets(
            pair.spontaneous.as_ref(),
            pair.constrained.as_ref(),
            side,
        ));
    }
    let table = evaluation_table(&visits, &candidates, seed).numeric()?;
    let best = match (
        best_rows(&table.rows, TaskKind::SideClassifier),
        best_rows(&table.rows, TaskKind::SuccessClassifier),
        best_rows(&table.rows, TaskKind::TimeRegressor),
    ) {
        (Some(side), Some(success), Some(time)) => Some(ModelKernels {
            side,
            success,
            time,
        }),
        _ => None,
    };
    write_text(&out.join("kernels.csv"), &table.to_csv())?;
    write_text(&out.join("kernels.md"), &table.to_markdown())?;
    let summary = SelectionSummary {
        seed,
        visits: names,
        best,
        rows: table.rows,
    };
    write_text(&out.join("selection.json"), &to_json(&summary)?)?;
    let mut stdout = String::new();
    for task in TaskKind::ALL {
        match best_rows(&summary.rows, task) {
            Some(k) => writeln!(stdout, "{task}: {k}"),
            None => writeln!(stdout, "{task}: no candidate could be scored"),
        }
        .expect("string write");
    }
    Ok(stdout)
}

fn score(a: &ScoreArgs, spec: &WorkspaceSpec) -> CliResult<String> {
    let cfg = PipelineConfig {
        workspace: *spec,
        logs: a.logs.clone(),
        normative: a.normative.clone(),
        affected: parse_affected(&a.affected)?,
        kernel: a
            .kernel
            .as_deref()
            .map(str::parse::<KernelExpr>)
            .transpose()
            .invalid()?,
        candidates: parse_candidates(a.candidates.as_deref())?,
        samples: a.samples.unwrap_or(bartr::nonuse::DEFAULT_SAMPLES),
        seed: require(a.seed, "seed")?,
    };
    let out = require(a.out.clone(), "out")?;
    let report = run_pipeline(&cfg)?;
    report.write(&out)?;
    let mut stdout = String::new();
    for e in &report.entries {
        match (&e.score, &e.error) {
            (Some(s), _) => writeln!(
                stdout,
                "{} s{} ok nu_bartr={:.6} se={:.6}",
                e.participant, e.session, s.nu_bartr, s.mc_se
            ),
            (None, err) => writeln!(
                stdout,
                "{} s{} failed: {}",
                e.participant,
                e.session,
                err.as_deref().unwrap_or("")
            ),
        }
        .expect("string write");
    }
    for r in &report.rejected {
        let _ = writeln!(stdout, "rejected {}: {}", r.path, r.error);
    }
    if let Some(icc) = &report.reliability.icc {
        let _ = writeln!(
            stdout,
            "ICC(1,k)={:.6} F={:.6} p={:.3e}",
            icc.icc, icc.f, icc.p
        );
    }
    if report.all_failed() {
        return Err(Failure {
            kind: FailureKind::Total,
            error: anyhow::anyhow!(
                "every participant-session failed; see {}",
                out.join("report.json").display()
            ),
        });
    }
    Ok(stdout)
}

#[derive(Debug, Serialize)]
struct SessionCorrelation {
    a: String,
    b: String,
    pearson: Outcome<Correlation>,
}

#[derive(Debug, Serialize)]
struct CorrelationReport {
    spearman: Correlation,
    pearson: Correlation,
    permutation_p: Option<f64>,
}

#[derive(Debug, Serialize)]
struct WilcoxonReport {
    threshold: f64,
    #[serde(flatten)]
    result: WilcoxonResult,
}

#[derive(Debug, Default, Serialize)]
struct StatsReport {
    icc: Option<IccResult>,
    session_correlations: Vec<SessionCorrelation>,
    correlation: Option<CorrelationReport>,
    wilcoxon: Option<WilcoxonReport>,
}

fn parse_values(text: &str) -> CliResult<Vec<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "value" => {}
        _ => return Err(Failure::validation("line 1: expected header 'value'")),
    }
    lines
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Failure::validation(format!("line {}: invalid value '{l}'", i + 1)))
        })
        .collect()
}

fn stats(a: &StatsArgs) -> CliResult<String> {
    if a.matrix.is_none() && a.correlate.is_none() && a.values.is_none() {
        return Err(Failure::validation(
            "give at least one of --matrix, --correlate, --values",
        ));
    }
    let mut report = StatsReport::default();
    if let Some(path) = &a.matrix {
        let m = parse_score_matrix(&read_text(path)?).map_err(stats_failure)?;
        report.icc = Some(icc_1k(&m.values).map_err(stats_failure)?);
        for i in 0..m.sessions.len() {
            for j in i + 1..m.sessions.len() {
                let (x, y): (Vec<f64>, Vec<f64>) =
                    m.values.iter().filter_map(|r| Some((r[i]?, r[j]?))).unzip();
                report.session_correlations.push(SessionCorrelation {
                    a: m.sessions[i].clone(),
                    b: m.sessions[j].clone(),
                    pearson: pearson(&x, &y).into(),
                });
            }
        }
    }
    if let Some(path) = &a.correlate {
        let m = parse_score_matrix(&read_text(path)?).map_err(stats_failure)?;
        if m.sessions != ["x", "y"] {
            return Err(Failure::validation(format!(
                "{}: expected header participant,x,y",
                path.display()
            )));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = m
            .values
            .iter()
            .map(|r| r[0].zip(r[1]))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Failure::validation(format!("{}: missing values", path.display())))?
            .into_iter()
            .unzip();
        let permutation_p = match a.permutation {
            Some(true) => Some(spearman_permutation_p(&x, &y).map_err(stats_failure)?),
            _ => None,
        };
        report.correlation = Some(CorrelationReport {
            spearman: spearman(&x, &y).map_err(stats_failure)?,
            pearson: pearson(&x, &y).map_err(stats_failure)?,
            permutation_p,
        });
    }
    if let Some(path) = &a.values {
        let values = parse_values(&read_text(path)?)?;
        let threshold = a.threshold.unwrap_or(SUS_THRESHOLD);
        let result = wilcoxon_signed_rank(&values, threshold).map_err(stats_failure)?;
        report.wilcoxon = Some(WilcoxonReport { threshold, result });
    }
    emit_json(&report, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct SusReport {
    scores: Vec<f64>,
    mean: f64,
    threshold: f64,
    wilcoxon: Outcome<WilcoxonResult>,
    cronbach_alpha: Outcome<f64>,
}

fn sus(a: &SusArgs) -> CliResult<String> {
    let path = require(a.input.clone(), "input")?;
    let responses = parse_sus_csv(&read_text(&path)?).map_err(stats_failure)?;
    if responses.is_empty() {
        return Err(Failure::validation(format!(
            "{}: no responses",
            path.display()
        )));
    }
    let scores: Vec<f64> = responses.iter().map(score_sus).collect();
    let threshold = a.threshold.unwrap_or(SUS_THRESHOLD);
    let items: Vec<Vec<f64>> = responses
        .iter()
        .map(|r| r.items().iter().map(|&v| f64::from(v)).collect())
        .collect();
    let report = SusReport {
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        threshold,
        wilcoxon: wilcoxon_signed_rank(&scores, threshold).into(),
        cronbach_alpha: cronbach_alpha(&items).into(),
        scores,
    };
    emit_json(&report, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct AautEntry {
    file: String,
    nonuse: f64,
}

#[derive(Debug, Serialize)]
struct AautReport {
    records: Vec<AautEntry>,
    /// Internal consistency of spontaneous amount of use across tasks.
    spontaneous_alpha: Outcome<f64>,
}

fn aaut(a: &AautArgs) -> CliResult<String> {
    if a.inputs.is_empty() {
        return Err(Failure::validation("no --input files given"));
    }
    let mut records = Vec::new();
    let mut items = Vec::new();
    for path in &a.inputs {
        let rec = parse_aaut_csv(&read_text(path)?).map_err(|e| Failure {
            error: anyhow::anyhow!("{}: {e}", path.display()),
            ..stats_failure(e)
        })?;
        records.push(AautEntry {
            file: path.display().to_string(),
            nonuse: score_aaut(&rec).map_err(stats_failure)?,
        });
        items.push(
            rec.tasks
                .iter()
                .map(|t| f64::from(t.spontaneous))
                .collect::<Vec<_>>(),
        );
    }
    let report = AautReport {
        records,
        spontaneous_alpha: cronbach_alpha(&items).into(),
    };
    emit_json(&report, a.out.as_deref())
}

fn heatmap(a: &HeatmapArgs, spec: &WorkspaceSpec) -> CliResult<String> {
    let out = require(a.out.clone(), "out")?;
    let affected: Side = require(a.affected.clone(), "affected")?
        .parse()
        .map_err(Failure::validation)?;
    let field = a.field.clone().unwrap_or_else(|| "choice".into());
    let resolution = a.resolution.unwrap_or(20);
    let heights = a.heights.unwrap_or(4);
    let seed = a.seed.unwrap_or(0);
    let kernels = match &a.kernel {
        Some(k) => {
            let k: KernelExpr = k.parse().map_err(Failure::validation)?;
            ModelKernels {
                side: k.clone(),
                success: k.clone(),
                time: k,
            }
        }
        None => ModelKernels::default(),
    };
    if !["choice", "success", "time"].contains(&field.as_str()) {
        return Err(Failure::validation(format!(
            "unknown field '{field}' (choice, success or time)"
        )));
    }
    if resolution < 2 {
        return Err(Failure::validation(format!(
            "resolution must be at least 2 (got {resolution})"
        )));
    }
    let logs = a
        .logs
        .iter()
        .map(|p| ingest(p))
        .collect::<CliResult<Vec<_>>>()?;
    let mut pairs = pair_logs(logs)?;
    if pairs.len() != 1 {
        return Err(Failure::validation(
            "heatmap needs the logs of exactly one participant-session",
        ));
    }
    let ((who, _), pair) = pairs.pop_first().expect("one pair");
    let (Some(spont), Some(cons)) = (&pair.spontaneous, &pair.constrained) else {
        return Err(Failure::validation(
            "heatmap needs a spontaneous and a constrained log",
        ));
    };
    let (pm, _) = ParticipantModel::fit(&who, affected, spont, cons, &kernels, seed).numeric()?;
    let slices = match field.as_str() {
        "choice" => export_heatmap(|xs| pm.choice.probabilities(xs), spec, resolution, heights),
        "success" => export_heatmap(|xs| pm.success.probabilities(xs), spec, resolution, heights),
        _ => export_heatmap(|xs| pm.time.mean_times(xs), spec, resolution, heights),
    }
    .numeric()?;
    let mut stdout = String::new();
    for s in &slices {
        let path = out.join(s.file_name(&field));
        write_text(&path, &s.to_csv())?;
        let _ = writeln!(stdout, "wrote {}", path.display());
    }
    Ok(stdout)
}
