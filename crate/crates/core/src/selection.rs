//! Cross-validated kernel comparison and NLML-based kernel choice.
//!
//! Each candidate kernel is scored with seeded 5-fold cross validation:
//! hyperparameters are fitted on four folds, held-out metrics are computed
//! on the fifth, and the training NLML of every fold fit is recorded. The
//! candidate with the lowest mean training NLML is selected.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{self, GpError};
use crate::kernel::{enumerate_candidate_kernels, Hyperparams, KernelExpr};
use crate::util::derive_seed;
use crate::workspace::Point3;

pub const FOLDS: usize = 5;
pub const MIN_EXAMPLES: usize = 10;

/// Exact CSV header of the evaluation report.
pub const CSV_HEADER: &str = "kernel,task,acc,nll,mse,me,nlml,folds,seed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("dataset has {0} examples; cross validation needs at least {MIN_EXAMPLES}")]
    TooSmall(usize),
    #[error("task {task} expects {expected} targets")]
    WrongTargets {
        task: TaskKind,
        expected: &'static str,
    },
    #[error("fold {fold} failed for {kernel}: {source}")]
    Fold {
        kernel: String,
        fold: usize,
        source: GpError,
    },
    #[error("no candidate kernel could be fitted: {}", summarize(.0))]
    AllFailed(Vec<(String, String)>),
    #[error("no candidate kernels supplied")]
    NoCandidates,
}

fn summarize(failures: &[(String, String)]) -> String {
    failures
        .iter()
        .map(|(k, e)| format!("{k}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SideClassifier,
    SuccessClassifier,
    TimeRegressor,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::SideClassifier,
        TaskKind::SuccessClassifier,
        TaskKind::TimeRegressor,
    ];

    pub fn is_classifier(self) -> bool {
        !matches!(self, TaskKind::TimeRegressor)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SideClassifier => "side",
            TaskKind::SuccessClassifier => "success",
            TaskKind::TimeRegressor => "time",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task '{s}' (expected side, success or time)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<bool>),
    Times(Vec<f64>),
}

/// Inputs paired with either class labels or reach times.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Point3>,
    targets: Targets,
}

impl Dataset {
    pub fn labels(inputs: Vec<Point3>, labels: Vec<bool>) -> Result<Self, GpError> {
        if inputs.len() != labels.len() {
            return Err(GpError::InvalidData(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Labels(labels),
        })
    }

    pub fn times(inputs: Vec<Point3>, times: Vec<f64>) -> Result<Self, GpError> {
        if inputs.len() != times.len() {
            return Err(GpError::InvalidData(format!(
                "{} inputs but {} times",
                inputs.len(),
                times.len()
            )));
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Times(times),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Point3] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn check(&self, task: TaskKind) -> Result<(), SelectionError> {
        match (&self.targets, task.is_classifier()) {
            (Targets::Labels(_), true) | (Targets::Times(_), false) => {}
            (_, true) => {
                return Err(SelectionError::WrongTargets {
                    task,
                    expected: "label",
                })
            }
            (_, false) => {
                return Err(SelectionError::WrongTargets {
                    task,
                    expected: "time",
                })
            }
        }
        if self.len() < MIN_EXAMPLES {
            return Err(SelectionError::TooSmall(self.len()));
        }
        Ok(())
    }
}

/// Seeded random partition of `0..n` into `k` near-equal folds, each sorted.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k.max(1) + 1); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Held-out metrics and training NLML of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    /// ACC for classifiers, MSE for the regressor.
    pub primary: f64,
    /// NLL for classifiers, ME for the regressor.
    pub secondary: f64,
    pub nlml: f64,
    pub theta: Hyperparams,
    pub converged: bool,
    /// Training split contained only one class.
    pub single_class: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelScore {
    pub kernel: KernelExpr,
    pub task: TaskKind,
    pub primary: f64,
    pub secondary: f64,
    pub nlml: f64,
    pub folds: Vec<FoldScore>,
    pub seed: u64,
}

impl KernelScore {
    pub fn acc(&self) -> Option<f64> {
        self.task.is_classifier().then_some(self.primary)
    }

    pub fn nll(&self) -> Option<f64> {
        self.task.is_classifier().then_some(self.secondary)
    }

    pub fn mse(&self) -> Option<f64> {
        (!self.task.is_classifier()).then_some(self.primary)
    }

    pub fn me(&self) -> Option<f64> {
        (!self.task.is_classifier()).then_some(self.secondary)
    }

    pub fn single_class_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.single_class).count()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn pick<T: Clone>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i].clone()).collect()
}

/// Seed used for the hyperparameter fit of fold `fold`.
pub fn fold_fit_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &format!("fold-{fold}"))
}

pub fn cross_validate(
    data: &Dataset,
    kernel: &KernelExpr,
    task: TaskKind,
    seed: u64,
) -> Result<KernelScore, SelectionError> {
    data.check(task)?;
    let folds = fold_partition(data.len(), FOLDS, derive_seed(seed, "partition"));
    let mut scores = Vec::with_capacity(FOLDS);
    for (f, held_out) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..data.len())
            .filter(|i| held_out.binary_search(i).is_err())
            .collect();
        let fit_seed = fold_fit_seed(seed, f);
        let xs_train = pick(&data.inputs, &train);
        let xs_test = pick(&data.inputs, held_out);
        let fold_err = |source| SelectionError::Fold {
            kernel: kernel.to_string(),
            fold: f,
            source,
        };
        let score = match &data.targets {
            Targets::Labels(labels) => {
                let l_train = pick(labels, &train);
                let (model, report) =
                    gp::fit_classifier(&xs_train, &l_train, kernel, fit_seed).map_err(fold_err)?;
                if report.degenerate_labels {
                    log::warn!("{kernel} fold {f}: training split holds a single class");
                }
                let (acc, nll) =
                    gp::classification_metrics(&model, &xs_test, &pick(labels, held_out))
                        .map_err(fold_err)?;
                FoldScore {
                    primary: acc,
                    secondary: nll,
                    nlml: report.nlml,
                    theta: model.theta().clone(),
                    converged: report.converged,
                    single_class: report.degenerate_labels,
                }
            }
            Targets::Times(times) => {
                let (model, report) =
                    gp::fit_regressor(&xs_train, &pick(times, &train), kernel, fit_seed)
                        .map_err(fold_err)?;
                let (mse, me) = gp::regression_metrics(&model, &xs_test, &pick(times, held_out))
                    .map_err(fold_err)?;
                FoldScore {
                    primary: mse,
                    secondary: me,
                    nlml: report.nlml,
                    theta: model.theta().clone(),
                    converged: report.converged,
                    single_class: false,
                }
            }
        };
        scores.push(score);
    }
    Ok(KernelScore {
        kernel: kernel.clone(),
        task,
        primary: mean(scores.iter().map(|s| s.primary)),
        secondary: mean(scores.iter().map(|s| s.secondary)),
        nlml: mean(scores.iter().map(|s| s.nlml)),
        folds: scores,
        seed,
    })
}

/// Outcome of comparing candidate kernels on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: KernelExpr,
    /// One entry per candidate that could be scored, in candidate order.
    pub scores: Vec<KernelScore>,
    /// Candidates whose cross validation failed, with the reason.
    pub failures: Vec<(KernelExpr, String)>,
}

impl Selection {
    pub fn best_score(&self) -> &KernelScore {
        self.scores
            .iter()
            .find(|s| s.kernel == self.best)
            .expect("best kernel is scored")
    }
}

/// Scores all 15 candidates and picks the lowest mean NLML.
pub fn select_kernel(
    data: &Dataset,
    task: TaskKind,
    seed: u64,
) -> Result<Selection, SelectionError> {
    select_from(data, task, &enumerate_candidate_kernels(), seed)
}

/// Like [`select_kernel`] over an explicit candidate list. Ties go to the
/// kernel with fewer hyperparameters, then to the earlier candidate.
pub fn select_from(
    data: &Dataset,
    task: TaskKind,
    candidates: &[KernelExpr],
    seed: u64,
) -> Result<Selection, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    data.check(task)?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for k in candidates {
        match cross_validate(data, k, task, seed) {
            Ok(s) if s.nlml.is_finite() => scores.push(s),
            Ok(s) => failures.push((k.clone(), format!("non-finite mean NLML {}", s.nlml))),
            Err(e) => {
                log::warn!("candidate {k} failed: {e}");
                failures.push((k.clone(), e.to_string()));
            }
        }
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.nlml
                .total_cmp(&b.nlml)
                .then(a.kernel.leaf_count().cmp(&b.kernel.leaf_count()))
                .then(i.cmp(j))
        })
        .map(|(_, s)| s.kernel.clone());
    match best {
        Some(best) => Ok(Selection {
            best,
            scores,
            failures,
        }),
        None => Err(SelectionError::AllFailed(
            failures
                .into_iter()
                .map(|(k, e)| (k.to_string(), e))
                .collect(),
        )),
    }
}

/// One row of the aggregated report; metrics not defined for the task are
/// left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub kernel: String,
    pub task: TaskKind,
    pub acc: Option<f64>,
    pub nll: Option<f64>,
    pub mse: Option<f64>,
    pub me: Option<f64>,
    pub nlml: Option<f64>,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub rows: Vec<TableRow>,
}

/// Datasets of a single participant visit, keyed by task.
pub type Visit = Vec<(TaskKind, Dataset)>;

/// Averages per-candidate cross-validation metrics over visits, task by
/// task. Every visit uses the same seed, so the result does not depend on
/// visit order. Visits where a candidate fails are left out of its means.
pub fn evaluation_table(
    visits: &[Visit],
    candidates: &[KernelExpr],
    seed: u64,
) -> Result<EvaluationTable, SelectionError> {
    let mut rows = Vec::new();
    for task in TaskKind::ALL {
        let sets: Vec<&Dataset> = visits
            .iter()
            .flat_map(|v| v.iter().filter(|(t, _)| *t == task).map(|(_, d)| d))
            .collect();
        if sets.is_empty() {
            continue;
        }
        for k in candidates {
            let mut scored = Vec::new();
            for d in &sets {
                match cross_validate(d, k, task, seed) {
                    Ok(s) => scored.push(s),
                    Err(e) => log::warn!("{task}/{k}: visit skipped: {e}"),
                }
            }
            let avg = |f: &dyn Fn(&KernelScore) -> Option<f64>| -> Option<f64> {
                if scored.is_empty() {
                    return None;
                }
                scored
                    .iter()
                    .map(f)
                    .sum::<Option<f64>>()
                    .map(|s| s / scored.len() as f64)
            };
            rows.push(TableRow {
                kernel: k.to_string(),
                task,
                acc: avg(&|s| s.acc()),
                nll: avg(&|s| s.nll()),
                mse: avg(&|s| s.mse()),
                me: avg(&|s| s.me()),
                nlml: avg(&|s| Some(s.nlml)),
                folds: FOLDS,
                seed,
            });
        }
    }
    Ok(EvaluationTable { rows })
}

impl EvaluationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.kernel,
                r.task,
                cell(r.acc),
                cell(r.nll),
                cell(r.mse),
                cell(r.me),
                cell(r.nlml),
                r.folds,
                r.seed
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "–".into());
        let mut out = String::new();
        for task in TaskKind::ALL {
            let rows: Vec<&TableRow> = self.rows.iter().filter(|r| r.task == task).collect();
            if rows.is_empty() {
                continue;
            }
            let (a, b) = if task.is_classifier() {
                ("ACC↑", "NLL↓")
            } else {
                ("MSE↓", "ME↓")
            };
            let _ = writeln!(
                out,
                "### {task}\n\n| Kernel | {a} | {b} | NLML↓ |\n|---|---|---|---|"
            );
            for r in rows {
                let (x, y) = if task.is_classifier() {
                    (r.acc, r.nll)
                } else {
                    (r.mse, r.me)
                };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.kernel,
                    cell(x),
                    cell(y),
                    cell(r.nlml)
                );
            }
            out.push('\n');
        }
        out
    }
}
