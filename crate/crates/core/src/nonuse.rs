//! cBARTR, sBARTR and the nuBARTR nonuse score.
//!
//! For a workspace point x, cBARTR(x) is the probability that the
//! participant's affected arm reaches x in time, and
//!
//! sBARTR(x) = p_p(s_p | x) · p_n(s_p | x) · (t̂_n(x) − t̂_p(x)),
//!
//! the expected time saving of the participant's affected-arm choices over
//! normative behavior. nuBARTR is the workspace mean of cBARTR − sBARTR,
//! estimated from volume-uniform samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{fit_classifier, fit_regressor, GpClassifier, GpError, GpRegressor};
use crate::kernel::KernelExpr;
use crate::session::{Phase, SessionLog, Side};
use crate::sim::GroundTruth;
use crate::util::derive_seed;
use crate::workspace::{Point3, WorkspaceError, WorkspaceSpec};

pub const DEFAULT_SAMPLES: usize = 10_000;
const BATCH: usize = 2_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonuseError {
    #[error("point {0:?} lies outside the workspace")]
    Domain(Point3),
    #[error("non-finite integrand at sample {index} ({point:?})")]
    NonFinite { index: usize, point: Point3 },
    #[error("session log has no trials")]
    EmptySession,
    #[error("expected a {expected} log, got {found}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("normative data has no successful {0}-hand reaches")]
    DegenerateNormative(Side),
    #[error("{what}: {source}")]
    Fit { what: String, source: GpError },
    #[error("not enough data for the {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// A probability over the workspace.
pub trait ProbabilityField: Send + Sync {
    fn probabilities(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError>;
}

/// A mean reach time (seconds) over the workspace.
pub trait TimeField: Send + Sync {
    fn mean_times(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError>;
}

impl<F: Fn(&Point3) -> f64 + Send + Sync> ProbabilityField for F {
    fn probabilities(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        Ok(xs.iter().map(self).collect())
    }
}

impl<F: Fn(&Point3) -> f64 + Send + Sync> TimeField for F {
    fn mean_times(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        Ok(xs.iter().map(self).collect())
    }
}

impl ProbabilityField for GpClassifier {
    fn probabilities(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(BATCH) {
            out.extend(self.predict(chunk)?);
        }
        Ok(out)
    }
}

impl TimeField for GpRegressor {
    fn mean_times(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(BATCH) {
            out.extend(self.predict(chunk)?.into_iter().map(|(m, _)| m));
        }
        Ok(out)
    }
}

/// Complement of a probability field.
struct Complement<'a>(&'a dyn ProbabilityField);

impl ProbabilityField for Complement<'_> {
    fn probabilities(&self, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        Ok(self
            .0
            .probabilities(xs)?
            .into_iter()
            .map(|p| 1.0 - p)
            .collect())
    }
}

pub struct ParticipantModel {
    pub participant: String,
    pub affected: Side,
    /// P(reach with the affected-side hand | x), spontaneous phase.
    pub choice: Box<dyn ProbabilityField>,
    /// P(success | x), constrained phase.
    pub success: Box<dyn ProbabilityField>,
    /// Affected-arm reach time.
    pub time: Box<dyn TimeField>,
}

pub struct NormativeModel {
    /// P(reach with the right hand | x).
    pub choice_right: Box<dyn ProbabilityField>,
    pub time_left: Box<dyn TimeField>,
    pub time_right: Box<dyn TimeField>,
}

impl NormativeModel {
    fn time(&self, side: Side) -> &dyn TimeField {
        match side {
            Side::Left => self.time_left.as_ref(),
            Side::Right => self.time_right.as_ref(),
        }
    }

    fn choice_probabilities(&self, side: Side, xs: &[Point3]) -> Result<Vec<f64>, NonuseError> {
        match side {
            Side::Right => self.choice_right.probabilities(xs),
            Side::Left => Complement(self.choice_right.as_ref()).probabilities(xs),
        }
    }
}

/// Kernels for the three GP models of a participant or the normative group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelKernels {
    pub side: KernelExpr,
    pub success: KernelExpr,
    pub time: KernelExpr,
}

impl Default for ModelKernels {
    fn default() -> Self {
        let k: KernelExpr = "lin+rbf+N1".parse().expect("valid kernel");
        ModelKernels {
            side: k.clone(),
            success: k.clone(),
            time: k,
        }
    }
}

/// Fit reports of the models behind a [`ParticipantModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFits {
    pub choice_nlml: f64,
    pub success_nlml: f64,
    pub time_nlml: f64,
    pub degenerate_success: bool,
    pub degenerate_choice: bool,
}

fn fit_err(what: &str) -> impl Fn(GpError) -> NonuseError + '_ {
    move |source| NonuseError::Fit {
        what: what.to_string(),
        source,
    }
}

/// Sorts training pairs by coordinates so fits do not depend on trial order.
fn canonical<T: Copy>(
    mut pairs: Vec<(Point3, T)>,
    cmp: impl Fn(&T, &T) -> std::cmp::Ordering,
) -> (Vec<Point3>, Vec<T>) {
    pairs.sort_by(|(a, u), (b, v)| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
            .then(cmp(u, v))
    });
    pairs.into_iter().unzip()
}

fn expect_phase(log: &SessionLog, phase: Phase) -> Result<(), NonuseError> {
    if log.phase != phase {
        return Err(NonuseError::WrongPhase {
            expected: phase,
            found: log.phase,
        });
    }
    Ok(())
}

impl ParticipantModel {
    /// Choice from spontaneous reaches, success from constrained trials,
    /// and affected-arm time pooled over both phases.
    pub fn fit(
        participant: &str,
        affected: Side,
        spontaneous: &SessionLog,
        constrained: &SessionLog,
        kernels: &ModelKernels,
        seed: u64,
    ) -> Result<(Self, ParticipantFits), NonuseError> {
        expect_phase(spontaneous, Phase::Spontaneous)?;
        expect_phase(constrained, Phase::Constrained)?;
        let chosen: Vec<_> = spontaneous
            .trials
            .iter()
            .filter_map(|t| t.hand.side().map(|s| (t.target, s)))
            .collect();
        if chosen.len() < 2 {
            return Err(NonuseError::InsufficientData("choice classifier".into()));
        }
        let (xs, labels) = canonical(
            chosen.iter().map(|&(x, s)| (x, s == affected)).collect(),
            bool::cmp,
        );
        let (choice, choice_fit) =
            fit_classifier(&xs, &labels, &kernels.side, derive_seed(seed, "choice"))
                .map_err(fit_err("choice classifier"))?;

        let (xs, labels) = canonical(
            constrained
                .trials
                .iter()
                .map(|t| (t.target, t.success))
                .collect(),
            bool::cmp,
        );
        let (success, success_fit) =
            fit_classifier(&xs, &labels, &kernels.success, derive_seed(seed, "success"))
                .map_err(fit_err("success classifier"))?;

        let (xs, ys) = canonical(
            spontaneous
                .reaches_with(affected)
                .chain(constrained.reaches_with(affected))
                .collect(),
            f64::total_cmp,
        );
        if xs.len() < 2 {
            return Err(NonuseError::InsufficientData(
                "affected-arm time regressor".into(),
            ));
        }
        let (time, time_fit) = fit_regressor(&xs, &ys, &kernels.time, derive_seed(seed, "time"))
            .map_err(fit_err("time regressor"))?;

        let fits = ParticipantFits {
            choice_nlml: choice_fit.nlml,
            success_nlml: success_fit.nlml,
            time_nlml: time_fit.nlml,
            degenerate_success: success_fit.degenerate_labels,
            degenerate_choice: choice_fit.degenerate_labels,
        };
        let model = ParticipantModel {
            participant: participant.to_string(),
            affected,
            choice: Box::new(choice),
            success: Box::new(success),
            time: Box::new(time),
        };
        Ok((model, fits))
    }

    /// Model whose fields are the generator's closed forms.
    pub fn from_ground_truth(participant: &str, affected: Side, truth: GroundTruth) -> Self {
        let (a, b, c) = (truth.clone(), truth.clone(), truth);
        ParticipantModel {
            participant: participant.to_string(),
            affected,
            choice: Box::new(move |x: &Point3| a.choice(affected, x)),
            success: Box::new(move |x: &Point3| b.success(x)),
            time: Box::new(move |x: &Point3| c.mean_time(x)),
        }
    }
}

impl NormativeModel {
    /// Pools neurotypical logs: choice from spontaneous reaches, per-side
    /// times from every successful reach with that hand.
    pub fn fit(
        logs: &[SessionLog],
        kernels: &ModelKernels,
        seed: u64,
    ) -> Result<Self, NonuseError> {
        let (xs, labels) = canonical(
            logs.iter()
                .filter(|l| l.phase == Phase::Spontaneous)
                .flat_map(|l| l.trials.iter())
                .filter_map(|t| t.hand.side().map(|s| (t.target, s == Side::Right)))
                .collect(),
            bool::cmp,
        );
        if xs.len() < 2 {
            return Err(NonuseError::InsufficientData(
                "normative choice classifier".into(),
            ));
        }
        let (choice, _) = fit_classifier(
            &xs,
            &labels,
            &kernels.side,
            derive_seed(seed, "normative-choice"),
        )
        .map_err(fit_err("normative choice classifier"))?;
        let mut times = Vec::new();
        for side in [Side::Left, Side::Right] {
            let (xs, ys) = canonical(
                logs.iter().flat_map(|l| l.reaches_with(side)).collect(),
                f64::total_cmp,
            );
            if xs.len() < 2 {
                return Err(NonuseError::DegenerateNormative(side));
            }
            let (m, _) = fit_regressor(
                &xs,
                &ys,
                &kernels.time,
                derive_seed(seed, &format!("normative-time-{side}")),
            )
            .map_err(fit_err("normative time regressor"))?;
            times.push(m);
        }
        let time_right = times.pop().expect("two regressors");
        let time_left = times.pop().expect("two regressors");
        Ok(NormativeModel {
            choice_right: Box::new(choice),
            time_left: Box::new(time_left),
            time_right: Box::new(time_right),
        })
    }

    /// Normative fields from a neurotypical generator's closed forms.
    pub fn from_ground_truth(truth: GroundTruth) -> Self {
        let (a, b) = (truth.clone(), truth.clone());
        NormativeModel {
            choice_right: Box::new(move |x: &Point3| a.right_choice(x)),
            time_left: Box::new(move |x: &Point3| b.mean_time(x)),
            time_right: Box::new(move |x: &Point3| truth.mean_time(x)),
        }
    }
}

fn check_domain(spec: &WorkspaceSpec, xs: &[Point3]) -> Result<(), NonuseError> {
    match xs.iter().find(|p| !spec.contains(p)) {
        Some(p) => Err(NonuseError::Domain(*p)),
        None => Ok(()),
    }
}

pub fn c_bartr(
    pm: &ParticipantModel,
    spec: &WorkspaceSpec,
    x: &Point3,
) -> Result<f64, NonuseError> {
    Ok(c_bartr_many(pm, spec, std::slice::from_ref(x))?[0])
}

pub fn c_bartr_many(
    pm: &ParticipantModel,
    spec: &WorkspaceSpec,
    xs: &[Point3],
) -> Result<Vec<f64>, NonuseError> {
    check_domain(spec, xs)?;
    pm.success.probabilities(xs)
}

pub fn s_bartr(
    pm: &ParticipantModel,
    nm: &NormativeModel,
    spec: &WorkspaceSpec,
    x: &Point3,
) -> Result<f64, NonuseError> {
    Ok(s_bartr_many(pm, nm, spec, std::slice::from_ref(x))?[0])
}

pub fn s_bartr_many(
    pm: &ParticipantModel,
    nm: &NormativeModel,
    spec: &WorkspaceSpec,
    xs: &[Point3],
) -> Result<Vec<f64>, NonuseError> {
    check_domain(spec, xs)?;
    let p_p = pm.choice.probabilities(xs)?;
    let p_n = nm.choice_probabilities(pm.affected, xs)?;
    let t_n = nm.time(pm.affected).mean_times(xs)?;
    let t_p = pm.time.mean_times(xs)?;
    Ok((0..xs.len())
        .map(|i| p_p[i] * p_n[i] * (t_n[i] - t_p[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonuseScore {
    pub participant: String,
    pub nu_bartr: f64,
    pub c_mean: f64,
    pub s_mean: f64,
    pub n: usize,
    pub seed: u64,
    pub mc_se: f64,
}

/// Monte-Carlo workspace mean of cBARTR − sBARTR over `n` uniform samples.
pub fn nu_bartr(
    pm: &ParticipantModel,
    nm: &NormativeModel,
    spec: &WorkspaceSpec,
    n: usize,
    seed: u64,
) -> Result<NonuseScore, NonuseError> {
    let xs = spec.sample_uniform(n, seed)?;
    nu_bartr_at(pm, nm, spec, &xs, seed)
}

/// nuBARTR over caller-supplied sample points.
pub fn nu_bartr_at(
    pm: &ParticipantModel,
    nm: &NormativeModel,
    spec: &WorkspaceSpec,
    xs: &[Point3],
    seed: u64,
) -> Result<NonuseScore, NonuseError> {
    if xs.is_empty() {
        return Err(WorkspaceError::EmptySample.into());
    }
    let c = c_bartr_many(pm, spec, xs)?;
    let s = s_bartr_many(pm, nm, spec, xs)?;
    if let Some(index) = (0..xs.len()).find(|&i| !(c[i].is_finite() && s[i].is_finite())) {
        return Err(NonuseError::NonFinite {
            index,
            point: xs[index],
        });
    }
    let n = xs.len() as f64;
    let c_mean = c.iter().sum::<f64>() / n;
    let s_mean = s.iter().sum::<f64>() / n;
    let nu = c_mean - s_mean;
    let var = if xs.len() > 1 {
        c.iter()
            .zip(&s)
            .map(|(c, s)| (c - s - nu).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(NonuseScore {
        participant: pm.participant.clone(),
        nu_bartr: nu,
        c_mean,
        s_mean,
        n: xs.len(),
        seed,
        mc_se: (var / n).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Raw estimators

/// Fraction of successful presses in a constrained-phase log.
pub fn raw_c_bartr(log: &SessionLog) -> Result<f64, NonuseError> {
    expect_phase(log, Phase::Constrained)?;
    if log.trials.is_empty() {
        return Err(NonuseError::EmptySession);
    }
    Ok(log.successes() as f64 / log.trials.len() as f64)
}

/// Normative per-side successful reach counts (mean per session) and mean
/// reach times, from spontaneous logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormativeSummary {
    pub left_count: f64,
    pub right_count: f64,
    pub left_time: f64,
    pub right_time: f64,
}

fn mean_time(log: &SessionLog, side: Side) -> Option<f64> {
    let (n, sum) = log
        .reaches_with(side)
        .fold((0usize, 0.0), |(n, s), (_, t)| (n + 1, s + t));
    (n > 0).then(|| sum / n as f64)
}

impl NormativeSummary {
    pub fn from_logs(logs: &[SessionLog]) -> Result<Self, NonuseError> {
        let spont: Vec<&SessionLog> = logs
            .iter()
            .filter(|l| l.phase == Phase::Spontaneous)
            .collect();
        if spont.is_empty() {
            return Err(NonuseError::InsufficientData("normative summary".into()));
        }
        let stats = |side: Side| {
            let count = spont
                .iter()
                .map(|l| l.reaches_with(side).count())
                .sum::<usize>();
            let total: f64 = spont
                .iter()
                .flat_map(|l| l.reaches_with(side))
                .map(|(_, t)| t)
                .sum();
            (
                count as f64 / spont.len() as f64,
                if count > 0 {
                    total / count as f64
                } else {
                    f64::NAN
                },
            )
        };
        let (left_count, left_time) = stats(Side::Left);
        let (right_count, right_time) = stats(Side::Right);
        Ok(NormativeSummary {
            left_count,
            right_count,
            left_time,
            right_time,
        })
    }

    pub fn side(&self, side: Side) -> (f64, f64) {
        match side {
            Side::Left => (self.left_count, self.left_time),
            Side::Right => (self.right_count, self.right_time),
        }
    }
}

/// min(n_p / n_n, 1) · min(t_n − t_p, 0) for the affected side; never positive.
pub fn raw_s_bartr(
    log: &SessionLog,
    affected: Side,
    normative: &NormativeSummary,
) -> Result<f64, NonuseError> {
    expect_phase(log, Phase::Spontaneous)?;
    if log.trials.is_empty() {
        return Err(NonuseError::EmptySession);
    }
    let (n_n, t_n) = normative.side(affected);
    if n_n <= 0.0 || !t_n.is_finite() {
        return Err(NonuseError::DegenerateNormative(affected));
    }
    let n_p = log.reaches_with(affected).count() as f64;
    let Some(t_p) = mean_time(log, affected) else {
        return Ok(0.0);
    };
    Ok(raw_s_terms(n_p, n_n, t_n, t_p))
}

/// The raw sBARTR formula on summary numbers.
pub fn raw_s_terms(n_p: f64, n_n: f64, t_n: f64, t_p: f64) -> f64 {
    let v = (n_p / n_n).min(1.0) * (t_n - t_p).min(0.0);
    // avoid reporting −0
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_s_formula() {
        assert!((raw_s_terms(20.0, 40.0, 1.0, 1.5) + 0.25).abs() < 1e-12);
        assert_eq!(raw_s_terms(20.0, 40.0, 1.5, 1.0), 0.0);
        assert!((raw_s_terms(50.0, 40.0, 1.0, 1.5) + 0.5).abs() < 1e-12);
    }
}
