//! Exact GP regression and Laplace-approximate GP binary classification.
//!
//! Both model families share the same hyperparameter fitting scheme: the
//! (approximate) negative log marginal likelihood is minimized in log space
//! from several seeded starting points and the best optimum is kept. The
//! first start is the per-leaf reference point; the rest are drawn uniformly
//! within ±2 (log units) of it.
//!
//! Queries are treated as new inputs, so white-noise terms never enter
//! cross-covariances or predictive variances.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Hyperparams, KernelError, KernelExpr};
use crate::optim;
use crate::util::Digest;
use crate::workspace::Point3;

/// Added to every covariance diagonal before factorization.
pub const JITTER: f64 = 1e-8;
/// Reach deadline in seconds; valid reach times lie in (0, DEADLINE_S].
pub const DEADLINE_S: f64 = 3.1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const NEWTON_MAX_ITERS: usize = 100;
/// Required gradient norm of the penalized log-likelihood at the mode.
const NEWTON_TOL: f64 = 1e-6;
/// Newton keeps iterating down to this while it still makes progress.
const NEWTON_POLISH_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("covariance matrix is not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("hyperparameter fit did not converge in any restart (best NLML {best:?})")]
    NonConvergence {
        best: Option<f64>,
        best_theta: Option<Vec<f64>>,
    },
    #[error(
        "Laplace mode search stalled after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    Newton { iterations: usize, grad_norm: f64 },
    #[error("model document does not match the supplied training data")]
    DigestMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Half-width of the uniform log-space restart window.
    pub restart_span: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 100,
            grad_tol: 1e-5,
            restart_span: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub nlml: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Classifier trained on a single class.
    pub degenerate_labels: bool,
}

fn factor(mut k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, GpError> {
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER;
    }
    Cholesky::new(k).ok_or(GpError::NotPositiveDefinite)
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v.ln())
        .sum::<f64>()
}

/// Runs the restart scheme over an objective returning (value, gradient).
fn fit_hyperparams<F>(
    kernel: &KernelExpr,
    seed: u64,
    opts: &FitOptions,
    mut objective: F,
) -> Result<(Hyperparams, FitReport), GpError>
where
    F: FnMut(&Hyperparams) -> Option<(f64, Vec<f64>)>,
{
    kernel.validate()?;
    let center = Hyperparams::reference(kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<optim::Minimum> = None;
    let mut iterations = 0;
    let restarts = opts.restarts.max(1);
    for r in 0..restarts {
        let start: Vec<f64> = center
            .log_values()
            .iter()
            .map(|c| {
                let jitter = rng.gen_range(-opts.restart_span..=opts.restart_span);
                if r == 0 {
                    *c
                } else {
                    c + jitter
                }
            })
            .collect();
        let found = optim::minimize(
            |x| objective(&Hyperparams::from_log(x.to_vec())),
            start,
            opts.max_iters,
            opts.grad_tol,
        );
        if let Some(m) = found {
            iterations += m.iterations;
            let better = match &best {
                None => true,
                Some(b) => {
                    (m.converged && !b.converged)
                        || (m.converged == b.converged && m.value < b.value)
                }
            };
            if better {
                best = Some(m);
            }
        }
    }
    match best {
        Some(m) => Ok((
            Hyperparams::from_log(m.x),
            FitReport {
                nlml: m.value,
                iterations,
                restarts,
                converged: m.converged,
                degenerate_labels: false,
            },
        )),
        None => Err(GpError::NonConvergence {
            best: None,
            best_theta: None,
        }),
    }
}

/// Serializable description of a fitted model; training data is referenced
/// by digest only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: String,
    pub kernel: KernelExpr,
    pub theta: Hyperparams,
    pub n: usize,
    pub digest: String,
}

fn training_digest(xs: &[Point3], values: impl Iterator<Item = f64>) -> String {
    let mut d = Digest::new();
    for p in xs {
        d.write_f64(p.x);
        d.write_f64(p.y);
        d.write_f64(p.z);
    }
    for v in values {
        d.write_f64(v);
    }
    d.hex()
}

// ---------------------------------------------------------------------------
// Regression

#[derive(Debug, Clone)]
pub struct GpRegressor {
    kernel: KernelExpr,
    theta: Hyperparams,
    inputs: Vec<Point3>,
    targets: Vec<f64>,
    mean: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn check_times(xs: &[Point3], ys: &[f64]) -> Result<(), GpError> {
    if xs.len() != ys.len() {
        return Err(GpError::InvalidData(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(p) = xs.iter().find(|p| !p.is_finite()) {
        return Err(GpError::InvalidData(format!("non-finite input {p:?}")));
    }
    if let Some((i, y)) = ys
        .iter()
        .enumerate()
        .find(|(_, y)| !(**y > 0.0 && **y <= DEADLINE_S))
    {
        return Err(GpError::InvalidData(format!(
            "target {i} = {y} s is outside (0, {DEADLINE_S}]"
        )));
    }
    Ok(())
}

fn centered(ys: &[f64]) -> (f64, DVector<f64>) {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    (
        mean,
        DVector::from_iterator(ys.len(), ys.iter().map(|y| y - mean)),
    )
}

/// NLML of zero-mean regression on `y` and its log-space gradient.
fn regression_objective(
    kernel: &KernelExpr,
    theta: &Hyperparams,
    xs: &[Point3],
    y: &DVector<f64>,
    with_gradient: bool,
) -> Result<(f64, Vec<f64>), GpError> {
    let (k, grads) = kernel.gram_with_gradient(theta, xs, with_gradient)?;
    let chol = factor(k)?;
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let nlml = 0.5 * y.dot(&alpha) + 0.5 * log_det(&chol) + 0.5 * n * LN_2PI;
    let mut g = Vec::with_capacity(grads.len());
    if with_gradient {
        let kinv = chol.inverse();
        for dk in &grads {
            // ½ tr(K⁻¹ dK) − ½ αᵀ dK α
            let tr = kinv.component_mul(dk).sum();
            let quad = alpha.dot(&(dk * &alpha));
            g.push(0.5 * tr - 0.5 * quad);
        }
    }
    Ok((nlml, g))
}

impl GpRegressor {
    /// Conditions a regressor on data with fixed hyperparameters.
    pub fn new(
        kernel: KernelExpr,
        theta: Hyperparams,
        inputs: Vec<Point3>,
        targets: Vec<f64>,
    ) -> Result<Self, GpError> {
        check_times(&inputs, &targets)?;
        if inputs.is_empty() {
            return Err(GpError::InvalidData("no training data".into()));
        }
        let (mean, y) = centered(&targets);
        let chol = factor(kernel.gram(&theta, &inputs)?)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            kernel,
            theta,
            inputs,
            targets,
            mean,
            chol: Some(chol),
            alpha,
        })
    }

    /// A regressor with no training data: predictions are the prior.
    pub fn prior(kernel: KernelExpr, theta: Hyperparams, mean: f64) -> Result<Self, GpError> {
        kernel.eval(&theta, &Point3::ORIGIN, &Point3::ORIGIN, false)?;
        Ok(Self {
            kernel,
            theta,
            inputs: vec![],
            targets: vec![],
            mean,
            chol: None,
            alpha: DVector::zeros(0),
        })
    }

    pub fn kernel(&self) -> &KernelExpr {
        &self.kernel
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    pub fn inputs(&self) -> &[Point3] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Mean of the training targets, added back to every prediction.
    pub fn target_mean(&self) -> f64 {
        self.mean
    }

    /// Posterior mean (seconds) and latent variance at each query.
    pub fn predict(&self, queries: &[Point3]) -> Result<Vec<(f64, f64)>, GpError> {
        if queries.is_empty() {
            return Ok(vec![]);
        }
        let prior: Vec<f64> = queries
            .iter()
            .map(|q| self.kernel.prior_variance(&self.theta, q))
            .collect::<Result<_, _>>()?;
        let Some(chol) = &self.chol else {
            return Ok(prior.into_iter().map(|v| (self.mean, v)).collect());
        };
        let ks = self.kernel.cross(&self.theta, queries, &self.inputs)?;
        let means = &ks * &self.alpha;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&ks.transpose())
            .ok_or(GpError::NotPositiveDefinite)?;
        Ok((0..queries.len())
            .map(|i| {
                let var = prior[i] - v.column(i).norm_squared();
                (self.mean + means[i], clamp_variance(var))
            })
            .collect())
    }

    pub fn predict_mean(&self, q: &Point3) -> Result<f64, GpError> {
        Ok(self.predict(std::slice::from_ref(q))?[0].0)
    }

    /// ½ yᵀK⁻¹y + ½ log|K| + (n/2) log 2π on the centered targets.
    pub fn nlml(&self) -> Result<f64, GpError> {
        let Some(chol) = &self.chol else {
            return Ok(0.0);
        };
        let (_, y) = centered(&self.targets);
        let n = y.len() as f64;
        Ok(0.5 * y.dot(&self.alpha) + 0.5 * log_det(chol) + 0.5 * n * LN_2PI)
    }

    /// Gradient of [`Self::nlml`] with respect to log hyperparameters.
    pub fn nlml_gradient(&self) -> Result<Vec<f64>, GpError> {
        let (_, y) = centered(&self.targets);
        Ok(regression_objective(&self.kernel, &self.theta, &self.inputs, &y, true)?.1)
    }

    pub fn document(&self) -> ModelDocument {
        ModelDocument {
            kind: "regressor".into(),
            kernel: self.kernel.clone(),
            theta: self.theta.clone(),
            n: self.inputs.len(),
            digest: training_digest(&self.inputs, self.targets.iter().copied()),
        }
    }

    /// Rebuilds a regressor from a document and the data it was fitted on.
    pub fn from_document(
        doc: &ModelDocument,
        inputs: Vec<Point3>,
        targets: Vec<f64>,
    ) -> Result<Self, GpError> {
        if doc.kind != "regressor"
            || training_digest(&inputs, targets.iter().copied()) != doc.digest
        {
            return Err(GpError::DigestMismatch);
        }
        Self::new(doc.kernel.clone(), doc.theta.clone(), inputs, targets)
    }
}

fn clamp_variance(var: f64) -> f64 {
    if var < -1e-8 {
        log::warn!("negative predictive variance {var:e} clamped to 0");
    }
    var.max(0.0)
}

/// Fits hyperparameters by NLML minimization and conditions on the data.
pub fn fit_regressor(
    inputs: &[Point3],
    targets: &[f64],
    kernel: &KernelExpr,
    seed: u64,
) -> Result<(GpRegressor, FitReport), GpError> {
    fit_regressor_with(inputs, targets, kernel, seed, &FitOptions::default())
}

pub fn fit_regressor_with(
    inputs: &[Point3],
    targets: &[f64],
    kernel: &KernelExpr,
    seed: u64,
    opts: &FitOptions,
) -> Result<(GpRegressor, FitReport), GpError> {
    check_times(inputs, targets)?;
    if inputs.len() < 2 {
        return Err(GpError::InvalidData(
            "need at least 2 training points".into(),
        ));
    }
    let (_, y) = centered(targets);
    let (theta, report) = fit_hyperparams(kernel, seed, opts, |th| {
        regression_objective(kernel, th, inputs, &y, true).ok()
    })?;
    let model = GpRegressor::new(kernel.clone(), theta, inputs.to_vec(), targets.to_vec())?;
    let report = FitReport {
        nlml: model.nlml()?,
        ..report
    };
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Classification

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// log σ(z), stable for large |z|.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Posterior mode and the quantities derived from it.
#[derive(Debug, Clone)]
struct LaplaceMode {
    f: DVector<f64>,
    a: DVector<f64>,
    /// ∇ log p(y|f̂) = t − π
    grad: DVector<f64>,
    sqrt_w: DVector<f64>,
    chol_b: Cholesky<f64, Dyn>,
    log_q: f64,
    iterations: usize,
}

struct ModeStep {
    grad: DVector<f64>,
    w: DVector<f64>,
    sqrt_w: DVector<f64>,
    chol_b: Cholesky<f64, Dyn>,
}

fn mode_step(k: &DMatrix<f64>, f: &DVector<f64>, t: &DVector<f64>) -> Result<ModeStep, GpError> {
    let n = f.len();
    let pi = f.map(sigmoid);
    let grad = t - &pi;
    let w = pi.map(|p| p * (1.0 - p));
    let sqrt_w = w.map(f64::sqrt);
    let mut b = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * k[(i, j)] * sqrt_w[j]);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    let chol_b = Cholesky::new(b).ok_or(GpError::NotPositiveDefinite)?;
    Ok(ModeStep {
        grad,
        w,
        sqrt_w,
        chol_b,
    })
}

fn psi(a: &DVector<f64>, f: &DVector<f64>, y: &DVector<f64>) -> f64 {
    -0.5 * a.dot(f)
        + y.iter()
            .zip(f.iter())
            .map(|(yi, fi)| log_sigmoid(yi * fi))
            .sum::<f64>()
}

/// Newton iteration for the mode of p(f | y) under a logistic likelihood.
fn laplace_mode(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<LaplaceMode, GpError> {
    let n = y.len();
    let t = y.map(|v| (v + 1.0) / 2.0);
    let (mut f, mut a) = match warm {
        Some((f0, a0)) if f0.len() == n => (f0.clone(), a0.clone()),
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };
    let mut objective = psi(&a, &f, y);
    let mut iterations = 0;
    loop {
        let step = mode_step(k, &f, &t)?;
        let grad_norm = (&step.grad - &a).amax();
        let exhausted = iterations >= NEWTON_MAX_ITERS;
        if grad_norm < NEWTON_POLISH_TOL || (exhausted && grad_norm < NEWTON_TOL) {
            return Ok(finish_mode(f, a, step, objective, iterations));
        }
        if exhausted {
            return Err(GpError::Newton {
                iterations,
                grad_norm,
            });
        }
        iterations += 1;
        let b = step.w.component_mul(&f) + &step.grad;
        let kb = k * &b;
        let c = step.chol_b.solve(&step.sqrt_w.component_mul(&kb));
        let a_new = &b - step.sqrt_w.component_mul(&c);
        // step halving keeps Ψ nondecreasing
        let mut frac = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let a_try = &a + (&a_new - &a) * frac;
            let f_try = k * &a_try;
            let obj = psi(&a_try, &f_try, y);
            if obj >= objective - 1e-12 * objective.abs().max(1.0) {
                a = a_try;
                f = f_try;
                objective = obj;
                moved = true;
                break;
            }
            frac *= 0.5;
        }
        if !moved {
            // no further progress at working precision
            if grad_norm < NEWTON_TOL {
                return Ok(finish_mode(f, a, step, objective, iterations));
            }
            return Err(GpError::Newton {
                iterations,
                grad_norm,
            });
        }
    }
}

fn finish_mode(
    f: DVector<f64>,
    a: DVector<f64>,
    step: ModeStep,
    objective: f64,
    iterations: usize,
) -> LaplaceMode {
    let log_q = objective
        - step
            .chol_b
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    LaplaceMode {
        f,
        a,
        grad: step.grad,
        sqrt_w: step.sqrt_w,
        chol_b: step.chol_b,
        log_q,
        iterations,
    }
}

/// Laplace-approximate NLML and its log-space gradient.
fn classification_objective(
    kernel: &KernelExpr,
    theta: &Hyperparams,
    xs: &[Point3],
    y: &DVector<f64>,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
    with_gradient: bool,
) -> Result<(f64, Vec<f64>, LaplaceMode), GpError> {
    let (mut k, grads) = kernel.gram_with_gradient(theta, xs, with_gradient)?;
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER;
    }
    let mode = laplace_mode(&k, y, warm)?;
    let nlml = -mode.log_q;
    let mut g = Vec::with_capacity(grads.len());
    if with_gradient {
        let n = y.len();
        let binv = mode.chol_b.inverse();
        let sw = &mode.sqrt_w;
        let r = DMatrix::from_fn(n, n, |i, j| sw[i] * binv[(i, j)] * sw[j]);
        let rk = &r * &k;
        let third: DVector<f64> = mode.f.map(|fi| {
            let p = sigmoid(fi);
            -p * (1.0 - p) * (1.0 - 2.0 * p)
        });
        let s2 = DVector::from_fn(n, |i, _| {
            let krk: f64 = (0..n).map(|j| k[(i, j)] * rk[(j, i)]).sum();
            // ∂(−½ log|B|)/∂f̂ᵢ = ½ [(K⁻¹+W)⁻¹]ᵢᵢ ∂³log p/∂fᵢ³
            0.5 * (k[(i, i)] - krk) * third[i]
        });
        for dk in &grads {
            let s1 = 0.5 * mode.a.dot(&(dk * &mode.a)) - 0.5 * r.component_mul(dk).sum();
            let b = dk * &mode.grad;
            let s3 = &b - &k * (&r * &b);
            g.push(-(s1 + s2.dot(&s3)));
        }
    }
    Ok((nlml, g, mode))
}

fn label_vector(labels: &[bool]) -> DVector<f64> {
    DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l { 1.0 } else { -1.0 }),
    )
}

#[derive(Debug, Clone)]
pub struct GpClassifier {
    kernel: KernelExpr,
    theta: Hyperparams,
    inputs: Vec<Point3>,
    labels: Vec<bool>,
    mode: LaplaceMode,
    degenerate: bool,
}

impl GpClassifier {
    /// Finds the Laplace posterior for fixed hyperparameters.
    pub fn new(
        kernel: KernelExpr,
        theta: Hyperparams,
        inputs: Vec<Point3>,
        labels: Vec<bool>,
    ) -> Result<Self, GpError> {
        check_labels(&inputs, &labels)?;
        let y = label_vector(&labels);
        let (_, _, mode) = classification_objective(&kernel, &theta, &inputs, &y, None, false)?;
        let degenerate = is_single_class(&labels);
        Ok(Self {
            kernel,
            theta,
            inputs,
            labels,
            mode,
            degenerate,
        })
    }

    pub fn kernel(&self) -> &KernelExpr {
        &self.kernel
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    pub fn inputs(&self) -> &[Point3] {
        &self.inputs
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn degenerate_labels(&self) -> bool {
        self.degenerate
    }

    /// Posterior mode of the latent function at the training inputs.
    pub fn latent_mode(&self) -> &DVector<f64> {
        &self.mode.f
    }

    /// Newton iterations used by the final mode search.
    pub fn newton_iterations(&self) -> usize {
        self.mode.iterations
    }

    /// Gradient of the penalized log-likelihood at the mode.
    pub fn mode_gradient_norm(&self) -> f64 {
        (&self.mode.grad - &self.mode.a).amax()
    }

    /// Laplace-approximate negative log marginal likelihood.
    pub fn nlml(&self) -> f64 {
        -self.mode.log_q
    }

    pub fn nlml_gradient(&self) -> Result<Vec<f64>, GpError> {
        let y = label_vector(&self.labels);
        Ok(classification_objective(&self.kernel, &self.theta, &self.inputs, &y, None, true)?.1)
    }

    /// Latent predictive mean and variance at each query.
    pub fn predict_latent(&self, queries: &[Point3]) -> Result<Vec<(f64, f64)>, GpError> {
        if queries.is_empty() {
            return Ok(vec![]);
        }
        let ks = self.kernel.cross(&self.theta, queries, &self.inputs)?;
        let means = &ks * &self.mode.grad;
        let mut scaled = ks.transpose();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.mode.sqrt_w[i];
        }
        let v = self
            .mode
            .chol_b
            .l_dirty()
            .solve_lower_triangular(&scaled)
            .ok_or(GpError::NotPositiveDefinite)?;
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let prior = self.kernel.prior_variance(&self.theta, q)?;
                Ok((means[i], clamp_variance(prior - v.column(i).norm_squared())))
            })
            .collect()
    }

    /// Probability of class +1 via the probit approximation of the
    /// logistic-Gaussian integral.
    pub fn predict(&self, queries: &[Point3]) -> Result<Vec<f64>, GpError> {
        Ok(self
            .predict_latent(queries)?
            .into_iter()
            .map(|(m, v)| squash(m, v))
            .collect())
    }

    pub fn predict_one(&self, q: &Point3) -> Result<f64, GpError> {
        Ok(self.predict(std::slice::from_ref(q))?[0])
    }

    pub fn document(&self) -> ModelDocument {
        ModelDocument {
            kind: "classifier".into(),
            kernel: self.kernel.clone(),
            theta: self.theta.clone(),
            n: self.inputs.len(),
            digest: training_digest(
                &self.inputs,
                self.labels.iter().map(|&l| f64::from(u8::from(l))),
            ),
        }
    }

    pub fn from_document(
        doc: &ModelDocument,
        inputs: Vec<Point3>,
        labels: Vec<bool>,
    ) -> Result<Self, GpError> {
        let digest = training_digest(&inputs, labels.iter().map(|&l| f64::from(u8::from(l))));
        if doc.kind != "classifier" || digest != doc.digest {
            return Err(GpError::DigestMismatch);
        }
        Self::new(doc.kernel.clone(), doc.theta.clone(), inputs, labels)
    }
}

/// σ(μ / √(1 + πv/8)), clamped into the open unit interval.
pub fn squash(mean: f64, var: f64) -> f64 {
    let kappa = 1.0 / (1.0 + PI * var / 8.0).sqrt();
    sigmoid(kappa * mean).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn is_single_class(labels: &[bool]) -> bool {
    labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)
}

fn check_labels(xs: &[Point3], labels: &[bool]) -> Result<(), GpError> {
    if xs.len() != labels.len() {
        return Err(GpError::InvalidData(format!(
            "{} inputs but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    if xs.is_empty() {
        return Err(GpError::InvalidData("no training data".into()));
    }
    if let Some(p) = xs.iter().find(|p| !p.is_finite()) {
        return Err(GpError::InvalidData(format!("non-finite input {p:?}")));
    }
    Ok(())
}

pub fn fit_classifier(
    inputs: &[Point3],
    labels: &[bool],
    kernel: &KernelExpr,
    seed: u64,
) -> Result<(GpClassifier, FitReport), GpError> {
    fit_classifier_with(inputs, labels, kernel, seed, &FitOptions::default())
}

pub fn fit_classifier_with(
    inputs: &[Point3],
    labels: &[bool],
    kernel: &KernelExpr,
    seed: u64,
    opts: &FitOptions,
) -> Result<(GpClassifier, FitReport), GpError> {
    check_labels(inputs, labels)?;
    if inputs.len() < 2 {
        return Err(GpError::InvalidData(
            "need at least 2 training points".into(),
        ));
    }
    let y = label_vector(labels);
    // warm-start each mode search from the previous one
    let mut warm: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut last_newton: Option<GpError> = None;
    let fitted = fit_hyperparams(kernel, seed, opts, |th| {
        let w = warm.as_ref().map(|(f, a)| (f, a));
        match classification_objective(kernel, th, inputs, &y, w, true) {
            Ok((v, g, mode)) => {
                warm = Some((mode.f, mode.a));
                Some((v, g))
            }
            Err(e) => {
                last_newton = Some(e);
                None
            }
        }
    });
    let (theta, report) = match fitted {
        Ok(r) => r,
        Err(e) => return Err(last_newton.unwrap_or(e)),
    };
    let model = GpClassifier::new(kernel.clone(), theta, inputs.to_vec(), labels.to_vec())?;
    let report = FitReport {
        nlml: model.nlml(),
        degenerate_labels: model.degenerate,
        ..report
    };
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Metrics

/// Accuracy (0.5 threshold, ties to +1) and mean negative log likelihood.
pub fn classification_metrics(
    model: &GpClassifier,
    inputs: &[Point3],
    labels: &[bool],
) -> Result<(f64, f64), GpError> {
    check_labels(inputs, labels)?;
    let probs = model.predict(inputs)?;
    Ok(score_probabilities(&probs, labels))
}

/// (ACC, NLL) of predicted +1 probabilities against labels.
pub fn score_probabilities(probs: &[f64], labels: &[bool]) -> (f64, f64) {
    let n = labels.len() as f64;
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| (**p >= 0.5) == l)
        .count();
    let nll = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| -(if l { p } else { 1.0 - p }).ln())
        .sum::<f64>()
        / n;
    (correct as f64 / n, nll)
}

/// Mean squared error (s²) and maximum absolute error (s).
pub fn regression_metrics(
    model: &GpRegressor,
    inputs: &[Point3],
    targets: &[f64],
) -> Result<(f64, f64), GpError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(GpError::InvalidData(
            "evaluation set must be nonempty and aligned".into(),
        ));
    }
    let preds = model.predict(inputs)?;
    let errors: Vec<f64> = preds.iter().zip(targets).map(|((m, _), y)| m - y).collect();
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    let me = errors.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
    Ok((mse, me))
}
