//! Quasi-Newton minimization with backtracking line search, used for
//! marginal-likelihood hyperparameter fitting in log space.

/// Log-space box for every hyperparameter; steps leaving it are rejected.
pub const LOG_BOUND: f64 = 9.0;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
const MAX_STEP: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f`, which returns `None` where the objective is undefined.
/// Returns `None` only if the starting point itself is undefined.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, max_iters: usize, grad_tol: f64) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let dim = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(-LOG_BOUND, LOG_BOUND)).collect();
    let (mut fx, mut g) =
        f(&x).filter(|(v, g)| v.is_finite() && g.iter().all(|d| d.is_finite()))?;
    let mut h = identity(dim);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        if inf_norm(&g) < grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = mat_vec(&h, &g).iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            h = identity(dim);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let longest = inf_norm(&d);
        if longest > MAX_STEP {
            let s = MAX_STEP / longest;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if trial.iter().all(|v| v.abs() <= LOG_BOUND) {
                if let Some((ft, gt)) = f(&trial) {
                    if ft.is_finite()
                        && gt.iter().all(|v| v.is_finite())
                        && ft <= fx + ARMIJO * step * slope
                    {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if is_identity(&h) {
                // no descent possible along the gradient: stationary up to
                // numerical precision or pinned against the box
                converged = inf_norm(&g) < grad_tol * 1e3;
                break;
            }
            h = identity(dim);
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease.abs() <= 1e-12 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    if !converged && inf_norm(&g) < grad_tol {
        converged = true;
    }
    Some(Minimum {
        x,
        value: fx,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn is_identity(h: &[Vec<f64>]) -> bool {
    h.iter().enumerate().all(|(i, row)| {
        row.iter()
            .enumerate()
            .all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
    })
}

fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}
