//! Independent oracles for GP regression and Laplace classification.

use bartr::gp::{
    classification_metrics, fit_classifier, fit_regressor, regression_metrics, FitOptions,
    GpClassifier, GpRegressor,
};
use bartr::kernel::{Hyperparams, KernelExpr};
use bartr::workspace::{Point3, WorkspaceSpec};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn theta(v: &[f64]) -> Hyperparams {
    Hyperparams::from_values(v).unwrap()
}

fn kern(s: &str) -> KernelExpr {
    s.parse().unwrap()
}

fn sample_points(n: usize, seed: u64) -> Vec<Point3> {
    WorkspaceSpec::default().sample_uniform(n, seed).unwrap()
}

/// Dense-inverse GP posterior; shares only kernel evaluation with the crate.
fn naive_posterior(
    k: &KernelExpr,
    th: &Hyperparams,
    xs: &[Point3],
    ys: &[f64],
    q: &Point3,
) -> (f64, f64) {
    let n = xs.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let kmat = DMatrix::from_fn(n, n, |i, j| {
        k.eval(th, &xs[i], &xs[j], i == j).unwrap() + if i == j { 1e-8 } else { 0.0 }
    });
    let kinv = kmat.try_inverse().unwrap();
    let kstar = DVector::from_fn(n, |i, _| k.eval(th, q, &xs[i], false).unwrap());
    let y = DVector::from_fn(n, |i, _| ys[i] - mean);
    let mu = mean + kstar.dot(&(&kinv * y));
    let var = k.eval(th, q, q, false).unwrap() - kstar.dot(&(&kinv * &kstar));
    (mu, var)
}

#[test]
fn regression_matches_dense_solve_oracle() {
    let xs = sample_points(10, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let ys: Vec<f64> = xs
        .iter()
        .map(|p| 0.6 + 0.03 * p.radius() + noise.sample(&mut rng))
        .collect();
    let queries = sample_points(15, 12);
    for (name, vals) in [
        ("rbf+N1", vec![8.0, 0.3]),
        ("lin+N1", vec![1.0, 0.3]),
        ("lin+rbf+N2", vec![1.0, 6.0, 0.2, 1.0, 0.01]),
        (
            "lin+rbf+lin*rbf+N3",
            vec![0.5, 9.0, 2.0, 12.0, 0.2, 15.0, 0.3],
        ),
    ] {
        let k = kern(name);
        let th = theta(&vals);
        let m = GpRegressor::new(k.clone(), th.clone(), xs.clone(), ys.clone()).unwrap();
        for (q, (mu, var)) in queries.iter().zip(m.predict(&queries).unwrap()) {
            let (mu_o, var_o) = naive_posterior(&k, &th, &xs, &ys, q);
            let scale = 1.0 + k.eval(&th, q, q, false).unwrap();
            assert!(
                (mu - mu_o).abs() < 1e-8 * scale,
                "{name}: mean {mu} vs {mu_o}"
            );
            assert!(
                (var - var_o.max(0.0)).abs() < 1e-8 * scale,
                "{name}: var {var} vs {var_o}"
            );
        }
    }
}

#[test]
fn two_point_closed_form() {
    let a = Point3::new(-5.0, 15.0, 10.0);
    let b = Point3::new(5.0, 20.0, 0.0);
    let q = Point3::new(0.0, 18.0, 5.0);
    let (l, s) = (7.0_f64, 0.2_f64);
    let m = GpRegressor::new(kern("rbf+N1"), theta(&[l, s]), vec![a, b], vec![1.0, 1.6]).unwrap();
    // hand-solved 2×2 system
    let rbf = |p: &Point3, r: &Point3| (-p.distance_sq(r) / (2.0 * l * l)).exp();
    let d = 1.0 + s * s + 1e-8;
    let e = rbf(&a, &b);
    let det = d * d - e * e;
    let (y1, y2) = (-0.3, 0.3);
    let alpha1 = (d * y1 - e * y2) / det;
    let alpha2 = (d * y2 - e * y1) / det;
    let (k1, k2) = (rbf(&q, &a), rbf(&q, &b));
    let expected = 1.3 + k1 * alpha1 + k2 * alpha2;
    let expected_var = 1.0 - (d * k1 * k1 - 2.0 * e * k1 * k2 + d * k2 * k2) / det;
    let (mu, var) = m.predict(&[q]).unwrap()[0];
    assert!((mu - expected).abs() < 1e-8, "{mu} vs {expected}");
    assert!((var - expected_var).abs() < 1e-8);
}

#[test]
fn posterior_variance_never_exceeds_prior() {
    let xs = sample_points(20, 3);
    let ys: Vec<f64> = xs.iter().map(|p| 0.5 + p.z / 40.0).collect();
    let qs: Vec<Point3> = sample_points(50, 4)
        .into_iter()
        .chain(xs.iter().copied())
        .collect();
    for name in ["rbf+N1", "lin+N2", "lin*rbf+N3"] {
        let k = kern(name);
        let th = Hyperparams::reference(&k);
        let m = GpRegressor::new(k.clone(), th.clone(), xs.clone(), ys.clone()).unwrap();
        for (q, (_, v)) in qs.iter().zip(m.predict(&qs).unwrap()) {
            assert!(v <= k.prior_variance(&th, q).unwrap() + 1e-8);
        }
        let labels: Vec<bool> = xs.iter().map(|p| p.x > 0.0).collect();
        let c = GpClassifier::new(k.clone(), th.clone(), xs.clone(), labels).unwrap();
        for (q, (_, v)) in qs.iter().zip(c.predict_latent(&qs).unwrap()) {
            assert!(v <= k.prior_variance(&th, q).unwrap() + 1e-8);
        }
    }
}

#[test]
fn posterior_mean_is_permutation_invariant() {
    let xs = sample_points(12, 8);
    let ys: Vec<f64> = xs.iter().map(|p| 1.0 + 0.01 * p.x).collect();
    let k = kern("lin+rbf+N1");
    let th = theta(&[1.0, 10.0, 0.1]);
    let a = GpRegressor::new(k.clone(), th.clone(), xs.clone(), ys.clone()).unwrap();
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.reverse();
    idx.swap(0, 5);
    let xs2: Vec<Point3> = idx.iter().map(|&i| xs[i]).collect();
    let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let b = GpRegressor::new(k, th, xs2, ys2).unwrap();
    let qs = sample_points(10, 9);
    for ((m1, _), (m2, _)) in a.predict(&qs).unwrap().iter().zip(b.predict(&qs).unwrap()) {
        assert!((m1 - m2).abs() < 1e-9);
    }
}

fn fd_check(name: &str, analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) {
    let h = 1e-5;
    for i in 0..x.len() {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[i] += h;
        dn[i] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        let tol = 1e-4 * fd.abs().max(1e-2);
        assert!(
            (analytic[i] - fd).abs() < tol,
            "{name} param {i}: analytic {} vs fd {fd}",
            analytic[i]
        );
    }
}

#[test]
fn regression_nlml_gradient_matches_finite_differences() {
    let xs = sample_points(15, 21);
    let ys: Vec<f64> = xs
        .iter()
        .map(|p| 0.7 + 0.02 * p.radius() + 0.005 * p.z)
        .collect();
    for c in bartr::kernel::candidate_kernels() {
        let k = c.expr();
        let log = Hyperparams::reference(&k).log_values().to_vec();
        let m = GpRegressor::new(
            k.clone(),
            Hyperparams::from_log(log.clone()),
            xs.clone(),
            ys.clone(),
        )
        .unwrap();
        let g = m.nlml_gradient().unwrap();
        fd_check(
            &c.name(),
            &g,
            |x| {
                GpRegressor::new(
                    k.clone(),
                    Hyperparams::from_log(x.to_vec()),
                    xs.clone(),
                    ys.clone(),
                )
                .unwrap()
                .nlml()
                .unwrap()
            },
            &log,
        );
    }
}

#[test]
fn classification_nlml_gradient_matches_finite_differences() {
    let xs = sample_points(25, 31);
    let labels: Vec<bool> = xs.iter().map(|p| p.x + 0.3 * p.z > 5.0).collect();
    for c in bartr::kernel::candidate_kernels() {
        let k = c.expr();
        let log: Vec<f64> = Hyperparams::reference(&k)
            .log_values()
            .iter()
            .map(|v| v - 0.3)
            .collect();
        let m = GpClassifier::new(
            k.clone(),
            Hyperparams::from_log(log.clone()),
            xs.clone(),
            labels.clone(),
        )
        .unwrap();
        assert!(m.mode_gradient_norm() < 1e-6);
        let g = m.nlml_gradient().unwrap();
        fd_check(
            &c.name(),
            &g,
            |x| {
                GpClassifier::new(
                    k.clone(),
                    Hyperparams::from_log(x.to_vec()),
                    xs.clone(),
                    labels.clone(),
                )
                .unwrap()
                .nlml()
            },
            &log,
        );
    }
}

#[test]
fn duplicate_point_never_costs_more_than_ln2_per_point() {
    let xs = sample_points(8, 41);
    let ys: Vec<f64> = xs.iter().map(|p| 0.8 + 0.02 * p.radius()).collect();
    for name in ["rbf+N1", "lin+N1", "lin+rbf+N2"] {
        let k = kern(name);
        let th = Hyperparams::reference(&k);
        let base = GpRegressor::new(k.clone(), th.clone(), xs.clone(), ys.clone()).unwrap();
        let mut xs2 = xs.clone();
        let mut ys2 = ys.clone();
        xs2.push(xs[2]);
        ys2.push(ys[2]);
        let dup = GpRegressor::new(k, th, xs2, ys2).unwrap();
        let per_a = base.nlml().unwrap() / 8.0;
        let per_b = dup.nlml().unwrap() / 9.0;
        assert!(
            per_b - per_a <= std::f64::consts::LN_2,
            "{name}: {per_a} -> {per_b}"
        );
    }
}

#[test]
fn synthetic_reach_times_are_learned() {
    let spec = WorkspaceSpec::default();
    let train = spec.sample_uniform(80, 51).unwrap();
    let test = spec.sample_uniform(200, 52).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let eps = Normal::new(0.0, 0.1).unwrap();
    let gen = |p: &Point3| 0.5 + 0.05 * p.distance(&Point3::ORIGIN);
    let ytr: Vec<f64> = train
        .iter()
        .map(|p| gen(p) + eps.sample(&mut rng))
        .collect();
    let yte: Vec<f64> = test.iter().map(|p| gen(p) + eps.sample(&mut rng)).collect();
    let (m, report) = fit_regressor(&train, &ytr, &kern("lin+rbf+N1"), 1).unwrap();
    assert!(report.nlml.is_finite());
    let (mse, _) = regression_metrics(&m, &test, &yte).unwrap();
    assert!(mse < 2.0 * 0.01, "held-out MSE {mse}");
}

#[test]
fn fits_are_reproducible() {
    let xs = sample_points(30, 61);
    let ys: Vec<f64> = xs.iter().map(|p| 0.4 + 0.03 * p.radius()).collect();
    let k = kern("rbf+N2");
    let (a, ra) = fit_regressor(&xs, &ys, &k, 9).unwrap();
    let (b, rb) = fit_regressor(&xs, &ys, &k, 9).unwrap();
    assert_eq!(a.theta(), b.theta());
    assert_eq!(ra, rb);
    let labels: Vec<bool> = xs.iter().map(|p| p.x > 0.0).collect();
    let (c1, _) = fit_classifier(&xs, &labels, &k, 9).unwrap();
    let (c2, _) = fit_classifier(&xs, &labels, &k, 9).unwrap();
    assert_eq!(c1.theta(), c2.theta());
    assert_eq!(c1.latent_mode(), c2.latent_mode());
}

#[test]
fn label_flip_complements_probabilities() {
    let xs = sample_points(20, 71);
    let labels: Vec<bool> = xs.iter().map(|p| p.x > 2.0).collect();
    let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
    let qs = sample_points(30, 72);
    for name in ["lin+N1", "rbf+N3", "lin+rbf+lin*rbf+N2"] {
        let k = kern(name);
        let th = Hyperparams::reference(&k);
        let a = GpClassifier::new(k.clone(), th.clone(), xs.clone(), labels.clone()).unwrap();
        let b = GpClassifier::new(k, th, xs.clone(), flipped.clone()).unwrap();
        for (p, q) in a.predict(&qs).unwrap().iter().zip(b.predict(&qs).unwrap()) {
            assert!((p + q - 1.0).abs() < 1e-8, "{name}: {p} {q}");
            assert!(*p > 0.0 && *p < 1.0);
        }
    }
}

#[test]
fn separable_training_data_classified_perfectly() {
    let xs = sample_points(40, 81);
    let labels: Vec<bool> = xs.iter().map(|p| p.x > 0.0).collect();
    let opts = FitOptions {
        restarts: 2,
        ..FitOptions::default()
    };
    let (m, _) = bartr::gp::fit_classifier_with(&xs, &labels, &kern("lin+N1"), 2, &opts).unwrap();
    let (acc, nll) = classification_metrics(&m, &xs, &labels).unwrap();
    assert_eq!(acc, 1.0);
    assert!(nll < std::f64::consts::LN_2);
}

/// E[σ(f*) | y] under the exact (non-Gaussian) posterior by tensor-grid
/// quadrature over the whitened latent vector.
fn brute_force_probability(
    k: &KernelExpr,
    th: &Hyperparams,
    xs: &[Point3],
    labels: &[bool],
    q: &Point3,
) -> f64 {
    let n = xs.len();
    assert_eq!(n, 3);
    let kmat = DMatrix::from_fn(n, n, |i, j| {
        k.eval(th, &xs[i], &xs[j], i == j).unwrap() + if i == j { 1e-8 } else { 0.0 }
    });
    let l = kmat.clone().cholesky().unwrap().unpack();
    let kinv = kmat.try_inverse().unwrap();
    let kstar = DVector::from_fn(n, |i, _| k.eval(th, q, &xs[i], false).unwrap());
    let proj = &kinv * &kstar;
    let cond_var = (k.eval(th, q, q, false).unwrap() - kstar.dot(&proj)).max(0.0);
    let cond_sd = cond_var.sqrt();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();

    let nodes = 110;
    let (lo, hi) = (-7.0, 7.0);
    let h = (hi - lo) / (nodes - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..nodes)
        .map(|i| {
            let z: f64 = lo + h * i as f64;
            (z, (-0.5 * z * z).exp())
        })
        .collect();
    // inner expectation E[σ(m + sd·u)], u ~ N(0,1)
    let inner_nodes: Vec<(f64, f64)> = (0..161)
        .map(|i| {
            let u: f64 = -8.0 + 0.1 * i as f64;
            (u, (-0.5 * u * u).exp())
        })
        .collect();
    let inner_norm: f64 = inner_nodes.iter().map(|(_, w)| w).sum();
    let (mut num, mut den) = (0.0, 0.0);
    for &(z0, w0) in &grid {
        for &(z1, w1) in &grid {
            for &(z2, w2) in &grid {
                let z = DVector::from_vec(vec![z0, z1, z2]);
                let f = &l * z;
                let lik: f64 = (0..n).map(|i| sig(y[i] * f[i])).product();
                let w = w0 * w1 * w2 * lik;
                if w < 1e-300 {
                    continue;
                }
                let m = proj.dot(&f);
                let e = if cond_sd < 1e-12 {
                    sig(m)
                } else {
                    inner_nodes
                        .iter()
                        .map(|(u, wu)| wu * sig(m + cond_sd * u))
                        .sum::<f64>()
                        / inner_norm
                };
                num += w * e;
                den += w;
            }
        }
    }
    num / den
}

#[test]
fn laplace_probabilities_match_brute_force_posterior() {
    let xs = vec![
        Point3::new(-12.0, 14.0, 10.0),
        Point3::new(8.0, 18.0, 20.0),
        Point3::new(2.0, 25.0, 30.0),
    ];
    let queries = [
        Point3::new(0.0, 20.0, 15.0),
        Point3::new(-15.0, 10.0, 5.0),
        Point3::new(20.0, 15.0, 35.0),
    ];
    let cases: [(&str, Vec<f64>, [bool; 3]); 4] = [
        ("rbf+N1", vec![12.0, 0.3], [true, false, true]),
        ("rbf+N1", vec![20.0, 0.5], [true, true, false]),
        ("rbf+N3", vec![15.0, 0.2, 10.0, 0.4], [false, true, true]),
        ("rbf+N2", vec![15.0, 0.3, 1.0, 0.01], [true, false, false]),
    ];
    for (name, vals, labels) in cases {
        let k = kern(name);
        let th = theta(&vals);
        let m = GpClassifier::new(k.clone(), th.clone(), xs.clone(), labels.to_vec()).unwrap();
        for q in &queries {
            let p = m.predict_one(q).unwrap();
            let exact = brute_force_probability(&k, &th, &xs, &labels, q);
            assert!(
                (p - exact).abs() < 0.05,
                "{name} {labels:?} at {q:?}: laplace {p} vs exact {exact}"
            );
        }
    }
}
