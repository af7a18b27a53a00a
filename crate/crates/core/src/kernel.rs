//! Composable covariance functions over workspace points.
//!
//! A [`KernelExpr`] is a tree of `lin` (σ₀² + x·x′), `rbf`
//! (exp(−d²/2ℓ²)) and `white` (σₙ² on identical training indices) leaves
//! combined with sums and products. Hyperparameters live outside the tree in a
//! [`Hyperparams`] vector, one positive value per leaf in depth-first order,
//! stored as natural logarithms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::workspace::Point3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel has {leaves} leaves but {params} hyperparameters were supplied")]
    Arity { leaves: usize, params: usize },
    #[error("malformed kernel: {0}")]
    Structure(String),
    #[error("hyperparameter {index} is not finite (log value {value})")]
    NonFiniteParam { index: usize, value: f64 },
    #[error("non-finite covariance between inputs {i} and {j}")]
    NonFinite { i: usize, j: usize },
    #[error("cannot parse kernel '{input}': {reason}")]
    Parse { input: String, reason: String },
    #[error("point set is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Linear,
    Rbf,
    WhiteNoise,
}

impl LeafKind {
    /// Natural-scale value used as the center of optimizer restarts.
    pub fn reference_value(self) -> f64 {
        match self {
            LeafKind::Linear => 1.0,
            LeafKind::Rbf => 10.0,
            LeafKind::WhiteNoise => 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelExpr {
    Linear,
    Rbf,
    WhiteNoise,
    Sum(Vec<KernelExpr>),
    Product(Vec<KernelExpr>),
}

impl KernelExpr {
    /// Sum node; nested sums are flattened so equal kernels compare equal.
    pub fn sum(children: impl IntoIterator<Item = KernelExpr>) -> Self {
        let mut flat = Vec::new();
        for c in children {
            match c {
                KernelExpr::Sum(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            KernelExpr::Sum(flat)
        }
    }

    /// Product node; nested products are flattened.
    pub fn product(children: impl IntoIterator<Item = KernelExpr>) -> Self {
        let mut flat = Vec::new();
        for c in children {
            match c {
                KernelExpr::Product(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            KernelExpr::Product(flat)
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            KernelExpr::Linear | KernelExpr::Rbf | KernelExpr::WhiteNoise => 1,
            KernelExpr::Sum(c) | KernelExpr::Product(c) => c.iter().map(Self::leaf_count).sum(),
        }
    }

    pub fn leaves(&self) -> Vec<LeafKind> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<LeafKind>) {
        match self {
            KernelExpr::Linear => out.push(LeafKind::Linear),
            KernelExpr::Rbf => out.push(LeafKind::Rbf),
            KernelExpr::WhiteNoise => out.push(LeafKind::WhiteNoise),
            KernelExpr::Sum(c) | KernelExpr::Product(c) => {
                c.iter().for_each(|k| k.collect_leaves(out))
            }
        }
    }

    fn has_noise(&self) -> bool {
        match self {
            KernelExpr::WhiteNoise => true,
            KernelExpr::Linear | KernelExpr::Rbf => false,
            KernelExpr::Sum(c) | KernelExpr::Product(c) => c.iter().any(Self::has_noise),
        }
    }

    /// True when the tree contains the given leaf outside any noise product.
    pub fn signal_contains(&self, kind: LeafKind) -> bool {
        match self {
            KernelExpr::Linear => kind == LeafKind::Linear,
            KernelExpr::Rbf => kind == LeafKind::Rbf,
            KernelExpr::WhiteNoise => false,
            KernelExpr::Product(_) if self.has_noise() => false,
            KernelExpr::Sum(c) | KernelExpr::Product(c) => {
                c.iter().any(|k| k.signal_contains(kind))
            }
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self {
            KernelExpr::Linear | KernelExpr::Rbf | KernelExpr::WhiteNoise => Ok(()),
            KernelExpr::Sum(c) | KernelExpr::Product(c) if c.is_empty() => {
                Err(KernelError::Structure("empty combination node".into()))
            }
            KernelExpr::Sum(c) => c.iter().try_for_each(Self::validate),
            KernelExpr::Product(c) => {
                if c.iter().filter(|k| k.has_noise()).count() > 1 {
                    return Err(KernelError::Structure(
                        "product of two white-noise terms".into(),
                    ));
                }
                c.iter().try_for_each(Self::validate)
            }
        }
    }

    fn check(&self, theta: &Hyperparams) -> Result<(), KernelError> {
        self.validate()?;
        let leaves = self.leaf_count();
        if leaves != theta.len() {
            return Err(KernelError::Arity {
                leaves,
                params: theta.len(),
            });
        }
        if let Some((index, &value)) = theta.log.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(KernelError::NonFiniteParam { index, value });
        }
        Ok(())
    }

    /// Covariance between two inputs. `same_index` marks the two inputs as
    /// the same training example, which is the only case where white noise
    /// contributes.
    pub fn eval(
        &self,
        theta: &Hyperparams,
        a: &Point3,
        b: &Point3,
        same_index: bool,
    ) -> Result<f64, KernelError> {
        self.check(theta)?;
        let values = theta.values();
        let mut cursor = 0;
        Ok(self.eval_at(&values, &mut cursor, a, b, same_index))
    }

    fn eval_at(&self, v: &[f64], cursor: &mut usize, a: &Point3, b: &Point3, same: bool) -> f64 {
        match self {
            KernelExpr::Linear => {
                let s = v[*cursor];
                *cursor += 1;
                s * s + a.dot(b)
            }
            KernelExpr::Rbf => {
                let l = v[*cursor];
                *cursor += 1;
                (-a.distance_sq(b) / (2.0 * l * l)).exp()
            }
            KernelExpr::WhiteNoise => {
                let s = v[*cursor];
                *cursor += 1;
                if same {
                    s * s
                } else {
                    0.0
                }
            }
            KernelExpr::Sum(c) => c.iter().map(|k| k.eval_at(v, cursor, a, b, same)).sum(),
            KernelExpr::Product(c) => c.iter().map(|k| k.eval_at(v, cursor, a, b, same)).product(),
        }
    }

    /// Training covariance matrix; white noise lands on the diagonal only.
    /// No jitter is added here.
    pub fn gram(&self, theta: &Hyperparams, xs: &[Point3]) -> Result<DMatrix<f64>, KernelError> {
        Ok(self.gram_with_gradient(theta, xs, false)?.0)
    }

    /// ∂K/∂log θᵢ for every hyperparameter, in leaf order.
    pub fn gram_gradient(
        &self,
        theta: &Hyperparams,
        xs: &[Point3],
    ) -> Result<Vec<DMatrix<f64>>, KernelError> {
        Ok(self.gram_with_gradient(theta, xs, true)?.1)
    }

    /// Gram matrix and (optionally) its log-space hyperparameter gradients.
    pub fn gram_with_gradient(
        &self,
        theta: &Hyperparams,
        xs: &[Point3],
        with_gradient: bool,
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), KernelError> {
        self.check(theta)?;
        if xs.is_empty() {
            return Err(KernelError::EmptyInput);
        }
        let geom = Geometry::square(xs);
        let values = theta.values();
        let mut cursor = 0;
        let (k, grads) = self.build(&values, &mut cursor, &geom, with_gradient);
        check_finite(&k)?;
        Ok((k, grads))
    }

    /// Noise-free covariance between query points and training points
    /// (rows: queries).
    pub fn cross(
        &self,
        theta: &Hyperparams,
        queries: &[Point3],
        train: &[Point3],
    ) -> Result<DMatrix<f64>, KernelError> {
        self.check(theta)?;
        let geom = Geometry::rect(queries, train);
        let values = theta.values();
        let mut cursor = 0;
        let (k, _) = self.build(&values, &mut cursor, &geom, false);
        check_finite(&k)?;
        Ok(k)
    }

    /// Prior variance at a new (non-training) input.
    pub fn prior_variance(&self, theta: &Hyperparams, p: &Point3) -> Result<f64, KernelError> {
        self.eval(theta, p, p, false)
    }

    fn build(
        &self,
        v: &[f64],
        cursor: &mut usize,
        g: &Geometry,
        grad: bool,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        match self {
            KernelExpr::Linear => {
                let s2 = v[*cursor] * v[*cursor];
                *cursor += 1;
                let k = g.dot.add_scalar(s2);
                let d = if grad {
                    vec![DMatrix::from_element(g.rows, g.cols, 2.0 * s2)]
                } else {
                    vec![]
                };
                (k, d)
            }
            KernelExpr::Rbf => {
                let l = v[*cursor];
                *cursor += 1;
                let inv = 1.0 / (2.0 * l * l);
                let k = g.dist_sq.map(|d| (-d * inv).exp());
                let d = if grad {
                    let scale = 1.0 / (l * l);
                    vec![k.zip_map(&g.dist_sq, |kv, d2| kv * d2 * scale)]
                } else {
                    vec![]
                };
                (k, d)
            }
            KernelExpr::WhiteNoise => {
                let s2 = v[*cursor] * v[*cursor];
                *cursor += 1;
                let k = g.same.scale(s2);
                let d = if grad {
                    vec![g.same.scale(2.0 * s2)]
                } else {
                    vec![]
                };
                (k, d)
            }
            KernelExpr::Sum(children) => {
                let mut total = DMatrix::zeros(g.rows, g.cols);
                let mut grads = Vec::new();
                for c in children {
                    let (k, d) = c.build(v, cursor, g, grad);
                    total += k;
                    grads.extend(d);
                }
                (total, grads)
            }
            KernelExpr::Product(children) => {
                let parts: Vec<_> = children
                    .iter()
                    .map(|c| c.build(v, cursor, g, grad))
                    .collect();
                let mut total = DMatrix::from_element(g.rows, g.cols, 1.0);
                for (k, _) in &parts {
                    total.component_mul_assign(k);
                }
                let mut grads = Vec::new();
                if grad {
                    for (i, (_, dk)) in parts.iter().enumerate() {
                        let mut others = DMatrix::from_element(g.rows, g.cols, 1.0);
                        for (j, (k, _)) in parts.iter().enumerate() {
                            if i != j {
                                others.component_mul_assign(k);
                            }
                        }
                        grads.extend(dk.iter().map(|d| d.component_mul(&others)));
                    }
                }
                (total, grads)
            }
        }
    }
}

fn check_finite(k: &DMatrix<f64>) -> Result<(), KernelError> {
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            if !k[(i, j)].is_finite() {
                return Err(KernelError::NonFinite { i, j });
            }
        }
    }
    Ok(())
}

/// Pairwise quantities shared by every leaf.
struct Geometry {
    rows: usize,
    cols: usize,
    dot: DMatrix<f64>,
    dist_sq: DMatrix<f64>,
    same: DMatrix<f64>,
}

impl Geometry {
    fn square(xs: &[Point3]) -> Self {
        let n = xs.len();
        Self {
            rows: n,
            cols: n,
            dot: DMatrix::from_fn(n, n, |i, j| xs[i].dot(&xs[j])),
            dist_sq: DMatrix::from_fn(n, n, |i, j| xs[i].distance_sq(&xs[j])),
            same: DMatrix::identity(n, n),
        }
    }

    fn rect(a: &[Point3], b: &[Point3]) -> Self {
        let (r, c) = (a.len(), b.len());
        Self {
            rows: r,
            cols: c,
            dot: DMatrix::from_fn(r, c, |i, j| a[i].dot(&b[j])),
            dist_sq: DMatrix::from_fn(r, c, |i, j| a[i].distance_sq(&b[j])),
            same: DMatrix::zeros(r, c),
        }
    }
}

/// Kernel hyperparameters, stored as natural logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    log: Vec<f64>,
}

impl Hyperparams {
    pub fn from_log(log: Vec<f64>) -> Self {
        Self { log }
    }

    /// Builds from natural-scale values; every value must be positive.
    pub fn from_values(values: &[f64]) -> Result<Self, KernelError> {
        values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v > 0.0 && v.is_finite() {
                    Ok(v.ln())
                } else {
                    Err(KernelError::NonFiniteParam { index, value: v })
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::from_log)
    }

    /// The per-leaf reference values (restart centers) for `kernel`.
    pub fn reference(kernel: &KernelExpr) -> Self {
        Self::from_log(
            kernel
                .leaves()
                .iter()
                .map(|k| k.reference_value().ln())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log
    }

    pub fn values(&self) -> Vec<f64> {
        self.log.iter().map(|v| v.exp()).collect()
    }
}

impl Serialize for Hyperparams {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.log.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Hyperparams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Vec::<f64>::deserialize(d).map(Self::from_log)
    }
}

/// Signal part of a candidate kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Lin,
    Rbf,
    LinPlusRbf,
    LinTimesRbf,
    LinPlusRbfPlusProduct,
}

/// Noise part of a candidate kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// constant white noise
    N1,
    /// white + lin·white
    N2,
    /// white + rbf·white
    N3,
}

impl Signal {
    pub const ALL: [Signal; 5] = [
        Signal::Lin,
        Signal::Rbf,
        Signal::LinPlusRbf,
        Signal::LinTimesRbf,
        Signal::LinPlusRbfPlusProduct,
    ];

    pub fn expr(self) -> KernelExpr {
        use KernelExpr::{Linear, Rbf};
        match self {
            Signal::Lin => Linear,
            Signal::Rbf => Rbf,
            Signal::LinPlusRbf => KernelExpr::sum([Linear, Rbf]),
            Signal::LinTimesRbf => KernelExpr::product([Linear, Rbf]),
            Signal::LinPlusRbfPlusProduct => {
                KernelExpr::sum([Linear, Rbf, KernelExpr::product([Linear, Rbf])])
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Signal::Lin => "lin",
            Signal::Rbf => "rbf",
            Signal::LinPlusRbf => "lin+rbf",
            Signal::LinTimesRbf => "lin*rbf",
            Signal::LinPlusRbfPlusProduct => "lin+rbf+lin*rbf",
        }
    }
}

impl Noise {
    pub const ALL: [Noise; 3] = [Noise::N1, Noise::N2, Noise::N3];

    pub fn expr(self) -> KernelExpr {
        use KernelExpr::{Linear, Rbf, WhiteNoise};
        match self {
            Noise::N1 => WhiteNoise,
            Noise::N2 => KernelExpr::sum([WhiteNoise, KernelExpr::product([Linear, WhiteNoise])]),
            Noise::N3 => KernelExpr::sum([WhiteNoise, KernelExpr::product([Rbf, WhiteNoise])]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Noise::N1 => "N1",
            Noise::N2 => "N2",
            Noise::N3 => "N3",
        }
    }
}

/// One signal/noise pairing from the candidate grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub signal: Signal,
    pub noise: Noise,
}

impl Candidate {
    pub fn expr(&self) -> KernelExpr {
        KernelExpr::sum([self.signal.expr(), self.noise.expr()])
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.signal.name(), self.noise.name())
    }
}

/// The 15 candidate kernels, signal-major (lin+N1, lin+N2, lin+N3, rbf+N1, …).
pub fn candidate_kernels() -> Vec<Candidate> {
    Signal::ALL
        .iter()
        .flat_map(|&signal| {
            Noise::ALL
                .iter()
                .map(move |&noise| Candidate { signal, noise })
        })
        .collect()
}

/// Expression trees of [`candidate_kernels`].
pub fn enumerate_candidate_kernels() -> Vec<KernelExpr> {
    candidate_kernels().iter().map(Candidate::expr).collect()
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(c) = candidate_kernels().iter().find(|c| &c.expr() == self) {
            return f.write_str(&c.name());
        }
        self.write_expanded(f, false)
    }
}

impl KernelExpr {
    fn write_expanded(&self, f: &mut fmt::Formatter<'_>, in_product: bool) -> fmt::Result {
        match self {
            KernelExpr::Linear => f.write_str("lin"),
            KernelExpr::Rbf => f.write_str("rbf"),
            KernelExpr::WhiteNoise => f.write_str("white"),
            KernelExpr::Sum(c) => {
                if in_product {
                    f.write_str("(")?;
                }
                for (i, k) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    k.write_expanded(f, false)?;
                }
                if in_product {
                    f.write_str(")")?;
                }
                Ok(())
            }
            KernelExpr::Product(c) => {
                for (i, k) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    k.write_expanded(f, true)?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for KernelExpr {
    type Err = KernelError;

    /// Parses `+`/`*` expressions over `lin`, `rbf`, `white` and the noise
    /// shorthands `N1`, `N2`, `N3`. Whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut parser = Parser {
            src: compact.as_bytes(),
            pos: 0,
            input: s,
        };
        let expr = parser.sum()?;
        if parser.pos != parser.src.len() {
            return Err(parser.fail("trailing input"));
        }
        expr.validate()?;
        Ok(expr)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    input: &'a str,
}

impl Parser<'_> {
    fn fail(&self, reason: &str) -> KernelError {
        KernelError::Parse {
            input: self.input.to_string(),
            reason: format!("{reason} at {}", self.pos),
        }
    }

    fn sum(&mut self) -> Result<KernelExpr, KernelError> {
        let mut terms = vec![self.product()?];
        while self.src.get(self.pos) == Some(&b'+') {
            self.pos += 1;
            terms.push(self.product()?);
        }
        Ok(KernelExpr::sum(terms))
    }

    fn product(&mut self) -> Result<KernelExpr, KernelError> {
        let mut factors = vec![self.atom()?];
        while self.src.get(self.pos) == Some(&b'*') {
            self.pos += 1;
            factors.push(self.atom()?);
        }
        Ok(KernelExpr::product(factors))
    }

    fn atom(&mut self) -> Result<KernelExpr, KernelError> {
        if self.src.get(self.pos) == Some(&b'(') {
            self.pos += 1;
            let inner = self.sum()?;
            if self.src.get(self.pos) != Some(&b')') {
                return Err(self.fail("expected ')'"));
            }
            self.pos += 1;
            return Ok(inner);
        }
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        match word {
            "lin" => Ok(KernelExpr::Linear),
            "rbf" => Ok(KernelExpr::Rbf),
            "white" => Ok(KernelExpr::WhiteNoise),
            "N1" => Ok(Noise::N1.expr()),
            "N2" => Ok(Noise::N2.expr()),
            "N3" => Ok(Noise::N3.expr()),
            "" => Err(self.fail("expected a kernel term")),
            other => {
                self.pos = start;
                Err(self.fail(&format!("unknown term '{other}'")))
            }
        }
    }
}

impl Serialize for KernelExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KernelExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(0.0..40.0),
                )
            })
            .collect()
    }

    #[test]
    fn leaf_evaluations() {
        let th = Hyperparams::from_values(&[3.7]).unwrap();
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(KernelExpr::Rbf.eval(&th, &p, &p, false).unwrap(), 1.0);

        let lin0 = Hyperparams::from_log(vec![f64::NEG_INFINITY]);
        assert!(KernelExpr::Linear.eval(&lin0, &p, &p, false).is_err());
        let tiny = Hyperparams::from_values(&[1e-300]).unwrap();
        let v = KernelExpr::Linear
            .eval(
                &tiny,
                &Point3::new(10.0, 0.0, 0.0),
                &Point3::new(0.0, 10.0, 0.0),
                false,
            )
            .unwrap();
        assert_eq!(v, 0.0);

        let ten = Hyperparams::from_values(&[10.0]).unwrap();
        let v = KernelExpr::Rbf
            .eval(&ten, &Point3::ORIGIN, &Point3::new(6.0, 8.0, 0.0), false)
            .unwrap();
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn arity_mismatch_is_structural_error() {
        let th = Hyperparams::from_values(&[1.0]).unwrap();
        let err = Noise::N2
            .expr()
            .eval(&th, &Point3::ORIGIN, &Point3::ORIGIN, true)
            .unwrap_err();
        assert_eq!(
            err,
            KernelError::Arity {
                leaves: 3,
                params: 1
            }
        );
    }

    #[test]
    fn double_noise_product_rejected() {
        let k = KernelExpr::Product(vec![KernelExpr::WhiteNoise, KernelExpr::WhiteNoise]);
        assert!(matches!(k.validate(), Err(KernelError::Structure(_))));
        assert!("white*white".parse::<KernelExpr>().is_err());
        assert!(KernelExpr::Sum(vec![]).validate().is_err());
    }

    #[test]
    fn rbf_gram_diagonal_is_one() {
        let pts = [
            Point3::new(0., 10., 0.),
            Point3::new(5., 10., 3.),
            Point3::new(-7., 20., 9.),
        ];
        let th = Hyperparams::from_values(&[5.0]).unwrap();
        let k = KernelExpr::Rbf.gram(&th, &pts).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
        }
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn white_noise_adds_to_diagonal_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 6);
        let rbf = Hyperparams::from_values(&[8.0]).unwrap();
        let both = Hyperparams::from_values(&[8.0, 0.1]).unwrap();
        let k_rbf = KernelExpr::Rbf.gram(&rbf, &pts).unwrap();
        let k = KernelExpr::sum([KernelExpr::Rbf, KernelExpr::WhiteNoise])
            .gram(&both, &pts)
            .unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let extra = if i == j { 0.01 } else { 0.0 };
                assert!((k[(i, j)] - k_rbf[(i, j)] - extra).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_gradient_is_constant() {
        let pts = [Point3::new(1., 2., 3.), Point3::new(4., 5., 6.)];
        let th = Hyperparams::from_values(&[1.5]).unwrap();
        let g = KernelExpr::Linear.gram_gradient(&th, &pts).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0].iter().all(|v| (v - 2.0 * 2.25).abs() < 1e-12));
    }

    #[test]
    fn noise_gradient_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 5);
        let k = Noise::N3.expr();
        let th = Hyperparams::from_values(&[0.2, 7.0, 0.3]).unwrap();
        for g in k.gram_gradient(&th, &pts).unwrap() {
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        assert_eq!(g[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_grid_order_and_names() {
        let names: Vec<String> = candidate_kernels().iter().map(Candidate::name).collect();
        assert_eq!(names.len(), 15);
        assert_eq!(names[0], "lin+N1");
        assert_eq!(names[5], "rbf+N3");
        assert_eq!(names[7], "lin+rbf+N2");
        assert_eq!(names[14], "lin+rbf+lin*rbf+N3");
        for c in candidate_kernels() {
            let e = c.expr();
            e.validate().unwrap();
            assert_eq!(e.leaf_count(), Hyperparams::reference(&e).len());
            assert_eq!(e.to_string(), c.name());
            assert_eq!(c.name().parse::<KernelExpr>().unwrap(), e);
        }
    }

    #[test]
    fn signal_membership_ignores_noise_products() {
        let k: KernelExpr = "rbf+N2".parse().unwrap();
        assert!(k.signal_contains(LeafKind::Rbf));
        assert!(!k.signal_contains(LeafKind::Linear));
        let k: KernelExpr = "lin*rbf+N3".parse().unwrap();
        assert!(k.signal_contains(LeafKind::Linear));
        assert!(k.signal_contains(LeafKind::Rbf));
    }

    #[test]
    fn expanded_display_round_trips() {
        let k: KernelExpr = "(lin+rbf)*rbf+white".parse().unwrap();
        assert_eq!(k.to_string(), "(lin+rbf)*rbf+white");
        assert_eq!(k.to_string().parse::<KernelExpr>().unwrap(), k);
        assert!("lin+".parse::<KernelExpr>().is_err());
        assert!("lin+foo".parse::<KernelExpr>().is_err());
    }
}
