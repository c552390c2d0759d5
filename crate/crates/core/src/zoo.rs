//! Catalogue of test objectives.
//!
//! Every member is plain data (no closures), so an [`Objective`] is `Send +
//! Sync` and cheap to clone. Rescaling is represented by an input scale `s`:
//! the rescaled function is `x ↦ base(s·x)`, which keeps rescaling exact and
//! composable.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Lipschitz constant of the gradient, or the marker for nonsmooth members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Lipschitz(f64),
    Unbounded,
}

impl Smoothness {
    pub fn finite(self) -> Option<f64> {
        match self {
            Smoothness::Lipschitz(l) => Some(l),
            Smoothness::Unbounded => None,
        }
    }
}

/// Continuous piecewise-quadratic convex function on the real line.
///
/// The derivative is the piecewise-linear interpolation of `slopes` at
/// `breakpoints`, held constant outside the outermost breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuadratic {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    /// Function value at each breakpoint, with `values[0] = 0`.
    values: Vec<f64>,
}

impl PiecewiseQuadratic {
    /// Builds the function from strictly increasing breakpoints and
    /// non-decreasing slopes.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != slopes.len() {
            return Err(invalid(
                "piecewise quadratic needs at least two breakpoints, one slope each",
            ));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        if slopes.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("slopes must be non-decreasing"));
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        values.push(0.0);
        for i in 0..breakpoints.len() - 1 {
            let width = breakpoints[i + 1] - breakpoints[i];
            values.push(values[i] + 0.5 * width * (slopes[i] + slopes[i + 1]));
        }
        Ok(Self {
            breakpoints,
            slopes,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Curvature of each interior piece.
    pub fn curvatures(&self) -> Vec<f64> {
        (0..self.breakpoints.len() - 1)
            .map(|i| self.curvature_of(i))
            .collect()
    }

    fn curvature_of(&self, piece: usize) -> f64 {
        (self.slopes[piece + 1] - self.slopes[piece])
            / (self.breakpoints[piece + 1] - self.breakpoints[piece])
    }

    /// Index of the interior piece containing `t`, if any.
    fn piece(&self, t: f64) -> Option<usize> {
        let last = self.breakpoints.len() - 1;
        if t < self.breakpoints[0] || t > self.breakpoints[last] {
            return None;
        }
        let k = self.breakpoints.partition_point(|&b| b <= t);
        Some(k.saturating_sub(1).min(last - 1))
    }

    fn value(&self, t: f64) -> f64 {
        let last = self.breakpoints.len() - 1;
        if t < self.breakpoints[0] {
            return self.slopes[0] * (t - self.breakpoints[0]);
        }
        if t > self.breakpoints[last] {
            return self.values[last] + self.slopes[last] * (t - self.breakpoints[last]);
        }
        let i = self.piece(t).unwrap();
        let d = t - self.breakpoints[i];
        self.values[i] + self.slopes[i] * d + 0.5 * self.curvature_of(i) * d * d
    }

    fn derivative(&self, t: f64) -> f64 {
        let last = self.breakpoints.len() - 1;
        if t < self.breakpoints[0] {
            return self.slopes[0];
        }
        if t > self.breakpoints[last] {
            return self.slopes[last];
        }
        let i = self.piece(t).unwrap();
        self.slopes[i] + self.curvature_of(i) * (t - self.breakpoints[i])
    }

    fn second_derivative(&self, t: f64) -> f64 {
        self.piece(t).map_or(0.0, |i| self.curvature_of(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// ½xᵀAx + bᵀx
    Quadratic {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        diagonal: bool,
    },
    /// ½t² for t ≤ 1, t − ½ beyond.
    Huber,
    /// |x| + max{0, x}
    AbsPlusRelu,
    /// log Σ exp(aᵢᵀx + cᵢ)
    LogSumExp {
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    Piecewise(PiecewiseQuadratic),
}

/// Closed forms for diagonal quadratics `½Σλᵢxᵢ² + Σbᵢxᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSolution {
    eigenvalues: Vec<f64>,
    linear: Vec<f64>,
}

impl AnalyticSolution {
    /// n-th gradient descent iterate from `x0` with step `eta`.
    pub fn gd_iterate(&self, x0: &[f64], eta: f64, n: usize) -> Vec<f64> {
        self.per_coordinate(x0, |lambda, b, x| {
            if lambda > 0.0 {
                let c = -b / lambda;
                c + (1.0 - eta * lambda).powi(n as i32) * (x - c)
            } else {
                x - n as f64 * eta * b
            }
        })
    }

    /// Gradient flow state at time `t`.
    pub fn flow_state(&self, x0: &[f64], t: f64) -> Vec<f64> {
        self.per_coordinate(x0, |lambda, b, x| {
            if lambda > 0.0 {
                let c = -b / lambda;
                c + (-lambda * t).exp() * (x - c)
            } else {
                x - t * b
            }
        })
    }

    /// Minimal value, when the function is bounded below.
    pub fn min_value(&self) -> Option<f64> {
        let mut v = 0.0;
        for (&lambda, &b) in self.eigenvalues.iter().zip(&self.linear) {
            if lambda > 0.0 {
                v -= 0.5 * b * b / lambda;
            } else if b != 0.0 {
                return None;
            }
        }
        Some(v)
    }

    fn per_coordinate(&self, x0: &[f64], rule: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        x0.iter()
            .zip(self.eigenvalues.iter().zip(&self.linear))
            .map(|(&x, (&lambda, &b))| rule(lambda, b, x))
            .collect()
    }
}

/// Serializable summary of a catalogue member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub name: String,
    pub id: String,
    #[serde(rename = "L")]
    pub smoothness_l: Option<f64>,
    pub dimension: usize,
    pub params: BTreeMap<String, f64>,
}

/// A convex (or, for the nonsmooth demo, merely Lipschitz) test objective
/// with an exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    kind: Kind,
    /// Input scale: this objective is `x ↦ base(scale·x)`.
    scale: f64,
    smoothness: Smoothness,
    dimension: usize,
    name: String,
    params: BTreeMap<String, f64>,
}

impl Objective {
    fn new(kind: Kind, smoothness: Smoothness, dimension: usize, name: &str) -> Self {
        Self {
            kind,
            scale: 1.0,
            smoothness,
            dimension,
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Catalogue address, e.g. `square`, `huber_l=4` or
    /// `random_convex_1d_pieces=5,seed=3`. [`parse_objective`] inverts it.
    pub fn id(&self) -> String {
        if self.params.is_empty() {
            return self.name.clone();
        }
        let params: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}_{}", self.name, params.join(","))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Finite smoothness constant, if any.
    pub fn lipschitz(&self) -> Option<f64> {
        self.smoothness.finite()
    }

    /// Every member of the catalogue is convex.
    pub fn is_convex(&self) -> bool {
        true
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            name: self.name.clone(),
            id: self.id(),
            smoothness_l: self.lipschitz(),
            dimension: self.dimension,
            params: self.params.clone(),
        }
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        linalg::scale(x, self.scale)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let y = self.scaled(x);
        match &self.kind {
            Kind::Quadratic { a, b, .. } => {
                let ay = mat_vec(a, &y);
                0.5 * linalg::dot(&y, &ay) + linalg::dot(b, &y)
            }
            Kind::Huber => {
                let t = y[0];
                if t <= 1.0 {
                    0.5 * t * t
                } else {
                    t - 0.5
                }
            }
            Kind::AbsPlusRelu => y[0].abs() + y[0].max(0.0),
            Kind::LogSumExp { a, c } => {
                let z = affine(a, c, &y);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + z.iter().map(|zi| (zi - m).exp()).sum::<f64>().ln()
            }
            Kind::Piecewise(p) => p.value(y[0]),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let y = self.scaled(x);
        let g = match &self.kind {
            Kind::Quadratic { a, b, .. } => linalg::axpy(&mat_vec(a, &y), 1.0, b),
            Kind::Huber => vec![if y[0] <= 1.0 { y[0] } else { 1.0 }],
            // 0 is the subgradient used at the kink.
            Kind::AbsPlusRelu => vec![if y[0] > 0.0 {
                2.0
            } else if y[0] < 0.0 {
                -1.0
            } else {
                0.0
            }],
            Kind::LogSumExp { a, c } => {
                let p = softmax(&affine(a, c, &y));
                mat_t_vec(a, &p)
            }
            Kind::Piecewise(p) => vec![p.derivative(y[0])],
        };
        linalg::scale(&g, self.scale)
    }

    pub fn has_hessian(&self) -> bool {
        !matches!(self.kind, Kind::AbsPlusRelu)
    }

    /// Hessian-vector product `H_f(x)·v`. For the piecewise members this is
    /// the almost-everywhere Hessian; `None` for the nonsmooth demo.
    pub fn hessian_action(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let y = self.scaled(x);
        let hv = match &self.kind {
            Kind::Quadratic { a, .. } => mat_vec(a, v),
            Kind::Huber => vec![if y[0] <= 1.0 { v[0] } else { 0.0 }],
            Kind::AbsPlusRelu => return None,
            Kind::LogSumExp { a, c } => {
                let p = softmax(&affine(a, c, &y));
                let av = mat_vec(a, v);
                let mean = linalg::dot(&p, &av);
                let w: Vec<f64> = p.iter().zip(&av).map(|(pi, ai)| pi * (ai - mean)).collect();
                mat_t_vec(a, &w)
            }
            Kind::Piecewise(p) => vec![p.second_derivative(y[0]) * v[0]],
        };
        Some(linalg::scale(&hv, self.scale * self.scale))
    }

    /// Closed forms, available for diagonal quadratics.
    pub fn analytic(&self) -> Option<AnalyticSolution> {
        match &self.kind {
            Kind::Quadratic {
                a,
                b,
                diagonal: true,
            } => {
                let s = self.scale;
                Some(AnalyticSolution {
                    eigenvalues: (0..a.len()).map(|i| a[i][i] * s * s).collect(),
                    linear: b.iter().map(|bi| bi * s).collect(),
                })
            }
            _ => None,
        }
    }

    /// Points (1-D members only) where the gradient is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        let base: Vec<f64> = match &self.kind {
            Kind::Huber => vec![1.0],
            Kind::AbsPlusRelu => vec![0.0],
            Kind::Piecewise(p) => p.breakpoints.clone(),
            _ => Vec::new(),
        };
        base.into_iter().map(|k| k / self.scale).collect()
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(invalid(format!(
                "point has dimension {}, `{}` expects {}",
                x.len(),
                self.id(),
                self.dimension
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| linalg::dot(row, v)).collect()
}

fn mat_t_vec(a: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; cols];
    for (row, wi) in a.iter().zip(w) {
        for (o, aij) in out.iter_mut().zip(row) {
            *o += aij * wi;
        }
    }
    out
}

fn affine(a: &[Vec<f64>], c: &[f64], y: &[f64]) -> Vec<f64> {
    linalg::axpy(&mat_vec(a, y), 1.0, c)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|zi| (zi - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|ei| ei / total).collect()
}

fn is_square(a: &[Vec<f64>]) -> bool {
    a.iter().all(|row| row.len() == a.len())
}

/// `f(x) = ½xᵀAx + bᵀx` for symmetric positive semidefinite `A`, with
/// `L = λ_max(A)`.
pub fn quadratic(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Objective> {
    let n = a.len();
    if n == 0 || !is_square(&a) || b.len() != n {
        return Err(invalid(
            "quadratic needs a non-empty square A and matching b",
        ));
    }
    if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
        return Err(invalid("quadratic coefficients must be finite"));
    }
    let mag = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * mag.max(1.0) {
                return Err(invalid("quadratic matrix must be symmetric"));
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| a[i][j])).eigenvalues;
    let lmax = eig.max();
    let lmin = eig.min();
    if lmin < -1e-12 * mag.max(1.0) {
        return Err(invalid(format!(
            "quadratic matrix must be positive semidefinite (λ_min = {lmin})"
        )));
    }
    if lmax <= 0.0 {
        return Err(invalid("quadratic matrix must have a positive eigenvalue"));
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[i][j] == 0.0));
    let mut params = BTreeMap::new();
    for i in 0..n {
        if diagonal {
            params.insert(format!("d{i}"), a[i][i]);
        } else {
            for j in 0..n {
                params.insert(format!("a{i}x{j}"), a[i][j]);
            }
        }
        if b[i] != 0.0 {
            params.insert(format!("b{i}"), b[i]);
        }
    }
    let mut f = Objective::new(
        Kind::Quadratic { a, b, diagonal },
        Smoothness::Lipschitz(lmax),
        n,
        "quadratic",
    );
    f.params = params;
    Ok(f)
}

/// Diagonal quadratic `½Σdᵢxᵢ² + Σbᵢxᵢ`.
pub fn diagonal_quadratic(diag: &[f64], b: &[f64]) -> Result<Objective> {
    let n = diag.len();
    let a = (0..n)
        .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
        .collect();
    quadratic(a, b.to_vec())
}

/// `f(x) = x²` on the real line, `L = 2`.
pub fn paper_square() -> Objective {
    let mut f = diagonal_quadratic(&[2.0], &[0.0]).expect("valid quadratic");
    f.name = "square".into();
    f.params.clear();
    f
}

/// ½t² for t ≤ 1 and t − ½ for t > 1; convex with `L = 1`.
pub fn huber_counterexample() -> Objective {
    Objective::new(Kind::Huber, Smoothness::Lipschitz(1.0), 1, "huber")
}

/// `f(x) = |x| + max{0, x}`, convex and 2-Lipschitz but not smooth.
pub fn abs_plus_relu() -> Objective {
    Objective::new(Kind::AbsPlusRelu, Smoothness::Unbounded, 1, "abs_plus_relu")
}

/// `f(x) = log Σᵢ exp(aᵢᵀx + cᵢ)` with `L = maxᵢ ‖aᵢ‖²`.
pub fn log_sum_exp(a: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Objective> {
    let n = a.first().map_or(0, |r| r.len());
    if a.is_empty() || n == 0 || a.iter().any(|r| r.len() != n) || c.len() != a.len() {
        return Err(invalid(
            "log_sum_exp needs a non-empty m×n matrix and m offsets",
        ));
    }
    if a.iter().flatten().chain(&c).any(|v| !v.is_finite()) {
        return Err(invalid("log_sum_exp coefficients must be finite"));
    }
    let l = a
        .iter()
        .map(|row| linalg::dot(row, row))
        .fold(0.0_f64, f64::max);
    if l <= 0.0 {
        return Err(invalid("log_sum_exp needs a non-zero row"));
    }
    let mut params = BTreeMap::new();
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            params.insert(format!("a{i}x{j}"), *v);
        }
        params.insert(format!("c{i}"), c[i]);
    }
    let mut f = Objective::new(
        Kind::LogSumExp { a, c },
        Smoothness::Lipschitz(l),
        n,
        "log_sum_exp",
    );
    f.params = params;
    Ok(f)
}

/// Two-dimensional log-sum-exp instance that is bounded below.
pub fn default_log_sum_exp() -> Objective {
    log_sum_exp(
        vec![vec![1.0, 0.5], vec![-1.0, 0.5], vec![0.0, -1.0]],
        vec![0.0, 0.5, -0.3],
    )
    .expect("valid log-sum-exp")
}

/// Random 1-D continuous piecewise-quadratic convex function.
///
/// `pieces` breakpoints are drawn uniformly from [−5, 5] (at least 0.05
/// apart) and the derivative values there are sorted draws from [−10, 10].
/// The first slope is forced non-positive and the last non-negative so that
/// a minimizer exists. `L` is the largest piece curvature.
pub fn random_convex_1d(seed: u64, pieces: usize) -> Result<Objective> {
    if !(2..=64).contains(&pieces) {
        return Err(invalid("random_convex_1d needs 2..=64 pieces"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let breakpoints = loop {
        let mut b: Vec<f64> = (0..pieces).map(|_| rng.random_range(-5.0..=5.0)).collect();
        b.sort_by(f64::total_cmp);
        if b.windows(2).all(|w| w[1] - w[0] >= 0.05) {
            break b;
        }
    };
    let mut slopes: Vec<f64> = (0..pieces)
        .map(|_| rng.random_range(-10.0..=10.0))
        .collect();
    slopes.sort_by(f64::total_cmp);
    slopes[0] = -slopes[0].abs();
    let last = pieces - 1;
    slopes[last] = slopes[last].abs();
    if slopes[last] == slopes[0] {
        slopes[last] += 1.0;
    }
    let pwq = PiecewiseQuadratic::new(breakpoints, slopes)?;
    let l = pwq.curvatures().into_iter().fold(0.0_f64, f64::max);
    let mut f = Objective::new(
        Kind::Piecewise(pwq),
        Smoothness::Lipschitz(l),
        1,
        "random_convex_1d",
    );
    f.params.insert("seed".into(), seed as f64);
    f.params.insert("pieces".into(), pieces as f64);
    Ok(f)
}

/// `g(t) = f(√(L_new/L_old)·t)`, which is `L_new`-smooth.
pub fn rescale(f: &Objective, l_new: f64) -> Result<Objective> {
    let l_old = f.lipschitz().ok_or_else(|| {
        Error::Unsupported(format!("`{}` has no finite smoothness constant", f.id()))
    })?;
    if !(l_new > 0.0 && l_new.is_finite()) {
        return Err(invalid(format!(
            "target smoothness must be positive, got {l_new}"
        )));
    }
    if l_new == l_old {
        return Ok(f.clone());
    }
    let mut g = f.clone();
    g.scale = f.scale * (l_new / l_old).sqrt();
    g.smoothness = Smoothness::Lipschitz(l_new);
    g.params.insert("l".into(), l_new);
    Ok(g)
}

/// The non-convexity counterexample rescaled to smoothness `l`.
pub fn make_counterexample(l: f64) -> Result<Objective> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(invalid(format!("L must be positive, got {l}")));
    }
    rescale(&huber_counterexample(), l)
}

/// Central finite-difference check of the gradient.
///
/// Step `h = 1e-5·(1+‖x‖)`; a point passes when every coordinate agrees to
/// `tol·max(1, ‖∇f‖∞)`. 1-D points within `h` of a kink are skipped.
pub fn gradient_check(f: &Objective, points: &[Vec<f64>], tol: f64) -> Result<bool> {
    if points.is_empty() {
        return Err(invalid("gradient_check needs at least one point"));
    }
    if !(tol > 0.0) {
        return Err(invalid("gradient_check tolerance must be positive"));
    }
    let kinks = f.kinks();
    for x in points {
        f.check_point(x)?;
        let h = 1e-5 * (1.0 + linalg::norm(x));
        if f.dimension() == 1 && kinks.iter().any(|k| (x[0] - k).abs() <= h) {
            continue;
        }
        let g = f.gradient(x);
        let allowed = tol * linalg::max_abs(&g).max(1.0);
        for i in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (f.value(&plus) - f.value(&minus)) / (2.0 * h);
            if (fd - g[i]).abs() > allowed {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Convex members with finite `L` used by sweeps and acceptance checks.
pub fn standard_zoo() -> Vec<Objective> {
    vec![
        paper_square(),
        huber_counterexample(),
        make_counterexample(4.0).expect("valid"),
        quadratic(vec![vec![3.0, 1.0], vec![1.0, 2.0]], vec![1.0, -1.0]).expect("valid"),
        diagonal_quadratic(&[1.0, 0.1, 4.0], &[0.5, 0.0, -1.0]).expect("valid"),
        default_log_sum_exp(),
        random_convex_1d(7, 6).expect("valid"),
        random_convex_1d(11, 3).expect("valid"),
    ]
}

/// Resolves a catalogue address such as `square`, `huber_l=4`,
/// `quadratic_d0=1,d1=3,b1=-1` or `random_convex_1d_seed=3,pieces=5`.
///
/// Parameters follow the name after `:` or after the last `_` preceding the
/// first `=`. Every finite-`L` member accepts `l=<L>` to rescale.
pub fn parse_objective(spec: &str) -> Result<Objective> {
    let spec = spec.trim();
    let (name, raw) = split_id(spec);
    let mut params = BTreeMap::new();
    if let Some(raw) = raw {
        for kv in raw.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("malformed parameter `{kv}` in `{spec}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("parameter `{k}` is not a number: `{v}`")))?;
            params.insert(k.trim().to_string(), v);
        }
    }
    let rescale_to = params.remove("l");
    let take = |params: &mut BTreeMap<String, f64>, key: &str| params.remove(key);

    let base = match name {
        "square" => paper_square(),
        "huber" => huber_counterexample(),
        "abs_plus_relu" => abs_plus_relu(),
        "quadratic" => {
            let n = indexed_len(&params, &["d", "b", "a"]);
            if n == 0 {
                return Err(invalid("quadratic needs d<i> or a<i>x<j> parameters"));
            }
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for i in 0..n {
                if let Some(d) = take(&mut params, &format!("d{i}")) {
                    a[i][i] = d;
                }
                if let Some(bi) = take(&mut params, &format!("b{i}")) {
                    b[i] = bi;
                }
                for j in 0..n {
                    if let Some(v) = take(&mut params, &format!("a{i}x{j}")) {
                        a[i][j] = v;
                    }
                }
            }
            quadratic(a, b)?
        }
        "log_sum_exp" => {
            if params.is_empty() {
                default_log_sum_exp()
            } else {
                let m = indexed_len(&params, &["c"]);
                let n = params
                    .keys()
                    .filter_map(|k| k.split_once('x').and_then(|(_, j)| j.parse::<usize>().ok()))
                    .max()
                    .map_or(0, |j| j + 1);
                let mut a = vec![vec![0.0; n]; m];
                let mut c = vec![0.0; m];
                for i in 0..m {
                    c[i] = take(&mut params, &format!("c{i}")).unwrap_or(0.0);
                    for j in 0..n {
                        a[i][j] = take(&mut params, &format!("a{i}x{j}")).unwrap_or(0.0);
                    }
                }
                log_sum_exp(a, c)?
            }
        }
        "random_convex_1d" => {
            let seed = take(&mut params, "seed").unwrap_or(0.0);
            let pieces = take(&mut params, "pieces").unwrap_or(5.0);
            if seed < 0.0 || seed.fract() != 0.0 || pieces.fract() != 0.0 {
                return Err(invalid(
                    "random_convex_1d seed and pieces must be non-negative integers",
                ));
            }
            random_convex_1d(seed as u64, pieces as usize)?
        }
        _ => return Err(Error::UnknownFunction(spec.to_string())),
    };
    if let Some(k) = params.keys().next() {
        return Err(invalid(format!("unknown parameter `{k}` for `{name}`")));
    }
    match rescale_to {
        Some(l) => rescale(&base, l),
        None => Ok(base),
    }
}

fn split_id(spec: &str) -> (&str, Option<&str>) {
    if let Some((name, rest)) = spec.split_once(':') {
        return (name, Some(rest));
    }
    match spec.find('=') {
        Some(eq) => match spec[..eq].rfind('_') {
            Some(us) => (&spec[..us], Some(&spec[us + 1..])),
            None => (spec, None),
        },
        None => (spec, None),
    }
}

/// One past the largest index appearing in keys like `d3`, `b1`, `a2x0`.
fn indexed_len(params: &BTreeMap<String, f64>, prefixes: &[&str]) -> usize {
    params
        .keys()
        .filter_map(|k| {
            let p = prefixes.iter().find(|p| k.starts_with(**p))?;
            let rest = &k[p.len()..];
            let head = rest.split('x').next()?;
            head.parse::<usize>().ok()
        })
        .max()
        .map_or(0, |i| i + 1)
}
