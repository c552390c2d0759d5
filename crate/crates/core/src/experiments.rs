//! Packaged experiments: the two-step counterexample, the step-size regime
//! scan, the randomized property suite and the convexity fuzzer.
//!
//! Trials are independent. Trial `i` of a run with seed `s` draws from a
//! ChaCha stream keyed by `(s, i)`, so results do not depend on how many
//! worker threads execute them or in which order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, ViolationRun, DEFAULT_TOL};
use crate::descent;
use crate::error::{precondition, Error, Result};
use crate::flow;
use crate::io::{csv_writer, fmt_f64, fmt_opt_index};
use crate::linalg;
use crate::zoo::{self, Objective};

/// Step sizes up to `CONVEX_REGIME/L` give convex curves.
pub const CONVEX_REGIME: f64 = 1.75;
/// Step sizes below `STABLE_REGIME/L` give monotone convergence.
pub const STABLE_REGIME: f64 = 2.0;

/// Margin (in units of `1/L`) kept between the default scan grid and the
/// ends of `(0, 2/L)`.
pub const SCAN_MARGIN: f64 = 1e-3;
pub const BISECTION_ITERS: usize = 40;
pub const BISECTION_STEPS: usize = 10;
pub const SWEEP_STEPS: usize = 200;
pub const FUZZ_STEPS: usize = 100;

/// Start point of the two-step counterexample.
pub const COUNTEREXAMPLE_X0: f64 = -1.8;

pub(crate) fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn finite_l(f: &Objective) -> Result<f64> {
    f.lipschitz().ok_or_else(|| {
        Error::Unsupported(format!("`{}` has no finite smoothness constant", f.id()))
    })
}

// ---------------------------------------------------------------------------
// Counterexample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRecord {
    pub eta: f64,
    pub x: [f64; 3],
    pub f: [f64; 3],
    /// `f₀ − f₁ < f₁ − f₂`
    pub violated: bool,
    /// `η² − 15.75η + 24.5`, negative exactly when the curve bends down.
    pub quadratic_lhs: f64,
}

/// Two gradient steps on the Huber-type function from `x₀ = −1.8` with
/// `η ∈ (1.75, 2)`.
pub fn reproduce_counterexample(eta: f64) -> Result<CounterexampleRecord> {
    if !(eta > CONVEX_REGIME && eta < STABLE_REGIME) {
        return Err(precondition(format!(
            "eta must lie in (1.75, 2), got {eta}"
        )));
    }
    let f = zoo::huber_counterexample();
    let t = descent::gd_run(&f, &[COUNTEREXAMPLE_X0], eta, 2)?;
    let x = [t.points[0][0], t.points[1][0], t.points[2][0]];
    let v = [t.values[0], t.values[1], t.values[2]];
    let violated = v[0] - v[1] < v[1] - v[2];
    let quadratic_lhs = eta * eta - 15.75 * eta + 24.5;
    if violated != (quadratic_lhs < 0.0) {
        return Err(Error::CheckFailed(format!(
            "eta = {eta}: violated = {violated} but quadratic = {quadratic_lhs}"
        )));
    }
    Ok(CounterexampleRecord {
        eta,
        x,
        f: v,
        violated,
        quadratic_lhs,
    })
}

// ---------------------------------------------------------------------------
// Regime scan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaVerdict {
    pub eta: f64,
    pub convex: bool,
    pub monotone: bool,
    pub grad_monotone: bool,
    pub first_violation_step: Option<usize>,
    pub divergent: bool,
}

impl EtaVerdict {
    fn violates(&self) -> bool {
        self.divergent || !self.convex
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeScanResult {
    pub eta_grid: Vec<f64>,
    pub verdicts: Vec<EtaVerdict>,
    /// Bisected boundary between convex and non-convex verdicts, or `2/L`
    /// when the grid shows no violation.
    pub empirical_threshold: f64,
    /// `1.75/L`
    pub theoretical_threshold: f64,
    pub smoothness_l: f64,
    pub function_id: String,
    pub x0: Vec<f64>,
    pub steps: usize,
}

/// JSON summary written next to the scan CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub function_id: String,
    #[serde(rename = "L")]
    pub smoothness_l: f64,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub grid_size: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub theoretical_threshold: f64,
    pub empirical_threshold: f64,
    pub convex_count: usize,
    pub violating_count: usize,
    pub divergent_count: usize,
    /// Grid points at or below `1.75/L` whose curve was not convex.
    pub safe_regime_violations: usize,
}

impl RegimeScanResult {
    /// CSV `eta,convex,monotone,grad_monotone,first_violation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record([
            "eta",
            "convex",
            "monotone",
            "grad_monotone",
            "first_violation",
        ])?;
        for v in &self.verdicts {
            w.write_record([
                fmt_f64(v.eta),
                v.convex.to_string(),
                v.monotone.to_string(),
                v.grad_monotone.to_string(),
                fmt_opt_index(v.first_violation_step),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> ScanSummary {
        let theory = self.theoretical_threshold;
        ScanSummary {
            function_id: self.function_id.clone(),
            smoothness_l: self.smoothness_l,
            x0: self.x0.clone(),
            steps: self.steps,
            grid_size: self.eta_grid.len(),
            eta_min: self.eta_grid[0],
            eta_max: *self.eta_grid.last().unwrap(),
            theoretical_threshold: theory,
            empirical_threshold: self.empirical_threshold,
            convex_count: self
                .verdicts
                .iter()
                .filter(|v| v.convex && !v.divergent)
                .count(),
            violating_count: self.verdicts.iter().filter(|v| v.violates()).count(),
            divergent_count: self.verdicts.iter().filter(|v| v.divergent).count(),
            safe_regime_violations: self
                .verdicts
                .iter()
                .filter(|v| v.eta <= theory && v.violates())
                .count(),
        }
    }

    /// Verdict pattern as `(convex, monotone, grad_monotone)` triples.
    pub fn pattern(&self) -> Vec<(bool, bool, bool)> {
        self.verdicts
            .iter()
            .map(|v| (v.convex && !v.divergent, v.monotone, v.grad_monotone))
            .collect()
    }
}

fn verdict_at(f: &Objective, x0: &[f64], eta: f64, steps: usize) -> EtaVerdict {
    match descent::gd_run(f, x0, eta, steps) {
        Ok(t) => {
            let r = analysis::analyze_trajectory(&t, DEFAULT_TOL);
            EtaVerdict {
                eta,
                convex: r.convex,
                monotone: r.monotone_decreasing,
                grad_monotone: r.grad_norm_monotone,
                first_violation_step: r.first_convexity_violation,
                divergent: false,
            }
        }
        Err(_) => EtaVerdict {
            eta,
            convex: false,
            monotone: false,
            grad_monotone: false,
            first_violation_step: None,
            divergent: true,
        },
    }
}

/// Scans `grid_size` step sizes evenly spread over
/// `[0.001/L, 1.999/L]`.
pub fn eta_scan(
    f: &Objective,
    x0: &[f64],
    grid_size: usize,
    steps: usize,
) -> Result<RegimeScanResult> {
    let l = finite_l(f)?;
    eta_scan_range(
        f,
        x0,
        SCAN_MARGIN / l,
        (STABLE_REGIME - SCAN_MARGIN) / l,
        grid_size,
        steps,
    )
}

/// Scans an explicit step-size range inside `(0, 2/L)`.
pub fn eta_scan_range(
    f: &Objective,
    x0: &[f64],
    eta_min: f64,
    eta_max: f64,
    grid_size: usize,
    steps: usize,
) -> Result<RegimeScanResult> {
    let l = finite_l(f)?;
    f.check_point(x0)?;
    if grid_size < 2 {
        return Err(precondition("scan grid needs at least two points"));
    }
    if steps == 0 {
        return Err(precondition("scan needs at least one step"));
    }
    if !(eta_min > 0.0 && eta_min < eta_max && eta_max < STABLE_REGIME / l) {
        return Err(precondition(format!(
            "scan range [{eta_min}, {eta_max}] must satisfy 0 < eta_min < eta_max < 2/L = {}",
            STABLE_REGIME / l
        )));
    }
    // grid points are built in units of 1/L so rescaled problems get the
    // same relative grid
    let (lo, hi) = (eta_min * l, eta_max * l);
    let eta_grid: Vec<f64> = (0..grid_size)
        .map(|i| (lo + (hi - lo) * i as f64 / (grid_size - 1) as f64) / l)
        .collect();
    let verdicts: Vec<EtaVerdict> = eta_grid
        .par_iter()
        .map(|&eta| verdict_at(f, x0, eta, steps))
        .collect();

    let empirical_threshold = match verdicts.iter().position(EtaVerdict::violates) {
        None => STABLE_REGIME / l,
        Some(k) => {
            let mut below = if k == 0 { 0.0 } else { eta_grid[k - 1] };
            let mut above = eta_grid[k];
            let probe_steps = match verdicts[k].first_violation_step {
                Some(n) => BISECTION_STEPS.max(n + 2),
                None => steps,
            };
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (below + above);
                if verdict_at(f, x0, mid, probe_steps).violates() {
                    above = mid;
                } else {
                    below = mid;
                }
            }
            0.5 * (below + above)
        }
    };

    Ok(RegimeScanResult {
        eta_grid,
        verdicts,
        empirical_threshold,
        theoretical_threshold: CONVEX_REGIME / l,
        smoothness_l: l,
        function_id: f.id(),
        x0: x0.to_vec(),
        steps,
    })
}

// ---------------------------------------------------------------------------
// Randomized instances

/// Random catalogue member with finite `L`.
pub fn random_instance(rng: &mut impl Rng) -> Objective {
    match rng.random_range(0..5) {
        0 => {
            let l = rng.random_range(0.1..10.0);
            zoo::rescale(&zoo::paper_square(), l).expect("positive L")
        }
        1 => {
            let l = [0.25, 1.0, 4.0, 16.0][rng.random_range(0..4)];
            zoo::make_counterexample(l).expect("positive L")
        }
        2 => random_psd_quadratic(rng),
        3 => {
            let n = rng.random_range(1..=3);
            let m = rng.random_range(2..=4);
            let a = (0..m)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let c = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            zoo::log_sum_exp(a, c).expect("non-zero rows")
        }
        _ => random_piecewise(rng),
    }
}

fn random_piecewise(rng: &mut impl Rng) -> Objective {
    let seed = rng.random::<u32>() as u64;
    let pieces = rng.random_range(2..=8);
    zoo::random_convex_1d(seed, pieces).expect("valid piece count")
}

/// `A = BᵀB + 0.01·I` with uniform entries in `B`, uniform `b`.
pub fn random_psd_quadratic(rng: &mut impl Rng) -> Objective {
    let n = rng.random_range(1..=4);
    let b_mat: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = (0..n).map(|k| b_mat[k][i] * b_mat[k][j]).sum::<f64>();
        }
        a[i][i] += 0.01;
    }
    for i in 0..n {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    let b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    zoo::quadratic(a, b).expect("PSD by construction")
}

fn random_point(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-radius..=radius))
        .collect()
}

/// Uniform in `(0, factor/L]`.
fn eta_up_to(rng: &mut impl Rng, factor: f64, l: f64) -> f64 {
    let u: f64 = rng.random();
    factor * (1.0 - u) / l
}

// ---------------------------------------------------------------------------
// Property suite

/// The six numbered checks of [`verify_theorem_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Check {
    /// GD curve convex for `η ≤ 1.75/L`, and the two-step certificate holds.
    GdConvexity,
    /// GD gradient norms non-increasing for `η ≤ 2/L`.
    GdGradNorm,
    /// Gradient flow curve convex.
    FlowConvexity,
    /// Gradient norm non-increasing along the flow.
    FlowGradNorm,
    /// Euler curve within the uniform error bound of the flow.
    EulerBound,
    /// Euler curve convex for `η ≤ 1/L`.
    EulerConvexity,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::GdConvexity,
        Check::GdGradNorm,
        Check::FlowConvexity,
        Check::FlowGradNorm,
        Check::EulerBound,
        Check::EulerConvexity,
    ];

    /// Stable label used in reports.
    pub fn id(self) -> &'static str {
        match self {
            Check::GdConvexity => "T3.1",
            Check::GdGradNorm => "T3.3",
            Check::FlowConvexity => "T4.3",
            Check::FlowGradNorm => "T4.5",
            Check::EulerBound => "TA.2",
            Check::EulerConvexity => "TA.4",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Check::GdConvexity => "gradient descent curve convex for eta <= 1.75/L",
            Check::GdGradNorm => "gradient descent gradient norms non-increasing for eta <= 2/L",
            Check::FlowConvexity => "gradient flow curve convex",
            Check::FlowGradNorm => "gradient flow gradient norm non-increasing",
            Check::EulerBound => "Euler curve within (K eta/2) e^(L(R+1)) of the flow",
            Check::EulerConvexity => "Euler curve convex for eta <= 1/L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub id: String,
    pub description: String,
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFailure {
    pub theorem: String,
    pub function: String,
    pub eta: Option<f64>,
    pub seed: u64,
    pub trial: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckTally>,
    pub failures: Vec<CheckFailure>,
}

impl SuiteSummary {
    /// Number of checks that passed in every trial.
    pub fn checks_passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed == c.total).count()
    }

    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn headline(&self) -> String {
        format!(
            "{}/{} theorem checks passed",
            self.checks_passed(),
            self.checks.len()
        )
    }
}

/// Outcome of one check in one trial: `Ok(())` or the step size involved and
/// a description.
type Outcome = std::result::Result<(), (Option<f64>, String)>;

fn run_check(check: Check, f: &Objective, rng: &mut ChaCha8Rng) -> Outcome {
    let l = f.lipschitz().expect("suite uses finite-L members");
    let x0 = random_point(rng, f.dimension(), 5.0);
    let err = |eta: f64, e: Error| (Some(eta), e.to_string());
    match check {
        Check::GdConvexity => {
            let eta = eta_up_to(rng, CONVEX_REGIME, l);
            let t = descent::gd_run(f, &x0, eta, SWEEP_STEPS).map_err(|e| err(eta, e))?;
            let tol = DEFAULT_TOL * (1.0 + t.values[0].abs());
            let v = analysis::is_convex_sequence(&t.values, tol);
            if !v.convex {
                return Err((
                    Some(eta),
                    format!(
                        "x0 = {x0:?}: second difference violation at n = {:?}",
                        v.first_violation
                    ),
                ));
            }
            let eta_c = eta_up_to(rng, STABLE_REGIME, l);
            let c = analysis::certificate_gap(f, &x0, eta_c).map_err(|e| err(eta_c, e))?;
            if !c.holds(DEFAULT_TOL) {
                return Err((
                    Some(eta_c),
                    format!("x0 = {x0:?}: certificate lhs {} < rhs {}", c.lhs, c.rhs),
                ));
            }
            Ok(())
        }
        Check::GdGradNorm => {
            let eta = if rng.random_bool(0.1) {
                STABLE_REGIME / l
            } else {
                eta_up_to(rng, STABLE_REGIME, l)
            };
            let t = descent::gd_run(f, &x0, eta, SWEEP_STEPS).map_err(|e| err(eta, e))?;
            let tol = DEFAULT_TOL * (1.0 + t.grad_norms[0]);
            if !analysis::gradient_norm_monotone(&t, tol) {
                return Err((Some(eta), format!("x0 = {x0:?}: gradient norm increased")));
            }
            Ok(())
        }
        Check::FlowConvexity | Check::FlowGradNorm => {
            let sol = flow::reference_flow(f, &x0, FLOW_STEP / l, FLOW_HORIZON / l)
                .map_err(|e| (None, e.to_string()))?;
            if check == Check::FlowConvexity {
                if !flow_curve_convex(&sol) {
                    return Err((None, format!("x0 = {x0:?}: flow curve not convex")));
                }
            } else if !flow_grad_norm_monotone(&sol) {
                return Err((None, format!("x0 = {x0:?}: flow gradient norm increased")));
            }
            Ok(())
        }
        Check::EulerBound => {
            let r = 1.0;
            let eta = rng.random_range(0.05..0.5) * (1.0 / l).min(1.0);
            let k = linalg::norm(&f.gradient(&x0));
            let bound = flow::euler_error_bound(k.max(f64::MIN_POSITIVE), l, eta, r)
                .map_err(|e| err(eta, e))?;
            let h = (0.1 / l).min(1e-3);
            let sol = flow::reference_flow(f, &x0, h, r + eta).map_err(|e| err(eta, e))?;
            let path = flow::euler_path(f, &x0, eta, r + eta).map_err(|e| err(eta, e))?;
            let (sup, at) = flow::euler_sup_error(&path, &sol, r).map_err(|e| err(eta, e))?;
            if sup > bound {
                return Err((
                    Some(eta),
                    format!("x0 = {x0:?}: error {sup} at t = {at} exceeds {bound}"),
                ));
            }
            Ok(())
        }
        Check::EulerConvexity => {
            let eta = rng.random_range(0.01..=1.0) / l;
            if euler_curve_convex(f, &x0, eta).map_err(|e| err(eta, e))? {
                Ok(())
            } else {
                Err((Some(eta), format!("x0 = {x0:?}: Euler curve not convex")))
            }
        }
    }
}

/// Reference flow step in units of `1/L`.
pub const FLOW_STEP: f64 = 0.01;
/// Flow horizon in units of `1/L`.
pub const FLOW_HORIZON: f64 = 5.0;
pub const FLOW_TOL: f64 = 1e-9;

pub fn flow_curve_convex(sol: &flow::FlowSolution) -> bool {
    let samples: Vec<(f64, f64)> = sol
        .times
        .iter()
        .copied()
        .zip(sol.values.iter().copied())
        .collect();
    analysis::continuous_curve_convexity(&samples, FLOW_TOL).unwrap_or(false)
}

pub fn flow_grad_norm_monotone(sol: &flow::FlowSolution) -> bool {
    analysis::is_non_increasing(&sol.grad_norms, FLOW_TOL * (1.0 + sol.grad_norms[0]))
}

/// Convexity of `t ↦ f(x⁽ᵑ⁾(t))` over `[0, 5/L]`, sampled at every node
/// and quarter node.
pub fn euler_curve_convex(f: &Objective, x0: &[f64], eta: f64) -> Result<bool> {
    let l = finite_l(f)?;
    let path = flow::euler_path(f, x0, eta, FLOW_HORIZON / l)?;
    let n = path.base_trajectory.steps() * 4;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * eta / 4.0).collect();
    let values = path.curve_values(f, &times)?;
    let samples: Vec<(f64, f64)> = times.into_iter().zip(values).collect();
    analysis::continuous_curve_convexity(&samples, FLOW_TOL)
}

/// Runs every check on `trials` random catalogue instances.
pub fn verify_theorem_suite(seed: u64, trials: usize) -> Result<SuiteSummary> {
    verify_indexed(seed, trials, |_, rng| random_instance(rng))
}

/// Like [`verify_theorem_suite`], cycling through the given functions.
pub fn verify_theorem_suite_on(
    functions: &[Objective],
    seed: u64,
    trials: usize,
) -> Result<SuiteSummary> {
    if functions.is_empty() {
        return Err(precondition("need at least one function"));
    }
    for f in functions {
        finite_l(f)?;
    }
    verify_indexed(seed, trials, |i, _rng| {
        functions[i % functions.len()].clone()
    })
}

fn verify_indexed(
    seed: u64,
    trials: usize,
    make: impl Fn(usize, &mut ChaCha8Rng) -> Objective + Sync,
) -> Result<SuiteSummary> {
    if trials == 0 {
        return Err(precondition("trials must be at least 1"));
    }
    let per_trial: Vec<Vec<(Check, Outcome, String)>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let f = make(i, &mut rng);
            Check::ALL
                .iter()
                .map(|&c| (c, run_check(c, &f, &mut rng), f.id()))
                .collect()
        })
        .collect();

    let mut checks: Vec<CheckTally> = Check::ALL
        .iter()
        .map(|c| CheckTally {
            id: c.id().to_string(),
            description: c.description().to_string(),
            passed: 0,
            total: trials,
        })
        .collect();
    let mut failures = Vec::new();
    for (trial, outcomes) in per_trial.into_iter().enumerate() {
        for (idx, (check, outcome, function)) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(()) => checks[idx].passed += 1,
                Err((eta, detail)) => failures.push(CheckFailure {
                    theorem: check.id().to_string(),
                    function,
                    eta,
                    seed,
                    trial,
                    detail,
                }),
            }
        }
    }
    Ok(SuiteSummary {
        seed,
        trials,
        checks,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Fuzzing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaMode {
    /// `η` uniform in `(0, 1.75/L]`.
    SafeRegime,
    /// `η` uniform in `(1.75/L, 2/L)`.
    DangerRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub trial: usize,
    pub seed: u64,
    pub function_id: String,
    #[serde(rename = "L")]
    pub smoothness_l: f64,
    pub eta: f64,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub first_violation: usize,
    pub violation_count: usize,
    pub runs: Vec<ViolationRun>,
    pub max_run_length: usize,
    pub monotone_decreasing: bool,
}

/// Run-length statistics over a set of violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub seed: u64,
    pub trials: usize,
    pub mode: EtaMode,
    pub violating_trials: usize,
    pub trials_with_multiple_violations: usize,
    pub max_run_length: usize,
    /// `run_length_histogram[k]` counts runs of length `k + 1`.
    pub run_length_histogram: Vec<usize>,
    pub all_monotone: bool,
}

pub fn summarize_fuzz(
    seed: u64,
    trials: usize,
    mode: EtaMode,
    records: &[ViolationRecord],
) -> FuzzSummary {
    let max_run_length = records.iter().map(|r| r.max_run_length).max().unwrap_or(0);
    let mut hist = vec![0; max_run_length];
    for run in records.iter().flat_map(|r| &r.runs) {
        hist[run.length - 1] += 1;
    }
    FuzzSummary {
        seed,
        trials,
        mode,
        violating_trials: records.len(),
        trials_with_multiple_violations: records.iter().filter(|r| r.violation_count > 1).count(),
        max_run_length,
        run_length_histogram: hist,
        all_monotone: records.iter().all(|r| r.monotone_decreasing),
    }
}

/// Runs one instance and returns a record if its curve is not convex.
pub fn fuzz_case(
    f: &Objective,
    x0: &[f64],
    eta: f64,
    steps: usize,
    trial: usize,
    seed: u64,
) -> Result<Option<ViolationRecord>> {
    let l = finite_l(f)?;
    let t = descent::gd_run(f, x0, eta, steps)?;
    let report = analysis::analyze_trajectory(&t, DEFAULT_TOL);
    if report.convex {
        return Ok(None);
    }
    let runs = report.consecutive_violation_runs;
    Ok(Some(ViolationRecord {
        trial,
        seed,
        function_id: f.id(),
        smoothness_l: l,
        eta,
        x0: x0.to_vec(),
        steps,
        first_violation: report.first_convexity_violation.expect("not convex"),
        violation_count: runs.iter().map(|r| r.length).sum(),
        max_run_length: runs.iter().map(|r| r.length).max().unwrap_or(0),
        runs,
        monotone_decreasing: report.monotone_decreasing,
    }))
}

/// Random search for non-convex curves.
///
/// Instances are mostly random 1-D piecewise quadratics and rescaled
/// Huber-type functions; one trial in five uses a random PSD quadratic in up
/// to four dimensions, whose curves are convex for every stable step size.
/// In the danger regime the 1-D starts are drawn from `±[1, 3]/√L` so that
/// iterates cross between curvature regions.
pub fn fuzz_convexity(seed: u64, trials: usize, mode: EtaMode) -> Result<Vec<ViolationRecord>> {
    if trials == 0 {
        return Err(precondition("trials must be at least 1"));
    }
    let outcomes: Vec<Result<Option<ViolationRecord>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let f = match rng.random_range(0..10) {
                0..=5 => random_piecewise(&mut rng),
                6..=7 => {
                    let l = 2f64.powf(rng.random_range(-3.0..5.0));
                    zoo::make_counterexample(l).expect("positive L")
                }
                _ => random_psd_quadratic(&mut rng),
            };
            let l = f.lipschitz().expect("finite L");
            let (x0, eta) = match mode {
                EtaMode::SafeRegime => (
                    random_point(&mut rng, f.dimension(), 5.0),
                    eta_up_to(&mut rng, CONVEX_REGIME, l),
                ),
                EtaMode::DangerRegime => {
                    let x0 = if f.dimension() == 1 {
                        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        vec![sign * rng.random_range(1.0..=3.0) / l.sqrt()]
                    } else {
                        random_point(&mut rng, f.dimension(), 5.0)
                    };
                    let factor = loop {
                        let v = rng.random_range(CONVEX_REGIME..STABLE_REGIME);
                        if v > CONVEX_REGIME {
                            break v;
                        }
                    };
                    (x0, factor / l)
                }
            };
            fuzz_case(&f, &x0, eta, FUZZ_STEPS, i, seed)
        })
        .collect();
    outcomes.into_iter().filter_map(|r| r.transpose()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counterexample_examples() {
        let r = reproduce_counterexample(1.9).unwrap();
        for (got, want) in r.x.iter().zip([-1.8, 1.62, -0.28]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        for (got, want) in r.f.iter().zip([1.62, 1.12, 0.0392]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(r.violated);
        assert_relative_eq!(r.quadratic_lhs, -1.815, epsilon = 1e-12);

        let r = reproduce_counterexample(1.8).unwrap();
        for (got, want) in r.f.iter().zip([1.62, 0.94, 0.0648]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        assert_relative_eq!(r.x[1], 1.44, epsilon = 1e-12);
        assert_relative_eq!(r.x[2], -0.36, epsilon = 1e-12);

        let r = reproduce_counterexample(1.76).unwrap();
        assert!(r.violated);
        assert_relative_eq!(r.x[1], 1.368, epsilon = 1e-12);
        assert!(r.x[1] > 1.35);
    }

    #[test]
    fn counterexample_preconditions() {
        for eta in [1.75, 2.0, 0.5, 3.0, f64::NAN] {
            assert!(matches!(
                reproduce_counterexample(eta),
                Err(Error::Precondition(_))
            ));
        }
    }

    #[test]
    fn scan_on_counterexample() {
        let f = zoo::huber_counterexample();
        let r = eta_scan(&f, &[COUNTEREXAMPLE_X0], 50, 10).unwrap();
        assert_eq!(r.eta_grid.len(), 50);
        assert!(r.eta_grid.windows(2).all(|w| w[1] > w[0]));
        for v in &r.verdicts {
            assert_eq!(v.convex, v.eta <= 1.75, "eta = {}", v.eta);
            assert!(v.monotone);
        }
        assert!((r.empirical_threshold - 1.75).abs() < 1e-6);
        assert_eq!(r.theoretical_threshold, 1.75);
    }

    #[test]
    fn scan_on_square_is_all_convex() {
        let r = eta_scan(&zoo::paper_square(), &[3.0], 50, 50).unwrap();
        assert!(r
            .verdicts
            .iter()
            .all(|v| v.convex && v.monotone && v.grad_monotone));
        assert_eq!(r.empirical_threshold, 1.0);
    }

    #[test]
    fn scan_from_stationary_point() {
        let r = eta_scan(&zoo::huber_counterexample(), &[0.0], 20, 10).unwrap();
        assert!(r.verdicts.iter().all(|v| v.convex));
    }

    #[test]
    fn scan_preconditions() {
        let f = zoo::paper_square();
        assert!(eta_scan(&f, &[1.0], 1, 10).is_err());
        assert!(eta_scan_range(&f, &[1.0], 0.1, 1.2, 5, 10).is_err());
        assert!(eta_scan(&zoo::abs_plus_relu(), &[1.0], 5, 10).is_err());
    }

    #[test]
    fn scan_csv() {
        let r = eta_scan(&zoo::huber_counterexample(), &[COUNTEREXAMPLE_X0], 5, 10).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "eta,convex,monotone,grad_monotone,first_violation"
        );
        assert_eq!(lines.len(), 6);
        assert!(lines[1].ends_with("true,true,true,"));
        assert!(lines[5].ends_with("false,true,true,0"));
        assert_eq!(r.summary().safe_regime_violations, 0);
    }

    #[test]
    fn suite_smoke() {
        let s = verify_theorem_suite_on(&[zoo::paper_square()], 1, 1).unwrap();
        assert!(s.all_passed(), "{:?}", s.failures);
        assert_eq!(s.headline(), "6/6 theorem checks passed");
        assert!(matches!(
            verify_theorem_suite(1, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn suite_random_instances() {
        let s = verify_theorem_suite(7, 40).unwrap();
        assert!(s.all_passed(), "{:#?}", s.failures);
        assert_eq!(
            s.checks.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
            ["T3.1", "T3.3", "T4.3", "T4.5", "TA.2", "TA.4"]
        );
    }

    #[test]
    fn fuzz_safe_quadratic_single_trial() {
        let q = zoo::diagonal_quadratic(&[1.0, 3.0], &[0.0, 1.0]).unwrap();
        assert!(fuzz_case(&q, &[2.0, -1.0], 1.7 / 3.0, 100, 0, 0)
            .unwrap()
            .is_none());
        assert!(fuzz_convexity(3, 1, EtaMode::SafeRegime)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn fuzz_safe_regime_is_clean() {
        assert!(fuzz_convexity(42, 1000, EtaMode::SafeRegime)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn fuzz_danger_regime_finds_monotone_violations() {
        let canonical = fuzz_case(
            &zoo::huber_counterexample(),
            &[COUNTEREXAMPLE_X0],
            1.9,
            FUZZ_STEPS,
            0,
            0,
        )
        .unwrap()
        .expect("known violation");
        assert_eq!(canonical.first_violation, 0);

        let found = fuzz_convexity(42, 500, EtaMode::DangerRegime).unwrap();
        assert!(!found.is_empty());
        assert!(found.iter().all(|r| r.monotone_decreasing));
        assert!(found
            .iter()
            .all(|r| r.function_id != "quadratic" && !r.function_id.starts_with("quadratic_")));
        let s = summarize_fuzz(42, 500, EtaMode::DangerRegime, &found);
        assert_eq!(s.violating_trials, found.len());
        assert_eq!(
            s.run_length_histogram.iter().sum::<usize>(),
            found.iter().map(|r| r.runs.len()).sum::<usize>()
        );
    }

    #[test]
    fn trials_are_order_independent() {
        let a = fuzz_convexity(5, 300, EtaMode::DangerRegime).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| fuzz_convexity(5, 300, EtaMode::DangerRegime).unwrap());
        assert_eq!(a, b);
    }
}
