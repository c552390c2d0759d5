//! Verdicts on optimization curves.
//!
//! A sequence `a₀, a₁, …` is convex when its piecewise-linear interpolation
//! is convex, which is the same as the per-step progress `aₙ − aₙ₊₁` being
//! non-increasing, i.e. every second difference `aₙ − 2aₙ₊₁ + aₙ₊₂ ≥ 0`.
//!
//! Tolerances follow one convention: a relative `tol₀` (default
//! [`DEFAULT_TOL`]) is turned into an absolute threshold
//! `tol₀·(1 + max|value|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descent::{self, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::zoo::Objective;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Progress below `TAIL_EPS_FACTOR·ε·(1+|aₙ|)` counts as converged.
const TAIL_EPS_FACTOR: f64 = 1e3;

/// Smallest gap between sampled interpolation abscissae.
const MIN_SAMPLE_GAP: f64 = 1e-3;

/// `tol₀·(1 + max|v|)`
pub fn scaled_tolerance(values: &[f64], tol0: f64) -> f64 {
    tol0 * (1.0 + linalg::max_abs(values))
}

/// A maximal block of consecutive second-difference violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRun {
    pub start: usize,
    pub length: usize,
}

/// Convexity part of a [`CurveReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityVerdict {
    pub convex: bool,
    pub first_violation: Option<usize>,
    /// Every second difference `aₙ − 2aₙ₊₁ + aₙ₊₂`, checked or not.
    pub second_differences: Vec<f64>,
    pub runs: Vec<ViolationRun>,
    /// First index whose progress fell to round-off level; second differences
    /// from here on are not checked.
    pub converged_from: Option<usize>,
    pub tolerance: f64,
}

/// Full set of verdicts for one curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub monotone_decreasing: bool,
    pub convex: bool,
    pub grad_norm_monotone: bool,
    pub first_convexity_violation: Option<usize>,
    pub violation_magnitudes: Vec<f64>,
    pub consecutive_violation_runs: Vec<ViolationRun>,
    pub tolerance_used: f64,
}

/// Value of the piecewise-linear interpolation of `a` at `t ∈ [0, len−1]`.
pub fn interpolate_sequence(a: &[f64], t: f64) -> Result<f64> {
    let hi = a.len() as f64 - 1.0;
    if a.is_empty() || !(t >= 0.0 && t <= hi) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            lo: 0.0,
            hi: hi.max(0.0),
        });
    }
    let k = t.floor() as usize;
    if k + 1 >= a.len() {
        return Ok(a[a.len() - 1]);
    }
    Ok(a[k] + (t - k as f64) * (a[k + 1] - a[k]))
}

fn converged_from(a: &[f64]) -> Option<usize> {
    a.windows(2)
        .position(|w| (w[0] - w[1]).abs() < TAIL_EPS_FACTOR * f64::EPSILON * (1.0 + w[0].abs()))
}

/// Second-difference convexity test with absolute tolerance `tol`.
///
/// Sequences shorter than three are vacuously convex.
pub fn is_convex_sequence(a: &[f64], tol: f64) -> ConvexityVerdict {
    let second_differences: Vec<f64> = a.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    let converged = converged_from(a);
    let checked = converged
        .unwrap_or(usize::MAX)
        .min(second_differences.len());
    let mut runs: Vec<ViolationRun> = Vec::new();
    for (n, &s) in second_differences[..checked].iter().enumerate() {
        if s < -tol {
            match runs.last_mut() {
                Some(run) if run.start + run.length == n => run.length += 1,
                _ => runs.push(ViolationRun {
                    start: n,
                    length: 1,
                }),
            }
        }
    }
    ConvexityVerdict {
        convex: runs.is_empty(),
        first_violation: runs.first().map(|r| r.start),
        second_differences,
        runs,
        converged_from: converged,
        tolerance: tol,
    }
}

/// Checks that the interpolation-based definition (slopes over sampled
/// triples `s < u < t` are non-decreasing) agrees with
/// [`is_convex_sequence`].
///
/// Besides `samples` uniform triples, one triple straddling each interior
/// node is tested: an isolated violation sits on a single kink and would be
/// missed by uniform sampling alone.
pub fn characterization_equivalence(a: &[f64], samples: usize) -> bool {
    let tol = scaled_tolerance(a, DEFAULT_TOL);
    let verdict = is_convex_sequence(a, tol);
    if a.len() < 3 {
        return verdict.convex;
    }
    // same domain as the second-difference check
    let last = match verdict.converged_from {
        Some(c) => (c + 1).min(a.len() - 1),
        None => a.len() - 1,
    };
    let slope_ok = |s: f64, u: f64, t: f64| -> bool {
        let g = |x: f64| interpolate_sequence(a, x).expect("in range");
        let left = (g(u) - g(s)) / (u - s);
        let right = (g(t) - g(u)) / (t - u);
        right >= left - tol
    };
    let mut interp_convex = (1..last).all(|n| {
        let n = n as f64;
        slope_ok(n - 0.5, n, n + 0.5)
    });
    if last >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(a.len() as u64);
        let span = last as f64;
        let mut drawn = 0;
        while drawn < samples && interp_convex {
            let mut v = [
                rng.random_range(0.0..=span),
                rng.random_range(0.0..=span),
                rng.random_range(0.0..=span),
            ];
            v.sort_by(f64::total_cmp);
            if v[1] - v[0] < MIN_SAMPLE_GAP || v[2] - v[1] < MIN_SAMPLE_GAP {
                continue;
            }
            drawn += 1;
            interp_convex = slope_ok(v[0], v[1], v[2]);
        }
    }
    interp_convex == verdict.convex
}

/// `grad_norms[n+1] ≤ grad_norms[n] + tol` for every `n`.
pub fn gradient_norm_monotone(traj: &Trajectory, tol: f64) -> bool {
    is_non_increasing(&traj.grad_norms, tol)
}

pub fn is_non_increasing(seq: &[f64], tol: f64) -> bool {
    seq.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Every verdict for a trajectory, using the scaled tolerance convention.
pub fn analyze_trajectory(traj: &Trajectory, tol0: f64) -> CurveReport {
    let tol = scaled_tolerance(&traj.values, tol0);
    let verdict = is_convex_sequence(&traj.values, tol);
    CurveReport {
        monotone_decreasing: is_non_increasing(&traj.values, tol),
        convex: verdict.convex,
        grad_norm_monotone: gradient_norm_monotone(traj, scaled_tolerance(&traj.grad_norms, tol0)),
        first_convexity_violation: verdict.first_violation,
        violation_magnitudes: verdict.second_differences,
        consecutive_violation_runs: verdict.runs,
        tolerance_used: tol,
    }
}

/// Both sides of the two-step certificate
/// `f(x₂) − 2f(x₁) + f(x₀) ≥ (7/(8L) − η/2)‖∇f(x₁)−∇f(x₀)‖² + (1/(2L))‖∇f(x₂) − ½∇f(x₁) − ½∇f(x₀)‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lhs: f64,
    pub rhs: f64,
    /// Magnitude of the terms involved, for relative comparisons.
    pub scale: f64,
}

impl Certificate {
    /// `lhs ≥ rhs − tol₀·scale`
    pub fn holds(&self, tol0: f64) -> bool {
        self.lhs >= self.rhs - tol0 * self.scale
    }
}

pub fn certificate_gap(f: &Objective, x0: &[f64], eta: f64) -> Result<Certificate> {
    let l = f.lipschitz().ok_or_else(|| {
        Error::Unsupported(format!("`{}` has no finite smoothness constant", f.id()))
    })?;
    let t = descent::gd_run(f, x0, eta, 2)?;
    let (v, g) = (&t.values, &t.gradients);
    let lhs = v[2] - 2.0 * v[1] + v[0];
    let d10 = linalg::sub(&g[1], &g[0]);
    let mix: Vec<f64> = (0..g[0].len())
        .map(|i| g[2][i] - 0.5 * g[1][i] - 0.5 * g[0][i])
        .collect();
    let rhs = (7.0 / (8.0 * l) - eta / 2.0) * linalg::dot(&d10, &d10)
        + linalg::dot(&mix, &mix) / (2.0 * l);
    let grad_sq: f64 = g.iter().map(|gi| linalg::dot(gi, gi)).sum();
    let scale = 1.0 + v.iter().map(|x| x.abs()).sum::<f64>() + grad_sq / l;
    Ok(Certificate { lhs, rhs, scale })
}

/// Convexity of a sampled curve `t ↦ v(t)`: divided-difference slopes must
/// be non-decreasing.
///
/// Slope jumps are compared in value units, `(sᵢ₊₁ − sᵢ)·min(Δtᵢ, Δtᵢ₊₁)`,
/// against `tol·(1 + max|v|)`.
pub fn continuous_curve_convexity(samples: &[(f64, f64)], tol: f64) -> Result<bool> {
    if samples.len() < 3 {
        return Err(invalid("curve convexity needs at least three samples"));
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid(
            "sample times must be strictly increasing (no duplicates)",
        ));
    }
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let threshold = scaled_tolerance(&values, tol);
    let ok = samples.windows(3).all(|w| {
        let (dt0, dt1) = (w[1].0 - w[0].0, w[2].0 - w[1].0);
        let s0 = (w[1].1 - w[0].1) / dt0;
        let s1 = (w[2].1 - w[1].1) / dt1;
        (s1 - s0) * dt0.min(dt1) >= -threshold
    });
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{diagonal_quadratic, huber_counterexample, paper_square};
    use approx::assert_relative_eq;

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate_sequence(&[4.0, 1.0, 0.0], 0.5).unwrap(), 2.5);
        assert_eq!(interpolate_sequence(&[4.0, 1.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(interpolate_sequence(&[4.0, 1.0, 0.0], 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            interpolate_sequence(&[9.0, 5.76, 3.6864], 1.25).unwrap(),
            5.2416,
            epsilon = 1e-14
        );
        assert!(matches!(
            interpolate_sequence(&[4.0, 1.0, 0.0], 2.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(interpolate_sequence(&[4.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn convexity_examples() {
        assert!(is_convex_sequence(&[9.0, 5.76, 3.6864], 1e-10).convex);

        let v = is_convex_sequence(&[1.62, 1.12, 0.0392], 1e-10);
        assert!(!v.convex);
        assert_eq!(v.first_violation, Some(0));
        assert_relative_eq!(v.second_differences[0], -0.5808, epsilon = 1e-14);
        assert_eq!(
            v.runs,
            vec![ViolationRun {
                start: 0,
                length: 1
            }]
        );

        let v = is_convex_sequence(&[0.25, 1.5, 1.25], 1e-10);
        assert!(!v.convex);
        assert!(!is_non_increasing(&[0.25, 1.5, 1.25], 1e-10));
    }

    #[test]
    fn short_sequences_are_vacuously_convex() {
        assert!(is_convex_sequence(&[], 0.0).convex);
        assert!(is_convex_sequence(&[3.0, 5.0], 0.0).convex);
    }

    #[test]
    fn runs_are_grouped() {
        // progress 1, 2, 3, 1, 2 gives second differences -1, -1, +2, -1
        let a = [0.0, -1.0, -3.0, -6.0, -7.0, -9.0];
        let v = is_convex_sequence(&a, 1e-12);
        assert_eq!(
            v.runs,
            vec![
                ViolationRun {
                    start: 0,
                    length: 2
                },
                ViolationRun {
                    start: 3,
                    length: 1
                }
            ]
        );
        assert_eq!(v.first_violation, Some(0));
        assert_eq!(v.converged_from, None);
    }

    #[test]
    fn converged_tail_is_not_checked() {
        let a = [10.0, 5.0, 2.5, 1.0, 1.0, 1.0 - 1e-15, 1.0 - 1e-15];
        let v = is_convex_sequence(&a, 0.0);
        assert_eq!(v.converged_from, Some(3));
        assert!(v.convex);
        // same noise before convergence is reported
        let b = [10.0, 5.0, 4.0, 1.0];
        assert!(!is_convex_sequence(&b, 0.0).convex);
    }

    #[test]
    fn equivalence_examples() {
        assert!(characterization_equivalence(&[9.0, 5.76, 3.6864], 100));
        assert!(characterization_equivalence(&[1.62, 1.12, 0.0392], 100));
        assert!(characterization_equivalence(&[1.0, 1.0, 1.0, 1.0], 100));
        assert!(characterization_equivalence(&[0.25, 1.5, 1.25], 100));
    }

    #[test]
    fn gradient_norm_examples() {
        let t = descent::gd_run(&paper_square(), &[3.0], 0.1, 10).unwrap();
        assert!(gradient_norm_monotone(&t, 0.0));
        for (n, g) in t.grad_norms.iter().enumerate() {
            assert_relative_eq!(*g, 6.0 * 0.8_f64.powi(n as i32), epsilon = 1e-12);
        }
        let half = diagonal_quadratic(&[1.0], &[0.0]).unwrap();
        let t = descent::gd_run(&half, &[1.0], 2.0, 10).unwrap();
        assert!(gradient_norm_monotone(&t, 1e-12));
        assert!(t.grad_norms.iter().all(|g| (g - 1.0).abs() <= 1e-12));
        let t = descent::gd_run(&half, &[0.0], 1.0, 5).unwrap();
        assert!(gradient_norm_monotone(&t, 0.0));
    }

    #[test]
    fn certificate_examples() {
        let half = diagonal_quadratic(&[1.0], &[0.0]).unwrap();
        let c = certificate_gap(&half, &[1.0], 1.0).unwrap();
        assert_relative_eq!(c.lhs, 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.rhs, 0.5, epsilon = 1e-15);

        let c = certificate_gap(&paper_square(), &[3.0], 0.1).unwrap();
        assert_relative_eq!(c.lhs, 1.1664, epsilon = 1e-12);
        assert_relative_eq!(c.rhs, 1.1664, epsilon = 1e-12);

        let c = certificate_gap(&huber_counterexample(), &[0.0], 1.3).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));

        assert!(matches!(
            certificate_gap(&crate::zoo::abs_plus_relu(), &[1.0], 0.5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn curve_convexity_examples() {
        let exp: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.025;
                (t, 0.5 * (-2.0 * t).exp())
            })
            .collect();
        assert!(continuous_curve_convexity(&exp, 1e-9).unwrap());
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0)).collect();
        assert!(continuous_curve_convexity(&flat, 0.0).unwrap());
        let concave: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, -t * t)
            })
            .collect();
        assert!(!continuous_curve_convexity(&concave, 1e-9).unwrap());
        let dup = [(0.0, 1.0), (1.0, 0.5), (1.0, 0.4)];
        assert!(matches!(
            continuous_curve_convexity(&dup, 1e-9),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn report_for_nonsmooth_demo() {
        let t = descent::gd_run(&crate::zoo::abs_plus_relu(), &[-0.25], 1.0, 2).unwrap();
        let r = analyze_trajectory(&t, DEFAULT_TOL);
        assert!(!r.monotone_decreasing);
        assert!(!r.convex);
        assert_eq!(r.first_convexity_violation, Some(0));
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "monotone_decreasing",
            "convex",
            "grad_norm_monotone",
            "first_convexity_violation",
            "violation_magnitudes",
            "consecutive_violation_runs",
            "tolerance_used",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
