//! Gradient flow `x'(t) = −∇f(x(t))`: the piecewise-linear Euler curve through
//! gradient descent iterates, a fixed-step RK4 reference solution, and the
//! uniform Euler error bound.

use std::io::Write;

use crate::descent::{self, Source, Trajectory};
use crate::error::{invalid, precondition, Error, Result};
use crate::io::{csv_writer, fmt_f64};
use crate::linalg;
use crate::zoo::Objective;

/// Largest number of coordinates written as CSV columns.
pub const MAX_CSV_COORDINATES: usize = 8;

// Relative slack used when comparing times against a grid or horizon.
const TIME_SLACK: f64 = 1e-12;

/// Euler approximation `x⁽ᵑ⁾(t) = x_k − (t − kη)∇f(x_k)` with `k = ⌊t/η⌋`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerPath {
    pub base_trajectory: Trajectory,
    pub eta: f64,
}

impl EulerPath {
    /// Last time covered by the underlying iterates.
    pub fn horizon(&self) -> f64 {
        self.base_trajectory.steps() as f64 * self.eta
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        euler_evaluate(self, t)
    }

    /// `f(x⁽ᵑ⁾(t))` at each time.
    pub fn curve_values(&self, f: &Objective, times: &[f64]) -> Result<Vec<f64>> {
        times
            .iter()
            .map(|&t| self.evaluate(t).map(|x| f.value(&x)))
            .collect()
    }
}

/// Generates the iterates behind the Euler curve on `[0, horizon]`, using
/// `⌈horizon/η⌉` steps.
pub fn euler_path(f: &Objective, x0: &[f64], eta: f64, horizon: f64) -> Result<EulerPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {eta}")));
    }
    let steps = ((horizon / eta) * (1.0 - TIME_SLACK)).ceil().max(1.0) as usize;
    let base_trajectory = descent::run(f, x0, eta, steps, Source::EulerFlow)?;
    Ok(EulerPath {
        base_trajectory,
        eta,
    })
}

/// Evaluates the Euler curve. Grid times `nη` return the stored iterate.
pub fn euler_evaluate(path: &EulerPath, t: f64) -> Result<Vec<f64>> {
    let horizon = path.horizon();
    if !(t >= 0.0 && t <= horizon * (1.0 + TIME_SLACK)) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            lo: 0.0,
            hi: horizon,
        });
    }
    let traj = &path.base_trajectory;
    let steps = traj.steps();
    let r = t / path.eta;
    let nearest = r.round();
    if (r - nearest).abs() <= TIME_SLACK * r.max(1.0) {
        return Ok(traj.points[(nearest as usize).min(steps)].clone());
    }
    let k = (r.floor() as usize).min(steps);
    let offset = t - k as f64 * path.eta;
    Ok(linalg::axpy(&traj.points[k], -offset, &traj.gradients[k]))
}

/// Dense reference solution of the gradient flow on the grid `k·h`. For 1-D
/// functions with kinks, the times at which the flow crosses a kink are
/// extra nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    pub step_h: f64,
    pub function_id: String,
}

impl FlowSolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// State at an arbitrary time by cubic Hermite interpolation between
    /// grid nodes (the node derivatives are `−∇f`).
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + TIME_SLACK)) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let last = self.times.len() - 1;
        // nodes are k·h plus any kink-crossing events in between
        let k = self.times.partition_point(|&s| s <= t).clamp(1, last) - 1;
        for j in [k, k + 1] {
            if (t - self.times[j]).abs() <= TIME_SLACK * t.max(self.step_h) {
                return Ok(self.states[j].clone());
            }
        }
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (x0, x1) = (&self.states[k], &self.states[k + 1]);
        let (g0, g1) = (&self.gradients[k], &self.gradients[k + 1]);
        Ok((0..x0.len())
            .map(|i| h00 * x0[i] - h10 * h * g0[i] + h01 * x1[i] - h11 * h * g1[i])
            .collect())
    }

    /// CSV `t,f,grad_norm`, followed by `x0,x1,…` when the dimension is at
    /// most [`MAX_CSV_COORDINATES`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.states[0].len();
        let coords = dim <= MAX_CSV_COORDINATES;
        let mut w = csv_writer(out);
        let mut header: Vec<String> = vec!["t".into(), "f".into(), "grad_norm".into()];
        if coords {
            header.extend((0..dim).map(|i| format!("x{i}")));
        }
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![
                fmt_f64(self.times[k]),
                fmt_f64(self.values[k]),
                fmt_f64(self.grad_norms[k]),
            ];
            if coords {
                row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta with fixed step `h ≤ 0.1/L` on
/// `[0, horizon]`.
///
/// On 1-D functions with kinks the gradient is only Lipschitz at the kink,
/// and a step that straddles one loses accuracy. Such a step is split: a
/// shorter step found by bisection lands exactly on the kink, and the rest
/// of the step continues from there.
pub fn reference_flow(
    f: &Objective,
    x0: &[f64],
    step_h: f64,
    horizon: f64,
) -> Result<FlowSolution> {
    let l = f.lipschitz().ok_or_else(|| {
        Error::Unsupported(format!("`{}` has no finite smoothness constant", f.id()))
    })?;
    f.check_point(x0)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(step_h > 0.0) || step_h > 0.1 / l * (1.0 + TIME_SLACK) {
        return Err(precondition(format!(
            "reference step h = {step_h} must lie in (0, 0.1/L] with L = {l}"
        )));
    }
    let steps = ((horizon / step_h) * (1.0 - TIME_SLACK)).ceil().max(1.0) as usize;
    let kinks = if f.dimension() == 1 {
        f.kinks()
    } else {
        Vec::new()
    };
    let mut sol = FlowSolution {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
        grad_norms: Vec::with_capacity(steps + 1),
        gradients: Vec::with_capacity(steps + 1),
        step_h,
        function_id: f.id(),
    };
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut g = push_node(&mut sol, f, t, x.clone())?;
    for k in 1..=steps {
        let target = k as f64 * step_h;
        loop {
            let h = target - t;
            let next = rk4_step(f, &x, &g, h);
            match kink_event(f, &kinks, &x, &g, &next, h) {
                Some((tau, kink)) => {
                    t += tau;
                    x = vec![kink];
                    g = push_node(&mut sol, f, t, x.clone())?;
                }
                None => {
                    t = target;
                    x = next;
                    g = push_node(&mut sol, f, t, x.clone())?;
                    break;
                }
            }
        }
    }
    Ok(sol)
}

fn push_node(sol: &mut FlowSolution, f: &Objective, t: f64, x: Vec<f64>) -> Result<Vec<f64>> {
    let g = f.gradient(&x);
    let v = f.value(&x);
    if !v.is_finite() || !linalg::all_finite(&g) || !linalg::all_finite(&x) {
        return Err(Error::FlowDivergence { time: t });
    }
    sol.times.push(t);
    sol.values.push(v);
    sol.grad_norms.push(linalg::norm(&g));
    sol.gradients.push(g.clone());
    sol.states.push(x);
    Ok(g)
}

// Smallest sub-step fraction worth splitting off. Closer to either end, the
// straddled part of the step is too short to matter.
const MIN_EVENT_FRACTION: f64 = 1e-9;

/// First kink strictly crossed by the 1-D step `x → next`, with the sub-step
/// `τ ∈ (0, h)` whose RK4 step lands on it.
fn kink_event(
    f: &Objective,
    kinks: &[f64],
    x: &[f64],
    g: &[f64],
    next: &[f64],
    h: f64,
) -> Option<(f64, f64)> {
    let (a, b) = (x.first()?, next.first()?);
    let kink = kinks
        .iter()
        .copied()
        .filter(|k| (a - k) * (b - k) < 0.0)
        .min_by(|p, q| (p - a).abs().total_cmp(&(q - a).abs()))?;
    let side = (a - kink).signum();
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > f64::EPSILON * h {
        let mid = 0.5 * (lo + hi);
        if (rk4_step(f, x, g, mid)[0] - kink) * side > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    (tau > MIN_EVENT_FRACTION * h && tau < (1.0 - MIN_EVENT_FRACTION) * h).then_some((tau, kink))
}

fn rk4_step(f: &Objective, x: &[f64], g1: &[f64], h: f64) -> Vec<f64> {
    let g2 = f.gradient(&linalg::axpy(x, -0.5 * h, g1));
    let g3 = f.gradient(&linalg::axpy(x, -0.5 * h, &g2));
    let g4 = f.gradient(&linalg::axpy(x, -h, &g3));
    (0..x.len())
        .map(|i| x[i] - h / 6.0 * (g1[i] + 2.0 * g2[i] + 2.0 * g3[i] + g4[i]))
        .collect()
}

/// Uniform bound `(Kη/2)·e^{L(R+1)}` on the Euler error over `[0, R]`,
/// valid for `0 < η < 1`.
pub fn euler_error_bound(k: f64, l: f64, eta: f64, r: f64) -> Result<f64> {
    for (name, v) in [("K", k), ("L", l), ("eta", eta), ("R", r)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if eta >= 1.0 {
        return Err(precondition(format!(
            "the Euler bound needs eta < 1, got {eta}"
        )));
    }
    Ok(k * eta / 2.0 * (l * (r + 1.0)).exp())
}

/// `g''(t) = 2⟨∇f(x(t)), H_f(x(t))∇f(x(t))⟩` at each solution time.
pub fn hessian_curvature(f: &Objective, sol: &FlowSolution) -> Result<Vec<f64>> {
    if !f.has_hessian() {
        return Err(Error::Unsupported(format!(
            "`{}` has no Hessian action",
            f.id()
        )));
    }
    Ok(sol
        .states
        .iter()
        .zip(&sol.gradients)
        .map(|(x, g)| {
            let hg = f.hessian_action(x, g).expect("checked above");
            2.0 * linalg::dot(g, &hg)
        })
        .collect())
}

/// Largest distance between the Euler curve and the reference flow over the
/// Euler grid `{nη}` and segment midpoints inside `[0, r]`.
///
/// Returns `(sup_error, time_of_sup)`.
pub fn euler_sup_error(path: &EulerPath, reference: &FlowSolution, r: f64) -> Result<(f64, f64)> {
    let mut best = (0.0, 0.0);
    let mut n = 0usize;
    loop {
        let node = n as f64 * path.eta;
        if node > r * (1.0 + TIME_SLACK) {
            break;
        }
        let mid = node + 0.5 * path.eta;
        for t in [node, mid] {
            if t > r * (1.0 + TIME_SLACK) {
                continue;
            }
            let t = t.min(r);
            let e = linalg::dist(&path.evaluate(t)?, &reference.state_at(t)?);
            if e > best.0 {
                best = (e, t);
            }
        }
        n += 1;
    }
    Ok(best)
}

/// `count` evenly spaced times covering `[0, horizon]`, endpoints included.
pub fn sample_times(horizon: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| horizon * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{abs_plus_relu, diagonal_quadratic, huber_counterexample, standard_zoo};
    use approx::assert_relative_eq;

    fn half_square() -> Objective {
        diagonal_quadratic(&[1.0], &[0.0]).unwrap()
    }

    #[test]
    fn euler_examples() {
        let path = euler_path(&half_square(), &[1.0], 0.1, 1.0).unwrap();
        assert_eq!(path.base_trajectory.steps(), 10);
        assert_eq!(path.base_trajectory.source, Source::EulerFlow);
        assert_relative_eq!(
            path.evaluate(1.0).unwrap()[0],
            0.3486784401,
            epsilon = 1e-12
        );
        assert_eq!(path.evaluate(0.0).unwrap(), vec![1.0]);
        assert_relative_eq!(path.evaluate(0.05).unwrap()[0], 0.95, epsilon = 1e-15);
        assert!(matches!(path.evaluate(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(path.evaluate(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn euler_grid_points_are_exact_iterates() {
        let f = huber_counterexample();
        let path = euler_path(&f, &[3.0], 0.3, 6.0).unwrap();
        for n in 0..=path.base_trajectory.steps() {
            assert_eq!(
                path.evaluate(n as f64 * 0.3).unwrap(),
                path.base_trajectory.points[n]
            );
        }
    }

    #[test]
    fn euler_is_continuous() {
        let f = crate::zoo::default_log_sum_exp();
        let path = euler_path(&f, &[2.0, -1.0], 0.25, 3.0).unwrap();
        for n in 1..12 {
            let t = n as f64 * 0.25;
            let a = path.evaluate(t - 1e-10).unwrap();
            let b = path.evaluate(t).unwrap();
            assert!(linalg::dist(&a, &b) < 1e-8);
        }
    }

    #[test]
    fn reference_examples() {
        let sol = reference_flow(&half_square(), &[1.0], 1e-3, 1.0).unwrap();
        assert!((sol.state_at(1.0).unwrap()[0] - (-1.0_f64).exp()).abs() < 1e-9);
        let f = diagonal_quadratic(&[2.0], &[0.0]).unwrap();
        let sol = reference_flow(&f, &[3.0], 1e-3, 0.5).unwrap();
        assert!((sol.state_at(0.5).unwrap()[0] - 3.0 * (-1.0_f64).exp()).abs() < 1e-8);
        let q = diagonal_quadratic(&[1.0, 3.0], &[-1.0, 6.0]).unwrap();
        let sol = reference_flow(&q, &[1.0, -2.0], 1e-2, 2.0).unwrap();
        assert!(sol.states.iter().all(|s| s == &vec![1.0, -2.0]));
    }

    #[test]
    fn reference_lands_on_kink() {
        // linear piece until x = 1 at t* = x0 − 1, then x = e^{−(t−t*)}
        let f = huber_counterexample();
        let x0 = 2.2674129671326497;
        let t_star = x0 - 1.0;
        let sol = reference_flow(&f, &[x0], 0.01, 5.0).unwrap();
        let exact = |t: f64| {
            if t <= t_star {
                x0 - t
            } else {
                (t_star - t).exp()
            }
        };
        assert!(sol.times.iter().any(|&t| (t - t_star).abs() < 1e-12));
        assert!(sol.times.windows(2).all(|w| w[1] > w[0]));
        for t in sample_times(5.0, 997) {
            let x = sol.state_at(t).unwrap()[0];
            assert!((x - exact(t)).abs() < 1e-10, "t = {t}: {x} vs {}", exact(t));
        }
        let samples: Vec<(f64, f64)> = sol
            .times
            .iter()
            .copied()
            .zip(sol.values.iter().copied())
            .collect();
        assert!(crate::analysis::continuous_curve_convexity(&samples, 1e-9).unwrap());
    }

    #[test]
    fn reference_matches_closed_form_between_nodes() {
        let q = diagonal_quadratic(&[1.0, 0.2, 4.0], &[0.5, 0.0, -1.0]).unwrap();
        let exact = q.analytic().unwrap();
        let x0 = [2.0, -1.0, 0.5];
        let sol = reference_flow(&q, &x0, 0.01, 3.0).unwrap();
        for t in [0.0, 0.013, 0.5, 1.2345, 3.0] {
            let e = linalg::dist(&sol.state_at(t).unwrap(), &exact.flow_state(&x0, t));
            assert!(e < 1e-8, "t = {t}: {e}");
        }
        assert_eq!(sol.times[0], 0.0);
        assert!(sol.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(sol.states[0], x0.to_vec());
    }

    #[test]
    fn reference_preconditions() {
        let f = diagonal_quadratic(&[2.0], &[0.0]).unwrap();
        assert!(matches!(
            reference_flow(&f, &[1.0], 0.06, 1.0),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            reference_flow(&abs_plus_relu(), &[1.0], 1e-3, 1.0),
            Err(Error::Unsupported(_))
        ));
        assert!(reference_flow(&f, &[1.0], 0.01, 0.0).is_err());
    }

    #[test]
    fn error_bound_examples() {
        assert_relative_eq!(
            euler_error_bound(1.0, 1.0, 0.1, 1.0).unwrap(),
            0.3694528049,
            epsilon = 1e-10
        );
        assert!(euler_error_bound(1.0, 1.0, 1e-12, 1.0).unwrap() < 1e-11);
        assert_relative_eq!(
            euler_error_bound(2.0, 0.5, 0.2, 3.0).unwrap(),
            1.4778112198,
            epsilon = 1e-10
        );
        assert!(matches!(
            euler_error_bound(1.0, 1.0, 1.0, 1.0),
            Err(Error::Precondition(_))
        ));
        assert!(euler_error_bound(0.0, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn curvature_examples() {
        let sol = reference_flow(&half_square(), &[1.0], 1e-3, 0.01).unwrap();
        assert_eq!(hessian_curvature(&half_square(), &sol).unwrap()[0], 2.0);
        let f = diagonal_quadratic(&[2.0], &[0.0]).unwrap();
        let sol = reference_flow(&f, &[3.0], 1e-3, 0.01).unwrap();
        assert_eq!(hessian_curvature(&f, &sol).unwrap()[0], 144.0);
        let sol = reference_flow(&f, &[0.0], 1e-3, 0.01).unwrap();
        assert!(hessian_curvature(&f, &sol)
            .unwrap()
            .iter()
            .all(|c| *c == 0.0));
    }

    #[test]
    fn flow_value_identity() {
        // d/dt f(x(t)) = −‖∇f(x(t))‖²
        for f in [
            half_square(),
            crate::zoo::paper_square(),
            crate::zoo::default_log_sum_exp(),
            diagonal_quadratic(&[1.0, 0.1, 4.0], &[0.5, 0.0, -1.0]).unwrap(),
        ] {
            let l = f.lipschitz().unwrap();
            let h = 1e-3 / l;
            let x0 = vec![2.0; f.dimension()];
            let sol = reference_flow(&f, &x0, h, 3.0 / l).unwrap();
            for k in 1..sol.times.len() - 1 {
                let slope = (sol.values[k + 1] - sol.values[k - 1]) / (2.0 * h);
                let expected = -sol.grad_norms[k] * sol.grad_norms[k];
                assert!(
                    (slope - expected).abs() <= 1e-4 * expected.abs() + 1e-12,
                    "{f} k={k}: {slope} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn euler_converges_to_flow() {
        // sup error below the bound with K = ‖∇f(x₀)‖, and roughly halves
        // with η
        let q = diagonal_quadratic(&[1.0, 0.5], &[0.2, -0.1]).unwrap();
        let x0 = [1.0, -2.0];
        let l = q.lipschitz().unwrap();
        let k = linalg::norm(&q.gradient(&x0));
        let r = 1.0;
        let sol = reference_flow(&q, &x0, 1e-3, r + 0.2).unwrap();
        let mut prev: Option<f64> = None;
        for eta in [0.1, 0.05, 0.025, 0.0125] {
            let path = euler_path(&q, &x0, eta, r).unwrap();
            let (err, _) = euler_sup_error(&path, &sol, r).unwrap();
            assert!(err < euler_error_bound(k, l, eta, r).unwrap());
            if let Some(p) = prev {
                let ratio = err / p;
                assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn euler_values_converge_pointwise() {
        let f = crate::zoo::default_log_sum_exp();
        let x0 = [1.5, 2.0];
        let sol = reference_flow(&f, &x0, 1e-3, 2.0).unwrap();
        let times: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64 - 0.0137).collect();
        let exact: Vec<f64> = times
            .iter()
            .map(|&t| f.value(&sol.state_at(t).unwrap()))
            .collect();
        let mut prev = vec![f64::INFINITY; times.len()];
        for eta in [0.1, 0.05, 0.025, 0.0125] {
            let path = euler_path(&f, &x0, eta, 2.0).unwrap();
            let vals = path.curve_values(&f, &times).unwrap();
            for i in 0..times.len() {
                let e = (vals[i] - exact[i]).abs();
                assert!(e < prev[i], "t = {}", times[i]);
                prev[i] = e;
            }
        }
    }

    #[test]
    fn flow_csv_columns() {
        let f = standard_zoo()[4].clone();
        let sol = reference_flow(&f, &[1.0, 1.0, 1.0], 0.01, 0.05).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,f,grad_norm,x0,x1,x2"));
        assert_eq!(text.lines().count(), sol.times.len() + 1);
    }
}
