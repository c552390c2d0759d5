//! Constant step-size gradient descent with per-step telemetry.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{csv_writer, fmt_f64};
use crate::linalg;
use crate::zoo::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    GradientDescent,
    EulerFlow,
}

/// Iterates `x₀…x_N` with the value and gradient recorded at generation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// `∇f(points[n])`, kept so downstream checks never re-evaluate `f`.
    pub gradients: Vec<Vec<f64>>,
    pub step_size: f64,
    pub source: Source,
    pub function_id: String,
}

/// Sidecar written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub function_id: String,
    pub eta: f64,
    pub x0: Vec<f64>,
    pub source: Source,
    pub steps: usize,
}

impl Trajectory {
    /// Number of steps `N` (the lists hold `N + 1` entries).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn x0(&self) -> &[f64] {
        &self.points[0]
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            function_id: self.function_id.clone(),
            eta: self.step_size,
            x0: self.x0().to_vec(),
            source: self.source,
            steps: self.steps(),
        }
    }

    /// CSV with header `n,f,grad_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["n", "f", "grad_norm"])?;
        for (n, (v, g)) in self.values.iter().zip(&self.grad_norms).enumerate() {
            w.write_record([n.to_string(), fmt_f64(*v), fmt_f64(*g)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "step size must be positive and finite, got {eta}"
        )))
    }
}

/// `x − η∇f(x)`
pub fn gd_step(f: &Objective, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    f.check_point(x)?;
    Ok(linalg::axpy(x, -eta, &f.gradient(x)))
}

/// Runs exactly `steps` gradient descent steps from `x0`.
///
/// A non-finite iterate, value or gradient aborts with
/// [`Error::Divergence`] carrying the valid prefix.
pub fn gd_run(f: &Objective, x0: &[f64], eta: f64, steps: usize) -> Result<Trajectory> {
    run(f, x0, eta, steps, Source::GradientDescent)
}

pub(crate) fn run(
    f: &Objective,
    x0: &[f64],
    eta: f64,
    steps: usize,
    source: Source,
) -> Result<Trajectory> {
    check_eta(eta)?;
    f.check_point(x0)?;
    if !linalg::all_finite(x0) {
        return Err(invalid("initial point must be finite"));
    }
    let g0 = f.gradient(x0);
    let v0 = f.value(x0);
    if !v0.is_finite() || !linalg::all_finite(&g0) {
        return Err(invalid("objective is not finite at the initial point"));
    }
    let mut traj = Trajectory {
        points: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
        grad_norms: Vec::with_capacity(steps + 1),
        gradients: Vec::with_capacity(steps + 1),
        step_size: eta,
        source,
        function_id: f.id(),
    };
    traj.grad_norms.push(linalg::norm(&g0));
    traj.points.push(x0.to_vec());
    traj.values.push(v0);
    traj.gradients.push(g0);
    for n in 0..steps {
        let x = linalg::axpy(&traj.points[n], -eta, &traj.gradients[n]);
        let (v, g) = if linalg::all_finite(&x) {
            (f.value(&x), f.gradient(&x))
        } else {
            (f64::NAN, Vec::new())
        };
        let gn = linalg::norm(&g);
        if !v.is_finite() || !linalg::all_finite(&g) || !gn.is_finite() {
            return Err(Error::Divergence {
                last_valid: n,
                partial: Box::new(traj),
            });
        }
        traj.points.push(x);
        traj.values.push(v);
        traj.grad_norms.push(gn);
        traj.gradients.push(g);
    }
    Ok(traj)
}
