//! Command dispatch behind the `optcurve` binary.
//!
//! An [`ExperimentConfig`] names one command plus its parameters. It can be
//! read from and written to a flat `key=value` file, and [`dispatch`] runs it,
//! writes the artifacts into the output directory and returns a verdict.
//! Artifacts never contain timestamps, paths or thread counts, so the same
//! config gives byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::analysis::{self, DEFAULT_TOL};
use crate::descent;
use crate::error::{Error, Result};
use crate::experiments::{
    self, EtaMode, CONVEX_REGIME, FLOW_HORIZON, FLOW_STEP, FLOW_TOL, STABLE_REGIME,
};
use crate::flow;
use crate::io::{csv_writer, fmt_f64, write_json, write_json_lines};
use crate::linalg;
use crate::zoo::{self, Objective};

pub const DEFAULT_OUT: &str = "optcurve-out";
pub const DEFAULT_GD_STEPS: usize = 100;
pub const DEFAULT_SCAN_GRID: usize = 50;
pub const DEFAULT_SCAN_STEPS: usize = 10;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_VERIFY_TRIALS: usize = 100;
pub const DEFAULT_FUZZ_TRIALS: usize = 1000;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    CheckFailure = 1,
    UsageError = 2,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

impl Error {
    /// Exit status for an error that stopped a command.
    pub fn status(&self) -> Status {
        match self {
            Error::CheckFailed(_) | Error::Divergence { .. } | Error::FlowDivergence { .. } => {
                Status::CheckFailure
            }
            _ => Status::UsageError,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    RunGd,
    RunFlow,
    Scan,
    Counterexample,
    Verify,
    Fuzz,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::RunGd,
        Command::RunFlow,
        Command::Scan,
        Command::Counterexample,
        Command::Verify,
        Command::Fuzz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::RunGd => "run-gd",
            Command::RunFlow => "run-flow",
            Command::Scan => "scan",
            Command::Counterexample => "counterexample",
            Command::Verify => "verify",
            Command::Fuzz => "fuzz",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

impl EtaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EtaMode::SafeRegime => "safe",
            EtaMode::DangerRegime => "danger",
        }
    }
}

impl FromStr for EtaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(EtaMode::SafeRegime),
            "danger" => Ok(EtaMode::DangerRegime),
            _ => Err(Error::Config(format!(
                "mode must be `safe` or `danger`, got `{s}`"
            ))),
        }
    }
}

/// Parameters of one CLI run. Unset fields fall back to per-command defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(rename = "fn", skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "ser_mode")]
    pub mode: Option<EtaMode>,
    /// Output directory. Not echoed into artifacts.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

fn ser_mode<S: serde::Serializer>(
    mode: &Option<EtaMode>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match mode {
        Some(m) => s.serialize_str(m.as_str()),
        None => s.serialize_none(),
    }
}

const KEYS: [&str; 14] = [
    "command", "fn", "x0", "eta", "eta_min", "eta_max", "steps", "horizon", "seed", "trials",
    "grid", "mode", "out", "tol",
];

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` as {key}")))
}

/// Comma-separated coordinates, e.g. `1.5` or `1,-2`.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    let point: Vec<f64> = s
        .split(',')
        .map(|p| parse_field::<f64>("x0", p))
        .collect::<Result<_>>()?;
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("x0 must be finite, got `{s}`")));
    }
    Ok(point)
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        ExperimentConfig {
            command,
            function: None,
            x0: None,
            eta: None,
            eta_min: None,
            eta_max: None,
            steps: None,
            horizon: None,
            seed: None,
            trials: None,
            grid: None,
            mode: None,
            out: None,
            tol: None,
        }
    }

    /// Sets one field from its file representation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "command" => self.command = value.trim().parse()?,
            "fn" => self.function = Some(value.trim().to_string()),
            "x0" => self.x0 = Some(parse_point(value)?),
            "eta" => self.eta = Some(parse_field(key, value)?),
            "eta_min" => self.eta_min = Some(parse_field(key, value)?),
            "eta_max" => self.eta_max = Some(parse_field(key, value)?),
            "steps" => self.steps = Some(parse_field(key, value)?),
            "horizon" => self.horizon = Some(parse_field(key, value)?),
            "seed" => self.seed = Some(parse_field(key, value)?),
            "trials" => self.trials = Some(parse_field(key, value)?),
            "grid" => self.grid = Some(parse_field(key, value)?),
            "mode" => self.mode = Some(value.trim().parse()?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "tol" => self.tol = Some(parse_field(key, value)?),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; a repeated key is an error.
    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            if pairs
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{}`",
                    i + 1,
                    k.trim()
                )));
            }
        }
        let command = pairs
            .remove("command")
            .ok_or_else(|| Error::Config("missing key `command`".into()))?;
        let mut cfg = ExperimentConfig::new(command.parse()?);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_file_str(&fs::read_to_string(path)?)
    }

    /// `key=value` lines in a fixed key order, numbers in shortest
    /// round-trip form.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![("command", self.command.to_string())];
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                e.push((k, v));
            }
        };
        push("fn", self.function.clone());
        push("x0", self.x0.as_deref().map(fmt_point));
        push("eta", self.eta.map(fmt_f64));
        push("eta_min", self.eta_min.map(fmt_f64));
        push("eta_max", self.eta_max.map(fmt_f64));
        push("steps", self.steps.map(|v| v.to_string()));
        push("horizon", self.horizon.map(fmt_f64));
        push("seed", self.seed.map(|v| v.to_string()));
        push("trials", self.trials.map(|v| v.to_string()));
        push("grid", self.grid.map(|v| v.to_string()));
        push("mode", self.mode.map(|m| m.as_str().to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("tol", self.tol.map(fmt_f64));
        debug_assert!(e.iter().all(|(k, _)| KEYS.contains(k)));
        e
    }

    /// Copies every field set in `other` over this config. The command must
    /// agree.
    pub fn overlay(&mut self, other: &ExperimentConfig) -> Result<()> {
        if other.command != self.command {
            return Err(Error::Config(format!(
                "config file is for `{}` but `{}` was requested",
                self.command, other.command
            )));
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            function, x0, eta, eta_min, eta_max, steps, horizon, seed, trials, grid, mode, out, tol
        );
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn objective(&self) -> Result<Objective> {
        let spec = self
            .function
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{}` needs --fn", self.command)))?;
        zoo::parse_objective(spec)
    }

    fn require<T: Copy>(&self, v: Option<T>, flag: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("`{}` needs --{flag}", self.command)))
    }

    fn x0_for(&self, f: &Objective) -> Result<Vec<f64>> {
        let x0 = self
            .x0
            .clone()
            .ok_or_else(|| Error::Config(format!("`{}` needs --x0", self.command)))?;
        if x0.len() != f.dimension() {
            return Err(Error::Precondition(format!(
                "x0 has {} coordinates but `{}` has dimension {}",
                x0.len(),
                f.id(),
                f.dimension()
            )));
        }
        Ok(x0)
    }

    /// Checks field ranges that do not depend on the function.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(Error::Precondition(format!(
                "{name} must be positive and finite, got {v}"
            ))),
            _ => Ok(()),
        };
        positive("eta", self.eta)?;
        positive("eta_min", self.eta_min)?;
        positive("eta_max", self.eta_max)?;
        positive("horizon", self.horizon)?;
        positive("tol", self.tol)?;
        for (name, v) in [("steps", self.steps), ("trials", self.trials)] {
            if v == Some(0) {
                return Err(Error::Precondition(format!("{name} must be at least 1")));
            }
        }
        if matches!(self.grid, Some(g) if g < 2) {
            return Err(Error::Precondition("grid must be at least 2".into()));
        }
        if self.eta_min.is_some() != self.eta_max.is_some() {
            return Err(Error::Config("--eta-min and --eta-max go together".into()));
        }
        if let (Some(lo), Some(hi)) = (self.eta_min, self.eta_max) {
            if lo >= hi {
                return Err(Error::Precondition(format!(
                    "eta_min {lo} must be below eta_max {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of a dispatched command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    /// One-paragraph verdict.
    pub summary: String,
    /// Artifact file names inside the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Tolerances {
    sequence_tol0: f64,
    flow_tol: f64,
    scan_tol0: f64,
    certificate_tol0: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    artifact: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    tolerances: Tolerances,
    outputs: &'a [String],
    status: i32,
}

/// Runs the configured command, writes its artifacts plus `metadata.json`
/// and `config.txt` into the output directory, and reports the verdict.
///
/// Usage problems surface as `Err`; their [`Error::status`] is
/// [`Status::UsageError`].
pub fn dispatch(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let out = config.out_dir();
    // everything is computed before the directory is touched, so a usage
    // error leaves no partial artifacts behind
    let run = match config.command {
        Command::RunGd => run_gd(config)?,
        Command::RunFlow => run_flow(config)?,
        Command::Scan => run_scan(config)?,
        Command::Counterexample => run_counterexample(config)?,
        Command::Verify => run_verify(config)?,
        Command::Fuzz => run_fuzz(config)?,
    };
    fs::create_dir_all(&out)?;
    let mut artifacts = Vec::new();
    for (name, bytes) in &run.files {
        fs::write(out.join(name), bytes)?;
        artifacts.push(name.clone());
    }
    let mut echo = config.clone();
    echo.out = None;
    fs::write(out.join("config.txt"), echo.to_file_string())?;
    artifacts.push("config.txt".into());
    artifacts.push("metadata.json".into());
    let tol = config.tol;
    write_json(
        &out.join("metadata.json"),
        &Metadata {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config: &echo,
            tolerances: Tolerances {
                sequence_tol0: tol.unwrap_or(DEFAULT_TOL),
                flow_tol: tol.unwrap_or(FLOW_TOL),
                scan_tol0: DEFAULT_TOL,
                certificate_tol0: DEFAULT_TOL,
            },
            outputs: &artifacts,
            status: run.status.code(),
        },
    )?;
    Ok(Outcome {
        status: run.status,
        summary: run.summary,
        artifacts,
    })
}

struct Run {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
    status: Status,
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    Ok(crate::io::to_json_string(v)?.into_bytes())
}

fn pass_or_fail(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::CheckFailure
    }
}

#[derive(Serialize)]
struct GdReport<'a> {
    meta: descent::TrajectoryMeta,
    diverged_after: Option<usize>,
    report: &'a analysis::CurveReport,
    expect_convex: bool,
    expect_grad_monotone: bool,
}

fn run_gd(c: &ExperimentConfig) -> Result<Run> {
    let f = c.objective()?;
    let x0 = c.x0_for(&f)?;
    let eta = c.require(c.eta, "eta")?;
    let steps = c.steps.unwrap_or(DEFAULT_GD_STEPS);
    let tol0 = c.tol.unwrap_or(DEFAULT_TOL);
    let (traj, diverged_after) = match descent::gd_run(&f, &x0, eta, steps) {
        Ok(t) => (t, None),
        Err(Error::Divergence {
            last_valid,
            partial,
        }) => (*partial, Some(last_valid)),
        Err(e) => return Err(e),
    };
    let report = analysis::analyze_trajectory(&traj, tol0);
    let l = f.lipschitz();
    let expect_convex = matches!(l, Some(l) if eta <= CONVEX_REGIME / l);
    let expect_grad_monotone = matches!(l, Some(l) if eta <= STABLE_REGIME / l);
    let ok = diverged_after.is_none()
        && (!expect_convex || report.convex)
        && (!expect_grad_monotone || report.grad_norm_monotone);

    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let json = json_bytes(&GdReport {
        meta: traj.meta(),
        diverged_after,
        report: &report,
        expect_convex,
        expect_grad_monotone,
    })?;
    let mut summary = format!(
        "gradient descent on {} from x0 = [{}] with eta = {} for {} steps: f went from {} to {}; \
         monotone = {}, convex = {}, gradient norm monotone = {}",
        f.id(),
        fmt_point(&x0),
        fmt_f64(eta),
        traj.steps(),
        fmt_f64(traj.values[0]),
        fmt_f64(*traj.values.last().unwrap()),
        report.monotone_decreasing,
        report.convex,
        report.grad_norm_monotone
    );
    if let Some(n) = report.first_convexity_violation {
        summary.push_str(&format!(" (first second-difference violation at n = {n})"));
    }
    if let Some(n) = diverged_after {
        summary.push_str(&format!("; diverged after step {n}"));
    }
    if !ok {
        summary.push_str("; CHECK FAILED: a property guaranteed at this step size did not hold");
    }
    summary.push('.');
    Ok(Run {
        files: vec![("trajectory.csv".into(), csv), ("report.json".into(), json)],
        summary,
        status: pass_or_fail(ok),
    })
}

#[derive(Serialize)]
struct EulerSummary {
    eta: f64,
    steps: usize,
    curve_convex: bool,
    expect_convex: bool,
    sup_error: f64,
    sup_error_at: f64,
    error_bound: Option<f64>,
}

#[derive(Serialize)]
struct FlowReport {
    function_id: String,
    x0: Vec<f64>,
    horizon: f64,
    step_h: f64,
    curve_convex: bool,
    grad_norm_monotone: bool,
    final_value: f64,
    euler: Option<EulerSummary>,
}

fn run_flow(c: &ExperimentConfig) -> Result<Run> {
    let f = c.objective()?;
    let x0 = c.x0_for(&f)?;
    let l = f.lipschitz().ok_or_else(|| {
        Error::Unsupported(format!(
            "the reference flow needs a finite smoothness constant; `{}` has none",
            f.id()
        ))
    })?;
    let horizon = c.horizon.unwrap_or(FLOW_HORIZON / l);
    let tol = c.tol.unwrap_or(FLOW_TOL);
    let step_h = FLOW_STEP / l;
    let sol = flow::reference_flow(&f, &x0, step_h, horizon)?;
    let samples: Vec<(f64, f64)> = sol
        .times
        .iter()
        .copied()
        .zip(sol.values.iter().copied())
        .collect();
    let curve_convex = analysis::continuous_curve_convexity(&samples, tol)?;
    let grad_norm_monotone =
        analysis::is_non_increasing(&sol.grad_norms, tol * (1.0 + sol.grad_norms[0]));
    let mut ok = curve_convex && grad_norm_monotone;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    sol.write_csv(&mut csv)?;
    files.push(("flow.csv".to_string(), csv));

    let euler = match c.eta {
        None => None,
        Some(eta) => {
            let path = flow::euler_path(&f, &x0, eta, horizon)?;
            let n = path.base_trajectory.steps() * 4;
            let times: Vec<f64> = (0..=n)
                .map(|k| (k as f64 * eta / 4.0).min(path.horizon()))
                .collect();
            let values = path.curve_values(&f, &times)?;
            let pairs: Vec<(f64, f64)> =
                times.iter().copied().zip(values.iter().copied()).collect();
            let curve_convex = analysis::continuous_curve_convexity(&pairs, tol)?;
            let expect_convex = eta <= 1.0 / l;
            ok &= !expect_convex || curve_convex;
            let r = horizon.min(sol.horizon());
            let (sup_error, sup_error_at) = flow::euler_sup_error(&path, &sol, r)?;
            let error_bound = if eta < 1.0 {
                let k = linalg::norm(&f.gradient(&x0));
                let b = flow::euler_error_bound(k, l, eta, r)?;
                ok &= sup_error <= b;
                Some(b)
            } else {
                None
            };
            let mut w = csv_writer(Vec::new());
            w.write_record(["t", "f"])?;
            for (t, v) in &pairs {
                w.write_record([fmt_f64(*t), fmt_f64(*v)])?;
            }
            files.push((
                "euler.csv".to_string(),
                w.into_inner().map_err(|e| e.into_error())?,
            ));
            Some(EulerSummary {
                eta,
                steps: path.base_trajectory.steps(),
                curve_convex,
                expect_convex,
                sup_error,
                sup_error_at,
                error_bound,
            })
        }
    };

    let report = FlowReport {
        function_id: f.id(),
        x0: x0.clone(),
        horizon,
        step_h,
        curve_convex,
        grad_norm_monotone,
        final_value: *sol.values.last().unwrap(),
        euler,
    };
    let mut summary = format!(
        "gradient flow on {} from x0 = [{}] over [0, {}] (RK4, h = {}): f went from {} to {}; \
         curve convex = {}, gradient norm monotone = {}",
        f.id(),
        fmt_point(&x0),
        fmt_f64(horizon),
        fmt_f64(step_h),
        fmt_f64(sol.values[0]),
        fmt_f64(report.final_value),
        curve_convex,
        grad_norm_monotone
    );
    if let Some(e) = &report.euler {
        summary.push_str(&format!(
            "; Euler curve with eta = {} convex = {}, sup error {} at t = {}",
            fmt_f64(e.eta),
            e.curve_convex,
            fmt_f64(e.sup_error),
            fmt_f64(e.sup_error_at)
        ));
        if let Some(b) = e.error_bound {
            summary.push_str(&format!(" against bound {}", fmt_f64(b)));
        }
    }
    if !ok {
        summary.push_str("; CHECK FAILED");
    }
    summary.push('.');
    files.push(("report.json".to_string(), json_bytes(&report)?));
    Ok(Run {
        files,
        summary,
        status: pass_or_fail(ok),
    })
}

fn run_scan(c: &ExperimentConfig) -> Result<Run> {
    let f = c.objective()?;
    let x0 = c.x0_for(&f)?;
    let grid = c.grid.unwrap_or(DEFAULT_SCAN_GRID);
    let steps = c.steps.unwrap_or(DEFAULT_SCAN_STEPS);
    let result = match (c.eta_min, c.eta_max) {
        (Some(lo), Some(hi)) => experiments::eta_scan_range(&f, &x0, lo, hi, grid, steps)?,
        _ => experiments::eta_scan(&f, &x0, grid, steps)?,
    };
    let s = result.summary();
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let ok = s.safe_regime_violations == 0;
    let mut summary = format!(
        "scanned {} step sizes in [{}, {}] on {} from x0 = [{}] with {} steps: {} convex, {} not convex \
         ({} divergent); empirical threshold {} vs 1.75/L = {}",
        s.grid_size,
        fmt_f64(s.eta_min),
        fmt_f64(s.eta_max),
        s.function_id,
        fmt_point(&x0),
        steps,
        s.convex_count,
        s.violating_count,
        s.divergent_count,
        fmt_f64(s.empirical_threshold),
        fmt_f64(s.theoretical_threshold)
    );
    if !ok {
        summary.push_str(&format!(
            "; CHECK FAILED: {} violations at or below 1.75/L",
            s.safe_regime_violations
        ));
    }
    summary.push('.');
    Ok(Run {
        files: vec![
            ("scan.csv".into(), csv),
            ("scan_summary.json".into(), json_bytes(&s)?),
        ],
        summary,
        status: pass_or_fail(ok),
    })
}

fn run_counterexample(c: &ExperimentConfig) -> Result<Run> {
    let eta = c.require(c.eta, "eta")?;
    let r = match experiments::reproduce_counterexample(eta) {
        Err(Error::CheckFailed(msg)) => {
            return Ok(Run {
                files: vec![],
                summary: format!("CHECK FAILED: {msg}."),
                status: Status::CheckFailure,
            })
        }
        other => other?,
    };
    let summary = format!(
        "two steps from x0 = -1.8 with eta = {}: x = [{}], f = [{}]; progress {} then {}, \
         so the curve is {}; eta^2 - 15.75 eta + 24.5 = {}.",
        fmt_f64(eta),
        fmt_point(&r.x),
        fmt_point(&r.f),
        fmt_f64(r.f[0] - r.f[1]),
        fmt_f64(r.f[1] - r.f[2]),
        if r.violated { "not convex" } else { "convex" },
        fmt_f64(r.quadratic_lhs)
    );
    Ok(Run {
        files: vec![("counterexample.json".into(), json_bytes(&r)?)],
        summary,
        status: Status::Pass,
    })
}

fn run_verify(c: &ExperimentConfig) -> Result<Run> {
    let seed = c.seed.unwrap_or(DEFAULT_SEED);
    let trials = c.trials.unwrap_or(DEFAULT_VERIFY_TRIALS);
    let s = match &c.function {
        Some(_) => experiments::verify_theorem_suite_on(&[c.objective()?], seed, trials)?,
        None => experiments::verify_theorem_suite(seed, trials)?,
    };
    let mut summary = s.headline();
    for t in &s.checks {
        summary.push_str(&format!("; {} {}/{}", t.id, t.passed, t.total));
    }
    if let Some(f) = s.failures.first() {
        summary.push_str(&format!(
            "; first failure: {} on {} (trial {}, seed {}): {}",
            f.theorem, f.function, f.trial, f.seed, f.detail
        ));
    }
    summary.push('.');
    Ok(Run {
        files: vec![("verify.json".into(), json_bytes(&s)?)],
        summary,
        status: pass_or_fail(s.all_passed()),
    })
}

fn run_fuzz(c: &ExperimentConfig) -> Result<Run> {
    let seed = c.seed.unwrap_or(DEFAULT_SEED);
    let trials = c.trials.unwrap_or(DEFAULT_FUZZ_TRIALS);
    let mode = c.mode.unwrap_or(EtaMode::SafeRegime);
    let records = experiments::fuzz_convexity(seed, trials, mode)?;
    let s = experiments::summarize_fuzz(seed, trials, mode, &records);
    let ok = match mode {
        EtaMode::SafeRegime => records.is_empty(),
        EtaMode::DangerRegime => s.all_monotone,
    };
    let mut lines = Vec::new();
    write_json_lines(&mut lines, &records)?;
    let mut summary = format!(
        "fuzzed {} trials in the {} regime (seed {}): {} non-convex curves, {} with more than one \
         violation, longest run {}",
        trials,
        mode.as_str(),
        seed,
        s.violating_trials,
        s.trials_with_multiple_violations,
        s.max_run_length
    );
    if !records.is_empty() {
        summary.push_str(&format!(", all monotone = {}", s.all_monotone));
    }
    if !ok {
        summary.push_str("; CHECK FAILED");
    }
    summary.push('.');
    Ok(Run {
        files: vec![
            ("violations.jsonl".into(), lines),
            ("fuzz_summary.json".into(), json_bytes(&s)?),
        ],
        summary,
        status: pass_or_fail(ok),
    })
}
