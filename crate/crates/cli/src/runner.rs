//! Experiment dispatch and artifact writing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnlspde_core::coefficients::validate_assumptions;
use dnlspde_core::dynamics::{
    apriori_report, continuity_experiment, project_control, solve_skeleton, Control, Trajectory,
};
use dnlspde_core::ergodic::{check_dissipativity, ensemble_moment_bound, long_run, LongRunConfig, ObservableBattery};
use dnlspde_core::grid::{seminorm_w1p, Field, Grid1D};
use dnlspde_core::ldp::{c1_experiment, empirical_ldp, rate_function, EventKind, EventSpec, LdpProblem, LdpRow, StageRecord};
use dnlspde_core::montecarlo::{ensemble_stats, EnsembleConfig, PathSummary};
use dnlspde_core::parallel::WorkerPool;
use serde::Serialize;
use serde_json::json;

use crate::config::{ControlCfg, EventTarget, Experiment, InitialCfg, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Core(dnlspde_core::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<dnlspde_core::Error> for RunError {
    fn from(e: dnlspde_core::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Files written so far, in write order.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> std::io::Result<()> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.write(name, &s)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write(name, &s)
    }
}

/// Experiment-level outcome; `failures` lists checks that did not pass.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<String>,
}

pub fn grid_of(cfg: &RunConfig) -> Result<Grid1D, RunError> {
    Ok(Grid1D::new(cfg.n_interior, cfg.length)?)
}

pub fn initial_field(cfg: &RunConfig, grid: Grid1D) -> Result<Field, RunError> {
    let l = grid.length();
    Ok(match &cfg.initial {
        InitialCfg::Zero => grid.zeros(),
        InitialCfg::Sine { amplitude, mode } => {
            grid.sample(|x| amplitude * (*mode as f64 * std::f64::consts::PI * x / l).sin())
        }
        InitialCfg::Tabulated(v) => Field::new(grid, v.clone())?,
    })
}

/// The configured control as a function of time.
pub fn control_fn(c: &ControlCfg, horizon: f64) -> Box<dyn Fn(f64) -> f64 + Sync + Send> {
    match c.clone() {
        ControlCfg::Zero => Box::new(|_| 0.0),
        ControlCfg::Constant { value } => Box::new(move |_| value),
        ControlCfg::Sine {
            amplitude,
            frequency,
            offset,
        } => Box::new(move |t| offset + amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()),
        ControlCfg::Tabulated(v) => {
            let tau = horizon / v.len() as f64;
            Box::new(move |t| {
                let k = ((t / tau).ceil() as usize).clamp(1, v.len());
                v[k - 1]
            })
        }
    }
}

pub fn control_of(cfg: &RunConfig, n_steps: usize) -> Result<Control, RunError> {
    Ok(match &cfg.control {
        ControlCfg::Zero => Control::zero(cfg.horizon, n_steps)?,
        ControlCfg::Constant { value } => Control::constant(cfg.horizon, n_steps, *value)?,
        ControlCfg::Tabulated(v) if v.len() == n_steps => Control::new(cfg.horizon, v.clone())?,
        other => project_control(control_fn(other, cfg.horizon), cfg.horizon, n_steps)?,
    })
}

fn problem(cfg: &RunConfig, u0: Field) -> LdpProblem {
    LdpProblem {
        u0,
        coefficients: cfg.coefficients,
        horizon: cfg.horizon,
        n_steps: cfg.n_steps,
        settings: cfg.solver,
    }
}

pub fn event_of(cfg: &RunConfig, p: &LdpProblem) -> Result<EventSpec, RunError> {
    let grid = *p.u0.grid();
    let path: Vec<Field> = match cfg.event.target {
        EventTarget::Sine { amplitude, mode } => {
            let l = grid.length();
            let f = grid.sample(|x| amplitude * (mode as f64 * std::f64::consts::PI * x / l).sin());
            vec![f; cfg.n_steps + 1]
        }
        EventTarget::Skeleton { control_value } => {
            let h = Control::constant(cfg.horizon, cfg.n_steps, control_value)?;
            p.skeleton(&h)?.fields().to_vec()
        }
    };
    Ok(match cfg.event.kind {
        EventKind::EndpointBall => EventSpec::endpoint_ball(path.last().expect("knots").clone(), cfg.event.radius)?,
        EventKind::SupTube => EventSpec::sup_tube(path, cfg.event.radius)?,
    })
}

pub const TRAJECTORY_HEADER: &str = "step,t,norm_B_l2,seminorm_w1p,residual,newton_iters";

pub fn trajectory_rows(traj: &Trajectory, p: f64) -> Vec<String> {
    (0..=traj.n_steps())
        .map(|k| {
            let report = if k == 0 {
                traj.initial_report()
            } else {
                &traj.reports()[k - 1]
            };
            let b = &traj.b_fields()[k];
            format!(
                "{k},{:?},{:?},{:?},{:?},{}",
                traj.times()[k],
                b.dot(b).sqrt(),
                seminorm_w1p(&traj.fields()[k], p).expect("p >= 2"),
                report.residual,
                report.iterations
            )
        })
        .collect()
}

fn field_rows(traj: &Trajectory, every: usize) -> Vec<String> {
    let n = traj.n_steps();
    (0..=n)
        .filter(|k| k % every == 0 || *k == n)
        .map(|k| traj.fields()[k].csv_row(traj.times()[k]))
        .collect()
}

fn control_rows(h: &Control) -> Vec<String> {
    h.values()
        .iter()
        .enumerate()
        .map(|(k, v)| format!("{},{:?},{v:?}", k + 1, (k + 1) as f64 * h.tau()))
        .collect()
}

/// Runs the configured experiment, writing artifacts into `out`.
pub fn run(cfg: &RunConfig, out: &mut Artifacts, pool: &WorkerPool) -> Result<Outcome, RunError> {
    let grid = grid_of(cfg)?;
    out.write("grid.json", &format!("{}\n", grid.metadata_json()))?;
    let u0 = initial_field(cfg, grid)?;
    match cfg.experiment {
        Experiment::Validate => validate(cfg, out),
        Experiment::Skeleton => skeleton(cfg, u0, out),
        Experiment::Simulate => simulate(cfg, u0, out, pool),
        Experiment::Ldp => ldp(cfg, u0, out, pool),
        Experiment::Invariant => invariant(cfg, u0, out, pool),
        Experiment::Convergence => convergence(cfg, u0, out, pool),
    }
}

fn validate(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, RunError> {
    let report = validate_assumptions(&cfg.coefficients, cfg.validation_samples, cfg.monte_carlo.base_seed);
    out.json("validation.json", &report)?;
    let failures = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("assumption check `{}` failed", c.name))
        .collect();
    Ok(Outcome { failures })
}

fn skeleton(cfg: &RunConfig, u0: Field, out: &mut Artifacts) -> Result<Outcome, RunError> {
    let h = control_of(cfg, cfg.n_steps)?;
    let traj = solve_skeleton(&u0, &h, &cfg.coefficients, &cfg.solver)?;
    out.csv("trajectory.csv", TRAJECTORY_HEADER, trajectory_rows(&traj, cfg.coefficients.p()))?;
    out.csv("fields.csv", &Field::csv_header(cfg.n_interior), field_rows(&traj, cfg.output.dump_interval))?;
    out.csv("control.csv", "step,t,h", control_rows(&h))?;
    let diag = apriori_report(&traj, &cfg.coefficients, 0.5);
    out.json(
        "diagnostics.json",
        &json!({ "control_energy": h.energy(), "apriori": diag }),
    )?;
    Ok(Outcome::default())
}

fn simulate(cfg: &RunConfig, u0: Field, out: &mut Artifacts, pool: &WorkerPool) -> Result<Outcome, RunError> {
    let shift = match cfg.control {
        ControlCfg::Zero => None,
        _ => Some(control_of(cfg, cfg.n_steps)?),
    };
    let mut reports = Vec::new();
    for (i, &eps) in cfg.monte_carlo.eps_list.iter().enumerate() {
        let ens = EnsembleConfig {
            u0: u0.clone(),
            coefficients: cfg.coefficients,
            horizon: cfg.horizon,
            n_steps: cfg.n_steps,
            eps,
            paths: cfg.monte_carlo.paths,
            base_seed: cfg.monte_carlo.base_seed,
            shift: shift.clone(),
            settings: cfg.solver,
        };
        let (report, rows) = ensemble_stats(&ens, pool)?;
        out.csv(&format!("ensemble_{i}.csv"), PathSummary::CSV_HEADER, rows.iter().map(|r| r.csv_row()))?;
        reports.push(report);
    }
    let means: Vec<f64> = reports.iter().map(|r| r.sup_b_l2_sq.mean).collect();
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    out.json(
        "summary.json",
        &json!({
            "moments": reports,
            "uniform_ratio": max / min,
            "uniform_ratio_threshold": 10.0,
            "uniform_ratio_note": "engineering threshold, not a theorem at the discrete level",
        }),
    )?;
    Ok(Outcome::default())
}

fn ldp_rows(rows: &[LdpRow]) -> Vec<String> {
    rows.iter().map(|r| r.csv_row()).collect()
}

fn ldp(cfg: &RunConfig, u0: Field, out: &mut Artifacts, pool: &WorkerPool) -> Result<Outcome, RunError> {
    let p = problem(cfg, u0);
    let ev = event_of(cfg, &p)?;
    let res = rate_function(&ev, &p, &cfg.optimizer, pool)?;
    out.csv("ldp_stages.csv", StageRecord::CSV_HEADER, res.stages.iter().map(|s| s.csv_row()))?;
    out.csv("ldp_control.csv", "step,t,h", control_rows(&res.control))?;
    out.json(
        "rate_function.json",
        &json!({
            "I": res.value,
            "constraint_residual": res.constraint_residual,
            "converged": res.converged,
            "penalty_weight": res.penalty_weight,
        }),
    )?;
    let mut failures = Vec::new();
    if !res.converged {
        failures.push(format!(
            "rate-function optimizer infeasible at the largest penalty (residual {:e})",
            res.constraint_residual
        ));
    }
    let eps: Vec<f64> = cfg.monte_carlo.eps_list.iter().copied().filter(|e| *e > 0.0).collect();
    if !eps.is_empty() {
        let rows = empirical_ldp(&ev, &eps, cfg.monte_carlo.paths, cfg.monte_carlo.base_seed, &p, pool)?;
        out.csv("ldp_empirical.csv", LdpRow::CSV_HEADER, ldp_rows(&rows))?;
        out.json("ldp_empirical.json", &json!({ "rows": rows, "minus_I": -res.value }))?;
    }
    Ok(Outcome { failures })
}

fn invariant(cfg: &RunConfig, u0: Field, out: &mut Artifacts, pool: &WorkerPool) -> Result<Outcome, RunError> {
    let grid = *u0.grid();
    let inv = &cfg.invariant;
    let diss = check_dissipativity(&cfg.coefficients, inv.dissipativity_samples, cfg.monte_carlo.base_seed, grid)?;
    out.json("dissipativity.json", &diss)?;
    let mut failures = Vec::new();
    let run = LongRunConfig {
        t_long: inv.t_long,
        window: inv.window,
        steps_per_window: inv.steps_per_window,
        seed: cfg.monte_carlo.base_seed,
        settings: cfg.solver,
    };
    let battery = ObservableBattery::standard(grid);
    let (summary, _) = long_run(&u0, &cfg.coefficients, &run, &battery)?;
    out.csv("occupation.csv", dnlspde_core::ergodic::OccupationSummary::CSV_HEADER, summary.csv_rows())?;
    let ses: Vec<f64> = (0..battery.items().len()).map(|j| summary.standard_error(j)).collect();
    out.json(
        "long_run.json",
        &json!({
            "observables": summary.observable_ids,
            "final_averages": summary.final_averages(),
            "standard_errors": ses,
            "warning": summary.warning,
        }),
    )?;
    if diss.passed {
        let ens = EnsembleConfig {
            u0: u0.clone(),
            coefficients: cfg.coefficients,
            horizon: cfg.horizon,
            n_steps: cfg.n_steps,
            eps: 1.0,
            paths: inv.moment_paths,
            base_seed: cfg.monte_carlo.base_seed,
            shift: None,
            settings: cfg.solver,
        };
        let bound = ensemble_moment_bound(&ens, diss.delta_hat, inv.slack, pool)?;
        out.json("moment_bound.json", &bound)?;
        if !bound.passed {
            failures.push(format!("moment bound violated: {} > {}", bound.lhs, bound.rhs));
        }
    } else {
        failures.push(format!("dissipativity failed (min ratio {:e})", diss.min_ratio));
    }
    Ok(Outcome { failures })
}

fn convergence(cfg: &RunConfig, u0: Field, out: &mut Artifacts, pool: &WorkerPool) -> Result<Outcome, RunError> {
    let c = &cfg.coefficients;
    let base = control_fn(&cfg.control, cfg.horizon);
    let rows = continuity_experiment(
        &base,
        &cfg.convergence.frequencies,
        cfg.horizon,
        cfg.n_steps,
        c,
        &u0,
        &cfg.solver,
        pool,
    )?;
    out.csv(
        "continuity.csv",
        "frequency,sup_distance",
        rows.iter().map(|r| format!("{},{:?}", r.frequency, r.sup_distance)),
    )?;

    let mut refinement = String::new();
    for level in 0..cfg.convergence.levels {
        let n = cfg.n_steps << level;
        let h = control_of(cfg, n)?;
        let traj = solve_skeleton(&u0, &h, c, &cfg.solver)?;
        let sup = traj.b_fields().iter().map(|b| b.dot(b)).fold(0.0, f64::max);
        let _ = writeln!(refinement, "{n},{:?},{sup:?}", cfg.horizon / n as f64);
    }
    out.write("refinement.csv", &format!("N,tau,sup_B_l2_sq\n{refinement}"))?;

    let h = control_of(cfg, cfg.n_steps)?;
    let p = problem(cfg, u0);
    let c1 = c1_experiment(&h, &cfg.monte_carlo.eps_list, cfg.monte_carlo.paths, cfg.monte_carlo.base_seed, &p, pool)?;
    out.csv(
        "c1.csv",
        "epsilon,mean,std_error,failed",
        c1.iter()
            .map(|r| format!("{:?},{:?},{:?},{}", r.epsilon, r.distance.mean, r.distance.std_error, r.failed)),
    )?;
    Ok(Outcome::default())
}
