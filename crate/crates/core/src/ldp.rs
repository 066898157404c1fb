//! Rate-function evaluation by penalized control optimization, and the
//! Monte Carlo large-deviation experiments.

use serde::{Deserialize, Serialize};

use crate::coefficients::Coefficients;
use crate::dynamics::{solve_skeleton, sup_b_distance, Control, SolverSettings, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::montecarlo::{check_failures, map_paths, EnsembleConfig, Estimate};
use crate::parallel::WorkerPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EndpointBall,
    SupTube,
}

/// A closed ball in `L²` around a terminal profile, or a tube of radius
/// `δ` around a path in the discrete sup-in-time `L²` distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    kind: EventKind,
    target: Vec<Field>,
    radius: f64,
}

fn l2_distance(a: &Field, b: &Field) -> f64 {
    let d = a.sub(b);
    d.dot(&d).sqrt()
}

impl EventSpec {
    pub fn endpoint_ball(target: Field, radius: f64) -> Result<Self> {
        Self::checked(EventKind::EndpointBall, vec![target], radius)
    }

    /// Tube around the knots `target[0..=N]`.
    pub fn sup_tube(target: Vec<Field>, radius: f64) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("tube target is empty".into()));
        }
        Self::checked(EventKind::SupTube, target, radius)
    }

    /// The event containing every trajectory.
    pub fn whole_space(grid: crate::grid::Grid1D) -> Self {
        Self {
            kind: EventKind::EndpointBall,
            target: vec![grid.zeros()],
            radius: f64::INFINITY,
        }
    }

    fn checked(kind: EventKind, target: Vec<Field>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("event radius must be > 0, got {radius}")));
        }
        Ok(Self { kind, target, radius })
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn target(&self) -> &[Field] {
        &self.target
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::checked(self.kind, self.target.clone(), radius)
    }

    pub fn distance(&self, traj: &Trajectory) -> f64 {
        match self.kind {
            EventKind::EndpointBall => l2_distance(traj.last(), &self.target[0]),
            EventKind::SupTube => {
                if traj.fields().len() != self.target.len() {
                    return f64::INFINITY;
                }
                traj.fields()
                    .iter()
                    .zip(&self.target)
                    .map(|(u, g)| l2_distance(u, g))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// `max(0, dist − δ)`.
    pub fn violation(&self, traj: &Trajectory) -> f64 {
        (self.distance(traj) - self.radius).max(0.0)
    }

    pub fn contains(&self, traj: &Trajectory) -> bool {
        self.distance(traj) <= self.radius
    }
}

/// Initial datum, coefficients and time grid shared by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpProblem {
    pub u0: Field,
    pub coefficients: Coefficients,
    pub horizon: f64,
    pub n_steps: usize,
    pub settings: SolverSettings,
}

impl LdpProblem {
    pub fn new(u0: Field, coefficients: Coefficients, horizon: f64, n_steps: usize) -> Self {
        Self {
            u0,
            coefficients,
            horizon,
            n_steps,
            settings: SolverSettings::default(),
        }
    }

    pub fn skeleton(&self, h: &Control) -> Result<Trajectory> {
        solve_skeleton(&self.u0, h, &self.coefficients, &self.settings)
    }

    fn ensemble(&self, eps: f64, paths: usize, base_seed: u64, shift: Option<Control>) -> EnsembleConfig {
        EnsembleConfig {
            u0: self.u0.clone(),
            coefficients: self.coefficients,
            horizon: self.horizon,
            n_steps: self.n_steps,
            eps,
            paths,
            base_seed,
            shift,
            settings: self.settings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub penalty_schedule: Vec<f64>,
    pub fd_step: f64,
    pub max_iters_per_stage: usize,
    pub grad_tol: f64,
    /// Largest violation `max(0, dist − δ)` accepted as feasible.
    pub feasibility_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            penalty_schedule: vec![10.0, 1e2, 1e3, 1e4],
            fd_step: 1e-5,
            max_iters_per_stage: 200,
            grad_tol: 1e-8,
            feasibility_tol: 1e-6,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.penalty_schedule.is_empty() || self.penalty_schedule.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("penalty schedule must be nonempty and positive".into()));
        }
        if !(self.fd_step > 0.0 && self.feasibility_tol >= 0.0 && self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one continuation stage, after feasibility restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub lambda: f64,
    pub value: f64,
    pub constraint_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl StageRecord {
    pub const CSV_HEADER: &'static str = "lambda,I,constraint_residual,converged";

    pub fn csv_row(&self) -> String {
        format!("{:?},{:?},{:?},{}", self.lambda, self.value, self.constraint_residual, self.converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFunctionResult {
    pub control: Control,
    /// `½τΣh_k²` of `control`.
    pub value: f64,
    pub constraint_residual: f64,
    pub converged: bool,
    pub penalty_weight: f64,
    pub stages: Vec<StageRecord>,
}

struct Objective<'a> {
    ev: &'a EventSpec,
    problem: &'a LdpProblem,
    lambda: f64,
}

impl Objective<'_> {
    fn violation(&self, h: &[f64]) -> f64 {
        Control::new(self.problem.horizon, h.to_vec())
            .and_then(|ctrl| self.problem.skeleton(&ctrl))
            .map(|traj| self.ev.violation(&traj))
            .unwrap_or(f64::INFINITY)
    }

    fn value(&self, h: &[f64]) -> f64 {
        let tau = self.problem.horizon / h.len() as f64;
        let energy = 0.5 * tau * h.iter().map(|x| x * x).sum::<f64>();
        let v = self.violation(h);
        energy + self.lambda * v * v
    }

    /// Central differences; the `2N` evaluations run on the pool.
    fn gradient(&self, h: &[f64], step: f64, pool: &WorkerPool) -> Vec<f64> {
        let n = h.len();
        let evals = pool.map_indexed(2 * n, |m| {
            let mut x = h.to_vec();
            x[m / 2] += if m % 2 == 0 { step } else { -step };
            self.value(&x)
        });
        (0..n)
            .map(|j| (evals[2 * j] - evals[2 * j + 1]) / (2.0 * step))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton descent with Armijo backtracking on `J_λ`.
fn minimize(obj: &Objective, h0: Vec<f64>, opt: &OptimizerSettings, pool: &WorkerPool) -> (Vec<f64>, usize) {
    let n = h0.len();
    let tau = obj.problem.horizon / n as f64;
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect()
    };
    // The energy Hessian is τI.
    let mut hinv = identity(1.0 / tau);
    let mut h = h0;
    let mut j = obj.value(&h);
    let mut g = obj.gradient(&h, opt.fd_step, pool);
    let mut iters = 0;
    while iters < opt.max_iters_per_stage {
        if !j.is_finite() || g.iter().any(|x| !x.is_finite()) {
            break;
        }
        if g.iter().fold(0.0f64, |m, x| m.max(x.abs())) <= opt.grad_tol {
            break;
        }
        iters += 1;
        let mut d: Vec<f64> = hinv.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hinv = identity(1.0 / tau);
            d = g.iter().map(|x| -x / tau).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = h.iter().zip(&d).map(|(x, y)| x + alpha * y).collect();
            let jt = obj.value(&trial);
            if jt <= j + 1e-4 * alpha * slope {
                accepted = Some((trial, jt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, jn)) = accepted else { break };
        let gn = obj.gradient(&next, opt.fd_step, pool);
        let s: Vec<f64> = next.iter().zip(&h).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let hy: Vec<f64> = hinv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for a in 0..n {
                for b in 0..n {
                    hinv[a][b] += (1.0 + yhy * rho) * rho * s[a] * s[b] - rho * (hy[a] * s[b] + s[a] * hy[b]);
                }
            }
        }
        let stalled = (j - jn).abs() <= 1e-15 * (1.0 + j.abs());
        h = next;
        j = jn;
        g = gn;
        if stalled {
            break;
        }
    }
    (h, iters)
}

/// Smallest `s ≥ 1` on the ray `s·h` that makes the control feasible.
fn restore(obj: &Objective, h: &[f64], tol: f64) -> Option<Vec<f64>> {
    let scaled = |s: f64| -> Vec<f64> { h.iter().map(|x| s * x).collect() };
    if obj.violation(h) <= tol {
        return Some(h.to_vec());
    }
    if h.iter().all(|x| *x == 0.0) {
        return None;
    }
    let mut lo = 1.0;
    let mut hi = 1.0;
    loop {
        hi *= 1.25;
        if hi > 16.0 {
            return None;
        }
        if obj.violation(&scaled(hi)) <= tol {
            break;
        }
        lo = hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if obj.violation(&scaled(mid)) <= tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(scaled(hi))
}

/// Approximates `inf{½∫h² : u_h ∈ ev}` over piecewise-constant controls.
pub fn rate_function(
    ev: &EventSpec,
    problem: &LdpProblem,
    opt: &OptimizerSettings,
    pool: &WorkerPool,
) -> Result<RateFunctionResult> {
    opt.validate()?;
    let zero = Control::zero(problem.horizon, problem.n_steps)?;
    let residual0 = ev.violation(&problem.skeleton(&zero)?);
    if residual0 <= opt.feasibility_tol {
        return Ok(RateFunctionResult {
            control: zero,
            value: 0.0,
            constraint_residual: residual0,
            converged: true,
            penalty_weight: 0.0,
            stages: vec![StageRecord {
                lambda: 0.0,
                value: 0.0,
                constraint_residual: residual0,
                converged: true,
                iterations: 0,
            }],
        });
    }

    let mut h = vec![0.0; problem.n_steps];
    let mut stages = Vec::new();
    let mut best: Option<(Control, f64, f64)> = None;
    let mut last = (zero, residual0, 0.0);
    for &lambda in &opt.penalty_schedule {
        let obj = Objective { ev, problem, lambda };
        let (hs, iterations) = minimize(&obj, h, opt, pool);
        h = hs;
        let candidate = restore(&obj, &h, opt.feasibility_tol).unwrap_or_else(|| h.clone());
        let ctrl = Control::new(problem.horizon, candidate)?;
        let residual = obj.violation(ctrl.values());
        let feasible = residual <= opt.feasibility_tol;
        stages.push(StageRecord {
            lambda,
            value: ctrl.energy(),
            constraint_residual: residual,
            converged: feasible,
            iterations,
        });
        if feasible && best.as_ref().is_none_or(|(b, _, _)| ctrl.energy() < b.energy()) {
            best = Some((ctrl.clone(), residual, lambda));
        }
        last = (ctrl, residual, lambda);
    }
    let (control, constraint_residual, penalty_weight, converged) = match best {
        Some((c, r, l)) => (c, r, l, true),
        None => (last.0, last.1, last.2, false),
    };
    Ok(RateFunctionResult {
        value: control.energy(),
        control,
        constraint_residual,
        converged,
        penalty_weight,
        stages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub epsilon: f64,
    pub hits: usize,
    pub paths: usize,
    pub failed: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `ε² log P̂`, or `ε² log ci_high` when no path hit the event.
    pub eps2_log_p: f64,
    pub zero_hits: bool,
}

impl LdpRow {
    pub const CSV_HEADER: &'static str = "epsilon,p_hat,ci_low,ci_high,eps2_log_p";

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?}",
            self.epsilon, self.p_hat, self.ci_low, self.ci_high, self.eps2_log_p
        )
    }
}

/// 95% Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Monte Carlo event probabilities across noise levels. All levels share the
/// same seeds.
pub fn empirical_ldp(
    ev: &EventSpec,
    eps_list: &[f64],
    paths: usize,
    base_seed: u64,
    problem: &LdpProblem,
    pool: &WorkerPool,
) -> Result<Vec<LdpRow>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
            }
            let cfg = problem.ensemble(eps, paths, base_seed, None);
            let results = map_paths(&cfg, pool, |_, traj| ev.contains(traj))?;
            let failed = check_failures(&results)?;
            let ok = results.len() - failed;
            let hits = results.iter().filter(|r| matches!(r, Ok(true))).count();
            let p_hat = hits as f64 / ok as f64;
            let (ci_low, ci_high) = wilson_interval(hits, ok);
            let zero_hits = hits == 0;
            let log_p = if zero_hits { ci_high.ln() } else { p_hat.ln() };
            Ok(LdpRow {
                epsilon: eps,
                hits,
                paths: ok,
                failed,
                p_hat,
                ci_low,
                ci_high,
                eps2_log_p: eps * eps * log_p,
                zero_hits,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Row {
    pub epsilon: f64,
    /// Estimate of `E[sup_t ‖B(v^ε) − B(u_h)‖]`.
    pub distance: Estimate,
    pub failed: usize,
}

/// Distance between the shifted noisy solution and the controlled skeleton.
pub fn c1_experiment(
    h: &Control,
    eps_list: &[f64],
    paths: usize,
    base_seed: u64,
    problem: &LdpProblem,
    pool: &WorkerPool,
) -> Result<Vec<C1Row>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    let reference = problem.skeleton(h)?;
    eps_list
        .iter()
        .map(|&eps| {
            let cfg = problem.ensemble(eps, paths, base_seed, Some(h.clone()));
            let results = map_paths(&cfg, pool, |_, traj| sup_b_distance(traj, &reference))?;
            let failed = check_failures(&results)?;
            let xs: Vec<f64> = results.into_iter().filter_map(|r| r.ok()).collect();
            Ok(C1Row {
                epsilon: eps,
                distance: Estimate::from_samples(&xs),
                failed,
            })
        })
        .collect()
}
