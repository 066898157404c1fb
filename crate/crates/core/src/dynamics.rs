//! Semi-implicit time stepping.
//!
//! Each step solves the resolvent problem
//!
//! ```text
//! B(u) − τ div A(∇u) = B(u_prev) + forcing·σ(u_prev)
//! ```
//!
//! for `u`. The left-hand side is strongly monotone (`b′ ≥ C₃`, `A`
//! monotone), so it has exactly one root and a globalized Newton iteration
//! finds it. The noise coefficient is evaluated at the previous iterate.

use serde::{Deserialize, Serialize};

use crate::coefficients::{apply_flux, BFunction, Coefficients, FluxFunction};
use crate::error::{Error, Result};
use crate::grid::{
    dual_norm_h1, edge_norm_lq, gradient, norm_lq, solve_tridiagonal, Field, Grid1D,
};
use crate::parallel::WorkerPool;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_QUADRATURE_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stopping threshold on the `h`-weighted L² residual.
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Line-search halvings before falling back to a Picard step.
    pub max_halvings: usize,
    /// Replace `u0` by the solution of `w − τΔ_p w = u0` before stepping.
    pub regularize_initial: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            max_halvings: 40,
            regularize_initial: true,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(mut self, newton_tol: f64) -> Self {
        self.newton_tol = newton_tol;
        self
    }

    pub fn without_regularization(mut self) -> Self {
        self.regularize_initial = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub damping_events: usize,
    pub picard_steps: usize,
    pub converged: bool,
}

impl SolveReport {
    fn trivial() -> Self {
        Self {
            iterations: 0,
            residual: 0.0,
            damping_events: 0,
            picard_steps: 0,
            converged: true,
        }
    }
}

/// Piecewise-constant control on a uniform partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    tau: f64,
    values: Vec<f64>,
}

impl Control {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("control needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "control horizon must be positive, got {horizon}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control values must be finite".into()));
        }
        Ok(Self {
            tau: horizon / values.len() as f64,
            values,
        })
    }

    pub fn zero(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::new(horizon, vec![0.0; n_steps])
    }

    pub fn constant(horizon: f64, n_steps: usize, value: f64) -> Result<Self> {
        Self::new(horizon, vec![value; n_steps])
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.tau * self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `h_{k+1}`, the value on `(t_k, t_{k+1}]`.
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// `½ τ Σ h_k²`.
    pub fn energy(&self) -> f64 {
        0.5 * self.tau * self.values.iter().map(|h| h * h).sum::<f64>()
    }
}

/// Cell averages of `h` over `((k−1)τ, kτ]`, by composite midpoint quadrature.
pub fn project_control(
    h: impl Fn(f64) -> f64,
    horizon: f64,
    n_steps: usize,
) -> Result<Control> {
    project_control_with(h, horizon, n_steps, DEFAULT_QUADRATURE_POINTS)
}

pub fn project_control_with(
    h: impl Fn(f64) -> f64,
    horizon: f64,
    n_steps: usize,
    quad_points: usize,
) -> Result<Control> {
    if n_steps == 0 || quad_points == 0 {
        return Err(Error::InvalidArgument(
            "projection needs n_steps >= 1 and quad_points >= 1".into(),
        ));
    }
    let tau = horizon / n_steps as f64;
    let dq = tau / quad_points as f64;
    let values = (0..n_steps)
        .map(|k| {
            let t0 = k as f64 * tau;
            (0..quad_points)
                .map(|j| h(t0 + (j as f64 + 0.5) * dq))
                .sum::<f64>()
                / quad_points as f64
        })
        .collect();
    Control::new(horizon, values)
}

fn residual_norm(r: &[f64], h: f64) -> f64 {
    (h * r.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Resolvent solver for `B(u) − τ div a(∇u) = rhs`.
struct Resolvent<'a> {
    flux: &'a FluxFunction,
    b: &'a BFunction,
    tau: f64,
    grid: Grid1D,
}

impl Resolvent<'_> {
    fn residual(&self, u: &[f64], rhs: &[f64]) -> Vec<f64> {
        let h = self.grid.spacing();
        let inv_h = 1.0 / h;
        let n = u.len();
        let mut r = Vec::with_capacity(n);
        let mut flux_left = self.flux.eval(u[0] * inv_h);
        for i in 0..n {
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            let flux_right = self.flux.eval((right - u[i]) * inv_h);
            let div = (flux_right - flux_left) * inv_h;
            r.push(self.b.eval(u[i]) - self.tau * div - rhs[i]);
            flux_left = flux_right;
        }
        r
    }

    /// Tridiagonal system `diag(d) + τ K_w` for edge weights `w`.
    fn assemble(&self, d: Vec<f64>, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.grid.spacing();
        let s = self.tau / (h * h);
        let n = d.len();
        let mut diag = d;
        for i in 0..n {
            diag[i] += s * (w[i] + w[i + 1]);
        }
        let off = (1..n).map(|e| -s * w[e]).collect();
        (off, diag)
    }

    fn edge_gradients(&self, u: &[f64]) -> Vec<f64> {
        let inv_h = 1.0 / self.grid.spacing();
        let n = u.len();
        (0..=n)
            .map(|e| {
                let right = if e < n { u[e] } else { 0.0 };
                let left = if e > 0 { u[e - 1] } else { 0.0 };
                (right - left) * inv_h
            })
            .collect()
    }

    fn newton_direction(&self, u: &[f64], r: &[f64]) -> Vec<f64> {
        let g = self.edge_gradients(u);
        let w: Vec<f64> = g.iter().map(|&x| self.flux.derivative(x)).collect();
        let d = u.iter().map(|&x| self.b.derivative(x)).collect();
        let (off, diag) = self.assemble(d, &w);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        solve_tridiagonal(&off, &diag, &off, &neg)
    }

    /// Frozen-coefficient (Kačanov) iterate.
    fn picard_iterate(&self, u: &[f64], rhs: &[f64]) -> Vec<f64> {
        let g = self.edge_gradients(u);
        let w: Vec<f64> = g.iter().map(|&x| self.flux.secant(x)).collect();
        let d: Vec<f64> = u.iter().map(|&x| self.b.derivative(x)).collect();
        let source: Vec<f64> = (0..u.len())
            .map(|i| rhs[i] - self.b.eval(u[i]) + d[i] * u[i])
            .collect();
        let (off, diag) = self.assemble(d, &w);
        solve_tridiagonal(&off, &diag, &off, &source)
    }

    fn solve(&self, rhs: &[f64], guess: &[f64], settings: &SolverSettings) -> Result<(Vec<f64>, SolveReport)> {
        let h = self.grid.spacing();
        let mut u = guess.to_vec();
        let mut r = self.residual(&u, rhs);
        let mut rn = residual_norm(&r, h);
        let mut history = vec![rn];
        let mut report = SolveReport {
            iterations: 0,
            residual: rn,
            damping_events: 0,
            picard_steps: 0,
            converged: false,
        };
        if !rn.is_finite() {
            return Err(Error::Divergence {
                iterations: 0,
                residual_history: history,
            });
        }
        while rn > settings.newton_tol {
            if report.iterations >= settings.max_iter {
                return Err(Error::NonConvergence {
                    iterations: report.iterations,
                    residual_history: history,
                });
            }
            report.iterations += 1;
            let delta = self.newton_direction(&u, &r);
            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..=settings.max_halvings {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                let tr = self.residual(&trial, rhs);
                let tn = residual_norm(&tr, h);
                if tn.is_finite() && tn < rn {
                    accepted = Some((trial, tr, tn));
                    break;
                }
                alpha *= 0.5;
                report.damping_events += 1;
            }
            if accepted.is_none() {
                let trial = self.picard_iterate(&u, rhs);
                let tr = self.residual(&trial, rhs);
                let tn = residual_norm(&tr, h);
                report.picard_steps += 1;
                if tn.is_finite() && tn < rn {
                    accepted = Some((trial, tr, tn));
                } else if !tn.is_finite() {
                    history.push(tn);
                    return Err(Error::Divergence {
                        iterations: report.iterations,
                        residual_history: history,
                    });
                }
            }
            match accepted {
                Some((nu, nr, nn)) => {
                    u = nu;
                    r = nr;
                    rn = nn;
                    history.push(rn);
                }
                None => {
                    return Err(Error::NonConvergence {
                        iterations: report.iterations,
                        residual_history: history,
                    })
                }
            }
        }
        report.residual = rn;
        report.converged = true;
        Ok((u, report))
    }
}

fn solve_resolvent(
    rhs: &Field,
    guess: &Field,
    tau: f64,
    flux: &FluxFunction,
    b: &BFunction,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let grid = *rhs.grid();
    let solver = Resolvent { flux, b, tau, grid };
    let (u, report) = solver.solve(rhs.values(), guess.values(), settings)?;
    Ok((Field::from_raw(grid, u), report))
}

/// Solves `w − τ Δ_p w = u0` with the p-Laplacian of the flux exponent.
pub fn regularize_initial(
    u0: &Field,
    tau: f64,
    c: &Coefficients,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    let p_lap = FluxFunction::p_laplacian(c.p())?.with_delta_reg(c.flux.delta_reg);
    solve_resolvent(u0, u0, tau, &p_lap, &BFunction::identity(), settings)
}

/// One step of the semi-implicit scheme with right-hand side
/// `B(u_prev) + forcing·σ(u_prev)`.
pub fn implicit_step(
    u_prev: &Field,
    forcing: f64,
    tau: f64,
    c: &Coefficients,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    let rhs = u_prev.map(|r| c.b.eval(r) + forcing * c.sigma.eval(r));
    solve_resolvent(&rhs, u_prev, tau, &c.flux, &c.b, settings)
}

/// Knots `u_0..u_N` of a semi-implicit run plus the values `B(u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid1D,
    tau: f64,
    times: Vec<f64>,
    fields: Vec<Field>,
    b_fields: Vec<Field>,
    initial_report: SolveReport,
    reports: Vec<SolveReport>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.reports.len()
    }

    pub fn horizon(&self) -> f64 {
        self.tau * self.n_steps() as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn b_fields(&self) -> &[Field] {
        &self.b_fields
    }

    /// Report of the initial regularization (trivial when it was skipped).
    pub fn initial_report(&self) -> &SolveReport {
        &self.initial_report
    }

    /// Reports of steps `1..=N`.
    pub fn reports(&self) -> &[SolveReport] {
        &self.reports
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory has at least the initial knot")
    }

    fn interval(&self, t: f64) -> (usize, f64) {
        let n = self.n_steps();
        if n == 0 {
            return (0, 0.0);
        }
        let s = (t / self.tau).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        (k, s - k as f64)
    }

    /// Right-continuous step interpolant: `u_{k+1}` on `[t_k, t_{k+1})`.
    pub fn step_right(&self, t: f64) -> &Field {
        if self.n_steps() == 0 || t >= self.horizon() {
            return self.last();
        }
        let (k, _) = self.interval(t);
        &self.fields[k + 1]
    }

    /// Left-continuous step interpolant: `u_k` on `(t_k, t_{k+1}]`.
    pub fn step_left(&self, t: f64) -> &Field {
        if self.n_steps() == 0 || t <= 0.0 {
            return &self.fields[0];
        }
        let s = (t / self.tau).min(self.n_steps() as f64);
        let k = (s.ceil() as usize).max(1) - 1;
        &self.fields[k]
    }

    /// Piecewise-affine interpolant of `u`.
    pub fn affine_u(&self, t: f64) -> Field {
        affine(&self.fields, self.interval(t), self.n_steps())
    }

    /// Piecewise-affine interpolant of `B(u)`.
    pub fn affine_b(&self, t: f64) -> Field {
        affine(&self.b_fields, self.interval(t), self.n_steps())
    }
}

fn affine(knots: &[Field], (k, theta): (usize, f64), n: usize) -> Field {
    if n == 0 {
        return knots[0].clone();
    }
    knots[k].zip_with(&knots[k + 1], |a, b| a + theta * (b - a))
}

/// Runs `n_steps` semi-implicit steps; `forcing(k)` multiplies `σ(u_k)` in
/// the step producing `u_{k+1}`.
pub(crate) fn integrate(
    u0: &Field,
    n_steps: usize,
    tau: f64,
    c: &Coefficients,
    settings: &SolverSettings,
    mut forcing: impl FnMut(usize) -> f64,
) -> Result<Trajectory> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let (start, initial_report) = if settings.regularize_initial {
        regularize_initial(u0, tau, c, settings).map_err(|e| e.at_step(0))?
    } else {
        (u0.clone(), SolveReport::trivial())
    };
    let mut fields = Vec::with_capacity(n_steps + 1);
    let mut b_fields = Vec::with_capacity(n_steps + 1);
    let mut reports = Vec::with_capacity(n_steps);
    b_fields.push(c.apply_b(&start));
    fields.push(start);
    for k in 0..n_steps {
        let (next, report) = implicit_step(&fields[k], forcing(k), tau, c, settings)
            .map_err(|e| e.at_step(k + 1))?;
        b_fields.push(c.apply_b(&next));
        fields.push(next);
        reports.push(report);
    }
    Ok(Trajectory {
        grid: *u0.grid(),
        tau,
        times: (0..=n_steps).map(|k| k as f64 * tau).collect(),
        fields,
        b_fields,
        initial_report,
        reports,
    })
}

/// Deterministic controlled equation, forcing `τ h_{k+1}` at step `k + 1`.
pub fn solve_skeleton(
    u0: &Field,
    ctrl: &Control,
    c: &Coefficients,
    settings: &SolverSettings,
) -> Result<Trajectory> {
    let tau = ctrl.tau();
    integrate(u0, ctrl.n_steps(), tau, c, settings, |k| tau * ctrl.value(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEntry {
    pub i: usize,
    pub j: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max_k ‖B(u_k)‖²`.
    pub sup_b_l2_sq: f64,
    /// `Σ ‖B(u_{k+1}) − B(u_k)‖²`.
    pub jump_sum_sq: f64,
    /// `τ Σ ‖∇u_{k+1}‖ᵖ_p`.
    pub gradient_energy: f64,
    /// `τ Σ ‖∇B(u_{k+1})‖ᵖ_p`.
    pub b_gradient_energy: f64,
    /// `τ Σ ‖A(∇u_{k+1})‖^{p′}_{p′}`.
    pub flux_energy: f64,
    pub holder_exponent: f64,
    pub holder_max: f64,
    /// `‖B̃(t_j) − B̃(t_i)‖_{H⁻¹} / |t_j − t_i|^β` over knot pairs `i < j`.
    pub holder_table: Vec<HolderEntry>,
}

pub fn apriori_report(traj: &Trajectory, c: &Coefficients, holder_exponent: f64) -> Diagnostics {
    let p = c.p();
    let pc = c.flux.conjugate_exponent();
    let tau = traj.tau();
    let bs = traj.b_fields();
    let l2sq = |f: &Field| f.dot(f);

    let sup_b_l2_sq = bs.iter().map(l2sq).fold(0.0, f64::max);
    let jump_sum_sq = bs.windows(2).map(|w| l2sq(&w[1].sub(&w[0]))).sum();
    let mut gradient_energy = 0.0;
    let mut b_gradient_energy = 0.0;
    let mut flux_energy = 0.0;
    for (u, bu) in traj.fields().iter().zip(bs).skip(1) {
        let g = gradient(u);
        gradient_energy += tau * edge_norm_lq(&g, p).expect("p >= 2").powf(p);
        b_gradient_energy += tau * edge_norm_lq(&gradient(bu), p).expect("p >= 2").powf(p);
        flux_energy += tau * edge_norm_lq(&apply_flux(c, &g), pc).expect("p' >= 1").powf(pc);
    }

    let mut holder_table = Vec::new();
    let mut holder_max: f64 = 0.0;
    for i in 0..bs.len() {
        for j in i + 1..bs.len() {
            let dt = traj.times()[j] - traj.times()[i];
            let ratio = dual_norm_h1(&bs[j].sub(&bs[i])) / dt.powf(holder_exponent);
            holder_max = holder_max.max(ratio);
            holder_table.push(HolderEntry { i, j, ratio });
        }
    }
    Diagnostics {
        sup_b_l2_sq,
        jump_sum_sq,
        gradient_energy,
        b_gradient_energy,
        flux_energy,
        holder_exponent,
        holder_max,
        holder_table,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl EnergyBalance {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Discrete energy law for an unforced run with `K₁ = 0`:
/// `½‖B(u_n)‖² + ½Σ jumps² + τC₁C₃ Σ‖∇u_{k+1}‖ᵖ ≤ ½‖B(u_0)‖² + 10·n·tol`.
pub fn energy_balance(traj: &Trajectory, c: &Coefficients, newton_tol: f64) -> Vec<EnergyBalance> {
    let p = c.p();
    let tau = traj.tau();
    let bs = traj.b_fields();
    let e0 = 0.5 * bs[0].dot(&bs[0]);
    let mut jumps = 0.0;
    let mut dissipation = 0.0;
    (1..bs.len())
        .map(|n| {
            let d = bs[n].sub(&bs[n - 1]);
            jumps += 0.5 * d.dot(&d);
            let g = edge_norm_lq(&gradient(&traj.fields()[n]), p).expect("p >= 2");
            dissipation += tau * c.flux.c1 * c.b.c3 * g.powf(p);
            EnergyBalance {
                step: n,
                lhs: 0.5 * bs[n].dot(&bs[n]) + jumps + dissipation,
                rhs: e0 + n as f64 * 10.0 * newton_tol,
            }
        })
        .collect()
}

/// `‖B(u¹_k) − B(u²_k)‖_{L¹} / ‖B(u¹_0) − B(u²_0)‖_{L¹}` for every knot.
pub fn l1_stability_ratios(a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    let l1 = |x: &Field, y: &Field| norm_lq(&x.sub(y), 1.0).expect("q = 1");
    let d0 = l1(&a.b_fields()[0], &b.b_fields()[0]);
    a.b_fields()
        .iter()
        .zip(b.b_fields())
        .map(|(x, y)| l1(x, y) / d0)
        .collect()
}

/// `sup_k ‖B(u_k) − B(w_k)‖_{L²}` over shared knots.
pub fn sup_b_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.b_fields()
        .iter()
        .zip(b.b_fields())
        .map(|(x, y)| {
            let d = x.sub(y);
            d.dot(&d).sqrt()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub frequency: u32,
    pub sup_distance: f64,
}

/// Solves the skeleton equation for `h_n(t) = h(t) + sin(2πnt)` and measures
/// the distance to the solution driven by `h` itself.
#[allow(clippy::too_many_arguments)]
pub fn continuity_experiment(
    base: impl Fn(f64) -> f64 + Sync,
    frequencies: &[u32],
    horizon: f64,
    n_steps: usize,
    c: &Coefficients,
    u0: &Field,
    settings: &SolverSettings,
    pool: &WorkerPool,
) -> Result<Vec<ContinuityRow>> {
    let reference = solve_skeleton(u0, &project_control(&base, horizon, n_steps)?, c, settings)?;
    pool.map_indexed(frequencies.len(), |i| {
        let n = frequencies[i];
        let omega = 2.0 * std::f64::consts::PI * n as f64;
        let ctrl = project_control(|t| base(t) + (omega * t).sin(), horizon, n_steps)?;
        let traj = solve_skeleton(u0, &ctrl, c, settings)?;
        Ok(ContinuityRow {
            frequency: n,
            sup_distance: sup_b_distance(&traj, &reference),
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::NoiseFunction;
    use crate::grid::seminorm_w1p;

    fn linear_heat() -> Coefficients {
        Coefficients::new(
            FluxFunction::p_laplacian(2.0).unwrap(),
            BFunction::identity(),
            NoiseFunction::zero(),
        )
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_state_is_fixed() {
        let c = Coefficients::default();
        let z = Grid1D::unit(5).zeros();
        let (u, rep) = implicit_step(&z, 0.0, 0.1, &c, &SolverSettings::default()).unwrap();
        assert_eq!(u, z);
        assert_eq!(rep.residual, 0.0);
        let (w, rep) = regularize_initial(&z, 0.1, &c, &SolverSettings::default()).unwrap();
        assert_eq!(w, z);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn scalar_linear_resolvent() {
        let c = linear_heat();
        let u = Field::new(Grid1D::unit(1), vec![1.0]).unwrap();
        let (next, rep) = implicit_step(&u, 0.0, 0.1, &c, &SolverSettings::default()).unwrap();
        assert!((next.values()[0] - 1.0 / 1.8).abs() < 1e-12, "{next:?} {rep:?}");
        assert!(rep.converged && rep.residual <= DEFAULT_NEWTON_TOL);
    }

    #[test]
    fn scalar_wave_p4_step_matches_bisection() {
        let c = Coefficients {
            sigma: NoiseFunction::zero(),
            ..Coefficients::default()
        };
        let tau = 0.1;
        let u = Field::new(Grid1D::unit(1), vec![1.0]).unwrap();
        // h = 1/2: edge slopes ±2w, flux ±8w³, divergence −32w³.
        let target = c.b.eval(1.0);
        let oracle = bisect(|w| c.b.eval(w) + tau * 32.0 * w * w * w - target, 0.0, 1.0);
        let tight = SolverSettings::default().with_tol(1e-14);
        let (next, _) = implicit_step(&u, 0.0, tau, &c, &tight).unwrap();
        assert!((next.values()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn scalar_regularization_matches_bisection() {
        let c = Coefficients::default();
        let u0 = Field::new(Grid1D::unit(1), vec![1.0]).unwrap();
        let oracle = bisect(|w| w + 0.1 * 32.0 * w * w * w - 1.0, 0.0, 1.0);
        let tight = SolverSettings::default().with_tol(1e-14);
        let (w, _) = regularize_initial(&u0, 0.1, &c, &tight).unwrap();
        assert!((w.values()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn p2_regularization_matches_tridiagonal_solve() {
        let grid = Grid1D::unit(32);
        let tau = 0.01;
        let u0 = grid.sample(|x| x * (1.0 - x) * (3.0 * x).cos());
        let h2 = grid.spacing().powi(2);
        let off = vec![-tau / h2; 31];
        let diag = vec![1.0 + 2.0 * tau / h2; 32];
        let oracle = solve_tridiagonal(&off, &diag, &off, u0.values());
        let (w, _) = regularize_initial(&u0, tau, &linear_heat(), &SolverSettings::default()).unwrap();
        for (a, b) in w.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn regularization_energy_bound() {
        let grid = Grid1D::unit(32);
        let c = Coefficients::default();
        let u0 = grid.sample(|x| 2.0 * (std::f64::consts::PI * x).sin() + (7.0 * x).sin());
        let tau = 0.05;
        let (w, rep) = regularize_initial(&u0, tau, &c, &SolverSettings::default()).unwrap();
        let lhs = 0.5 * w.dot(&w) + tau * seminorm_w1p(&w, 4.0).unwrap().powi(4);
        assert!(lhs <= 0.5 * u0.dot(&u0) + 1e-9);
        assert!(rep.residual <= DEFAULT_NEWTON_TOL);
    }

    #[test]
    fn projection_examples() {
        let c = project_control(|_| 1.5, 2.0, 5).unwrap();
        assert!(c.values().iter().all(|&v| (v - 1.5).abs() < 1e-14));

        let c = project_control(|t| t, 1.0, 2).unwrap();
        assert!((c.values()[0] - 0.25).abs() < 1e-14);
        assert!((c.values()[1] - 0.75).abs() < 1e-14);
        assert!((c.energy() - 0.5 * 0.3125).abs() < 1e-14);
        assert!(2.0 * c.energy() <= 1.0 / 3.0);
        assert!(project_control(|t| t, 1.0, 0).is_err());
    }

    #[test]
    fn projection_error_halves() {
        let h = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
        // Error measured with a fine midpoint rule on each cell.
        let err = |n: usize| {
            let ctrl = project_control(h, 1.0, n).unwrap();
            let m = 256;
            let dt = ctrl.tau() / m as f64;
            let mut s = 0.0;
            for k in 0..n {
                for j in 0..m {
                    let t = k as f64 * ctrl.tau() + (j as f64 + 0.5) * dt;
                    s += dt * (ctrl.value(k) - h(t)).powi(2);
                }
            }
            s.sqrt()
        };
        let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| err(n)).collect();
        for w in errs.windows(2) {
            let r = w[1] / w[0];
            assert!((r - 0.5).abs() < 0.05, "ratio {r}");
        }
    }

    #[test]
    fn interpolants() {
        let c = linear_heat();
        let grid = Grid1D::unit(4);
        let u0 = grid.sample(|x| x * (1.0 - x));
        let ctrl = Control::zero(1.0, 4).unwrap();
        let traj = solve_skeleton(&u0, &ctrl, &c, &SolverSettings::default()).unwrap();
        let f = traj.fields();
        assert_eq!(traj.step_right(0.0), &f[1]);
        assert_eq!(traj.step_right(0.3), &f[2]);
        assert_eq!(traj.step_right(1.0), &f[4]);
        assert_eq!(traj.step_left(0.0), &f[0]);
        assert_eq!(traj.step_left(0.25), &f[0]);
        assert_eq!(traj.step_left(0.3), &f[1]);
        assert_eq!(traj.step_left(1.0), &f[3]);
        let mid = traj.affine_u(0.375);
        for i in 0..4 {
            let expect = 0.5 * (f[1].values()[i] + f[2].values()[i]);
            assert!((mid.values()[i] - expect).abs() < 1e-15);
        }
        assert_eq!(&traj.affine_b(1.0), &traj.b_fields()[4]);
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(8);
        let ctrl = Control::constant(1.0, 10, 3.0).unwrap();
        let traj = solve_skeleton(&grid.zeros(), &ctrl, &c, &SolverSettings::default()).unwrap();
        assert!(traj.fields().iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
        let d = apriori_report(&traj, &c, 0.2);
        assert_eq!(d.sup_b_l2_sq, 0.0);
        assert_eq!(d.jump_sum_sq, 0.0);
        assert_eq!(d.gradient_energy, 0.0);
        assert_eq!(d.flux_energy, 0.0);
        assert_eq!(d.holder_max, 0.0);
    }

    #[test]
    fn energy_law_unforced_p4() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(24);
        let u0 = grid.sample(|x| (std::f64::consts::PI * x).sin());
        let ctrl = Control::zero(0.2, 40).unwrap();
        let settings = SolverSettings::default();
        let traj = solve_skeleton(&u0, &ctrl, &c, &settings).unwrap();
        for row in energy_balance(&traj, &c, settings.newton_tol) {
            assert!(row.holds(), "{row:?}");
        }
        for w in traj.b_fields().windows(2) {
            assert!(w[1].dot(&w[1]).sqrt() <= w[0].dot(&w[0]).sqrt() + 10.0 * settings.newton_tol);
        }
        assert!(traj.reports().iter().all(|r| r.converged && r.residual <= settings.newton_tol));
    }

    #[test]
    fn reverse_bound_along_trajectories() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(16);
        let ctrl = Control::constant(0.5, 20, 1.0).unwrap();
        let s = SolverSettings::default();
        let a = solve_skeleton(&grid.sample(|x| (3.0 * x).sin()), &ctrl, &c, &s).unwrap();
        let b = solve_skeleton(&grid.sample(|x| x * (1.0 - x)), &ctrl, &c, &s).unwrap();
        for k in 0..=20 {
            let du = a.fields()[k].sub(&b.fields()[k]);
            let db = a.b_fields()[k].sub(&b.b_fields()[k]);
            assert!(du.dot(&du).sqrt() <= db.dot(&db).sqrt() / c.b.c3 + 1e-12);
        }
    }

    #[test]
    fn continuity_identical_control_is_exact() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(8);
        let u0 = grid.sample(|x| (std::f64::consts::PI * x).sin());
        let rows = continuity_experiment(
            |_| 0.5,
            &[0],
            1.0,
            16,
            &c,
            &u0,
            &SolverSettings::default(),
            &WorkerPool::sequential(),
        )
        .unwrap();
        assert_eq!(rows[0].sup_distance, 0.0);
    }

    #[test]
    fn stiff_forcing_surfaces_as_error_or_converges() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(8);
        let u0 = grid.sample(|x| (std::f64::consts::PI * x).sin());
        let ctrl = Control::constant(1.0, 4, 1e3).unwrap();
        match solve_skeleton(&u0, &ctrl, &c, &SolverSettings::default()) {
            Ok(traj) => assert!(traj.reports().iter().all(|r| r.residual <= DEFAULT_NEWTON_TOL)),
            Err(e) => assert!(matches!(e, Error::StepFailed { .. })),
        }
    }
}
