//! Invariant-measure diagnostics: the dissipativity margin, Cesàro averages
//! of bounded observables along a long path, the time-averaged moment bound
//! and a Monte Carlo estimator of the transition semigroup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coefficients::Coefficients;
use crate::dynamics::{SolverSettings, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{seminorm_w1p, Field, Grid1D};
use crate::montecarlo::{check_failures, map_paths, sample_path, solve_spde, EnsembleConfig, Estimate};
use crate::parallel::WorkerPool;

fn l2_norm(u: &Field) -> f64 {
    u.dot(u).sqrt()
}

/// `(2C₁C₃‖∇u‖ᵖ_p − ‖σ(u)‖²) / ‖u‖ᵖ`.
pub fn dissipativity_ratio(c: &Coefficients, u: &Field) -> f64 {
    let p = c.p();
    let grad = seminorm_w1p(u, p).expect("flux exponent >= 2").powf(p);
    let s = c.apply_sigma(u);
    let num = 2.0 * c.flux.c1 * c.b.c3 * grad - s.dot(&s);
    num / l2_norm(u).powf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub sample_count: usize,
    pub seed: u64,
    /// Largest `δ` with every sampled margin nonnegative, clamped at 0.
    pub delta_hat: f64,
    pub min_ratio: f64,
    /// `2C₁C₃‖∇u‖ᵖ − ‖σ(u)‖² − δ̂‖u‖ᵖ` per sample.
    pub margins: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub passed: bool,
    /// Nodal values of the worst sample when the check fails.
    pub witness: Option<Vec<f64>>,
}

/// Random nonzero field: a few sine modes with decaying weights, sometimes
/// with nodal noise, normalized to unit `L²` norm.
fn random_shape(grid: &Grid1D, rng: &mut ChaCha8Rng) -> Field {
    let modes = grid.n_interior().min(8);
    let coeffs: Vec<f64> = (1..=modes)
        .map(|k| rng.sample::<f64, _>(StandardNormal) / k as f64)
        .collect();
    let rough = rng.random::<f64>() < 0.25;
    let l = grid.length();
    let f = grid.sample(|x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x / l).sin())
            .sum()
    });
    let f = if rough {
        let noisy = f.values().iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        Field::new(*grid, noisy).expect("finite samples")
    } else {
        f
    };
    let n = l2_norm(&f);
    if n > 0.0 {
        f.scaled(1.0 / n)
    } else {
        grid.sample(|x| (std::f64::consts::PI * x / l).sin())
    }
}

/// Samples the margin on random fields at amplitudes `10^[−3, 3]`.
pub fn check_dissipativity(c: &Coefficients, sample_count: usize, seed: u64, grid: Grid1D) -> Result<DissipativityReport> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = c.p();
    let mut fields = Vec::with_capacity(sample_count);
    let mut amplitudes = Vec::with_capacity(sample_count);
    let mut ratios = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let amp = 10f64.powf(rng.random_range(-3.0..3.0));
        let u = random_shape(&grid, &mut rng).scaled(amp);
        ratios.push(dissipativity_ratio(c, &u));
        amplitudes.push(amp);
        fields.push(u);
    }
    let (worst, min_ratio) = ratios
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |(i, m), (j, r)| if r < m { (j, r) } else { (i, m) });
    let delta_hat = min_ratio.max(0.0);
    let margins = fields
        .iter()
        .zip(&ratios)
        .map(|(u, r)| (r - delta_hat) * l2_norm(u).powf(p))
        .collect();
    let passed = delta_hat > 0.0;
    Ok(DissipativityReport {
        sample_count,
        seed,
        delta_hat,
        min_ratio,
        margins,
        amplitudes,
        passed,
        witness: (!passed).then(|| fields[worst].values().to_vec()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableKind {
    /// `exp(−‖B(u) − c‖²)`.
    Bump { center: Field },
    /// `min(‖B(u)‖, cap) / cap`.
    ClippedNorm { cap: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub id: String,
    pub kind: ObservableKind,
}

impl Observable {
    /// Evaluates the observable at `B(u)`; values lie in `[0, 1]`.
    pub fn eval(&self, b: &Field) -> f64 {
        match &self.kind {
            ObservableKind::Bump { center } => {
                let d = b.sub(center);
                (-d.dot(&d)).exp()
            }
            ObservableKind::ClippedNorm { cap } => l2_norm(b).min(*cap) / cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableBattery {
    items: Vec<Observable>,
}

impl ObservableBattery {
    pub fn new(items: Vec<Observable>) -> Self {
        Self { items }
    }

    /// Bumps centered at `a·sin(πx/L)` for `a ∈ {0, 0.25, 0.5, 1}` and the
    /// norm clipped at 1.
    pub fn standard(grid: Grid1D) -> Self {
        let l = grid.length();
        let mut items: Vec<Observable> = [0.0, 0.25, 0.5, 1.0]
            .iter()
            .map(|&a| Observable {
                id: format!("bump_{a}"),
                kind: ObservableKind::Bump {
                    center: grid.sample(|x| a * (std::f64::consts::PI * x / l).sin()),
                },
            })
            .collect();
        items.push(Observable {
            id: "clip_norm".into(),
            kind: ObservableKind::ClippedNorm { cap: 1.0 },
        });
        Self { items }
    }

    pub fn items(&self) -> &[Observable] {
        &self.items
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|o| o.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&Observable> {
        self.items
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::UnknownObservable(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunConfig {
    pub t_long: f64,
    pub window: f64,
    pub steps_per_window: usize,
    pub seed: u64,
    pub settings: SolverSettings,
}

impl LongRunConfig {
    pub fn tau(&self) -> f64 {
        self.window / self.steps_per_window as f64
    }

    pub fn n_windows(&self) -> usize {
        (self.t_long / self.window).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.t_long >= self.window && self.steps_per_window > 0) {
            return Err(Error::InvalidArgument(
                "long run needs window > 0, T_long >= window and steps per window >= 1".into(),
            ));
        }
        let w = self.t_long / self.window;
        if (w - w.round()).abs() > 1e-9 * w {
            return Err(Error::InvalidArgument(format!(
                "T_long {} is not a multiple of the window {}",
                self.t_long, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSummary {
    pub window: f64,
    pub tau: f64,
    pub observable_ids: Vec<String>,
    /// `cesaro[w][j]`: average of observable `j` over `[0, (w + 1)·window]`.
    pub cesaro: Vec<Vec<f64>>,
    /// Averages over the single window `w`.
    pub window_means: Vec<Vec<f64>>,
    /// `|cesaro[w] − cesaro[w − 1]|`, absent for the first window.
    pub discrepancy_prev: Vec<Vec<Option<f64>>>,
    pub warning: Option<String>,
}

impl OccupationSummary {
    pub const CSV_HEADER: &'static str = "window_index,observable_id,average,discrepancy_prev";

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (w, avgs) in self.cesaro.iter().enumerate() {
            for (j, id) in self.observable_ids.iter().enumerate() {
                let d = self.discrepancy_prev[w][j].map_or(String::new(), |d| format!("{d:?}"));
                rows.push(format!("{w},{id},{:?},{d}", avgs[j]));
            }
        }
        rows
    }

    pub fn n_windows(&self) -> usize {
        self.cesaro.len()
    }

    /// Largest discrepancy over observables at window `w ≥ 1`.
    pub fn max_discrepancy(&self, w: usize) -> f64 {
        self.discrepancy_prev[w]
            .iter()
            .map(|d| d.unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Batch-means standard error of observable `j`, discarding the first
    /// half of the windows as burn-in.
    pub fn standard_error(&self, j: usize) -> f64 {
        let skip = self.window_means.len() / 2;
        let xs: Vec<f64> = self.window_means[skip..].iter().map(|m| m[j]).collect();
        Estimate::from_samples(&xs).std_error
    }

    pub fn final_averages(&self) -> &[f64] {
        self.cesaro.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Cesàro averages of the battery along the knots of a trajectory, using
/// `τ Σ_{k=1}^{K} φ(B(u_k))`.
pub fn occupation_summary(traj: &Trajectory, battery: &ObservableBattery, steps_per_window: usize) -> Result<OccupationSummary> {
    if steps_per_window == 0 || !traj.n_steps().is_multiple_of(steps_per_window) || traj.n_steps() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} steps do not split into windows of {}",
            traj.n_steps(),
            steps_per_window
        )));
    }
    let n_obs = battery.items().len();
    let n_windows = traj.n_steps() / steps_per_window;
    let mut window_means = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut sums = vec![0.0; n_obs];
        for k in (w * steps_per_window + 1)..=((w + 1) * steps_per_window) {
            let b = &traj.b_fields()[k];
            for (s, obs) in sums.iter_mut().zip(battery.items()) {
                *s += obs.eval(b);
            }
        }
        window_means.push(sums.into_iter().map(|s| s / steps_per_window as f64).collect::<Vec<_>>());
    }
    let mut cesaro: Vec<Vec<f64>> = Vec::with_capacity(n_windows);
    let mut running = vec![0.0; n_obs];
    for (w, m) in window_means.iter().enumerate() {
        for (r, x) in running.iter_mut().zip(m) {
            *r += x;
        }
        cesaro.push(running.iter().map(|r| r / (w + 1) as f64).collect());
    }
    let discrepancy_prev = (0..n_windows)
        .map(|w| {
            (0..n_obs)
                .map(|j| (w > 0).then(|| (cesaro[w][j] - cesaro[w - 1][j]).abs()))
                .collect()
        })
        .collect();
    Ok(OccupationSummary {
        window: steps_per_window as f64 * traj.tau(),
        tau: traj.tau(),
        observable_ids: battery.ids(),
        cesaro,
        window_means,
        discrepancy_prev,
        warning: None,
    })
}

fn with_time(e: Error, tau: f64) -> Error {
    let time = e.failed_step().map_or(f64::NAN, |k| k as f64 * tau);
    Error::AtTime {
        time,
        source: Box::new(e),
    }
}

/// One `ε = 1` path over `[0, T_long]` and its occupation averages.
pub fn long_run(
    u0: &Field,
    c: &Coefficients,
    run: &LongRunConfig,
    battery: &ObservableBattery,
) -> Result<(OccupationSummary, Trajectory)> {
    run.validate()?;
    let tau = run.tau();
    let n_steps = run.n_windows() * run.steps_per_window;
    let path = sample_path(run.seed, n_steps, tau)?;
    let traj = solve_spde(u0, 1.0, &path, None, c, &run.settings).map_err(|e| with_time(e, tau))?;
    let mut summary = occupation_summary(&traj, battery, run.steps_per_window)?;
    let diss = check_dissipativity(c, 256, run.seed, *u0.grid())?;
    if !diss.passed {
        summary.warning = Some(format!(
            "dissipativity not observed on 256 samples (min ratio {:e})",
            diss.min_ratio
        ));
    }
    Ok((summary, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundReport {
    /// Time average of `‖u‖ᵖ`, averaged over paths for ensembles.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `(1/δ)(2K₁L + ‖u₀‖²/T)`.
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

/// `(1/T) τ Σ_{k=1}^{N} ‖u_k‖ᵖ`.
pub fn time_average_moment(traj: &Trajectory, p: f64) -> f64 {
    let sum: f64 = traj.fields().iter().skip(1).map(|u| l2_norm(u).powf(p)).sum();
    traj.tau() * sum / traj.horizon()
}

pub fn moment_bound_rhs(c: &Coefficients, delta: f64, u0: &Field, horizon: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    let k1_l1 = c.flux.k1 * u0.grid().length();
    Ok((2.0 * k1_l1 + u0.dot(u0) / horizon) / delta)
}

pub fn moment_bound_check(traj: &Trajectory, c: &Coefficients, delta: f64, u0: &Field, slack: f64) -> Result<MomentBoundReport> {
    let rhs = moment_bound_rhs(c, delta, u0, traj.horizon())?;
    let lhs = time_average_moment(traj, c.p());
    Ok(MomentBoundReport {
        lhs,
        lhs_std_error: 0.0,
        rhs,
        slack,
        passed: lhs <= rhs * (1.0 + slack),
    })
}

/// Path average of the time-averaged moment at `ε = 1`.
pub fn ensemble_moment_bound(
    cfg: &EnsembleConfig,
    delta: f64,
    slack: f64,
    pool: &WorkerPool,
) -> Result<MomentBoundReport> {
    let rhs = moment_bound_rhs(&cfg.coefficients, delta, &cfg.u0, cfg.horizon)?;
    let p = cfg.coefficients.p();
    let results = map_paths(cfg, pool, |_, traj| time_average_moment(traj, p))?;
    check_failures(&results)?;
    let xs: Vec<f64> = results.into_iter().filter_map(|r| r.ok()).collect();
    let est = Estimate::from_samples(&xs);
    Ok(MomentBoundReport {
        lhs: est.mean,
        lhs_std_error: est.std_error,
        rhs,
        slack,
        passed: est.mean <= rhs * (1.0 + slack),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupQuery<'a> {
    pub battery: &'a ObservableBattery,
    pub observable: &'a str,
    pub t: f64,
    pub tau: f64,
    pub paths: usize,
    pub base_seed: u64,
    pub settings: SolverSettings,
}

/// Monte Carlo estimate of `E[φ(B(u(t; v)))]` at `ε = 1`.
pub fn semigroup_estimate(q: &SemigroupQuery, v: &Field, c: &Coefficients, pool: &WorkerPool) -> Result<Estimate> {
    let obs = q.battery.get(q.observable)?;
    if !(q.t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {}", q.t)));
    }
    if q.t == 0.0 {
        return Ok(Estimate {
            mean: obs.eval(&c.apply_b(v)),
            std_error: 0.0,
            samples: q.paths,
        });
    }
    let n_steps = ((q.t / q.tau).round() as usize).max(1);
    let cfg = EnsembleConfig {
        u0: v.clone(),
        coefficients: *c,
        horizon: q.t,
        n_steps,
        eps: 1.0,
        paths: q.paths,
        base_seed: q.base_seed,
        shift: None,
        settings: q.settings,
    };
    let results = map_paths(&cfg, pool, |_, traj| obs.eval(traj.b_fields().last().expect("knots")))?;
    check_failures(&results)?;
    let xs: Vec<f64> = results.into_iter().filter_map(|r| r.ok()).collect();
    Ok(Estimate::from_samples(&xs))
}
