//! Brownian paths, the small-noise equation and ensemble moments.
//!
//! Increments come from a counter-based generator: increment `k` of the path
//! with seed `s` is a pure function of `(s, k)`, so paths can be evaluated on
//! any number of workers, in any order, with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coefficients::Coefficients;
use crate::dynamics::{integrate, solve_skeleton, sup_b_distance, Control, SolverSettings, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{seminorm_w1p, Field};
use crate::parallel::WorkerPool;

/// Standard normal draw keyed on `(seed, counter)`.
pub fn standard_normal(seed: u64, counter: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    StandardNormal.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    seed: u64,
    tau: f64,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_k)` for `k = 0..=N`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }
}

/// `N` independent `N(0, τ)` increments.
pub fn sample_path(seed: u64, n_steps: usize, tau: f64) -> Result<NoisePath> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let scale = tau.sqrt();
    Ok(NoisePath {
        seed,
        tau,
        increments: (0..n_steps as u64)
            .map(|k| scale * standard_normal(seed, k))
            .collect(),
    })
}

/// Semi-implicit scheme for the noisy equation, optionally shifted by a
/// control: the step producing `u_{k+1}` is forced by
/// `(τ h_{k+1} + √ε ΔW_{k+1}) σ(u_k)`.
pub fn solve_spde(
    u0: &Field,
    eps: f64,
    path: &NoisePath,
    shift: Option<&Control>,
    c: &Coefficients,
    settings: &SolverSettings,
) -> Result<Trajectory> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise intensity must be >= 0, got {eps}")));
    }
    let tau = path.tau();
    if let Some(h) = shift {
        if h.n_steps() != path.n_steps() || (h.tau() - tau).abs() > 1e-12 * tau {
            return Err(Error::InvalidArgument(format!(
                "shift has {} steps of {}, path has {} steps of {}",
                h.n_steps(),
                h.tau(),
                path.n_steps(),
                tau
            )));
        }
    }
    let amp = eps.sqrt();
    let dw = path.increments();
    integrate(u0, path.n_steps(), tau, c, settings, |k| {
        let drift = shift.map_or(0.0, |h| tau * h.value(k));
        drift + amp * dw[k]
    })
    .map_err(|e| e.on_path(path.seed()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub u0: Field,
    pub coefficients: Coefficients,
    pub horizon: f64,
    pub n_steps: usize,
    pub eps: f64,
    pub paths: usize,
    pub base_seed: u64,
    pub shift: Option<Control>,
    pub settings: SolverSettings,
}

impl EnsembleConfig {
    pub fn new(u0: Field, coefficients: Coefficients, horizon: f64, n_steps: usize) -> Self {
        Self {
            u0,
            coefficients,
            horizon,
            n_steps,
            eps: 1.0,
            paths: 1,
            base_seed: 0,
            shift: None,
            settings: SolverSettings::default(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Seed of path `index`.
    pub fn path_seed(&self, index: usize) -> u64 {
        self.base_seed ^ index as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be >= 0, got {}", self.eps)));
        }
        if self.n_steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon and step count must be positive".into()));
        }
        Ok(())
    }

    /// Noise-free solution with the same shift.
    pub fn deterministic_trajectory(&self) -> Result<Trajectory> {
        let zero;
        let ctrl = match &self.shift {
            Some(h) => h,
            None => {
                zero = Control::zero(self.horizon, self.n_steps)?;
                &zero
            }
        };
        solve_skeleton(&self.u0, ctrl, &self.coefficients, &self.settings)
    }
}

/// Runs every path of the ensemble and hands each trajectory to `f`.
/// Results come back in path order; failures are kept as errors.
pub fn map_paths<T, F>(cfg: &EnsembleConfig, pool: &WorkerPool, f: F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(usize, &Trajectory) -> T + Sync + Send,
{
    cfg.validate()?;
    let tau = cfg.tau();
    Ok(pool.map_indexed(cfg.paths, |i| {
        let path = sample_path(cfg.path_seed(i), cfg.n_steps, tau)?;
        let traj = solve_spde(
            &cfg.u0,
            cfg.eps,
            &path,
            cfg.shift.as_ref(),
            &cfg.coefficients,
            &cfg.settings,
        )?;
        Ok(f(i, &traj))
    }))
}

/// Fails the whole ensemble when more than 10% of the paths failed.
pub fn check_failures<T>(results: &[Result<T>]) -> Result<usize> {
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed * 10 > results.len() {
        return Err(Error::EnsembleFailed {
            failed,
            total: results.len(),
        });
    }
    Ok(failed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// Sample mean and standard error, accumulated in slice order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_index: usize,
    pub seed: u64,
    pub sup_b_l2_sq: f64,
    pub sup_b_l2_4: f64,
    /// `(τ Σ ‖∇v_{k+1}‖ᵖ_p)²`.
    pub int_w1p_p_sq: f64,
    /// `sup_k ‖B(v_k) − B(v⁰_k)‖²` against the noise-free run.
    pub sup_dev_sq: f64,
    pub converged: bool,
}

impl PathSummary {
    pub const CSV_HEADER: &'static str =
        "path_index,seed,sup_B_l2_sq,sup_B_l2_4,int_w1p_p_sq,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{}",
            self.path_index, self.seed, self.sup_b_l2_sq, self.sup_b_l2_4, self.int_w1p_p_sq, self.converged
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub eps: f64,
    pub paths: usize,
    pub failed_paths: usize,
    pub sup_b_l2_sq: Estimate,
    pub sup_b_l2_4: Estimate,
    pub int_w1p_p_sq: Estimate,
    pub sup_dev_sq: Estimate,
}

fn summarize(i: usize, seed: u64, traj: &Trajectory, reference: &Trajectory, p: f64) -> PathSummary {
    let sup_sq = traj
        .b_fields()
        .iter()
        .map(|b| b.dot(b))
        .fold(0.0, f64::max);
    let int_w1p: f64 = traj
        .fields()
        .iter()
        .skip(1)
        .map(|u| traj.tau() * seminorm_w1p(u, p).expect("p >= 2").powf(p))
        .sum();
    let dev = sup_b_distance(traj, reference);
    PathSummary {
        path_index: i,
        seed,
        sup_b_l2_sq: sup_sq,
        sup_b_l2_4: sup_sq * sup_sq,
        int_w1p_p_sq: int_w1p * int_w1p,
        sup_dev_sq: dev * dev,
        converged: true,
    }
}

/// Per-path functionals and their moments. Failed paths are listed with
/// `converged = false` and excluded from the moments.
pub fn ensemble_stats(cfg: &EnsembleConfig, pool: &WorkerPool) -> Result<(MomentReport, Vec<PathSummary>)> {
    let reference = cfg.deterministic_trajectory()?;
    let p = cfg.coefficients.p();
    let results = map_paths(cfg, pool, |i, traj| {
        summarize(i, cfg.path_seed(i), traj, &reference, p)
    })?;
    let failed = check_failures(&results)?;
    let rows: Vec<PathSummary> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or(PathSummary {
                path_index: i,
                seed: cfg.path_seed(i),
                sup_b_l2_sq: f64::NAN,
                sup_b_l2_4: f64::NAN,
                int_w1p_p_sq: f64::NAN,
                sup_dev_sq: f64::NAN,
                converged: false,
            })
        })
        .collect();
    let ok: Vec<&PathSummary> = rows.iter().filter(|r| r.converged).collect();
    let collect = |f: fn(&PathSummary) -> f64| Estimate::from_samples(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    let report = MomentReport {
        eps: cfg.eps,
        paths: cfg.paths,
        failed_paths: failed,
        sup_b_l2_sq: collect(|r| r.sup_b_l2_sq),
        sup_b_l2_4: collect(|r| r.sup_b_l2_4),
        int_w1p_p_sq: collect(|r| r.int_w1p_p_sq),
        sup_dev_sq: collect(|r| r.sup_dev_sq),
    };
    Ok((report, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BFunction, FluxFunction, NoiseFunction};
    use crate::grid::Grid1D;

    #[test]
    fn empty_and_deterministic_paths() {
        assert_eq!(sample_path(3, 0, 0.1).unwrap().n_steps(), 0);
        let a = sample_path(42, 100, 0.01).unwrap();
        let b = sample_path(42, 100, 0.01).unwrap();
        assert_eq!(a, b);
        let c = sample_path(43, 100, 0.01).unwrap();
        assert_ne!(a.increments(), c.increments());
        // Any increment is recomputable in isolation.
        assert_eq!(a.increments()[57], 0.1 * standard_normal(42, 57));
        assert!(sample_path(1, 10, 0.0).is_err());
    }

    #[test]
    fn increment_variance() {
        let tau = 1e-3;
        let n = 100_000;
        let path = sample_path(7, n, tau).unwrap();
        let xs = path.increments();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of the sample variance of N(0, τ) data is 2τ²/(n−1).
        let se = (2.0 * tau * tau / (n - 1) as f64).sqrt();
        assert!((var - tau).abs() < 3.0 * se, "var {var}");
        assert!(mean.abs() < 3.0 * (tau / n as f64).sqrt());
    }

    fn scalar_linear(c_sigma: f64) -> Coefficients {
        Coefficients::new(
            FluxFunction::p_laplacian(2.0).unwrap(),
            BFunction::identity(),
            NoiseFunction::linear(c_sigma),
        )
    }

    #[test]
    fn scalar_recurrence() {
        let c = scalar_linear(0.8);
        let eps: f64 = 0.3;
        let tau = 0.05;
        let u0 = Field::new(Grid1D::unit(1), vec![1.3]).unwrap();
        let path = sample_path(9, 40, tau).unwrap();
        let traj = solve_spde(&u0, eps, &path, None, &c, &SolverSettings::default()).unwrap();
        let mut u = traj.fields()[0].values()[0];
        assert!((u - 1.3 / (1.0 + 8.0 * tau)).abs() < 1e-12);
        for (k, dw) in path.increments().iter().enumerate() {
            u = u * (1.0 + eps.sqrt() * 0.8 * dw) / (1.0 + 8.0 * tau);
            assert!((traj.fields()[k + 1].values()[0] - u).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_equals_skeleton_bitwise() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(10);
        let u0 = grid.sample(|x| (std::f64::consts::PI * x).sin());
        let path = sample_path(5, 32, 1.0 / 32.0).unwrap();
        let s = SolverSettings::default();
        let noisy = solve_spde(&u0, 0.0, &path, None, &c, &s).unwrap();
        let skel = solve_skeleton(&u0, &Control::zero(1.0, 32).unwrap(), &c, &s).unwrap();
        assert_eq!(noisy, skel);

        let h = Control::constant(1.0, 32, 0.7).unwrap();
        let shifted = solve_spde(&u0, 0.0, &path, Some(&h), &c, &s).unwrap();
        assert_eq!(shifted, solve_skeleton(&u0, &h, &c, &s).unwrap());
    }

    #[test]
    fn shift_matches_external_drift() {
        // With linear σ the shift h is the same as adding h·σ(u) to the drift;
        // solve the drifted problem through the step API directly.
        let c = Coefficients {
            sigma: NoiseFunction::linear(1e-3),
            ..Coefficients::default()
        };
        let grid = Grid1D::unit(8);
        let u0 = grid.sample(|x| x * (1.0 - x));
        let h = Control::constant(0.5, 16, 2.0).unwrap();
        let path = sample_path(1, 16, h.tau()).unwrap();
        let s = SolverSettings::default();
        let shifted = solve_spde(&u0, 0.01, &path, Some(&h), &c, &s).unwrap();
        let mut u = shifted.fields()[0].clone();
        for k in 0..16 {
            let forcing = h.tau() * h.value(k) + 0.1 * path.increments()[k];
            u = crate::dynamics::implicit_step(&u, forcing, h.tau(), &c, &s).unwrap().0;
            let d = u.sub(&shifted.fields()[k + 1]);
            assert!(d.dot(&d).sqrt() < 1e-9);
        }
    }

    #[test]
    fn single_deterministic_path_has_zero_error() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(6);
        let mut cfg = EnsembleConfig::new(grid.sample(|x| (3.0 * x).sin()), c, 0.5, 16);
        cfg.eps = 0.0;
        let (rep, rows) = ensemble_stats(&cfg, &WorkerPool::sequential()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rep.sup_b_l2_sq.std_error, 0.0);
        let det = cfg.deterministic_trajectory().unwrap();
        let sup = det.b_fields().iter().map(|b| b.dot(b)).fold(0.0, f64::max);
        assert_eq!(rep.sup_b_l2_sq.mean, sup);
        assert_eq!(rep.sup_dev_sq.mean, 0.0);
    }

    #[test]
    fn ensemble_invariants() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(8);
        let mut cfg = EnsembleConfig::new(grid.sample(|x| (std::f64::consts::PI * x).sin()), c, 0.5, 16);
        cfg.paths = 40;
        cfg.base_seed = 77;
        let mut devs = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            cfg.eps = eps;
            let (rep, _) = ensemble_stats(&cfg, &WorkerPool::sequential()).unwrap();
            assert!(rep.sup_b_l2_4.mean >= rep.sup_b_l2_sq.mean.powi(2) * (1.0 - 1e-12));
            assert!(rep.sup_b_l2_sq.std_error.is_finite());
            devs.push(rep.sup_dev_sq.mean);
        }
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    }

    #[test]
    fn second_moment_uniform_in_eps() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(8);
        let mut cfg = EnsembleConfig::new(grid.sample(|x| (std::f64::consts::PI * x).sin()), c, 0.5, 16);
        cfg.paths = 32;
        let means: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&eps| {
                cfg.eps = eps;
                ensemble_stats(&cfg, &WorkerPool::sequential()).unwrap().0.sup_b_l2_sq.mean
            })
            .collect();
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 10.0, "{means:?}");
    }

    #[test]
    fn ensemble_is_worker_independent() {
        let c = Coefficients::default();
        let grid = Grid1D::unit(6);
        let mut cfg = EnsembleConfig::new(grid.sample(|x| x * (1.0 - x) * 4.0), c, 0.5, 10);
        cfg.paths = 24;
        cfg.eps = 0.5;
        let a = ensemble_stats(&cfg, &WorkerPool::new(1).unwrap()).unwrap();
        let b = ensemble_stats(&cfg, &WorkerPool::new(3).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[3.0]).std_error, 0.0);
    }

    #[test]
    fn failure_accounting() {
        let ok: Vec<Result<u8>> = (0..20).map(|_| Ok(1)).collect();
        assert_eq!(check_failures(&ok).unwrap(), 0);
        let mut some = ok.clone();
        some[0] = Err(Error::InvalidArgument("x".into()));
        some[1] = Err(Error::InvalidArgument("x".into()));
        assert_eq!(check_failures(&some).unwrap(), 2);
        some[2] = Err(Error::InvalidArgument("x".into()));
        assert!(matches!(check_failures(&some), Err(Error::EnsembleFailed { failed: 3, total: 20 })));
    }
}
