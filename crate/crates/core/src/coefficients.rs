//! The coefficient triple `(a, b, σ)` and its structure constants.
//!
//! * the flux `a` is monotone, coercive (`a(ξ)ξ ≥ C₁|ξ|ᵖ − K₁`) and bounded
//!   (`|a(ξ)| ≤ C₂|ξ|ᵖ⁻¹ + K₂`);
//! * `b` is differentiable with `b(0) = 0`, `C₃ ≤ b′ ≤ C₄` and `b′` Lipschitz;
//! * `σ` is Lipschitz with `σ(0) = 0`.
//!
//! `K₁` and `K₂` are constants. Every family is built from a small parameter
//! set so that [`validate_assumptions`] can check the stated constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EdgeField, Field};

pub const DEFAULT_DELTA_REG: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FluxKind {
    /// `a(ξ) = |ξ|ᵖ⁻²ξ`.
    PLaplacian,
    /// `a(ξ) = slope·ξ`, growth exponent 2.
    Linear { slope: f64 },
    /// `a(ξ) = κ(μ + ξ²)^((p−2)/2) ξ`.
    Regularized { kappa: f64, mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxFunction {
    pub kind: FluxKind,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub k2: f64,
    /// Added to `a′` only; never to `a` itself.
    pub delta_reg: f64,
}

fn check_growth(p: f64) -> Result<()> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::InvalidExponent {
            value: p,
            reason: "flux growth exponent must be at least 2",
        });
    }
    Ok(())
}

impl FluxFunction {
    pub fn p_laplacian(p: f64) -> Result<Self> {
        check_growth(p)?;
        Ok(Self {
            kind: FluxKind::PLaplacian,
            p,
            c1: 1.0,
            c2: 1.0,
            k1: 0.0,
            k2: 0.0,
            // a′ only degenerates at ξ = 0 when p > 2.
            delta_reg: if p > 2.0 { DEFAULT_DELTA_REG } else { 0.0 },
        })
    }

    /// Linear flux. A negative slope is accepted so that the validators
    /// have something to reject; the stated constants use `|slope|`.
    pub fn linear(slope: f64) -> Self {
        Self {
            kind: FluxKind::Linear { slope },
            p: 2.0,
            c1: slope.abs(),
            c2: slope.abs(),
            k1: 0.0,
            k2: 0.0,
            delta_reg: 0.0,
        }
    }

    pub fn regularized(p: f64, kappa: f64, mu: f64) -> Result<Self> {
        check_growth(p)?;
        if !(kappa > 0.0 && mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularized flux needs kappa > 0 and mu >= 0, got kappa={kappa}, mu={mu}"
            )));
        }
        // |ξ| ≥ √μ: (μ + ξ²)^s ≤ 2^s |ξ|^{2s}; otherwise |a| ≤ κ(2μ)^s √μ.
        let s = 0.5 * (p - 2.0);
        Ok(Self {
            kind: FluxKind::Regularized { kappa, mu },
            p,
            c1: kappa,
            c2: kappa * 2f64.powf(s),
            k1: 0.0,
            k2: kappa * (2.0 * mu).powf(s) * mu.sqrt(),
            delta_reg: DEFAULT_DELTA_REG,
        })
    }

    pub fn with_constants(mut self, c1: f64, c2: f64, k1: f64, k2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn with_delta_reg(mut self, delta_reg: f64) -> Self {
        self.delta_reg = delta_reg;
        self
    }

    /// Conjugate exponent `p′ = p / (p − 1)`.
    pub fn conjugate_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn eval(&self, xi: f64) -> f64 {
        match self.kind {
            FluxKind::PLaplacian => {
                if self.p == 2.0 {
                    xi
                } else {
                    xi.abs().powf(self.p - 2.0) * xi
                }
            }
            FluxKind::Linear { slope } => slope * xi,
            FluxKind::Regularized { kappa, mu } => {
                kappa * (mu + xi * xi).powf(0.5 * (self.p - 2.0)) * xi
            }
        }
    }

    /// Regularized derivative used by Newton's method.
    pub fn derivative(&self, xi: f64) -> f64 {
        let exact = match self.kind {
            FluxKind::PLaplacian => {
                if self.p == 2.0 {
                    1.0
                } else {
                    (self.p - 1.0) * xi.abs().powf(self.p - 2.0)
                }
            }
            FluxKind::Linear { slope } => slope,
            FluxKind::Regularized { kappa, mu } => {
                let s = 0.5 * (self.p - 2.0);
                kappa * (mu + xi * xi).powf(s - 1.0) * (mu + (self.p - 1.0) * xi * xi)
            }
        };
        exact + self.delta_reg
    }

    /// Secant slope `a(ξ)/ξ`, continuously extended at zero.
    pub fn secant(&self, xi: f64) -> f64 {
        let s = match self.kind {
            FluxKind::PLaplacian => {
                if self.p == 2.0 {
                    1.0
                } else {
                    xi.abs().powf(self.p - 2.0)
                }
            }
            FluxKind::Linear { slope } => slope,
            FluxKind::Regularized { kappa, mu } => {
                kappa * (mu + xi * xi).powf(0.5 * (self.p - 2.0))
            }
        };
        s + self.delta_reg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BKind {
    /// `b(r) = βr`.
    Linear { beta: f64 },
    /// `b(r) = βr + γ sin r`.
    Wave { beta: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BFunction {
    pub kind: BKind,
    pub c3: f64,
    pub c4: f64,
    /// Lipschitz constant of `b′`.
    pub lip_derivative: f64,
}

impl BFunction {
    pub fn identity() -> Self {
        Self::linear(1.0).expect("unit slope")
    }

    pub fn linear(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "linear b needs beta > 0, got {beta}"
            )));
        }
        Ok(Self {
            kind: BKind::Linear { beta },
            c3: beta,
            c4: beta,
            lip_derivative: 0.0,
        })
    }

    pub fn wave(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta - gamma.abs() > 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wave b needs beta - |gamma| > 0, got beta={beta}, gamma={gamma}"
            )));
        }
        Ok(Self {
            kind: BKind::Wave { beta, gamma },
            c3: beta - gamma.abs(),
            c4: beta + gamma.abs(),
            lip_derivative: gamma.abs(),
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.kind {
            BKind::Linear { beta } => beta * r,
            BKind::Wave { beta, gamma } => beta * r + gamma * r.sin(),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match self.kind {
            BKind::Linear { beta } => beta,
            BKind::Wave { beta, gamma } => beta + gamma * r.cos(),
        }
    }

    pub fn inverse(&self, y: f64, tol: f64) -> Result<f64> {
        b_inverse(self, y, tol)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, BKind::Linear { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `σ(r) = c·r`.
    Linear,
    /// `σ(r) = c·r|r|/(1 + |r|)`: quadratic onset at zero, linear growth.
    SoftQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFunction {
    pub kind: NoiseKind,
    pub lipschitz: f64,
}

impl NoiseFunction {
    pub fn linear(c_sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Linear,
            lipschitz: c_sigma,
        }
    }

    pub fn soft_quadratic(c_sigma: f64) -> Self {
        Self {
            kind: NoiseKind::SoftQuadratic,
            lipschitz: c_sigma,
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.kind {
            NoiseKind::Linear => self.lipschitz * r,
            NoiseKind::SoftQuadratic => self.lipschitz * r * r.abs() / (1.0 + r.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub flux: FluxFunction,
    pub b: BFunction,
    pub sigma: NoiseFunction,
}

impl Default for Coefficients {
    /// p-Laplacian with `p = 4`, `b(r) = 2r + sin r`, `σ(r) = r`.
    fn default() -> Self {
        Self {
            flux: FluxFunction::p_laplacian(4.0).expect("p = 4"),
            b: BFunction::wave(2.0, 1.0).expect("beta > |gamma|"),
            sigma: NoiseFunction::linear(1.0),
        }
    }
}

impl Coefficients {
    pub fn new(flux: FluxFunction, b: BFunction, sigma: NoiseFunction) -> Self {
        Self { flux, b, sigma }
    }

    pub fn p(&self) -> f64 {
        self.flux.p
    }

    pub fn apply_b(&self, u: &Field) -> Field {
        u.map(|r| self.b.eval(r))
    }

    pub fn apply_sigma(&self, u: &Field) -> Field {
        u.map(|r| self.sigma.eval(r))
    }

    /// Recovers `u` from `B(u)` nodewise.
    pub fn apply_b_inverse(&self, y: &Field, tol: f64) -> Result<Field> {
        let values = y
            .values()
            .iter()
            .map(|&v| self.b.inverse(v, tol))
            .collect::<Result<Vec<_>>>()?;
        Field::new(*y.grid(), values)
    }
}

/// Edgewise flux `a(G_e)`.
pub fn apply_flux(c: &Coefficients, g: &EdgeField) -> EdgeField {
    g.map(|xi| c.flux.eval(xi))
}

/// Solves `b(r) = y` by Newton's method safeguarded with bisection.
///
/// The root lies between `y/C₄` and `y/C₃` because `b(0) = 0` and
/// `C₃ ≤ b′ ≤ C₄`.
pub fn b_inverse(b: &BFunction, y: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse tolerance must be positive, got {tol}"
        )));
    }
    if !y.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot invert b at {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if let BKind::Linear { beta } = b.kind {
        return Ok(y / beta);
    }
    let (mut lo, mut hi) = {
        let a = y / b.c4;
        let c = y / b.c3;
        (a.min(c), a.max(c))
    };
    let mut r = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = b.eval(r) - y;
        if f.abs() <= tol {
            return Ok(r);
        }
        if f > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let newton = r - f / b.derivative(r);
        r = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
            break;
        }
    }
    let f = b.eval(r) - y;
    if f.abs() <= tol {
        Ok(r)
    } else {
        Err(Error::InverseNonConvergence { lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x1: f64,
    pub x2: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sample_count: usize,
    pub seed: u64,
    pub checks: Vec<AssumptionCheck>,
    /// Sampled range of `b′`; the report makes no tightness claim about C₃, C₄.
    pub b_prime_range: (f64, f64),
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_MONOTONE: &str = "flux monotone";
pub const CHECK_COERCIVE: &str = "flux coercive";
pub const CHECK_BOUNDED: &str = "flux growth bound";
pub const CHECK_B_ZERO: &str = "b(0)=0";
pub const CHECK_B_DERIVATIVE: &str = "C3<=b'<=C4";
pub const CHECK_B_LIPSCHITZ: &str = "b' Lipschitz";
pub const CHECK_B_REVERSE: &str = "b reverse pointwise";
pub const CHECK_SIGMA_ZERO: &str = "sigma(0)=0";
pub const CHECK_SIGMA_LIPSCHITZ: &str = "sigma Lipschitz";

// Relative slack for rounding in the sampled inequalities.
const REL_SLACK: f64 = 1e-12;

/// Log-uniform magnitude over eight decades with a random sign.
fn heavy_tailed(rng: &mut ChaCha8Rng) -> f64 {
    let mag = 10f64.powf(rng.random_range(-4.0..4.0));
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Pairs alternate between independent draws and close neighbours so that
/// Lipschitz-type bounds are probed at small separations too.
fn heavy_pair(rng: &mut ChaCha8Rng, i: usize) -> (f64, f64) {
    let x1 = heavy_tailed(rng);
    let x2 = if i.is_multiple_of(2) {
        heavy_tailed(rng)
    } else {
        x1 + x1.abs().max(1.0) * 10f64.powf(rng.random_range(-6.0..0.0)) * rng.random_range(-1.0..1.0)
    };
    (x1, x2)
}

struct CheckBuilder {
    name: &'static str,
    samples: usize,
    witness: Option<Witness>,
}

impl CheckBuilder {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            samples: 0,
            witness: None,
        }
    }

    /// Records `lhs <= rhs` up to `slack`; keeps the first violation.
    fn record(&mut self, x1: f64, x2: Option<f64>, lhs: f64, rhs: f64, slack: f64) {
        self.samples += 1;
        let ok = lhs <= rhs + slack;
        if !ok && self.witness.is_none() {
            self.witness = Some(Witness { x1, x2, lhs, rhs });
        }
    }

    fn finish(self) -> AssumptionCheck {
        AssumptionCheck {
            name: self.name.to_string(),
            passed: self.witness.is_none(),
            samples: self.samples,
            witness: self.witness,
        }
    }
}

/// Samples every inequality of the structural assumptions. Failures are
/// reported with a witness, never raised.
pub fn validate_assumptions(c: &Coefficients, sample_count: usize, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flux = &c.flux;
    let b = &c.b;
    let sigma = &c.sigma;
    let p = flux.p;

    let mut monotone = CheckBuilder::new(CHECK_MONOTONE);
    let mut coercive = CheckBuilder::new(CHECK_COERCIVE);
    let mut bounded = CheckBuilder::new(CHECK_BOUNDED);
    let mut b_zero = CheckBuilder::new(CHECK_B_ZERO);
    let mut b_deriv = CheckBuilder::new(CHECK_B_DERIVATIVE);
    let mut b_lip = CheckBuilder::new(CHECK_B_LIPSCHITZ);
    let mut b_rev = CheckBuilder::new(CHECK_B_REVERSE);
    let mut s_zero = CheckBuilder::new(CHECK_SIGMA_ZERO);
    let mut s_lip = CheckBuilder::new(CHECK_SIGMA_LIPSCHITZ);

    b_zero.record(0.0, None, b.eval(0.0).abs(), 0.0, 0.0);
    s_zero.record(0.0, None, sigma.eval(0.0).abs(), 0.0, 0.0);

    let mut bp_min = f64::INFINITY;
    let mut bp_max = f64::NEG_INFINITY;

    for i in 0..sample_count {
        let (x1, x2) = heavy_pair(&mut rng, i);
        let (a1, a2) = (flux.eval(x1), flux.eval(x2));
        // (a1 - a2)(x1 - x2) >= 0, written as 0 <= product.
        let prod = (a1 - a2) * (x1 - x2);
        monotone.record(
            x1,
            Some(x2),
            0.0,
            prod,
            REL_SLACK * (a1.abs() + a2.abs()) * (x1.abs() + x2.abs()),
        );

        let xi = heavy_tailed(&mut rng);
        let a = flux.eval(xi);
        let pow = xi.abs().powf(p);
        coercive.record(
            xi,
            None,
            flux.c1 * pow - flux.k1,
            a * xi,
            REL_SLACK * (a * xi).abs().max(flux.c1 * pow),
        );
        let bound = flux.c2 * xi.abs().powf(p - 1.0) + flux.k2;
        bounded.record(xi, None, a.abs(), bound, REL_SLACK * bound.max(a.abs()));

        let (r1, r2) = heavy_pair(&mut rng, i);
        let (d1, d2) = (b.derivative(r1), b.derivative(r2));
        bp_min = bp_min.min(d1).min(d2);
        bp_max = bp_max.max(d1).max(d2);
        b_deriv.record(r1, None, b.c3, d1, REL_SLACK * b.c4);
        b_deriv.record(r1, None, d1, b.c4, REL_SLACK * b.c4);
        b_lip.record(
            r1,
            Some(r2),
            (d1 - d2).abs(),
            b.lip_derivative * (r1 - r2).abs(),
            REL_SLACK * b.c4,
        );
        let (y1, y2) = (b.eval(r1), b.eval(r2));
        b_rev.record(
            r1,
            Some(r2),
            (r1 - r2).abs(),
            (y1 - y2).abs() / b.c3,
            REL_SLACK * (y1.abs() + y2.abs()) / b.c3,
        );

        let (q1, q2) = heavy_pair(&mut rng, i);
        let (s1, s2) = (sigma.eval(q1), sigma.eval(q2));
        s_lip.record(
            q1,
            Some(q2),
            (s1 - s2).abs(),
            sigma.lipschitz * (q1 - q2).abs(),
            REL_SLACK * (s1.abs() + s2.abs()),
        );
    }

    ValidationReport {
        sample_count,
        seed,
        checks: vec![
            monotone.finish(),
            coercive.finish(),
            bounded.finish(),
            b_zero.finish(),
            b_deriv.finish(),
            b_lip.finish(),
            b_rev.finish(),
            s_zero.finish(),
            s_lip.finish(),
        ],
        b_prime_range: (bp_min, bp_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gradient, norm_lq, Grid1D};

    fn default_with_flux(flux: FluxFunction) -> Coefficients {
        Coefficients {
            flux,
            ..Coefficients::default()
        }
    }

    #[test]
    fn p_laplacian_passes_flux_checks() {
        let c = default_with_flux(FluxFunction::p_laplacian(4.0).unwrap());
        let report = validate_assumptions(&c, 20_000, 7);
        for name in [CHECK_MONOTONE, CHECK_COERCIVE, CHECK_BOUNDED] {
            assert!(report.check(name).unwrap().passed, "{name}");
        }
        assert!(report.all_passed());
    }

    #[test]
    fn anti_flux_fails_monotonicity_with_witness() {
        let c = default_with_flux(FluxFunction::linear(-1.0));
        let report = validate_assumptions(&c, 1_000, 3);
        let check = report.check(CHECK_MONOTONE).unwrap();
        assert!(!check.passed);
        let w = check.witness.as_ref().unwrap();
        let x2 = w.x2.unwrap();
        assert!((-w.x1 + x2) * (w.x1 - x2) < 0.0);
    }

    #[test]
    fn wave_b_constants() {
        let b = BFunction::wave(2.0, 1.0).unwrap();
        assert_eq!((b.c3, b.c4, b.lip_derivative), (1.0, 3.0, 1.0));
        let c = Coefficients::default();
        let report = validate_assumptions(&c, 10_000, 11);
        assert!(report.all_passed());
        let (lo, hi) = report.b_prime_range;
        assert!(lo >= 1.0 && hi <= 3.0 && lo < 1.01 && hi > 2.99);
        assert!(BFunction::wave(1.0, 1.0).is_err());
    }

    #[test]
    fn understated_constant_is_caught() {
        let flux = FluxFunction::p_laplacian(4.0)
            .unwrap()
            .with_constants(1.5, 1.0, 0.0, 0.0);
        let report = validate_assumptions(&default_with_flux(flux), 2_000, 5);
        assert!(!report.check(CHECK_COERCIVE).unwrap().passed);
        assert!(report.check(CHECK_MONOTONE).unwrap().passed);
    }

    #[test]
    fn regularized_flux_constants_hold() {
        let flux = FluxFunction::regularized(3.0, 0.5, 0.2).unwrap();
        let report = validate_assumptions(&default_with_flux(flux), 20_000, 9);
        assert!(report.all_passed(), "{:?}", report.checks);
    }

    #[test]
    fn flux_examples() {
        let grid = Grid1D::unit(1);
        let c4 = default_with_flux(FluxFunction::p_laplacian(4.0).unwrap());
        let c3 = default_with_flux(FluxFunction::p_laplacian(3.0).unwrap());
        let z = apply_flux(&c4, &EdgeField::new(grid, vec![0.0, 0.0]).unwrap());
        assert_eq!(z.values(), &[0.0, 0.0]);
        let g = apply_flux(&c4, &EdgeField::new(grid, vec![2.0, -2.0]).unwrap());
        assert_eq!(g.values(), &[8.0, -8.0]);
        let g = apply_flux(&c3, &EdgeField::new(grid, vec![-1.0, 1.0]).unwrap());
        assert_eq!(g.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn b_inverse_examples() {
        let wave = BFunction::wave(2.0, 1.0).unwrap();
        assert_eq!(b_inverse(&wave, 0.0, 1e-12).unwrap(), 0.0);
        let lin = BFunction::linear(2.0).unwrap();
        assert_eq!(b_inverse(&lin, 4.0, 1e-12).unwrap(), 2.0);

        // Independent bisection oracle.
        let y = 2.0 + 1f64.sin();
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if wave.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 1.0).abs() < 1e-12);
        let r = b_inverse(&wave, y, 1e-12).unwrap();
        assert!((r - oracle).abs() < 1e-12);
        assert!(b_inverse(&wave, 1.0, 0.0).is_err());
    }

    #[test]
    fn operator_level_bounds() {
        let grid = Grid1D::unit(12);
        let c = Coefficients::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w1 = grid.sample(|_| rng.random_range(-2.0..2.0));
            let w2 = grid.sample(|_| rng.random_range(-2.0..2.0));
            let g1 = gradient(&w1);
            let g2 = gradient(&w2);
            let a1 = apply_flux(&c, &g1);
            let a2 = apply_flux(&c, &g2);
            let da = EdgeField::from_raw(grid, a1.values().iter().zip(a2.values()).map(|(x, y)| x - y).collect());
            let dg = EdgeField::from_raw(grid, g1.values().iter().zip(g2.values()).map(|(x, y)| x - y).collect());
            assert!(da.dot(&dg) >= -1e-12);

            let db = c.apply_b(&w1).sub(&c.apply_b(&w2));
            assert!(norm_lq(&db, 2.0).unwrap() <= c.b.c4 * norm_lq(&w1.sub(&w2), 2.0).unwrap() + 1e-12);
            let gb = gradient(&c.apply_b(&w1));
            let lhs = crate::grid::edge_norm_lq(&gb, 4.0).unwrap();
            let rhs = c.b.c4 * crate::grid::edge_norm_lq(&g1, 4.0).unwrap();
            assert!(lhs <= rhs + 1e-12);
            assert!(norm_lq(&w1, 2.0).unwrap() <= norm_lq(&c.apply_b(&w1), 2.0).unwrap() / c.b.c3 + 1e-12);
        }
    }

    #[test]
    fn soft_quadratic_noise_is_lipschitz() {
        let c = Coefficients {
            sigma: NoiseFunction::soft_quadratic(0.7),
            ..Coefficients::default()
        };
        let report = validate_assumptions(&c, 20_000, 21);
        assert!(report.check(CHECK_SIGMA_LIPSCHITZ).unwrap().passed);
        assert!(report.check(CHECK_SIGMA_ZERO).unwrap().passed);
    }
}
