//! Uniform one-dimensional Dirichlet grid.
//!
//! Nodal values live on the `n` interior nodes; the two boundary nodes carry
//! an implicit zero. Gradients live on the `n + 1` edges between consecutive
//! nodes (boundary nodes included), and the divergence is built as the exact
//! negative adjoint of the gradient under the `h`-weighted inner product, so
//! that summation by parts holds to rounding error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_interior: usize,
    length: f64,
}

impl Grid1D {
    pub fn new(n_interior: usize, length: f64) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one interior node".into(),
            ));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n_interior, length })
    }

    /// Unit interval with `n_interior` interior nodes.
    pub fn unit(n_interior: usize) -> Self {
        Self::new(n_interior, 1.0).expect("unit grid with n_interior >= 1")
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_edges(&self) -> usize {
        self.n_interior + 1
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n_interior + 1) as f64
    }

    /// Coordinates of the interior nodes.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.n_interior).map(|i| i as f64 * h).collect()
    }

    pub fn zeros(&self) -> Field {
        Field {
            grid: *self,
            values: vec![0.0; self.n_interior],
        }
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl FnMut(f64) -> f64) -> Field {
        Field {
            grid: *self,
            values: self.nodes().into_iter().map(f).collect(),
        }
    }

    /// Smallest eigenvalue of the Dirichlet stiffness operator `-div grad`.
    pub fn stiffness_min_eigenvalue(&self) -> f64 {
        let h = self.spacing();
        let s = (std::f64::consts::PI * h / (2.0 * self.length)).sin();
        4.0 * s * s / (h * h)
    }

    pub fn metadata_json(&self) -> String {
        format!(
            "{{\"n_interior\":{},\"length\":{}}}",
            self.n_interior, self.length
        )
    }
}

/// Nodal values on the interior of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid1D,
    values: Vec<f64>,
}

/// One value per edge of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    grid: Grid1D,
    values: Vec<f64>,
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "non-finite value {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_interior() {
            return Err(Error::GridMismatch {
                expected: grid.n_interior(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_interior());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `h`-weighted inner product.
    pub fn dot(&self, other: &Field) -> f64 {
        self.grid.spacing()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn csv_header(n_interior: usize) -> String {
        let mut s = String::from("t");
        for i in 1..=n_interior {
            s.push_str(&format!(",x_{i}"));
        }
        s
    }

    pub fn csv_row(&self, t: f64) -> String {
        let mut s = format!("{t:?}");
        for v in &self.values {
            s.push_str(&format!(",{v:?}"));
        }
        s
    }
}

impl EdgeField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_edges() {
            return Err(Error::GridMismatch {
                expected: grid.n_edges(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_edges());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> EdgeField {
        EdgeField::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `h`-weighted inner product over edges.
    pub fn dot(&self, other: &EdgeField) -> f64 {
        self.grid.spacing()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

/// Forward differences with zero ghost values at both boundaries.
pub fn gradient(f: &Field) -> EdgeField {
    let grid = *f.grid();
    let inv_h = 1.0 / grid.spacing();
    let v = f.values();
    let n = v.len();
    let mut out = Vec::with_capacity(n + 1);
    let mut left = 0.0;
    for &right in v.iter().chain(std::iter::once(&0.0)) {
        out.push((right - left) * inv_h);
        left = right;
    }
    debug_assert_eq!(out.len(), n + 1);
    EdgeField::from_raw(grid, out)
}

pub fn divergence(flux: &EdgeField) -> Field {
    let grid = *flux.grid();
    let inv_h = 1.0 / grid.spacing();
    let out = flux
        .values()
        .windows(2)
        .map(|w| (w[1] - w[0]) * inv_h)
        .collect();
    Field::from_raw(grid, out)
}

fn weighted_lq(values: &[f64], h: f64, q: f64) -> f64 {
    if q == 2.0 {
        return (h * values.iter().map(|v| v * v).sum::<f64>()).sqrt();
    }
    (h * values.iter().map(|v| v.abs().powf(q)).sum::<f64>()).powf(1.0 / q)
}

pub fn norm_lq(f: &Field, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidExponent {
            value: q,
            reason: "Lebesgue exponent must be at least 1",
        });
    }
    Ok(weighted_lq(f.values(), f.grid().spacing(), q))
}

/// Lᵠ norm of an edge field with the same `h` weights as nodal fields.
pub fn edge_norm_lq(g: &EdgeField, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidExponent {
            value: q,
            reason: "Lebesgue exponent must be at least 1",
        });
    }
    Ok(weighted_lq(g.values(), g.grid().spacing(), q))
}

pub fn seminorm_w1p(f: &Field, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidExponent {
            value: p,
            reason: "Sobolev exponent must exceed 1",
        });
    }
    edge_norm_lq(&gradient(f), p)
}

/// Computable H⁻¹ proxy: `sqrt(<f, K⁻¹ f>_h)` with `K = -div grad`.
pub fn dual_norm_h1(f: &Field) -> f64 {
    let grid = f.grid();
    let n = grid.n_interior();
    let h2 = grid.spacing() * grid.spacing();
    let off = vec![-1.0 / h2; n.saturating_sub(1)];
    let diag = vec![2.0 / h2; n];
    let x = solve_tridiagonal(&off, &diag, &off, f.values());
    let s: f64 = f.values().iter().zip(&x).map(|(a, b)| a * b).sum();
    (grid.spacing() * s).max(0.0).sqrt()
}

/// Thomas algorithm for a tridiagonal system. `lower[i]` couples row `i + 1`
/// to column `i`, `upper[i]` couples row `i` to column `i + 1`.
///
/// No pivoting: callers pass diagonally dominant or SPD matrices.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    debug_assert_eq!(rhs.len(), n);
    debug_assert_eq!(lower.len(), n.saturating_sub(1));
    debug_assert_eq!(upper.len(), n.saturating_sub(1));
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(n: usize, length: f64, v: &[f64]) -> Field {
        Field::new(Grid1D::new(n, length).unwrap(), v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn gradient_examples() {
        let g = gradient(&field(3, 1.0, &[1.0, 1.0, 1.0]));
        assert!(close(g.values(), &[4.0, 0.0, 0.0, -4.0], 1e-12));

        let g = gradient(&field(2, 1.0, &[1.0, 2.0]));
        assert!(close(g.values(), &[3.0, 3.0, -6.0], 1e-12));

        let g = gradient(&Grid1D::unit(5).zeros());
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_examples() {
        let grid = Grid1D::unit(3);
        let d = divergence(&EdgeField::new(grid, vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        assert!(close(d.values(), &[4.0, -4.0, 0.0], 1e-12));

        let d = divergence(&EdgeField::new(grid, vec![2.5; 4]).unwrap());
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_examples() {
        let f = field(3, 1.0, &[1.0, 1.0, 1.0]);
        assert!((norm_lq(&f, 2.0).unwrap() - 0.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(norm_lq(&Grid1D::unit(4).zeros(), 3.0).unwrap(), 0.0);
        // n = 1 on [0, 1] gives h = 0.5.
        let f = field(1, 1.0, &[2.0]);
        assert!((norm_lq(&f, 4.0).unwrap() - 8f64.powf(0.25)).abs() < 1e-12);
        assert!(matches!(
            norm_lq(&f, 0.5),
            Err(Error::InvalidExponent { .. })
        ));
    }

    #[test]
    fn seminorm_examples() {
        let f = field(1, 1.0, &[1.0]);
        assert!((seminorm_w1p(&f, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((seminorm_w1p(&f, 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(seminorm_w1p(&Grid1D::unit(3).zeros(), 3.0).unwrap(), 0.0);
        assert!(seminorm_w1p(&f, 1.0).is_err());
    }

    #[test]
    fn dual_norm_scalar_solve() {
        // K = 2 / h^2 = 8 on a single node; <1, 1/8>_h = 0.5 / 8.
        let f = field(1, 1.0, &[1.0]);
        assert!((dual_norm_h1(&f) - 0.25).abs() < 1e-14);
        assert_eq!(dual_norm_h1(&Grid1D::unit(6).zeros()), 0.0);
    }

    #[test]
    fn constant_extension_gradient_lives_on_boundary_edges() {
        let f = field(6, 2.0, &[0.7; 6]);
        let g = gradient(&f);
        let inner = &g.values()[1..6];
        assert!(inner.iter().all(|&v| v == 0.0));
        assert!(g.values()[0] > 0.0 && g.values()[6] < 0.0);
    }

    #[test]
    fn tridiagonal_matches_dense_product() {
        let lower = [1.0, -0.5, 0.25];
        let diag = [4.0, 5.0, 6.0, 7.0];
        let upper = [-1.0, 0.5, 2.0];
        let x_true = [1.0, -2.0, 3.0, 0.5];
        let mut rhs = [0.0; 4];
        for i in 0..4 {
            rhs[i] = diag[i] * x_true[i];
            if i > 0 {
                rhs[i] += lower[i - 1] * x_true[i - 1];
            }
            if i < 3 {
                rhs[i] += upper[i] * x_true[i + 1];
            }
        }
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        assert!(close(&x, &x_true, 1e-13));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Grid1D::new(0, 1.0).is_err());
        assert!(Grid1D::new(3, -1.0).is_err());
        let grid = Grid1D::unit(2);
        assert!(Field::new(grid, vec![1.0]).is_err());
        assert!(Field::new(grid, vec![1.0, f64::NAN]).is_err());
        assert!(EdgeField::new(grid, vec![1.0; 2]).is_err());
    }

    #[test]
    fn csv_and_metadata() {
        let f = field(2, 1.0, &[0.5, -1.0]);
        assert_eq!(Field::csv_header(2), "t,x_1,x_2");
        assert_eq!(f.csv_row(0.25), "0.25,0.5,-1.0");
        assert_eq!(Grid1D::unit(4).metadata_json(), "{\"n_interior\":4,\"length\":1}");
    }
}
