//! Uniform cell-centered grid on `[0, Lx] x [0, Ly]`, field storage and the
//! primitive difference operators.
//!
//! # Ghost conventions
//!
//! * Scalars tagged [`ScalarBc::Neumann`] are extended by mirror ghosts,
//!   `f[-1] = f[0]`, so the wall-face normal derivative vanishes.
//! * The wall-normal velocity component uses antisymmetric ghosts,
//!   `u_n[-1] = -u_n[0]`, so its wall-face value vanishes.
//! * The tangential component uses either a mirror ghost or the Robin
//!   relation `eta * du_t/dn = -a * u_t`, see [`TangentialClosure`].
//!
//! With these choices the central gradient `G` and central divergence `D`
//! are exact negative adjoints, `D = -G^T` in the cell-area inner product, so
//! `sum(D v) = 0` holds to rounding for every vector field. `laplacian` is the
//! compact 5-point stencil; `div_grad` is the wide composition `D G`.

use crate::error::{Error, Result};
use crate::sparse::Csr;
use std::io::{Read, Write};
use std::path::Path;

/// Uniform structured grid. Cell `(i, j)` has center `((i+1/2)hx, (j+1/2)hy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        if nx < 8 || ny < 8 {
            return Err(Error::GridTooSmall { nx, ny });
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!("Lx = {lx}, Ly = {ly}")));
        }
        Ok(Grid { nx, ny, lx, ly })
    }

    /// Unit square with `n x n` cells.
    pub fn square(n: usize) -> Result<Grid> {
        Grid::new(n, n, 1.0, 1.0)
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    /// Iterates `(i, j, x, y)` in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j, self.x(i), self.y(j))))
    }

    /// True when cell `(i, j)` is at least `k` cells away from every wall.
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        i >= k && j >= k && i + k < self.nx && j + k < self.ny
    }
}

/// Boundary tag of a scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarBc {
    Neumann,
    None,
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub bc: ScalarBc,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> ScalarField {
        ScalarField { grid, values: vec![c; grid.n_cells()], bc: ScalarBc::Neumann }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let values = grid.cells().map(|(_, _, x, y)| f(x, y)).collect();
        ScalarField { grid, values, bc: ScalarBc::Neumann }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> ScalarField {
        assert_eq!(values.len(), grid.n_cells());
        ScalarField { grid, values, bc: ScalarBc::Neumann }
    }

    pub fn with_bc(mut self, bc: ScalarBc) -> ScalarField {
        self.bc = bc;
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), bc: self.bc }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ScalarField { grid: self.grid, values, bc: self.bc }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Area-weighted `L^2` norm.
    pub fn l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Area-weighted `L^2` inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.grid.cell_area() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn remove_mean(&mut self) -> f64 {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Collocated velocity-like field with a Navier slip descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Constant wall friction `a0`; zero means free slip.
    pub friction: f64,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> VectorField {
        let n = grid.n_cells();
        VectorField { grid, x: vec![0.0; n], y: vec![0.0; n], friction: 0.0 }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> (f64, f64)) -> VectorField {
        let (x, y) = grid.cells().map(|(_, _, x, y)| f(x, y)).unzip();
        VectorField { grid, x, y, friction: 0.0 }
    }

    pub fn from_components(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> VectorField {
        assert_eq!(x.len(), grid.n_cells());
        assert_eq!(y.len(), grid.n_cells());
        VectorField { grid, x, y, friction: 0.0 }
    }

    pub fn with_friction(mut self, a0: f64) -> VectorField {
        self.friction = a0;
        self
    }

    /// Component-major stacking `[x; y]`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    pub fn from_stacked(grid: Grid, v: &[f64]) -> VectorField {
        let n = grid.n_cells();
        assert_eq!(v.len(), 2 * n);
        VectorField::from_components(grid, v[..n].to_vec(), v[n..].to_vec())
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        let s: f64 = self
            .x
            .iter()
            .zip(&other.x)
            .chain(self.y.iter().zip(&other.y))
            .map(|(a, b)| a * b)
            .sum();
        self.grid.cell_area() * s
    }

    pub fn l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        let mut v = self.clone();
        v.x.iter_mut().chain(v.y.iter_mut()).for_each(|c| *c *= s);
        v
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &VectorField) -> VectorField {
        let mut v = self.clone();
        for k in 0..v.x.len() {
            v.x[k] += s * other.x[k];
            v.y[k] += s * other.y[k];
        }
        v
    }

    /// Multiplies both components pointwise by `c`.
    pub fn times(&self, c: &ScalarField) -> VectorField {
        let mut v = self.clone();
        for k in 0..v.x.len() {
            v.x[k] *= c.values[k];
            v.y[k] *= c.values[k];
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Per-cell 2x2 tensor, stored as four component arrays `t[a][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: Grid,
    pub t: [[Vec<f64>; 2]; 2],
}

impl TensorField {
    #[inline]
    pub fn at(&self, k: usize) -> [[f64; 2]; 2] {
        [[self.t[0][0][k], self.t[0][1][k]], [self.t[1][0][k], self.t[1][1][k]]]
    }
}

/// Ghost rule for the wall-tangential velocity component.
#[derive(Debug, Clone, Copy)]
pub enum TangentialClosure<'a> {
    /// `u_t[-1] = u_t[0]` (free slip).
    Mirror,
    /// `u_t[-1] = r u_t[0]` with `r = (2 eta - a h)/(2 eta + a h)`.
    Robin { eta: &'a ScalarField, a0: f64 },
}

impl TangentialClosure<'_> {
    #[inline]
    fn ratio(&self, k: usize, h: f64) -> f64 {
        match self {
            TangentialClosure::Mirror => 1.0,
            TangentialClosure::Robin { eta, a0 } => {
                let e = eta.values[k];
                (2.0 * e - a0 * h) / (2.0 * e + a0 * h)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Raw stencil kernels on flat arrays.

/// Central x-derivative. `lo`/`hi` give the ghost multiplier at the left and
/// right walls for each row: ghost = factor * edge value (`None` selects
/// one-sided second-order extrapolation).
fn ddx(g: &Grid, f: &[f64], ghost: impl Fn(usize, bool) -> Option<f64>) -> Vec<f64> {
    let (nx, ny, h) = (g.nx, g.ny, g.hx());
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..ny {
        let r = j * nx;
        for i in 1..nx - 1 {
            out[r + i] = (f[r + i + 1] - f[r + i - 1]) / (2.0 * h);
        }
        out[r] = match ghost(r, false) {
            Some(s) => (f[r + 1] - s * f[r]) / (2.0 * h),
            None => (-3.0 * f[r] + 4.0 * f[r + 1] - f[r + 2]) / (2.0 * h),
        };
        let e = r + nx - 1;
        out[e] = match ghost(e, true) {
            Some(s) => (s * f[e] - f[e - 1]) / (2.0 * h),
            None => (3.0 * f[e] - 4.0 * f[e - 1] + f[e - 2]) / (2.0 * h),
        };
    }
    out
}

fn ddy(g: &Grid, f: &[f64], ghost: impl Fn(usize, bool) -> Option<f64>) -> Vec<f64> {
    let (nx, ny, h) = (g.nx, g.ny, g.hy());
    let mut out = vec![0.0; g.n_cells()];
    for i in 0..nx {
        for j in 1..ny - 1 {
            out[j * nx + i] = (f[(j + 1) * nx + i] - f[(j - 1) * nx + i]) / (2.0 * h);
        }
        let (b, b1, b2) = (i, nx + i, 2 * nx + i);
        out[b] = match ghost(b, false) {
            Some(s) => (f[b1] - s * f[b]) / (2.0 * h),
            None => (-3.0 * f[b] + 4.0 * f[b1] - f[b2]) / (2.0 * h),
        };
        let (t, t1, t2) = ((ny - 1) * nx + i, (ny - 2) * nx + i, (ny - 3) * nx + i);
        out[t] = match ghost(t, true) {
            Some(s) => (s * f[t] - f[t1]) / (2.0 * h),
            None => (3.0 * f[t] - 4.0 * f[t1] + f[t2]) / (2.0 * h),
        };
    }
    out
}

/// Neumann central gradient of a flat array.
pub(crate) fn grad_raw(g: &Grid, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (ddx(g, f, |_, _| Some(1.0)), ddy(g, f, |_, _| Some(1.0)))
}

/// Central divergence with antisymmetric normal ghosts.
pub(crate) fn div_raw(g: &Grid, vx: &[f64], vy: &[f64]) -> Vec<f64> {
    let a = ddx(g, vx, |_, _| Some(-1.0));
    let b = ddy(g, vy, |_, _| Some(-1.0));
    a.iter().zip(&b).map(|(p, q)| p + q).collect()
}

/// Compact 5-point Neumann Laplacian.
pub(crate) fn lap5_raw(g: &Grid, f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let c = f[k];
            let w = if i > 0 { f[k - 1] } else { c };
            let e = if i + 1 < nx { f[k + 1] } else { c };
            let s = if j > 0 { f[k - nx] } else { c };
            let n = if j + 1 < ny { f[k + nx] } else { c };
            out[k] = ax * (e - 2.0 * c + w) + ay * (n - 2.0 * c + s);
        }
    }
    out
}

/// Wide Neumann Laplacian `D G`.
pub(crate) fn div_grad_raw(g: &Grid, f: &[f64]) -> Vec<f64> {
    let (gx, gy) = grad_raw(g, f);
    div_raw(g, &gx, &gy)
}

/// Velocity gradient `[[dux/dx, dux/dy], [duy/dx, duy/dy]]`.
pub(crate) fn vel_grad_raw(g: &Grid, ux: &[f64], uy: &[f64], tc: TangentialClosure) -> [[Vec<f64>; 2]; 2] {
    let (hx, hy) = (g.hx(), g.hy());
    [
        [ddx(g, ux, |_, _| Some(-1.0)), ddy(g, ux, |k, _| Some(tc.ratio(k, hy)))],
        [ddx(g, uy, |k, _| Some(tc.ratio(k, hx))), ddy(g, uy, |_, _| Some(-1.0))],
    ]
}

// ---------------------------------------------------------------------------
// Public field-level operators.

/// Central gradient. Neumann fields use mirror ghosts; fields tagged
/// [`ScalarBc::None`] use one-sided second-order differences at the walls.
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    f.check_finite("gradient")?;
    let g = &f.grid;
    let (x, y) = match f.bc {
        ScalarBc::Neumann => grad_raw(g, &f.values),
        ScalarBc::None => (ddx(g, &f.values, |_, _| None), ddy(g, &f.values, |_, _| None)),
    };
    Ok(VectorField::from_components(*g, x, y))
}

/// Central divergence with the wall-normal component reflected oddly.
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    v.check_finite("divergence")?;
    Ok(ScalarField::from_values(v.grid, div_raw(&v.grid, &v.x, &v.y)))
}

/// Compact 5-point Laplacian with Neumann mirror ghosts.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("laplacian")?;
    if f.bc != ScalarBc::Neumann {
        return Err(Error::DomainError("laplacian requires a Neumann field".into()));
    }
    Ok(ScalarField::from_values(f.grid, lap5_raw(&f.grid, &f.values)))
}

/// Wide Laplacian `divergence(gradient(f))`.
pub fn div_grad(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("div_grad")?;
    Ok(ScalarField::from_values(f.grid, div_grad_raw(&f.grid, &f.values)))
}

/// Velocity gradient tensor `t[a][b] = d u_a / d x_b`.
pub fn velocity_gradient(u: &VectorField, closure: TangentialClosure) -> Result<TensorField> {
    u.check_finite("velocity_gradient")?;
    Ok(TensorField { grid: u.grid, t: vel_grad_raw(&u.grid, &u.x, &u.y, closure) })
}

// ---------------------------------------------------------------------------
// Assembled operator matrices. Vector unknowns are stacked component-major.

/// Neumann gradient, `2N x N`.
pub fn gradient_matrix(g: &Grid) -> Csr {
    let (nx, ny, n) = (g.nx, g.ny, g.n_cells());
    let (cx, cy) = (0.5 / g.hx(), 0.5 / g.hy());
    let mut t = Vec::with_capacity(4 * n);
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            let (w, e) = (if i > 0 { k - 1 } else { k }, if i + 1 < nx { k + 1 } else { k });
            t.push((k, e, cx));
            t.push((k, w, -cx));
            let (s, nn) = (if j > 0 { k - nx } else { k }, if j + 1 < ny { k + nx } else { k });
            t.push((n + k, nn, cy));
            t.push((n + k, s, -cy));
        }
    }
    Csr::from_triplets(2 * n, n, t)
}

/// Divergence with antisymmetric normal ghosts, `N x 2N`.
pub fn divergence_matrix(g: &Grid) -> Csr {
    let (nx, ny, n) = (g.nx, g.ny, g.n_cells());
    let (cx, cy) = (0.5 / g.hx(), 0.5 / g.hy());
    let mut t = Vec::with_capacity(4 * n);
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            if i + 1 < nx {
                t.push((k, k + 1, cx));
            } else {
                t.push((k, k, -cx));
            }
            if i > 0 {
                t.push((k, k - 1, -cx));
            } else {
                t.push((k, k, cx));
            }
            if j + 1 < ny {
                t.push((k, n + k + nx, cy));
            } else {
                t.push((k, n + k, -cy));
            }
            if j > 0 {
                t.push((k, n + k - nx, -cy));
            } else {
                t.push((k, n + k, cy));
            }
        }
    }
    Csr::from_triplets(n, 2 * n, t)
}

/// Compact 5-point Neumann Laplacian, `N x N`.
pub fn laplacian_matrix(g: &Grid) -> Csr {
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut t = Vec::with_capacity(5 * g.n_cells());
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            if i > 0 {
                t.push((k, k - 1, ax));
                t.push((k, k, -ax));
            }
            if i + 1 < nx {
                t.push((k, k + 1, ax));
                t.push((k, k, -ax));
            }
            if j > 0 {
                t.push((k, k - nx, ay));
                t.push((k, k, -ay));
            }
            if j + 1 < ny {
                t.push((k, k + nx, ay));
                t.push((k, k, -ay));
            }
        }
    }
    Csr::from_triplets(g.n_cells(), g.n_cells(), t)
}

/// Wide Neumann Laplacian `D G`, `N x N`.
pub fn div_grad_matrix(g: &Grid) -> Csr {
    divergence_matrix(g).matmul(&gradient_matrix(g))
}

// ---------------------------------------------------------------------------
// Snapshot persistence.

const MAGIC: &[u8; 8] = b"QCHNSFLD";

/// Writes `field` as a 32-byte header (magic, nx and ny as little-endian
/// `u32`, Lx and Ly as little-endian `f64`) followed by row-major values
/// (x fastest) as little-endian `f64`.
pub fn write_snapshot(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid;
    let mut buf = Vec::with_capacity(32 + 8 * g.n_cells());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(g.nx as u32).to_le_bytes());
    buf.extend_from_slice(&(g.ny as u32).to_le_bytes());
    buf.extend_from_slice(&g.lx.to_le_bytes());
    buf.extend_from_slice(&g.ly.to_le_bytes());
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<ScalarField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 32 || &buf[..8] != MAGIC {
        return Err(Error::Format(format!("{}: bad header", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let grid = Grid::new(u32_at(8), u32_at(12), f64_at(16), f64_at(24))?;
    if buf.len() != 32 + 8 * grid.n_cells() {
        return Err(Error::Format(format!("{}: payload length mismatch", path.display())));
    }
    let values = (0..grid.n_cells()).map(|k| f64_at(32 + 8 * k)).collect();
    Ok(ScalarField::from_values(grid, values))
}

/// Writes `x,y,value` rows for plotting.
pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "value"])?;
    for (k, (_, _, x, y)) in field.grid.cells().enumerate() {
        w.write_record(&[format!("{x:.17e}"), format!("{y:.17e}"), format!("{:.17e}", field.values[k])])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n, n + 4, 1.0, 1.3).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(Grid::new(7, 8, 1.0, 1.0), Err(Error::GridTooSmall { .. })));
        assert!(Grid::new(8, 8, 0.0, 1.0).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = grid(12);
        let v = gradient(&ScalarField::constant(g, 3.0)).unwrap();
        assert!(v.max_abs() == 0.0);
    }

    #[test]
    fn gradient_exact_on_affine_interior() {
        let g = grid(12);
        let f = ScalarField::from_fn(g, |x, _| x);
        let v = gradient(&f).unwrap();
        for (i, j, _, _) in g.cells() {
            if g.is_interior(i, j, 1) {
                let k = g.idx(i, j);
                assert!((v.x[k] - 1.0).abs() < 1e-12 && v.y[k] == 0.0);
            }
        }
        let one_sided = gradient(&f.clone().with_bc(ScalarBc::None)).unwrap();
        assert!(one_sided.x.iter().all(|d| (d - 1.0).abs() < 1e-12));
    }

    fn grad_error(n: usize) -> f64 {
        let g = Grid::square(n).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (1.3 * x).sin() * (0.7 * y + 0.2).cos()).with_bc(ScalarBc::None);
        let v = gradient(&f).unwrap();
        let exact = VectorField::from_fn(g, |x, y| {
            (1.3 * (1.3 * x).cos() * (0.7 * y + 0.2).cos(), -0.7 * (1.3 * x).sin() * (0.7 * y + 0.2).sin())
        });
        v.axpy(-1.0, &exact).l2()
    }

    #[test]
    fn gradient_second_order() {
        let order = (grad_error(32) / grad_error(64)).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn divergence_trivial_fields_vanish_in_interior() {
        let g = grid(10);
        for v in [VectorField::from_fn(g, |_, _| (2.0, -1.0)), VectorField::from_fn(g, |x, y| (y, -x))] {
            let d = divergence(&v).unwrap();
            for (i, j, _, _) in g.cells() {
                if g.is_interior(i, j, 1) {
                    assert!(d.at(i, j).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let g = grid(10);
        let l = laplacian(&ScalarField::from_fn(g, |x, y| x * x + y * y)).unwrap();
        for (i, j, _, _) in g.cells() {
            if g.is_interior(i, j, 1) {
                assert!((l.at(i, j) - 4.0).abs() < 1e-9);
            }
        }
        assert!(laplacian(&ScalarField::constant(g, 2.5)).unwrap().max_abs() == 0.0);
    }

    fn lap_error(n: usize, wide: bool) -> f64 {
        let g = Grid::new(n, n, 1.0, 2.0).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (PI * x).cos() * (PI * y / 2.0).cos());
        let l = if wide { div_grad(&f).unwrap() } else { laplacian(&f).unwrap() };
        let k2 = PI * PI + PI * PI / 4.0;
        let exact = f.map(|v| -k2 * v);
        l.zip_map(&exact, |a, b| a - b).l2()
    }

    #[test]
    fn laplacians_second_order() {
        for wide in [false, true] {
            let order = (lap_error(32, wide) / lap_error(64, wide)).log2();
            assert!(order >= 1.9, "wide={wide} order {order}");
        }
    }

    #[test]
    fn matrices_match_stencils() {
        let g = grid(9);
        let f = ScalarField::from_fn(g, |x, y| (3.0 * x + y * y).sin());
        let v = VectorField::from_fn(g, |x, y| ((2.0 * y).cos() + x, x * y));
        let gv = gradient(&f).unwrap().stacked();
        let gm = gradient_matrix(&g).mul_vec(&f.values);
        let dv = divergence(&v).unwrap().values;
        let dm = divergence_matrix(&g).mul_vec(&v.stacked());
        let lv = laplacian(&f).unwrap().values;
        let lm = laplacian_matrix(&g).mul_vec(&f.values);
        let wv = div_grad(&f).unwrap().values;
        let wm = div_grad_matrix(&g).mul_vec(&f.values);
        for (a, b) in gv.iter().zip(&gm).chain(dv.iter().zip(&dm)).chain(lv.iter().zip(&lm)).chain(wv.iter().zip(&wm)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let g = grid(8);
        let d = divergence_matrix(&g).to_dense();
        let gt = gradient_matrix(&g).transpose().to_dense();
        for r in 0..d.nrows() {
            for c in 0..d.ncols() {
                assert!((d[(r, c)] + gt[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_of_wide_laplacian_is_constants() {
        let g = Grid::square(8).unwrap();
        let m = div_grad_matrix(&g).to_dense();
        let s = m.singular_values().unwrap();
        let tiny = s.iter().filter(|v| **v < 1e-8).count();
        assert_eq!(tiny, 1);
    }

    #[test]
    fn velocity_gradient_robin_ratio() {
        let g = grid(8);
        let eta = ScalarField::constant(g, 1.0);
        let u = VectorField::from_fn(g, |_, _| (1.0, 0.0));
        let t = velocity_gradient(&u, TangentialClosure::Robin { eta: &eta, a0: 2.0 }).unwrap();
        let h = g.hy();
        let r = (2.0 - 2.0 * h) / (2.0 + 2.0 * h);
        let k = g.idx(3, 0);
        assert!((t.t[0][1][k] - (1.0 - r) / (2.0 * h)).abs() < 1e-12);
        // eta du/dn = -a u at the bottom wall, with the wall-face value and slope
        let wall_u = 0.5 * (1.0 + r);
        let slope = (1.0 - r) / h;
        assert!((slope - 2.0 * wall_u).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = grid(8);
        let f = ScalarField::from_fn(g, |x, y| x.exp() - y);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_snapshot(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"QCHNSFLD");
        assert_eq!(bytes.len(), 32 + 8 * g.n_cells());
        assert_eq!(read_snapshot(&p).unwrap(), f);
        write_field_csv(&dir.path().join("f.csv"), &f).unwrap();
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid(8);
        let mut f = ScalarField::zeros(g);
        f.values[5] = f64::NAN;
        assert!(matches!(gradient(&f), Err(Error::NonFinite(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn divergence_sums_to_zero(seed in 0u64..1000, n in 8usize..20) {
            let g = Grid::new(n, n + 3, 1.0, 0.7).unwrap();
            let v = VectorField::from_fn(g, |x, y| {
                let s = seed as f64;
                ((s * x + 7.0 * y).sin(), (3.0 * x * y + s).cos())
            });
            let d = divergence(&v).unwrap();
            prop_assert!(d.mean().abs() <= 1e-12 * v.l2());
        }

        #[test]
        fn operators_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.1f64..5.0) {
            let g = Grid::square(10).unwrap();
            let f = ScalarField::from_fn(g, |x, y| (s * x).sin() + y);
            let h = ScalarField::from_fn(g, |x, y| (x * y * s).cos());
            let comb = f.zip_map(&h, |p, q| a * p + b * q);
            let lhs = laplacian(&comb).unwrap();
            let rhs = laplacian(&f).unwrap().zip_map(&laplacian(&h).unwrap(), |p, q| a * p + b * q);
            for (l, r) in lhs.values.iter().zip(&rhs.values) {
                prop_assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()));
            }
        }

        #[test]
        fn summation_by_parts(seed in 0u64..500) {
            let g = Grid::square(16).unwrap();
            let s = 1.0 + seed as f64 / 100.0;
            let f = ScalarField::from_fn(g, |x, y| (s * x).cos() * (y * y + 1.0));
            let v = VectorField::from_fn(g, |x, y| ((s * y).sin() * x, (x + s).cos()));
            let lhs = divergence(&v).unwrap().dot(&f) + v.dot(&gradient(&f).unwrap());
            prop_assert!(lhs.abs() <= 1e-12 * v.l2() * f.l2());
        }
    }
}
