//! The frozen-coefficient implicit step operator.
//!
//! For a reference phase field `phi0` with `rho0 = rho(phi0)` and
//! `c0 = (1/alpha - phi0) / rho0`, the step acts on `(u, phi')` as
//!
//! ```text
//! u/dt    + K u + G D (c0 G phi')
//! phi'/dt - (1/alpha) D u
//! ```
//!
//! where `K = -div((1/rho0) S(phi0, D.))` is the variational viscous operator
//! of [`crate::strain`] with weights `eta(phi0)/rho0` and friction
//! `a0/rho0`, and `G`, `D` are the central gradient and divergence.
//!
//! Unknowns are stored cell-major: entry `3k + c` holds `u_x`, `u_y`, `phi`
//! of cell `k` for `c = 0, 1, 2`.

use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField, VectorField};
use crate::phase::{self, PhysParams};
use crate::sparse::{Csr, SparseLu};
use crate::strain;

/// Assembled and factorized step operator.
#[derive(Debug)]
pub struct LinearStepSystem {
    pub grid: Grid,
    pub dt: f64,
    pub phi_ref: ScalarField,
    pub params: PhysParams,
    matrix: Csr,
    lu: SparseLu,
}

/// Cell-major position of a component-major vector dof.
#[inline]
fn u_slot(r: usize, n: usize) -> usize {
    3 * (r % n) + r / n
}

/// Coefficients `(eta0/rho0, a0/rho0, c0)` frozen at `phi_ref`.
pub(crate) fn frozen_coefficients(
    phi_ref: &ScalarField,
    p: &PhysParams,
) -> Result<(ScalarField, ScalarField, ScalarField)> {
    let cap_min = phi_ref.values.iter().map(|&v| p.cap(v)).fold(f64::INFINITY, f64::min);
    if !(cap_min > 0.0) {
        return Err(Error::CoefficientSignError(cap_min));
    }
    let rho = phase::density(phi_ref, p);
    phase::check_density_floor(&rho)?;
    let eta = phase::viscosity_field(phi_ref, p)?;
    let w = eta.zip_map(&rho, |e, r| e / r);
    let a = rho.map(|r| p.a0 / r);
    let c = phi_ref.zip_map(&rho, |v, r| p.cap(v) / r);
    Ok((w, a, c))
}

/// `G D (c G phi)` as a `2N x N` matrix.
fn capillary_matrix(g: &Grid, c: &ScalarField) -> Csr {
    let gm = grid::gradient_matrix(g);
    let dm = grid::divergence_matrix(g);
    let mut cc = c.values.clone();
    cc.extend_from_slice(&c.values);
    gm.matmul(&dm.matmul(&gm.scale_rows(&cc)))
}

impl LinearStepSystem {
    /// Assembles and factorizes the step operator at `phi_ref`.
    pub fn assemble(phi_ref: &ScalarField, dt: f64, p: &PhysParams) -> Result<LinearStepSystem> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::DomainError(format!("dt = {dt} must be positive")));
        }
        phi_ref.check_finite("phi_ref")?;
        let g = phi_ref.grid;
        let n = g.n_cells();
        let (w, a, c) = frozen_coefficients(phi_ref, p)?;
        let k = strain::operator_matrix(&g, &w, &a);
        let h = capillary_matrix(&g, &c);
        let d = grid::divergence_matrix(&g);
        let mut t = Vec::with_capacity(k.nnz() + h.nnz() + d.nnz() + 3 * n);
        for r in 0..3 * n {
            t.push((r, r, 1.0 / dt));
        }
        for (r, col, v) in k.triplets() {
            t.push((u_slot(r, n), u_slot(col, n), v));
        }
        for (r, col, v) in h.triplets() {
            t.push((u_slot(r, n), 3 * col + 2, v));
        }
        for (r, col, v) in d.triplets() {
            t.push((3 * r + 2, u_slot(col, n), -v / p.alpha));
        }
        let matrix = Csr::from_triplets(3 * n, 3 * n, t);
        if !matrix.is_finite() {
            return Err(Error::AssemblyNaN);
        }
        let lu = SparseLu::new(matrix.clone())?;
        Ok(LinearStepSystem { grid: g, dt, phi_ref: phi_ref.clone(), params: *p, matrix, lu })
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn pack(u: &VectorField, phi: &ScalarField) -> Vec<f64> {
        let n = u.grid.n_cells();
        let mut v = vec![0.0; 3 * n];
        for k in 0..n {
            v[3 * k] = u.x[k];
            v[3 * k + 1] = u.y[k];
            v[3 * k + 2] = phi.values[k];
        }
        v
    }

    pub fn unpack(g: Grid, v: &[f64]) -> (VectorField, ScalarField) {
        let n = g.n_cells();
        let ux = (0..n).map(|k| v[3 * k]).collect();
        let uy = (0..n).map(|k| v[3 * k + 1]).collect();
        let phi = (0..n).map(|k| v[3 * k + 2]).collect();
        (VectorField::from_components(g, ux, uy), ScalarField::from_values(g, phi))
    }

    /// Matrix action on `(u, phi)`.
    pub fn apply(&self, u: &VectorField, phi: &ScalarField) -> (VectorField, ScalarField) {
        Self::unpack(self.grid, &self.matrix.mul_vec(&Self::pack(u, phi)))
    }

    /// The same operator evaluated by composing field-level stencils.
    pub fn apply_fields(&self, u: &VectorField, phi: &ScalarField) -> Result<(VectorField, ScalarField)> {
        let (w, a, c) = frozen_coefficients(&self.phi_ref, &self.params)?;
        let visc = strain::apply(&w, &a, u);
        let q = grid::divergence(&grid::gradient(phi)?.times(&c))?;
        let h = grid::gradient(&q)?;
        let ru = u.scaled(1.0 / self.dt).axpy(1.0, &visc).axpy(1.0, &h);
        let du = grid::divergence(u)?;
        let rp = phi.zip_map(&du, |f, d| f / self.dt - d / self.params.alpha);
        Ok((ru, rp))
    }

    /// Solves the stacked system; the relative residual is checked against `1e-9`.
    pub fn solve(&self, rhs_u: &VectorField, rhs_phi: &ScalarField) -> Result<(VectorField, ScalarField)> {
        rhs_u.check_finite("rhs_u")?;
        rhs_phi.check_finite("rhs_phi")?;
        let b = Self::pack(rhs_u, rhs_phi);
        let x = self.lu.solve(&b)?;
        let r = self.matrix.mul_vec(&x);
        let num: f64 = r.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if num > 1e-9 * den {
            return Err(Error::SingularSystem(format!("relative residual {:e}", num / den)));
        }
        Ok(Self::unpack(self.grid, &x))
    }
}
