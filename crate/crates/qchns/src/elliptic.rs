//! Neumann Poisson solves on mean-zero data and the discrete Helmholtz
//! projection.
//!
//! The singular Neumann operator is made invertible by replacing the first
//! equation with `u_0 = 0`. For mean-zero data the dropped equation holds
//! automatically, and the mean is removed after the solve. A dense bordering
//! row would fill the sparse factor.
//!
//! Grids up to `256 x 256` are factorized directly; larger ones fall back to
//! Jacobi-preconditioned conjugate gradients.
//!
//! Two stencils are available. [`Stencil::Compact`] is the 5-point Laplacian.
//! [`Stencil::Compatible`] is the wide `D G` operator built from the same
//! gradient and divergence used everywhere else, which makes the Helmholtz
//! projection an exact orthogonal projector.

use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField, VectorField};
use crate::sparse::{Csr, SparseLu};

/// Largest cell count factorized directly.
pub const DIRECT_LIMIT: usize = 256 * 256;
const CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Compact,
    Compatible,
}

#[derive(Debug)]
enum Backend {
    Direct(SparseLu),
    Cg,
}

/// Reusable solver for `L u = f`, `mean(u) = 0`.
#[derive(Debug)]
pub struct NeumannPoissonSolver {
    grid: Grid,
    stencil: Stencil,
    matrix: Csr,
    backend: Backend,
}

impl NeumannPoissonSolver {
    pub fn new(grid: Grid, stencil: Stencil) -> Result<NeumannPoissonSolver> {
        let matrix = match stencil {
            Stencil::Compact => grid::laplacian_matrix(&grid),
            Stencil::Compatible => grid::div_grad_matrix(&grid),
        };
        let backend = if grid.n_cells() <= DIRECT_LIMIT {
            let n = grid.n_cells();
            let mut t: Vec<_> = matrix.triplets().into_iter().filter(|&(r, _, _)| r != 0).collect();
            t.push((0, 0, 1.0));
            Backend::Direct(SparseLu::new(Csr::from_triplets(n, n, t))?)
        } else {
            Backend::Cg
        };
        Ok(NeumannPoissonSolver { grid, stencil, matrix, backend })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    /// The unbordered operator matrix.
    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        ScalarField::from_values(self.grid, self.matrix.mul_vec(&u.values))
    }

    /// Solves `L u = f` for mean-zero `f`; raises `CompatibilityViolated`
    /// when the mean of `f` exceeds `1e-10` of its rms.
    pub fn solve(&self, f: &ScalarField) -> Result<ScalarField> {
        self.solve_scaled(f, 0.0)
    }

    /// As [`solve`](Self::solve), with the compatibility tolerance measured
    /// against `max(rms(f), scale)`; used when `f` is a difference of larger
    /// quantities whose rounding dominates its own size.
    pub fn solve_scaled(&self, f: &ScalarField, scale: f64) -> Result<ScalarField> {
        if f.grid != self.grid {
            return Err(Error::ShapeMismatch);
        }
        f.check_finite("neumann poisson rhs")?;
        let (mean, rms) = (f.mean(), f.rms());
        if mean.abs() > 1e-10 * rms.max(scale) {
            return Err(Error::CompatibilityViolated { mean, rms });
        }
        let mut b = f.values.clone();
        b.iter_mut().for_each(|v| *v -= mean);
        let u = self.solve_raw(&b)?;
        Ok(ScalarField::from_values(self.grid, u))
    }

    /// Solves for an already mean-free right-hand side without checks.
    pub(crate) fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_cells();
        match &self.backend {
            Backend::Direct(lu) => {
                let mut rhs = b.to_vec();
                rhs[0] = 0.0;
                let mut x = lu.solve(&rhs)?;
                let m = x.iter().sum::<f64>() / n as f64;
                x.iter_mut().for_each(|v| *v -= m);
                Ok(x)
            }
            Backend::Cg => self.cg(b),
        }
    }

    fn cg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let neg = |x: &[f64]| -> Vec<f64> { self.matrix.mul_vec(x).into_iter().map(|v| -v).collect() };
        let diag: Vec<f64> = (0..n)
            .map(|r| -self.matrix.row(r).filter(|(c, _)| *c == r).map(|(_, v)| v).sum::<f64>())
            .collect();
        let demean = |v: &mut Vec<f64>| {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        demean(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for _ in 0..20 * n {
            let ap = neg(&p);
            let step = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += step * p[k];
                r[k] -= step * ap[k];
            }
            let rel = dot(&r, &r).sqrt() / bnorm;
            if rel <= CG_TOL {
                demean(&mut x);
                return Ok(x);
            }
            if rel < 0.5 * best {
                best = rel;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > 4 * (self.grid.nx + self.grid.ny) {
                    return Err(Error::SolverDiverged(rel));
                }
            }
            z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
            demean(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::SolverDiverged(dot(&r, &r).sqrt() / bnorm))
    }
}

/// One-shot compact-stencil solve of `laplacian(u) = f`, `mean(u) = 0`.
pub fn solve_neumann_poisson(f: &ScalarField) -> Result<ScalarField> {
    NeumannPoissonSolver::new(f.grid, Stencil::Compact)?.solve(f)
}

/// Discrete Helmholtz projection `P v = v - G q`, `D G q = D v`.
#[derive(Debug)]
pub struct HelmholtzProjector {
    solver: NeumannPoissonSolver,
}

impl HelmholtzProjector {
    pub fn new(grid: Grid) -> Result<HelmholtzProjector> {
        Ok(HelmholtzProjector { solver: NeumannPoissonSolver::new(grid, Stencil::Compatible)? })
    }

    pub fn from_solver(solver: NeumannPoissonSolver) -> Result<HelmholtzProjector> {
        if solver.stencil != Stencil::Compatible {
            return Err(Error::DomainError("Helmholtz projection needs the compatible stencil".into()));
        }
        Ok(HelmholtzProjector { solver })
    }

    pub fn solver(&self) -> &NeumannPoissonSolver {
        &self.solver
    }

    /// Returns `(w, q)` with `w = v - gradient(q)`.
    pub fn project(&self, v: &VectorField) -> Result<(VectorField, ScalarField)> {
        let g = self.solver.grid;
        let div = grid::divergence(v)?;
        let scale = v.max_abs() / g.hx().min(g.hy());
        let q = self.solver.solve_scaled(&div, scale)?;
        let (gx, gy) = grid::grad_raw(&g, &q.values);
        let mut w = v.clone();
        for k in 0..g.n_cells() {
            w.x[k] -= gx[k];
            w.y[k] -= gy[k];
        }
        Ok((w, q))
    }
}

/// One-shot projection, see [`HelmholtzProjector`].
pub fn helmholtz_project(v: &VectorField) -> Result<(VectorField, ScalarField)> {
    HelmholtzProjector::new(v.grid)?.project(v)
}

/// `||f||^2_{H^-1} = <-L^{-1} f, f>` for mean-zero `f`.
pub fn h_minus_one_norm_sq(solver: &NeumannPoissonSolver, f: &ScalarField) -> Result<f64> {
    let u = solver.solve(f)?;
    Ok(-u.dot(f))
}
