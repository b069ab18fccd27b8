//! Dense spectral checks of the frozen-coefficient operators.
//!
//! With `rho0 = rho(phi0)`, `c = (1/alpha - phi0)/rho0` and
//! `b = (4/3) eta(phi0)/rho0`, the scalar operators on mean-zero grid
//! functions are
//!
//! ```text
//! A g = L D (c G g),    B g = -L (b g),    L = D G
//! ```
//!
//! and the `H^-1` inner product is `<f, g>_W = h_x h_y f^T W g` with
//! `W = (-L)^{-1}` on the mean-zero subspace. Mean-zero vectors are expressed
//! in the orthonormal basis `Q` given by the last `N - 1` columns of the
//! Householder reflector that maps `e_1` to the normalized constant vector.
//!
//! All checks build dense matrices and are limited to grids of at most
//! `48 x 48` cells.

use crate::elliptic::{HelmholtzProjector, NeumannPoissonSolver, Stencil};
use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField, TangentialClosure, VectorField};
use crate::phase::PhysParams;
use crate::sparse::Csr;
use crate::strain;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, MatRef, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

pub const DENSE_LIMIT: usize = 48;
pub const LAB_GRIDS: [usize; 2] = [16, 32];
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const H3_DRIFT: f64 = 0.20;
pub const KORN_DRIFT: f64 = 0.15;
pub const B_DRIFT: f64 = 0.30;
pub const B_SAMPLES: usize = 200;
pub const B_SEED: u64 = 20_240_611;
/// Highest cosine index in the random `g` samples.
pub const B_MODES: usize = 6;

/// Model constants plus uniform scalings of `eta` and `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabParams {
    pub phys: PhysParams,
    pub eta_scale: f64,
    pub c_scale: f64,
}

impl LabParams {
    pub fn new(phys: PhysParams) -> LabParams {
        LabParams { phys, eta_scale: 1.0, c_scale: 1.0 }
    }
}

/// Dense operators frozen at `phi0`.
#[derive(Debug, Clone)]
pub struct DiscreteOperatorBundle {
    pub grid: Grid,
    pub phi0: ScalarField,
    pub params: LabParams,
    /// `D G`, `N x N`.
    pub lap: Csr,
    pub a: Csr,
    pub b: Csr,
    /// Mean-zero basis, `N x (N - 1)`.
    pub q: Mat<f64>,
    /// `H^-1` weight in the `Q` basis (area factor included).
    pub w: Mat<f64>,
    w_half: Mat<f64>,
    w_mhalf: Mat<f64>,
    /// `(Q^T (-L) Q)^{-1}`.
    k_inv: Mat<f64>,
    pub c_coef: ScalarField,
    pub b_coef: ScalarField,
    /// `2 eta(phi0)/rho0`.
    pub nu_coef: ScalarField,
    /// `eta(phi0)/rho0`.
    pub visc_coef: ScalarField,
}

fn mm(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    a * b
}

/// `a x` for sparse `a` and dense `x`.
fn sparse_dense(a: &Csr, x: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows, x.ncols());
    for r in 0..a.nrows {
        for (c, v) in a.row(r) {
            for j in 0..x.ncols() {
                out[(r, j)] += v * x[(c, j)];
            }
        }
    }
    out
}

fn frob(m: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// `||M - M^T|| / ||M||` in the Frobenius norm.
pub fn symmetry_defect(m: MatRef<'_, f64>) -> f64 {
    let n = m.nrows();
    let d = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)] - m[(j, i)]);
    let f = frob(m);
    if f == 0.0 {
        0.0
    } else {
        frob(d.as_ref()) / f
    }
}

fn symmetrize(m: MatRef<'_, f64>) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn sym_eigenvalues(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    symmetrize(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::SingularSystem(format!("eigensolver: {e:?}")))
}

/// `V f(S) V^T` for a symmetric matrix with eigenpairs `(S, V)`.
fn spectral_fn(m: MatRef<'_, f64>, f: impl Fn(f64) -> f64) -> Result<Mat<f64>> {
    let e = symmetrize(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::SingularSystem(format!("eigensolver: {e:?}")))?;
    let (u, s) = (e.U(), e.S().column_vector());
    let n = u.nrows();
    let us = Mat::<f64>::from_fn(n, n, |i, j| u[(i, j)] * f(s[j]));
    Ok(mm(us.as_ref(), u.transpose()))
}

/// Eigenvalues of the pencil `(a, b)` with `b` symmetric positive definite.
fn generalized_eigenvalues(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let llt = symmetrize(b)
        .llt(Side::Lower)
        .map_err(|e| Error::SingularSystem(format!("cholesky: {e:?}")))?;
    let l = llt.L();
    let mut x = symmetrize(a);
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut y = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, y.as_mut(), Par::Seq);
    sym_eigenvalues(y.as_ref())
}

fn householder_basis(n: usize) -> Mat<f64> {
    let s = 1.0 / (n as f64).sqrt();
    let v: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 - s } else { -s }).collect();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    Mat::from_fn(n, n - 1, |i, j| {
        let j = j + 1;
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - 2.0 * v[i] * v[j] / vv
    })
}

impl DiscreteOperatorBundle {
    pub fn new(phi0: &ScalarField, params: LabParams) -> Result<DiscreteOperatorBundle> {
        let g = phi0.grid;
        if g.nx > DENSE_LIMIT || g.ny > DENSE_LIMIT {
            return Err(Error::DomainError(format!(
                "operator lab is limited to {DENSE_LIMIT}x{DENSE_LIMIT}, got {}x{}",
                g.nx, g.ny
            )));
        }
        phi0.check_finite("phi0")?;
        let p = &params.phys;
        let n = g.n_cells();
        let mut rho = Vec::with_capacity(n);
        let mut eta = Vec::with_capacity(n);
        for &v in &phi0.values {
            let r = p.rho(v);
            if !(r > 0.0) {
                return Err(Error::DensityFloorViolated(r));
            }
            rho.push(r);
            eta.push(crate::phase::viscosity(v, p)? * params.eta_scale);
        }
        let cap_min = phi0.values.iter().map(|&v| p.cap(v)).fold(f64::INFINITY, f64::min);
        if !(cap_min > 0.0) {
            return Err(Error::CoefficientSignError(cap_min));
        }
        let field = |f: &dyn Fn(usize) -> f64| ScalarField::from_values(g, (0..n).map(f).collect());
        let c_coef = field(&|k| params.c_scale * p.cap(phi0.values[k]) / rho[k]);
        let b_coef = field(&|k| 4.0 / 3.0 * eta[k] / rho[k]);
        let nu_coef = field(&|k| 2.0 * eta[k] / rho[k]);
        let visc_coef = field(&|k| eta[k] / rho[k]);

        let gm = grid::gradient_matrix(&g);
        let dm = grid::divergence_matrix(&g);
        let lap = dm.matmul(&gm);
        let mut cc = c_coef.values.clone();
        cc.extend_from_slice(&c_coef.values);
        let a = lap.matmul(&dm.matmul(&gm.scale_rows(&cc)));
        let b = lap.matmul(&Csr::diag(&b_coef.values)).scale(-1.0);

        let q = householder_basis(n);
        let lq = sparse_dense(&lap, q.as_ref());
        let k_hat = mm(q.transpose(), lq.as_ref());
        let area = g.cell_area();
        let k_hat = Mat::<f64>::from_fn(n - 1, n - 1, |i, j| -0.5 * (k_hat[(i, j)] + k_hat[(j, i)]));
        let k_inv = spectral_fn(k_hat.as_ref(), |s| 1.0 / s)?;
        let w = Mat::<f64>::from_fn(n - 1, n - 1, |i, j| area * k_inv[(i, j)]);
        let w_half = spectral_fn(k_hat.as_ref(), |s| (area / s).sqrt())?;
        let w_mhalf = spectral_fn(k_hat.as_ref(), |s| (s / area).sqrt())?;
        Ok(DiscreteOperatorBundle {
            grid: g,
            phi0: phi0.clone(),
            params,
            lap,
            a,
            b,
            q,
            w,
            w_half,
            w_mhalf,
            k_inv,
            c_coef,
            b_coef,
            nu_coef,
            visc_coef,
        })
    }

    /// `Q^T M Q`.
    pub fn restrict(&self, m: &Csr) -> Mat<f64> {
        mm(self.q.transpose(), sparse_dense(m, self.q.as_ref()).as_ref())
    }

    /// The W-symmetric form `W^{1/2} X W^{-1/2}` of a restricted operator.
    fn w_symmetric(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let t = mm(self.w_half.as_ref(), x);
        symmetrize(mm(t.as_ref(), self.w_mhalf.as_ref()).as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H12Report {
    pub sym_defect_a: f64,
    pub sym_defect_b: f64,
    pub min_eig_a: f64,
    pub min_eig_b: f64,
    pub alpha: f64,
}

impl H12Report {
    pub fn passed(&self) -> bool {
        self.sym_defect_a <= SYMMETRY_TOL
            && self.sym_defect_b <= SYMMETRY_TOL
            && self.min_eig_a > 0.0
            && self.min_eig_b > 0.0
    }

    /// Smallest eigenvalues of `alpha A` and `alpha B`.
    pub fn scaled_min_eigs(&self) -> (f64, f64) {
        (self.alpha * self.min_eig_a, self.alpha * self.min_eig_b)
    }
}

/// Self-adjointness and positivity of `A` and `B` in the `H^-1` metric.
pub fn check_h1_h2(bundle: &DiscreteOperatorBundle) -> Result<H12Report> {
    let ah = bundle.restrict(&bundle.a);
    let bh = bundle.restrict(&bundle.b);
    let gram_a = mm(bundle.w.as_ref(), ah.as_ref());
    let gram_b = mm(bundle.w.as_ref(), bh.as_ref());
    let ea = sym_eigenvalues(bundle.w_symmetric(ah.as_ref()).as_ref())?;
    let eb = sym_eigenvalues(bundle.w_symmetric(bh.as_ref()).as_ref())?;
    Ok(H12Report {
        sym_defect_a: symmetry_defect(gram_a.as_ref()),
        sym_defect_b: symmetry_defect(gram_b.as_ref()),
        min_eig_a: ea[0],
        min_eig_b: eb[0],
        alpha: bundle.params.phys.alpha,
    })
}

/// Extreme constants with `rho1 A^{1/2} <= B <= rho2 A^{1/2}` for the
/// alpha-scaled pair `(alpha A, alpha B)`.
pub fn check_h3(bundle: &DiscreteOperatorBundle) -> Result<(f64, f64)> {
    let alpha = bundle.params.phys.alpha;
    let at = bundle.w_symmetric(bundle.restrict(&bundle.a).as_ref());
    let bt = bundle.w_symmetric(bundle.restrict(&bundle.b).as_ref());
    let a_m14 = spectral_fn(at.as_ref(), |s| (alpha * s).powf(-0.25))?;
    let t = mm(a_m14.as_ref(), bt.as_ref());
    let m = mm(t.as_ref(), a_m14.as_ref());
    let ev = sym_eigenvalues(m.as_ref())?;
    Ok((alpha * ev[0], alpha * ev[ev.len() - 1]))
}

/// `P_sigma(H(psi) grad nu - g grad nu)` with `D G psi = g` and `H` the
/// discrete Hessian.
pub fn apply_b1(
    bundle: &DiscreteOperatorBundle,
    solver: &NeumannPoissonSolver,
    projector: &HelmholtzProjector,
    g: &ScalarField,
) -> Result<VectorField> {
    let grid = bundle.grid;
    let n = grid.n_cells();
    let psi = solver.solve_scaled(g, g.max_abs())?;
    let gpsi = grid::gradient(&psi)?;
    let hess = grid::velocity_gradient(&gpsi, TangentialClosure::Mirror)?;
    let gnu = grid::gradient(&bundle.nu_coef)?;
    let mut vx = vec![0.0; n];
    let mut vy = vec![0.0; n];
    for k in 0..n {
        vx[k] = hess.t[0][0][k] * gnu.x[k] + hess.t[0][1][k] * gnu.y[k] - g.values[k] * gnu.x[k];
        vy[k] = hess.t[1][0][k] * gnu.x[k] + hess.t[1][1][k] * gnu.y[k] - g.values[k] * gnu.y[k];
    }
    let v = VectorField::from_components(grid, vx, vy);
    Ok(projector.project(&v)?.0)
}

/// `||g||_{L2}^{1/2} ||g||_{H1}^{1/2}` with face differences for the
/// seminorm.
pub fn interpolation_norm(g: &ScalarField) -> f64 {
    let gr = g.grid;
    let (hx, hy) = (gr.hx(), gr.hy());
    let mut semi = 0.0;
    for j in 0..gr.ny {
        for i in 0..gr.nx {
            if i + 1 < gr.nx {
                let d = (g.at(i + 1, j) - g.at(i, j)) / hx;
                semi += d * d;
            }
            if j + 1 < gr.ny {
                let d = (g.at(i, j + 1) - g.at(i, j)) / hy;
                semi += d * d;
            }
        }
    }
    let l2 = g.l2();
    let h1 = (l2 * l2 + semi * gr.cell_area()).sqrt();
    (l2 * h1).sqrt()
}

/// Mean-zero random combination of `cos(m pi x/Lx) cos(n pi y/Ly)` with
/// `m, n <= B_MODES`.
pub fn random_smooth_g(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let mut coef = Vec::new();
    for m in 0..=B_MODES {
        for n in 0..=B_MODES {
            if m + n > 0 {
                coef.push((m as f64, n as f64, rng.random_range(-1.0..=1.0)));
            }
        }
    }
    let (kx, ky) = (std::f64::consts::PI / grid.lx, std::f64::consts::PI / grid.ly);
    let mut g = ScalarField::from_fn(grid, |x, y| {
        coef.iter().map(|&(m, n, a)| a * (m * kx * x).cos() * (n * ky * y).cos()).sum()
    });
    g.remove_mean();
    g
}

pub fn checkerboard(grid: Grid) -> ScalarField {
    let mut g = ScalarField::from_values(
        grid,
        (0..grid.n_cells()).map(|k| if (k % grid.nx + k / grid.nx) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
    );
    g.remove_mean();
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoundReport {
    /// Max over the random samples of `||B1 g|| / (||g||^{1/2} ||g||_{H1}^{1/2})`.
    pub max_ratio: f64,
    pub checkerboard_ratio: f64,
    /// Max over the random samples of `||B g||_{H^-1} / ||A g||_{H^-1}`.
    pub b_over_a: f64,
}

pub fn check_relative_bound_b(bundle: &DiscreteOperatorBundle, samples: usize, seed: u64) -> Result<BBoundReport> {
    let grid = bundle.grid;
    let solver = NeumannPoissonSolver::new(grid, Stencil::Compatible)?;
    let projector = HelmholtzProjector::new(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_ratio, mut b_over_a) = (0.0f64, 0.0f64);
    let h_minus = |x: &[f64]| -> f64 {
        let xh = mm(bundle.q.transpose(), Mat::from_fn(x.len(), 1, |i, _| x[i]).as_ref());
        let wx = mm(bundle.w.as_ref(), xh.as_ref());
        (0..xh.nrows()).map(|i| xh[(i, 0)] * wx[(i, 0)]).sum::<f64>().sqrt()
    };
    for _ in 0..samples {
        let g = random_smooth_g(grid, &mut rng);
        let b1 = apply_b1(bundle, &solver, &projector, &g)?;
        max_ratio = max_ratio.max(b1.l2() / interpolation_norm(&g));
        let bg = h_minus(&bundle.b.mul_vec(&g.values));
        let ag = h_minus(&bundle.a.mul_vec(&g.values));
        b_over_a = b_over_a.max(bg / ag);
    }
    let cb = checkerboard(grid);
    let b1 = apply_b1(bundle, &solver, &projector, &cb)?;
    Ok(BBoundReport { max_ratio, checkerboard_ratio: b1.l2() / interpolation_norm(&cb), b_over_a })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KornReport {
    pub constant: f64,
    /// Largest wall-normal component of the rigid rotation about the center.
    pub rotation_normal_flux: f64,
}

/// Best constant `C` in `||u||_{H1} <= C ||D u||` over wall-tangent fields,
/// with `a0 oint |u_t|^2` added to the right-hand side when `a0 > 0`.
pub fn korn_constant(grid: Grid, a0: f64) -> Result<f64> {
    if grid.nx > DENSE_LIMIT || grid.ny > DENSE_LIMIT {
        return Err(Error::DomainError("korn_constant: grid exceeds the dense limit".into()));
    }
    let sd = strain::symmetric_gradient_matrix(&grid);
    let qd = if a0 > 0.0 {
        sd.add_scaled(&strain::friction_matrix(&grid, &ScalarField::constant(grid, a0)), 1.0)
    } else {
        sd
    };
    let (hg, hm) = strain::h1_matrices(&grid);
    let h = hg.add_scaled(&hm, 1.0);
    let ev = generalized_eigenvalues(qd.to_dense().as_ref(), h.to_dense().as_ref())?;
    if !(ev[0] > 0.0) {
        return Err(Error::SingularSystem(format!("Korn pencil has eigenvalue {}", ev[0])));
    }
    Ok(1.0 / ev[0].sqrt())
}

/// `max |n.u|` on the walls for `u = (y - yc, -(x - xc))`.
pub fn rotation_normal_flux(grid: Grid) -> f64 {
    let (xc, yc) = (0.5 * grid.lx, 0.5 * grid.ly);
    let mut m: f64 = 0.0;
    for j in 0..grid.ny {
        m = m.max((grid.y(j) - yc).abs());
    }
    for i in 0..grid.nx {
        m = m.max((grid.x(i) - xc).abs());
    }
    m
}

pub fn korn_report(grid: Grid, a0: f64) -> Result<KornReport> {
    Ok(KornReport { constant: korn_constant(grid, a0)?, rotation_normal_flux: rotation_normal_flux(grid) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AaReport {
    pub dim: usize,
    pub sym_defect: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub condition: f64,
    /// Smallest `a(u, u) / ||u||_{H1}^2` over the solenoidal subspace.
    pub coercivity: f64,
    /// `min(2 eta/rho0) / (3 C^2)` with the friction-free Korn constant.
    pub coercivity_bound: f64,
    pub min_eig_10a0: f64,
}

impl AaReport {
    pub fn passed(&self) -> bool {
        self.sym_defect <= SYMMETRY_TOL
            && self.min_eig > 0.0
            && self.condition.is_finite()
            && self.coercivity >= self.coercivity_bound * (1.0 - 1e-9)
            && self.min_eig_10a0 >= self.min_eig * (1.0 - 1e-9)
    }
}

/// Dense `P_sigma`, `2N x 2N`.
pub fn projector_matrix(bundle: &DiscreteOperatorBundle) -> Mat<f64> {
    let g = bundle.grid;
    let n = g.n_cells();
    let gq = sparse_dense(&grid::gradient_matrix(&g), bundle.q.as_ref());
    let t = mm(gq.as_ref(), bundle.k_inv.as_ref());
    let r = mm(t.as_ref(), gq.transpose());
    Mat::from_fn(2 * n, 2 * n, |i, j| if i == j { 1.0 } else { 0.0 } - r[(i, j)])
}

/// The viscous-friction operator restricted to the discrete solenoidal,
/// wall-tangent subspace.
pub fn check_aa(bundle: &DiscreteOperatorBundle, korn_free: f64) -> Result<AaReport> {
    let g = bundle.grid;
    let n = g.n_cells();
    let p = &bundle.params.phys;
    let pm = projector_matrix(bundle);
    let e = symmetrize(pm.as_ref())
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::SingularSystem(format!("eigensolver: {e:?}")))?;
    let s = e.S().column_vector();
    let cols: Vec<usize> = (0..2 * n).filter(|&j| s[j] > 0.5).collect();
    let u = e.U();
    let z = Mat::<f64>::from_fn(2 * n, cols.len(), |i, j| u[(i, cols[j])]);
    let rho0 = bundle.phi0.map(|v| p.rho(v));
    let area = g.cell_area();
    let gram_for = |a0: f64| -> Result<Mat<f64>> {
        let a = rho0.map(|r| a0 / r);
        let k = strain::operator_matrix(&g, &bundle.visc_coef, &a);
        // M P K with the lumped mass M = area I
        let pk = mm(pm.as_ref(), k.to_dense().as_ref());
        let mpk = Mat::<f64>::from_fn(2 * n, 2 * n, |i, j| area * pk[(i, j)]);
        let t = mm(z.transpose(), mpk.as_ref());
        Ok(mm(t.as_ref(), z.as_ref()))
    };
    let gram = gram_for(p.a0)?;
    let ev = sym_eigenvalues(gram.as_ref())?;
    let ev10 = sym_eigenvalues(gram_for(10.0 * p.a0)?.as_ref())?;
    let (hg, hm) = strain::h1_matrices(&g);
    let h = hg.add_scaled(&hm, 1.0).to_dense();
    let zh = mm(mm(z.transpose(), h.as_ref()).as_ref(), z.as_ref());
    let coer = generalized_eigenvalues(gram.as_ref(), zh.as_ref())?;
    let nu_min = bundle.nu_coef.min();
    let (lo, hi) = (ev[0] / area, ev[ev.len() - 1] / area);
    Ok(AaReport {
        dim: cols.len(),
        sym_defect: symmetry_defect(gram.as_ref()),
        min_eig: lo,
        max_eig: hi,
        condition: hi / lo,
        coercivity: coer[0],
        coercivity_bound: nu_min / (3.0 * korn_free * korn_free),
        min_eig_10a0: ev10[0] / area,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A1Report {
    pub min_re_pinned: f64,
    pub min_re_unpinned: f64,
    /// Largest `|arg lambda|` in degrees over the nonzero spectrum.
    pub angle_pinned: f64,
    pub angle_unpinned: f64,
    /// Number of eigenvalues with `|lambda| <= 1e-9 max |lambda|`.
    pub zero_modes_unpinned: usize,
    /// The `(phi', phi')` block is identically zero.
    pub zero_block_exact: bool,
}

impl A1Report {
    pub fn passed(&self) -> bool {
        self.min_re_pinned > 0.0 && self.angle_pinned < 90.0 && self.zero_block_exact
    }
}

/// Dense block matrix `[[0, -(1/alpha) P0], [A, B]]` on `(phi', g)`;
/// `pinned` restricts both unknowns to mean zero.
pub fn a1_matrix(bundle: &DiscreteOperatorBundle, pinned: bool) -> Mat<f64> {
    let n = bundle.grid.n_cells();
    let ia = 1.0 / bundle.params.phys.alpha;
    if pinned {
        let m = n - 1;
        let ah = bundle.restrict(&bundle.a);
        let bh = bundle.restrict(&bundle.b);
        Mat::from_fn(2 * m, 2 * m, |i, j| match (i < m, j < m) {
            (true, true) => 0.0,
            (true, false) => {
                if i == j - m {
                    -ia
                } else {
                    0.0
                }
            }
            (false, true) => ah[(i - m, j)],
            (false, false) => bh[(i - m, j - m)],
        })
    } else {
        let ad = bundle.a.to_dense();
        let bd = bundle.b.to_dense();
        let inv_n = 1.0 / n as f64;
        Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, true) => 0.0,
            (true, false) => -ia * (if i == j - n { 1.0 } else { 0.0 } - inv_n),
            (false, true) => ad[(i - n, j)],
            (false, false) => bd[(i - n, j - n)],
        })
    }
}

fn spectrum_summary(m: &Mat<f64>) -> Result<(f64, f64, usize)> {
    let ev = m.eigenvalues().map_err(|e| Error::SingularSystem(format!("eigensolver: {e:?}")))?;
    let big = ev.iter().map(|z| z.re.hypot(z.im)).fold(0.0, f64::max);
    let mut min_re = f64::INFINITY;
    let mut angle: f64 = 0.0;
    let mut zeros = 0;
    for z in &ev {
        if z.re.hypot(z.im) <= 1e-9 * big {
            zeros += 1;
            min_re = min_re.min(0.0);
            continue;
        }
        min_re = min_re.min(z.re);
        angle = angle.max(z.im.atan2(z.re).abs().to_degrees());
    }
    Ok((min_re, angle, zeros))
}

pub fn check_a1(bundle: &DiscreteOperatorBundle) -> Result<A1Report> {
    let n = bundle.grid.n_cells();
    let pinned = a1_matrix(bundle, true);
    let unpinned = a1_matrix(bundle, false);
    let mut zero_block_exact = true;
    for i in 0..n {
        for j in 0..n {
            zero_block_exact &= unpinned[(i, j)] == 0.0 && (i >= n - 1 || j >= n - 1 || pinned[(i, j)] == 0.0);
        }
    }
    let (min_re_pinned, angle_pinned, _) = spectrum_summary(&pinned)?;
    let (min_re_unpinned, angle_unpinned, zero_modes_unpinned) = spectrum_summary(&unpinned)?;
    Ok(A1Report { min_re_pinned, min_re_unpinned, angle_pinned, angle_unpinned, zero_modes_unpinned, zero_block_exact })
}

/// Results on one grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResults {
    pub n: usize,
    pub h12: H12Report,
    pub h3: (f64, f64),
    pub b_bound: BBoundReport,
    pub korn_free: f64,
    pub korn: KornReport,
    pub aa: AaReport,
    pub a1: Option<A1Report>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabReport {
    pub grids: Vec<GridResults>,
    pub assertions: Vec<Assertion>,
}

impl LabReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

fn drift(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a).abs() / a.abs().max(b.abs())
    }
}

/// Runs every check on one grid; the `A1` spectrum only when `with_a1`.
pub fn run_grid(phi0: &ScalarField, params: LabParams, with_a1: bool) -> Result<GridResults> {
    let bundle = DiscreteOperatorBundle::new(phi0, params)?;
    let korn_free = korn_constant(bundle.grid, 0.0)?;
    Ok(GridResults {
        n: bundle.grid.nx,
        h12: check_h1_h2(&bundle)?,
        h3: check_h3(&bundle)?,
        b_bound: check_relative_bound_b(&bundle, B_SAMPLES, B_SEED)?,
        korn_free,
        korn: korn_report(bundle.grid, params.phys.a0)?,
        aa: check_aa(&bundle, korn_free)?,
        a1: if with_a1 { Some(check_a1(&bundle)?) } else { None },
    })
}

/// The full lab on the `LAB_GRIDS`, with `phi0` sampled per grid.
pub fn run_lab(params: LabParams, lx: f64, ly: f64, phi0: impl Fn(Grid) -> Result<ScalarField>) -> Result<LabReport> {
    let mut grids = Vec::new();
    for (i, &n) in LAB_GRIDS.iter().enumerate() {
        let g = Grid::new(n, n, lx, ly)?;
        grids.push(run_grid(&phi0(g)?, params, i == 0)?);
    }
    let mut out = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        out.push(Assertion { name: name.to_string(), passed, detail });
    };
    for r in &grids {
        let n = r.n;
        check(
            &format!("H1/H2 {n}x{n}"),
            r.h12.passed(),
            format!(
                "sym A {:.2e}, sym B {:.2e}, min eig A {:.4e}, min eig B {:.4e}",
                r.h12.sym_defect_a, r.h12.sym_defect_b, r.h12.min_eig_a, r.h12.min_eig_b
            ),
        );
        check(
            &format!("H3 bracket {n}x{n}"),
            r.h3.0 > 0.0 && r.h3.0 <= r.h3.1 && r.h3.1.is_finite(),
            format!("rho1 {:.6e}, rho2 {:.6e}", r.h3.0, r.h3.1),
        );
        check(
            &format!("A_a {n}x{n}"),
            r.aa.passed(),
            format!(
                "dim {}, sym {:.2e}, eig [{:.4e}, {:.4e}], cond {:.3e}, coercivity {:.4e} >= {:.4e}, min eig at 10 a0 {:.4e}",
                r.aa.dim, r.aa.sym_defect, r.aa.min_eig, r.aa.max_eig, r.aa.condition, r.aa.coercivity,
                r.aa.coercivity_bound, r.aa.min_eig_10a0
            ),
        );
        check(
            &format!("Korn {n}x{n}"),
            r.korn.constant.is_finite() && r.korn.rotation_normal_flux > 0.0,
            format!(
                "C {:.6} (a0 = 0: {:.6}), rotation wall flux {:.3}",
                r.korn.constant, r.korn_free, r.korn.rotation_normal_flux
            ),
        );
        check(
            &format!("B1 bound {n}x{n}"),
            r.b_bound.max_ratio.is_finite(),
            format!(
                "max ratio {:.6e}, checkerboard {:.6e}, max |Bg|/|Ag| in H^-1 {:.4e}",
                r.b_bound.max_ratio, r.b_bound.checkerboard_ratio, r.b_bound.b_over_a
            ),
        );
        if let Some(a1) = r.a1 {
            check(
                &format!("A1 spectrum {n}x{n}"),
                a1.passed(),
                format!(
                    "pinned: min Re {:.4e}, angle {:.2} deg; unpinned: min Re {:.4e}, angle {:.2} deg, {} zero modes; zero block {}",
                    a1.min_re_pinned, a1.angle_pinned, a1.min_re_unpinned, a1.angle_unpinned,
                    a1.zero_modes_unpinned, a1.zero_block_exact
                ),
            );
        }
    }
    if let [c, f] = &grids[..] {
        let d1 = drift(c.h3.0, f.h3.0);
        let d2 = drift(c.h3.1, f.h3.1);
        check("H3 drift", d1 <= H3_DRIFT && d2 <= H3_DRIFT, format!("rho1 {:.2}%, rho2 {:.2}%", 100.0 * d1, 100.0 * d2));
        let dk = drift(c.korn.constant, f.korn.constant);
        check("Korn drift", dk <= KORN_DRIFT, format!("{:.2}%", 100.0 * dk));
        let db = drift(c.b_bound.max_ratio, f.b_bound.max_ratio);
        check("B1 bound drift", db <= B_DRIFT, format!("{:.2}%", 100.0 * db));
    }
    Ok(LabReport { grids, assertions: out })
}

impl fmt::Display for LabReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.assertions {
            writeln!(f, "{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail)?;
        }
        write!(f, "operator lab: {}", if self.passed() { "all checks passed" } else { "FAILED" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> LabParams {
        LabParams::new(PhysParams::new(-0.5, 2.0, 1.0, false).unwrap())
    }

    fn smooth_phi(g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x, y| 0.3 * (PI * x).cos() * (PI * y).cos() + 0.1 * (2.0 * PI * x).sin())
    }

    #[test]
    fn basis_is_orthonormal_and_mean_free() {
        let q = householder_basis(9);
        let qtq = mm(q.transpose(), q.as_ref());
        for i in 0..8 {
            let s: f64 = (0..9).map(|r| q[(r, i)]).sum();
            assert!(s.abs() < 1e-14);
            for j in 0..8 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn h1_h2_hold_for_constant_and_smooth_phi() {
        let g = Grid::square(12).unwrap();
        for phi in [ScalarField::zeros(g), smooth_phi(g)] {
            let b = DiscreteOperatorBundle::new(&phi, params()).unwrap();
            let r = check_h1_h2(&b).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn h3_constants_for_uniform_phase() {
        let g = Grid::square(12).unwrap();
        let p = params();
        let b = DiscreteOperatorBundle::new(&ScalarField::zeros(g), p).unwrap();
        let (r1, r2) = check_h3(&b).unwrap();
        let alpha = p.phys.alpha;
        let expect = alpha * b.b_coef.values[0] / (alpha * b.c_coef.values[0]).sqrt();
        assert!((r1 - expect).abs() < 1e-8 * expect, "{r1} {expect}");
        assert!((r2 - expect).abs() < 1e-8 * expect);
    }

    #[test]
    fn h3_ratio_invariant_under_joint_scaling() {
        let g = Grid::square(10).unwrap();
        let phi = smooth_phi(g);
        let base = check_h3(&DiscreteOperatorBundle::new(&phi, params()).unwrap()).unwrap();
        let scaled = LabParams { eta_scale: 2.0, c_scale: 2.0, ..params() };
        let s = check_h3(&DiscreteOperatorBundle::new(&phi, scaled).unwrap()).unwrap();
        assert!(s.0 > base.0 * 1.2);
        assert!((s.1 / s.0 - base.1 / base.0).abs() < 1e-8 * base.1 / base.0);
    }

    #[test]
    fn b1_vanishes_for_uniform_phase() {
        let g = Grid::square(12).unwrap();
        let b = DiscreteOperatorBundle::new(&ScalarField::constant(g, 0.2), params()).unwrap();
        let r = check_relative_bound_b(&b, 5, 1).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert_eq!(r.checkerboard_ratio, 0.0);
    }

    #[test]
    fn b1_is_nonzero_for_varying_phase() {
        let g = Grid::square(12).unwrap();
        let b = DiscreteOperatorBundle::new(&smooth_phi(g), params()).unwrap();
        let r = check_relative_bound_b(&b, 5, 1).unwrap();
        assert!(r.max_ratio > 0.0 && r.max_ratio.is_finite());
    }

    #[test]
    fn korn_constant_is_positive_and_friction_helps() {
        let g = Grid::square(10).unwrap();
        let c0 = korn_constant(g, 0.0).unwrap();
        let c1 = korn_constant(g, 5.0).unwrap();
        assert!(c0.is_finite() && c0 > 1.0);
        assert!(c1 <= c0);
        assert!(rotation_normal_flux(g) > 0.4);
    }

    #[test]
    fn projector_matrix_is_idempotent() {
        let g = Grid::square(8).unwrap();
        let b = DiscreteOperatorBundle::new(&ScalarField::zeros(g), params()).unwrap();
        let p = projector_matrix(&b);
        let pp = mm(p.as_ref(), p.as_ref());
        let n = p.nrows();
        let d = Mat::<f64>::from_fn(n, n, |i, j| pp[(i, j)] - p[(i, j)]);
        assert!(frob(d.as_ref()) < 1e-10 * frob(p.as_ref()));
    }

    #[test]
    fn stokes_navier_block_is_spd_and_monotone() {
        let g = Grid::square(10).unwrap();
        for phi in [ScalarField::zeros(g), smooth_phi(g)] {
            let b = DiscreteOperatorBundle::new(&phi, params()).unwrap();
            let c = korn_constant(g, 0.0).unwrap();
            let r = check_aa(&b, c).unwrap();
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.dim, g.n_cells() + 1);
        }
    }

    #[test]
    fn block_spectrum_in_right_half_plane() {
        let g = Grid::square(8).unwrap();
        let b = DiscreteOperatorBundle::new(&smooth_phi(g), params()).unwrap();
        let r = check_a1(&b).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.zero_modes_unpinned >= 1);
    }

    #[test]
    fn oversized_grid_rejected() {
        let g = Grid::square(50).unwrap();
        assert!(matches!(
            DiscreteOperatorBundle::new(&ScalarField::zeros(g), params()),
            Err(Error::DomainError(_))
        ));
    }
}
