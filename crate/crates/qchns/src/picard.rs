//! Nonlinear remainder and the per-step fixed-point iteration.
//!
//! Each step freezes `phi_ref = phi^n`, factorizes the step operator once and
//! iterates
//!
//! ```text
//! L (u^{k+1}, phi'^{k+1}) = (u^n/dt + F1(u^k, phi^k), F2(u^k, phi^k))
//! ```
//!
//! on the increment `phi' = phi - phi^n` until the relative stacked
//! increment falls below the tolerance. A step that does not converge is
//! retried with half the time step, at most five times.
//!
//! `F1` collects every momentum term not in the step operator. With
//! `c = 1/alpha - phi`, `rho = rho(phi)`, `rho0 = rho(phi_ref)`:
//!
//! ```text
//! - (u.grad) u
//! + (c/rho) G f(phi)
//! - (1/alpha^2)(1/rho) G psi,            D G psi = D u
//! - G y                                  (gravity)
//! + (1/rho) G(G c . G phi) + (1/rho) G c (D G phi)
//! - S(phi, Du) . G(1/rho)
//! + G(G(1/rho) . c G phi') + G(1/rho) D(c G phi)
//! - G((1/rho) D(c G phi^n))
//! - G D((1/rho - 1/rho0) c G phi')
//! - K[(1/rho - 1/rho0) eta, (1/rho - 1/rho0) a0] u
//! + G D((1/rho0)(phi - phi_ref) G phi')
//! - K[(eta - eta0)/rho0, 0] u
//! - G D((c0/rho0) G(phi_ref - phi^n))       (re-frozen operator only)
//! ```
//!
//! The last two lines compensate for freezing the step operator at
//! `phi_ref`; together the step operator and `F1` reproduce the momentum
//! balance `u_t = ... + (c/rho) G mu` with `mu = f(phi) - D G phi`.

use crate::config::SimConfig;
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::elliptic::HelmholtzProjector;
use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField, TangentialClosure, VectorField};
use crate::linear_step::LinearStepSystem;
use crate::phase::{self, PhysParams};
use crate::strain;
use std::path::Path;

/// Largest admissible `|phi|` during a run.
pub const PHI_BOUND: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub dt_shrink: f64,
    pub max_halvings: u32,
    /// Re-freeze the step operator at every iterate instead of at `phi^n`.
    pub refreeze: bool,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig { tol: 1e-8, max_iters: 50, dt_shrink: 0.5, max_halvings: 5, refreeze: false }
    }
}

/// Outcome of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Ratio of the last two absolute increments (0 after a single iteration).
    pub contraction: f64,
    pub increments: Vec<f64>,
    pub dt_used: f64,
    pub halvings: u32,
    /// Mean removed from `div(phi u)` at the last iterate.
    pub f2_mean: f64,
}

/// Fields derived from `(u, phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub rho: ScalarField,
    pub eta: ScalarField,
    pub mu: ScalarField,
    /// `psi = (D G)^{-1} D u`.
    pub psi: ScalarField,
    /// `mu_p = psi / alpha`.
    pub mu_p: ScalarField,
    /// `g = D u`.
    pub g: ScalarField,
    /// `w = u - G psi`, the solenoidal part of `u`.
    pub w: VectorField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: VectorField,
    pub phi: ScalarField,
    pub derived: Derived,
}

/// Solver context shared by all steps of a run.
#[derive(Debug)]
pub struct Stepper {
    pub grid: Grid,
    pub params: PhysParams,
    pub cfg: PicardConfig,
    projector: HelmholtzProjector,
    gravity: Vec<f64>,
}

enum StepOutcome {
    Converged(SimState, PicardReport),
    NotConverged,
}

impl Stepper {
    pub fn new(grid: Grid, params: PhysParams, cfg: PicardConfig) -> Result<Stepper> {
        let projector = HelmholtzProjector::new(grid)?;
        let y = ScalarField::from_fn(grid, |_, y| y);
        let gravity = grid::grad_raw(&grid, &y.values).1;
        Ok(Stepper { grid, params, cfg, projector, gravity })
    }

    /// `psi` with `D G psi = D u`, mean zero.
    pub fn quasi_pressure(&self, u: &VectorField) -> Result<ScalarField> {
        let g = grid::divergence(u)?;
        let scale = u.max_abs() / self.grid.hx().min(self.grid.hy());
        self.projector.solver().solve_scaled(&g, scale)
    }

    pub fn derive(&self, u: &VectorField, phi: &ScalarField) -> Result<Derived> {
        let p = &self.params;
        let rho = phase::density(phi, p);
        let eta = phase::viscosity_field(phi, p)?;
        let mu = phase::chemical_potential(phi)?;
        let g = grid::divergence(u)?;
        let psi = self.quasi_pressure(u)?;
        let mu_p = psi.map(|v| v / p.alpha);
        let (gx, gy) = grid::grad_raw(&self.grid, &psi.values);
        let mut w = u.clone();
        for k in 0..self.grid.n_cells() {
            w.x[k] -= gx[k];
            w.y[k] -= gy[k];
        }
        Ok(Derived { rho, eta, mu, psi, mu_p, g, w })
    }

    pub fn state(&self, t: f64, u: VectorField, phi: ScalarField) -> Result<SimState> {
        let u = u.with_friction(self.params.a0);
        let derived = self.derive(&u, &phi)?;
        Ok(SimState { t, u, phi, derived })
    }

    /// Gravity forcing `-G y` (zero when gravity is off).
    pub fn gravity_forcing(&self) -> VectorField {
        let n = self.grid.n_cells();
        let gy = if self.params.gravity_on { self.gravity.iter().map(|v| -v).collect() } else { vec![0.0; n] };
        VectorField::from_components(self.grid, vec![0.0; n], gy)
    }

    /// The momentum remainder at iterate `(u, phi)` for step start `phi_old`
    /// and frozen reference `phi_ref`.
    pub fn nonlinear_rhs_f1(
        &self,
        u: &VectorField,
        phi: &ScalarField,
        phi_old: &ScalarField,
        phi_ref: &ScalarField,
    ) -> Result<VectorField> {
        let g = &self.grid;
        let p = &self.params;
        let n = g.n_cells();
        let rho = phase::density(phi, p);
        phase::check_density_floor(&rho)?;
        let rho0 = phase::density(phi_ref, p);
        let eta = phase::viscosity_field(phi, p)?;
        let eta0 = phase::viscosity_field(phi_ref, p)?;
        let ir = rho.map(|r| 1.0 / r);
        let ir0 = rho0.map(|r| 1.0 / r);
        let c = phi.map(|v| p.cap(v));
        let dphi = phi.zip_map(phi_old, |a, b| a - b);
        let grad = |f: &[f64]| grid::grad_raw(g, f);
        let div = |x: &[f64], y: &[f64]| grid::div_raw(g, x, y);

        let mut fx = vec![0.0; n];
        let mut fy = vec![0.0; n];

        // convection and the stress-weighted density gradient
        let closure = TangentialClosure::Robin { eta: &eta, a0: p.a0 };
        let gu = grid::velocity_gradient(u, closure)?;
        let stress = phase::stress_from_gradient(&gu, &eta);
        let (gir_x, gir_y) = grad(&ir.values);
        for k in 0..n {
            fx[k] -= u.x[k] * gu.t[0][0][k] + u.y[k] * gu.t[0][1][k];
            fy[k] -= u.x[k] * gu.t[1][0][k] + u.y[k] * gu.t[1][1][k];
            fx[k] -= stress.t[0][0][k] * gir_x[k] + stress.t[0][1][k] * gir_y[k];
            fy[k] -= stress.t[1][0][k] * gir_x[k] + stress.t[1][1][k] * gir_y[k];
        }

        // potential gradient and quasi-pressure
        let fphi = phi.map(|v| phase::double_well(v).1);
        let (gf_x, gf_y) = grad(&fphi.values);
        let psi = self.quasi_pressure(u)?;
        let (gp_x, gp_y) = grad(&psi.values);
        let ia2 = 1.0 / (p.alpha * p.alpha);
        for k in 0..n {
            let s = c.values[k] * ir.values[k];
            fx[k] += s * gf_x[k] - ia2 * ir.values[k] * gp_x[k];
            fy[k] += s * gf_y[k] - ia2 * ir.values[k] * gp_y[k];
        }

        if p.gravity_on {
            for k in 0..n {
                fy[k] -= self.gravity[k];
            }
        }

        // capillary regrouping
        let (gc_x, gc_y) = grad(&c.values);
        let (gphi_x, gphi_y) = grad(&phi.values);
        let lap_phi = div(&gphi_x, &gphi_y);
        let dot_cphi: Vec<f64> = (0..n).map(|k| gc_x[k] * gphi_x[k] + gc_y[k] * gphi_y[k]).collect();
        let (t5_x, t5_y) = grad(&dot_cphi);
        let cgphi_x: Vec<f64> = (0..n).map(|k| c.values[k] * gphi_x[k]).collect();
        let cgphi_y: Vec<f64> = (0..n).map(|k| c.values[k] * gphi_y[k]).collect();
        let div_cgphi = div(&cgphi_x, &cgphi_y);
        for k in 0..n {
            let ir_k = ir.values[k];
            fx[k] += ir_k * (t5_x[k] + gc_x[k] * lap_phi[k]) + gir_x[k] * div_cgphi[k];
            fy[k] += ir_k * (t5_y[k] + gc_y[k] * lap_phi[k]) + gir_y[k] * div_cgphi[k];
        }

        // increment couplings
        let (gd_x, gd_y) = grad(&dphi.values);
        let t8: Vec<f64> = (0..n).map(|k| c.values[k] * (gir_x[k] * gd_x[k] + gir_y[k] * gd_y[k])).collect();
        let (t8_x, t8_y) = grad(&t8);
        let (gold_x, gold_y) = grad(&phi_old.values);
        let cgold_x: Vec<f64> = (0..n).map(|k| c.values[k] * gold_x[k]).collect();
        let cgold_y: Vec<f64> = (0..n).map(|k| c.values[k] * gold_y[k]).collect();
        let t10: Vec<f64> = div(&cgold_x, &cgold_y).iter().zip(&ir.values).map(|(d, r)| d * r).collect();
        let (t10_x, t10_y) = grad(&t10);
        let mut q_x = vec![0.0; n];
        let mut q_y = vec![0.0; n];
        for k in 0..n {
            let dr = ir.values[k] - ir0.values[k];
            let s = -dr * c.values[k] + ir0.values[k] * (phi.values[k] - phi_ref.values[k]);
            q_x[k] = s * gd_x[k];
            q_y[k] = s * gd_y[k];
        }
        let (t11_x, t11_y) = grad(&div(&q_x, &q_y));
        for k in 0..n {
            fx[k] += t8_x[k] - t10_x[k] + t11_x[k];
            fy[k] += t8_y[k] - t10_y[k] + t11_y[k];
        }

        // a re-frozen operator only carries the capillary term on phi - phi_ref
        if phi_ref.values != phi_old.values {
            let (gs_x, gs_y) = grad(&phi_ref.zip_map(phi_old, |a, b| a - b).values);
            for k in 0..n {
                let c0 = p.cap(phi_ref.values[k]) * ir0.values[k];
                q_x[k] = c0 * gs_x[k];
                q_y[k] = c0 * gs_y[k];
            }
            let (sx, sy) = grad(&div(&q_x, &q_y));
            for k in 0..n {
                fx[k] -= sx[k];
                fy[k] -= sy[k];
            }
        }

        // viscosity variation and freeze correction
        let w = ScalarField::from_values(
            *g,
            (0..n)
                .map(|k| {
                    (ir.values[k] - ir0.values[k]) * eta.values[k]
                        + (eta.values[k] - eta0.values[k]) * ir0.values[k]
                })
                .collect(),
        );
        let a = ir.zip_map(&ir0, |a, b| (a - b) * p.a0);
        let kv = strain::apply(&w, &a, u);
        for k in 0..n {
            fx[k] -= kv.x[k];
            fy[k] -= kv.y[k];
        }

        let out = VectorField::from_components(*g, fx, fy);
        out.check_finite("F1")?;
        Ok(out)
    }

    /// `-D(phi u)` with its mean removed; also returns the removed mean.
    pub fn nonlinear_rhs_f2(&self, u: &VectorField, phi: &ScalarField) -> Result<(ScalarField, f64)> {
        let mut f = grid::divergence(&u.times(phi))?.map(|v| -v);
        let m = f.remove_mean();
        Ok((f, m))
    }

    /// One accepted step of nominal size `dt`, halving on non-convergence.
    pub fn advance(&self, state: &SimState, dt: f64) -> Result<(SimState, PicardReport)> {
        if !(dt > 0.0) {
            return Err(Error::DomainError(format!("dt = {dt} must be positive")));
        }
        let m = state.phi.max_abs();
        if m > PHI_BOUND {
            return Err(Error::PhaseBoundExceeded(m));
        }
        let mut h = dt;
        for halvings in 0..=self.cfg.max_halvings {
            match self.try_step(state, h)? {
                StepOutcome::Converged(s, mut r) => {
                    r.halvings = halvings;
                    let m = s.phi.max_abs();
                    if m > PHI_BOUND {
                        return Err(Error::PhaseBoundExceeded(m));
                    }
                    return Ok((s, r));
                }
                StepOutcome::NotConverged => h *= self.cfg.dt_shrink,
            }
        }
        Err(Error::StepFailed { t: state.t, halvings: self.cfg.max_halvings })
    }

    fn try_step(&self, state: &SimState, dt: f64) -> Result<StepOutcome> {
        let phi_old = &state.phi;
        let mut sys = LinearStepSystem::assemble(phi_old, dt, &self.params)?;
        let mut u = state.u.clone();
        let mut phi = phi_old.clone();
        let mut increments = Vec::new();
        for it in 1..=self.cfg.max_iters {
            if self.cfg.refreeze && it > 1 {
                sys = LinearStepSystem::assemble(&phi, dt, &self.params)?;
            }
            let phi_ref = &sys.phi_ref;
            let f1 = match self.nonlinear_rhs_f1(&u, &phi, phi_old, phi_ref) {
                Ok(f) => f,
                Err(Error::NonFinite(_)) | Err(Error::DensityFloorViolated(_)) if it > 1 => {
                    return Ok(StepOutcome::NotConverged)
                }
                Err(e) => return Err(e),
            };
            let (f2, f2_mean) = self.nonlinear_rhs_f2(&u, &phi)?;
            let rhs_u = state.u.scaled(1.0 / dt).axpy(1.0, &f1);
            // with a re-frozen operator the increment is measured from phi_ref
            let shift = phi_ref.zip_map(phi_old, |a, b| a - b);
            let rhs_phi = f2.zip_map(&shift, |f, s| f - s / dt);
            let (u_new, dphi) = match sys.solve(&rhs_u, &rhs_phi) {
                Ok(v) => v,
                Err(Error::SingularSystem(_)) | Err(Error::NonFinite(_)) => return Ok(StepOutcome::NotConverged),
                Err(e) => return Err(e),
            };
            let phi_new = phi_ref.zip_map(&dphi, |a, b| a + b);
            let diff = stacked_norm(&u_new.axpy(-1.0, &u), &phi_new.zip_map(&phi, |a, b| a - b));
            let size = stacked_norm(&u_new, &phi_new);
            increments.push(diff);
            u = u_new;
            phi = phi_new;
            if !diff.is_finite() || phi.max_abs() > 10.0 {
                return Ok(StepOutcome::NotConverged);
            }
            if diff <= self.cfg.tol * size {
                let contraction = match increments.len() {
                    0 | 1 => 0.0,
                    l if increments[l - 2] > 0.0 => increments[l - 1] / increments[l - 2],
                    _ => 0.0,
                };
                let s = self.state(state.t + dt, u, phi)?;
                let report = PicardReport { iterations: it, contraction, increments, dt_used: dt, halvings: 0, f2_mean };
                return Ok(StepOutcome::Converged(s, report));
            }
            let l = increments.len();
            if l >= 4 && increments[l - 1] > increments[l - 2] && increments[l - 2] > increments[l - 3] {
                return Ok(StepOutcome::NotConverged);
            }
        }
        Ok(StepOutcome::NotConverged)
    }
}

fn stacked_norm(u: &VectorField, phi: &ScalarField) -> f64 {
    (u.dot(u) + phi.dot(phi)).sqrt()
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SimState,
    pub reports: Vec<PicardReport>,
    /// Set when the run stopped early on a failed step.
    pub failure: Option<String>,
}

/// Initial state of a configured run.
pub fn initial_state(stepper: &Stepper, cfg: &SimConfig) -> Result<SimState> {
    let phi = cfg.init.sample(stepper.grid)?;
    stepper.state(0.0, VectorField::zeros(stepper.grid), phi)
}

/// Steps from `t = 0` to `t_end`, emitting one record per accepted step.
/// When `out_dir` is given, records are streamed to `records.csv` and
/// snapshots written every `snapshot_interval` steps.
pub fn run(cfg: &SimConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let params = cfg.params()?;
    let pc = PicardConfig { tol: cfg.picard_tol, max_iters: cfg.picard_max_iters, refreeze: cfg.refreeze, ..Default::default() };
    let stepper = Stepper::new(grid, params, pc)?;
    let mut state = initial_state(&stepper, cfg)?;
    run_from(&stepper, &mut state, cfg.dt, cfg.t_end, cfg.snapshot_interval, out_dir)
}

/// The time loop, starting from an explicit state.
pub fn run_from(
    stepper: &Stepper,
    state: &mut SimState,
    dt: f64,
    t_end: f64,
    snapshot_interval: usize,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    let mut writer = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(diagnostics::RecordWriter::create(&d.join("records.csv"))?)
        }
        None => None,
    };
    let mut records = vec![diagnostics::record(stepper, state, None)?];
    if let Some(w) = writer.as_mut() {
        w.write(&records[0])?;
    }
    let snapshot = |s: &SimState, step: usize| -> Result<()> {
        if let Some(d) = out_dir {
            if snapshot_interval > 0 && step % snapshot_interval == 0 {
                diagnostics::write_state_snapshot(d, step, s, &stepper.params)?;
            }
        }
        Ok(())
    };
    snapshot(state, 0)?;
    let mut reports = Vec::new();
    let mut failure = None;
    let mut step = 0;
    let t_tol = 1e-12 * dt;
    while state.t < t_end - t_tol {
        let h = dt.min(t_end - state.t);
        match stepper.advance(state, h) {
            Ok((s, r)) => {
                *state = s;
                step += 1;
                let rec = diagnostics::record(stepper, state, Some(&r))?;
                if let Some(w) = writer.as_mut() {
                    w.write(&rec)?;
                }
                records.push(rec);
                reports.push(r);
                snapshot(state, step)?;
            }
            Err(e @ Error::StepFailed { .. }) | Err(e @ Error::PhaseBoundExceeded(_)) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutput { records, final_state: state.clone(), reports, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn stepper(n: usize, gravity: bool) -> Stepper {
        let g = Grid::square(n).unwrap();
        let p = PhysParams::new(-0.5, 1.0, 1.0, gravity).unwrap();
        Stepper::new(g, p, PicardConfig::default()).unwrap()
    }

    #[test]
    fn rest_state_has_zero_remainder() {
        let s = stepper(12, false);
        let phi = ScalarField::constant(s.grid, 0.3);
        let f1 = s.nonlinear_rhs_f1(&VectorField::zeros(s.grid), &phi, &phi, &phi).unwrap();
        assert!(f1.max_abs() == 0.0);
    }

    #[test]
    fn rest_state_with_gravity_feels_downward_pull() {
        let s = stepper(12, true);
        let phi = ScalarField::constant(s.grid, 0.0);
        let f1 = s.nonlinear_rhs_f1(&VectorField::zeros(s.grid), &phi, &phi, &phi).unwrap();
        assert!(f1.x.iter().all(|&v| v == 0.0));
        for (i, j, _, _) in s.grid.cells() {
            let k = s.grid.idx(i, j);
            let expect = if j == 0 || j + 1 == s.grid.ny { -0.5 } else { -1.0 };
            assert!((f1.y[k] - expect).abs() < 1e-12, "{} {}", f1.y[k], expect);
        }
    }

    #[test]
    fn f2_examples() {
        let s = stepper(12, false);
        let g = s.grid;
        let u = VectorField::from_fn(g, |x, y| ((PI * x).sin() * y, (x + y).cos()));
        let phi = ScalarField::from_fn(g, |x, y| 0.2 * (x - y).sin());
        let (z, _) = s.nonlinear_rhs_f2(&VectorField::zeros(g), &phi).unwrap();
        assert!(z.max_abs() == 0.0);
        let (f, _) = s.nonlinear_rhs_f2(&u, &ScalarField::constant(g, 0.4)).unwrap();
        let mut d = grid::divergence(&u).unwrap().map(|v| -0.4 * v);
        d.remove_mean();
        assert!(f.zip_map(&d, |a, b| a - b).max_abs() < 1e-14 * (1.0 + d.max_abs()));
        let (_, m) = s.nonlinear_rhs_f2(&u, &phi).unwrap();
        assert!(m.abs() <= 1e-12 * u.times(&phi).l2());
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let s = stepper(12, false);
        let st = s.state(0.0, VectorField::zeros(s.grid), ScalarField::constant(s.grid, -0.2)).unwrap();
        let (next, r) = s.advance(&st, 1e-3).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.increments, vec![0.0]);
        assert_eq!(next.phi, st.phi);
        assert!(next.u.max_abs() == 0.0);
    }

    #[test]
    fn small_perturbation_converges() {
        let s = stepper(32, false);
        let phi = ScalarField::from_fn(s.grid, |x, y| 0.01 * (PI * x).cos() * (2.0 * PI * y).cos());
        let st = s.state(0.0, VectorField::zeros(s.grid), phi).unwrap();
        let (next, r) = s.advance(&st, 1e-4).unwrap();
        assert!(r.iterations <= 10, "{r:?}");
        assert!(r.contraction < 1.0);
        assert_eq!(r.halvings, 0);
        assert!((next.t - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn contraction_shrinks_with_dt() {
        let s = stepper(32, false);
        let phi = ScalarField::from_fn(s.grid, |x, y| 0.05 * (PI * x).cos() * (PI * y).cos());
        let st = s.state(0.0, VectorField::zeros(s.grid), phi).unwrap();
        let (_, r1) = s.advance(&st, 4e-4).unwrap();
        let (_, r2) = s.advance(&st, 1e-4).unwrap();
        assert!(r2.contraction < r1.contraction, "{} {}", r1.contraction, r2.contraction);
    }

    #[test]
    fn refreeze_reaches_same_fixed_point() {
        let g = Grid::square(16).unwrap();
        let p = PhysParams::new(-0.5, 2.0, 1.0, false).unwrap();
        let phi = ScalarField::from_fn(g, |x, y| 0.2 * (PI * x).cos() * (PI * y).cos());
        let tight = PicardConfig { tol: 1e-12, ..Default::default() };
        let a = Stepper::new(g, p, tight).unwrap();
        let b = Stepper::new(g, p, PicardConfig { refreeze: true, ..tight }).unwrap();
        let st = a.state(0.0, VectorField::zeros(g), phi).unwrap();
        let (sa, ra) = a.advance(&st, 1e-3).unwrap();
        let (sb, rb) = b.advance(&st, 1e-3).unwrap();
        let dp = sa.phi.zip_map(&sb.phi, |x, y| x - y).max_abs();
        assert!(dp < 1e-9, "{dp} {:?} {:?}", ra.increments, rb.increments);
        assert!(sa.u.axpy(-1.0, &sb.u).max_abs() < 1e-9 * (1.0 + sa.u.max_abs()));
    }

    #[test]
    fn full_residual_is_independent_of_reference() {
        let g = Grid::square(16).unwrap();
        let p = PhysParams::new(-0.5, 2.0, 1.0, false).unwrap();
        let s = Stepper::new(g, p, PicardConfig::default()).unwrap();
        let u = VectorField::from_fn(g, |x, y| ((3.0 * x).sin() * y, 0.1 * (x * y).cos())).with_friction(1.0);
        let phi = ScalarField::from_fn(g, |x, y| 0.2 * (x + 2.0 * y).cos());
        let old = ScalarField::from_fn(g, |x, y| 0.18 * (x + 2.0 * y).cos() + 0.01 * x);
        let other = ScalarField::from_fn(g, |x, y| 0.19 * (x + 2.0 * y).cos() + 0.02 * y);
        let res = |rf: &ScalarField| {
            let sys = LinearStepSystem::assemble(rf, 1.0, &p).unwrap();
            let (au, _) = sys.apply(&u, &phi.zip_map(rf, |a, b| a - b));
            au.axpy(-1.0, &s.nonlinear_rhs_f1(&u, &phi, &old, rf).unwrap())
        };
        let (a, b) = (res(&old), res(&other));
        assert!(a.axpy(-1.0, &b).max_abs() < 1e-12 * a.max_abs());
    }

    #[test]
    fn phase_bound_guard() {
        let s = stepper(8, false);
        let st = s.state(0.0, VectorField::zeros(s.grid), ScalarField::constant(s.grid, 1.3)).unwrap();
        assert!(matches!(s.advance(&st, 1e-3), Err(Error::PhaseBoundExceeded(_))));
    }
}
