//! Straight-line evaluation of the nonlinear remainders from assembled
//! matrices, used as an independent oracle for the stepper.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use qchns::grid::{self, Grid, ScalarField, TangentialClosure, VectorField};
use qchns::phase::{self, PhysParams};
use qchns::sparse::Csr;
use qchns::strain;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub struct Reference {
    g: Grid,
    p: PhysParams,
    gm: Csr,
    dm: Csr,
    dg_lu: PartialPivLu<f64>,
}

pub struct RandomState {
    pub u: VectorField,
    pub phi: ScalarField,
    pub phi_old: ScalarField,
    pub phi_ref: ScalarField,
}

fn smooth(g: Grid, rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> = (0..8)
        .map(|_| (rng.random_range(0..=4) as f64, rng.random_range(0..=4) as f64, rng.random_range(-1.0..1.0)))
        .collect();
    let norm: f64 = modes.iter().map(|m| m.2.abs()).sum();
    ScalarField::from_fn(g, |x, y| {
        amp / norm
            * modes.iter().map(|&(m, n, a)| a * (m * PI * x / g.lx).cos() * (n * PI * y / g.ly).cos()).sum::<f64>()
    })
    .values
}

/// A random admissible state; with `refrozen` the reference phase differs
/// from the step start.
pub fn random_state(g: Grid, a0: f64, rng: &mut ChaCha8Rng, refrozen: bool) -> RandomState {
    let phi_old = ScalarField::from_values(g, smooth(g, rng, 0.45));
    let dphi = smooth(g, rng, 0.04);
    let phi = ScalarField::from_values(g, phi_old.values.iter().zip(&dphi).map(|(a, b)| a + b).collect());
    let phi_ref = if refrozen {
        let s = rng.random_range(0.2..0.8);
        ScalarField::from_values(g, phi_old.values.iter().zip(&dphi).map(|(a, b)| a + s * b).collect())
    } else {
        phi_old.clone()
    };
    let ux: Vec<f64> = smooth(g, rng, 0.5).iter().zip(&smooth(g, rng, 0.2)).map(|(a, b)| a * b * 4.0 + a).collect();
    let uy = smooth(g, rng, 0.5);
    let u = VectorField::from_components(g, ux, uy).with_friction(a0);
    RandomState { u, phi, phi_old, phi_ref }
}

impl Reference {
    pub fn new(g: Grid, p: PhysParams) -> Reference {
        let gm = grid::gradient_matrix(&g);
        let dm = grid::divergence_matrix(&g);
        let n = g.n_cells();
        let dg = dm.matmul(&gm).to_dense();
        let mut b = Mat::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = dg[(i, j)];
            }
            b[(i, n)] = 1.0;
            b[(n, i)] = 1.0;
        }
        let dg_lu = b.partial_piv_lu();
        Reference { g, p, gm, dm, dg_lu }
    }

    fn grad(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.g.n_cells();
        let mut v = self.gm.mul_vec(f);
        let y = v.split_off(n);
        (v, y)
    }

    fn div(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut s = x.to_vec();
        s.extend_from_slice(y);
        self.dm.mul_vec(&s)
    }

    fn graddiv(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.grad(&self.div(x, y))
    }

    fn psi(&self, u: &VectorField) -> Vec<f64> {
        let n = self.g.n_cells();
        let d = self.div(&u.x, &u.y);
        let mean = d.iter().sum::<f64>() / n as f64;
        let mut rhs = Mat::<f64>::zeros(n + 1, 1);
        for k in 0..n {
            rhs[(k, 0)] = d[k] - mean;
        }
        let x = self.dg_lu.solve(&rhs);
        let m = (0..n).map(|k| x[(k, 0)]).sum::<f64>() / n as f64;
        (0..n).map(|k| x[(k, 0)] - m).collect()
    }

    pub fn f1(&self, u: &VectorField, phi: &ScalarField, phi_old: &ScalarField, phi_ref: &ScalarField) -> VectorField {
        let (g, p) = (self.g, &self.p);
        let n = g.n_cells();
        let rho: Vec<f64> = phi.values.iter().map(|&v| p.rho(v)).collect();
        let rho0: Vec<f64> = phi_ref.values.iter().map(|&v| p.rho(v)).collect();
        let eta = phase::viscosity_field(phi, p).unwrap();
        let eta0 = phase::viscosity_field(phi_ref, p).unwrap();
        let c: Vec<f64> = phi.values.iter().map(|&v| 1.0 / p.alpha - v).collect();
        let ir: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
        let ir0: Vec<f64> = rho0.iter().map(|r| 1.0 / r).collect();
        let dphi: Vec<f64> = (0..n).map(|k| phi.values[k] - phi_old.values[k]).collect();

        let mut fx = vec![0.0; n];
        let mut fy = vec![0.0; n];
        let mut add = |s: f64, x: &[f64], y: &[f64]| {
            for k in 0..n {
                fx[k] += s * x[k];
                fy[k] += s * y[k];
            }
        };

        let gu = grid::velocity_gradient(u, TangentialClosure::Robin { eta: &eta, a0: p.a0 }).unwrap();
        let conv_x: Vec<f64> = (0..n).map(|k| u.x[k] * gu.t[0][0][k] + u.y[k] * gu.t[0][1][k]).collect();
        let conv_y: Vec<f64> = (0..n).map(|k| u.x[k] * gu.t[1][0][k] + u.y[k] * gu.t[1][1][k]).collect();
        add(-1.0, &conv_x, &conv_y);

        let s = phase::stress(phi, u, p).unwrap();
        let (gir_x, gir_y) = self.grad(&ir);
        let sx: Vec<f64> = (0..n).map(|k| s.t[0][0][k] * gir_x[k] + s.t[0][1][k] * gir_y[k]).collect();
        let sy: Vec<f64> = (0..n).map(|k| s.t[1][0][k] * gir_x[k] + s.t[1][1][k] * gir_y[k]).collect();
        add(-1.0, &sx, &sy);

        let fphi: Vec<f64> = phi.values.iter().map(|&v| v * v * v - v).collect();
        let (a, b) = self.grad(&fphi);
        let w: Vec<f64> = (0..n).map(|k| c[k] * ir[k]).collect();
        add(1.0, &mul(&w, &a), &mul(&w, &b));

        let (a, b) = self.grad(&self.psi(u));
        add(-1.0 / (p.alpha * p.alpha), &mul(&ir, &a), &mul(&ir, &b));

        if p.gravity_on {
            let yv = ScalarField::from_fn(g, |_, y| y).values;
            let (a, b) = self.grad(&yv);
            add(-1.0, &a, &b);
        }

        let (gc_x, gc_y) = self.grad(&c);
        let (gp_x, gp_y) = self.grad(&phi.values);
        let dot: Vec<f64> = (0..n).map(|k| gc_x[k] * gp_x[k] + gc_y[k] * gp_y[k]).collect();
        let (a, b) = self.grad(&dot);
        add(1.0, &mul(&ir, &a), &mul(&ir, &b));
        let lap = self.div(&gp_x, &gp_y);
        add(1.0, &mul(&ir, &mul(&gc_x, &lap)), &mul(&ir, &mul(&gc_y, &lap)));
        let dcg = self.div(&mul(&c, &gp_x), &mul(&c, &gp_y));
        add(1.0, &mul(&gir_x, &dcg), &mul(&gir_y, &dcg));

        let (gd_x, gd_y) = self.grad(&dphi);
        let t: Vec<f64> = (0..n).map(|k| c[k] * (gir_x[k] * gd_x[k] + gir_y[k] * gd_y[k])).collect();
        let (a, b) = self.grad(&t);
        add(1.0, &a, &b);

        let (go_x, go_y) = self.grad(&phi_old.values);
        let t = mul(&ir, &self.div(&mul(&c, &go_x), &mul(&c, &go_y)));
        let (a, b) = self.grad(&t);
        add(-1.0, &a, &b);

        let q: Vec<f64> = (0..n).map(|k| (ir[k] - ir0[k]) * c[k]).collect();
        let (a, b) = self.graddiv(&mul(&q, &gd_x), &mul(&q, &gd_y));
        add(-1.0, &a, &b);

        let q: Vec<f64> = (0..n).map(|k| ir0[k] * (phi.values[k] - phi_ref.values[k])).collect();
        let (a, b) = self.graddiv(&mul(&q, &gd_x), &mul(&q, &gd_y));
        add(1.0, &a, &b);

        let shift: Vec<f64> = (0..n).map(|k| phi_ref.values[k] - phi_old.values[k]).collect();
        if shift.iter().any(|&v| v != 0.0) {
            let (sx, sy) = self.grad(&shift);
            let c0: Vec<f64> = (0..n).map(|k| (1.0 / p.alpha - phi_ref.values[k]) * ir0[k]).collect();
            let (a, b) = self.graddiv(&mul(&c0, &sx), &mul(&c0, &sy));
            add(-1.0, &a, &b);
        }

        let wv = ScalarField::from_values(
            g,
            (0..n).map(|k| (ir[k] - ir0[k]) * eta.values[k] + (eta.values[k] - eta0.values[k]) * ir0[k]).collect(),
        );
        let av = ScalarField::from_values(g, (0..n).map(|k| (ir[k] - ir0[k]) * p.a0).collect());
        let mut kv = strain::operator_matrix(&g, &wv, &av).mul_vec(&u.stacked());
        let ky = kv.split_off(n);
        add(-1.0, &kv, &ky);

        VectorField::from_components(g, fx, fy)
    }

    pub fn f2(&self, u: &VectorField, phi: &ScalarField) -> ScalarField {
        let d = self.div(&mul(&phi.values, &u.x), &mul(&phi.values, &u.y));
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        ScalarField::from_values(self.g, d.iter().map(|v| mean - v).collect())
    }
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}
