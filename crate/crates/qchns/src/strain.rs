//! Variational viscous operator `u -> -div(w S(Du))` with Navier friction.
//!
//! The bilinear form
//!
//! ```text
//! a(u, v) = sum_e int_e w (2 D(u):D(v) - 2/3 div u div v) + sum_walls a |u_t v_t|
//! ```
//!
//! is evaluated on the dual lattice whose nodes are the cell centers plus one
//! ghost layer. Velocity is interpolated bilinearly; ghost nodes follow the
//! grid's wall closure (odd normal component, even tangential component), so
//! the interpolant is wall-tangent. Each dual element is clipped to the
//! domain and integrated with 2x2 Gauss points. Friction is lumped onto the
//! wall faces with the midpoint rule.
//!
//! The operator is `K = M^{-1} (S_w + F_a)` with the lumped cell mass `M`.
//! `S_w + F_a` is symmetric positive semidefinite for `w, a >= 0`.

use crate::grid::{Grid, ScalarField, VectorField};
use crate::sparse::Csr;

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

// C in v^T C v = 2|D|^2 - 2/3 div^2, v = (dux/dx, dux/dy, duy/dx, duy/dy).
const C: [[f64; 4]; 4] = [
    [4.0 / 3.0, 0.0, 0.0, -2.0 / 3.0],
    [0.0, 1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0, 0.0],
    [-2.0 / 3.0, 0.0, 0.0, 4.0 / 3.0],
];

// v^T CD v = |D|^2.
const CD: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

struct GaussPoint {
    weight: f64,
    shape: [f64; 4],
    dx: [f64; 4],
    dy: [f64; 4],
}

struct Element {
    /// Interior cell behind each of the 4 nodes.
    cell: [usize; 4],
    /// Sign of each velocity component at each node.
    sign: [[f64; 2]; 4],
    gps: Vec<GaussPoint>,
}

fn fold(e: isize, n: usize) -> (usize, bool) {
    if e < 0 {
        (0, true)
    } else if e as usize >= n {
        (n - 1, true)
    } else {
        (e as usize, false)
    }
}

fn for_each_element(g: &Grid, mut f: impl FnMut(&Element)) {
    let (hx, hy) = (g.hx(), g.hy());
    for je in -1..g.ny as isize {
        for ie in -1..g.nx as isize {
            let (x0, y0) = ((ie as f64 + 0.5) * hx, (je as f64 + 0.5) * hy);
            let (xa, xb) = (x0.max(0.0), (x0 + hx).min(g.lx));
            let (ya, yb) = (y0.max(0.0), (y0 + hy).min(g.ly));
            let mut cell = [0; 4];
            let mut sign = [[1.0; 2]; 4];
            for (n, (a, b)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                let (i, gx) = fold(ie + a, g.nx);
                let (j, gy) = fold(je + b, g.ny);
                cell[n] = g.idx(i, j);
                if gx {
                    sign[n][0] = -sign[n][0];
                }
                if gy {
                    sign[n][1] = -sign[n][1];
                }
            }
            let mut gps = Vec::with_capacity(4);
            for qy in GAUSS {
                for qx in GAUSS {
                    let x = 0.5 * (xa + xb) + 0.5 * (xb - xa) * qx;
                    let y = 0.5 * (ya + yb) + 0.5 * (yb - ya) * qy;
                    let (s, t) = ((x - x0) / hx, (y - y0) / hy);
                    gps.push(GaussPoint {
                        weight: 0.25 * (xb - xa) * (yb - ya),
                        shape: [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t],
                        dx: [-(1.0 - t) / hx, (1.0 - t) / hx, -t / hx, t / hx],
                        dy: [-(1.0 - s) / hy, -s / hy, (1.0 - s) / hy, s / hy],
                    });
                }
            }
            f(&Element { cell, sign, gps });
        }
    }
}

/// Local gradient rows: entry `[r][l]` with `l = comp * 4 + node`.
fn b_rows(e: &Element, gp: &GaussPoint) -> [[f64; 8]; 4] {
    let mut b = [[0.0; 8]; 4];
    for n in 0..4 {
        b[0][n] = gp.dx[n] * e.sign[n][0];
        b[1][n] = gp.dy[n] * e.sign[n][0];
        b[2][4 + n] = gp.dx[n] * e.sign[n][1];
        b[3][4 + n] = gp.dy[n] * e.sign[n][1];
    }
    b
}

fn element_matrix(e: &Element, w: &[f64], c: &[[f64; 4]; 4]) -> [[f64; 8]; 8] {
    let mut k = [[0.0; 8]; 8];
    for gp in &e.gps {
        let wq: f64 = (0..4).map(|n| gp.shape[n] * w[e.cell[n]]).sum::<f64>() * gp.weight;
        if wq == 0.0 {
            continue;
        }
        let b = b_rows(e, gp);
        let mut cb = [[0.0; 8]; 4];
        for r in 0..4 {
            for s in 0..4 {
                if c[r][s] != 0.0 {
                    for l in 0..8 {
                        cb[r][l] += c[r][s] * b[s][l];
                    }
                }
            }
        }
        for p in 0..8 {
            for q in 0..8 {
                let v: f64 = (0..4).map(|r| b[r][p] * cb[r][q]).sum();
                k[p][q] += wq * v;
            }
        }
    }
    k
}

fn global_dof(e: &Element, l: usize, n_cells: usize) -> usize {
    (l / 4) * n_cells + e.cell[l % 4]
}

/// Lumped friction weights per stacked dof: `h * a` on tangential
/// components of wall cells (corner cells receive both walls).
fn friction_diag(g: &Grid, a: &[f64]) -> Vec<f64> {
    let n = g.n_cells();
    let mut d = vec![0.0; 2 * n];
    for i in 0..g.nx {
        for j in [0, g.ny - 1] {
            let k = g.idx(i, j);
            d[k] += g.hx() * a[k];
        }
    }
    for j in 0..g.ny {
        for i in [0, g.nx - 1] {
            let k = g.idx(i, j);
            d[n + k] += g.hy() * a[k];
        }
    }
    d
}

/// Stiffness `S_w + F_a` (not divided by the cell mass), stacked
/// component-major, `2N x 2N`.
pub fn stiffness(g: &Grid, w: &ScalarField, a: &ScalarField) -> Csr {
    let n = g.n_cells();
    let mut t = Vec::with_capacity(64 * (g.nx + 1) * (g.ny + 1) + 2 * n);
    for_each_element(g, |e| {
        let k = element_matrix(e, &w.values, &C);
        for p in 0..8 {
            for q in 0..8 {
                if k[p][q] != 0.0 {
                    t.push((global_dof(e, p, n), global_dof(e, q, n), k[p][q]));
                }
            }
        }
    });
    for (r, v) in friction_diag(g, &a.values).into_iter().enumerate() {
        if v != 0.0 {
            t.push((r, r, v));
        }
    }
    Csr::from_triplets(2 * n, 2 * n, t)
}

/// Matrix of `int |D(u_h)|^2`, `2N x 2N`.
pub fn symmetric_gradient_matrix(g: &Grid) -> Csr {
    let n = g.n_cells();
    let ones = vec![1.0; n];
    let mut t = Vec::new();
    for_each_element(g, |e| {
        let k = element_matrix(e, &ones, &CD);
        for p in 0..8 {
            for q in 0..8 {
                t.push((global_dof(e, p, n), global_dof(e, q, n), k[p][q]));
            }
        }
    });
    Csr::from_triplets(2 * n, 2 * n, t)
}

/// Diagonal matrix of the lumped wall friction form.
pub fn friction_matrix(g: &Grid, a: &ScalarField) -> Csr {
    Csr::diag(&friction_diag(g, &a.values))
}

/// `K = M^{-1}(S_w + F_a)` as a matrix.
pub fn operator_matrix(g: &Grid, w: &ScalarField, a: &ScalarField) -> Csr {
    stiffness(g, w, a).scale(1.0 / g.cell_area())
}

/// Matrix-free `K u`.
pub fn apply(w: &ScalarField, a: &ScalarField, u: &VectorField) -> VectorField {
    let g = u.grid;
    let n = g.n_cells();
    let uv = u.stacked();
    let mut out = vec![0.0; 2 * n];
    for_each_element(&g, |e| {
        let k = element_matrix(e, &w.values, &C);
        let loc: Vec<f64> = (0..8).map(|l| uv[global_dof(e, l, n)]).collect();
        for p in 0..8 {
            let s: f64 = (0..8).map(|q| k[p][q] * loc[q]).sum();
            out[global_dof(e, p, n)] += s;
        }
    });
    for (r, d) in friction_diag(&g, &a.values).into_iter().enumerate() {
        out[r] += d * uv[r];
    }
    let m = 1.0 / g.cell_area();
    out.iter_mut().for_each(|v| *v *= m);
    VectorField::from_stacked(g, &out)
}

/// `int w (2 D:D - 2/3 div^2)` over the domain.
pub fn viscous_form(w: &ScalarField, u: &VectorField) -> f64 {
    let g = u.grid;
    let n = g.n_cells();
    let uv = u.stacked();
    let mut total = 0.0;
    for_each_element(&g, |e| {
        let loc: Vec<f64> = (0..8).map(|l| uv[global_dof(e, l, n)]).collect();
        for gp in &e.gps {
            let wq: f64 = (0..4).map(|m| gp.shape[m] * w.values[e.cell[m]]).sum::<f64>() * gp.weight;
            let b = b_rows(e, gp);
            let v: Vec<f64> = (0..4).map(|r| (0..8).map(|l| b[r][l] * loc[l]).sum()).collect();
            let mut q = 0.0;
            for r in 0..4 {
                for s in 0..4 {
                    q += v[r] * C[r][s] * v[s];
                }
            }
            total += wq * q;
        }
    });
    total
}

/// Wall-face midpoint rule for `oint a |u_t|^2`.
pub fn friction_form(a: &ScalarField, u: &VectorField) -> f64 {
    let uv = u.stacked();
    friction_diag(&u.grid, &a.values).iter().zip(&uv).map(|(d, v)| d * v * v).sum()
}

/// `int |grad u_h|^2` and `int |u_h|^2` of the bilinear interpolant.
pub fn h1_forms(u: &VectorField) -> (f64, f64) {
    let g = u.grid;
    let n = g.n_cells();
    let uv = u.stacked();
    let (mut grad, mut mass) = (0.0, 0.0);
    for_each_element(&g, |e| {
        let loc: Vec<f64> = (0..8).map(|l| uv[global_dof(e, l, n)]).collect();
        for gp in &e.gps {
            let b = b_rows(e, gp);
            for r in 0..4 {
                let v: f64 = (0..8).map(|l| b[r][l] * loc[l]).sum();
                grad += gp.weight * v * v;
            }
            for c in 0..2 {
                let v: f64 = (0..4).map(|m| gp.shape[m] * e.sign[m][c] * loc[4 * c + m]).sum();
                mass += gp.weight * v * v;
            }
        }
    });
    (grad, mass)
}

/// Matrices of the interpolant's gradient and mass forms, `2N x 2N`.
pub fn h1_matrices(g: &Grid) -> (Csr, Csr) {
    let n = g.n_cells();
    let (mut tg, mut tm) = (Vec::new(), Vec::new());
    for_each_element(g, |e| {
        let mut kg = [[0.0; 8]; 8];
        let mut km = [[0.0; 8]; 8];
        for gp in &e.gps {
            let b = b_rows(e, gp);
            let mut nrow = [[0.0; 8]; 2];
            for m in 0..4 {
                nrow[0][m] = gp.shape[m] * e.sign[m][0];
                nrow[1][4 + m] = gp.shape[m] * e.sign[m][1];
            }
            for p in 0..8 {
                for q in 0..8 {
                    kg[p][q] += gp.weight * (0..4).map(|r| b[r][p] * b[r][q]).sum::<f64>();
                    km[p][q] += gp.weight * (0..2).map(|r| nrow[r][p] * nrow[r][q]).sum::<f64>();
                }
            }
        }
        for p in 0..8 {
            for q in 0..8 {
                let (r, c) = (global_dof(e, p, n), global_dof(e, q, n));
                tg.push((r, c, kg[p][q]));
                tm.push((r, c, km[p][q]));
            }
        }
    });
    (Csr::from_triplets(2 * n, 2 * n, tg), Csr::from_triplets(2 * n, 2 * n, tm))
}
