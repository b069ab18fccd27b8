//! Manufactured-solution refinement study for the spatial operators.

use crate::elliptic::solve_neumann_poisson;
use crate::error::Result;
use crate::grid::{self, Grid, ScalarField, VectorField};
use std::f64::consts::PI;
use std::fmt;

/// Errors of every probe on one grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub ny: usize,
    pub poisson: f64,
    pub laplacian: f64,
    pub gradient: f64,
    pub divergence: f64,
}

pub const PROBES: [&str; 4] = ["poisson", "laplacian", "gradient", "divergence"];

impl ConvergenceRow {
    fn errors(&self) -> [f64; 4] {
        [self.poisson, self.laplacian, self.gradient, self.divergence]
    }
}

/// `||u_h - u||` for the Neumann eigenfunction `cos(pi x/Lx) cos(pi y/Ly)`.
pub fn poisson_error(g: Grid) -> Result<f64> {
    let (kx, ky) = (PI / g.lx, PI / g.ly);
    let f = ScalarField::from_fn(g, |x, y| -(kx * kx + ky * ky) * (kx * x).cos() * (ky * y).cos());
    let mut exact = ScalarField::from_fn(g, |x, y| (kx * x).cos() * (ky * y).cos());
    exact.remove_mean();
    let u = solve_neumann_poisson(&f)?;
    Ok(u.zip_map(&exact, |a, b| a - b).l2())
}

fn probe_errors(g: Grid) -> Result<(f64, f64, f64)> {
    let (kx, ky) = (PI / g.lx, PI / g.ly);
    let f = ScalarField::from_fn(g, |x, y| (kx * x).cos() * (ky * y).cos());
    let lap = grid::laplacian(&f)?;
    let lap_exact = f.map(|v| -(kx * kx + ky * ky) * v);
    let gr = grid::gradient(&f)?;
    let gr_exact = VectorField::from_fn(g, |x, y| {
        (-kx * (kx * x).sin() * (ky * y).cos(), -ky * (kx * x).cos() * (ky * y).sin())
    });
    let v = VectorField::from_fn(g, |x, y| ((kx * x).sin() * (ky * y).cos(), (kx * x).cos() * (ky * y).sin()));
    let div = grid::divergence(&v)?;
    let div_exact = ScalarField::from_fn(g, |x, y| (kx + ky) * (kx * x).cos() * (ky * y).cos());
    Ok((
        lap.zip_map(&lap_exact, |a, b| a - b).l2(),
        gr.axpy(-1.0, &gr_exact).l2(),
        div.zip_map(&div_exact, |a, b| a - b).l2(),
    ))
}

/// Runs the probes on `levels` successive refinements of `base`.
pub fn study(base: Grid, levels: usize) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(levels);
    for l in 0..levels {
        let g = Grid::new(base.nx << l, base.ny << l, base.lx, base.ly)?;
        let (laplacian, gradient, divergence) = probe_errors(g)?;
        rows.push(ConvergenceRow { nx: g.nx, ny: g.ny, poisson: poisson_error(g)?, laplacian, gradient, divergence });
    }
    Ok(rows)
}

/// Observed orders `log2(e_k / e_{k+1})` per probe.
pub fn observed_orders(rows: &[ConvergenceRow]) -> Vec<[f64; 4]> {
    rows.windows(2)
        .map(|w| {
            let (a, b) = (w[0].errors(), w[1].errors());
            std::array::from_fn(|i| (a[i] / b[i]).log2())
        })
        .collect()
}

/// Table of errors and observed orders.
pub struct StudyTable<'a>(pub &'a [ConvergenceRow]);

impl fmt::Display for StudyTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>10}", "grid")?;
        for p in PROBES {
            write!(f, " {:>12} {:>6}", p, "order")?;
        }
        writeln!(f)?;
        let orders = observed_orders(self.0);
        for (i, r) in self.0.iter().enumerate() {
            write!(f, "{:>10}", format!("{}x{}", r.nx, r.ny))?;
            for (k, e) in r.errors().iter().enumerate() {
                match i.checked_sub(1).map(|j| orders[j][k]) {
                    Some(o) => write!(f, " {e:>12.4e} {o:>6.3}")?,
                    None => write!(f, " {e:>12.4e} {:>6}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_probes_second_order() {
        let rows = study(Grid::new(16, 24, 1.0, 1.5).unwrap(), 3).unwrap();
        for o in observed_orders(&rows) {
            for (p, v) in PROBES.iter().zip(o) {
                assert!(v > 1.8, "{p}: {v}");
            }
        }
        let table = StudyTable(&rows).to_string();
        assert_eq!(table.lines().count(), 4);
    }
}
