//! Energy, dissipation, mass and constraint diagnostics, and their CSV form.
//!
//! Column order of the records file:
//!
//! ```text
//! t,dt,E_kin,E_grav,E_int,E_total,D_visc,D_chem,D_fric,mass,
//! phi_mean,phi_min,phi_max,constraint_res,picard_iters,contraction_factor
//! ```
//!
//! Floats are written with 17 significant digits so a write/read cycle is
//! bit-exact.

use crate::error::{Error, Result};
use crate::grid::{self, ScalarField, VectorField};
use crate::phase::{self, PhysParams};
use crate::picard::{PicardReport, SimState, Stepper};
use crate::strain;
use std::fs::File;
use std::path::Path;

pub const COLUMNS: [&str; 16] = [
    "t",
    "dt",
    "E_kin",
    "E_grav",
    "E_int",
    "E_total",
    "D_visc",
    "D_chem",
    "D_fric",
    "mass",
    "phi_mean",
    "phi_min",
    "phi_max",
    "constraint_res",
    "picard_iters",
    "contraction_factor",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Step size that produced this record (0 for the initial record).
    pub dt: f64,
    pub e_kin: f64,
    pub e_grav: f64,
    pub e_int: f64,
    pub e_total: f64,
    pub d_visc: f64,
    pub d_chem: f64,
    pub d_fric: f64,
    pub mass: f64,
    pub phi_mean: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub constraint_res: f64,
    pub picard_iters: usize,
    pub contraction_factor: f64,
}

impl DiagnosticsRecord {
    pub fn dissipation(&self) -> f64 {
        self.d_visc + self.d_chem + self.d_fric
    }

    fn fields(&self) -> [f64; 16] {
        [
            self.t,
            self.dt,
            self.e_kin,
            self.e_grav,
            self.e_int,
            self.e_total,
            self.d_visc,
            self.d_chem,
            self.d_fric,
            self.mass,
            self.phi_mean,
            self.phi_min,
            self.phi_max,
            self.constraint_res,
            self.picard_iters as f64,
            self.contraction_factor,
        ]
    }

    fn to_strings(self) -> Vec<String> {
        let f = self.fields();
        let mut out: Vec<String> = f.iter().map(|v| format!("{v:.16e}")).collect();
        out[14] = self.picard_iters.to_string();
        out
    }

    fn from_strings(row: &csv::StringRecord) -> Result<DiagnosticsRecord> {
        if row.len() != COLUMNS.len() {
            return Err(Error::Format(format!("expected {} columns, found {}", COLUMNS.len(), row.len())));
        }
        let num = |i: usize| -> Result<f64> {
            row[i].trim().parse::<f64>().map_err(|e| Error::Format(format!("column {}: {e}", COLUMNS[i])))
        };
        let iters = row[14]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("column picard_iters: {e}")))?;
        Ok(DiagnosticsRecord {
            t: num(0)?,
            dt: num(1)?,
            e_kin: num(2)?,
            e_grav: num(3)?,
            e_int: num(4)?,
            e_total: num(5)?,
            d_visc: num(6)?,
            d_chem: num(7)?,
            d_fric: num(8)?,
            mass: num(9)?,
            phi_mean: num(10)?,
            phi_min: num(11)?,
            phi_max: num(12)?,
            constraint_res: num(13)?,
            picard_iters: iters,
            contraction_factor: num(15)?,
        })
    }
}

/// `(E_kin, E_grav, E_int)` by midpoint quadrature. `E_grav` uses the height
/// `y` as potential and is zero when gravity is off.
pub fn total_energy(u: &VectorField, phi: &ScalarField, p: &PhysParams) -> (f64, f64, f64) {
    let g = &phi.grid;
    let area = g.cell_area();
    let (gx, gy) = grid::grad_raw(g, &phi.values);
    let mut kin = 0.0;
    let mut grav = 0.0;
    let mut int = 0.0;
    for (i, j, _, y) in g.cells() {
        let k = g.idx(i, j);
        let rho = p.rho(phi.values[k]);
        kin += 0.5 * rho * (u.x[k] * u.x[k] + u.y[k] * u.y[k]);
        if p.gravity_on {
            grav += rho * y;
        }
        int += phase::double_well(phi.values[k]).0 + 0.5 * (gx[k] * gx[k] + gy[k] * gy[k]);
    }
    (kin * area, grav * area, int * area)
}

/// `(D_visc, D_chem, D_fric)`; `D_chem` is `|G mu_p|^2` integrated.
pub fn dissipation_rate(u: &VectorField, phi: &ScalarField, mu_p: &ScalarField, p: &PhysParams) -> Result<(f64, f64, f64)> {
    let g = &phi.grid;
    let eta = phase::viscosity_field(phi, p)?;
    let visc = strain::viscous_form(&eta, u);
    let fric = strain::friction_form(&ScalarField::constant(*g, p.a0), u);
    let (gx, gy) = grid::grad_raw(g, &mu_p.values);
    let chem = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).sum::<f64>() * g.cell_area();
    Ok((visc, chem, fric))
}

/// `|| D u - alpha D G mu_p ||` in the area-weighted norm.
pub fn constraint_residual(g_div: &ScalarField, mu_p: &ScalarField, alpha: f64) -> f64 {
    let lap = grid::div_grad_raw(&mu_p.grid, &mu_p.values);
    let r = ScalarField::from_values(mu_p.grid, g_div.values.iter().zip(&lap).map(|(a, b)| a - alpha * b).collect());
    r.l2()
}

/// Pressure `(mu_p - mu)/alpha`, gauged to mean zero.
pub fn pressure(state: &SimState, p: &PhysParams) -> ScalarField {
    let d = &state.derived;
    let mut q = d.mu_p.zip_map(&d.mu, |a, b| (a - b) / p.alpha);
    q.remove_mean();
    q
}

/// `|E_{n+1} - E_n + dt D_{n+1}|`, with `dt` taken from the later record.
pub fn energy_balance_residual(prev: &DiagnosticsRecord, next: &DiagnosticsRecord) -> f64 {
    (next.e_total - prev.e_total + next.dt * next.dissipation()).abs()
}

/// Sum of the per-step balance residuals over a record series.
pub fn cumulative_balance_residual(records: &[DiagnosticsRecord]) -> f64 {
    records.windows(2).map(|w| energy_balance_residual(&w[0], &w[1])).sum()
}

pub fn record(stepper: &Stepper, state: &SimState, report: Option<&PicardReport>) -> Result<DiagnosticsRecord> {
    let p = &stepper.params;
    let d = &state.derived;
    let (e_kin, e_grav, e_int) = total_energy(&state.u, &state.phi, p);
    let (d_visc, d_chem, d_fric) = dissipation_rate(&state.u, &state.phi, &d.mu_p, p)?;
    let rec = DiagnosticsRecord {
        t: state.t,
        dt: report.map_or(0.0, |r| r.dt_used),
        e_kin,
        e_grav,
        e_int,
        e_total: e_kin + e_grav + e_int,
        d_visc,
        d_chem,
        d_fric,
        mass: d.rho.integral(),
        phi_mean: state.phi.mean(),
        phi_min: state.phi.min(),
        phi_max: state.phi.max(),
        constraint_res: constraint_residual(&d.g, &d.mu_p, p.alpha),
        picard_iters: report.map_or(0, |r| r.iterations),
        contraction_factor: report.map_or(0.0, |r| r.contraction),
    };
    if rec.fields().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("diagnostics record"));
    }
    Ok(rec)
}

/// Streaming records writer; flushes after every row.
pub struct RecordWriter {
    inner: csv::Writer<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<RecordWriter> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(COLUMNS)?;
        inner.flush()?;
        Ok(RecordWriter { inner })
    }

    pub fn write(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        self.inner.write_record(r.to_strings())?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.iter().map(str::trim).ne(COLUMNS.iter().copied()) {
        return Err(Error::Format(format!("unexpected header in {}", path.display())));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        out.push(DiagnosticsRecord::from_strings(&row?)?);
    }
    Ok(out)
}

/// Writes `phi`, `ux`, `uy` and the mean-zero pressure for one step.
pub fn write_state_snapshot(dir: &Path, step: usize, state: &SimState, p: &PhysParams) -> Result<()> {
    let g = state.phi.grid;
    grid::write_snapshot(&dir.join(format!("phi_{step:06}.bin")), &state.phi)?;
    grid::write_snapshot(&dir.join(format!("ux_{step:06}.bin")), &ScalarField::from_values(g, state.u.x.clone()))?;
    grid::write_snapshot(&dir.join(format!("uy_{step:06}.bin")), &ScalarField::from_values(g, state.u.y.clone()))?;
    grid::write_snapshot(&dir.join(format!("p_{step:06}.bin")), &pressure(state, p))?;
    Ok(())
}

/// Summary printed by `energy-report`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub steps: usize,
    pub max_balance_residual: f64,
    pub cumulative_balance_residual: f64,
    pub monotone: bool,
    pub max_increase: f64,
    pub mass_drift: f64,
    pub max_constraint_res: f64,
}

/// Recomputes balance and monotonicity from stored records. Monotonicity
/// allows increases up to `tol * |E(0)|`.
pub fn energy_report(records: &[DiagnosticsRecord], tol: f64) -> EnergyReport {
    let e0 = records.first().map_or(0.0, |r| r.e_total.abs());
    let mut max_res: f64 = 0.0;
    let mut max_inc = f64::NEG_INFINITY;
    for w in records.windows(2) {
        max_res = max_res.max(energy_balance_residual(&w[0], &w[1]));
        max_inc = max_inc.max(w[1].e_total - w[0].e_total);
    }
    let mass_drift = match (records.first(), records.last()) {
        (Some(a), Some(b)) => (b.mass - a.mass).abs(),
        _ => 0.0,
    };
    EnergyReport {
        steps: records.len().saturating_sub(1),
        max_balance_residual: max_res,
        cumulative_balance_residual: cumulative_balance_residual(records),
        monotone: max_inc <= tol * e0,
        max_increase: max_inc.max(0.0),
        mass_drift,
        max_constraint_res: records.iter().map(|r| r.constraint_res).fold(0.0, f64::max),
    }
}
