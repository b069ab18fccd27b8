//! Run configuration: a line-oriented `key = value` format with `#` comments.
//!
//! ```text
//! # required
//! nx = 64
//! ny = 64
//! eps = -0.5
//! dt = 1e-4
//! t_end = 0.02
//! # optional, with defaults
//! lx = 1.0
//! ly = 1.0
//! nu = 1.0
//! a0 = 1.0
//! gravity = false
//! picard_tol = 1e-8
//! picard_max_iters = 50
//! refreeze = false
//! snapshot_interval = 0
//! init = spinodal(0.01, 42)
//! output_dir = out
//! ```
//!
//! `init` is one of `uniform(c)`, `sinusoidal(amp, kx, ky)`,
//! `spinodal(amp, seed)` or `file(path)`; the file is a phase-field snapshot.

use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField};
use crate::phase::PhysParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Highest cosine index of the band-limited spinodal noise.
pub const NOISE_MODES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Uniform(f64),
    /// `amp cos(kx pi x / Lx) cos(ky pi y / Ly)`.
    Sinusoidal { amp: f64, kx: f64, ky: f64 },
    /// Band-limited random Neumann cosine modes, `max |phi| <= amp`.
    Spinodal { amp: f64, seed: u64 },
    File(PathBuf),
}

impl InitialCondition {
    /// Samples the initial phase field on `grid`.
    pub fn sample(&self, grid: Grid) -> Result<ScalarField> {
        match self {
            InitialCondition::Uniform(c) => Ok(ScalarField::constant(grid, *c)),
            InitialCondition::Sinusoidal { amp, kx, ky } => Ok(ScalarField::from_fn(grid, |x, y| {
                amp * (kx * PI * x / grid.lx).cos() * (ky * PI * y / grid.ly).cos()
            })),
            InitialCondition::Spinodal { amp, seed } => Ok(spinodal_noise(grid, *amp, *seed)),
            InitialCondition::File(path) => {
                let f = grid::read_snapshot(path)?;
                if f.grid != grid {
                    return Err(Error::Config(format!(
                        "snapshot {} has grid {}x{}, config expects {}x{}",
                        path.display(),
                        f.grid.nx,
                        f.grid.ny,
                        grid.nx,
                        grid.ny
                    )));
                }
                Ok(f)
            }
        }
    }
}

/// `amp * sum a_mn cos(m pi x/Lx) cos(n pi y/Ly) / sum |a_mn|` over
/// `0 <= m, n <= NOISE_MODES`, `(m, n) != (0, 0)`, with `a_mn` uniform in
/// `[-1, 1]` from a ChaCha8 stream seeded by `seed`.
pub fn spinodal_noise(grid: Grid, amp: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for m in 0..=NOISE_MODES {
        for n in 0..=NOISE_MODES {
            let a: f64 = rng.random_range(-1.0..1.0);
            if m + n > 0 {
                modes.push((m as f64, n as f64, a));
            }
        }
    }
    let norm: f64 = modes.iter().map(|m| m.2.abs()).sum();
    ScalarField::from_fn(grid, |x, y| {
        amp * modes
            .iter()
            .map(|&(m, n, a)| a * (m * PI * x / grid.lx).cos() * (n * PI * y / grid.ly).cos())
            .sum::<f64>()
            / norm
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub eps: f64,
    pub nu: f64,
    pub a0: f64,
    pub gravity: bool,
    pub dt: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub refreeze: bool,
    pub snapshot_interval: usize,
    pub init: InitialCondition,
    pub output_dir: PathBuf,
}

const REQUIRED: [&str; 5] = ["nx", "ny", "eps", "dt", "t_end"];
const OPTIONAL: [&str; 11] = [
    "lx",
    "ly",
    "nu",
    "a0",
    "gravity",
    "picard_tol",
    "picard_max_iters",
    "refreeze",
    "snapshot_interval",
    "init",
    "output_dir",
];

impl SimConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.lx, self.ly)
    }

    pub fn params(&self) -> Result<PhysParams> {
        PhysParams::new(self.eps, self.nu, self.a0, self.gravity)
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nx < 8 || self.ny < 8 {
            return bad(format!("grid {}x{} below the 8x8 minimum", self.nx, self.ny));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return bad("lx and ly must be positive".into());
        }
        if !(self.eps > -0.95 && self.eps < -0.05) {
            return bad(format!("eps = {} outside (-0.95, -0.05)", self.eps));
        }
        let alpha = -self.eps / (2.0 + self.eps);
        if alpha < 0.05 * (1.0 - 1e-12) {
            return bad(format!("alpha = {alpha} below 0.05; the explicit quasi-pressure term is too stiff"));
        }
        if !(0.2..=5.0).contains(&self.nu) {
            return bad(format!("nu = {} outside [0.2, 5]", self.nu));
        }
        if !(self.a0 > 0.0) {
            return bad(format!("a0 = {} must be positive", self.a0));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be non-negative", self.t_end));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iters < 2 {
            return bad("picard_tol must be positive and picard_max_iters at least 2".into());
        }
        Ok(())
    }

    /// Resolves `path` against the output directory.
    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Parses configuration text. Relative `file(...)` and `output_dir` paths
/// are resolved against `base` when given.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<SimConfig> {
    let mut kv = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !REQUIRED.contains(&k) && !OPTIONAL.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", no + 1)));
        }
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    for k in REQUIRED {
        if !kv.contains_key(k) {
            return Err(Error::Config(format!("missing required key `{k}`")));
        }
    }
    let num = |k: &str, d: f64| -> Result<f64> {
        kv.get(k)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}` as a number"))))
            .unwrap_or(Ok(d))
    };
    let int = |k: &str, d: usize| -> Result<usize> {
        kv.get(k)
            .map(|v| v.parse::<usize>().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}` as an integer"))))
            .unwrap_or(Ok(d))
    };
    let flag = |k: &str| -> Result<bool> {
        match kv.get(k).map(String::as_str) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => Err(Error::Config(format!("`{k}`: expected true or false, got `{v}`"))),
        }
    };
    let resolve = |p: &str| -> PathBuf {
        let p = PathBuf::from(p);
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    };
    let init = match kv.get("init") {
        None => InitialCondition::Uniform(0.0),
        Some(s) => parse_init(s, &resolve)?,
    };
    let cfg = SimConfig {
        nx: int("nx", 0)?,
        ny: int("ny", 0)?,
        lx: num("lx", 1.0)?,
        ly: num("ly", 1.0)?,
        eps: num("eps", 0.0)?,
        nu: num("nu", 1.0)?,
        a0: num("a0", 1.0)?,
        gravity: flag("gravity")?,
        dt: num("dt", 0.0)?,
        t_end: num("t_end", 0.0)?,
        picard_tol: num("picard_tol", 1e-8)?,
        picard_max_iters: int("picard_max_iters", 50)?,
        refreeze: flag("refreeze")?,
        snapshot_interval: int("snapshot_interval", 0)?,
        init,
        output_dir: resolve(kv.get("output_dir").map(String::as_str).unwrap_or("out")),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_init(s: &str, resolve: &dyn Fn(&str) -> PathBuf) -> Result<InitialCondition> {
    let err = || Error::Config(format!("`init`: cannot parse `{s}`"));
    let (name, rest) = s.split_once('(').ok_or_else(err)?;
    let inner = rest.strip_suffix(')').ok_or_else(err)?;
    let args: Vec<&str> = inner.split(',').map(str::trim).collect();
    let f = |i: usize| -> Result<f64> { args.get(i).and_then(|a| a.parse().ok()).ok_or_else(err) };
    let ic = match (name.trim(), args.len()) {
        ("uniform", 1) => InitialCondition::Uniform(f(0)?),
        ("sinusoidal", 3) => InitialCondition::Sinusoidal { amp: f(0)?, kx: f(1)?, ky: f(2)? },
        ("spinodal", 2) => InitialCondition::Spinodal {
            amp: f(0)?,
            seed: args[1].parse().map_err(|_| err())?,
        },
        ("file", 1) => InitialCondition::File(resolve(args[0])),
        _ => return Err(err()),
    };
    Ok(ic)
}
