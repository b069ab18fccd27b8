//! Constitutive laws: density, double-well potential, viscosity, viscous
//! stress and chemical potential.

use crate::error::{Error, Result};
use crate::grid::{self, ScalarField, TangentialClosure, TensorField, VectorField};

/// Model constants. The dimensionless groups are all one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub eps: f64,
    pub alpha: f64,
    pub nu: f64,
    pub a0: f64,
    pub gravity_on: bool,
}

impl PhysParams {
    pub fn new(eps: f64, nu: f64, a0: f64, gravity_on: bool) -> Result<PhysParams> {
        let alpha = alpha_from_eps(eps)?;
        if !(nu > 0.0) {
            return Err(Error::DomainError(format!("nu = {nu} must be positive")));
        }
        if !(a0 > 0.0) {
            return Err(Error::DomainError(format!("a0 = {a0} must be positive")));
        }
        Ok(PhysParams { eps, alpha, nu, a0, gravity_on })
    }

    /// Parameters whose density ratio gives the requested `alpha`.
    pub fn from_alpha(alpha: f64, nu: f64, a0: f64, gravity_on: bool) -> Result<PhysParams> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::DomainError(format!("alpha = {alpha} outside (0, 1)")));
        }
        let mut p = PhysParams::new(-2.0 * alpha / (1.0 + alpha), nu, a0, gravity_on)?;
        p.alpha = alpha;
        Ok(p)
    }

    pub fn rho(&self, phi: f64) -> f64 {
        0.5 * self.eps * phi + 1.0 + 0.5 * self.eps
    }

    pub fn eta(&self, phi: f64) -> f64 {
        let c = phi.clamp(-1.1, 1.1);
        0.5 * (self.nu - 1.0) * c + 0.5 * (self.nu + 1.0)
    }

    /// `1/alpha - phi`, the capillary coefficient before division by density.
    pub fn cap(&self, phi: f64) -> f64 {
        1.0 / self.alpha - phi
    }
}

/// `alpha = -eps / (2 + eps)`.
pub fn alpha_from_eps(eps: f64) -> Result<f64> {
    if !(eps > -1.0 && eps < 0.0) {
        return Err(Error::DomainError(format!("eps = {eps} outside (-1, 0)")));
    }
    Ok(-eps / (2.0 + eps))
}

pub fn density(phi: &ScalarField, p: &PhysParams) -> ScalarField {
    phi.map(|v| p.rho(v))
}

/// Returns an error when `min rho < 0.1`.
pub fn check_density_floor(rho: &ScalarField) -> Result<()> {
    let m = rho.min();
    if m < 0.1 {
        Err(Error::DensityFloorViolated(m))
    } else {
        Ok(())
    }
}

/// `(F, f)` with `F = (1 - phi^2)^2 / 4` and `f = F'`.
pub fn double_well(phi: f64) -> (f64, f64) {
    let s = 1.0 - phi * phi;
    (0.25 * s * s, phi * phi * phi - phi)
}

/// `eta(phi) = (nu-1)/2 phi + (nu+1)/2`, evaluated at `phi` clamped to `[-1.1, 1.1]`.
pub fn viscosity(phi: f64, p: &PhysParams) -> Result<f64> {
    let e = p.eta(phi);
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::ViscosityNonpositive(e))
    }
}

pub fn viscosity_field(phi: &ScalarField, p: &PhysParams) -> Result<ScalarField> {
    let eta = phi.map(|v| p.eta(v));
    let m = eta.min();
    if m > 0.0 {
        Ok(eta)
    } else {
        Err(Error::ViscosityNonpositive(m))
    }
}

/// `S = 2 eta D(u) - (2/3) eta (div u) I` per cell, from the central
/// velocity gradient with the Robin tangential closure of `u.friction`.
pub fn stress(phi: &ScalarField, u: &VectorField, p: &PhysParams) -> Result<TensorField> {
    let eta = viscosity_field(phi, p)?;
    let closure = if u.friction > 0.0 {
        TangentialClosure::Robin { eta: &eta, a0: u.friction }
    } else {
        TangentialClosure::Mirror
    };
    let gu = grid::velocity_gradient(u, closure)?;
    Ok(stress_from_gradient(&gu, &eta))
}

pub(crate) fn stress_from_gradient(gu: &TensorField, eta: &ScalarField) -> TensorField {
    let n = eta.values.len();
    let mut s: [[Vec<f64>; 2]; 2] = Default::default();
    for row in s.iter_mut() {
        for c in row.iter_mut() {
            *c = vec![0.0; n];
        }
    }
    for k in 0..n {
        let e = eta.values[k];
        let g = gu.at(k);
        let div = g[0][0] + g[1][1];
        let sym = 0.5 * (g[0][1] + g[1][0]);
        s[0][0][k] = 2.0 * e * g[0][0] - 2.0 / 3.0 * e * div;
        s[1][1][k] = 2.0 * e * g[1][1] - 2.0 / 3.0 * e * div;
        s[0][1][k] = 2.0 * e * sym;
        s[1][0][k] = 2.0 * e * sym;
    }
    TensorField { grid: gu.grid, t: s }
}

/// `2 D:D - (2/3) (div u)^2` for a velocity gradient `g`.
pub fn dissipation_density(g: [[f64; 2]; 2]) -> f64 {
    let sym = 0.5 * (g[0][1] + g[1][0]);
    let div = g[0][0] + g[1][1];
    2.0 * (g[0][0] * g[0][0] + g[1][1] * g[1][1] + 2.0 * sym * sym) - 2.0 / 3.0 * div * div
}

/// `mu = f(phi) - D G phi`, using the wide Laplacian so that `mu` is the
/// exact variational derivative of the discrete interface energy.
pub fn chemical_potential(phi: &ScalarField) -> Result<ScalarField> {
    let lap = grid::div_grad(phi)?;
    Ok(phi.zip_map(&lap, |v, l| double_well(v).1 - l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn p(eps: f64) -> PhysParams {
        PhysParams::new(eps, 2.0, 1.0, false).unwrap()
    }

    #[test]
    fn alpha_examples() {
        assert!((alpha_from_eps(-0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((alpha_from_eps(-1e-8).unwrap() - 5e-9).abs() < 1e-15);
        assert!((alpha_from_eps(-0.9).unwrap() - 0.9 / 1.1).abs() < 1e-15);
        assert!(alpha_from_eps(0.1).is_err());
        assert!(alpha_from_eps(-1.0).is_err());
    }

    #[test]
    fn from_alpha_inverts() {
        let q = PhysParams::from_alpha(0.2, 1.0, 1.0, false).unwrap();
        assert!((alpha_from_eps(q.eps).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn density_examples() {
        let g = Grid::square(8).unwrap();
        let q = p(-0.5);
        assert!(density(&ScalarField::constant(g, -1.0), &q).values.iter().all(|&r| r == 1.0));
        assert!(density(&ScalarField::constant(g, 1.0), &q).values.iter().all(|&r| r == 0.5));
        assert!(density(&ScalarField::constant(g, 0.0), &q).values.iter().all(|&r| r == 0.75));
        for k in 0..=100 {
            let phi = -0.5 + k as f64 / 100.0;
            for eps in [-0.99, -0.5, -0.01] {
                assert!(p(eps).rho(phi) >= 0.25);
            }
        }
    }

    #[test]
    fn double_well_examples() {
        assert_eq!(double_well(0.0), (0.25, 0.0));
        assert_eq!(double_well(1.0), (0.0, 0.0));
        assert_eq!(double_well(-1.0), (0.0, 0.0));
        assert_eq!(double_well(2.0), (2.25, 6.0));
    }

    #[test]
    fn viscosity_examples() {
        let q = PhysParams::new(-0.5, 3.0, 1.0, false).unwrap();
        assert_eq!(viscosity(1.0, &q).unwrap(), 3.0);
        assert_eq!(viscosity(-1.0, &q).unwrap(), 1.0);
        let q2 = PhysParams::new(-0.5, 2.0, 1.0, false).unwrap();
        assert_eq!(viscosity(0.0, &q2).unwrap(), 1.5);
        assert_eq!(viscosity(5.0, &q2).unwrap(), viscosity(1.1, &q2).unwrap());
    }

    #[test]
    fn stress_examples() {
        let g = Grid::square(10).unwrap();
        let q = PhysParams::new(-0.5, 1.0, 1.0, false).unwrap();
        let phi = ScalarField::zeros(g);
        let s = stress(&phi, &VectorField::from_fn(g, |_, _| (0.3, -0.2)), &q).unwrap();
        for (i, j, _, _) in g.cells() {
            if g.is_interior(i, j, 1) {
                let m = s.at(g.idx(i, j));
                assert!(m.iter().flatten().all(|v| v.abs() < 1e-14));
            }
        }
        let s = stress(&phi, &VectorField::from_fn(g, |x, y| (x, y)), &q).unwrap();
        let m = s.at(g.idx(4, 4));
        assert!((m[0][0] - 2.0 / 3.0).abs() < 1e-12 && (m[1][1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(m[0][1].abs() < 1e-12);
    }

    #[test]
    fn chemical_potential_of_constants() {
        let g = Grid::square(8).unwrap();
        assert!(chemical_potential(&ScalarField::zeros(g)).unwrap().max_abs() == 0.0);
        assert!(chemical_potential(&ScalarField::constant(g, 1.0)).unwrap().max_abs() == 0.0);
        let c = 0.3;
        let mu = chemical_potential(&ScalarField::constant(g, c)).unwrap();
        assert!(mu.values.iter().all(|&m| m == double_well(c).1));
    }

    #[test]
    fn chemical_potential_of_kink() {
        // 1D kink tanh((x - 1/2)/sqrt 2) solves f(phi) = phi''
        let err = |n: usize| {
            let g = Grid::new(n, 8, 8.0, 1.0).unwrap();
            let phi = ScalarField::from_fn(g, |x, _| ((x - 4.0) / 2f64.sqrt()).tanh());
            let mu = chemical_potential(&phi).unwrap();
            let mut e: f64 = 0.0;
            for (i, j, x, _) in g.cells() {
                if (x - 4.0).abs() < 2.0 {
                    e = e.max(mu.at(i, j).abs());
                }
            }
            e
        };
        let (a, b) = (err(64), err(128));
        assert!(b < 0.02, "{b}");
        assert!((a / b).log2() > 1.8);
    }

    #[test]
    fn density_floor() {
        let g = Grid::square(8).unwrap();
        assert!(check_density_floor(&ScalarField::constant(g, 0.05)).is_err());
        assert!(check_density_floor(&ScalarField::constant(g, 0.5)).is_ok());
    }

    proptest! {
        #[test]
        fn dissipation_density_nonnegative(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0) {
            prop_assert!(dissipation_density([[a, b], [c, d]]) >= -1e-12);
        }

        #[test]
        fn f_is_derivative_of_potential(phi in -2.0f64..2.0) {
            for delta in [1e-3, 1e-4] {
                let fd = (double_well(phi + delta).0 - double_well(phi - delta).0) / (2.0 * delta);
                prop_assert!((fd - double_well(phi).1).abs() <= 2.0 * delta * delta + 1e-11);
            }
        }

        #[test]
        fn density_is_affine(a in -1.0f64..1.0, b in -1.0f64..1.0, eps in -0.99f64..-0.01) {
            let q = PhysParams::new(eps, 1.0, 1.0, false).unwrap();
            let lhs = q.rho(a) + q.rho(b);
            let rhs = 2.0 * q.rho(0.5 * (a + b));
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn stress_trace(seed in 0u64..200) {
            let g = Grid::square(10).unwrap();
            let s = seed as f64 * 0.1;
            let q = PhysParams::new(-0.5, 2.0, 1.0, false).unwrap();
            let phi = ScalarField::from_fn(g, |x, y| 0.3 * (x + s * y).sin());
            let u = VectorField::from_fn(g, |x, y| ((s * x).sin() * y, (x * y + s).cos())).with_friction(1.0);
            let st = stress(&phi, &u, &q).unwrap();
            let eta = viscosity_field(&phi, &q).unwrap();
            let div = crate::grid::velocity_gradient(&u, TangentialClosure::Robin { eta: &eta, a0: 1.0 }).unwrap();
            for k in 0..g.n_cells() {
                let m = st.at(k);
                let dv = div.t[0][0][k] + div.t[1][1][k];
                prop_assert!((m[0][0] + m[1][1] - 2.0 / 3.0 * eta.values[k] * dv).abs() < 1e-11);
                prop_assert_eq!(m[0][1], m[1][0]);
            }
        }
    }
}
