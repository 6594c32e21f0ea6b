//! Proximal maps, Moreau envelopes and generalized Jacobians of
//! `λ‖·‖₂` and of the weighted l1 norm `Σ w_i |x_i|`.
//!
//! Jacobian elements are applied as operators; the dense forms exist for
//! inspection only.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxEval {
    pub point: DVector<f64>,
    /// `φ(point) + ½‖point − z‖²`
    pub envelope: f64,
    /// `z − point`
    pub envelope_gradient: DVector<f64>,
}

/// Prox of `λ‖·‖₂`: block soft-thresholding. `λ = 0` gives the identity.
pub fn prox_scaled_l2(z: &DVector<f64>, lam: f64) -> ProxEval {
    debug_assert!(lam >= 0.0);
    let nz = z.norm();
    if nz > lam {
        let point = z * ((nz - lam) / nz);
        ProxEval { envelope_gradient: z - &point, point, envelope: lam * nz - 0.5 * lam * lam }
    } else {
        ProxEval { point: DVector::zeros(z.len()), envelope: 0.5 * nz * nz, envelope_gradient: z.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2JacobianKind {
    Smooth,
    Boundary,
    Zero,
}

/// Element of the B-subdifferential of [`prox_scaled_l2`] at `z`.
///
/// * smooth: `I − s(I − uuᵀ)` with `u = z/‖z‖`, `s = λ/‖z‖`
/// * boundary: `t·uuᵀ` (here `t = 1`, the limit of the smooth branch)
/// * zero
#[derive(Debug, Clone, PartialEq)]
pub struct L2JacobianElement {
    pub kind: L2JacobianKind,
    unit: DVector<f64>,
    scale: f64,
}

pub fn jac_prox_scaled_l2(z: &DVector<f64>, lam: f64) -> L2JacobianElement {
    let n = z.len();
    let nz = z.norm();
    if lam == 0.0 {
        // prox is the identity; treated as the smooth branch with s = 0
        let unit = if nz > 0.0 { z / nz } else { DVector::zeros(n) };
        return L2JacobianElement { kind: L2JacobianKind::Smooth, unit, scale: 0.0 };
    }
    if (nz - lam).abs() <= 1e-12 * lam.max(1.0) {
        L2JacobianElement { kind: L2JacobianKind::Boundary, unit: z / nz, scale: 1.0 }
    } else if nz > lam {
        L2JacobianElement { kind: L2JacobianKind::Smooth, unit: z / nz, scale: lam / nz }
    } else {
        L2JacobianElement { kind: L2JacobianKind::Zero, unit: DVector::zeros(n), scale: 0.0 }
    }
}

impl L2JacobianElement {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            L2JacobianKind::Zero => DVector::zeros(v.len()),
            L2JacobianKind::Boundary => &self.unit * self.unit.dot(v),
            L2JacobianKind::Smooth => v * (1.0 - self.scale) + &self.unit * (self.scale * self.unit.dot(v)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.unit.len();
        DMatrix::from_fn(n, n, |i, j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            self.apply(&e)[i]
        })
    }
}

/// Prox of `Σ w_i |x_i|`: componentwise soft-thresholding.
pub fn prox_weighted_l1(z: &DVector<f64>, w: &DVector<f64>) -> ProxEval {
    debug_assert_eq!(z.len(), w.len());
    let point = z.zip_map(w, |zi, wi| {
        if zi > wi {
            zi - wi
        } else if zi < -wi {
            zi + wi
        } else {
            0.0
        }
    });
    let envelope_gradient = z - &point;
    let envelope = point.iter().zip(w.iter()).map(|(p, wi)| wi * p.abs()).sum::<f64>() + 0.5 * envelope_gradient.norm_squared();
    ProxEval { point, envelope, envelope_gradient }
}

/// 0/1 diagonal element of the B-subdifferential of [`prox_weighted_l1`].
#[derive(Debug, Clone, PartialEq)]
pub struct L1JacobianElement {
    pub diagonal: DVector<f64>,
}

/// `θ_i = 1` where `|z_i| ≥ w_i`, else 0.
pub fn jac_prox_weighted_l1(z: &DVector<f64>, w: &DVector<f64>) -> L1JacobianElement {
    L1JacobianElement { diagonal: z.zip_map(w, |zi, wi| if zi.abs() >= wi { 1.0 } else { 0.0 }) }
}

impl L1JacobianElement {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.diagonal.component_mul(v)
    }

    /// Indices with `θ_i = 1`.
    pub fn active(&self) -> Vec<usize> {
        self.diagonal.iter().enumerate().filter(|(_, d)| **d == 1.0).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxFamily {
    ScaledL2 { lam: f64 },
    WeightedL1 { w: DVector<f64> },
}

impl ProxFamily {
    pub fn eval(&self, z: &DVector<f64>) -> ProxEval {
        match self {
            ProxFamily::ScaledL2 { lam } => prox_scaled_l2(z, *lam),
            ProxFamily::WeightedL1 { w } => prox_weighted_l1(z, w),
        }
    }
}

/// `‖(z − prox(z)) − ∇_fd M(z)‖∞`, with central differences of step `h`.
pub fn moreau_envelope_gradient_check(family: &ProxFamily, z: &DVector<f64>, h: f64) -> f64 {
    let grad = family.eval(z).envelope_gradient;
    let mut worst = 0.0f64;
    for i in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        let fd = (family.eval(&zp).envelope - family.eval(&zm).envelope) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    // brute-force minimizer of λ‖u‖ + ½‖u − z‖² along the ray through z,
    // polished by golden section; the minimizer is known to lie on that ray
    fn l2_prox_oracle(z: &DVector<f64>, lam: f64) -> DVector<f64> {
        let nz = z.norm();
        let f = |s: f64| lam * s + 0.5 * (s - nz).powi(2);
        let grid = 10_000;
        let (mut best, mut best_s) = (f64::INFINITY, 0.0);
        for k in 0..=grid {
            let s = nz * k as f64 / grid as f64;
            if f(s) < best {
                best = f(s);
                best_s = s;
            }
        }
        let step = nz / grid as f64;
        let (mut a, mut b) = ((best_s - step).max(0.0), best_s + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        z * (0.5 * (a + b) / nz)
    }

    #[test]
    fn l2_examples() {
        assert_eq!(prox_scaled_l2(&v(&[0.0, 0.0]), 1.3).point, v(&[0.0, 0.0]));
        let p = prox_scaled_l2(&v(&[3.0, 4.0]), 1.0).point;
        assert!((&p - v(&[2.4, 3.2])).norm() < 1e-14);
        assert!((p - l2_prox_oracle(&v(&[3.0, 4.0]), 1.0)).norm() < 1e-7);
        assert_eq!(prox_scaled_l2(&v(&[0.6, 0.8]), 1.0).point, v(&[0.0, 0.0]));
    }

    #[test]
    fn l2_zero_lambda_is_identity() {
        let z = v(&[0.3, -2.0, 1.0]);
        assert_eq!(prox_scaled_l2(&z, 0.0).point, z);
        let j = jac_prox_scaled_l2(&z, 0.0);
        assert_eq!(j.apply(&v(&[1.0, 2.0, 3.0])), v(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn l2_jacobian_matches_finite_differences() {
        let z = v(&[3.0, 4.0]);
        let j = jac_prox_scaled_l2(&z, 1.0);
        assert_eq!(j.kind, L2JacobianKind::Smooth);
        let h = 1e-6;
        for d in [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.6, -0.8])] {
            let fd = (prox_scaled_l2(&(&z + &d * h), 1.0).point - prox_scaled_l2(&(&z - &d * h), 1.0).point) / (2.0 * h);
            assert!((fd - j.apply(&d)).norm() < 1e-6);
        }
    }

    #[test]
    fn l2_jacobian_branches_have_unit_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..60 {
            let n = 1 + case % 5;
            let z = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let lam = match case % 3 {
                0 => z.norm(),
                1 => 0.5 * z.norm(),
                _ => 2.0 * z.norm() + 0.1,
            };
            let j = jac_prox_scaled_l2(&z, lam);
            let expected = [L2JacobianKind::Boundary, L2JacobianKind::Smooth, L2JacobianKind::Zero][case % 3];
            assert_eq!(j.kind, expected);
            let d = j.to_dense();
            assert!((&d - d.transpose()).amax() < 1e-14);
            for ev in d.symmetric_eigen().eigenvalues.iter() {
                assert!(*ev >= -1e-12 && *ev <= 1.0 + 1e-12, "eigenvalue {ev}");
            }
        }
    }

    #[test]
    fn l1_examples() {
        let z = v(&[2.0, -0.5, 0.1]);
        let w = v(&[1.0, 1.0, 1.0]);
        assert_eq!(prox_weighted_l1(&z, &w).point, v(&[1.0, 0.0, 0.0]));
        assert_eq!(prox_weighted_l1(&z, &DVector::zeros(3)).point, z);
        assert_eq!(prox_weighted_l1(&v(&[0.7, -0.7]), &v(&[0.7, 0.7])).point, v(&[0.0, 0.0]));
    }

    // per-coordinate minimization of w|u| + ½(u − z)² by golden section
    fn l1_scalar_oracle(z: f64, w: f64) -> f64 {
        let f = |u: f64| w * u.abs() + 0.5 * (u - z).powi(2);
        let (mut a, mut b) = (-z.abs() - 1.0, z.abs() + 1.0);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..300 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn l1_matches_scalar_oracle() {
        let z = v(&[2.0, -0.5, 0.1, -3.0, 0.9]);
        let w = v(&[1.0, 0.2, 0.5, 1.0, 0.3]);
        let p = prox_weighted_l1(&z, &w).point;
        for i in 0..5 {
            assert!((p[i] - l1_scalar_oracle(z[i], w[i])).abs() < 1e-7);
        }
    }

    #[test]
    fn l1_jacobian() {
        let w = v(&[0.5; 5]);
        assert_eq!(jac_prox_weighted_l1(&v(&[1.0, -1.0, 2.0, -0.6, 0.9]), &w).diagonal, v(&[1.0; 5]));
        assert_eq!(jac_prox_weighted_l1(&v(&[0.1, -0.1, 0.2, -0.4, 0.0]), &w).diagonal, v(&[0.0; 5]));
        assert_eq!(jac_prox_weighted_l1(&v(&[0.5]), &v(&[0.5])).diagonal, v(&[1.0]));

        let z = v(&[1.0, -0.1, 0.3, -2.0, 0.7]);
        let j = jac_prox_weighted_l1(&z, &w);
        assert_eq!(j.active(), vec![0, 3, 4]);
        let h = 1e-7;
        let d = v(&[0.3, -0.2, 0.5, 1.0, -0.4]);
        let fd = (prox_weighted_l1(&(&z + &d * h), &w).point - prox_weighted_l1(&(&z - &d * h), &w).point) / (2.0 * h);
        assert!((fd - j.apply(&d)).amax() < 1e-8);
    }

    #[test]
    fn envelope_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z0 = DVector::zeros(4);
        assert_eq!(prox_scaled_l2(&z0, 1.0).envelope_gradient, z0);
        for _ in 0..20 {
            let z = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let lam = rng.random_range(0.1..3.0);
            assert!(moreau_envelope_gradient_check(&ProxFamily::ScaledL2 { lam }, &z, 1e-6) <= 1e-5);
            let w = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.0));
            let off_boundary = z.iter().zip(w.iter()).all(|(a, b)| (a.abs() - b).abs() > 1e-4);
            if off_boundary {
                assert!(moreau_envelope_gradient_check(&ProxFamily::WeightedL1 { w }, &z, 1e-6) <= 1e-5);
            }
        }
    }

    #[test]
    fn envelope_value_matches_definition() {
        let z = v(&[1.0, -2.0, 0.5]);
        let p = prox_scaled_l2(&z, 0.7);
        let direct = 0.7 * p.point.norm() + 0.5 * (&p.point - &z).norm_squared();
        assert!((p.envelope - direct).abs() < 1e-14);
    }
}
