use nalgebra::{DMatrix, DVector};

use crate::closed_form::SUPPORT_TOL;
use crate::market::MarketModel;
use crate::{Error, Result};

/// Ball radius over which the gradient bound of the smooth part is taken when
/// `t` is chosen automatically.
pub const CAP_RADIUS: f64 = 10.0;

/// The scaled problem
/// `min_{eᵀx=1} ½‖Wx‖² + λ‖Wx‖ − r̃ᵀx + φ̃ᵀ1(x)` with `WᵀW = Σ`, `λ = √ε/2κ`,
/// `r̃ = r̄/2κ`, `φ̃ = φ/2κ`, and its capped-l1 surrogate with cap `t`.
#[derive(Debug, Clone)]
pub struct DcProblem {
    /// Upper-triangular `W = Lᵀ`; column `i` of `W` is row `i` of `L`.
    w: DMatrix<f64>,
    w_norm: f64,
    pub r_tilde: DVector<f64>,
    pub phi_tilde: DVector<f64>,
    pub lam: f64,
    pub t: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub phi: DVector<f64>,
    /// Set when `t` came from [`t_default`]; iterates must stay inside.
    pub radius: Option<f64>,
    market: MarketModel,
}

pub fn build_problem(m: &MarketModel, kappa: f64, epsilon: f64, phi: &[f64], t: Option<f64>) -> Result<DcProblem> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::NonPositiveKappa(kappa));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if phi.len() != m.n() {
        return Err(Error::InvalidInput(format!("phi has {} entries for {} assets", phi.len(), m.n())));
    }
    if let Some((index, &value)) = phi.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::NonPositivePhi { index, value });
    }
    let w = m.chol_lower().transpose();
    let w_norm = lambda_max(m.cov()).sqrt();
    let r_tilde = m.mean() / (2.0 * kappa);
    let phi = DVector::from_column_slice(phi);
    let phi_tilde = &phi / (2.0 * kappa);
    let lam = epsilon.sqrt() / (2.0 * kappa);
    let (t, radius) = match t {
        Some(t) if t > 0.0 && t.is_finite() => (t, None),
        Some(t) => return Err(Error::InvalidInput(format!("cap t must be positive, got {t}"))),
        None => {
            let lh = gradient_bound(w_norm, lam, r_tilde.norm(), CAP_RADIUS);
            (t_bound(m.n(), phi_tilde.min(), lh), Some(CAP_RADIUS))
        }
    };
    Ok(DcProblem { w, w_norm, r_tilde, phi_tilde, lam, t, kappa, epsilon, phi, radius, market: m.clone() })
}

/// `‖W‖₂² R + λ‖W‖₂ + ‖r̃‖`, a bound on `‖∇h(x)‖` over `‖x‖ ≤ R`.
pub fn gradient_bound(w_norm: f64, lam: f64, r_tilde_norm: f64, radius: f64) -> f64 {
    w_norm * w_norm * radius + lam * w_norm + r_tilde_norm
}

fn t_bound(n: usize, phi_min: f64, lh: f64) -> f64 {
    0.5 * (1.0 / n as f64).min(phi_min / (2.0 * lh))
}

/// Automatic cap: half of `min{1/n, φ̃_min/(2L̂)}` with `L̂` from
/// [`gradient_bound`] on the ball of radius [`CAP_RADIUS`].
pub fn t_default(m: &MarketModel, kappa: f64, epsilon: f64, phi: &[f64]) -> Result<f64> {
    Ok(build_problem(m, kappa, epsilon, phi, None)?.t)
}

/// Largest eigenvalue of a symmetric positive definite matrix by power
/// iteration.
fn lambda_max(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 1 {
        return a[(0, 0)];
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..5000 {
        let y = a * &x;
        let next = x.dot(&y);
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        x = y / ny;
        if (next - est).abs() <= 1e-13 * next.abs() {
            return next;
        }
        est = next;
    }
    est
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedL1 {
    pub total: f64,
    pub p: f64,
    pub q: f64,
}

/// `p_t = Σφ̃|x|/t`, `q_t = Σφ̃ max{0, x/t − 1, −x/t − 1}` and their difference.
pub fn capped_l1(x: &DVector<f64>, phi_tilde: &DVector<f64>, t: f64) -> CappedL1 {
    let mut p = 0.0;
    let mut q = 0.0;
    let mut total = 0.0;
    for (xi, fi) in x.iter().zip(phi_tilde.iter()) {
        let a = xi.abs() / t;
        p += fi * a;
        q += fi * (a - 1.0).max(0.0);
        total += fi * a.min(1.0);
    }
    CappedL1 { total, p, q }
}

/// The element of `∂q_t(x)` used by the outer loop.
pub fn q_select(x: &DVector<f64>, phi_tilde: &DVector<f64>, t: f64) -> DVector<f64> {
    x.zip_map(phi_tilde, |xi, fi| {
        if xi >= t {
            fi / t
        } else if xi <= -t {
            -fi / t
        } else {
            0.0
        }
    })
}

impl DcProblem {
    pub fn n(&self) -> usize {
        self.r_tilde.len()
    }

    pub fn market(&self) -> &MarketModel {
        &self.market
    }

    /// The upper-triangular factor `W`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn w_norm(&self) -> f64 {
        self.w_norm
    }

    pub fn w_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x
    }

    pub fn wt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        self.w.tr_mul(y)
    }

    /// Thresholds of `p_t`: `φ̃/t`.
    pub fn p_weights(&self) -> DVector<f64> {
        &self.phi_tilde / self.t
    }

    /// `h(x) = ½‖Wx‖² + λ‖Wx‖ − r̃ᵀx`.
    pub fn h_value(&self, x: &DVector<f64>) -> f64 {
        let wx = self.w_mul(x);
        let nw = wx.norm();
        0.5 * nw * nw + self.lam * nw - self.r_tilde.dot(x)
    }

    /// `∇h(x) = Σx (1 + λ/‖Wx‖) − r̃`; the `λ` term is dropped at `Wx = 0`.
    pub fn h_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let wx = self.w_mul(x);
        let nw = wx.norm();
        let scale = if nw > 0.0 { 1.0 + self.lam / nw } else { 1.0 };
        self.wt_mul(&wx) * scale - &self.r_tilde
    }

    /// Capped-l1 surrogate objective `h + p_t − q_t`.
    pub fn dc_objective(&self, x: &DVector<f64>) -> f64 {
        self.h_value(x) + capped_l1(x, &self.phi_tilde, self.t).total
    }

    /// Convex l1 model objective `h + p_t`.
    pub fn l1_objective(&self, x: &DVector<f64>) -> f64 {
        self.h_value(x) + capped_l1(x, &self.phi_tilde, self.t).p
    }

    /// `h + φ̃ᵀ1(x)` with the exact indicator `x_i ≠ 0`.
    pub fn rsmv_objective(&self, x: &DVector<f64>) -> f64 {
        let cost: f64 = x.iter().zip(self.phi_tilde.iter()).filter(|(v, _)| **v != 0.0).map(|(_, f)| f).sum();
        self.h_value(x) + cost
    }

    /// [`Self::rsmv_objective`] on the unscaled `κ xᵀΣx + √ε√(xᵀΣx) − r̄ᵀx + φᵀ1(x)`.
    pub fn model_objective(&self, x: &DVector<f64>) -> f64 {
        2.0 * self.kappa * self.rsmv_objective(x)
    }

    /// The problem on the assets `idx`, with the same `t`, `λ`, `r̃`, `φ̃`.
    pub fn restrict(&self, idx: &[usize]) -> Result<DcProblem> {
        let market = self.market.submarket(idx)?;
        let phi: Vec<f64> = idx.iter().map(|&i| self.phi[i]).collect();
        let mut sub = build_problem(&market, self.kappa, self.epsilon, &phi, Some(self.t))?;
        sub.radius = self.radius;
        Ok(sub)
    }
}

/// Scatter `x_sub` into a zero vector of length `n` at positions `idx`.
pub fn embed(idx: &[usize], x_sub: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for (k, &i) in idx.iter().enumerate() {
        x[i] = x_sub[k];
    }
    x
}

fn soft(z: f64, w: f64) -> f64 {
    if z > w {
        z - w
    } else if z < -w {
        z + w
    } else {
        0.0
    }
}

/// `min_{s, ξ} ‖g + ξ + s e‖` over `ξ_i = w_i sign(x_i)` where `zero[i]` is
/// false and `ξ_i ∈ [−w_i, w_i]` where it is true.
///
/// The squared objective is convex and piecewise quadratic in `s`; its
/// derivative is piecewise linear with kinks at `−g_i ± w_i`, so the optimal
/// shift is found exactly by bisecting over the sorted kinks.
pub fn normal_cone_residual(g: &DVector<f64>, x: &DVector<f64>, w: &DVector<f64>, zero: &[bool]) -> f64 {
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for i in 0..g.len() {
        if zero[i] {
            free.push((g[i], w[i]));
        } else {
            fixed.push(g[i] + w[i] * x[i].signum());
        }
    }
    let deriv =
        |s: f64| -> f64 { fixed.iter().map(|c| c + s).sum::<f64>() + free.iter().map(|&(gi, wi)| soft(gi + s, wi)).sum::<f64>() };
    let mut kinks: Vec<f64> = free.iter().flat_map(|&(gi, wi)| [-gi - wi, -gi + wi]).collect();
    kinks.sort_by(f64::total_cmp);

    // the linear piece containing the root, represented by an interior point
    let (lo, hi) = if kinks.is_empty() {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else if deriv(kinks[0]) > 0.0 {
        (f64::NEG_INFINITY, kinks[0])
    } else {
        // largest k with deriv(kinks[k]) <= 0
        let (mut a, mut b) = (0usize, kinks.len());
        while b - a > 1 {
            let mid = (a + b) / 2;
            if deriv(kinks[mid]) <= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        (kinks[a], kinks.get(a + 1).copied().unwrap_or(f64::INFINITY))
    };
    let probe = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    };
    let mut slope = fixed.len() as f64;
    let mut intercept: f64 = fixed.iter().sum();
    for &(gi, wi) in &free {
        let zi = gi + probe;
        if zi.abs() > wi {
            slope += 1.0;
            intercept += gi - wi * zi.signum();
        }
    }
    let s = if slope > 0.0 { (-intercept / slope).clamp(lo, hi) } else { probe };
    let r2 =
        fixed.iter().map(|c| (c + s).powi(2)).sum::<f64>() + free.iter().map(|&(gi, wi)| soft(gi + s, wi).powi(2)).sum::<f64>();
    r2.sqrt()
}

/// Result of checking the lifted stationarity inclusion at a feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationarity {
    /// Minimal-norm residual of the inclusion.
    pub residual: f64,
    /// Coordinates with `support_tol < |x_i| < t`.
    pub dead_zone: Vec<usize>,
}

/// Residual of `0 ∈ ∇h(x) + ∂p_t(x) − q(x) + N_C(x)` with `q(x)` from
/// [`q_select`], together with the list of coordinates strictly inside the
/// dead zone `(−t, t)` that are not (numerically) zero.
pub fn lifted_stationarity_check(x: &DVector<f64>, prob: &DcProblem) -> Result<Stationarity> {
    if (x.sum() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("budget violated: eᵀx = {}", x.sum())));
    }
    let tol = SUPPORT_TOL * x.amax();
    let zero: Vec<bool> = x.iter().map(|v| v.abs() <= tol).collect();
    let g = prob.h_gradient(x) - q_select(x, &prob.phi_tilde, prob.t);
    let residual = normal_cone_residual(&g, x, &prob.p_weights(), &zero);
    let dead_zone = x.iter().enumerate().filter(|(_, v)| v.abs() > tol && v.abs() < prob.t).map(|(i, _)| i).collect();
    Ok(Stationarity { residual, dead_zone })
}
