//! Closed-form portfolios on the budget hyperplane `eᵀx = 1`.
//!
//! Every formula is evaluated with the stored Cholesky factor; no inverse of
//! the covariance is ever formed.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::MarketModel;
use crate::{Error, Result};

/// Relative threshold below which a weight is not counted in the support.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PortfolioKind {
    Mv,
    Min,
    Wvar,
    Rmv,
    L2mv,
    Ew,
    Unified,
    Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub weights: Vec<f64>,
    pub label: PortfolioKind,
    pub support: Vec<usize>,
    /// Optimal value of the defining problem, when a closed form exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Portfolio {
    pub fn new(weights: DVector<f64>, label: PortfolioKind, value: Option<f64>) -> Self {
        let weights: Vec<f64> = weights.iter().copied().collect();
        Self { support: support_of(&weights), weights, label, value }
    }

    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn cardinality(&self) -> usize {
        self.support.len()
    }

    pub fn budget_residual(&self) -> f64 {
        (self.weights.iter().sum::<f64>() - 1.0).abs()
    }
}

/// Indices with `|x_i| > SUPPORT_TOL * max |x_j|`.
pub fn support_of(x: &[f64]) -> Vec<usize> {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    x.iter().enumerate().filter(|(_, v)| v.abs() > SUPPORT_TOL * scale).map(|(i, _)| i).collect()
}

/// The scalars every closed form is built from: `Σ⁻¹e`, `Σ⁻¹r̄`,
/// `a = eᵀΣ⁻¹e`, `b = r̄ᵀΣ⁻¹e`, `c = r̄ᵀΣ⁻¹r̄`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub sinv_e: DVector<f64>,
    pub sinv_r: DVector<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Moments {
    pub fn new(m: &MarketModel) -> Self {
        let n = m.n();
        let e = DVector::from_element(n, 1.0);
        let le = m.solve_lower(&e);
        let lr = m.solve_lower(m.mean());
        let sinv_e = m.solve(&e);
        let sinv_r = m.solve(m.mean());
        Self { a: le.norm_squared(), b: lr.dot(&le), c: lr.norm_squared(), sinv_e, sinv_r }
    }

    /// `(Σ⁻¹ − Σ⁻¹eeᵀΣ⁻¹/a) r̄`, i.e. `κ Σ̂ r̄`.
    pub fn projected_r(&self) -> DVector<f64> {
        &self.sinv_r - &self.sinv_e * (self.b / self.a)
    }

    /// `r̄ᵀΣ⁻¹r̄ − (r̄ᵀΣ⁻¹e)²/(eᵀΣ⁻¹e)`, never negative.
    pub fn wvar_threshold(&self) -> f64 {
        (self.c - self.b * self.b / self.a).max(0.0)
    }

    pub fn x_min(&self) -> DVector<f64> {
        &self.sinv_e / self.a
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::NonPositiveKappa(kappa));
    }
    Ok(())
}

/// `x = Σ⁻¹e / eᵀΣ⁻¹e` with value `1 / eᵀΣ⁻¹e`.
pub fn min_variance(m: &MarketModel) -> Portfolio {
    let mom = Moments::new(m);
    Portfolio::new(mom.x_min(), PortfolioKind::Min, Some(1.0 / mom.a))
}

/// Minimizer of `κ xᵀΣx − r̄ᵀx` on the budget hyperplane.
pub fn mean_variance(m: &MarketModel, kappa: f64) -> Result<Portfolio> {
    check_kappa(kappa)?;
    let mom = Moments::new(m);
    let x = mom.projected_r() / (2.0 * kappa) + mom.x_min();
    let value = (2.0 * kappa - mom.b).powi(2) / (4.0 * kappa * mom.a) - mom.c / (4.0 * kappa);
    Ok(Portfolio::new(x, PortfolioKind::Mv, Some(value)))
}

/// Decomposition of the robust MV portfolio into the MV / minimum-variance mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmvDecomposition {
    /// `+∞` when `epsilon = 0` or when the MV and minimum-variance portfolios
    /// coincide.
    pub rho_star: f64,
    pub alpha: f64,
    pub kappa_effective: f64,
    /// Set when `r̄ ∈ span{e}`: the MV portfolio equals the minimum-variance
    /// portfolio and the robust portfolio is the minimum-variance portfolio.
    pub mv_equals_min: bool,
}

/// The scalar function whose root defines `rho*`:
/// `f(ρ) = κ²/(4(1+κρ)²) (r̂ᵀΣr̂ + 2(r̂ᵀe)²/(κρa) + (r̂ᵀe)²/((κρ)²a))`
/// with `r̂ = −2 x_MV`.
#[derive(Debug, Clone, Copy)]
pub struct RhoEquation {
    kappa: f64,
    /// `r̂ᵀΣr̂`
    quad: f64,
    /// `(r̂ᵀe)² / a`
    cross: f64,
}

impl RhoEquation {
    pub fn new(m: &MarketModel, kappa: f64) -> Result<Self> {
        let mv = mean_variance(m, kappa)?;
        let x = mv.x();
        let r_hat_e = -2.0 * x.sum();
        let mom = Moments::new(m);
        Ok(Self { kappa, quad: 4.0 * m.quad_form(&x), cross: r_hat_e * r_hat_e / mom.a })
    }

    pub fn value(&self, rho: f64) -> f64 {
        let kr = self.kappa * rho;
        let pre = self.kappa * self.kappa / (4.0 * (1.0 + kr).powi(2));
        pre * (self.quad + 2.0 * self.cross / kr + self.cross / (kr * kr))
    }

    /// `ρ f'(ρ)`, the derivative with respect to `ln ρ`.
    fn log_derivative(&self, rho: f64) -> f64 {
        let k = self.kappa;
        let kr = k * rho;
        let inner = self.quad + 2.0 * self.cross / kr + self.cross / (kr * kr);
        let inner_d = -2.0 * self.cross / (kr * rho) - 2.0 * self.cross / (kr * kr * rho);
        let pre = k * k / 4.0;
        let d = pre * (inner_d / (1.0 + kr).powi(2) - 2.0 * k * inner / (1.0 + kr).powi(3));
        rho * d
    }

    /// Unique positive root of `f(ρ) = target`. Bisection on `ln ρ` guarded
    /// Newton steps; the initial bracket `[1e-12, 1e12]` is widened
    /// geometrically until it contains a sign change.
    pub fn solve(&self, target: f64) -> f64 {
        let g = |rho: f64| self.value(rho) - target;
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        while g(lo) < 0.0 && lo > 1e-300 {
            lo *= 1e-6;
        }
        while g(hi) > 0.0 && hi < 1e300 {
            hi *= 1e6;
        }
        let tol = 1e-12 * target.max(1.0) * 0.25;
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let mut u = 0.5 * (a + b);
        for _ in 0..500 {
            let rho = u.exp();
            let gv = g(rho);
            if gv.abs() <= tol {
                return rho;
            }
            // f decreasing: positive residual means the root lies to the right
            if gv > 0.0 {
                a = u;
            } else {
                b = u;
            }
            if b - a <= 1e-15 * u.abs().max(1.0) {
                return rho;
            }
            let d = self.log_derivative(rho);
            let newton = if d < 0.0 { u - gv / d } else { f64::NAN };
            u = if newton.is_finite() && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        }
        u.exp()
    }
}

/// `rho*` with `f(rho*) = ε/4`, the mixing weight `α = κρ*/(1+κρ*)` and the
/// equivalent risk aversion `κ + 1/ρ*`.
pub fn rho_star(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<RmvDecomposition> {
    check_kappa(kappa)?;
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mom = Moments::new(m);
    let mv_equals_min = mom.wvar_threshold() <= 1e-13 * mom.c.abs().max(f64::MIN_POSITIVE);
    if mv_equals_min || epsilon == 0.0 {
        return Ok(RmvDecomposition { rho_star: f64::INFINITY, alpha: 1.0, kappa_effective: kappa, mv_equals_min });
    }
    let rho = RhoEquation::new(m, kappa)?.solve(epsilon / 4.0);
    Ok(RmvDecomposition {
        rho_star: rho,
        alpha: kappa * rho / (1.0 + kappa * rho),
        kappa_effective: kappa + 1.0 / rho,
        mv_equals_min: false,
    })
}

/// Robust MV portfolio `α x_MV + (1−α) x_MIN`, the minimizer of
/// `κ xᵀΣx + √ε √(xᵀΣx) − r̄ᵀx`.
pub fn rmv(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<Portfolio> {
    let (p, _) = rmv_with_decomposition(m, kappa, epsilon)?;
    Ok(p)
}

pub fn rmv_with_decomposition(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<(Portfolio, RmvDecomposition)> {
    let dec = rho_star(m, kappa, epsilon)?;
    let mom = Moments::new(m);
    let x_min = mom.x_min();
    let x = if dec.mv_equals_min {
        x_min
    } else {
        let x_mv = mom.projected_r() / (2.0 * kappa) + &x_min;
        if epsilon == 0.0 {
            x_mv
        } else {
            x_mv * dec.alpha + x_min * (1.0 - dec.alpha)
        }
    };
    let value = rmv_objective(m, kappa, epsilon, &x);
    Ok((Portfolio::new(x, PortfolioKind::Rmv, Some(value)), dec))
}

/// Worst-case VaR portfolio, the minimizer of `√ε √(xᵀΣx) − r̄ᵀx`.
pub fn wvar(m: &MarketModel, epsilon: f64) -> Result<Portfolio> {
    let mom = Moments::new(m);
    let threshold = mom.wvar_threshold();
    if !(epsilon > threshold) {
        return Err(Error::EpsilonBelowWvarThreshold { epsilon, threshold });
    }
    let d = wvar_discriminant(&mom, epsilon);
    let x = mom.x_min() + mom.projected_r() / d;
    let value = (-mom.b + d) / mom.a;
    Ok(Portfolio::new(x, PortfolioKind::Wvar, Some(value)))
}

fn wvar_discriminant(mom: &Moments, epsilon: f64) -> f64 {
    // b² − a(c − ε) = a(ε − threshold), written to avoid cancellation
    (mom.a * (epsilon - mom.wvar_threshold())).sqrt()
}

/// Risk aversion at which the MV portfolio equals the WVaR portfolio.
pub fn wvar_equivalent_kappa(m: &MarketModel, epsilon: f64) -> Result<f64> {
    let mom = Moments::new(m);
    let threshold = mom.wvar_threshold();
    if !(epsilon > threshold) {
        return Err(Error::EpsilonBelowWvarThreshold { epsilon, threshold });
    }
    Ok(0.5 * wvar_discriminant(&mom, epsilon))
}

/// Mixing weight that reproduces the WVaR portfolio in [`unified`].
pub fn alpha_wvar(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<f64> {
    Ok(kappa / wvar_equivalent_kappa(m, epsilon)?)
}

pub fn alpha_rmv(kappa: f64, rho: f64) -> f64 {
    if rho.is_infinite() {
        1.0
    } else {
        kappa * rho / (1.0 + kappa * rho)
    }
}

/// `x = (α/2) Σ̂ r̄ + Σ⁻¹e/(eᵀΣ⁻¹e)`.
pub fn unified(m: &MarketModel, kappa: f64, alpha: f64) -> Result<Portfolio> {
    check_kappa(kappa)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    let mom = Moments::new(m);
    let x = mom.projected_r() * (alpha / (2.0 * kappa)) + mom.x_min();
    Ok(Portfolio::new(x, PortfolioKind::Unified, None))
}

/// Minimizer of `κ xᵀΣx − r̄ᵀx + √ε ‖x‖²`, i.e. the MV portfolio of
/// `Σ + (√ε/κ) I`.
pub fn l2_mv(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<Portfolio> {
    check_kappa(kappa)?;
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = m.n();
    let ridge = epsilon.sqrt() / kappa;
    let mut cov = m.cov().clone();
    for i in 0..n {
        cov[(i, i)] += ridge;
    }
    let shifted = MarketModel::from_moments(m.mean().clone(), cov)?;
    let mut p = mean_variance(&shifted, kappa)?;
    p.label = PortfolioKind::L2mv;
    Ok(p)
}

pub fn equal_weight(n: usize) -> Portfolio {
    Portfolio::new(DVector::from_element(n, 1.0 / n as f64), PortfolioKind::Ew, None)
}

/// Upper bound on `‖x_L2MV − e/n‖`: `c / (λ_min + √ε/κ)` with
/// `c = ‖r̄‖/(2κ) + λ_max(λ_max − λ_min)/(√n λ_min)`.
pub fn ew_distance_bound(m: &MarketModel, kappa: f64, epsilon: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let c = ew_bound_numerator(m, kappa);
    let ev = m.eigenvalues_desc();
    Ok(c / (ev[ev.len() - 1] + epsilon.sqrt() / kappa))
}

fn ew_bound_numerator(m: &MarketModel, kappa: f64) -> f64 {
    let ev = m.eigenvalues_desc();
    let (l1, ln) = (ev[0], ev[ev.len() - 1]);
    m.mean().norm() / (2.0 * kappa) + l1 * (l1 - ln) / ((m.n() as f64).sqrt() * ln)
}

/// `cond(Σ)(cond(Σ) − 1)/n`, the printed bound on `‖x_MIN − e/n‖`.
pub fn min_ew_bound(m: &MarketModel) -> f64 {
    let cond = m.condition_number();
    cond * (cond - 1.0) / m.n() as f64
}

/// Uncertainty level at which the ridge-regularized portfolio's distance
/// bound equals the distance of the combination `β e/n + (1−β) x_MV` from
/// `e/n`. Returns 0 when the bound is already below target at `ε = 0`, and
/// `+∞` for `β = 1`.
pub fn epsilon_for_combination(m: &MarketModel, kappa: f64, beta: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")));
    }
    if beta == 1.0 {
        return Ok(f64::INFINITY);
    }
    let n = m.n();
    let x_mv = mean_variance(m, kappa)?.x();
    let dist = (x_mv - DVector::from_element(n, 1.0 / n as f64)).norm();
    if dist == 0.0 {
        return Err(Error::InvalidInput("x_MV coincides with the equal-weight portfolio".into()));
    }
    let c = ew_bound_numerator(m, kappa);
    let ev = m.eigenvalues_desc();
    let ln = ev[ev.len() - 1];
    let root = kappa * (c / ((1.0 - beta) * dist) - ln);
    Ok(if root <= 0.0 { 0.0 } else { root * root })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub kappa: f64,
    /// Risk aversion of the MV portfolio that produced the point; equals
    /// `kappa` on the MV frontier and `kappa + 1/rho*` on a robust frontier.
    pub kappa_effective: f64,
    pub variance: f64,
    pub expected_return: f64,
}

fn point(m: &MarketModel, kappa: f64, kappa_effective: f64, x: &DVector<f64>) -> FrontierPoint {
    FrontierPoint { kappa, kappa_effective, variance: m.quad_form(x), expected_return: m.mean().dot(x) }
}

pub fn frontier(m: &MarketModel, kappa_grid: &[f64]) -> Result<Vec<FrontierPoint>> {
    kappa_grid.par_iter().map(|&k| Ok(point(m, k, k, &mean_variance(m, k)?.x()))).collect()
}

pub fn rmv_frontier(m: &MarketModel, kappa_grid: &[f64], epsilon: f64) -> Result<Vec<FrontierPoint>> {
    kappa_grid
        .par_iter()
        .map(|&k| {
            let (p, dec) = rmv_with_decomposition(m, k, epsilon)?;
            Ok(point(m, k, dec.kappa_effective, &p.x()))
        })
        .collect()
}

/// `κ xᵀΣx + √ε √(xᵀΣx) − r̄ᵀx`.
pub fn rmv_objective(m: &MarketModel, kappa: f64, epsilon: f64, x: &DVector<f64>) -> f64 {
    let v = m.quad_form(x);
    kappa * v + epsilon.sqrt() * v.sqrt() - m.mean().dot(x)
}

/// RSMV objective: [`rmv_objective`] plus `φ_i` for every nonzero weight.
pub fn rsmv_objective(m: &MarketModel, kappa: f64, epsilon: f64, phi: &[f64], x: &DVector<f64>) -> f64 {
    let cost: f64 = x.iter().zip(phi).filter(|(v, _)| **v != 0.0).map(|(_, p)| p).sum();
    rmv_objective(m, kappa, epsilon, x) + cost
}

/// `κ xᵀΣx − r̄ᵀx + √ε ‖x‖²`.
pub fn l2_objective(m: &MarketModel, kappa: f64, epsilon: f64, x: &DVector<f64>) -> f64 {
    kappa * m.quad_form(x) - m.mean().dot(x) + epsilon.sqrt() * x.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{synth_market, MeanSpec, SpectrumSpec};
    use nalgebra::DMatrix;

    fn diag_market(d: &[f64], mean: &[f64]) -> MarketModel {
        MarketModel::from_moments(DVector::from_column_slice(mean), DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            .unwrap()
    }

    #[test]
    fn min_variance_identity() {
        let m = diag_market(&[1.0; 4], &[0.0; 4]);
        let p = min_variance(&m);
        for w in &p.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert_eq!(p.value, Some(0.25));
    }

    #[test]
    fn min_variance_diag() {
        let p = min_variance(&diag_market(&[1.0, 2.0], &[0.0, 0.0]));
        assert!((p.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_variance_degenerate_means() {
        let m = synth_market(2, 5, &SpectrumSpec::Uniform { lo: 0.5, hi: 2.0 }, &MeanSpec::Zero).unwrap();
        let x_min = min_variance(&m).x();
        assert!((mean_variance(&m, 1.0).unwrap().x() - &x_min).norm() < 1e-14);
        let shifted = m.with_mean(DVector::from_element(5, 0.3)).unwrap();
        assert!((mean_variance(&shifted, 1.0).unwrap().x() - &x_min).norm() < 1e-12);
    }

    #[test]
    fn kappa_must_be_positive() {
        let m = diag_market(&[1.0, 1.0], &[0.1, 0.2]);
        assert!(matches!(mean_variance(&m, 0.0), Err(Error::NonPositiveKappa(_))));
        assert!(rmv(&m, -1.0, 0.1).is_err());
    }

    #[test]
    fn rmv_limits() {
        let m = synth_market(4, 5, &SpectrumSpec::Uniform { lo: 0.01, hi: 0.05 }, &MeanSpec::Normal { mean: 0.05, sd: 0.05 })
            .unwrap();
        let mv = mean_variance(&m, 1.0).unwrap();
        assert_eq!(rmv(&m, 1.0, 0.0).unwrap().weights, mv.weights);
        let far = rmv(&m, 1.0, 1e12).unwrap().x();
        assert!((far - min_variance(&m).x()).norm() <= 1e-4);
    }

    #[test]
    fn rmv_degenerate_means_flagged() {
        let m = synth_market(5, 4, &SpectrumSpec::Uniform { lo: 0.5, hi: 2.0 }, &MeanSpec::Constant(0.1)).unwrap();
        let (p, dec) = rmv_with_decomposition(&m, 1.0, 0.5).unwrap();
        assert!(dec.mv_equals_min);
        assert!(dec.rho_star.is_infinite());
        assert!((p.x() - min_variance(&m).x()).norm() < 1e-12);
    }

    #[test]
    fn rho_equation_is_decreasing() {
        let m = synth_market(8, 6, &SpectrumSpec::LogUniform { lo: 0.01, hi: 1.0 }, &MeanSpec::Normal { mean: 0.0, sd: 0.3 })
            .unwrap();
        let f = RhoEquation::new(&m, 0.7).unwrap();
        let mut prev = f64::INFINITY;
        for k in -60..=60 {
            let rho = 10f64.powf(k as f64 / 10.0);
            let v = f.value(rho);
            assert!(v < prev, "f not decreasing at rho = {rho}");
            prev = v;
        }
    }

    #[test]
    fn wvar_zero_mean() {
        let m = synth_market(6, 4, &SpectrumSpec::Uniform { lo: 0.5, hi: 2.0 }, &MeanSpec::Zero).unwrap();
        let p = wvar(&m, 0.3).unwrap();
        let mom = Moments::new(&m);
        assert!((p.x() - mom.x_min()).norm() < 1e-14);
        assert!((p.value.unwrap() - (0.3 / mom.a).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn wvar_threshold_error_carries_value() {
        let m = diag_market(&[1.0, 1.0], &[0.0, 1.0]);
        // threshold = c − b²/a = 1 − 1/2
        match wvar(&m, 0.4) {
            Err(Error::EpsilonBelowWvarThreshold { threshold, .. }) => assert!((threshold - 0.5).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unified_endpoints() {
        let m =
            synth_market(12, 5, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.1 }).unwrap();
        let u0 = unified(&m, 2.0, 0.0).unwrap().x();
        assert!((u0 - min_variance(&m).x()).norm() < 1e-14);
        let u1 = unified(&m, 2.0, 1.0).unwrap().x();
        assert!((u1 - mean_variance(&m, 2.0).unwrap().x()).norm() < 1e-14);
    }

    #[test]
    fn l2_mv_without_uncertainty_is_mv() {
        let m =
            synth_market(13, 5, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.1 }).unwrap();
        let a = l2_mv(&m, 1.5, 0.0).unwrap().x();
        let b = mean_variance(&m, 1.5).unwrap().x();
        assert!((a - b).norm() < 1e-13);
    }

    #[test]
    fn l2_mv_huge_uncertainty_tends_to_equal_weight() {
        let m =
            synth_market(14, 6, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.1 }).unwrap();
        let x = l2_mv(&m, 1.0, 1e16).unwrap().x();
        assert!((x - equal_weight(6).x()).norm() <= 1e-3);
    }

    #[test]
    fn ew_bound_identity_cov() {
        let m = diag_market(&[1.0; 3], &[0.1, 0.2, 0.3]);
        let (k, e) = (2.0f64, 0.25f64);
        let expected = m.mean().norm() / (2.0 * k * (1.0 + e.sqrt() / k));
        assert!((ew_distance_bound(&m, k, e).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ew_bound_decreasing_in_epsilon() {
        let m =
            synth_market(15, 5, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.1 }).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let b = ew_distance_bound(&m, 1.0, k as f64 * 0.5).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn min_ew_bound_cases() {
        let m = diag_market(&[1.0; 5], &[0.0; 5]);
        assert_eq!(min_ew_bound(&m), 0.0);
        let x = min_variance(&m).x();
        assert!((x - equal_weight(5).x()).norm() < 1e-15);
        let m2 = diag_market(&[2.0, 1.0, 1.5, 1.2], &[0.0; 4]);
        assert!((min_ew_bound(&m2) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn min_ew_bound_fails_for_mild_conditioning_in_many_assets() {
        // half the variances 1, half c: the distance is (c-1)/(10(c+1)) for
        // n = 100, above c(c-1)/100 whenever c(c+1) < 10
        let mut var = vec![1.0; 50];
        var.extend(vec![2.0; 50]);
        let m = diag_market(&var, &[0.0; 100]);
        let d = (min_variance(&m).x() - equal_weight(100).x()).norm();
        assert!((d - 1.0 / 30.0).abs() < 1e-14);
        assert!((min_ew_bound(&m) - 0.02).abs() < 1e-14);
        assert!(d > min_ew_bound(&m));
    }

    #[test]
    fn combination_epsilon_edges() {
        let m =
            synth_market(16, 5, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.3 }).unwrap();
        assert!(epsilon_for_combination(&m, 1.0, 1.0).unwrap().is_infinite());
        let e1 = epsilon_for_combination(&m, 1.0, 0.999).unwrap();
        let e2 = epsilon_for_combination(&m, 1.0, 0.999999).unwrap();
        assert!(e2 > e1 && e2 > 1e6);
    }

    #[test]
    fn single_kappa_frontier_point() {
        let m =
            synth_market(17, 3, &SpectrumSpec::Uniform { lo: 0.1, hi: 1.0 }, &MeanSpec::Normal { mean: 0.1, sd: 0.3 }).unwrap();
        let pts = frontier(&m, &[1.3]).unwrap();
        let x = mean_variance(&m, 1.3).unwrap().x();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].variance - m.quad_form(&x)).abs() < 1e-15);
    }

    #[test]
    fn support_threshold_is_relative() {
        assert_eq!(support_of(&[1.0, 1e-9, -0.5, 0.0]), vec![0, 2]);
        assert!(support_of(&[0.0, 0.0]).is_empty());
    }
}
