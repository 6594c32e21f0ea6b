//! Exact RSMV solutions for small universes by enumerating supports.
//!
//! On a fixed support the problem is a robust MV problem on the submarket
//! plus a constant, so every support is solved in closed form.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{l2_mv, l2_objective, rmv, rmv_objective};
use crate::market::MarketModel;
use crate::{Error, Result};

/// Largest universe enumerated without a cardinality limit.
pub const MAX_ASSETS: usize = 20;
/// Largest number of supports enumerated.
pub const MAX_SUPPORTS: u128 = 2_000_000;

/// Robust term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustTerm {
    /// `√ε √(xᵀΣx)`, the ellipsoidal worst case.
    #[default]
    Ellipsoid,
    /// `√ε ‖x‖²`, the ridge variant.
    RidgeSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSolution {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    /// `κ xᵀΣx + robust term − r̄ᵀx + Σ_{i∈S} φ_i`
    pub objective: f64,
}

impl SupportSolution {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn cardinality(&self) -> usize {
        self.support.len()
    }
}

fn check_inputs(m: &MarketModel, kappa: f64, epsilon: f64, phi: &[f64]) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::NonPositiveKappa(kappa));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if phi.len() != m.n() {
        return Err(Error::InvalidInput(format!("phi has {} entries for {} assets", phi.len(), m.n())));
    }
    if let Some((index, &value)) = phi.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::NonPositivePhi { index, value });
    }
    Ok(())
}

/// Optimal portfolio with support contained in `support`, embedded in `n`
/// dimensions, and its objective including `Σ_{i∈S} φ_i`.
pub fn solve_support(
    m: &MarketModel,
    kappa: f64,
    epsilon: f64,
    phi: &[f64],
    support: &[usize],
    robust: RobustTerm,
) -> Result<SupportSolution> {
    if support.is_empty() {
        return Err(Error::InvalidInput("support must be nonempty".into()));
    }
    let sub = m.submarket(support)?;
    let (xs, value) = match robust {
        RobustTerm::Ellipsoid => {
            let x = rmv(&sub, kappa, epsilon)?.x();
            let v = rmv_objective(&sub, kappa, epsilon, &x);
            (x, v)
        }
        RobustTerm::RidgeSquared => {
            let x = l2_mv(&sub, kappa, epsilon)?.x();
            let v = l2_objective(&sub, kappa, epsilon, &x);
            (x, v)
        }
    };
    let mut weights = vec![0.0; m.n()];
    for (k, &i) in support.iter().enumerate() {
        weights[i] = xs[k];
    }
    let cost: f64 = support.iter().map(|&i| phi[i]).sum();
    Ok(SupportSolution { support: support.to_vec(), weights, objective: value + cost })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of nonempty supports of size at most `max_card`.
pub fn support_count(n: usize, max_card: Option<usize>) -> u128 {
    let top = max_card.unwrap_or(n).min(n);
    (1..=top).map(|k| binomial(n, k)).sum()
}

/// Supports of size `k` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `a` beats `b`: lower objective, then smaller support, then lexicographic.
fn better(a: &SupportSolution, b: &SupportSolution) -> bool {
    let tol = 1e-12 * a.objective.abs().max(b.objective.abs()).max(1e-300);
    if (a.objective - b.objective).abs() > tol {
        return a.objective < b.objective;
    }
    if a.support.len() != b.support.len() {
        return a.support.len() < b.support.len();
    }
    a.support < b.support
}

/// Global minimizer over all nonempty supports (of size at most `max_card`).
pub fn solve_exact(
    m: &MarketModel,
    kappa: f64,
    epsilon: f64,
    phi: &[f64],
    max_card: Option<usize>,
    robust: RobustTerm,
) -> Result<SupportSolution> {
    check_inputs(m, kappa, epsilon, phi)?;
    let n = m.n();
    let count = support_count(n, max_card);
    let limit = if max_card.is_none() && n > MAX_ASSETS { support_count(MAX_ASSETS, None) } else { MAX_SUPPORTS };
    if count > limit {
        return Err(Error::EnumerationBudget { count, limit });
    }
    let top = max_card.unwrap_or(n).min(n);
    let mut best: Option<SupportSolution> = None;
    for k in 1..=top {
        let candidate = combinations(n, k)
            .into_par_iter()
            .map(|s| solve_support(m, kappa, epsilon, phi, &s, robust))
            .try_reduce_with(|a, b| Ok(if better(&b, &a) { b } else { a }));
        if let Some(c) = candidate {
            let c = c?;
            if best.as_ref().is_none_or(|b| better(&c, b)) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no supports to enumerate".into()))
}

/// `(candidate − exact) / max(|exact|, 1e-12)`.
pub fn relative_gap(candidate: f64, exact: f64) -> f64 {
    (candidate - exact) / exact.abs().max(1e-12)
}
