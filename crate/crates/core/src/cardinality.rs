//! How many assets to trade in an equicorrelated market, and empirical
//! cardinality surfaces over `(ε, φ)` grids.
//!
//! With `Σ = σ²((1 − ρ)I + ρeeᵀ)`, a uniform cost `φ` and the ridge robust
//! term, the optimal value on a support `S` has a closed form (`v_set`). Using
//! the `s` largest returns gives the univariate bound `v_upper(s)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::rmv_objective;
use crate::dc::{build_problem, solve_accelerated, solve_pdca, SolverConfig};
use crate::exact::{solve_exact, RobustTerm};
use crate::market::MarketModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardScenario {
    pub kappa: f64,
    pub sigma: f64,
    pub rho: f64,
    /// `√ε / (κσ²)`
    pub delta: f64,
    pub phi: f64,
    /// Descending.
    pub sorted_returns: Vec<f64>,
}

impl CardScenario {
    pub fn new(kappa: f64, sigma: f64, rho: f64, delta: f64, phi: f64, returns: &[f64]) -> Result<Self> {
        let n = returns.len();
        if n == 0 {
            return Err(Error::InvalidInput("no returns".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::NonPositiveKappa(kappa));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        let lo = if n > 1 { -1.0 / (n as f64 - 1.0) } else { f64::NEG_INFINITY };
        if !(rho > lo && rho < 1.0) {
            return Err(Error::InvalidInput(format!("rho = {rho} outside ({lo}, 1)")));
        }
        if !(delta >= 0.0) || !(phi >= 0.0) || !delta.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidInput("delta and phi must be finite and >= 0".into()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("returns must be finite".into()));
        }
        let mut sorted_returns = returns.to_vec();
        sorted_returns.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { kappa, sigma, rho, delta, phi, sorted_returns })
    }

    /// Same as [`CardScenario::new`] with `δ` derived from the uncertainty
    /// level `ε`.
    pub fn from_epsilon(kappa: f64, sigma: f64, rho: f64, epsilon: f64, phi: f64, returns: &[f64]) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Self::new(kappa, sigma, rho, epsilon.sqrt() / (kappa * sigma * sigma), phi, returns)
    }

    pub fn n(&self) -> usize {
        self.sorted_returns.len()
    }

    pub fn epsilon(&self) -> f64 {
        (self.delta * self.kappa * self.sigma * self.sigma).powi(2)
    }

    fn ks2(&self) -> f64 {
        self.kappa * self.sigma * self.sigma
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    /// Sum of the `k` largest returns.
    fn top_sum(&self, k: usize) -> f64 {
        self.sorted_returns[..k].iter().sum()
    }

    /// Optimal value on the support `support`, `returns` indexed by asset.
    pub fn v_set(&self, support: &[usize], returns: &[f64]) -> f64 {
        let s = support.len() as f64;
        let ks2 = self.ks2();
        let (sum, sq) = support.iter().fold((0.0, 0.0), |(a, b), &i| (a + returns[i], b + returns[i] * returns[i]));
        ks2 * (1.0 - self.rho + self.rho * s + self.delta) / s
            + (sum * sum - s * sq) / (4.0 * ks2 * (1.0 - self.rho + self.delta) * s)
            - sum / s
            + self.phi * s
    }

    /// Objective of the equal-weight portfolio on the `s` best assets.
    pub fn v_upper(&self, s: usize) -> f64 {
        assert!(s >= 1 && s <= self.n(), "s = {s} outside 1..={}", self.n());
        let sf = s as f64;
        self.ks2() * (1.0 - self.rho + self.rho * sf + self.delta) / sf - self.top_sum(s) / sf + self.phi * sf
    }

    /// Minimizer of `v_upper`; ties go to the smaller count.
    pub fn best_s(&self) -> usize {
        let mut best = 1;
        let mut value = self.v_upper(1);
        for s in 2..=self.n() {
            let v = self.v_upper(s);
            if v < value {
                best = s;
                value = v;
            }
        }
        best
    }

    /// Bounds on an increase `Δ` of `δ` that keep or change `s*`.
    ///
    /// An empty minimum over `l < s*` yields `B₋ = −∞` and one over `l > s*`
    /// yields `B₊ = +∞`.
    pub fn transition_bounds(&self, s_star: usize) -> TransitionBounds {
        let n = self.n();
        assert!(s_star >= 1 && s_star <= n);
        let base = self.rho - self.delta - 1.0;
        let ks2 = self.ks2();
        let s = s_star as f64;
        let ss = self.top_sum(s_star);
        let lower = (1..s_star)
            .map(|l| {
                let lf = l as f64;
                (lf * ss - s * self.top_sum(l)) / (s - lf) - self.phi * s * lf
            })
            .fold(f64::INFINITY, f64::min);
        let upper = (s_star + 1..=n)
            .map(|l| {
                let lf = l as f64;
                (lf * ss - s * self.top_sum(l)) / (lf - s) + self.phi * s * lf
            })
            .fold(f64::INFINITY, f64::min);
        TransitionBounds { s_star, b_minus: base - lower / ks2, b_plus: base + upper / ks2 }
    }

    pub fn classify_delta(&self, s_star: usize, increment: f64) -> ConditionClass {
        self.transition_bounds(s_star).classify(increment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionBounds {
    pub s_star: usize,
    pub b_minus: f64,
    pub b_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionClass {
    /// The optimal count shrinks.
    C1Shrink,
    /// The optimal count is unchanged.
    C2Same,
    /// The optimal count grows.
    C3Grow,
    Indeterminate,
}

impl TransitionBounds {
    /// First of the three interval tests that holds.
    pub fn classify(&self, increment: f64) -> ConditionClass {
        let d = increment;
        if d > 0.0 && d <= self.b_minus.min(self.b_plus) {
            ConditionClass::C1Shrink
        } else if self.b_minus.max(0.0) <= d && d <= self.b_plus {
            ConditionClass::C2Same
        } else if d > 0.0 && d >= self.b_minus.max(self.b_plus).max(0.0) {
            ConditionClass::C3Grow
        } else {
            ConditionClass::Indeterminate
        }
    }
}

/// Bounds for linearly spaced returns `r̄ − (i − 1)·step`.
pub fn linear_returns_bounds(scenario: &CardScenario, s_star: usize, step: f64) -> TransitionBounds {
    let s = s_star as f64;
    let base = scenario.rho - scenario.delta - 1.0;
    let slope = (step / 2.0 + scenario.phi) / scenario.ks2();
    let b_minus = if s_star == 1 { f64::NEG_INFINITY } else { base + s * (s - 1.0) * slope };
    let b_plus = if s_star == scenario.n() { f64::INFINITY } else { base + s * (s + 1.0) * slope };
    TransitionBounds { s_star, b_minus, b_plus }
}

/// `r̄, r̄ − step, …, r̄ − (n − 1) step`
pub fn linear_returns(top: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| top - step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceBackend {
    Exact,
    Pdca,
    AcPdca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub epsilon: f64,
    pub phi: f64,
    pub cardinality: usize,
    /// Objective with the ellipsoidal robust term and exact cost count.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub kappa: f64,
    pub backend: SurfaceBackend,
    pub epsilon_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    /// Row-major: `cells[i * phi_grid.len() + j]` is `(ε_i, φ_j)`.
    pub cells: Vec<SurfaceCell>,
}

impl Surface {
    pub fn cell(&self, i: usize, j: usize) -> &SurfaceCell {
        &self.cells[i * self.phi_grid.len() + j]
    }

    /// Cardinalities along `ε` for the `j`-th cost level.
    pub fn epsilon_slice(&self, j: usize) -> Vec<usize> {
        (0..self.epsilon_grid.len()).map(|i| self.cell(i, j).cardinality).collect()
    }

    /// Cardinality matrix, rows indexed by `ε`.
    pub fn grid(&self) -> Vec<Vec<usize>> {
        (0..self.epsilon_grid.len()).map(|i| (0..self.phi_grid.len()).map(|j| self.cell(i, j).cardinality).collect()).collect()
    }
}

/// True when the sequence strictly falls somewhere and strictly rises later.
pub fn dips_then_rises(counts: &[usize]) -> bool {
    let mut high = 0usize;
    let mut low: Option<usize> = None;
    for &c in counts {
        if let Some(l) = low {
            if c > l {
                return true;
            }
        }
        if c < high {
            low = Some(low.map_or(c, |l| l.min(c)));
        }
        high = high.max(c);
    }
    false
}

fn solve_cell(
    m: &MarketModel,
    kappa: f64,
    epsilon: f64,
    phi: f64,
    backend: SurfaceBackend,
    cap: Option<f64>,
    config: &SolverConfig,
) -> Result<SurfaceCell> {
    let costs = vec![phi; m.n()];
    let (support, x) = match backend {
        SurfaceBackend::Exact => {
            let s = solve_exact(m, kappa, epsilon, &costs, None, RobustTerm::Ellipsoid)?;
            let x = s.x();
            (s.support, x)
        }
        SurfaceBackend::Pdca | SurfaceBackend::AcPdca => {
            let prob = build_problem(m, kappa, epsilon, &costs, cap)?;
            let r = if backend == SurfaceBackend::Pdca {
                solve_pdca(&prob, config, None)?
            } else {
                solve_accelerated(&prob, config)?
            };
            let x = r.x();
            (r.portfolio.support, x)
        }
    };
    let objective = rmv_objective(m, kappa, epsilon, &x) + phi * support.len() as f64;
    Ok(SurfaceCell { epsilon, phi, cardinality: support.len(), objective })
}

/// Cardinality of the RSMV solution on every `(ε, φ)` cell. `cap` is the
/// capped-l1 `t` for the DC backends; `None` picks it per cell.
pub fn cardinality_surface(
    m: &MarketModel,
    kappa: f64,
    epsilon_grid: &[f64],
    phi_grid: &[f64],
    backend: SurfaceBackend,
    cap: Option<f64>,
    config: &SolverConfig,
) -> Result<Surface> {
    if epsilon_grid.is_empty() || phi_grid.is_empty() {
        return Err(Error::InvalidInput("grids must be nonempty".into()));
    }
    if epsilon_grid.iter().chain(phi_grid).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("grid values must be finite".into()));
    }
    let pairs: Vec<(f64, f64)> = epsilon_grid.iter().flat_map(|&e| phi_grid.iter().map(move |&p| (e, p))).collect();
    let cells =
        pairs.into_par_iter().map(|(e, p)| solve_cell(m, kappa, e, p, backend, cap, config)).collect::<Result<Vec<_>>>()?;
    Ok(Surface { kappa, backend, epsilon_grid: epsilon_grid.to_vec(), phi_grid: phi_grid.to_vec(), cells })
}
