use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub mu: f64,
    pub eta_bar: f64,
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub beta: f64,
    pub max_newton: usize,
    pub max_linesearch: usize,
    /// Stop once `‖∇h‖` falls below this, whatever the inner criterion says.
    pub grad_floor: f64,
    /// Accept the first iterate with `‖δ‖ ≤ σ/4 ‖x_next − xᵏ‖`; when false the
    /// subproblem is solved down to `grad_floor`.
    pub inner_criterion: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            mu: 1e-4,
            eta_bar: 0.5,
            tau: 0.5,
            tau1: 0.1,
            tau2: 0.1,
            beta: 0.5,
            max_newton: 200,
            max_linesearch: 50,
            grad_floor: 1e-12,
            inner_criterion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    /// `None` means twice the number of assets.
    pub max_iter: Option<usize>,
    /// Lower limit on the residual target `min(η̄, ‖∇h‖^{1+τ})`.
    pub base_tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { max_iter: None, base_tol: 1e-15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial proximal weight, in units of `‖W‖₂² = λ_max(Σ)`.
    pub sigma0: f64,
    /// The capped-l1 solve multiplies `σ` by `1 + (γ − 1)/(k + 1)²` after
    /// outer step `k`.
    pub gamma: f64,
    /// Cap on `σ`, in units of `‖W‖₂²`.
    pub sigma_max: f64,
    /// The convex l1 solve divides `σ` by `γ` down to this floor (units of
    /// `‖W‖₂²`).
    pub ppa_sigma_floor: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub newton: NewtonConfig,
    pub cg: CgConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            gamma: 1.25,
            sigma_max: 1e8,
            ppa_sigma_floor: 1e-6,
            outer_tol: 1e-5,
            max_outer: 1000,
            newton: NewtonConfig::default(),
            cg: CgConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.outer_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("solver config: {what}")));
        let nw = &self.newton;
        if !(self.sigma0 > 0.0) {
            return bad("sigma0 must be > 0");
        }
        if !(self.gamma > 1.0) {
            return bad("gamma must be > 1");
        }
        if !(self.sigma_max >= self.sigma0) {
            return bad("sigma_max must be >= sigma0");
        }
        if !(self.ppa_sigma_floor > 0.0) {
            return bad("ppa_sigma_floor must be > 0");
        }
        if !(self.outer_tol > 0.0) {
            return bad("outer_tol must be > 0");
        }
        if !(nw.mu > 0.0 && nw.mu < 0.5) {
            return bad("mu must lie in (0, 1/2)");
        }
        if !(nw.eta_bar > 0.0 && nw.eta_bar < 1.0) {
            return bad("eta_bar must lie in (0, 1)");
        }
        if !(nw.tau > 0.0 && nw.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        for (name, v) in [("tau1", nw.tau1), ("tau2", nw.tau2), ("beta", nw.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(&format!("{name} must lie in (0, 1)"));
            }
        }
        if nw.max_newton == 0 || nw.max_linesearch == 0 || self.max_outer == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}
