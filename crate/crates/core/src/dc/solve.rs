use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::SolverConfig;
use super::newton::{solve_subproblem, InnerStatus, NewtonState, OuterIterate};
use super::problem::{embed, DcProblem};
use crate::closed_form::{support_of, Portfolio, PortfolioKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Model objective at the new iterate (capped-l1 or l1).
    pub f: f64,
    /// `‖x_{k+1} − x_k‖ / (1 + ‖x_k‖)`
    pub rel_step: f64,
    pub sigma: f64,
    /// `f_k − f_{k+1} − σ_k/4 ‖x_{k+1} − x_k‖²`; nonnegative when the
    /// sufficient-decrease inequality holds.
    pub descent_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub portfolio: Portfolio,
    /// Scaled objective with the exact indicator term.
    pub rsmv_objective: f64,
    /// Capped-l1 surrogate objective.
    pub dc_objective: f64,
    /// `2κ · rsmv_objective`, the objective in the original units.
    pub model_objective: f64,
    pub cardinality: usize,
    pub outer_iterations: usize,
    pub newton_iterations_total: usize,
    pub cg_iterations_total: usize,
    /// Seconds.
    pub wall_time: f64,
    pub status: SolveStatus,
    pub trace: Vec<TraceEntry>,
    /// Iterations where the sufficient-decrease margin fell below `−1e-10`.
    pub descent_violations: usize,
    /// `‖x_{k+1} − x*‖ / ‖x_k − x*‖` over the last outer steps, `x*` the final
    /// iterate.
    pub tail_ratios: Vec<f64>,
    /// How the starting point was obtained.
    pub init: String,
    pub t: f64,
    pub lam: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SolveReport {
    pub fn x(&self) -> DVector<f64> {
        self.portfolio.x()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Dc,
    L1,
}

const TAIL: usize = 5;

/// `γ_k = 1 + (γ − 1)/(k + 1)²`: every factor exceeds one and their product
/// converges, so `σ_k` increases to a finite limit below `σ₀ e^{(γ−1)π²/6}`.
fn growth(gamma: f64, k: usize) -> f64 {
    1.0 + (gamma - 1.0) / ((k + 1) as f64).powi(2)
}

fn check_start(x0: &DVector<f64>, n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(Error::InvalidInput(format!("start has {} entries for {n} assets", x0.len())));
    }
    if (x0.sum() - 1.0).abs() > 1e-10 || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("start violates the budget: eᵀx = {}", x0.sum())));
    }
    Ok(())
}

struct Totals {
    newton: usize,
    cg: usize,
}

fn run(
    prob: &DcProblem,
    config: &SolverConfig,
    x0: DVector<f64>,
    model: Model,
    init: &str,
    started: Instant,
) -> Result<SolveReport> {
    config.validate()?;
    check_start(&x0, prob.n())?;
    let make = |x: DVector<f64>, sigma: f64| match model {
        Model::Dc => OuterIterate::dc(prob, x, sigma),
        Model::L1 => OuterIterate::l1(prob, x, sigma),
    };
    let unit = prob.w_norm() * prob.w_norm();
    let sigma_max = config.sigma_max * unit;
    let mut outer = make(x0, config.sigma0 * unit);
    let mut totals = Totals { newton: 0, cg: 0 };
    let mut trace = Vec::new();
    let mut history: Vec<DVector<f64>> = vec![outer.x.clone()];
    let mut warm: Option<NewtonState> = None;
    let mut status = SolveStatus::MaxIter;
    let mut failure = None;
    let mut descent_violations = 0;

    for k in 0..config.max_outer {
        let mut out = solve_subproblem(&outer, prob, config, warm.as_ref());
        totals.newton += out.newton_iterations;
        totals.cg += out.cg_iterations;
        if out.status == InnerStatus::NotNormalizable {
            // one retry with a stronger proximal term
            let bumped = outer.sigma * config.gamma;
            outer = make(outer.x.clone(), bumped);
            out = solve_subproblem(&outer, prob, config, None);
            totals.newton += out.newton_iterations;
            totals.cg += out.cg_iterations;
        }
        let x_next = match (&out.x_next, out.status) {
            (Some(x), s) if s != InnerStatus::NotNormalizable => x.clone(),
            _ => {
                status = SolveStatus::NumericalFailure;
                failure = Some("recovered primal point sums to zero".into());
                break;
            }
        };
        if out.status == InnerStatus::LineSearchFailed {
            status = SolveStatus::NumericalFailure;
            failure = Some(format!("line search failed (‖∇h‖ = {:.3e}, ‖δ‖ = {:.3e})", out.state.grad_norm, out.delta_norm));
            break;
        }
        if let Some(radius) = prob.radius {
            let norm = x_next.norm();
            if norm > radius {
                return Err(Error::CapRadiusExceeded { radius, norm });
            }
        }
        let step = (&x_next - &outer.x).norm();
        let rel_step = step / (1.0 + outer.x.norm());
        let next = make(x_next, outer.sigma);
        let margin = outer.f_value - next.f_value - 0.25 * outer.sigma * step * step;
        if margin < -1e-10 {
            descent_violations += 1;
        }
        trace.push(TraceEntry { f: next.f_value, rel_step, sigma: outer.sigma, descent_margin: margin });
        history.push(next.x.clone());
        if history.len() > TAIL + 2 {
            history.remove(0);
        }
        warm = Some(out.state);
        outer = next;
        if rel_step <= config.outer_tol {
            status = SolveStatus::Converged;
            break;
        }
        outer.sigma = match model {
            Model::Dc => (outer.sigma * growth(config.gamma, k)).min(sigma_max),
            Model::L1 => (outer.sigma / config.gamma).max(config.ppa_sigma_floor * unit),
        };
    }

    let x = outer.x;
    let tail_ratios = {
        let last = history.last().unwrap();
        history
            .windows(2)
            .filter_map(|w| {
                let a = (&w[0] - last).norm();
                let b = (&w[1] - last).norm();
                (a > 0.0 && b > 0.0).then(|| b / a)
            })
            .collect()
    };
    let method = match model {
        Model::Dc => "sn-pdca",
        Model::L1 => "l1mv",
    };
    Ok(report(prob, x, method, init, trace, totals, status, failure, descent_violations, tail_ratios, started))
}

#[allow(clippy::too_many_arguments)]
fn report(
    prob: &DcProblem,
    x: DVector<f64>,
    method: &str,
    init: &str,
    trace: Vec<TraceEntry>,
    totals: Totals,
    status: SolveStatus,
    failure: Option<String>,
    descent_violations: usize,
    tail_ratios: Vec<f64>,
    started: Instant,
) -> SolveReport {
    let rsmv = prob.rsmv_objective(&x);
    let cardinality = support_of(x.as_slice()).len();
    SolveReport {
        method: method.into(),
        rsmv_objective: rsmv,
        dc_objective: prob.dc_objective(&x),
        model_objective: 2.0 * prob.kappa * rsmv,
        cardinality,
        outer_iterations: trace.len(),
        newton_iterations_total: totals.newton,
        cg_iterations_total: totals.cg,
        wall_time: started.elapsed().as_secs_f64(),
        status,
        trace,
        descent_violations,
        tail_ratios,
        init: init.into(),
        t: prob.t,
        lam: prob.lam,
        failure,
        portfolio: Portfolio::new(x, PortfolioKind::Solver, None),
    }
}

fn equal_weight(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

/// Proximal DC algorithm on the capped-l1 model. Without `x0` the l1 model
/// solution is used as the start, falling back to equal weights.
pub fn solve_pdca(prob: &DcProblem, config: &SolverConfig, x0: Option<&DVector<f64>>) -> Result<SolveReport> {
    let started = Instant::now();
    let (start, init, pre) = match x0 {
        Some(x) => (x.clone(), "given", None),
        None => {
            let l1 = solve_l1mv(prob, config)?;
            if l1.status == SolveStatus::NumericalFailure {
                (equal_weight(prob.n()), "equal_weight", Some(l1))
            } else {
                (l1.x(), "l1mv", Some(l1))
            }
        }
    };
    let mut rep = run(prob, config, start, Model::Dc, init, started)?;
    if let Some(pre) = pre {
        rep.newton_iterations_total += pre.newton_iterations_total;
        rep.cg_iterations_total += pre.cg_iterations_total;
    }
    Ok(rep)
}

/// Proximal point method on the convex l1 model, started at equal weights.
pub fn solve_l1mv(prob: &DcProblem, config: &SolverConfig) -> Result<SolveReport> {
    run(prob, config, equal_weight(prob.n()), Model::L1, "equal_weight", Instant::now())
}

/// [`solve_l1mv`] from a given feasible start.
pub fn solve_l1mv_from(prob: &DcProblem, config: &SolverConfig, x0: &DVector<f64>) -> Result<SolveReport> {
    run(prob, config, x0.clone(), Model::L1, "given", Instant::now())
}

/// Loose l1 solve, then the capped-l1 solve restricted to the l1 support,
/// re-embedded into the full asset set.
pub fn solve_accelerated(prob: &DcProblem, config: &SolverConfig) -> Result<SolveReport> {
    let started = Instant::now();
    let l1 = solve_l1mv(prob, &config.with_tol(1e-3))?;
    let support = support_of(&l1.portfolio.weights);
    if support.is_empty() || l1.status == SolveStatus::NumericalFailure {
        let mut rep = solve_pdca(prob, config, None)?;
        rep.method = "ac-sn-pdca".into();
        rep.wall_time = started.elapsed().as_secs_f64();
        return Ok(rep);
    }
    let sub = prob.restrict(&support)?;
    let xs = DVector::from_iterator(support.len(), support.iter().map(|&i| l1.portfolio.weights[i]));
    let sum = xs.sum();
    if sum.abs() < 1e-8 {
        let mut rep = solve_pdca(prob, config, None)?;
        rep.method = "ac-sn-pdca".into();
        return Ok(rep);
    }
    let reduced = solve_pdca(&sub, config, Some(&(xs / sum)))?;
    let x = embed(&support, &reduced.x(), prob.n());
    let totals = Totals {
        newton: reduced.newton_iterations_total + l1.newton_iterations_total,
        cg: reduced.cg_iterations_total + l1.cg_iterations_total,
    };
    let rep = report(
        prob,
        x,
        "ac-sn-pdca",
        "l1mv-support",
        reduced.trace,
        totals,
        reduced.status,
        reduced.failure,
        reduced.descent_violations,
        reduced.tail_ratios,
        started,
    );
    Ok(rep)
}
