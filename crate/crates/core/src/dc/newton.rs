//! Dual semismooth Newton-CG solver for one proximal subproblem
//!
//! `min_{eᵀx=1} h(x) + p_t(x) − ⟨q, x − xᵏ⟩ + σ/2‖x − xᵏ‖²`.
//!
//! The dual variables are `y` (for `u = Wx`) and `v` (for `eᵀx = 1`); the
//! primal point is recovered as `prox_{p_t/σ}(x̃(y, v))` with
//! `x̃ = xᵏ − (Wᵀy + ev − q − r̃)/σ`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::SolverConfig;
use super::problem::{normal_cone_residual, q_select, DcProblem};
use crate::prox::{jac_prox_scaled_l2, prox_scaled_l2, prox_weighted_l1, L2JacobianElement};

/// Outer iterate `xᵏ` with its linearization `q ∈ Q(xᵏ)` and proximal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterIterate {
    pub x: DVector<f64>,
    pub q: DVector<f64>,
    pub sigma: f64,
    pub f_value: f64,
}

impl OuterIterate {
    /// Iterate of the capped-l1 model: `q` from the `Q(x)` rule.
    pub fn dc(prob: &DcProblem, x: DVector<f64>, sigma: f64) -> Self {
        Self { q: q_select(&x, &prob.phi_tilde, prob.t), f_value: prob.dc_objective(&x), x, sigma }
    }

    /// Iterate of the convex l1 model: no linearization.
    pub fn l1(prob: &DcProblem, x: DVector<f64>, sigma: f64) -> Self {
        Self { q: DVector::zeros(x.len()), f_value: prob.l1_objective(&x), x, sigma }
    }

    /// Linear coefficient of the subproblem: `q + r̃`.
    fn linear(&self, prob: &DcProblem) -> DVector<f64> {
        &self.q + &prob.r_tilde
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonState {
    pub y: DVector<f64>,
    pub v: f64,
    pub grad_norm: f64,
}

/// Everything computed from one dual point.
#[derive(Debug, Clone)]
pub(crate) struct DualEval {
    pub h: f64,
    pub grad: DVector<f64>,
    /// `x̃(y, v)`
    pub z: DVector<f64>,
    /// `prox_{p_t/σ}(x̃)`
    pub p: DVector<f64>,
}

pub(crate) fn evaluate(prob: &DcProblem, outer: &OuterIterate, y: &DVector<f64>, v: f64) -> DualEval {
    let n = prob.n();
    let sigma = outer.sigma;
    let weights = prob.p_weights();
    let z = &outer.x - (prob.wt_mul(y) + DVector::from_element(n, v) - outer.linear(prob)) / sigma;
    let u = prox_scaled_l2(y, prob.lam).point;
    let p = prox_weighted_l1(&z, &(&weights / sigma)).point;
    let pt: f64 = p.iter().zip(weights.iter()).map(|(a, w)| w * a.abs()).sum();
    // −M_λ(y) + ½‖y‖² and σ(½‖z‖² − M_{p/σ}(z)) in cancellation-free form
    let h = u.dot(y) - 0.5 * u.norm_squared() - prob.lam * u.norm() + v + sigma * (p.dot(&z) - 0.5 * p.norm_squared()) - pt;
    let mut grad = DVector::zeros(n + 1);
    grad.rows_mut(0, n).copy_from(&(&u - prob.w_mul(&p)));
    grad[n] = 1.0 - p.sum();
    DualEval { h, grad, z, p }
}

/// `h_k(y, v)`.
pub fn dual_objective(state: &NewtonState, outer: &OuterIterate, prob: &DcProblem) -> f64 {
    evaluate(prob, outer, &state.y, state.v).h
}

/// `∇h_k(y, v)`; the last entry is the `v` component.
pub fn dual_gradient(state: &NewtonState, outer: &OuterIterate, prob: &DcProblem) -> DVector<f64> {
    evaluate(prob, outer, &state.y, state.v).grad
}

/// An element of the generalized Hessian of `h_k`,
/// `[[U + WVWᵀ/σ, WVe/σ], [eᵀVWᵀ/σ, eᵀVe/σ]]`, applied matrix-free. `V` is a
/// 0/1 diagonal, so a product costs `O(n·|active|)`.
pub struct NewtonOperator<'a> {
    prob: &'a DcProblem,
    u: L2JacobianElement,
    active: Vec<usize>,
    sigma: f64,
}

impl<'a> NewtonOperator<'a> {
    pub fn new(prob: &'a DcProblem, outer: &OuterIterate, state: &NewtonState) -> Self {
        let ev = evaluate(prob, outer, &state.y, state.v);
        Self::from_eval(prob, outer, &state.y, &ev)
    }

    fn from_eval(prob: &'a DcProblem, outer: &OuterIterate, y: &DVector<f64>, ev: &DualEval) -> Self {
        let thresholds = prob.p_weights() / outer.sigma;
        let active = (0..prob.n()).filter(|&i| ev.z[i].abs() >= thresholds[i]).collect();
        Self { prob, u: jac_prox_scaled_l2(y, prob.lam), active, sigma: outer.sigma }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = self.prob.n();
        let dy = d.rows(0, n).into_owned();
        let dv = d[n];
        let w = self.prob.w();
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&self.u.apply(&dy));
        let mut sum_a = 0.0;
        for &i in &self.active {
            let col = w.column(i);
            let a = (col.dot(&dy) + dv) / self.sigma;
            sum_a += a;
            out.rows_mut(0, n).axpy(a, &col, 1.0);
        }
        out[n] = sum_a;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for `(G + shift I) d = b` from `d = 0`.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    shift: f64,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, CgOutcome) {
    let mut d = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut it = 0;
    while rr.sqrt() > tol && it < max_iter {
        let ap = apply(&p) + &p * shift;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        d.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
        it += 1;
    }
    (d, CgOutcome { iterations: it, residual: rr.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    /// `‖δ‖ ≤ σ/4 ‖x_next − xᵏ‖`
    Criterion,
    /// `‖∇h‖` reached the floor.
    GradFloor,
    MaxNewton,
    LineSearchFailed,
    /// The recovered primal sums to (nearly) zero and cannot be normalized.
    NotNormalizable,
}

impl InnerStatus {
    pub fn is_success(self) -> bool {
        matches!(self, InnerStatus::Criterion | InnerStatus::GradFloor)
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    pub state: NewtonState,
    /// Normalized primal point, when `eᵀprox ≠ 0`.
    pub x_next: Option<DVector<f64>>,
    pub delta_norm: f64,
    pub status: InnerStatus,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    /// Worst ratio of achieved to required CG residual over accepted steps.
    pub cg_rule_ratio: f64,
}

/// `dist(0, ∂(g_k + I_C)(x))` at a feasible `x`.
pub fn subproblem_residual(x: &DVector<f64>, outer: &OuterIterate, prob: &DcProblem) -> f64 {
    let g = prob.h_gradient(x) - &outer.q + (x - &outer.x) * outer.sigma;
    let zero: Vec<bool> = x.iter().map(|v| *v == 0.0).collect();
    normal_cone_residual(&g, x, &prob.p_weights(), &zero)
}

/// `g_k(x)` including the constant terms.
pub fn subproblem_primal(x: &DVector<f64>, outer: &OuterIterate, prob: &DcProblem) -> f64 {
    let pt: f64 = x.iter().zip(prob.p_weights().iter()).map(|(a, w)| w * a.abs()).sum();
    prob.h_value(x) + pt - outer.q.dot(&(x - &outer.x)) + 0.5 * outer.sigma * (x - &outer.x).norm_squared()
}

/// Lower bound on `min g_k` from a dual point: `−h_k + σ/2‖xᵏ‖² + ⟨q, xᵏ⟩`.
pub fn subproblem_dual_bound(state: &NewtonState, outer: &OuterIterate, prob: &DcProblem) -> f64 {
    -dual_objective(state, outer, prob) + 0.5 * outer.sigma * outer.x.norm_squared() + outer.q.dot(&outer.x)
}

/// Dual starting point: `y` with `prox_λ(y) = Wxᵏ`, and `v` solving
/// `eᵀprox(x̃(y, v)) = 1` by bisection when it has a root.
pub fn initial_state(prob: &DcProblem, outer: &OuterIterate) -> NewtonState {
    let wx = prob.w_mul(&outer.x);
    let nw = wx.norm();
    let y = if nw > 0.0 { &wx * (1.0 + prob.lam / nw) } else { wx };
    let sum_at = |v: f64| evaluate(prob, outer, &y, v).p.sum() - 1.0;
    let mut v = 0.0;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    // eᵀprox is nonincreasing in v
    let mut grow = 0;
    while sum_at(lo) < 0.0 && grow < 60 {
        lo *= 4.0;
        grow += 1;
    }
    while sum_at(hi) > 0.0 && grow < 120 {
        hi *= 4.0;
        grow += 1;
    }
    if sum_at(lo) >= 0.0 && sum_at(hi) <= 0.0 {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if sum_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        v = 0.5 * (lo + hi);
    }
    let grad_norm = evaluate(prob, outer, &y, v).grad.norm();
    NewtonState { y, v, grad_norm }
}

fn normalized(p: &DVector<f64>) -> Option<DVector<f64>> {
    let s = p.sum();
    (s.abs() >= 1e-8).then(|| p / s)
}

/// Semismooth Newton-CG on the dual of one proximal subproblem.
pub fn solve_subproblem(
    outer: &OuterIterate,
    prob: &DcProblem,
    config: &SolverConfig,
    warm_start: Option<&NewtonState>,
) -> SubproblemOutcome {
    let n = prob.n();
    let nc = &config.newton;
    let cg_max = config.cg.max_iter.unwrap_or(2 * n).max(1);

    let fresh = initial_state(prob, outer);
    let start = match warm_start {
        Some(w) if w.y.len() == n => {
            let g = evaluate(prob, outer, &w.y, w.v).grad.norm();
            if g < fresh.grad_norm {
                NewtonState { grad_norm: g, ..w.clone() }
            } else {
                fresh
            }
        }
        _ => fresh,
    };
    let mut y = start.y;
    let mut v = start.v;
    let mut ev = evaluate(prob, outer, &y, v);
    let mut newton_iterations = 0;
    let mut cg_iterations = 0;
    let mut cg_rule_ratio: f64 = 0.0;
    let mut delta_norm = f64::INFINITY;

    let finish =
        |y: DVector<f64>, v: f64, ev: &DualEval, x_next, delta_norm, status, newton_iterations, cg_iterations, cg_rule_ratio| {
            SubproblemOutcome {
                state: NewtonState { y, v, grad_norm: ev.grad.norm() },
                x_next,
                delta_norm,
                status,
                newton_iterations,
                cg_iterations,
                cg_rule_ratio,
            }
        };

    loop {
        let gnorm = ev.grad.norm();
        let x_next = normalized(&ev.p);
        if let Some(x) = &x_next {
            delta_norm = subproblem_residual(x, outer, prob);
            if nc.inner_criterion && delta_norm <= 0.25 * outer.sigma * (x - &outer.x).norm() {
                return finish(
                    y,
                    v,
                    &ev,
                    x_next,
                    delta_norm,
                    InnerStatus::Criterion,
                    newton_iterations,
                    cg_iterations,
                    cg_rule_ratio,
                );
            }
        }
        if gnorm <= nc.grad_floor {
            let status = if x_next.is_some() { InnerStatus::GradFloor } else { InnerStatus::NotNormalizable };
            return finish(y, v, &ev, x_next, delta_norm, status, newton_iterations, cg_iterations, cg_rule_ratio);
        }
        if newton_iterations >= nc.max_newton {
            let status = if x_next.is_some() { InnerStatus::MaxNewton } else { InnerStatus::NotNormalizable };
            return finish(y, v, &ev, x_next, delta_norm, status, newton_iterations, cg_iterations, cg_rule_ratio);
        }

        // S1: damped Newton system by CG
        let shift = nc.tau1 * nc.tau2.min(gnorm);
        let target = nc.eta_bar.min(gnorm.powf(1.0 + nc.tau)).max(config.cg.base_tol);
        let op = NewtonOperator::from_eval(prob, outer, &y, &ev);
        let rhs = -&ev.grad;
        let (mut d, cg) = conjugate_gradient(|a| op.apply(a), shift, &rhs, target, cg_max);
        cg_iterations += cg.iterations;
        let mut slope = ev.grad.dot(&d);
        if !(slope < 0.0) || !slope.is_finite() {
            d = rhs;
            slope = -gnorm * gnorm;
        } else {
            cg_rule_ratio = cg_rule_ratio.max(cg.residual / target);
        }

        // S2: Armijo backtracking. A trial that fails Armijo only by rounding
        // (h unchanged to machine precision) but reduces ‖∇h‖ is accepted too.
        let mut alpha = 1.0;
        let mut accepted = None;
        let round = 64.0 * f64::EPSILON * (1.0 + ev.h.abs());
        for _ in 0..nc.max_linesearch {
            let ty = &y + d.rows(0, n) * alpha;
            let tv = v + alpha * d[n];
            let trial = evaluate(prob, outer, &ty, tv);
            let armijo = trial.h <= ev.h + nc.mu * alpha * slope;
            let flat = trial.h <= ev.h + round && trial.grad.norm() < gnorm;
            if armijo || flat {
                accepted = Some((ty, tv, trial));
                break;
            }
            alpha *= nc.beta;
        }
        newton_iterations += 1;
        match accepted {
            Some((ty, tv, trial)) => {
                y = ty;
                v = tv;
                ev = trial;
            }
            None => {
                return finish(
                    y,
                    v,
                    &ev,
                    x_next,
                    delta_norm,
                    InnerStatus::LineSearchFailed,
                    newton_iterations,
                    cg_iterations,
                    cg_rule_ratio,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::problem::build_problem;
    use crate::market::{synth_market, MeanSpec, SpectrumSpec};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(seed: u64, n: usize, eps: f64, phi: f64, t: Option<f64>) -> DcProblem {
        let m = synth_market(seed, n, &SpectrumSpec::Uniform { lo: 0.05, hi: 0.5 }, &MeanSpec::Normal { mean: 0.05, sd: 0.1 })
            .unwrap();
        build_problem(&m, 1.0, eps, &vec![phi; n], t).unwrap()
    }

    #[test]
    fn trivial_dual_value() {
        let p = problem(1, 3, 0.5, 0.01, None);
        let mut p0 = p.clone();
        p0.r_tilde = DVector::zeros(3);
        let outer = OuterIterate { x: DVector::zeros(3), q: DVector::zeros(3), sigma: 1.0, f_value: 0.0 };
        let st = NewtonState { y: DVector::zeros(3), v: 0.0, grad_norm: 0.0 };
        assert_eq!(dual_objective(&st, &outer, &p0), 0.0);
    }

    #[test]
    fn gradient_last_entry_is_one_in_dead_zone() {
        let p = problem(2, 4, 0.5, 0.01, None);
        let outer = OuterIterate { x: DVector::zeros(4), q: DVector::zeros(4), sigma: 1e6, f_value: 0.0 };
        let mut p0 = p.clone();
        p0.r_tilde = DVector::zeros(4);
        let st = NewtonState { y: DVector::from_element(4, 1e-6), v: 0.0, grad_norm: 0.0 };
        assert_eq!(dual_gradient(&st, &outer, &p0)[4], 1.0);
    }

    #[test]
    fn dual_value_matches_inner_minimization() {
        // −h_k(y, v) = min_{x,u} L(x, u; y, v); the inner problem separates into
        // a u-part and an x-part, each minimized numerically by coordinate
        // descent over the explicit (non-envelope) expression
        let p = problem(3, 3, 0.4, 0.02, Some(0.05));
        let x0 = DVector::from_vec(vec![0.5, 0.3, 0.2]);
        let outer = OuterIterate::dc(&p, x0.clone(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let v = rng.random_range(-0.5..0.5);
            let st = NewtonState { y: y.clone(), v, grad_norm: 0.0 };
            let h = dual_objective(&st, &outer, &p);

            // u-part: ½‖u‖² + λ‖u‖ − ⟨y, u⟩ along the ray of y
            let ny = y.norm();
            let s = (ny - p.lam).max(0.0);
            let u_min = 0.5 * s * s + p.lam * s - ny * s;

            // x-part: p_t(x) − ⟨Q, x⟩ + σ/2‖x‖² − σ⟨xᵏ, x⟩ + ⟨Wᵀy + ev, x⟩, separable
            let c = &outer.q + &p.r_tilde - p.wt_mul(&y) - DVector::from_element(3, v) + &x0 * outer.sigma;
            let wts = p.p_weights();
            let mut x_min = 0.0;
            for i in 0..3 {
                let f = |a: f64| wts[i] * a.abs() - c[i] * a + 0.5 * outer.sigma * a * a;
                let (mut lo, mut hi) = (-100.0, 100.0);
                for _ in 0..400 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) < f(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                x_min += f(0.5 * (lo + hi));
            }
            let lagrangian_min = u_min + x_min - v;
            assert!((h + lagrangian_min).abs() < 1e-8, "{h} vs {}", -lagrangian_min);
        }
    }

    #[test]
    fn operator_is_symmetric_psd() {
        let p = problem(4, 6, 0.3, 0.01, Some(0.02));
        let x0 = DVector::from_element(6, 1.0 / 6.0);
        let outer = OuterIterate::dc(&p, x0, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let st = NewtonState {
                y: DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
                v: rng.random_range(-1.0..1.0),
                grad_norm: 0.0,
            };
            let op = NewtonOperator::new(&p, &outer, &st);
            let a = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            assert!((op.apply(&a).dot(&b) - a.dot(&op.apply(&b))).abs() <= 1e-10);
            assert!(op.apply(&a).dot(&a) >= -1e-12);
        }
    }

    #[test]
    fn operator_zero_when_nothing_active() {
        let p = problem(5, 3, 0.3, 0.01, None);
        let mut p0 = p.clone();
        p0.r_tilde = DVector::zeros(3);
        let outer = OuterIterate { x: DVector::zeros(3), q: DVector::zeros(3), sigma: 1.0, f_value: 0.0 };
        let st = NewtonState { y: DVector::zeros(3), v: 0.0, grad_norm: 0.0 };
        let op = NewtonOperator::new(&p0, &outer, &st);
        assert!(op.active().is_empty());
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(op.apply(&b), DVector::zeros(4));
        let (d, _) = conjugate_gradient(|a| op.apply(a), 0.01, &b, 1e-12, 10);
        assert!((d * 0.01 - b).norm() < 1e-12);
    }

    #[test]
    fn smooth_subproblem_matches_kkt() {
        // λ = 0 and negligible l1 weights: an equality-constrained QP
        let m =
            synth_market(6, 5, &SpectrumSpec::Uniform { lo: 0.05, hi: 0.5 }, &MeanSpec::Normal { mean: 0.05, sd: 0.1 }).unwrap();
        let p = build_problem(&m, 1.0, 0.0, &[1e-300; 5], Some(1.0)).unwrap();
        let x0 = DVector::from_element(5, 0.2);
        let outer = OuterIterate::l1(&p, x0.clone(), 0.8);
        let mut cfg = SolverConfig::default();
        cfg.newton.inner_criterion = false;
        let out = solve_subproblem(&outer, &p, &cfg, None);
        assert!(out.status.is_success());

        let n = 5;
        let mut k = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        k.view_mut((0, 0), (n, n)).copy_from(&(m.cov() + DMatrix::identity(n, n) * outer.sigma));
        for i in 0..n {
            k[(i, n)] = 1.0;
            k[(n, i)] = 1.0;
            rhs[i] = p.r_tilde[i] + outer.sigma * x0[i];
        }
        rhs[n] = 1.0;
        let sol = k.lu().solve(&rhs).unwrap();
        let x_kkt = sol.rows(0, n).into_owned();
        assert!((out.x_next.unwrap() - x_kkt).norm() < 1e-8);
    }

    #[test]
    fn strong_duality_at_exit() {
        for seed in 0..5 {
            let p = problem(10 + seed, 6, 0.5, 0.02, None);
            let x0 = DVector::from_element(6, 1.0 / 6.0);
            let outer = OuterIterate::dc(&p, x0, 1.0);
            let mut cfg = SolverConfig::default();
            cfg.newton.inner_criterion = false;
            let out = solve_subproblem(&outer, &p, &cfg, None);
            let x = out.x_next.unwrap();
            let gap = subproblem_primal(&x, &outer, &p) - subproblem_dual_bound(&out.state, &outer, &p);
            assert!(gap.abs() <= 1e-6, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn warm_start_at_solution_needs_at_most_one_step() {
        let p = problem(20, 5, 0.5, 0.02, None);
        let outer = OuterIterate::dc(&p, DVector::from_element(5, 0.2), 1.0);
        let cfg = SolverConfig::default();
        let first = solve_subproblem(&outer, &p, &cfg, None);
        let second = solve_subproblem(&outer, &p, &cfg, Some(&first.state));
        assert!(second.newton_iterations <= 1);
    }
}
