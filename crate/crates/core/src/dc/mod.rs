//! Capped-l1 difference-of-convex model and its solvers: the proximal DC
//! algorithm with a dual semismooth Newton inner solver, the convex l1
//! baseline (proximal point method on the same machinery), and the
//! support-reduced accelerated variant.

mod config;
mod newton;
mod problem;
mod solve;

pub use config::{CgConfig, NewtonConfig, SolverConfig};
pub use newton::{
    conjugate_gradient, dual_gradient, dual_objective, initial_state, solve_subproblem, subproblem_dual_bound, subproblem_primal,
    subproblem_residual, CgOutcome, InnerStatus, NewtonOperator, NewtonState, OuterIterate, SubproblemOutcome,
};
pub use problem::{
    build_problem, capped_l1, embed, gradient_bound, lifted_stationarity_check, normal_cone_residual, q_select, t_default,
    CappedL1, DcProblem, Stationarity, CAP_RADIUS,
};
pub use solve::{solve_accelerated, solve_l1mv, solve_l1mv_from, solve_pdca, SolveReport, SolveStatus, TraceEntry};
