//! Competitive equilibria of deterministic exchange economies with
//! heterogeneous discount factors, computed by the Negishi planner-weight
//! method.
//!
//! * [`model`]: agents, endowments, bond regimes and CRRA utility calculus.
//! * [`solver`]: planner allocation for fixed weights and the outer weight
//!   iteration that balances every budget.
//! * [`diagnostics`]: Euler, clearing and budget residuals, the
//!   marginal-utility-ratio law, the forced-zero-bond detector and
//!   re-solve based time-consistency checks.
//! * [`continuation`]: families of neighboring economies and the limit of
//!   their equilibria.
//! * [`report`] and [`spec_file`]: CSV/JSON reports and TOML economy files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod continuation;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod report;
pub mod solver;
pub mod spec_file;

pub use continuation::{
    generate_family, limit_report, run_continuation, ContinuationRun, EconomyFamily, FamilyKind,
    LimitReport,
};
pub use diagnostics::{
    audit, euler_residuals, mu_ratio_path, time_consistency_check, zero_bond_feasibility,
    ConsistencyReport, ResidualReport, ResidualTolerances, Verdict,
};
pub use error::{Error, Result};
pub use model::{AgentSpec, BondRegime, EconomySpec, EndowmentSpec, UtilitySpec, ValidationReport};
pub use solver::{
    budget_residuals, implied_interest_rates, planner_allocation, recover_bond_path,
    solve_equilibrium, Allocation, EquilibriumResult, NegishiWeights, PricePath, SolverOptions,
};
