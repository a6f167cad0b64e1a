//! Families of neighboring economies that each have an equilibrium, and
//! the limit of those equilibria as the perturbation vanishes.
//!
//! Each family relaxes exactly one of the conditions under which a
//! forced-zero-bond economy has no equilibrium: zero initial bond
//! positions, time-invariant endowments, or the (truncated) infinite
//! horizon.

use serde::Serialize;

use crate::diagnostics::{self, ResidualReport, ResidualTolerances};
use crate::error::{Error, Result};
use crate::model::{BondRegime, EconomySpec, EndowmentSpec, Violation};
use crate::solver::{self, Allocation, EquilibriumResult, PricePath, SolverOptions};

/// Default sup-norm tolerance on the final member-to-member difference.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// Largest net trade (or bond claim, in present value) still read as zero
/// when checking a limit against a forced-zero base.
pub const FORCED_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FamilyKind {
    /// `initial_bonds = eps * direction`.
    InitialBondShrink { direction: Vec<f64> },
    /// Agent `j` receives `level * (1 + eps * direction[j] * decay^t)`.
    EndowmentPerturbation { direction: Vec<f64>, decay: f64 },
    /// Parameters are horizons.
    HorizonGrowth,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::InitialBondShrink { .. } => "bonds",
            FamilyKind::EndowmentPerturbation { .. } => "endowment",
            FamilyKind::HorizonGrowth => "horizon",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EconomyFamily {
    pub base: EconomySpec,
    pub kind: FamilyKind,
    /// Strictly decreasing `eps >= 0`, or strictly increasing horizons.
    pub parameters: Vec<f64>,
    pub members: Vec<EconomySpec>,
}

pub fn generate_family(base: &EconomySpec, kind: FamilyKind, params: &[f64]) -> Result<EconomyFamily> {
    base.ensure_valid()?;
    if params.is_empty() {
        return Err(invalid("parameters", "at least one parameter is required"));
    }
    let n = base.n_agents();
    match &kind {
        FamilyKind::InitialBondShrink { direction } => {
            check_direction(direction, n)?;
            let sum: f64 = direction.iter().sum();
            let scale = direction.iter().map(|d| d.abs()).sum::<f64>().max(1.0);
            if sum.abs() > 1e-12 * scale {
                return Err(invalid("direction", format!("bond direction must net to zero, sum is {sum}")));
            }
            check_shrinking(params)?;
        }
        FamilyKind::EndowmentPerturbation { direction, decay } => {
            check_direction(direction, n)?;
            if !(*decay >= 0.0 && *decay < 1.0) {
                return Err(invalid("decay", format!("must lie in [0, 1), got {decay}")));
            }
            for (j, a) in base.agents.iter().enumerate() {
                if !matches!(a.endowment, EndowmentSpec::Constant(_)) && !a.endowment.is_constant() {
                    return Err(invalid(
                        format!("agents[{j}].endowment"),
                        "endowment perturbation needs a constant base endowment",
                    ));
                }
            }
            check_shrinking(params)?;
        }
        FamilyKind::HorizonGrowth => {
            if params.iter().any(|p| !(p.fract() == 0.0 && *p >= 1.0)) {
                return Err(invalid("parameters", "horizons must be positive integers"));
            }
            if params.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("parameters", "horizons must be strictly increasing"));
            }
            if base.price_level.iter().any(|&p| p != base.price_level[0]) {
                return Err(invalid("price_level", "horizon growth needs a constant price level"));
            }
        }
    }
    let members = params
        .iter()
        .map(|&eps| {
            let member = make_member(base, &kind, eps)?;
            member.ensure_valid()?;
            Ok(member)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EconomyFamily { base: base.clone(), kind, parameters: params.to_vec(), members })
}

fn make_member(base: &EconomySpec, kind: &FamilyKind, eps: f64) -> Result<EconomySpec> {
    let mut m = base.clone();
    m.regime = BondRegime::FreeTrade;
    match kind {
        FamilyKind::InitialBondShrink { direction } => {
            m.initial_bonds = direction.iter().map(|d| eps * d).collect();
        }
        FamilyKind::EndowmentPerturbation { direction, decay } => {
            for (agent, d) in m.agents.iter_mut().zip(direction) {
                let level = agent.endowment.base_level().unwrap_or_else(|| agent.endowment.at(0).unwrap_or(0.0));
                let amplitude = eps * d;
                agent.endowment = if amplitude == 0.0 {
                    EndowmentSpec::Constant(level)
                } else {
                    EndowmentSpec::Perturbed { level, amplitude, decay: *decay }
                };
            }
        }
        FamilyKind::HorizonGrowth => {
            let horizon = eps as usize;
            m.horizon = horizon;
            m.price_level = vec![base.price_level[0]; horizon + 1];
        }
    }
    Ok(m)
}

fn check_direction(direction: &[f64], n: usize) -> Result<()> {
    if direction.len() != n {
        return Err(invalid("direction", format!("expected {n} entries, got {}", direction.len())));
    }
    if direction.iter().any(|d| !d.is_finite()) {
        return Err(invalid("direction", "entries must be finite"));
    }
    Ok(())
}

fn check_shrinking(params: &[f64]) -> Result<()> {
    if params.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(invalid("parameters", "perturbation sizes must be nonnegative"));
    }
    if params.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("parameters", "perturbation sizes must be strictly decreasing"));
    }
    Ok(())
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Invalid(vec![Violation::new(field, message)])
}

#[derive(Debug, Clone)]
pub struct ContinuationMember {
    pub parameter: f64,
    pub economy: EconomySpec,
    pub equilibrium: EquilibriumResult,
}

#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub base: EconomySpec,
    pub kind: FamilyKind,
    pub members: Vec<ContinuationMember>,
    /// Sup-norm consumption change between consecutive members.
    pub diffs: Vec<f64>,
    /// `diffs[i + 1] / diffs[i]`.
    pub ratio_estimates: Vec<f64>,
    /// Number of leading periods shared by the extrapolation inputs.
    pub window: usize,
    pub extrapolated_limit: Allocation,
    pub extrapolated_prices: PricePath,
    pub converged: bool,
    pub tolerance: f64,
}

impl ContinuationRun {
    pub fn diffs_monotone(&self) -> bool {
        self.diffs.windows(2).all(|w| w[1] < w[0])
    }
}

/// Solves every member in order and extrapolates the limit.
pub fn run_continuation(family: &EconomyFamily, tol: f64, opts: &SolverOptions) -> Result<ContinuationRun> {
    let members = family
        .members
        .iter()
        .zip(&family.parameters)
        .map(|(econ, &parameter)| {
            let equilibrium = solver::solve_equilibrium(econ, opts)
                .map_err(|e| Error::Member { parameter, source: Box::new(e) })?;
            Ok(ContinuationMember { parameter, economy: econ.clone(), equilibrium })
        })
        .collect::<Result<Vec<_>>>()?;

    let periods = |m: &ContinuationMember| m.equilibrium.allocation.n_periods();
    let diffs: Vec<f64> = members
        .windows(2)
        .map(|w| {
            let window = periods(&w[0]).min(periods(&w[1]));
            w[1].equilibrium.allocation.sup_diff(&w[0].equilibrium.allocation, window)
        })
        .collect();
    let ratio_estimates: Vec<f64> = diffs.windows(2).map(|w| w[1] / w[0]).collect();

    // Two rounds of Aitken over five members cancel both the linear and the
    // quadratic term of a smooth one-parameter family. Horizon families
    // converge faster than geometrically, so one round over three members
    // keeps the shared window longer.
    let span = match family.kind {
        FamilyKind::HorizonGrowth => 3,
        _ => 5,
    };
    let tail = &members[members.len().saturating_sub(span)..];
    let window = tail.iter().map(periods).min().unwrap_or(0);
    let geometric = tail.len() >= 3 && ratio_estimates.last().is_some_and(|r| *r < 1.0);
    let last = &tail[tail.len() - 1].equilibrium;
    let (consumption, prices) = if geometric {
        let c = (0..last.allocation.n_agents())
            .map(|j| {
                (0..window)
                    .map(|t| {
                        let seq: Vec<f64> =
                            tail.iter().map(|m| m.equilibrium.allocation.consumption[j][t]).collect();
                        iterated_aitken(&seq)
                    })
                    .collect()
            })
            .collect();
        let p = (0..window)
            .map(|t| {
                let seq: Vec<f64> = tail.iter().map(|m| m.equilibrium.prices.prices[t]).collect();
                iterated_aitken(&seq)
            })
            .collect();
        (c, p)
    } else {
        (
            last.allocation.truncated(window).consumption,
            last.prices.prices[..window].to_vec(),
        )
    };
    let extrapolated_limit = Allocation::new(consumption)?;
    let extrapolated_prices = PricePath::new(prices, last.prices.price_level[..window].to_vec())?;

    let converged = diffs.last().is_some_and(|d| *d < tol)
        && ratio_estimates.len() >= 3
        && ratio_estimates[ratio_estimates.len() - 3..].iter().all(|r| *r < 1.0);

    Ok(ContinuationRun {
        base: family.base.clone(),
        kind: family.kind.clone(),
        members,
        diffs,
        ratio_estimates,
        window,
        extrapolated_limit,
        extrapolated_prices,
        converged,
        tolerance: tol,
    })
}

/// Repeated delta-squared passes until fewer than three terms remain.
fn iterated_aitken(seq: &[f64]) -> f64 {
    let mut current = seq.to_vec();
    while current.len() >= 3 {
        current = current.windows(3).map(|w| aitken(w[0], w[1], w[2])).collect();
    }
    *current.last().expect("at least one term")
}

/// Aitken's delta-squared limit of `x0, x1, x2`, falling back to `x2` when
/// the differences are at round-off level or not geometrically shrinking.
fn aitken(x0: f64, x1: f64, x2: f64) -> f64 {
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let noise = 64.0 * f64::EPSILON * x2.abs().max(1.0);
    if d1.abs() <= noise || d2.abs() >= d1.abs() || d1 * d2 <= 0.0 {
        return x2;
    }
    x2 - d2 * d2 / (d2 - d1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForcedZeroCheck {
    /// `max |C_jt - y_jt|` of the limit allocation.
    pub max_trade: f64,
    /// Largest bond claim of the limit, in period-0 present value.
    pub max_bond: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub family: &'static str,
    pub allocation: Allocation,
    pub prices: PricePath,
    /// Audit against the base economy (restricted to the limit window).
    pub audit: ResidualReport,
    pub mu_ratio_drift: f64,
    pub passes_audit: bool,
    /// Present when the base economy forces zero bond positions.
    pub forced_zero: Option<ForcedZeroCheck>,
    pub converged: bool,
}

pub fn limit_report(run: &ContinuationRun) -> Result<LimitReport> {
    let mut base = run.base.clone();
    let horizon = run.window - 1;
    if base.horizon != horizon {
        base.horizon = horizon;
        base.price_level = run.extrapolated_prices.price_level.clone();
    }
    let alloc = &run.extrapolated_limit;
    let prices = &run.extrapolated_prices;
    let audit = diagnostics::audit(&base, alloc, prices)?;
    let tol = ResidualTolerances::default();
    // A truncated window cannot balance lifetime budgets, so only the
    // period-by-period conditions are gated there.
    let truncated = horizon != run.base.horizon;
    let passes_audit = audit.max_euler() < tol.euler
        && audit.max_clearing() < tol.clearing
        && audit.max_mu_ratio_drift() < tol.mu_ratio_drift
        && (truncated || audit.max_budget() < tol.budget);

    let forced_zero = if run.base.regime == BondRegime::ForcedZero {
        let endowments = base.endowment_matrix()?;
        let max_trade = alloc
            .consumption
            .iter()
            .zip(&endowments)
            .flat_map(|(c, y)| c.iter().zip(y).map(|(c, y)| (c - y).abs()))
            .fold(0.0, f64::max);
        let rates = solver::implied_interest_rates(prices);
        let bonds = solver::bond_path_unchecked(&base, alloc, prices, &rates)?;
        let max_bond = solver::present_value_bonds(&bonds, prices)
            .iter()
            .flatten()
            .fold(0.0f64, |m, b| m.max(b.abs()));
        Some(ForcedZeroCheck {
            max_trade,
            max_bond,
            satisfied: max_trade <= FORCED_ZERO_TOL && max_bond <= FORCED_ZERO_TOL,
        })
    } else {
        None
    };

    Ok(LimitReport {
        family: run.kind.name(),
        allocation: alloc.clone(),
        prices: prices.clone(),
        mu_ratio_drift: audit.max_mu_ratio_drift(),
        audit,
        passes_audit,
        forced_zero,
        converged: run.converged,
    })
}
