//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every entry point returns a JSON string; errors surface as JS exceptions.

use negishi_core::continuation::{self, FamilyKind};
use negishi_core::diagnostics::SPREAD_TOL;
use negishi_core::{
    generate_family, mu_ratio_path, run_continuation, solve_equilibrium, zero_bond_feasibility, Allocation, AgentSpec,
    BondRegime, EconomySpec, EndowmentSpec, SolverOptions,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Longest horizon the page may request.
pub const MAX_HORIZON: usize = 400;

fn pair(beta: [f64; 2], sigma: f64, endowment: [f64; 2], horizon: usize) -> Result<EconomySpec, String> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(format!("horizon must be between 1 and {MAX_HORIZON}"));
    }
    let agents = (0..2)
        .map(|j| AgentSpec::new(beta[j], sigma, EndowmentSpec::Constant(endowment[j])))
        .collect();
    Ok(EconomySpec::new(agents, horizon))
}

/// Free-trade equilibrium of a two-agent economy in which agent 0 starts with
/// claim `bond` on agent 1.
pub fn equilibrium_json(
    beta: [f64; 2],
    sigma: f64,
    endowment: [f64; 2],
    bond: f64,
    horizon: usize,
) -> Result<Value, String> {
    let econ = pair(beta, sigma, endowment, horizon)?.with_initial_bonds(vec![bond, -bond]);
    let eq = solve_equilibrium(&econ, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let mu = mu_ratio_path(&econ, &eq.allocation, 0, 1).map_err(|e| e.to_string())?;
    Ok(json!({
        "consumption": eq.allocation.consumption,
        "prices": eq.prices.prices,
        "interest_rates": eq.interest_rates,
        "bonds": eq.bonds,
        "gamma": eq.weights.pair_gamma(0, 1),
        "mu_ratio": mu.series,
        "mu_ratio_drift": mu.drift,
        "max_euler": eq.residuals.max_euler(),
        "max_clearing": eq.residuals.max_clearing(),
        "max_budget": eq.residuals.max_budget(),
    }))
}

/// Tests whether some interest-rate path supports autarky when bond trade
/// is forbidden.
pub fn zero_bond_json(beta: [f64; 2], sigma: f64, endowment: [f64; 2], horizon: usize) -> Result<Value, String> {
    let econ = pair(beta, sigma, endowment, horizon)?.with_regime(BondRegime::ForcedZero);
    let report = zero_bond_feasibility(&econ, SPREAD_TOL).map_err(|e| e.to_string())?;
    let autarky = Allocation::new(econ.endowment_matrix().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mu = mu_ratio_path(&econ, &autarky, 0, 1).map_err(|e| e.to_string())?;
    Ok(json!({
        "verdict": format!("{:?}", report.verdict),
        "rate_spread": report.rate_spread,
        "required_rates": report.required_rates,
        "mu_ratio": mu.series,
        "mu_ratio_drift": mu.drift,
    }))
}

/// Shrinks the initial bond position `bond * 2^-k`, k < `count`, and
/// extrapolates the equilibria to the zero-bond limit.
pub fn bond_sweep_json(
    beta: [f64; 2],
    sigma: f64,
    endowment: [f64; 2],
    bond: f64,
    horizon: usize,
    count: usize,
) -> Result<Value, String> {
    if !(2..=20).contains(&count) {
        return Err("count must be between 2 and 20".into());
    }
    let base = pair(beta, sigma, endowment, horizon)?;
    let eps: Vec<f64> = (0..count).map(|k| bond * 0.5f64.powi(k as i32)).collect();
    let kind = FamilyKind::InitialBondShrink { direction: vec![1.0, -1.0] };
    let family = generate_family(&base, kind, &eps).map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    let run = run_continuation(&family, continuation::CONVERGENCE_TOL, &opts).map_err(|e| e.to_string())?;
    let direct = solve_equilibrium(&base, &opts).map_err(|e| e.to_string())?;
    let members: Vec<&Vec<f64>> = run.members.iter().map(|m| &m.equilibrium.allocation.consumption[0]).collect();
    Ok(json!({
        "parameters": eps,
        "member_consumption": members,
        "diffs": run.diffs,
        "ratio_estimates": run.ratio_estimates,
        "limit_consumption": run.extrapolated_limit.consumption,
        "direct_consumption": direct.allocation.consumption,
        "limit_gap": run.extrapolated_limit.sup_diff(&direct.allocation, run.window),
        "diffs_monotone": run.diffs_monotone(),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn solve_pair(beta0: f64, beta1: f64, sigma: f64, y0: f64, y1: f64, bond: f64, horizon: usize) -> Result<String, JsError> {
    to_js(equilibrium_json([beta0, beta1], sigma, [y0, y1], bond, horizon))
}

#[wasm_bindgen]
pub fn zero_bond_check(beta0: f64, beta1: f64, sigma: f64, y0: f64, y1: f64, horizon: usize) -> Result<String, JsError> {
    to_js(zero_bond_json([beta0, beta1], sigma, [y0, y1], horizon))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn bond_sweep(
    beta0: f64,
    beta1: f64,
    sigma: f64,
    y0: f64,
    y1: f64,
    bond: f64,
    horizon: usize,
    count: usize,
) -> Result<String, JsError> {
    to_js(bond_sweep_json([beta0, beta1], sigma, [y0, y1], bond, horizon, count))
}
