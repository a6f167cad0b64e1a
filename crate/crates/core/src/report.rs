//! CSV and JSON report formats.
//!
//! Numbers in CSV output are written with 17 significant digits in
//! scientific notation so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::continuation::{ContinuationRun, LimitReport};
use crate::diagnostics::{ConsistencyReport, ResidualReport, ResidualTolerances};
use crate::error::{Error, Result};
use crate::model::EconomySpec;
use crate::solver::{Allocation, EquilibriumResult, PricePath};

pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn agent_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |j| format!("{prefix}_{j}"))
}

/// `period,price,interest_rate,c_0..,b_0..`; the final period has no rate.
pub fn equilibrium_csv(eq: &EquilibriumResult) -> String {
    let n = eq.allocation.n_agents();
    let mut header = vec!["period".to_string(), "price".into(), "interest_rate".into()];
    header.extend(agent_columns("c", n));
    header.extend(agent_columns("b", n));
    let mut out = header.join(",");
    out.push('\n');
    for t in 0..eq.allocation.n_periods() {
        let mut row = vec![t.to_string(), fmt_num(eq.prices.prices[t])];
        row.push(eq.interest_rates.get(t).map(|i| fmt_num(*i)).unwrap_or_default());
        row.extend(eq.allocation.consumption.iter().map(|c| fmt_num(c[t])));
        row.extend(eq.bonds.iter().map(|b| fmt_num(b[t])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn residual_summary(r: &ResidualReport) -> Value {
    json!({
        "max_euler": r.max_euler(),
        "max_clearing": r.max_clearing(),
        "max_budget": r.max_budget(),
        "max_mu_ratio_drift": r.max_mu_ratio_drift(),
    })
}

pub fn equilibrium_metadata(econ: &EconomySpec, eq: &EquilibriumResult) -> Value {
    let pairs: Vec<Value> = eq
        .residuals
        .pairs
        .iter()
        .map(|&(j, k)| json!({ "pair": [j, k], "gamma": eq.weights.pair_gamma(j, k) }))
        .collect();
    json!({
        "agents": econ.n_agents(),
        "horizon": econ.horizon,
        "regime": econ.regime.to_string(),
        "weights": eq.weights.as_slice(),
        "pair_gammas": pairs,
        "budget_residuals": eq.residuals.budget,
        "residual_norms": residual_summary(&eq.residuals),
        "solver": {
            "method": eq.trace.method,
            "iterations": eq.trace.iterations,
            "residual_norm": eq.trace.residual_norm,
        },
    })
}

/// Reads a path file with header `period, price, c_0, c_1, ...`.
pub fn parse_path_csv(text: &str, econ: &EconomySpec) -> Result<(Allocation, PricePath)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse(format!("path header: {e}")))?.clone();
    let n = econ.n_agents();
    let expected: Vec<String> = ["period".to_string(), "price".to_string()]
        .into_iter()
        .chain(agent_columns("c", n))
        .collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!(
            "path header must be `{}`, got `{}`",
            expected.join(", "),
            got.join(", ")
        )));
    }
    let mut prices = Vec::new();
    let mut consumption = vec![Vec::new(); n];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("path row {}: {e}", row_idx + 1)))?;
        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Parse(format!("period {row_idx}: column {} is not a number: `{raw}`", expected[i]))
            })
        };
        let period: usize = record
            .get(0)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Parse(format!("path row {}: bad period", row_idx + 1)))?;
        if period != row_idx {
            return Err(Error::Parse(format!("path rows must list periods in order; expected {row_idx}, got {period}")));
        }
        let price = field(1)?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::Parse(format!("period {period}: price must be positive, got {price}")));
        }
        prices.push(price);
        for (j, row) in consumption.iter_mut().enumerate() {
            let c = field(2 + j)?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Parse(format!("period {period}: c_{j} must be positive, got {c}")));
            }
            row.push(c);
        }
    }
    if prices.len() != econ.n_periods() {
        return Err(Error::Parse(format!(
            "path has {} periods, economy has {}",
            prices.len(),
            econ.n_periods()
        )));
    }
    // Present-value prices are normalized to the first period.
    let p0 = prices[0];
    let prices = prices.into_iter().map(|p| p / p0).collect();
    Ok((Allocation::new(consumption)?, PricePath::new(prices, econ.price_level.clone())?))
}

/// Writes a path file readable by [`parse_path_csv`].
pub fn path_csv(alloc: &Allocation, prices: &PricePath) -> String {
    let mut header = vec!["period".to_string(), "price".into()];
    header.extend(agent_columns("c", alloc.n_agents()));
    let mut out = header.join(",");
    out.push('\n');
    for t in 0..alloc.n_periods() {
        let mut row = vec![t.to_string(), fmt_num(prices.prices[t])];
        row.extend(alloc.consumption.iter().map(|c| fmt_num(c[t])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Period-indexed residuals: `period,clearing,euler_0..`. Euler residuals
/// link `t` and `t + 1`, so the final period's Euler cells are empty.
pub fn residual_csv(r: &ResidualReport) -> String {
    let n = r.euler.len();
    let mut header = vec!["period".to_string(), "clearing".into()];
    header.extend(agent_columns("euler", n));
    let mut out = header.join(",");
    out.push('\n');
    for (t, clearing) in r.clearing.iter().enumerate() {
        let mut row = vec![t.to_string(), fmt_num(*clearing)];
        row.extend(r.euler.iter().map(|e| e.get(t).map(|x| fmt_num(*x)).unwrap_or_default()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn audit_summary(r: &ResidualReport, tol: &ResidualTolerances) -> Value {
    let pairs: Vec<Value> = r
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(j, k))| {
            json!({
                "pair": [j, k],
                "mu_ratio_drift": r.mu_ratio_drift[i],
                "implied_gamma": r.implied_gamma[i],
            })
        })
        .collect();
    json!({
        "verdict": if r.passes(tol) { "pass" } else { "fail" },
        "tolerances": tol,
        "budget_residuals": r.budget,
        "pairs": pairs,
        "residual_norms": residual_summary(r),
        "worst": {
            "euler": r.worst_euler(),
            "clearing": r.worst_clearing(),
            "budget": r.worst_budget(),
        },
    })
}

pub fn consistency_json(c: &ConsistencyReport) -> Value {
    let pairs: Vec<Value> = c
        .pairs
        .iter()
        .zip(&c.drift_per_period)
        .map(|(&(j, k), d)| json!({ "pair": [j, k], "drift_per_period": d }))
        .collect();
    json!({
        "regime": c.regime.to_string(),
        "verdict": c.verdict,
        "rate_spread": c.rate_spread,
        "tolerance": c.tolerance,
        "required_rates_period_0": c.required_rates.iter().map(|r| r[0]).collect::<Vec<_>>(),
        "pairs": pairs,
    })
}

/// `period,spread,required_0..` with gross required rates `1 + i_t`.
pub fn required_rates_csv(c: &ConsistencyReport) -> String {
    let mut header = vec!["period".to_string(), "spread".into()];
    header.extend(agent_columns("required", c.required_rates.len()));
    let mut out = header.join(",");
    out.push('\n');
    for (t, spread) in c.spread_by_period.iter().enumerate() {
        let mut row = vec![t.to_string(), fmt_num(*spread)];
        row.extend(c.required_rates.iter().map(|r| fmt_num(r[t])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One row per member: `parameter,max_euler,max_clearing,max_budget,max_mu_ratio_drift,diff_to_previous`.
pub fn continuation_csv(run: &ContinuationRun) -> String {
    let mut out =
        String::from("parameter,max_euler,max_clearing,max_budget,max_mu_ratio_drift,diff_to_previous\n");
    for (i, m) in run.members.iter().enumerate() {
        let r = &m.equilibrium.residuals;
        let diff = if i == 0 { String::new() } else { fmt_num(run.diffs[i - 1]) };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(m.parameter),
            fmt_num(r.max_euler()),
            fmt_num(r.max_clearing()),
            fmt_num(r.max_budget()),
            fmt_num(r.max_mu_ratio_drift()),
            diff
        );
    }
    out
}

pub fn limit_csv(report: &LimitReport) -> String {
    path_csv(&report.allocation, &report.prices)
}

pub fn continuation_metadata(run: &ContinuationRun, report: &LimitReport) -> Value {
    json!({
        "family": run.kind.name(),
        "members": run.members.len(),
        "window": run.window,
        "tolerance": run.tolerance,
        "converged": run.converged,
        "diffs_monotone": run.diffs_monotone(),
        "ratio_estimates": run.ratio_estimates,
        "limit": {
            "passes_audit": report.passes_audit,
            "mu_ratio_drift": report.mu_ratio_drift,
            "residual_norms": residual_summary(&report.audit),
            "forced_zero": report.forced_zero,
        },
    })
}

pub fn time_consistency_csv(deviations: &[(usize, f64)]) -> String {
    let mut out = String::from("restart_period,max_deviation\n");
    for (s, d) in deviations {
        let _ = writeln!(out, "{s},{}", fmt_num(*d));
    }
    out
}

pub fn json_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partially written report.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "missing file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
