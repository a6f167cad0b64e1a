//! Negishi-weight equilibrium computation.
//!
//! Given planner weights, each period's allocation solves the planner's
//! first-order conditions `w_j * beta_j^t * u_j'(C_jt) = lambda_t` together
//! with goods clearing. The outer loop moves the weights until every agent's
//! present-value budget balances; prices, interest rates and bond positions
//! are then read off the multipliers.

use serde::Serialize;

use crate::diagnostics::{self, ResidualReport};
use crate::error::{Error, Result};
use crate::model::{BondRegime, EconomySpec};

/// Weights are kept at least this far from the simplex boundary.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Terminal bonds, in period-0 present value, relative to lifetime income.
pub const TERMINAL_BOND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegishiWeights(Vec<f64>);

impl NegishiWeights {
    /// Normalizes positive weights onto the simplex.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Shape("weights must not be empty".into()));
        }
        if let Some(&w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Domain { what: "planner weight", value: w });
        }
        let total: f64 = weights.iter().sum();
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Two-agent weights `(gamma, 1 - gamma)`.
    pub fn pair(gamma: f64) -> Result<Self> {
        Self::new(vec![gamma, 1.0 - gamma])
    }

    fn from_log(log_w: &[f64]) -> Self {
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
        clamp_interior(&mut w);
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Pairwise weight `w_j / (w_j + w_k)`.
    pub fn pair_gamma(&self, j: usize, k: usize) -> f64 {
        self.0[j] / (self.0[j] + self.0[k])
    }
}

fn clamp_interior(w: &mut [f64]) {
    if w.len() < 2 {
        return;
    }
    for x in w.iter_mut() {
        *x = x.clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR);
    }
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// Present-value goods prices with `prices[0] == 1`, plus the price level
/// they are quoted against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricePath {
    pub prices: Vec<f64>,
    pub price_level: Vec<f64>,
}

impl PricePath {
    pub fn new(prices: Vec<f64>, price_level: Vec<f64>) -> Result<Self> {
        if prices.len() != price_level.len() {
            return Err(Error::Shape(format!(
                "{} prices but {} price levels",
                prices.len(),
                price_level.len()
            )));
        }
        if let Some((t, p)) = prices
            .iter()
            .chain(price_level.iter())
            .enumerate()
            .find(|(_, p)| !(**p > 0.0 && p.is_finite()))
        {
            return Err(Error::Domain {
                what: if t < prices.len() { "price" } else { "price level" },
                value: *p,
            });
        }
        Ok(Self { prices, price_level })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Consumption indexed `[agent][period]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub consumption: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn new(consumption: Vec<Vec<f64>>) -> Result<Self> {
        let periods = consumption.first().map_or(0, Vec::len);
        for (j, row) in consumption.iter().enumerate() {
            if row.len() != periods {
                return Err(Error::Shape(format!(
                    "agent {j} has {} periods, expected {periods}",
                    row.len()
                )));
            }
            if let Some(&c) = row.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                return Err(Error::Domain { what: "consumption", value: c });
            }
        }
        Ok(Self { consumption })
    }

    pub fn n_agents(&self) -> usize {
        self.consumption.len()
    }

    pub fn n_periods(&self) -> usize {
        self.consumption.first().map_or(0, Vec::len)
    }

    /// Sup-norm distance over the first `window` periods.
    pub fn sup_diff(&self, other: &Allocation, window: usize) -> f64 {
        self.consumption
            .iter()
            .zip(&other.consumption)
            .flat_map(|(a, b)| a.iter().zip(b).take(window).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn truncated(&self, periods: usize) -> Allocation {
        Allocation {
            consumption: self
                .consumption
                .iter()
                .map(|row| row[..periods.min(row.len())].to_vec())
                .collect(),
        }
    }
}

/// Output of the inner planner solve for fixed weights.
#[derive(Debug, Clone)]
pub struct PlannerSolution {
    pub allocation: Allocation,
    pub prices: PricePath,
    /// `ln lambda_t` for each period.
    pub log_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Single agent: the endowment is the only feasible allocation.
    Autarky,
    Bisection,
    Newton,
    /// Newton with at least one multiplicative weight-adjustment fallback step.
    NewtonTatonnement,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverTrace {
    pub iterations: usize,
    pub residual_norm: f64,
    pub method: SolveMethod,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub allocation: Allocation,
    pub prices: PricePath,
    /// Net nominal rate `i_t` for `t = 0..T-1`.
    pub interest_rates: Vec<f64>,
    /// End-of-period bond claims `[agent][period]`.
    pub bonds: Vec<Vec<f64>>,
    pub weights: NegishiWeights,
    pub residuals: ResidualReport,
    pub trace: SolverTrace,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Max absolute budget residual, in period-0 present value.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iterations: 10_000 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Solves the planner problem for fixed weights, period by period.
pub fn planner_allocation(econ: &EconomySpec, weights: &NegishiWeights) -> Result<PlannerSolution> {
    let n = econ.n_agents();
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} agents", weights.len())));
    }
    let log_w: Vec<f64> = weights.as_slice().iter().map(|w| w.ln()).collect();
    let log_beta: Vec<f64> = econ.agents.iter().map(|a| a.beta.ln()).collect();
    let sigma: Vec<f64> = econ.agents.iter().map(|a| a.utility.sigma).collect();

    let mut consumption = vec![Vec::with_capacity(econ.n_periods()); n];
    let mut log_multipliers = Vec::with_capacity(econ.n_periods());
    let mut log_a = vec![0.0; n];
    for t in 0..=econ.horizon {
        let total = econ.aggregate_endowment(t)?;
        for j in 0..n {
            log_a[j] = log_w[j] + t as f64 * log_beta[j];
        }
        let x = solve_period_multiplier(&log_a, &sigma, total)
            .map_err(|reason| Error::Bracket { period: t, reason })?;
        for j in 0..n {
            consumption[j].push(share(log_a[j], sigma[j], x));
        }
        log_multipliers.push(x);
    }
    let x0 = log_multipliers[0];
    let prices = log_multipliers.iter().map(|x| (x - x0).exp()).collect();
    Ok(PlannerSolution {
        allocation: Allocation::new(consumption).map_err(|e| Error::Bracket {
            period: 0,
            reason: format!("degenerate allocation: {e}"),
        })?,
        prices: PricePath::new(prices, econ.price_level.clone())?,
        log_multipliers,
    })
}

/// `C = (a / lambda)^(1/sigma)` in logs.
#[inline]
fn share(log_a: f64, sigma: f64, log_lambda: f64) -> f64 {
    ((log_a - log_lambda) / sigma).exp()
}

/// Finds `x = ln lambda` with `sum_j exp((log_a_j - x) / sigma_j) = total` by
/// bisection, run until the bracket collapses to adjacent floats.
fn solve_period_multiplier(log_a: &[f64], sigma: &[f64], total: f64) -> std::result::Result<f64, String> {
    let n = log_a.len() as f64;
    let excess = |x: f64| -> f64 {
        log_a.iter().zip(sigma).map(|(&a, &s)| share(a, s, x)).sum::<f64>() - total
    };
    // Every share is >= total at `lo` and <= total / n at `hi`.
    let mut lo = log_a
        .iter()
        .zip(sigma)
        .map(|(&a, &s)| a - s * total.ln())
        .fold(f64::INFINITY, f64::min);
    let mut hi = log_a
        .iter()
        .zip(sigma)
        .map(|(&a, &s)| a - s * (total / n).ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(format!("non-finite multiplier bracket [{lo}, {hi}]"));
    }
    // The analytic bounds are exact up to rounding; widen until the signs hold.
    let (mut f_lo, mut f_hi) = (excess(lo), excess(hi));
    let mut step = 1e-12 * (hi - lo).abs().max(1.0);
    for _ in 0..64 {
        if f_lo >= 0.0 && f_hi <= 0.0 {
            break;
        }
        if f_lo < 0.0 {
            lo -= step;
            f_lo = excess(lo);
        }
        if f_hi > 0.0 {
            hi += step;
            f_hi = excess(hi);
        }
        step *= 2.0;
    }
    if !(f_lo >= 0.0 && f_hi <= 0.0) {
        return Err(format!("clearing condition not bracketed: excess {f_lo} at {lo}, {f_hi} at {hi}"));
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = excess(mid);
        if f == 0.0 {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if excess(lo).abs() <= excess(hi).abs() { lo } else { hi })
}

/// Present-value budget surplus of each agent:
/// `e_j = sum_t p_t (y_jt - C_jt) + B_j,-1 / P_0`.
pub fn budget_residuals(econ: &EconomySpec, alloc: &Allocation, prices: &PricePath) -> Result<Vec<f64>> {
    check_shapes(econ, alloc, prices)?;
    let p0_level = prices.price_level[0];
    (0..econ.n_agents())
        .map(|j| {
            let mut acc = NeumaierSum::default();
            for t in 0..=econ.horizon {
                acc.add(prices.prices[t] * econ.endowment(j, t)?);
                acc.add(-prices.prices[t] * alloc.consumption[j][t]);
            }
            acc.add(econ.initial_bonds[j] / p0_level);
            Ok(acc.value())
        })
        .collect()
}

pub(crate) fn check_shapes(econ: &EconomySpec, alloc: &Allocation, prices: &PricePath) -> Result<()> {
    if alloc.n_agents() != econ.n_agents() {
        return Err(Error::Shape(format!(
            "allocation has {} agents, economy has {}",
            alloc.n_agents(),
            econ.n_agents()
        )));
    }
    if alloc.n_periods() != econ.n_periods() || prices.len() != econ.n_periods() {
        return Err(Error::Shape(format!(
            "allocation has {} periods and prices {}, economy has {}",
            alloc.n_periods(),
            prices.len(),
            econ.n_periods()
        )));
    }
    Ok(())
}

/// `1 + i_t = (p_t / P_t) / (p_{t+1} / P_{t+1})`.
pub fn implied_interest_rates(prices: &PricePath) -> Vec<f64> {
    let p = &prices.prices;
    let level = &prices.price_level;
    (0..p.len().saturating_sub(1))
        .map(|t| (p[t] * level[t + 1]) / (p[t + 1] * level[t]) - 1.0)
        .collect()
}

/// Bond positions from the period budget constraint held with equality:
/// `B_jt = (1 + i_t) (B_j,t-1 + P_t (y_jt - C_jt))` for `t < T`. The final
/// period has no rate, so `B_jT` is the unrolled claim left over after
/// period-`T` trade and must vanish.
pub fn recover_bond_path(
    econ: &EconomySpec,
    alloc: &Allocation,
    prices: &PricePath,
    rates: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let bonds = bond_path_unchecked(econ, alloc, prices, rates)?;
    let pv = present_value_bonds(&bonds, prices);
    let scale = lifetime_income_scale(econ, prices)?;
    let t_end = econ.horizon;
    for (j, row) in pv.iter().enumerate() {
        if row[t_end].abs() > TERMINAL_BOND_TOL * scale {
            return Err(Error::Consistency(format!(
                "agent {j} ends with bond claim {} (present value {}), beyond {TERMINAL_BOND_TOL} of income scale {scale}",
                bonds[j][t_end], row[t_end]
            )));
        }
    }
    for t in 0..=t_end {
        let net: f64 = pv.iter().map(|row| row[t]).sum();
        if net.abs() > 1e-9 * scale {
            return Err(Error::Consistency(format!(
                "bond positions at period {t} net to {net} in present value"
            )));
        }
    }
    Ok(bonds)
}

pub(crate) fn bond_path_unchecked(
    econ: &EconomySpec,
    alloc: &Allocation,
    prices: &PricePath,
    rates: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_shapes(econ, alloc, prices)?;
    if rates.len() != econ.horizon {
        return Err(Error::Shape(format!(
            "{} interest rates for horizon {}",
            rates.len(),
            econ.horizon
        )));
    }
    (0..econ.n_agents())
        .map(|j| {
            let mut prev = econ.initial_bonds[j];
            let mut row = Vec::with_capacity(econ.n_periods());
            for t in 0..=econ.horizon {
                let level = prices.price_level[t];
                let cash = prev + level * econ.endowment(j, t)? - level * alloc.consumption[j][t];
                prev = if t < econ.horizon { (1.0 + rates[t]) * cash } else { cash };
                row.push(prev);
            }
            Ok(row)
        })
        .collect()
}

/// Bond claims restated in period-0 real present value. The end-of-period
/// claim `B_t` pays at `t + 1`, so it is discounted by `p_{t+1} / P_{t+1}`;
/// the unrolled final claim is discounted by `p_T / P_T`.
pub fn present_value_bonds(bonds: &[Vec<f64>], prices: &PricePath) -> Vec<Vec<f64>> {
    let last = prices.len() - 1;
    bonds
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(t, b)| {
                    let s = (t + 1).min(last);
                    b * prices.prices[s] / prices.price_level[s]
                })
                .collect()
        })
        .collect()
}

/// Largest agent lifetime income, `max_j sum_t p_t y_jt`.
pub fn lifetime_income_scale(econ: &EconomySpec, prices: &PricePath) -> Result<f64> {
    let mut best: f64 = 0.0;
    for j in 0..econ.n_agents() {
        let mut acc = 0.0;
        for t in 0..=econ.horizon {
            acc += prices.prices[t] * econ.endowment(j, t)?;
        }
        best = best.max(acc);
    }
    Ok(best)
}

/// Computes the competitive equilibrium of a free-trade economy.
pub fn solve_equilibrium(econ: &EconomySpec, opts: &SolverOptions) -> Result<EquilibriumResult> {
    econ.ensure_valid()?;
    if econ.regime == BondRegime::ForcedZero {
        return Err(Error::Regime(
            "the solver needs a free_trade economy; use zero_bond_feasibility for forced_zero".into(),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Domain { what: "tolerance", value: opts.tol });
    }
    let n = econ.n_agents();
    let (weights, solution, iterations, method) = match n {
        1 => {
            let w = NegishiWeights(vec![1.0]);
            let sol = planner_allocation(econ, &w)?;
            (w, sol, 0, SolveMethod::Autarky)
        }
        2 => solve_pair(econ, opts)?,
        _ => solve_many(econ, opts)?,
    };
    let budget = budget_residuals(econ, &solution.allocation, &solution.prices)?;
    let residual_norm = budget.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    if !(residual_norm < opts.tol) {
        return Err(Error::NonConvergence { iterations, best_residual: residual_norm });
    }
    let interest_rates = implied_interest_rates(&solution.prices);
    let bonds = recover_bond_path(econ, &solution.allocation, &solution.prices, &interest_rates)?;
    let residuals = diagnostics::audit(econ, &solution.allocation, &solution.prices)?;
    Ok(EquilibriumResult {
        allocation: solution.allocation,
        prices: solution.prices,
        interest_rates,
        bonds,
        weights,
        residuals,
        trace: SolverTrace { iterations, residual_norm, method },
    })
}

type Solved = (NegishiWeights, PlannerSolution, usize, SolveMethod);

/// Two agents: bisection on `gamma` using the sign of agent 0's surplus,
/// which falls as the planner favors that agent.
fn solve_pair(econ: &EconomySpec, opts: &SolverOptions) -> Result<Solved> {
    // Bisect on x = ln(w_0 / w_1) so that a tiny weight keeps full relative
    // precision.
    let weights = |x: f64| NegishiWeights(vec![1.0 / (1.0 + (-x).exp()), 1.0 / (1.0 + x.exp())]);
    let surplus = |x: f64| -> Result<(f64, PlannerSolution)> {
        let sol = planner_allocation(econ, &weights(x))?;
        let e = budget_residuals(econ, &sol.allocation, &sol.prices)?;
        Ok((e[0], sol))
    };
    let bound = ((1.0 - WEIGHT_FLOOR) / WEIGHT_FLOOR).ln();
    let mut lo = -bound;
    let mut hi = bound;
    let (e_lo, _) = surplus(lo)?;
    let (e_hi, _) = surplus(hi)?;
    if !(e_lo > 0.0 && e_hi < 0.0) {
        // No interior weight balances the budgets.
        return Err(Error::NonConvergence {
            iterations: 0,
            best_residual: e_lo.abs().min(e_hi.abs()),
        });
    }
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let (e, _) = surplus(mid)?;
        if e == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if e > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (e_lo, sol_lo) = surplus(lo)?;
    let (e_hi, sol_hi) = surplus(hi)?;
    let (x, sol) = if e_lo.abs() <= e_hi.abs() { (lo, sol_lo) } else { (hi, sol_hi) };
    Ok((weights(x), sol, iterations, SolveMethod::Bisection))
}

/// Three or more agents: damped Newton on log-weights with a
/// finite-difference Jacobian, falling back to multiplicative weight
/// adjustment when the line search stalls.
fn solve_many(econ: &EconomySpec, opts: &SolverOptions) -> Result<Solved> {
    let n = econ.n_agents();
    let m = n - 1;
    let eval = |log_w: &[f64]| -> Result<(Vec<f64>, PlannerSolution, NegishiWeights)> {
        let w = NegishiWeights::from_log(log_w);
        let sol = planner_allocation(econ, &w)?;
        let e = budget_residuals(econ, &sol.allocation, &sol.prices)?;
        Ok((e, sol, w))
    };
    let norm = |e: &[f64]| e.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut log_w = initial_log_weights(econ)?;
    let (mut e, mut sol, mut w) = eval(&log_w)?;
    let mut best = norm(&e);
    let mut used_fallback = false;
    let mut eta = 1.0 / lifetime_income_scale(econ, &sol.prices)?.max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let mut polish = 0;

    while iterations < opts.max_iterations {
        if best < opts.tol {
            // A couple of extra Newton steps push the residual to round-off.
            polish += 1;
            if polish > 2 {
                break;
            }
        }
        iterations += 1;

        let step = newton_step(&log_w, &e[..m], m, &eval);
        let mut accepted = false;
        if let Some(dir) = step {
            let mut alpha = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = log_w
                    .iter()
                    .enumerate()
                    .map(|(j, l)| if j < m { l + alpha * dir[j] } else { *l })
                    .collect();
                if let Ok((e_t, sol_t, w_t)) = eval(&trial) {
                    let r = norm(&e_t);
                    if r < best {
                        log_w = w_t.as_slice().iter().map(|x| x.ln()).collect();
                        (e, sol, w, best) = (e_t, sol_t, w_t, r);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        if accepted {
            continue;
        }
        if best < opts.tol {
            break;
        }

        used_fallback = true;
        let mut moved = false;
        while eta > 1e-300 {
            let trial: Vec<f64> = log_w.iter().zip(&e).map(|(l, ej)| l + eta * ej).collect();
            let (e_t, sol_t, w_t) = eval(&trial)?;
            let r = norm(&e_t);
            if r < best {
                log_w = w_t.as_slice().iter().map(|x| x.ln()).collect();
                (e, sol, w, best) = (e_t, sol_t, w_t, r);
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !(best < opts.tol) {
        return Err(Error::NonConvergence { iterations, best_residual: best });
    }
    let method = if used_fallback { SolveMethod::NewtonTatonnement } else { SolveMethod::Newton };
    Ok((w, sol, iterations, method))
}

fn newton_step<F>(log_w: &[f64], f0: &[f64], m: usize, eval: &F) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, PlannerSolution, NegishiWeights)>,
{
    const H: f64 = 1e-6;
    // jac[row][col] = d e_row / d log_w_col
    let mut jac = vec![vec![0.0; m]; m];
    for col in 0..m {
        let mut plus = log_w.to_vec();
        let mut minus = log_w.to_vec();
        plus[col] += H;
        minus[col] -= H;
        let (ep, _, _) = eval(&plus).ok()?;
        let (em, _, _) = eval(&minus).ok()?;
        for row in 0..m {
            jac[row][col] = (ep[row] - em[row]) / (2.0 * H);
        }
    }
    let rhs: Vec<f64> = f0.iter().map(|x| -x).collect();
    solve_linear(jac, rhs)
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Starting weights from the log-utility weight condition
/// `w_j * sum_t beta_j^t = wealth_j / lambda_0`, iterated twice on prices.
fn initial_log_weights(econ: &EconomySpec) -> Result<Vec<f64>> {
    let n = econ.n_agents();
    let mut w = NegishiWeights::uniform(n);
    for _ in 0..2 {
        let sol = planner_allocation(econ, &w)?;
        let mut next = Vec::with_capacity(n);
        for (j, agent) in econ.agents.iter().enumerate() {
            let mut wealth = econ.initial_bonds[j] / econ.price_level[0];
            let mut discount = 0.0;
            for t in 0..=econ.horizon {
                wealth += sol.prices.prices[t] * econ.endowment(j, t)?;
                discount += crate::model::powi(agent.beta, t);
            }
            next.push(wealth / discount);
        }
        if next.iter().any(|x| !(*x > 0.0)) {
            break;
        }
        let mut v = next;
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        clamp_interior(&mut v);
        w = NegishiWeights(v);
    }
    Ok(w.as_slice().iter().map(|x| x.ln()).collect())
}

#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentSpec, EndowmentSpec};

    fn pair(b1: f64, b2: f64, horizon: usize) -> EconomySpec {
        EconomySpec::new(
            vec![
                AgentSpec::new(b1, 1.0, EndowmentSpec::Constant(1.0)),
                AgentSpec::new(b2, 1.0, EndowmentSpec::Constant(1.0)),
            ],
            horizon,
        )
    }

    /// Closed-form log-utility planner share with equal unit endowments.
    fn oracle_share(gamma: f64, b1: f64, b2: f64, t: i32, total: f64) -> f64 {
        let a = gamma * b1.powi(t);
        total * a / (a + (1.0 - gamma) * b2.powi(t))
    }

    #[test]
    fn symmetric_planner() {
        let econ = pair(0.9, 0.9, 12);
        let sol = planner_allocation(&econ, &NegishiWeights::uniform(2)).unwrap();
        for t in 0..=12 {
            for j in 0..2 {
                assert!((sol.allocation.consumption[j][t] - 1.0).abs() < 1e-14);
            }
            let lambda = sol.log_multipliers[t].exp();
            assert!((lambda - 0.5 * 0.9f64.powi(t as i32)).abs() < 1e-15);
            assert!((sol.prices.prices[t] - 0.9f64.powi(t as i32)).abs() < 1e-14);
        }
        assert_eq!(sol.prices.prices[0], 1.0);
    }

    #[test]
    fn two_agent_log_planner_matches_closed_form() {
        let econ = pair(0.96, 0.92, 40);
        for gamma in [0.1, 0.3, 0.5, 0.77, 0.95] {
            let sol = planner_allocation(&econ, &NegishiWeights::pair(gamma).unwrap()).unwrap();
            for t in 0..=40 {
                let c = oracle_share(gamma, 0.96, 0.92, t as i32, 2.0);
                assert!((sol.allocation.consumption[0][t] - c).abs() < 1e-12, "gamma {gamma} t {t}");
            }
        }
    }

    #[test]
    fn single_agent_planner_is_autarky() {
        let y = EndowmentSpec::Perturbed { level: 2.0, amplitude: 0.3, decay: 0.7 };
        let econ = EconomySpec::new(vec![AgentSpec::new(0.95, 2.0, y.clone())], 8);
        let sol = planner_allocation(&econ, &NegishiWeights::uniform(1)).unwrap();
        let u = econ.agents[0].utility;
        let y0 = y.at(0).unwrap();
        for t in 0..=8 {
            let yt = y.at(t).unwrap();
            assert!((sol.allocation.consumption[0][t] - yt).abs() < 1e-13 * yt);
            let p = 0.95f64.powi(t as i32) * u.marginal_utility(yt).unwrap()
                / u.marginal_utility(y0).unwrap();
            assert!((sol.prices.prices[t] - p).abs() < 1e-13 * p);
        }
    }

    #[test]
    fn budget_residual_at_wrong_weights() {
        let (b1, b2) = (0.96f64, 0.92f64);
        let econ = pair(b1, b2, 2);
        let gamma = 0.6;
        let sol = planner_allocation(&econ, &NegishiWeights::pair(gamma).unwrap()).unwrap();
        let e = budget_residuals(&econ, &sol.allocation, &sol.prices).unwrap();
        // Direct summation of the closed-form allocation and multipliers.
        let mut expected = 0.0;
        for t in 0..=2 {
            let lambda = |t: i32| (gamma * b1.powi(t) + (1.0 - gamma) * b2.powi(t)) / 2.0;
            let p = lambda(t) / lambda(0);
            expected += p * (1.0 - oracle_share(gamma, b1, b2, t, 2.0));
        }
        assert!(e[0] < 0.0);
        assert!((e[0] - expected).abs() < 1e-13, "{} vs {expected}", e[0]);
        assert!((e[0] + 0.6224).abs() < 1e-12);
        assert!((e[0] + e[1]).abs() < 1e-12);
    }

    #[test]
    fn interest_rate_examples() {
        let geometric = PricePath::new((0..5).map(|t| 0.9f64.powi(t)).collect(), vec![1.0; 5]).unwrap();
        for i in implied_interest_rates(&geometric) {
            assert!((i - (1.0 / 0.9 - 1.0)).abs() < 1e-14);
        }
        let flat = PricePath::new(vec![1.0; 4], vec![1.0; 4]).unwrap();
        assert_eq!(implied_interest_rates(&flat), vec![0.0; 3]);
        let one = PricePath::new(vec![1.0, 1.0 / 1.04], vec![1.0; 2]).unwrap();
        assert!((implied_interest_rates(&one)[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn nominal_rates_include_inflation() {
        let prices = PricePath::new(vec![1.0, 0.9], vec![1.0, 1.05]).unwrap();
        let i = implied_interest_rates(&prices)[0];
        assert!((i - (1.05 / 0.9 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_equilibrium() {
        let eq = solve_equilibrium(&pair(0.9, 0.9, 10), &SolverOptions::default()).unwrap();
        assert!((eq.weights.as_slice()[0] - 0.5).abs() < 1e-15);
        for row in &eq.allocation.consumption {
            assert!(row.iter().all(|c| (c - 1.0).abs() < 1e-13));
        }
        for i in &eq.interest_rates {
            assert!((i - (1.0 / 0.9 - 1.0)).abs() < 1e-12);
        }
        for row in &eq.bonds {
            assert!(row.iter().all(|b| b.abs() < 1e-12));
        }
        assert_eq!(eq.trace.method, SolveMethod::Bisection);
    }

    #[test]
    fn heterogeneous_pair_weight_and_bonds() {
        let (b1, b2) = (0.96f64, 0.92f64);
        let eq = solve_equilibrium(&pair(b1, b2, 2), &SolverOptions::default()).unwrap();
        let s1 = 1.0 + b1 + b1 * b1;
        let s2 = 1.0 + b2 + b2 * b2;
        let gamma = s2 / (s1 + s2);
        assert!((eq.weights.as_slice()[0] - gamma).abs() < 1e-12);
        assert!((gamma - 0.489802).abs() < 5e-7);
        let c10 = eq.allocation.consumption[0][0];
        assert!((c10 - 2.0 * gamma).abs() < 1e-12);
        // The patient agent lends in period 0.
        let b10 = (1.0 + eq.interest_rates[0]) * (1.0 - c10);
        assert!((eq.bonds[0][0] - b10).abs() < 1e-14);
        assert!(eq.bonds[0][0] > 0.0);
    }

    #[test]
    fn single_agent_equilibrium() {
        let econ = EconomySpec::new(
            vec![AgentSpec::new(
                0.9,
                3.0,
                EndowmentSpec::Sequence(vec![1.0, 2.0, 0.5, 1.5]),
            )],
            3,
        );
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        assert_eq!(eq.weights.as_slice(), &[1.0]);
        assert_eq!(eq.trace.method, SolveMethod::Autarky);
        for (t, y) in [1.0, 2.0, 0.5, 1.5].iter().enumerate() {
            assert!((eq.allocation.consumption[0][t] - y).abs() < 1e-14);
        }
        assert!(eq.bonds[0].iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn forced_zero_is_refused() {
        let econ = pair(0.96, 0.92, 5).with_regime(BondRegime::ForcedZero);
        assert!(matches!(
            solve_equilibrium(&econ, &SolverOptions::default()),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn invalid_economy_is_refused() {
        let econ = pair(1.2, 0.92, 5);
        match solve_equilibrium(&econ, &SolverOptions::default()) {
            Err(Error::Invalid(v)) => assert_eq!(v[0].field, "agents[0].beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn insolvent_agent_reports_non_convergence() {
        let econ = pair(0.9, 0.9, 3).with_initial_bonds(vec![-100.0, 100.0]);
        assert!(matches!(
            solve_equilibrium(&econ, &SolverOptions::default()),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn three_agents_converge() {
        let econ = EconomySpec::new(
            vec![
                AgentSpec::new(0.97, 1.0, EndowmentSpec::Constant(1.0)),
                AgentSpec::new(0.93, 2.0, EndowmentSpec::Constant(0.5)),
                AgentSpec::new(0.90, 3.0, EndowmentSpec::Perturbed { level: 2.0, amplitude: 0.4, decay: 0.8 }),
            ],
            30,
        )
        .with_initial_bonds(vec![0.3, -0.1, -0.2]);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        assert!(eq.trace.residual_norm < 1e-10);
        let e = budget_residuals(&econ, &eq.allocation, &eq.prices).unwrap();
        assert!(e.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn bond_recovery_rejects_unbalanced_paths() {
        let econ = pair(0.96, 0.92, 4);
        let sol = planner_allocation(&econ, &NegishiWeights::pair(0.7).unwrap()).unwrap();
        let rates = implied_interest_rates(&sol.prices);
        assert!(matches!(
            recover_bond_path(&econ, &sol.allocation, &sol.prices, &rates),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn linear_solver() {
        let x = solve_linear(vec![vec![0.0, 2.0], vec![1.0, 1.0]], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve_linear(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]).is_none());
    }
}
