//! Audits of allocations against the household first-order conditions,
//! the constant marginal-utility-ratio law, the forced-zero-bond
//! feasibility test and re-solve based time-consistency checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AgentSpec, BondRegime, EconomySpec, EndowmentSpec};
use crate::solver::{self, Allocation, EquilibriumResult, PricePath, SolverOptions};

/// Default verdict tolerance for the zero-bond detector.
pub const SPREAD_TOL: f64 = 1e-12;

/// Gates applied to a [`ResidualReport`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualTolerances {
    pub euler: f64,
    /// Relative to aggregate endowment.
    pub clearing: f64,
    pub budget: f64,
    pub mu_ratio_drift: f64,
}

impl Default for ResidualTolerances {
    fn default() -> Self {
        Self { euler: 1e-10, clearing: 1e-10, budget: 1e-10, mu_ratio_drift: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `[agent][period]` for periods `0..T`.
    pub euler: Vec<Vec<f64>>,
    /// `(sum_j C_jt - Y_t) / Y_t`.
    pub clearing: Vec<f64>,
    pub budget: Vec<f64>,
    /// Agent pairs `(j, k)`, `j < k`, indexing the two pair-wise fields below.
    pub pairs: Vec<(usize, usize)>,
    pub mu_ratio_drift: Vec<f64>,
    /// Empirical `gamma_jk` recovered from period-0 marginal utilities.
    pub implied_gamma: Vec<f64>,
}

/// A single worst offender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offender {
    pub agent: Option<usize>,
    pub period: Option<usize>,
    pub value: f64,
}

fn max_abs<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl ResidualReport {
    pub fn max_euler(&self) -> f64 {
        max_abs(self.euler.iter().flatten())
    }

    pub fn max_clearing(&self) -> f64 {
        max_abs(&self.clearing)
    }

    pub fn max_budget(&self) -> f64 {
        max_abs(&self.budget)
    }

    pub fn max_mu_ratio_drift(&self) -> f64 {
        max_abs(&self.mu_ratio_drift)
    }

    pub fn worst_euler(&self) -> Option<Offender> {
        self.euler
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().enumerate().map(move |(t, r)| (j, t, *r)))
            .max_by(|a, b| a.2.abs().total_cmp(&b.2.abs()))
            .map(|(j, t, r)| Offender { agent: Some(j), period: Some(t), value: r })
    }

    pub fn worst_clearing(&self) -> Option<Offender> {
        self.clearing
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(t, r)| Offender { agent: None, period: Some(t), value: *r })
    }

    pub fn worst_budget(&self) -> Option<Offender> {
        self.budget
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, r)| Offender { agent: Some(j), period: None, value: *r })
    }

    pub fn passes(&self, tol: &ResidualTolerances) -> bool {
        self.max_euler() < tol.euler
            && self.max_clearing() < tol.clearing
            && self.max_budget() < tol.budget
            && self.max_mu_ratio_drift() < tol.mu_ratio_drift
    }
}

/// `r_jt = beta_j u_j'(C_j,t+1) / u_j'(C_jt) - p_{t+1} / p_t`.
pub fn euler_residuals(econ: &EconomySpec, alloc: &Allocation, prices: &PricePath) -> Result<Vec<Vec<f64>>> {
    solver::check_shapes(econ, alloc, prices)?;
    let p = &prices.prices;
    Ok(econ
        .agents
        .iter()
        .zip(&alloc.consumption)
        .map(|(agent, c)| {
            let u = agent.utility;
            (0..econ.horizon)
                .map(|t| {
                    agent.beta * u.mu_unchecked(c[t + 1]) / u.mu_unchecked(c[t]) - p[t + 1] / p[t]
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuRatioPath {
    /// `g_t = u_j'(C_jt) / u_k'(C_kt) * (beta_j / beta_k)^t`.
    pub series: Vec<f64>,
    pub log_series: Vec<f64>,
    /// `max_t |g_t / g_0 - 1|`.
    pub drift: f64,
}

impl MuRatioPath {
    /// `gamma` implied by `g_0 = (1 - gamma) / gamma`.
    pub fn implied_gamma(&self) -> f64 {
        1.0 / (1.0 + self.series[0])
    }
}

/// Marginal-utility ratio of agents `j` and `k`, rescaled by relative
/// discounting. Constant in `t` at any interior equilibrium.
pub fn mu_ratio_path(econ: &EconomySpec, alloc: &Allocation, j: usize, k: usize) -> Result<MuRatioPath> {
    if j == k {
        return Err(Error::Shape(format!("mu ratio needs two distinct agents, got {j} twice")));
    }
    let n = econ.n_agents();
    if j >= n || k >= n || alloc.n_agents() != n {
        return Err(Error::Shape(format!("agent pair ({j}, {k}) out of range for {n} agents")));
    }
    let (aj, ak) = (&econ.agents[j], &econ.agents[k]);
    let log_beta_ratio = aj.beta.ln() - ak.beta.ln();
    let log_series: Vec<f64> = (0..alloc.n_periods())
        .map(|t| {
            -aj.utility.sigma * alloc.consumption[j][t].ln()
                + ak.utility.sigma * alloc.consumption[k][t].ln()
                + t as f64 * log_beta_ratio
        })
        .collect();
    let series = log_series.iter().map(|l| l.exp()).collect();
    let g0 = log_series[0];
    let drift = log_series.iter().map(|l| (l - g0).exp_m1().abs()).fold(0.0, f64::max);
    Ok(MuRatioPath { series, log_series, drift })
}

/// Full residual audit of a (possibly externally produced) allocation.
pub fn audit(econ: &EconomySpec, alloc: &Allocation, prices: &PricePath) -> Result<ResidualReport> {
    solver::check_shapes(econ, alloc, prices)?;
    let euler = euler_residuals(econ, alloc, prices)?;
    let clearing = (0..=econ.horizon)
        .map(|t| {
            let y = econ.aggregate_endowment(t)?;
            let c: f64 = alloc.consumption.iter().map(|row| row[t]).sum();
            Ok((c - y) / y)
        })
        .collect::<Result<Vec<_>>>()?;
    let budget = solver::budget_residuals(econ, alloc, prices)?;
    let n = econ.n_agents();
    let mut pairs = Vec::new();
    let mut mu_ratio_drift = Vec::new();
    let mut implied_gamma = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let path = mu_ratio_path(econ, alloc, j, k)?;
            pairs.push((j, k));
            mu_ratio_drift.push(path.drift);
            implied_gamma.push(path.implied_gamma());
        }
    }
    Ok(ResidualReport { euler, clearing, budget, pairs, mu_ratio_drift, implied_gamma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub regime: BondRegime,
    /// Gross nominal rate `1 + i_t` each agent's Euler equation demands at
    /// autarky, `[agent][period]` for `t = 0..T`.
    pub required_rates: Vec<Vec<f64>>,
    /// Cross-agent spread of required rates, per period.
    pub spread_by_period: Vec<f64>,
    pub rate_spread: f64,
    pub pairs: Vec<(usize, usize)>,
    /// `|ln(beta_j / beta_k)|` per pair: the per-period growth of the
    /// log marginal-utility ratio under autarky.
    pub drift_per_period: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Tests whether any single interest-rate path supports the autarky
/// allocation that zero bond positions impose.
pub fn zero_bond_feasibility(econ: &EconomySpec, tol: f64) -> Result<ConsistencyReport> {
    econ.ensure_valid()?;
    if econ.regime != BondRegime::ForcedZero {
        return Err(Error::Regime(
            "zero_bond_feasibility applies to forced_zero economies; use the solver for free_trade".into(),
        ));
    }
    // With B == 0 the budget pins consumption to the endowment.
    let endowments = econ.endowment_matrix()?;
    for (j, row) in endowments.iter().enumerate() {
        if let Some((t, _)) = row.iter().enumerate().find(|(_, y)| !(**y > 0.0)) {
            return Err(Error::Invalid(vec![crate::model::Violation::new(
                format!("agents[{j}].endowment"),
                format!("autarky needs positive endowment, period {t} is zero"),
            )]));
        }
    }
    let level = &econ.price_level;
    let required_rates: Vec<Vec<f64>> = econ
        .agents
        .iter()
        .zip(&endowments)
        .map(|(agent, y)| {
            let u = agent.utility;
            (0..econ.horizon)
                .map(|t| {
                    level[t + 1] / level[t] * u.mu_unchecked(y[t])
                        / (agent.beta * u.mu_unchecked(y[t + 1]))
                })
                .collect()
        })
        .collect();
    let spread_by_period: Vec<f64> = (0..econ.horizon)
        .map(|t| {
            let (lo, hi) = required_rates
                .iter()
                .map(|r| r[t])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            hi - lo
        })
        .collect();
    let rate_spread = spread_by_period.iter().cloned().fold(0.0, f64::max);
    let n = econ.n_agents();
    let mut pairs = Vec::new();
    let mut drift_per_period = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            pairs.push((j, k));
            drift_per_period.push((econ.agents[j].beta / econ.agents[k].beta).ln().abs());
        }
    }
    let verdict = if rate_spread > tol { Verdict::Inconsistent } else { Verdict::Consistent };
    Ok(ConsistencyReport {
        regime: econ.regime,
        required_rates,
        spread_by_period,
        rate_spread,
        pairs,
        drift_per_period,
        tolerance: tol,
        verdict,
    })
}

/// The economy that remains from period `s` on, entered with the bond
/// claims `eq` carries out of period `s - 1`.
pub fn continuation_economy(econ: &EconomySpec, bonds: &[Vec<f64>], s: usize) -> Result<EconomySpec> {
    if s < 1 || s >= econ.horizon {
        return Err(Error::Index { t: s, horizon: econ.horizon });
    }
    if bonds.len() != econ.n_agents() || bonds.iter().any(|row| row.len() != econ.n_periods()) {
        return Err(Error::Shape("bond paths do not match the economy".into()));
    }
    let agents = econ
        .agents
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let endowment = match &a.endowment {
                EndowmentSpec::Constant(level) => EndowmentSpec::Constant(*level),
                _ => EndowmentSpec::Sequence(
                    (s..=econ.horizon).map(|t| econ.endowment(j, t)).collect::<Result<_>>()?,
                ),
            };
            Ok(AgentSpec { endowment, ..a.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EconomySpec {
        agents,
        horizon: econ.horizon - s,
        regime: econ.regime,
        initial_bonds: bonds.iter().map(|row| row[s - 1]).collect(),
        price_level: econ.price_level[s..].to_vec(),
    })
}

/// Re-solves the economy from period `s` and returns the largest absolute
/// gap between the re-optimized consumption and the tail of `eq`.
pub fn time_consistency_check(
    econ: &EconomySpec,
    eq: &EquilibriumResult,
    s: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    if econ.regime != BondRegime::FreeTrade {
        return Err(Error::Regime("time consistency is checked on free_trade equilibria".into()));
    }
    let tail = continuation_economy(econ, &eq.bonds, s)?;
    let resolved = solver::solve_equilibrium(&tail, opts)?;
    let deviation = resolved
        .allocation
        .consumption
        .iter()
        .zip(&eq.allocation.consumption)
        .flat_map(|(new, old)| new.iter().zip(&old[s..]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(deviation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{planner_allocation, solve_equilibrium, NegishiWeights};

    fn pair(b1: f64, b2: f64, horizon: usize) -> EconomySpec {
        EconomySpec::new(
            vec![
                AgentSpec::new(b1, 1.0, EndowmentSpec::Constant(1.0)),
                AgentSpec::new(b2, 1.0, EndowmentSpec::Constant(1.0)),
            ],
            horizon,
        )
    }

    fn autarky(econ: &EconomySpec) -> Allocation {
        Allocation::new(econ.endowment_matrix().unwrap()).unwrap()
    }

    #[test]
    fn symmetric_equilibrium_has_zero_euler_residuals() {
        let econ = pair(0.9, 0.9, 20);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        let r = euler_residuals(&econ, &eq.allocation, &eq.prices).unwrap();
        assert!(r.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn autarky_euler_residuals() {
        let econ = pair(0.96, 0.92, 6);
        let prices = PricePath::new((0..7).map(|t| 0.96f64.powi(t)).collect(), vec![1.0; 7]).unwrap();
        let r = euler_residuals(&econ, &autarky(&econ), &prices).unwrap();
        for t in 0..6 {
            assert!(r[0][t].abs() < 1e-15);
            assert!((r[1][t] + 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbing_one_entry_moves_two_residuals() {
        let econ = pair(0.96, 0.92, 8);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        let base = euler_residuals(&econ, &eq.allocation, &eq.prices).unwrap();
        let mut bumped = eq.allocation.clone();
        let t0 = 4;
        bumped.consumption[1][t0] += 1e-4;
        let r = euler_residuals(&econ, &bumped, &eq.prices).unwrap();
        for t in 0..8 {
            let changed = (r[1][t] - base[1][t]).abs() > 1e-12;
            assert_eq!(changed, t == t0 - 1 || t == t0, "period {t}");
            assert_eq!(r[0][t], base[0][t]);
        }
        // Higher C_t lowers u'(C_t): the ratio into t falls, the ratio out of t rises.
        assert!(r[1][t0 - 1] < base[1][t0 - 1]);
        assert!(r[1][t0] > base[1][t0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let econ = pair(0.9, 0.9, 4);
        let alloc = Allocation::new(vec![vec![1.0; 5], vec![1.0; 5]]).unwrap();
        let prices = PricePath::new(vec![1.0; 4], vec![1.0; 4]).unwrap();
        assert!(matches!(euler_residuals(&econ, &alloc, &prices), Err(Error::Shape(_))));
        assert!(matches!(audit(&econ, &alloc, &prices), Err(Error::Shape(_))));
    }

    #[test]
    fn mu_ratio_at_heterogeneous_equilibrium() {
        let econ = pair(0.96, 0.92, 2);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        let path = mu_ratio_path(&econ, &eq.allocation, 0, 1).unwrap();
        let s1 = 1.0 + 0.96 + 0.96f64 * 0.96;
        let s2 = 1.0 + 0.92 + 0.92f64 * 0.92;
        let gamma = s2 / (s1 + s2);
        let expected = (1.0 - gamma) / gamma;
        assert!((expected - 1.041642).abs() < 1e-6);
        for g in &path.series {
            assert!((g - expected).abs() < 1e-12);
        }
        assert!(path.drift < 1e-12);
        assert!((path.implied_gamma() - gamma).abs() < 1e-12);
    }

    #[test]
    fn mu_ratio_symmetric_is_one() {
        let econ = pair(0.9, 0.9, 10);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        let path = mu_ratio_path(&econ, &eq.allocation, 0, 1).unwrap();
        assert!(path.series.iter().all(|g| (g - 1.0).abs() < 1e-13));
    }

    #[test]
    fn mu_ratio_under_autarky_drifts_linearly_in_logs() {
        let econ = pair(0.96, 0.92, 60);
        let path = mu_ratio_path(&econ, &autarky(&econ), 0, 1).unwrap();
        let slope = (0.96f64 / 0.92).ln();
        for (t, l) in path.log_series.iter().enumerate() {
            assert!((l - t as f64 * slope).abs() < 1e-12);
        }
        assert!((path.drift - ((60.0 * slope).exp() - 1.0)).abs() < 1e-10);
        assert!(mu_ratio_path(&econ, &autarky(&econ), 1, 1).is_err());
    }

    #[test]
    fn audit_of_autarky_drift_grows_with_horizon() {
        let mut last = 0.0;
        for horizon in [5, 10, 20, 40] {
            let econ = pair(0.96, 0.92, horizon);
            let alloc = autarky(&econ);
            let prices = planner_allocation(&econ, &NegishiWeights::uniform(2)).unwrap().prices;
            let report = audit(&econ, &alloc, &prices).unwrap();
            assert!(report.mu_ratio_drift[0] > last);
            last = report.mu_ratio_drift[0];
        }
    }

    #[test]
    fn audit_localizes_a_corrupted_entry() {
        let econ = pair(0.96, 0.92, 10);
        let eq = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
        let mut alloc = eq.allocation.clone();
        alloc.consumption[0][7] *= 1.01;
        let report = audit(&econ, &alloc, &eq.prices).unwrap();
        assert_eq!(report.worst_clearing().unwrap().period, Some(7));
        let worst = report.worst_euler().unwrap();
        assert_eq!(worst.agent, Some(0));
        assert!(worst.period == Some(6) || worst.period == Some(7));
        assert!(!report.passes(&ResidualTolerances::default()));
        assert!(eq.residuals.passes(&ResidualTolerances::default()));
    }

    #[test]
    fn zero_bond_detector_examples() {
        let econ = pair(0.96, 0.92, 10).with_regime(BondRegime::ForcedZero);
        let report = zero_bond_feasibility(&econ, SPREAD_TOL).unwrap();
        for t in 0..10 {
            assert!((report.required_rates[0][t] - 1.0 / 0.96).abs() < 1e-15);
            assert!((report.required_rates[1][t] - 1.0 / 0.92).abs() < 1e-15);
        }
        assert!((report.rate_spread - 0.045290).abs() < 1e-6);
        assert!((report.drift_per_period[0] - 0.042560).abs() < 1e-6);
        assert_eq!(report.verdict, Verdict::Inconsistent);

        let equal = pair(0.9, 0.9, 10).with_regime(BondRegime::ForcedZero);
        let report = zero_bond_feasibility(&equal, SPREAD_TOL).unwrap();
        assert_eq!(report.rate_spread, 0.0);
        assert_eq!(report.verdict, Verdict::Consistent);

        let single = EconomySpec::new(vec![AgentSpec::new(0.9, 2.0, EndowmentSpec::Constant(1.0))], 5)
            .with_regime(BondRegime::ForcedZero);
        let report = zero_bond_feasibility(&single, SPREAD_TOL).unwrap();
        assert_eq!(report.rate_spread, 0.0);
        assert!(report.pairs.is_empty());
        assert_eq!(report.verdict, Verdict::Consistent);
    }

    #[test]
    fn zero_bond_detector_rejects_free_trade() {
        assert!(matches!(
            zero_bond_feasibility(&pair(0.96, 0.92, 3), SPREAD_TOL),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn time_consistency_symmetric_and_heterogeneous() {
        let opts = SolverOptions::default();
        let econ = pair(0.9, 0.9, 12);
        let eq = solve_equilibrium(&econ, &opts).unwrap();
        for s in 1..12 {
            assert!(time_consistency_check(&econ, &eq, s, &opts).unwrap() < 1e-10);
        }
        let econ = pair(0.96, 0.92, 2);
        let eq = solve_equilibrium(&econ, &opts).unwrap();
        assert!(time_consistency_check(&econ, &eq, 1, &opts).unwrap() < 1e-8);
        assert!(matches!(time_consistency_check(&econ, &eq, 2, &opts), Err(Error::Index { .. })));
        assert!(matches!(time_consistency_check(&econ, &eq, 0, &opts), Err(Error::Index { .. })));
    }

    #[test]
    fn corrupted_bonds_break_time_consistency() {
        let opts = SolverOptions::default();
        let econ = pair(0.96, 0.92, 10);
        let mut eq = solve_equilibrium(&econ, &opts).unwrap();
        assert!(time_consistency_check(&econ, &eq, 4, &opts).unwrap() < 1e-8);
        eq.bonds[0][3] += 0.01;
        eq.bonds[1][3] -= 0.01;
        assert!(time_consistency_check(&econ, &eq, 4, &opts).unwrap() > 1e-4);
    }
}
