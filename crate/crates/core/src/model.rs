//! Economy definitions: agents with CRRA utility and endowment streams,
//! a finite horizon, a bond regime and the price-level normalization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the adding-up check on initial bond positions.
pub const BOND_NETTING_TOL: f64 = 1e-9;

/// Constant relative risk aversion period utility. `sigma == 1` is log utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub sigma: f64,
}

impl UtilitySpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain { what: "sigma", value: sigma });
        }
        Ok(Self { sigma })
    }

    pub fn log() -> Self {
        Self { sigma: 1.0 }
    }

    /// `u'(c) = c^(-sigma)`.
    pub fn marginal_utility(&self, c: f64) -> Result<f64> {
        if !(c > 0.0) {
            return Err(Error::Domain { what: "consumption", value: c });
        }
        Ok(self.mu_unchecked(c))
    }

    /// Inverse of [`marginal_utility`](Self::marginal_utility): `m^(-1/sigma)`.
    pub fn inverse_marginal(&self, m: f64) -> Result<f64> {
        if !(m > 0.0) {
            return Err(Error::Domain { what: "marginal utility", value: m });
        }
        Ok(if self.sigma == 1.0 {
            1.0 / m
        } else {
            m.powf(-1.0 / self.sigma)
        })
    }

    pub(crate) fn mu_unchecked(&self, c: f64) -> f64 {
        if self.sigma == 1.0 {
            1.0 / c
        } else {
            c.powf(-self.sigma)
        }
    }

    /// Period utility, log for `sigma == 1`.
    pub fn utility(&self, c: f64) -> f64 {
        if self.sigma == 1.0 {
            c.ln()
        } else {
            (c.powf(1.0 - self.sigma) - 1.0) / (1.0 - self.sigma)
        }
    }
}

/// Goods received by one agent in each period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EndowmentSpec {
    Constant(f64),
    Sequence(Vec<f64>),
    /// `level * (1 + amplitude * decay^t)`.
    Perturbed { level: f64, amplitude: f64, decay: f64 },
}

impl EndowmentSpec {
    /// Endowment at period `t`. Only `Sequence` has an intrinsic length;
    /// horizon checks for the other kinds happen in [`EconomySpec::endowment`].
    pub fn at(&self, t: usize) -> Result<f64> {
        match self {
            EndowmentSpec::Constant(level) => Ok(*level),
            EndowmentSpec::Sequence(values) => values.get(t).copied().ok_or(Error::Index {
                t,
                horizon: values.len().saturating_sub(1),
            }),
            EndowmentSpec::Perturbed { level, amplitude, decay } => {
                if *amplitude == 0.0 {
                    return Ok(*level);
                }
                Ok(level * (1.0 + amplitude * powi(*decay, t)))
            }
        }
    }

    /// Steady level for `Constant` and `Perturbed`, `None` for sequences.
    pub fn base_level(&self) -> Option<f64> {
        match self {
            EndowmentSpec::Constant(level) => Some(*level),
            EndowmentSpec::Perturbed { level, .. } => Some(*level),
            EndowmentSpec::Sequence(_) => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            EndowmentSpec::Constant(_) => true,
            EndowmentSpec::Perturbed { amplitude, .. } => *amplitude == 0.0,
            EndowmentSpec::Sequence(v) => v.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

pub(crate) fn powi(x: f64, t: usize) -> f64 {
    match i32::try_from(t) {
        Ok(t) => x.powi(t),
        Err(_) => x.powf(t as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub beta: f64,
    pub utility: UtilitySpec,
    pub endowment: EndowmentSpec,
}

impl AgentSpec {
    pub fn new(beta: f64, sigma: f64, endowment: EndowmentSpec) -> Self {
        Self { beta, utility: UtilitySpec { sigma }, endowment }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondRegime {
    FreeTrade,
    /// The monetary authority pins every household bond position at zero.
    ForcedZero,
}

impl fmt::Display for BondRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BondRegime::FreeTrade => "free_trade",
            BondRegime::ForcedZero => "forced_zero",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomySpec {
    pub agents: Vec<AgentSpec>,
    /// Final period index; periods run `0..=horizon`.
    pub horizon: usize,
    pub regime: BondRegime,
    /// Bond claims held entering period 0, in period-0 currency.
    pub initial_bonds: Vec<f64>,
    /// Price level `P_t`, one entry per period.
    pub price_level: Vec<f64>,
}

impl EconomySpec {
    /// Free-trade economy with zero initial bonds and unit price level.
    pub fn new(agents: Vec<AgentSpec>, horizon: usize) -> Self {
        let n = agents.len();
        Self {
            agents,
            horizon,
            regime: BondRegime::FreeTrade,
            initial_bonds: vec![0.0; n],
            price_level: vec![1.0; horizon + 1],
        }
    }

    pub fn with_regime(mut self, regime: BondRegime) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_initial_bonds(mut self, bonds: Vec<f64>) -> Self {
        self.initial_bonds = bonds;
        self
    }

    pub fn with_price_level(mut self, price_level: Vec<f64>) -> Self {
        self.price_level = price_level;
        self
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_periods(&self) -> usize {
        self.horizon + 1
    }

    pub fn endowment(&self, agent: usize, t: usize) -> Result<f64> {
        if t > self.horizon {
            return Err(Error::Index { t, horizon: self.horizon });
        }
        self.agents[agent].endowment.at(t)
    }

    /// Total goods available in period `t`.
    pub fn aggregate_endowment(&self, t: usize) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..self.agents.len() {
            total += self.endowment(j, t)?;
        }
        if !(total > 0.0) {
            return Err(Error::Invalid(vec![Violation::new(
                "agents[].endowment",
                format!("aggregate endowment at period {t} is {total}, must be positive"),
            )]));
        }
        Ok(total)
    }

    /// Endowment matrix indexed `[agent][period]`.
    pub fn endowment_matrix(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.agents.len())
            .map(|j| (0..=self.horizon).map(|t| self.endowment(j, t)).collect())
            .collect()
    }

    /// Checks every structural invariant and returns the full list of
    /// violations rather than stopping at the first.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if self.agents.is_empty() {
            v.push(Violation::new("agents", "at least one agent is required"));
        }
        if self.horizon < 1 {
            v.push(Violation::new("horizon", "horizon must be at least 1"));
        }
        for (j, agent) in self.agents.iter().enumerate() {
            if !(agent.beta > 0.0 && agent.beta < 1.0) {
                v.push(Violation::new(
                    format!("agents[{j}].beta"),
                    format!("discount factor must lie in (0, 1), got {}", agent.beta),
                ));
            }
            let sigma = agent.utility.sigma;
            if !(sigma > 0.0 && sigma.is_finite()) {
                v.push(Violation::new(
                    format!("agents[{j}].sigma"),
                    format!("curvature must be positive, got {sigma}"),
                ));
            }
            validate_endowment(j, &agent.endowment, self.horizon, &mut v);
        }
        if self.initial_bonds.len() != self.agents.len() {
            v.push(Violation::new(
                "initial_bonds",
                format!(
                    "expected {} entries, got {}",
                    self.agents.len(),
                    self.initial_bonds.len()
                ),
            ));
        } else {
            for (j, b) in self.initial_bonds.iter().enumerate() {
                if !b.is_finite() {
                    v.push(Violation::new(format!("initial_bonds[{j}]"), "must be finite"));
                }
            }
            if self.regime == BondRegime::ForcedZero
                && self.initial_bonds.iter().any(|&b| b != 0.0)
            {
                v.push(Violation::new(
                    "initial_bonds",
                    "ForcedZero requires zero initial bonds",
                ));
            }
            let sum: f64 = self.initial_bonds.iter().sum();
            let scale: f64 = self.initial_bonds.iter().map(|b| b.abs()).sum::<f64>().max(1.0);
            if sum.abs() > BOND_NETTING_TOL * scale {
                v.push(Violation::new(
                    "initial_bonds",
                    format!("bonds must net to zero, sum is {sum}"),
                ));
            }
        }
        if self.price_level.len() != self.horizon + 1 {
            v.push(Violation::new(
                "price_level",
                format!(
                    "expected {} entries, got {}",
                    self.horizon + 1,
                    self.price_level.len()
                ),
            ));
        }
        for (t, p) in self.price_level.iter().enumerate() {
            if !(*p > 0.0 && p.is_finite()) {
                v.push(Violation::new(
                    format!("price_level[{t}]"),
                    format!("price level must be positive, got {p}"),
                ));
            }
        }
        if v.is_empty() && self.horizon >= 1 {
            for t in 0..=self.horizon {
                let total: f64 = self
                    .agents
                    .iter()
                    .map(|a| a.endowment.at(t).unwrap_or(0.0))
                    .sum();
                if !(total > 0.0) {
                    v.push(Violation::new(
                        "agents[].endowment",
                        format!("aggregate endowment at period {t} must be positive"),
                    ));
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Validates and converts a failing report into [`Error::Invalid`].
    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().into_result()
    }
}

fn validate_endowment(j: usize, e: &EndowmentSpec, horizon: usize, v: &mut Vec<Violation>) {
    let field = format!("agents[{j}].endowment");
    match e {
        EndowmentSpec::Constant(level) => {
            if !(*level >= 0.0 && level.is_finite()) {
                v.push(Violation::new(
                    format!("{field}.level"),
                    format!("must be nonnegative, got {level}"),
                ));
            } else if *level == 0.0 {
                v.push(Violation::new(
                    format!("{field}.level"),
                    "endowment must be positive in at least one period",
                ));
            }
        }
        EndowmentSpec::Sequence(values) => {
            if values.len() < horizon + 1 {
                v.push(Violation::new(
                    format!("{field}.values"),
                    format!("expected at least {} values, got {}", horizon + 1, values.len()),
                ));
            }
            if let Some((t, x)) = values
                .iter()
                .enumerate()
                .find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
            {
                v.push(Violation::new(
                    format!("{field}.values[{t}]"),
                    format!("must be nonnegative, got {x}"),
                ));
            }
            if !values.iter().take(horizon + 1).any(|&x| x > 0.0) {
                v.push(Violation::new(
                    format!("{field}.values"),
                    "endowment must be positive in at least one period",
                ));
            }
        }
        EndowmentSpec::Perturbed { level, amplitude, decay } => {
            if !(*level > 0.0 && level.is_finite()) {
                v.push(Violation::new(
                    format!("{field}.level"),
                    format!("must be positive, got {level}"),
                ));
            }
            if !(*decay >= 0.0 && *decay <= 1.0) {
                v.push(Violation::new(
                    format!("{field}.decay"),
                    format!("must lie in [0, 1], got {decay}"),
                ));
            }
            if !(*amplitude >= -1.0 && amplitude.is_finite()) {
                v.push(Violation::new(
                    format!("{field}.amplitude"),
                    format!("must be at least -1 to keep the endowment nonnegative, got {amplitude}"),
                ));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Dotted path of the offending field, e.g. `agents[0].beta`.
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(self.violations))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_agents() -> EconomySpec {
        EconomySpec::new(
            vec![
                AgentSpec::new(0.9, 1.0, EndowmentSpec::Constant(1.0)),
                AgentSpec::new(0.9, 1.0, EndowmentSpec::Constant(1.0)),
            ],
            10,
        )
    }

    #[test]
    fn marginal_utility_examples() {
        assert_eq!(UtilitySpec::log().marginal_utility(2.0).unwrap(), 0.5);
        assert_eq!(UtilitySpec::new(2.0).unwrap().marginal_utility(2.0).unwrap(), 0.25);
        for sigma in [0.5, 1.0, 2.0, 3.7] {
            assert_eq!(UtilitySpec::new(sigma).unwrap().marginal_utility(1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn inverse_marginal_examples() {
        assert_eq!(UtilitySpec::log().inverse_marginal(0.5).unwrap(), 2.0);
        assert_eq!(UtilitySpec::new(2.0).unwrap().inverse_marginal(0.25).unwrap(), 2.0);
        assert_eq!(UtilitySpec::new(3.0).unwrap().inverse_marginal(1.0).unwrap(), 1.0);
    }

    #[test]
    fn nonpositive_arguments_are_domain_errors() {
        let u = UtilitySpec::log();
        match u.marginal_utility(-0.5) {
            Err(Error::Domain { value, .. }) => assert_eq!(value, -0.5),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(u.marginal_utility(0.0).is_err());
        assert!(u.inverse_marginal(0.0).is_err());
        assert!(u.inverse_marginal(f64::NAN).is_err());
        assert!(UtilitySpec::new(0.0).is_err());
        let msg = u.marginal_utility(-0.5).unwrap_err().to_string();
        assert!(msg.contains("-0.5"), "{msg}");
    }

    #[test]
    fn endowment_examples() {
        assert_eq!(EndowmentSpec::Constant(1.0).at(7).unwrap(), 1.0);
        let p = EndowmentSpec::Perturbed { level: 1.0, amplitude: 0.5, decay: 0.5 };
        assert_eq!(p.at(1).unwrap(), 1.25);
        let flat = EndowmentSpec::Perturbed { level: 1.0, amplitude: 0.0, decay: 0.9 };
        assert_eq!(flat.at(3).unwrap(), 1.0);
        assert!(flat.is_constant());
    }

    #[test]
    fn endowment_out_of_horizon_is_index_error() {
        let econ = two_agents();
        assert!(matches!(econ.endowment(0, 11), Err(Error::Index { t: 11, horizon: 10 })));
        assert!(matches!(
            EndowmentSpec::Sequence(vec![1.0, 2.0]).at(2),
            Err(Error::Index { t: 2, .. })
        ));
    }

    #[test]
    fn aggregate_endowment_examples() {
        assert_eq!(two_agents().aggregate_endowment(0).unwrap(), 2.0);
        let one = EconomySpec::new(vec![AgentSpec::new(0.9, 1.0, EndowmentSpec::Constant(3.0))], 6);
        assert_eq!(one.aggregate_endowment(5).unwrap(), 3.0);
        let mixed = EconomySpec::new(
            vec![
                AgentSpec::new(0.9, 1.0, EndowmentSpec::Constant(1.0)),
                AgentSpec::new(
                    0.9,
                    1.0,
                    EndowmentSpec::Perturbed { level: 1.0, amplitude: 0.5, decay: 0.5 },
                ),
            ],
            3,
        );
        assert_eq!(mixed.aggregate_endowment(0).unwrap(), 2.5);
        let empty = EconomySpec::new(
            vec![AgentSpec::new(0.9, 1.0, EndowmentSpec::Sequence(vec![1.0, 0.0]))],
            1,
        );
        assert!(matches!(empty.aggregate_endowment(1), Err(Error::Invalid(_))));
    }

    #[test]
    fn validation_examples() {
        assert!(two_agents().validate().is_pass());

        let forced = two_agents()
            .with_regime(BondRegime::ForcedZero)
            .with_initial_bonds(vec![0.1, -0.1]);
        let report = forced.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].message, "ForcedZero requires zero initial bonds");

        let unbalanced = two_agents().with_initial_bonds(vec![0.2, 0.1]);
        let report = unbalanced.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.starts_with("bonds must net to zero"));
    }

    #[test]
    fn validation_names_offending_fields() {
        let mut econ = two_agents();
        econ.agents[0].beta = 1.2;
        econ.agents[1].utility.sigma = -1.0;
        econ.horizon = 0;
        let fields: Vec<_> = econ.validate().violations.into_iter().map(|v| v.field).collect();
        assert!(fields.contains(&"agents[0].beta".to_string()));
        assert!(fields.contains(&"agents[1].sigma".to_string()));
        assert!(fields.contains(&"horizon".to_string()));
        assert!(fields.contains(&"price_level".to_string()));
    }

    #[test]
    fn short_sequence_is_rejected() {
        let econ = EconomySpec::new(
            vec![AgentSpec::new(0.9, 1.0, EndowmentSpec::Sequence(vec![1.0, 1.0]))],
            3,
        );
        let report = econ.validate();
        assert_eq!(report.violations[0].field, "agents[0].endowment.values");
    }

    proptest! {
        #[test]
        fn inverse_marginal_round_trips(
            sigma in prop::sample::select(vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0]),
            log_c in -6.0f64..6.0,
        ) {
            let c = 10f64.powf(log_c);
            let u = UtilitySpec::new(sigma).unwrap();
            let back = u.inverse_marginal(u.marginal_utility(c).unwrap()).unwrap();
            prop_assert!(((back - c) / c).abs() <= 1e-12, "sigma {sigma} c {c} back {back}");
        }

        #[test]
        fn marginal_utility_is_strictly_decreasing(
            sigma in 0.1f64..6.0,
            a in 1e-6f64..1e3,
            gap in 1e-3f64..1e3,
        ) {
            let u = UtilitySpec::new(sigma).unwrap();
            let (lo, hi) = (a, a + gap);
            prop_assert!(u.marginal_utility(lo).unwrap() > u.marginal_utility(hi).unwrap());
        }

        #[test]
        fn perturbed_endowment_error_bound(
            level in 0.01f64..10.0,
            amplitude in -1.0f64..2.0,
            decay in 0.0f64..1.0,
            t in 0usize..200,
        ) {
            let e = EndowmentSpec::Perturbed { level, amplitude, decay };
            let y = e.at(t).unwrap();
            let bound = level * amplitude.abs() * powi(decay, t);
            prop_assert!((y - level).abs() <= bound * (1.0 + 1e-15) + f64::EPSILON * level);
        }
    }
}
