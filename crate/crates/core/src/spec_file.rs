//! TOML economy files.
//!
//! ```toml
//! horizon = 10
//! regime = "free_trade"          # or "forced_zero"
//! initial_bonds = [0.0, 0.0]
//! price_level = [1.0, ...]       # optional, defaults to 1 every period
//!
//! [[agents]]
//! beta = 0.96
//! sigma = 1.0
//! endowment = { kind = "constant", level = 1.0 }
//! ```
//!
//! Endowment kinds are `constant` (`level`), `sequence` (`values`) and
//! `perturbed` (`level`, `amplitude`, `decay`). Unknown keys and keys that
//! do not belong to the chosen kind are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentSpec, BondRegime, EconomySpec, EndowmentSpec, UtilitySpec};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEconomy {
    agents: Vec<RawAgent>,
    horizon: i64,
    regime: RawRegime,
    initial_bonds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    price_level: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    beta: f64,
    sigma: f64,
    endowment: RawEndowment,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum RawRegime {
    #[serde(alias = "FreeTrade")]
    FreeTrade,
    #[serde(alias = "ForcedZero")]
    ForcedZero,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEndowment {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decay: Option<f64>,
}

impl RawEndowment {
    fn into_spec(self, j: usize) -> Result<EndowmentSpec> {
        let field = |name: &str| format!("agents[{j}].endowment.{name}");
        let missing = |name: &str| Error::Parse(format!("{} is required", field(name)));
        let forbid = |present: bool, name: &str| -> Result<()> {
            if present {
                Err(Error::Parse(format!(
                    "{} is not allowed for endowment kind `{}`",
                    field(name),
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "constant" => {
                forbid(self.values.is_some(), "values")?;
                forbid(self.amplitude.is_some(), "amplitude")?;
                forbid(self.decay.is_some(), "decay")?;
                Ok(EndowmentSpec::Constant(self.level.ok_or_else(|| missing("level"))?))
            }
            "sequence" => {
                forbid(self.level.is_some(), "level")?;
                forbid(self.amplitude.is_some(), "amplitude")?;
                forbid(self.decay.is_some(), "decay")?;
                Ok(EndowmentSpec::Sequence(self.values.clone().ok_or_else(|| missing("values"))?))
            }
            "perturbed" => {
                forbid(self.values.is_some(), "values")?;
                Ok(EndowmentSpec::Perturbed {
                    level: self.level.ok_or_else(|| missing("level"))?,
                    amplitude: self.amplitude.ok_or_else(|| missing("amplitude"))?,
                    decay: self.decay.ok_or_else(|| missing("decay"))?,
                })
            }
            other => Err(Error::Parse(format!(
                "{}: unknown endowment kind `{other}` (expected constant, sequence or perturbed)",
                field("kind")
            ))),
        }
    }

    fn from_spec(e: &EndowmentSpec) -> Self {
        match e {
            EndowmentSpec::Constant(level) => {
                Self { kind: "constant".into(), level: Some(*level), ..Self::default() }
            }
            EndowmentSpec::Sequence(values) => {
                Self { kind: "sequence".into(), values: Some(values.clone()), ..Self::default() }
            }
            EndowmentSpec::Perturbed { level, amplitude, decay } => Self {
                kind: "perturbed".into(),
                level: Some(*level),
                amplitude: Some(*amplitude),
                decay: Some(*decay),
                values: None,
            },
        }
    }
}

/// Parses an economy file. The result is structurally well formed but not
/// yet validated; call [`EconomySpec::validate`] before solving.
pub fn parse_economy(text: &str) -> Result<EconomySpec> {
    let raw: RawEconomy = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if raw.horizon < 0 {
        return Err(Error::Parse(format!("horizon must be nonnegative, got {}", raw.horizon)));
    }
    let horizon = raw.horizon as usize;
    let agents = raw
        .agents
        .into_iter()
        .enumerate()
        .map(|(j, a)| {
            Ok(AgentSpec {
                beta: a.beta,
                utility: UtilitySpec { sigma: a.sigma },
                endowment: a.endowment.into_spec(j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EconomySpec {
        agents,
        horizon,
        regime: match raw.regime {
            RawRegime::FreeTrade => BondRegime::FreeTrade,
            RawRegime::ForcedZero => BondRegime::ForcedZero,
        },
        initial_bonds: raw.initial_bonds,
        price_level: raw.price_level.unwrap_or_else(|| vec![1.0; horizon + 1]),
    })
}

pub fn read_economy(path: &Path) -> Result<EconomySpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_economy(&text)
}

/// Serializes an economy back to the file format. The price level is
/// omitted when it is the default unit path.
pub fn economy_to_string(econ: &EconomySpec) -> String {
    let raw = RawEconomy {
        agents: econ
            .agents
            .iter()
            .map(|a| RawAgent {
                beta: a.beta,
                sigma: a.utility.sigma,
                endowment: RawEndowment::from_spec(&a.endowment),
            })
            .collect(),
        horizon: econ.horizon as i64,
        regime: match econ.regime {
            BondRegime::FreeTrade => RawRegime::FreeTrade,
            BondRegime::ForcedZero => RawRegime::ForcedZero,
        },
        initial_bonds: econ.initial_bonds.clone(),
        price_level: if econ.price_level.iter().all(|&p| p == 1.0) {
            None
        } else {
            Some(econ.price_level.clone())
        },
    };
    toml::to_string(&raw).expect("economy serializes to TOML")
}
