//! Serializable law descriptions.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{make_gaussian_binary, make_heavy_mixture, make_lattice_binary, ReproductionLaw};
use super::{TableEntry, UserTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", try_from = "RawLawConfig")]
pub enum LawConfig {
    GaussianBinary,
    LatticeBinary,
    HeavyMixture { epsilon: f64, y_min: f64, c0: f64 },
    UserTable { configurations: Vec<TableEntryConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntryConfig {
    /// Exact rational, e.g. `"1/4"` or `"1"`.
    pub probability: String,
    pub displacements: Vec<f64>,
}

/// Flat form read from config text. A plain struct keeps the deserializer's
/// field and position information for type errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLawConfig {
    family: String,
    epsilon: Option<f64>,
    y_min: Option<f64>,
    c0: Option<f64>,
    configurations: Option<Vec<TableEntryConfig>>,
}

impl TryFrom<RawLawConfig> for LawConfig {
    type Error = String;

    fn try_from(raw: RawLawConfig) -> std::result::Result<Self, String> {
        let family = raw.family.as_str();
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| format!("family {family:?} needs `{key}`"));
        let forbid = |present: bool, key: &str| {
            if present {
                Err(format!("`{key}` does not apply to family {family:?}"))
            } else {
                Ok(())
            }
        };
        let heavy_keys = raw.epsilon.is_some() || raw.y_min.is_some() || raw.c0.is_some();
        match family {
            "gaussian-binary" | "lattice-binary" => {
                forbid(heavy_keys, "epsilon/y_min/c0")?;
                forbid(raw.configurations.is_some(), "configurations")?;
                Ok(if family == "gaussian-binary" { LawConfig::GaussianBinary } else { LawConfig::LatticeBinary })
            }
            "heavy-mixture" => {
                forbid(raw.configurations.is_some(), "configurations")?;
                Ok(LawConfig::HeavyMixture {
                    epsilon: need(raw.epsilon, "epsilon")?,
                    y_min: need(raw.y_min, "y_min")?,
                    c0: need(raw.c0, "c0")?,
                })
            }
            "user-table" => {
                forbid(heavy_keys, "epsilon/y_min/c0")?;
                let configurations = raw.configurations.ok_or_else(|| format!("family {family:?} needs `configurations`"))?;
                Ok(LawConfig::UserTable { configurations })
            }
            other => Err(format!(
                "unknown family {other:?} (gaussian-binary|lattice-binary|heavy-mixture|user-table)"
            )),
        }
    }
}

fn parse_ratio(s: &str) -> Result<Ratio<i64>> {
    let s = s.trim();
    let parsed = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<i64>().ok().zip(d.trim().parse::<i64>().ok()),
        None => s.parse::<i64>().ok().map(|n| (n, 1)),
    };
    match parsed {
        Some((_, 0)) | None => Err(Error::invalid(format!("cannot parse probability {s:?} as a fraction"))),
        Some((n, d)) => Ok(Ratio::new(n, d)),
    }
}

impl LawConfig {
    /// Builds the law and checks the boundary normalization.
    pub fn build(&self) -> Result<ReproductionLaw> {
        let law = self.build_unchecked()?;
        law.validate()?;
        Ok(law)
    }

    pub fn build_unchecked(&self) -> Result<ReproductionLaw> {
        match self {
            LawConfig::GaussianBinary => Ok(make_gaussian_binary()),
            LawConfig::LatticeBinary => Ok(make_lattice_binary()),
            LawConfig::HeavyMixture { epsilon, y_min, c0 } => make_heavy_mixture(*epsilon, *y_min, *c0),
            LawConfig::UserTable { configurations } => {
                let entries = configurations
                    .iter()
                    .map(|c| {
                        Ok(TableEntry {
                            probability: parse_ratio(&c.probability)?,
                            displacements: c.displacements.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ReproductionLaw::user_table(UserTable::new(entries)?))
            }
        }
    }
}
