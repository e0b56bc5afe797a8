//! Run configuration files.
//!
//! TOML is the primary format; JSON with the same structure is accepted when
//! the file name ends in `.json` or the text starts with `{`.
//!
//! ```toml
//! [network]
//! d = 2
//! arrival = ["exp(rate=0.225)", "exp(rate=0.717)"]
//! service = ["exp(rate=1)", "exp(rate=1)"]
//! Q = [[0.0, 0.11], [0.1, 0.0]]
//!
//! [sampler]
//! growth = 2.0
//!
//! [batch]
//! n = 1000
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcftp::SamplerOptions;
use crate::distributions::DistributionSpec;
use crate::network::NetworkSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_error(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

/// `[network]` as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub d: usize,
    /// Distribution literal per station, or `"none"`.
    pub arrival: Vec<String>,
    pub service: Vec<String>,
    #[serde(rename = "Q")]
    pub routing: Vec<Vec<f64>>,
}

impl NetworkSection {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        NetworkSection {
            d: spec.d(),
            arrival: spec
                .arrivals
                .iter()
                .map(|a| a.as_ref().map_or("none".to_string(), ToString::to_string))
                .collect(),
            service: spec.services.iter().map(ToString::to_string).collect(),
            routing: spec.routing.clone(),
        }
    }

    pub fn to_spec(&self) -> Result<NetworkSpec, ConfigError> {
        let d = self.d;
        if d == 0 {
            return Err(field_error("network.d", "must be at least 1"));
        }
        let check_len = |name: &str, len: usize| {
            if len == d {
                Ok(())
            } else {
                Err(field_error(format!("network.{name}"), format!("expected {d} entries, found {len}")))
            }
        };
        check_len("arrival", self.arrival.len())?;
        check_len("service", self.service.len())?;
        check_len("Q", self.routing.len())?;
        for (i, row) in self.routing.iter().enumerate() {
            if row.len() != d {
                return Err(field_error(format!("network.Q[{i}]"), format!("expected {d} entries, found {}", row.len())));
            }
        }
        let arrivals = self
            .arrival
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.trim().eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    s.parse::<DistributionSpec>()
                        .map(Some)
                        .map_err(|e| field_error(format!("network.arrival[{i}]"), e))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let services = self
            .service
            .iter()
            .enumerate()
            .map(|(i, s)| s.parse::<DistributionSpec>().map_err(|e| field_error(format!("network.service[{i}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        NetworkSpec::new(arrivals, services, self.routing.clone()).map_err(|e| field_error("network", e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON-lines file of samples.
    pub samples: Option<PathBuf>,
    /// Per-station summary CSV.
    pub summary: Option<PathBuf>,
    /// Joint-count histogram CSV.
    pub histogram: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: NetworkSection,
    #[serde(default)]
    sampler: SamplerOptions,
    #[serde(default)]
    batch: BatchConfig,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkSpec,
    pub sampler: SamplerOptions,
    pub batch: BatchConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn new(network: NetworkSpec) -> Self {
        RunConfig {
            network,
            sampler: SamplerOptions::default(),
            batch: BatchConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
        if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let network = raw.network.to_spec()?;
        raw.sampler.validate().map_err(|e| field_error("sampler", e))?;
        if raw.batch.workers == Some(0) {
            return Err(field_error("batch.workers", "must be at least 1"));
        }
        Ok(RunConfig {
            network,
            sampler: raw.sampler,
            batch: raw.batch,
            output: raw.output,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig {
            network: NetworkSection::from_spec(&self.network),
            sampler: self.sampler.clone(),
            batch: self.batch.clone(),
            output: self.output.clone(),
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_COLUMN: &str = r#"
[network]
d = 2
arrival = ["exp(rate=0.225)", "exp(rate=0.717)"]
service = ["exp(rate=1)", "exp(rate=1)"]
Q = [[0.0, 0.11], [0.1, 0.0]]

[sampler]
growth = 3.0

[batch]
n = 10
seed = 7
"#;

    #[test]
    fn parses_reference_column() {
        let cfg = RunConfig::from_toml_str(TABLE_COLUMN).unwrap();
        assert_eq!(cfg.network, NetworkSpec::table1_column(0));
        assert_eq!(cfg.sampler.growth, 3.0);
        assert_eq!(cfg.batch.seed, Some(7));
        assert_eq!(cfg.batch.workers, None);

        let with_ct = TABLE_COLUMN.replace("growth = 3.0", "C_T = 12.5");
        assert_eq!(RunConfig::from_toml_str(&with_ct).unwrap().sampler.block_length, Some(12.5));
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let mut cfg = RunConfig::from_toml_str(TABLE_COLUMN).unwrap();
        cfg.network.arrivals[1] = None;
        cfg.network.services[0] = DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![2.0, 0.5]);
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);

        let raw: RawConfig = toml::from_str(&text).unwrap();
        let json = serde_json::to_string(&raw).unwrap();
        assert_eq!(RunConfig::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad_len = TABLE_COLUMN.replace(r#"service = ["exp(rate=1)", "exp(rate=1)"]"#, r#"service = ["exp(rate=1)"]"#);
        let e = RunConfig::from_toml_str(&bad_len).unwrap_err().to_string();
        assert!(e.contains("network.service"), "{e}");

        let bad_law = TABLE_COLUMN.replace("exp(rate=0.717)", "gamma(rate=2)");
        let e = RunConfig::from_toml_str(&bad_law).unwrap_err().to_string();
        assert!(e.contains("network.arrival[1]"), "{e}");

        let bad_key = TABLE_COLUMN.replace("growth = 3.0", "growht = 3.0");
        let e = RunConfig::from_toml_str(&bad_key).unwrap_err().to_string();
        assert!(e.contains("growht"), "{e}");

        let bad_range = TABLE_COLUMN.replace("growth = 3.0", "delta_frac = 1.5");
        let e = RunConfig::from_toml_str(&bad_range).unwrap_err().to_string();
        assert!(e.contains("sampler") && e.contains("delta_frac"), "{e}");

        // Stability is a property of the network, checked by `validate`, not by the parser.
        let unstable = TABLE_COLUMN.replace("exp(rate=0.717)", "exp(rate=0.99)");
        assert!(RunConfig::from_toml_str(&unstable).is_ok());
    }
}
