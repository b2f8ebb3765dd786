//! Experiment configuration files.
//!
//! The format is TOML. See `configs/` in the repository for complete
//! examples and the README for the grammar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use relaythp::channel::CorrelationSpec;
use relaythp::majorization::{Classification, ObjectiveSpec};
use relaythp::sim::{HopTemplate, Scheme, SweepConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub system: SystemSection,
    pub hops: Vec<HopSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Sum,
    Max,
    Prod,
    WeightedGeo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassName {
    Convex,
    Concave,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub streams: usize,
    #[serde(default = "default_modulation")]
    pub modulation: u32,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassName>,
}

fn default_modulation() -> u32 {
    16
}

fn default_objective() -> ObjectiveName {
    ObjectiveName::Prod
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopSection {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    #[serde(default)]
    pub rho_t: f64,
    #[serde(default)]
    pub rho_r: f64,
    pub sigma_e_sq: f64,
    pub snr_db: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// JSON file with the estimated channels, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<PathBuf>,
    /// `convex` or `concave`; defaults to the objective's own branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchName {
    Convex,
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// 1-based index of the hop whose SNR is swept.
    pub hop: usize,
    pub snr_db: Vec<f64>,
    pub schemes: Vec<String>,
    pub trials: usize,
    pub symbols: usize,
    /// Values that replace `sigma_e_sq` of every hop, one sweep each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_e_sq: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_r: Option<Vec<f64>>,
}

/// One point of the parameter grid of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameters {
    pub sigma_e_sq: f64,
    pub rho_t: f64,
    pub rho_r: f64,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Serialization with every default filled in and a fixed key order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn objective(&self) -> Result<ObjectiveSpec, CliError> {
        let s = &self.system;
        let spec = match s.objective {
            ObjectiveName::Sum => ObjectiveSpec::sum_mse(),
            ObjectiveName::Max => ObjectiveSpec::max_mse(),
            ObjectiveName::Prod => ObjectiveSpec::prod_mse(),
            ObjectiveName::WeightedGeo => {
                let weights = s
                    .weights
                    .clone()
                    .ok_or_else(|| CliError::Config("weighted_geo needs `weights`".into()))?;
                let class = match s.classification {
                    Some(ClassName::Convex) => Classification::MSchurConvex,
                    Some(ClassName::Concave) => Classification::MSchurConcave,
                    Some(ClassName::Both) => Classification::Both,
                    None => {
                        return Err(CliError::Config(
                            "weighted_geo needs `classification`".into(),
                        ))
                    }
                };
                if weights.len() != s.streams {
                    return Err(CliError::Config(format!(
                        "{} weights for {} streams",
                        weights.len(),
                        s.streams
                    )));
                }
                ObjectiveSpec::weighted_geo_mse(weights, class).map_err(CliError::config)?
            }
        };
        Ok(spec)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.hops.is_empty() {
            return Err(CliError::Config(
                "at least one [[hops]] table is required".into(),
            ));
        }
        if self.system.streams == 0 {
            return Err(CliError::Config("`streams` must be positive".into()));
        }
        self.objective()?;
        for (k, hop) in self.hops.iter().enumerate() {
            self.check_hop(k, hop, hop.rho_t, hop.rho_r, hop.sigma_e_sq)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.hop == 0 || sweep.hop > self.hops.len() {
                return Err(CliError::Config(format!(
                    "sweep hop {} does not exist",
                    sweep.hop
                )));
            }
            if sweep.schemes.is_empty() {
                return Err(CliError::Config("the scheme list is empty".into()));
            }
            for name in &sweep.schemes {
                Scheme::from_name(name).ok_or_else(|| {
                    CliError::Config(format!(
                        "unknown scheme `{name}`, expected one of robust_thp, nonrobust_thp, robust_linear"
                    ))
                })?;
            }
            for p in self.parameter_grid() {
                for (k, hop) in self.hops.iter().enumerate() {
                    self.check_hop(k, hop, p.rho_t, p.rho_r, p.sigma_e_sq)?;
                }
            }
            self.sweep_configs(self.seed)?;
        }
        Ok(())
    }

    fn check_hop(
        &self,
        k: usize,
        hop: &HopSection,
        rho_t: f64,
        rho_r: f64,
        sigma_e_sq: f64,
    ) -> Result<(), CliError> {
        let n = self.system.streams;
        if hop.tx_antennas < n || hop.rx_antennas < n {
            return Err(CliError::Config(
                relaythp::Error::DimensionMismatch(format!(
                    "hop {} has {} transmit and {} receive antennas, fewer than the {n} streams",
                    k + 1,
                    hop.tx_antennas,
                    hop.rx_antennas
                ))
                .to_string(),
            ));
        }
        if rho_t > 0.0 && rho_r > 0.0 {
            return Err(CliError::Config(
                relaythp::Error::UnsupportedCovariance { hop: k + 1 }.to_string(),
            ));
        }
        CorrelationSpec::new(rho_t, rho_r, sigma_e_sq).map_err(CliError::config)?;
        if !hop.snr_db.is_finite() || !(hop.power > 0.0) {
            return Err(CliError::Config(format!(
                "hop {} needs a finite SNR and positive power",
                k + 1
            )));
        }
        Ok(())
    }

    pub fn hop_templates(&self, p: Option<Parameters>) -> Result<Vec<HopTemplate>, CliError> {
        self.hops
            .iter()
            .map(|h| {
                let (rho_t, rho_r, s2) = match p {
                    Some(p) => (p.rho_t, p.rho_r, p.sigma_e_sq),
                    None => (h.rho_t, h.rho_r, h.sigma_e_sq),
                };
                Ok(HopTemplate {
                    n_t: h.tx_antennas,
                    n_r: h.rx_antennas,
                    correlation: CorrelationSpec::new(rho_t, rho_r, s2)
                        .map_err(CliError::config)?,
                    snr_db: h.snr_db,
                    power: h.power,
                })
            })
            .collect()
    }

    /// Cartesian product of the override lists; hops keep their own values
    /// for parameters without a list (read from the swept hop).
    pub fn parameter_grid(&self) -> Vec<Parameters> {
        let Some(sweep) = &self.sweep else {
            return Vec::new();
        };
        let base = &self.hops[(sweep.hop.max(1) - 1).min(self.hops.len() - 1)];
        let list = |o: &Option<Vec<f64>>, own: f64| o.clone().unwrap_or_else(|| vec![own]);
        let mut grid = Vec::new();
        for &sigma_e_sq in &list(&sweep.sigma_e_sq, base.sigma_e_sq) {
            for &rho_t in &list(&sweep.rho_t, base.rho_t) {
                for &rho_r in &list(&sweep.rho_r, base.rho_r) {
                    grid.push(Parameters {
                        sigma_e_sq,
                        rho_t,
                        rho_r,
                    });
                }
            }
        }
        grid
    }

    fn has_overrides(&self) -> bool {
        self.sweep
            .as_ref()
            .is_some_and(|s| s.sigma_e_sq.is_some() || s.rho_t.is_some() || s.rho_r.is_some())
    }

    /// One simulator configuration per parameter point.
    pub fn sweep_configs(&self, seed: u64) -> Result<Vec<(Parameters, SweepConfig)>, CliError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("the config has no [sweep] table".into()))?;
        let objective = self.objective()?;
        let schemes: Vec<Scheme> = sweep
            .schemes
            .iter()
            .filter_map(|s| Scheme::from_name(s))
            .collect();
        self.parameter_grid()
            .into_iter()
            .map(|p| {
                let hops = self.hop_templates(self.has_overrides().then_some(p))?;
                let config = SweepConfig {
                    hops,
                    n_streams: self.system.streams,
                    modulation: self.system.modulation,
                    objective: objective.clone(),
                    swept_hop: sweep.hop - 1,
                    snr_grid: sweep.snr_db.clone(),
                    schemes: schemes.clone(),
                    n_trials: sweep.trials,
                    n_symbols: sweep.symbols,
                    master_seed: seed,
                };
                config.validate().map_err(CliError::config)?;
                Ok((p, config))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = r#"
seed = 7

[system]
streams = 4

[[hops]]
tx_antennas = 4
rx_antennas = 4
rho_t = 0.5
sigma_e_sq = 0.001
snr_db = 30

[[hops]]
tx_antennas = 4
rx_antennas = 4
rho_t = 0.5
sigma_e_sq = 0.001
snr_db = 30

[sweep]
hop = 2
snr_db = [10, 20, 30]
schemes = ["robust_thp", "nonrobust_thp"]
trials = 10
symbols = 10
sigma_e_sq = [0.001, 0.004]
"#;

    #[test]
    fn canonical_round_trip_is_idempotent() {
        let config = Config::parse(FIG3).unwrap();
        let canonical = config.canonical();
        let again = Config::parse(&canonical).unwrap();
        assert_eq!(config, again);
        assert_eq!(canonical, again.canonical());
        assert_eq!(config.hash(), again.hash());
        assert_eq!(config.hash().len(), 64);
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let a = Config::parse(FIG3).unwrap();
        let b = Config::parse(&FIG3.replace("seed = 7", "seed   =   7 # comment")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::parse(&FIG3.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn grid_expands_override_lists() {
        let config = Config::parse(FIG3).unwrap();
        let grid = config.parameter_grid();
        assert_eq!(grid.len(), 2);
        assert_eq!(
            grid[1],
            Parameters {
                sigma_e_sq: 0.004,
                rho_t: 0.5,
                rho_r: 0.0
            }
        );
        let runs = config.sweep_configs(7).unwrap();
        assert!(runs[1]
            .1
            .hops
            .iter()
            .all(|h| h.correlation.sigma_e_sq() == 0.004));
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |text: String| Config::parse(&text).unwrap_err().to_string();
        assert!(err(FIG3.replace("streams = 4", "streams = 5")).contains("dimension"));
        assert!(
            err(FIG3.replace("rho_t = 0.5\n", "rho_t = 0.5\nrho_r = 0.3\n"))
                .contains("proportional to I")
        );
        assert!(err(FIG3.replace("[\"robust_thp\", \"nonrobust_thp\"]", "[]")).contains("empty"));
        assert!(err(FIG3.replace("schemes", "schemez")).contains("schemez"));
        assert!(err(FIG3.replace("hop = 2", "hop = 3")).contains("does not exist"));
    }
}
