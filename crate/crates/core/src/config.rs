//! Campaign configuration files.
//!
//! A config is a TOML document with four sections. Every key is optional
//! except `workload.kind` and `workload.format`; unknown keys are errors.
//!
//! ```toml
//! [workload]
//! kind = "random_gemm"        # or "mlp"
//! format = "bf16"             # fp16 | bf16 | tf32
//! seed = 1                    # default 0 for random_gemm, 42 for mlp
//! m = 64                      # random_gemm only
//! n = 32
//! k = 64
//! distribution = "uniform"    # uniform | normal | integer
//! # layer_dims = [64, 128, 64, 10]   mlp only
//! # weight_seed = 42
//! # dataset_size = 512
//!
//! [fault]
//! bits = 1                    # 1, 2 or 4
//! # position = 15             fixed single-bit position
//! # sweep = true              every position, `trials` trials each
//!
//! [guard]
//! kind = "none"               # none | bound_check | range_check_max | range_check_flip
//!
//! [campaign]
//! trials = 1000
//! master_seed = 0
//! sdc_tolerance = 0.0
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::campaign::{CampaignConfig, CampaignError};
use crate::fault::{BitMode, FaultError, FaultSpec};
use crate::fp_codec::FpFormat;
use crate::guard::GuardKind;
use crate::workload::{ValueDistribution, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(String),
    #[error("`{key}`: {message}")]
    Key { key: String, message: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    fn key(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Key {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKindName {
    RandomGemm,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: WorkloadKindName,
    pub format: FpFormat,
    pub seed: Option<u64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub distribution: Option<ValueDistribution>,
    pub layer_dims: Option<Vec<usize>>,
    pub weight_seed: Option<u64>,
    pub dataset_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    #[serde(default = "one")]
    pub bits: u32,
    pub position: Option<u32>,
    #[serde(default)]
    pub sweep: bool,
}

fn one() -> u32 {
    1
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            bits: 1,
            position: None,
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardSection {
    #[serde(default)]
    pub kind: GuardKind,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub sdc_tolerance: f64,
}

fn default_trials() -> usize {
    1000
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            trials: default_trials(),
            master_seed: 0,
            sdc_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub workload: WorkloadSection,
    #[serde(default)]
    pub fault: FaultSection,
    #[serde(default)]
    pub guard: GuardSection,
    #[serde(default)]
    pub campaign: CampaignSection,
}

/// A validated configuration: the campaign plus whether to sweep every bit
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub campaign: CampaignConfig,
    pub sweep: bool,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let w = &self.workload;
        let gemm_keys = [
            ("workload.m", w.m.is_some()),
            ("workload.n", w.n.is_some()),
            ("workload.k", w.k.is_some()),
            ("workload.distribution", w.distribution.is_some()),
        ];
        let mlp_keys = [
            ("workload.layer_dims", w.layer_dims.is_some()),
            ("workload.weight_seed", w.weight_seed.is_some()),
            ("workload.dataset_size", w.dataset_size.is_some()),
        ];
        let (foreign, kind_name) = match w.kind {
            WorkloadKindName::RandomGemm => (&mlp_keys[..], "random_gemm"),
            WorkloadKindName::Mlp => (&gemm_keys[..], "mlp"),
        };
        if let Some((key, _)) = foreign.iter().find(|(_, set)| *set) {
            return Err(ConfigError::key(key, format!("not a {kind_name} parameter")));
        }
        let workload = match w.kind {
            WorkloadKindName::RandomGemm => WorkloadSpec::random_gemm(
                w.format,
                (w.m.unwrap_or(64), w.n.unwrap_or(32), w.k.unwrap_or(64)),
                w.distribution.unwrap_or(ValueDistribution::Uniform),
                w.seed.unwrap_or(0),
            ),
            WorkloadKindName::Mlp => {
                let d = WorkloadSpec::default_mlp(w.format);
                let crate::workload::WorkloadKind::Mlp {
                    layer_dims,
                    weight_seed,
                    dataset_size,
                } = d.kind.clone()
                else {
                    unreachable!()
                };
                WorkloadSpec::mlp(
                    w.format,
                    w.layer_dims.clone().unwrap_or(layer_dims),
                    w.weight_seed.unwrap_or(weight_seed),
                    w.dataset_size.unwrap_or(dataset_size),
                    w.seed.unwrap_or(d.seed),
                )
            }
        };

        let f = &self.fault;
        let fault = match (f.position, f.sweep) {
            (Some(_), true) => {
                return Err(ConfigError::key(
                    "fault.position",
                    "cannot be combined with fault.sweep",
                ));
            }
            (Some(p), false) => FaultSpec::new(f.bits, BitMode::FixedPosition(p)),
            (None, true) => FaultSpec::new(f.bits, BitMode::FixedPosition(0)),
            (None, false) => FaultSpec::random(f.bits),
        }
        .map_err(|e| match e {
            FaultError::BitCount(_) | FaultError::FixedMultiBit(_) => ConfigError::key("fault.bits", e.to_string()),
            other => ConfigError::key("fault", other.to_string()),
        })?;

        let c = &self.campaign;
        let campaign = CampaignConfig::new(workload, fault, c.trials, c.master_seed)
            .with_guard(self.guard.kind)
            .with_tolerance(c.sdc_tolerance);
        campaign.validate().map_err(|e| {
            let key = match &e {
                CampaignError::Config(m) if m.starts_with("trials") => "campaign.trials",
                CampaignError::Config(m) if m.starts_with("sdc_tolerance") => "campaign.sdc_tolerance",
                CampaignError::Config(m) if m.starts_with("guard") => "guard.kind",
                _ => "fault.position",
            };
            ConfigError::key(key, e.to_string())
        })?;
        Ok(ResolvedConfig {
            campaign,
            sweep: f.sweep,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    ConfigFile::load(path)?.resolve()
}

pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    ConfigFile::parse(text)?.resolve()
}
