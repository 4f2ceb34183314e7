use serde::{Deserialize, Serialize};

use crate::cache::{BlockMeta, Pid};
use crate::error::{ConfigError, SimError};
use crate::hierarchy::{Lru, ReplacementHook};
use crate::nomo::{NomoConfig, NomoPolicy};
use crate::tppd::{ThresholdConfig, TppdPolicy};

/// Which LLC defense to run, as written in experiment configs.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DefenseSpec {
    #[default]
    None,
    Tppd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        th_s: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        th_t: Option<usize>,
    },
    Nomo {
        reserved_ways: usize,
    },
}

impl DefenseSpec {
    pub fn tppd(z: usize) -> Self {
        DefenseSpec::Tppd {
            z: Some(z),
            th_s: None,
            th_t: None,
        }
    }

    pub fn nomo(reserved_ways: usize) -> Self {
        DefenseSpec::Nomo { reserved_ways }
    }

    /// Short label such as `none`, `tppd-4`, `tppd-2-3` or `nomo-2`.
    pub fn label(&self) -> String {
        match *self {
            DefenseSpec::None => "none".into(),
            DefenseSpec::Tppd { z: Some(z), .. } => format!("tppd-{z}"),
            DefenseSpec::Tppd { th_s, th_t, .. } => {
                format!("tppd-{}-{}", th_s.unwrap_or(0), th_t.unwrap_or(0))
            }
            DefenseSpec::Nomo { reserved_ways } => format!("nomo-{reserved_ways}"),
        }
    }

    pub fn thresholds(&self, associativity: usize) -> Result<Option<ThresholdConfig>, ConfigError> {
        match *self {
            DefenseSpec::Tppd { z, th_s, th_t } => {
                let (s, t) = match (z, th_s, th_t) {
                    (Some(z), None, None) => (z, z),
                    (None, Some(s), Some(t)) => (s, t),
                    _ => {
                        return Err(ConfigError::new(
                            "defense",
                            "tppd needs either `z` or both `th_s` and `th_t`",
                        ))
                    }
                };
                ThresholdConfig::new(s, t, associativity).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Builds the replacement policy for an LLC of the given shape.
    pub fn build(&self, num_sets: usize, associativity: usize, active: &[Pid]) -> Result<LlcPolicy, ConfigError> {
        Ok(match *self {
            DefenseSpec::None => LlcPolicy::Lru(Lru),
            DefenseSpec::Tppd { .. } => {
                let th = self.thresholds(associativity)?.expect("tppd thresholds");
                LlcPolicy::Tppd(TppdPolicy::new(num_sets, associativity, th))
            }
            DefenseSpec::Nomo { reserved_ways } => {
                let cfg = NomoConfig::new(reserved_ways, active.len(), associativity)?;
                LlcPolicy::Nomo(NomoPolicy::new(cfg, active.to_vec()))
            }
        })
    }
}

/// The LLC replacement policy of a simulator instance.
#[derive(Debug, Clone)]
pub enum LlcPolicy {
    Lru(Lru),
    Tppd(TppdPolicy),
    Nomo(NomoPolicy),
}

impl LlcPolicy {
    pub fn as_tppd(&self) -> Option<&TppdPolicy> {
        match self {
            LlcPolicy::Tppd(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_tppd_mut(&mut self) -> Option<&mut TppdPolicy> {
        match self {
            LlcPolicy::Tppd(p) => Some(p),
            _ => None,
        }
    }
}

impl ReplacementHook for LlcPolicy {
    fn select_victim(&mut self, set_index: usize, set: &[BlockMeta], incoming: Pid) -> Result<usize, SimError> {
        match self {
            LlcPolicy::Lru(p) => p.select_victim(set_index, set, incoming),
            LlcPolicy::Tppd(p) => p.select_victim(set_index, set, incoming),
            LlcPolicy::Nomo(p) => p.select_victim(set_index, set, incoming),
        }
    }
}
