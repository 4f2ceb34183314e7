use thiserror::Error;

use crate::cache::Pid;

/// Failures raised by the simulation core and the replacement policies.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("process {0} is not bound to any core")]
    UnknownProcess(Pid),
    #[error("core {core} does not exist (hierarchy has {cores} cores)")]
    UnknownCore { core: usize, cores: usize },
    #[error("no eligible victim in set {set} excluding process {omit}")]
    NoEligibleVictim { set: usize, omit: Pid },
    #[error("tppd counter underflow in set {set}")]
    CounterUnderflow { set: usize },
    #[error("tppd counter overflow in set {set}")]
    CounterOverflow { set: usize },
    #[error("set {set} is already engaged for pair ({spy}, {trojan})")]
    AlreadyEngaged { set: usize, spy: Pid, trojan: Pid },
    #[error("spy and trojan must be distinct processes (got {0} twice)")]
    SamePair(Pid),
    #[error("set index {set} out of range ({num_sets} sets)")]
    SetOutOfRange { set: usize, num_sets: usize },
    #[error("defense does not support engagement")]
    EngagementUnsupported,
}

/// A rejected configuration value, with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}
