//! Trace-driven simulator of a multi-core inclusive cache hierarchy for
//! studying Prime+Probe covert channels on the shared LLC and the TPPD
//! targeted pseudo-partitioning defense.

pub mod attack;
pub mod cache;
pub mod defense;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod metrics;
pub mod nomo;
pub mod sim;
pub mod tppd;
pub mod workload;

pub use cache::{BlockMeta, Cache, CacheGeometry, Pid};
pub use defense::{DefenseSpec, LlcPolicy};
pub use error::{ConfigError, SimError};
pub use hierarchy::{AccessRecord, AccessResult, Hierarchy, HierarchyConfig, HitLevel, Op};
pub use sim::Simulator;
