//! A hierarchy plus everything that watches it: run statistics, the CCA
//! detector, an optional occupancy tracker, and detector-driven engagement.

use serde::{Deserialize, Serialize};

use crate::cache::Pid;
use crate::defense::{DefenseSpec, LlcPolicy};
use crate::detector::{CcaDetector, DetectionVerdict, OccupancyTracker};
use crate::error::{ConfigError, SimError};
use crate::hierarchy::{AccessRecord, AccessResult, Hierarchy, HierarchyConfig};
use crate::metrics::RunStats;

/// A set switched to the dual victim policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Engagement {
    pub set_index: usize,
    pub spy: Pid,
    pub trojan: Pid,
    /// Number of accesses processed before engagement took effect.
    pub at_access: u64,
    /// Set by detector verdicts rather than by configuration.
    pub from_detector: bool,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    hierarchy: Hierarchy<LlcPolicy>,
    stats: RunStats,
    detector: Option<CcaDetector>,
    auto_engage: bool,
    occupancy: Option<OccupancyTracker>,
    verdicts: Vec<DetectionVerdict>,
    engagements: Vec<Engagement>,
    rejected_verdicts: Vec<DetectionVerdict>,
}

impl Simulator {
    /// Builds a simulator with `bindings` as the `(pid, core)` pairs. Every
    /// bound pid counts as an active process for NoMo.
    pub fn new(config: HierarchyConfig, defense: &DefenseSpec, bindings: &[(Pid, usize)]) -> Result<Self, ConfigError> {
        config.validate()?;
        let active: Vec<Pid> = bindings.iter().map(|(p, _)| *p).collect();
        let policy = defense.build(config.llc.num_sets, config.llc.associativity, &active)?;
        let mut hierarchy = Hierarchy::new(config, policy)?;
        for &(pid, core) in bindings {
            hierarchy
                .bind(pid, core)
                .map_err(|e| ConfigError::new("bindings", e.to_string()))?;
        }
        Ok(Self {
            hierarchy,
            stats: RunStats::default(),
            detector: None,
            auto_engage: false,
            occupancy: None,
            verdicts: Vec::new(),
            engagements: Vec::new(),
            rejected_verdicts: Vec::new(),
        })
    }

    /// Attaches a detector. With `auto_engage`, every verdict engages TPPD on
    /// the flagged set at the epoch boundary.
    pub fn with_detector(mut self, detector: CcaDetector, auto_engage: bool) -> Self {
        self.detector = Some(detector);
        self.auto_engage = auto_engage;
        self
    }

    pub fn with_occupancy(mut self, tracker: OccupancyTracker) -> Self {
        self.occupancy = Some(tracker);
        self
    }

    pub fn hierarchy(&self) -> &Hierarchy<LlcPolicy> {
        &self.hierarchy
    }

    pub fn config(&self) -> &HierarchyConfig {
        self.hierarchy.config()
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn detector(&self) -> Option<&CcaDetector> {
        self.detector.as_ref()
    }

    pub fn occupancy(&self) -> Option<&OccupancyTracker> {
        self.occupancy.as_ref()
    }

    pub fn verdicts(&self) -> &[DetectionVerdict] {
        &self.verdicts
    }

    pub fn engagements(&self) -> &[Engagement] {
        &self.engagements
    }

    /// Verdicts that named a different pair for an already engaged set.
    pub fn rejected_verdicts(&self) -> &[DetectionVerdict] {
        &self.rejected_verdicts
    }

    pub fn is_engaged(&self, set_index: usize) -> bool {
        self.hierarchy
            .policy()
            .as_tppd()
            .is_some_and(|t| t.state(set_index).attack_flag)
    }

    /// Engages TPPD on `set_index` for the given pair.
    pub fn engage(&mut self, set_index: usize, spy: Pid, trojan: Pid) -> Result<(), SimError> {
        self.engage_inner(set_index, spy, trojan, false)
    }

    fn engage_inner(&mut self, set_index: usize, spy: Pid, trojan: Pid, from_detector: bool) -> Result<(), SimError> {
        let at_access = self.stats.total_accesses;
        let (llc, policy) = self.hierarchy.llc_and_policy_mut();
        let tppd = policy.as_tppd_mut().ok_or(SimError::EngagementUnsupported)?;
        let already = tppd.state(set_index).attack_flag;
        tppd.engage(set_index, spy, trojan, llc.set(set_index))?;
        if !already {
            self.engagements.push(Engagement {
                set_index,
                spy,
                trojan,
                at_access,
                from_detector,
            });
        }
        Ok(())
    }

    pub fn access(&mut self, record: AccessRecord) -> Result<AccessResult, SimError> {
        let result = self.hierarchy.access(record)?;
        self.stats.record(record.pid, &result);
        if let Some(tracker) = &mut self.occupancy {
            tracker.tick(self.hierarchy.llc().set(tracker.set_index()));
        }
        if let Some(detector) = &mut self.detector {
            if let Some(e) = result.evicted {
                detector.record_eviction(result.set_index, record.pid, e.owner);
            }
            if let Some(verdicts) = detector.tick() {
                self.handle_verdicts(verdicts)?;
            }
        }
        Ok(result)
    }

    fn handle_verdicts(&mut self, verdicts: Vec<DetectionVerdict>) -> Result<(), SimError> {
        for v in verdicts {
            self.verdicts.push(v);
            if !self.auto_engage || self.hierarchy.policy().as_tppd().is_none() {
                continue;
            }
            match self.engage_inner(v.set_index, v.spy, v.trojan, true) {
                Ok(()) => {}
                Err(SimError::AlreadyEngaged { .. }) => {
                    log::warn!(
                        "set {} already engaged; ignoring verdict for ({}, {})",
                        v.set_index,
                        v.spy,
                        v.trojan
                    );
                    self.rejected_verdicts.push(v);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn run<I: IntoIterator<Item = AccessRecord>>(&mut self, trace: I) -> Result<(), SimError> {
        for record in trace {
            self.access(record)?;
        }
        Ok(())
    }
}
