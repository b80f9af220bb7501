use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ordering::{default_phi, validate_phi, ConfigChange};
use crate::{NodeId, SimTime};

/// Nanoseconds per millisecond; scenario files use milliseconds.
pub const MS: SimTime = 1_000_000;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayModel {
    /// Every hop takes exactly λ.
    #[default]
    Constant,
    /// Uniform in `[min, max]` with `0 < min ≤ max ≤ λ`.
    Uniform,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    #[serde(default)]
    pub model: DelayModel,
    #[serde(default)]
    pub min_ms: Option<f64>,
    #[serde(default)]
    pub max_ms: Option<f64>,
    /// Randomizes the order of deliveries that land at the same instant.
    #[serde(default)]
    pub reorder: bool,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub start_ms: f64,
    pub end_ms: f64,
    /// Node groups; nodes left out form one more group.
    pub groups: Vec<Vec<u64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Sends nothing.
    #[default]
    Silent,
    /// Proposes X to one half of the nodes and Y to the other at height start.
    EquivocateInit,
    /// Members that out-rank every correct node split the vote one round
    /// each, best first, by equivocating just before Step 2.
    LeaderHog,
    /// Members that out-rank every correct node are released one per
    /// round, worst first, to half of the nodes just before Step 2.
    DelayRelease,
    /// Random signed votes and inits of every kind to every node.
    Chaos,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub byzantine: Vec<u64>,
    #[serde(default)]
    pub behavior: Behavior,
    /// Byzantine nodes behave correctly until this time.
    #[serde(default)]
    pub corrupt_at_ms: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionSpec {
    pub count: u64,
    #[serde(default)]
    pub start_ms: f64,
    #[serde(default)]
    pub interval_ms: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigChangeSpec {
    pub time_ms: f64,
    pub chains: u32,
    #[serde(default)]
    pub phi: Option<usize>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipSpec {
    pub epoch: u64,
    pub nodes: Vec<u64>,
}

fn default_delta() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    100.0
}
fn default_epoch_length() -> u64 {
    1_000
}
fn default_max_transactions() -> usize {
    100
}

/// Full input of one simulated run.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Seeds the same-instant delivery order when `delay.reorder` is set;
    /// defaults to `seed`. Varying it alone permutes arrivals without
    /// changing anything else about the run.
    #[serde(default)]
    pub arrival_seed: Option<u64>,
    /// Node ids are `0..nodes`.
    pub nodes: usize,
    #[serde(default)]
    pub initial_members: Option<Vec<u64>>,
    pub chains: u32,
    /// Defaults to the whole node set.
    #[serde(default)]
    pub notary_size: Option<usize>,
    #[serde(default)]
    pub crs_size: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda_ms: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub phi: Option<usize>,
    #[serde(default = "default_epoch_length")]
    pub epoch_length: u64,
    #[serde(default)]
    pub update_crs_only_on_join: bool,
    /// Heights every correct node must settle on every chain.
    pub heights: u64,
    /// Simulated-time limit; past it the run fails with a liveness error.
    #[serde(default)]
    pub max_time_ms: Option<f64>,
    /// Height-0 start offsets are drawn from `[0, skew]`.
    #[serde(default)]
    pub skew_ms: f64,
    #[serde(default = "default_max_transactions")]
    pub max_transactions: usize,
    #[serde(default)]
    pub monotone_timestamps: bool,
    #[serde(default)]
    pub transcript: bool,
    #[serde(default)]
    pub delay: DelaySpec,
    #[serde(default)]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub transactions: Option<TransactionSpec>,
    #[serde(default)]
    pub config_change: Option<ConfigChangeSpec>,
    #[serde(default)]
    pub membership: Vec<MembershipSpec>,
}

pub(crate) fn ms(v: f64) -> SimTime {
    (v * MS as f64).round() as SimTime
}

impl Scenario {
    /// A synchronous, fault-free scenario.
    pub fn new(name: &str, nodes: usize, chains: u32, heights: u64) -> Scenario {
        Scenario {
            name: name.to_string(),
            seed: 0,
            arrival_seed: None,
            nodes,
            initial_members: None,
            chains,
            notary_size: None,
            crs_size: None,
            lambda_ms: default_lambda(),
            delta: default_delta(),
            phi: None,
            epoch_length: default_epoch_length(),
            update_crs_only_on_join: false,
            heights,
            max_time_ms: None,
            skew_ms: 0.0,
            max_transactions: default_max_transactions(),
            monotone_timestamps: false,
            transcript: false,
            delay: DelaySpec::default(),
            partitions: Vec::new(),
            adversary: AdversarySpec::default(),
            transactions: None,
            config_change: None,
            membership: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Scenario, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::ScenarioInvalid(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn lambda(&self) -> SimTime {
        ms(self.lambda_ms)
    }

    pub fn notary_size(&self) -> usize {
        self.notary_size.unwrap_or(self.initial_set().len())
    }

    pub fn crs_size(&self) -> usize {
        self.crs_size.unwrap_or(self.initial_set().len())
    }

    pub fn initial_set(&self) -> Vec<NodeId> {
        match &self.initial_members {
            Some(m) => m.iter().copied().map(NodeId).collect(),
            None => (0..self.nodes as u64).map(NodeId).collect(),
        }
    }

    pub fn phi(&self) -> usize {
        self.phi.unwrap_or_else(|| default_phi(self.chains as usize))
    }

    pub fn config_change(&self) -> Option<ConfigChange> {
        self.config_change
            .as_ref()
            .map(|c| ConfigChange { time: ms(c.time_ms), chains: c.chains, phi: c.phi })
    }

    /// Largest chain count at any point of the run.
    pub fn max_chains(&self) -> u32 {
        self.config_change.as_ref().map_or(self.chains, |c| c.chains.max(self.chains))
    }

    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.adversary.byzantine.contains(&node.0)
    }

    /// Time by which the run must be complete.
    pub fn horizon(&self) -> SimTime {
        if let Some(t) = self.max_time_ms {
            return ms(t);
        }
        let lambda = self.lambda();
        let late = self.partitions.iter().map(|p| ms(p.end_ms)).max().unwrap_or(0);
        let change = self.config_change.as_ref().map_or(0, |c| ms(c.time_ms));
        let txs = self.transactions.as_ref().map_or(0, |t| ms(t.start_ms + t.interval_ms * t.count as f64));
        let per_height = lambda * (10 + 4 * self.adversary.byzantine.len() as u64);
        late.max(change).max(txs) + ms(self.skew_ms) + (self.heights + 4) * per_height
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ScenarioInvalid(m));
        if self.nodes == 0 || self.chains == 0 || self.heights == 0 {
            return bad("nodes, chains and heights must be positive".into());
        }
        let universe = self.nodes as u64;
        let set = self.initial_set();
        if set.is_empty() || set.iter().any(|n| n.0 >= universe) {
            return bad("initial members must be node ids below `nodes`".into());
        }
        if set.iter().collect::<BTreeSet<_>>().len() != set.len() {
            return bad("duplicate initial member".into());
        }
        let smallest = self
            .membership
            .iter()
            .map(|m| m.nodes.len())
            .chain([set.len()])
            .min()
            .unwrap_or(0);
        for (what, k) in [("notary", self.notary_size()), ("crs", self.crs_size())] {
            if k == 0 || k > smallest {
                return bad(format!("{what} size {k} exceeds the node population {smallest}"));
            }
        }
        if !(self.lambda_ms > 0.0) {
            return bad("lambda must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if let Err(e) = validate_phi(self.chains as usize, self.phi()) {
            return bad(e.to_string());
        }
        if self.epoch_length == 0 {
            return bad("epoch length must be positive".into());
        }
        if self.skew_ms < 0.0 || self.skew_ms > self.lambda_ms {
            return bad("skew must lie in [0, lambda]".into());
        }
        if self.delay.model == DelayModel::Uniform {
            let min = self.delay.min_ms.unwrap_or(0.0);
            let max = self.delay.max_ms.unwrap_or(self.lambda_ms);
            if !(min > 0.0) || min > max || max > self.lambda_ms {
                return bad("uniform delay needs 0 < min <= max <= lambda".into());
            }
        }
        for p in &self.partitions {
            if !(p.start_ms >= 0.0 && p.end_ms > p.start_ms) {
                return bad("partition window must have start < end".into());
            }
            let mut seen = BTreeSet::new();
            for n in p.groups.iter().flatten() {
                if *n >= universe || !seen.insert(*n) {
                    return bad(format!("partition lists node {n} twice or out of range"));
                }
            }
        }
        let byz: BTreeSet<_> = self.adversary.byzantine.iter().collect();
        if byz.len() != self.adversary.byzantine.len() || byz.iter().any(|n| **n >= universe) {
            return bad("byzantine ids must be distinct node ids".into());
        }
        if byz.len() >= self.nodes {
            return bad("at least one node must be correct".into());
        }
        if let Some(c) = &self.config_change {
            if c.chains == 0 || !(c.time_ms > 0.0) {
                return bad("configuration change needs chains > 0 and time > 0".into());
            }
            let phi = c.phi.unwrap_or_else(|| default_phi(c.chains as usize));
            if let Err(e) = validate_phi(c.chains as usize, phi) {
                return bad(e.to_string());
            }
        }
        for m in &self.membership {
            if m.epoch == 0 || m.nodes.is_empty() || m.nodes.iter().any(|n| *n >= universe) {
                return bad("membership changes need epoch > 0 and node ids below `nodes`".into());
            }
        }
        if let Some(t) = &self.transactions {
            if t.start_ms < 0.0 || t.interval_ms < 0.0 {
                return bad("transaction times must be non-negative".into());
            }
        }
        if self.max_transactions == 0 {
            return bad("max_transactions must be positive".into());
        }
        Ok(())
    }
}
