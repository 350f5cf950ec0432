// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario files.
//!
//! ```toml
//! name = "honest-write"
//! seed = 7
//! f = 1
//!
//! [[workload]]
//! op = "write"
//! label = "a"
//! at = 0
//! size = 12
//!
//! [[workload]]
//! op = "read"
//! blob = "a"
//! after = "a"
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::NodeId;
use crate::message::ClientId;
use crate::node::Behavior;
use crate::{Epoch, ShardIndex};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("epoch {epoch}: {corrupted} corrupted shards exceed f = {f}")]
    TooManyCorrupted { epoch: Epoch, corrupted: usize, f: usize },
}

fn default_budget() -> u64 {
    200_000
}

fn default_expiry() -> Epoch {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub f: usize,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
    #[serde(default)]
    pub network: NetworkConfig,
    /// Committee of each epoch, genesis first. Defaults to shard `i` owned by
    /// node `i` at epoch 0.
    #[serde(default)]
    pub committees: Vec<CommitteeConfig>,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub node: NodeSettings,
    #[serde(default)]
    pub challenge: ChallengeSettings,
    #[serde(default)]
    pub workload: Vec<WorkloadOp>,
    #[serde(default)]
    pub expect: Expectations,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn n_shards(&self) -> usize {
        3 * self.f + 1
    }

    /// Committees with the default filled in.
    pub fn committee_list(&self) -> Vec<CommitteeConfig> {
        if self.committees.is_empty() {
            vec![CommitteeConfig {
                epoch: 0,
                shards: (0..self.n_shards() as NodeId).collect(),
            }]
        } else {
            self.committees.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub min_delay: u64,
    pub max_delay: u64,
    /// Without reordering each channel is FIFO.
    pub reorder: bool,
    /// Drop in-flight protocol messages when an epoch completes.
    pub drop_at_epoch_end: bool,
    /// Delivery delay of chain events and transaction results.
    pub chain_latency: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            min_delay: 1,
            max_delay: 10,
            reorder: false,
            drop_at_epoch_end: true,
            chain_latency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitteeConfig {
    pub epoch: Epoch,
    /// Owner of each shard.
    pub shards: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    pub nodes: Vec<AdversaryRole>,
    pub delay: Option<DelayTargets>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryRole {
    pub node: NodeId,
    pub behavior: BehaviorConfig,
    /// Epochs in which the node is corrupted; all when absent.
    #[serde(default)]
    pub epochs: Option<Vec<Epoch>>,
}

impl AdversaryRole {
    pub fn active_in(&self, epoch: Epoch) -> bool {
        self.epochs.as_ref().map_or(true, |e| e.contains(&epoch))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorConfig {
    Silent,
    WithholdSlivers,
    EquivocateAcks,
    TamperTransfers,
    DeleteSymbols {
        #[serde(default)]
        keep: Vec<ShardIndex>,
        #[serde(default)]
        fetch_from: Vec<ShardIndex>,
    },
    Colluder {
        #[serde(default)]
        allies: Vec<ShardIndex>,
    },
}

impl BehaviorConfig {
    pub fn to_behavior(&self) -> Behavior {
        match self {
            BehaviorConfig::Silent => Behavior::Silent,
            BehaviorConfig::WithholdSlivers => Behavior::WithholdSlivers,
            BehaviorConfig::EquivocateAcks => Behavior::EquivocateAcks,
            BehaviorConfig::TamperTransfers => Behavior::TamperTransfers,
            BehaviorConfig::DeleteSymbols { keep, fetch_from } => Behavior::DeleteSymbols {
                keep: keep.iter().copied().collect::<BTreeSet<_>>(),
                fetch_from: fetch_from.iter().copied().collect(),
            },
            BehaviorConfig::Colluder { allies } => Behavior::Colluder {
                allies: allies.iter().copied().collect(),
            },
        }
    }
}

/// Extra delay on messages from honest parties and the chain to `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayTargets {
    pub nodes: Vec<NodeId>,
    pub steps: u64,
    #[serde(default)]
    pub from_step: u64,
    #[serde(default)]
    pub until_step: Option<u64>,
    /// Delay only messages sent by clients.
    #[serde(default)]
    pub clients_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSettings {
    pub timeout: u64,
    pub serve_primary: bool,
    pub primary_reads: bool,
    pub symbol_size: Option<usize>,
}

impl Default for NodeSettings {
    fn default() -> Self {
        Self {
            timeout: crate::node::DEFAULT_TIMEOUT,
            serve_primary: false,
            primary_reads: false,
            symbol_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChallengeSettings {
    /// Blobs per prover; all when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Write,
    Read,
    Reconfigure,
    Challenge,
}

/// Chain events a workload step can wait for (first occurrence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Milestone {
    ReconfigurationStarted,
    EpochCompleted,
    ChallengeStarted,
    ChallengeOpened,
    ChallengeEnded,
    BlobInvalidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadOp {
    pub op: OpKind,
    /// Names a write so later steps can refer to it.
    #[serde(default)]
    pub label: Option<String>,
    /// Earliest step.
    #[serde(default)]
    pub at: Option<u64>,
    /// Wait for the point of availability of this write.
    #[serde(default)]
    pub after: Option<String>,
    #[serde(default)]
    pub after_event: Option<Milestone>,
    /// Steps to wait once the other conditions hold.
    #[serde(default)]
    pub delay: u64,
    #[serde(default)]
    pub client: ClientId,
    #[serde(default)]
    pub size: Option<usize>,
    /// Literal blob contents; random bytes of `size` otherwise.
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default = "default_expiry")]
    pub expiry: Epoch,
    /// Write an inconsistent encoding that corrupts this secondary sliver.
    #[serde(default)]
    pub byzantine: Option<ShardIndex>,
    /// Write label a read targets.
    #[serde(default)]
    pub blob: Option<String>,
    /// Epoch of the committee a reconfiguration installs.
    #[serde(default)]
    pub epoch: Option<Epoch>,
}

impl WorkloadOp {
    pub fn new(op: OpKind) -> Self {
        Self {
            op,
            label: None,
            at: None,
            after: None,
            after_event: None,
            delay: 0,
            client: 0,
            size: None,
            data: None,
            expiry: default_expiry(),
            byzantine: None,
            blob: None,
            epoch: None,
        }
    }
}

/// Scenario-level outcomes checked after the run, on top of the protocol
/// properties that are always checked.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    /// Write labels that must end invalidated on chain.
    pub invalidated: Vec<String>,
    /// Every read of these labels must return the blob.
    pub readable: Vec<String>,
    pub final_epoch: Option<Epoch>,
    pub challenge_completed: bool,
}
