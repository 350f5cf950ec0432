// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Run transcript and metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::message::PartyId;
use crate::{Epoch, ShardIndex};

/// JSON lines, hashed as they are written.
#[derive(Debug, Clone)]
pub struct Transcript {
    hasher: Sha256,
    lines: Option<Vec<String>>,
    count: u64,
}

impl Transcript {
    pub fn new(keep_lines: bool) -> Self {
        Self {
            hasher: Sha256::new(),
            lines: keep_lines.then(Vec::new),
            count: 0,
        }
    }

    pub fn record(&mut self, line: &serde_json::Value) {
        let text = line.to_string();
        self.hasher.update(text.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if let Some(lines) = &mut self.lines {
            lines.push(text);
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn lines(&self) -> Option<&[String]> {
        self.lines.as_deref()
    }

    pub fn hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

pub fn party_name(p: PartyId) -> String {
    match p {
        PartyId::Chain => "chain".into(),
        PartyId::Node(n) => format!("node-{n}"),
        PartyId::Client(c) => format!("client-{c}"),
    }
}

/// Bytes one node downloaded to recover one blob.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCost {
    pub node: u32,
    pub blob: String,
    pub symbol_bytes: u64,
    pub metadata_bytes: u64,
    pub responses: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteSummary {
    pub label: String,
    pub blob: Option<String>,
    pub blob_len: usize,
    pub byzantine: bool,
    pub start_step: u64,
    pub poa_step: Option<u64>,
    pub certified_epoch: Option<Epoch>,
    pub bytes_sent: u64,
    pub restarts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadSummary {
    pub label: String,
    pub client: u32,
    pub start_step: u64,
    pub end_step: u64,
    pub outcome: String,
    pub slivers_used: Vec<ShardIndex>,
    pub bytes_received: u64,
    pub metadata_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StorageSummary {
    pub sliver_bytes: u64,
    pub metadata_bytes: u64,
    /// Certified, valid, unexpired blob bytes.
    pub blob_bytes: u64,
    pub replication_factor: f64,
    /// `n/(f+1) + n/(2f+1)`.
    pub formula: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSummary {
    pub epoch: Epoch,
    pub start_step: u64,
    pub end_step: Option<u64>,
    pub coin: Option<String>,
    pub challenged_blobs: usize,
    pub certified: Vec<ShardIndex>,
    /// Certified provers owned by nodes that deleted data.
    pub certified_cheaters: Vec<ShardIndex>,
    pub checks_passed: u64,
    pub checks_failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: Epoch,
    pub started_step: Option<u64>,
    pub completed_step: u64,
    pub ready_weight: usize,
    pub quorum: usize,
    pub dropped_messages: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub bytes_up: BTreeMap<String, u64>,
    pub bytes_down: BTreeMap<String, u64>,
    pub recovery: Vec<RecoveryCost>,
    /// Transfer bytes received per node.
    pub transfer_bytes: BTreeMap<String, u64>,
    pub writes: Vec<WriteSummary>,
    pub reads: Vec<ReadSummary>,
    pub storage: StorageSummary,
    pub challenges: Vec<ChallengeSummary>,
    pub epochs: Vec<EpochSummary>,
    pub final_epoch: Epoch,
    pub chain_transactions: u64,
}

impl Metrics {
    pub fn write(&self, label: &str) -> Option<&WriteSummary> {
        self.writes.iter().find(|w| w.label == label)
    }

    pub fn recovery_of(&self, node: u32) -> impl Iterator<Item = &RecoveryCost> {
        self.recovery.iter().filter(move |r| r.node == node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_covers_every_line() {
        let mut a = Transcript::new(true);
        let mut b = Transcript::new(false);
        a.record(&serde_json::json!({"t": 1}));
        b.record(&serde_json::json!({"t": 1}));
        assert_eq!(a.hash(), b.hash());
        b.record(&serde_json::json!({"t": 2}));
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.lines().unwrap(), ["{\"t\":1}"]);
        assert_eq!(b.len(), 2);
    }
}
