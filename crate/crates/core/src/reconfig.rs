// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Epoch change.
//!
//! When a reconfiguration starts, writes go to the incoming committee at
//! once. Reads of blobs certified into the incoming committee go there; all
//! other reads stay on the outgoing committee until the incoming one has
//! signalled ready with `2f+1` shards. Incoming owners fetch their shards
//! from the outgoing owners, verify every entry, and fall back to per-blob
//! recovery for anything missing or bad.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{ChainState, Committee};
use crate::codec::{Sliver, SliverPair};
use crate::commitments::{commit_sliver, BlobId, BlobMetadata};
use crate::crypto::NodeId;
use crate::{Epoch, ShardIndex};

/// One blob's state for one shard, as handed from old to new owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEntry {
    pub blob: BlobId,
    pub metadata: BlobMetadata,
    pub pair: SliverPair,
}

impl TransferEntry {
    pub fn byte_len(&self) -> usize {
        self.pair.byte_len() + 64 * self.metadata.n_shards()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferFault {
    WrongShard,
    BlobIdMismatch,
    Malformed,
    CommitmentMismatch,
}

/// Checks an entry the way a store request is checked: the metadata must
/// hash to the blob id and both slivers must match their commitments.
pub fn verify_transfer_entry(entry: &TransferEntry, shard: ShardIndex) -> Result<(), TransferFault> {
    if entry.pair.index() != shard || entry.pair.secondary.index() != shard {
        return Err(TransferFault::WrongShard);
    }
    if entry.metadata.blob_id() != entry.blob {
        return Err(TransferFault::BlobIdMismatch);
    }
    let config = entry.metadata.config().map_err(|_| TransferFault::Malformed)?;
    entry.pair.check(&config).map_err(|_| TransferFault::Malformed)?;
    for sliver in [
        Sliver::from(entry.pair.primary.clone()),
        Sliver::from(entry.pair.secondary.clone()),
    ] {
        let expected = entry
            .metadata
            .commitment(sliver.dimension(), shard)
            .ok_or(TransferFault::Malformed)?;
        let actual = commit_sliver(&sliver, &config).map_err(|_| TransferFault::Malformed)?;
        if actual != expected {
            return Err(TransferFault::CommitmentMismatch);
        }
    }
    Ok(())
}

/// How an incoming owner came to hold a shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Handover {
    Pending,
    /// Everything arrived by cooperative transfer.
    Transferred,
    /// At least one blob had to be recovered.
    Recovered,
}

/// Progress of one epoch change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconfigState {
    pub old: Committee,
    pub new: Committee,
    pub handover: BTreeMap<ShardIndex, Handover>,
    pub ready: BTreeSet<NodeId>,
}

impl ReconfigState {
    pub fn new(old: Committee, new: Committee) -> Self {
        let handover = moving_shards(&old, &new)
            .into_iter()
            .map(|s| (s, Handover::Pending))
            .collect();
        Self {
            old,
            new,
            handover,
            ready: BTreeSet::new(),
        }
    }

    /// The in-progress epoch change recorded on `chain`, if any.
    pub fn from_chain(chain: &ChainState) -> Option<Self> {
        let new = chain.next_committee()?.clone();
        Some(Self::new(chain.current_committee().clone(), new))
    }

    pub fn set(&mut self, shard: ShardIndex, state: Handover) {
        if let Some(slot) = self.handover.get_mut(&shard) {
            *slot = state;
        }
    }

    pub fn signal_ready(&mut self, node: NodeId) -> bool {
        self.new.is_member(node) && self.ready.insert(node)
    }

    /// Ready signals cover `2f+1` shards of the incoming committee.
    pub fn is_complete(&self) -> bool {
        self.new.weight_of(&self.ready) >= self.new.quorum()
    }
}

/// Shards whose owner changes.
pub fn moving_shards(old: &Committee, new: &Committee) -> Vec<ShardIndex> {
    (0..new.n_shards())
        .filter(|&s| old.owner(s) != new.owner(s))
        .collect()
}

/// Epoch of the committee a reader should contact for `blob`.
pub fn read_epoch(chain: &ChainState, blob: &BlobId) -> Option<Epoch> {
    chain.route_epoch(blob)
}
