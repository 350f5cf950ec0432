// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Wire messages between parties and the effects a handler emits.
//!
//! Messages are serialized with bincode; [`wire_size`] is the byte count the
//! simulator charges for a delivery.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chain::{Event, Transaction};
use crate::challenge::ChallengeCheck;
use crate::codec::{Dimension, Sliver, SliverPair};
use crate::commitments::{BlobId, BlobMetadata, MetadataShard, SymbolProof};
use crate::crypto::{NodeId, Signature};
use crate::node::InconsistencyProof;
use crate::reconfig::TransferEntry;
use crate::{Epoch, ShardIndex};

pub type RequestId = u64;
pub type ClientId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    Chain,
    Node(NodeId),
    Client(ClientId),
}

/// Why a request was answered with ⊥.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    NotInCommittee,
    /// The request named an epoch other than the chain's write epoch.
    WrongEpoch,
    WrongShards,
    Unregistered,
    Expired,
    BlobIdMismatch,
    CommitmentMismatch,
    NoCertificate,
    ChallengePhase,
    /// Invalidated on chain by the transaction at `evidence_seq`, or about
    /// to be when `None`.
    Invalid { evidence_seq: Option<u64> },
    NotStored,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    StoreRequest {
        req: RequestId,
        blob: BlobId,
        epoch: Epoch,
        metadata: BlobMetadata,
        pairs: Vec<SliverPair>,
    },
    StoreResponse {
        req: RequestId,
        blob: BlobId,
        epoch: Epoch,
        result: Result<Signature, RejectReason>,
    },
    MetadataRequest {
        req: RequestId,
        blob: BlobId,
        shard: ShardIndex,
    },
    MetadataResponse {
        req: RequestId,
        blob: BlobId,
        shard: ShardIndex,
        result: Result<MetadataShard, RejectReason>,
    },
    SliverRequest {
        req: RequestId,
        blob: BlobId,
        shard: ShardIndex,
        dimension: Dimension,
    },
    SliverResponse {
        req: RequestId,
        blob: BlobId,
        shard: ShardIndex,
        result: Result<Sliver, RejectReason>,
    },
    /// Asks the owner of `shard` for the symbol its sliver shares with the
    /// requester's `dimension` sliver `target`.
    RecoveryRequest {
        req: RequestId,
        blob: BlobId,
        target: ShardIndex,
        dimension: Dimension,
        shard: ShardIndex,
    },
    RecoveryResponse {
        req: RequestId,
        blob: BlobId,
        shard: ShardIndex,
        result: Result<SymbolProof, RejectReason>,
    },
    InconsistencyNotice {
        proof: InconsistencyProof,
        metadata: BlobMetadata,
    },
    ChallengeSymbols {
        epoch: Epoch,
        prover: ShardIndex,
        verifier: ShardIndex,
        proofs: Vec<(BlobId, SymbolProof)>,
    },
    ChallengeConfirm {
        epoch: Epoch,
        prover: ShardIndex,
        verifier: ShardIndex,
        signature: Signature,
    },
    TransferRequest {
        epoch: Epoch,
        shard: ShardIndex,
    },
    TransferResponse {
        epoch: Epoch,
        shard: ShardIndex,
        entries: Vec<TransferEntry>,
    },
    ChainEvent {
        seq: u64,
        event: Event,
    },
    TxResult {
        kind: String,
        blob: Option<BlobId>,
        result: Result<u64, String>,
    },
    Timer {
        token: u64,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::StoreRequest { .. } => "StoreRequest",
            Message::StoreResponse { .. } => "StoreResponse",
            Message::MetadataRequest { .. } => "MetadataRequest",
            Message::MetadataResponse { .. } => "MetadataResponse",
            Message::SliverRequest { .. } => "SliverRequest",
            Message::SliverResponse { .. } => "SliverResponse",
            Message::RecoveryRequest { .. } => "RecoveryRequest",
            Message::RecoveryResponse { .. } => "RecoveryResponse",
            Message::InconsistencyNotice { .. } => "InconsistencyNotice",
            Message::ChallengeSymbols { .. } => "ChallengeSymbols",
            Message::ChallengeConfirm { .. } => "ChallengeConfirm",
            Message::TransferRequest { .. } => "TransferRequest",
            Message::TransferResponse { .. } => "TransferResponse",
            Message::ChainEvent { .. } => "ChainEvent",
            Message::TxResult { .. } => "TxResult",
            Message::Timer { .. } => "Timer",
        }
    }

    /// The blob a message is about, when it is about exactly one.
    pub fn blob(&self) -> Option<BlobId> {
        match self {
            Message::StoreRequest { blob, .. }
            | Message::StoreResponse { blob, .. }
            | Message::MetadataRequest { blob, .. }
            | Message::MetadataResponse { blob, .. }
            | Message::SliverRequest { blob, .. }
            | Message::SliverResponse { blob, .. }
            | Message::RecoveryRequest { blob, .. }
            | Message::RecoveryResponse { blob, .. } => Some(*blob),
            Message::InconsistencyNotice { proof, .. } => Some(proof.blob),
            Message::TxResult { blob, .. } => *blob,
            _ => None,
        }
    }

    /// Control-plane traffic is not charged to any party's bandwidth.
    pub fn is_local(&self) -> bool {
        matches!(
            self,
            Message::ChainEvent { .. } | Message::TxResult { .. } | Message::Timer { .. }
        )
    }
}

/// Serialized size in bytes.
pub fn wire_size(msg: &Message) -> u64 {
    bincode::serialized_size(msg).expect("messages serialize")
}

/// Everything a state machine wants done after handling one input.
#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(PartyId, Message)>,
    pub txs: Vec<Transaction>,
    /// `(delay in steps, token)`; fires as [`Message::Timer`] to the owner.
    pub timers: Vec<(u64, u64)>,
    pub notes: Vec<String>,
    pub challenge_checks: Vec<ChallengeCheck>,
}

impl Outbox {
    pub fn send(&mut self, to: PartyId, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn submit(&mut self, tx: Transaction) {
        self.txs.push(tx);
    }

    pub fn timer(&mut self, delay: u64, token: u64) {
        self.timers.push((delay, token));
    }

    /// Free-form transcript annotation.
    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

/// Threshold-paced requests to a list of candidate shards.
///
/// Only as many candidates are asked as are still needed; each failure or
/// timeout brings in one more. Once every candidate has been tried, a timeout
/// re-asks those that failed or never answered, so requests dropped at an
/// epoch boundary are eventually re-issued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacedRequests {
    candidates: Vec<ShardIndex>,
    need: usize,
    next: usize,
    outstanding: BTreeSet<ShardIndex>,
    succeeded: BTreeSet<ShardIndex>,
    failed: BTreeSet<ShardIndex>,
}

impl PacedRequests {
    pub fn new(candidates: Vec<ShardIndex>, need: usize) -> Self {
        Self {
            candidates,
            need,
            next: 0,
            outstanding: BTreeSet::new(),
            succeeded: BTreeSet::new(),
            failed: BTreeSet::new(),
        }
    }

    pub fn need(&self) -> usize {
        self.need
    }

    pub fn succeeded(&self) -> &BTreeSet<ShardIndex> {
        &self.succeeded
    }

    pub fn is_done(&self) -> bool {
        self.succeeded.len() >= self.need
    }

    fn take_next(&mut self) -> Option<ShardIndex> {
        let s = *self.candidates.get(self.next)?;
        self.next += 1;
        self.outstanding.insert(s);
        Some(s)
    }

    fn top_up(&mut self) -> Vec<ShardIndex> {
        let mut asked = Vec::new();
        while self.succeeded.len() + self.outstanding.len() < self.need {
            match self.take_next() {
                Some(s) => asked.push(s),
                None => break,
            }
        }
        asked
    }

    /// Initial requests.
    pub fn start(&mut self) -> Vec<ShardIndex> {
        self.top_up()
    }

    pub fn is_outstanding(&self, shard: ShardIndex) -> bool {
        self.outstanding.contains(&shard)
    }

    pub fn on_success(&mut self, shard: ShardIndex) {
        if self.outstanding.remove(&shard) || self.failed.remove(&shard) {
            self.succeeded.insert(shard);
        }
    }

    /// Raises the target after a decode failure; returns extra requests.
    pub fn raise_need(&mut self, need: usize) -> Vec<ShardIndex> {
        self.need = self.need.max(need);
        self.top_up()
    }

    /// Records a ⊥ or unusable answer; returns replacements to ask.
    pub fn on_failure(&mut self, shard: ShardIndex) -> Vec<ShardIndex> {
        if self.outstanding.remove(&shard) {
            self.failed.insert(shard);
        }
        if self.is_done() {
            return vec![];
        }
        self.top_up()
    }

    /// Widens by one candidate, or re-asks everyone unresolved once the
    /// candidate list is exhausted.
    pub fn on_timeout(&mut self) -> Vec<ShardIndex> {
        if self.is_done() {
            return vec![];
        }
        if let Some(s) = self.take_next() {
            let mut asked = vec![s];
            asked.extend(self.top_up());
            return asked;
        }
        let retry: Vec<ShardIndex> = self
            .failed
            .iter()
            .chain(self.outstanding.iter())
            .copied()
            .collect();
        self.outstanding.extend(self.failed.iter().copied());
        self.failed.clear();
        retry
    }
}

/// Candidate shards in rotation order starting after `own`, excluding it.
pub fn rotation(n_shards: usize, own: ShardIndex) -> Vec<ShardIndex> {
    (1..n_shards).map(|d| (own + d) % n_shards).collect()
}
