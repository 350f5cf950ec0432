// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Storage node state machine.
//!
//! A node owns zero or more shards per epoch and keeps, for every blob, the
//! full metadata plus one sliver pair per owned shard. It is driven by
//! [`Node::handle`]: one input message in, effects out through an
//! [`Outbox`]. The chain is read directly; chain events arrive as messages
//! and are what trigger recovery, migration and challenges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chain::{ChainState, Committee, Event, Transaction};
use crate::challenge::{check_response, ChallengeCheck, ChallengePhase, ChallengeSet};
use crate::codec::{
    expand_primary_all, recover_primary, recover_secondary, Dimension, IntersectionSymbol,
    PrimarySliver, SecondarySliver, Sliver, SliverPair,
};
use crate::commitments::{
    commit_sliver, decode_metadata_for, encode_metadata, BlobId, BlobMetadata, MerkleTree,
    MetadataShard, SliverOpener, SymbolProof,
};
use crate::crypto::{Keypair, NodeId, Statement};
use crate::erasure::EncodingConfig;
use crate::message::{Message, Outbox, PacedRequests, PartyId, RejectReason, RequestId};
use crate::reconfig::{verify_transfer_entry, TransferEntry};
use crate::{Epoch, ShardIndex};

/// Steps before an unanswered request is widened or re-sent.
pub const DEFAULT_TIMEOUT: u64 = 60;

/// How a node deviates from the protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Behavior {
    #[default]
    Honest,
    /// Ignores every input.
    Silent,
    /// Stores and acknowledges, but never serves slivers, symbols,
    /// metadata or transfers.
    WithholdSlivers,
    /// Signs storage acks for its shards without checking or keeping
    /// anything.
    EquivocateAcks,
    /// Serves transfers with one byte flipped in every secondary sliver.
    TamperTransfers,
    /// At challenge start keeps only the row symbols at positions `keep`,
    /// deletes its slivers, and tries to fetch the rest from `fetch_from`
    /// while the challenge runs.
    DeleteSymbols {
        keep: BTreeSet<ShardIndex>,
        fetch_from: BTreeSet<ShardIndex>,
    },
    /// Serves recovery symbols even during challenges and confirms the
    /// `allies` provers without looking.
    Colluder { allies: BTreeSet<ShardIndex> },
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    fn serves(&self) -> bool {
        !matches!(
            self,
            Behavior::WithholdSlivers | Behavior::EquivocateAcks | Behavior::Silent
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeParams {
    pub timeout: u64,
    /// Blobs challenged per prover; `None` challenges all of them.
    pub challenge_k: Option<usize>,
    /// Whether primary slivers are served to readers.
    pub serve_primary: bool,
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            challenge_k: None,
            serve_primary: false,
        }
    }
}

/// Evidence that a blob's committed encoding is not a codeword: enough
/// opened symbols of one line to decode it, whose decoding disagrees with the
/// line's commitment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyProof {
    pub blob: BlobId,
    /// Dimension of the sliver that failed to match.
    pub dimension: Dimension,
    pub index: ShardIndex,
    pub symbols: Vec<SymbolProof>,
}

/// Third-party check of an [`InconsistencyProof`] by trial recovery.
///
/// Every symbol must open against the commitment of the sliver it came
/// from, and the decoded target must differ from its committed root.
pub fn verify_inconsistency(proof: &InconsistencyProof, metadata: &BlobMetadata) -> bool {
    if metadata.blob_id() != proof.blob {
        return false;
    }
    let Ok(config) = metadata.config() else {
        return false;
    };
    let source_dim = proof.dimension.other();
    let need = match proof.dimension {
        Dimension::Secondary => config.primary_threshold(),
        Dimension::Primary => config.secondary_threshold(),
    };
    let mut seen = BTreeSet::new();
    for p in &proof.symbols {
        let Some(commitment) = metadata.commitment(source_dim, p.sliver_index) else {
            return false;
        };
        if p.symbol.line_in(proof.dimension) != proof.index
            || !commitment.verify(p)
            || !seen.insert(p.sliver_index)
        {
            return false;
        }
    }
    if seen.len() < need {
        return false;
    }
    let symbols: Vec<IntersectionSymbol> = proof.symbols.iter().map(|p| p.symbol.clone()).collect();
    let decoded: Sliver = match proof.dimension {
        Dimension::Secondary => match recover_secondary(&symbols, proof.index, &config) {
            Ok(s) => s.into(),
            Err(_) => return false,
        },
        Dimension::Primary => match recover_primary(&symbols, proof.index, &config) {
            Ok(s) => s.into(),
            Err(_) => return false,
        },
    };
    match (
        commit_sliver(&decoded, &config),
        metadata.commitment(proof.dimension, proof.index),
    ) {
        (Ok(actual), Some(expected)) => actual != expected,
        _ => false,
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    primary: Option<PrimarySliver>,
    secondary: Option<SecondarySliver>,
    openers: [Option<SliverOpener>; 2],
}

impl Slot {
    fn from_pair(pair: SliverPair) -> Self {
        Self {
            primary: Some(pair.primary),
            secondary: Some(pair.secondary),
            openers: [None, None],
        }
    }

    fn is_complete(&self) -> bool {
        self.primary.is_some() && self.secondary.is_some()
    }

    fn pair(&self) -> Option<SliverPair> {
        Some(SliverPair {
            primary: self.primary.clone()?,
            secondary: self.secondary.clone()?,
        })
    }

    fn sliver(&self, dimension: Dimension) -> Option<Sliver> {
        match dimension {
            Dimension::Primary => self.primary.clone().map(Sliver::from),
            Dimension::Secondary => self.secondary.clone().map(Sliver::from),
        }
    }

    fn byte_len(&self) -> usize {
        self.primary.as_ref().map_or(0, |s| s.as_bytes().len()) + self.secondary.as_ref().map_or(0, |s| s.as_bytes().len())
    }

    /// Opens position `k` of this slot's `dimension` sliver.
    fn prove(&mut self, dimension: Dimension, k: ShardIndex, config: &EncodingConfig) -> Option<SymbolProof> {
        let at = match dimension {
            Dimension::Primary => 0,
            Dimension::Secondary => 1,
        };
        if self.openers[at].is_none() {
            let sliver = self.sliver(dimension)?;
            self.openers[at] = Some(SliverOpener::new(&sliver, config).ok()?);
        }
        self.openers[at].as_ref()?.prove(k)
    }
}

#[derive(Debug, Clone, Default)]
struct BlobState {
    metadata: Option<BlobMetadata>,
    metadata_shards: Option<Vec<MetadataShard>>,
    slots: BTreeMap<ShardIndex, Slot>,
    invalid: Option<InconsistencyProof>,
}

#[derive(Debug, Clone)]
struct MetaFetch {
    paced: PacedRequests,
    shards: Vec<MetadataShard>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Metadata,
    /// Collecting column symbols; the value is the target's dimension.
    Symbols(Dimension),
}

#[derive(Debug, Clone)]
struct Recovery {
    stage: Stage,
    paced: PacedRequests,
    symbols: BTreeMap<ShardIndex, SymbolProof>,
}

/// Row state of a prover that deleted its slivers.
#[derive(Debug, Clone)]
struct CheatRow {
    tree: MerkleTree,
    known: BTreeMap<ShardIndex, Vec<u8>>,
    symbol_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    Metadata {
        blob: BlobId,
        shard: ShardIndex,
    },
    Recovery {
        blob: BlobId,
        target: ShardIndex,
        dimension: Dimension,
        shard: ShardIndex,
    },
    CheatFetch {
        blob: BlobId,
        prover: ShardIndex,
        shard: ShardIndex,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimerPurpose {
    MetaFetch(BlobId),
    Recovery(BlobId, ShardIndex),
    Transfer(ShardIndex),
}

/// Bytes a node keeps, split the way the overhead formula counts them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub sliver_bytes: u64,
    pub metadata_bytes: u64,
}

#[derive(Debug)]
pub struct Node {
    id: NodeId,
    keypair: Keypair,
    behavior: Behavior,
    params: NodeParams,
    blobs: BTreeMap<BlobId, BlobState>,
    meta_fetches: BTreeMap<BlobId, MetaFetch>,
    recoveries: BTreeMap<(BlobId, ShardIndex), Recovery>,
    transfers: BTreeMap<ShardIndex, Epoch>,
    requests: BTreeMap<RequestId, Pending>,
    timers: BTreeMap<u64, TimerPurpose>,
    next_request: RequestId,
    next_token: u64,
    local: VecDeque<Message>,
    reconfiguring: Option<Epoch>,
    ready_sent: BTreeSet<Epoch>,
    challenge: Option<ChallengePhase>,
    buffered: Vec<(NodeId, Message)>,
    certify_sent: BTreeSet<(Epoch, ShardIndex)>,
    cheat: BTreeMap<(BlobId, ShardIndex), CheatRow>,
    cheat_answered: BTreeSet<(ShardIndex, ShardIndex)>,
    recovered: u64,
    transferred: u64,
}

impl Node {
    pub fn new(id: NodeId, keypair: Keypair, behavior: Behavior, params: NodeParams) -> Self {
        Self {
            id,
            keypair,
            behavior,
            params,
            blobs: BTreeMap::new(),
            meta_fetches: BTreeMap::new(),
            recoveries: BTreeMap::new(),
            transfers: BTreeMap::new(),
            requests: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_request: 0,
            next_token: 0,
            local: VecDeque::new(),
            reconfiguring: None,
            ready_sent: BTreeSet::new(),
            challenge: None,
            buffered: Vec::new(),
            certify_sent: BTreeSet::new(),
            cheat: BTreeMap::new(),
            cheat_answered: BTreeSet::new(),
            recovered: 0,
            transferred: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    /// Corruption can change between epochs.
    pub fn set_behavior(&mut self, behavior: Behavior) {
        self.behavior = behavior;
    }

    pub fn pair(&self, blob: &BlobId, shard: ShardIndex) -> Option<SliverPair> {
        self.blobs.get(blob)?.slots.get(&shard)?.pair()
    }

    pub fn holds_pair(&self, blob: &BlobId, shard: ShardIndex) -> bool {
        self.blobs
            .get(blob)
            .and_then(|b| b.slots.get(&shard))
            .is_some_and(Slot::is_complete)
    }

    pub fn metadata(&self, blob: &BlobId) -> Option<&BlobMetadata> {
        self.blobs.get(blob)?.metadata.as_ref()
    }

    /// The inconsistency proof this node found or accepted for `blob`.
    pub fn inconsistency(&self, blob: &BlobId) -> Option<&InconsistencyProof> {
        self.blobs.get(blob)?.invalid.as_ref()
    }

    pub fn in_challenge(&self) -> bool {
        self.challenge.is_some()
    }

    pub fn recovering(&self) -> usize {
        self.recoveries.len()
    }

    /// Sliver pairs completed by recovery so far.
    pub fn recovered_count(&self) -> u64 {
        self.recovered
    }

    /// Sliver pairs accepted from cooperative transfers so far.
    pub fn transferred_count(&self) -> u64 {
        self.transferred
    }

    pub fn storage(&self) -> StorageReport {
        let mut report = StorageReport::default();
        for state in self.blobs.values() {
            let slivers: usize = state.slots.values().map(Slot::byte_len).sum();
            report.sliver_bytes += slivers as u64;
            if let Some(m) = &state.metadata {
                report.metadata_bytes += m.to_canonical_bytes().len() as u64;
            }
        }
        report
    }

    /// Processes one input. Messages a node sends itself are handled before
    /// returning.
    pub fn handle(&mut self, from: PartyId, msg: Message, chain: &ChainState, out: &mut Outbox) {
        if self.behavior == Behavior::Silent {
            return;
        }
        self.dispatch(from, msg, chain, out);
        while let Some(msg) = self.local.pop_front() {
            self.dispatch(PartyId::Node(self.id), msg, chain, out);
        }
        self.maybe_signal_ready(chain, out);
    }

    fn dispatch(&mut self, from: PartyId, msg: Message, chain: &ChainState, out: &mut Outbox) {
        match msg {
            Message::StoreRequest {
                req,
                blob,
                epoch,
                metadata,
                pairs,
            } => {
                let result = self.store(blob, epoch, metadata, pairs, chain);
                if let Err(reason) = &result {
                    out.note(format!("node {} rejected store: {reason:?}", self.id));
                }
                self.reply(
                    out,
                    from,
                    Message::StoreResponse {
                        req,
                        blob,
                        epoch,
                        result,
                    },
                );
            }
            Message::MetadataRequest { req, blob, shard } => {
                let result = self.serve_metadata(&blob, shard, chain);
                self.reply(
                    out,
                    from,
                    Message::MetadataResponse {
                        req,
                        blob,
                        shard,
                        result,
                    },
                );
            }
            Message::SliverRequest {
                req,
                blob,
                shard,
                dimension,
            } => {
                let result = self.serve_sliver(&blob, shard, dimension, chain);
                self.reply(
                    out,
                    from,
                    Message::SliverResponse {
                        req,
                        blob,
                        shard,
                        result,
                    },
                );
            }
            Message::RecoveryRequest {
                req,
                blob,
                target,
                dimension,
                shard,
            } => {
                let result = self.serve_recovery(&blob, target, dimension, shard, chain);
                self.reply(
                    out,
                    from,
                    Message::RecoveryResponse {
                        req,
                        blob,
                        shard,
                        result,
                    },
                );
            }
            Message::MetadataResponse { req, result, .. } => {
                if let Some(Pending::Metadata { blob, shard }) = self.requests.remove(&req) {
                    self.on_metadata_shard(blob, shard, result.ok(), chain, out);
                }
            }
            Message::RecoveryResponse { req, result, .. } => match self.requests.remove(&req) {
                Some(Pending::Recovery {
                    blob,
                    target,
                    dimension,
                    shard,
                }) => self.on_recovery_symbol(blob, target, dimension, shard, result.ok(), chain, out),
                Some(Pending::CheatFetch {
                    blob,
                    prover,
                    shard,
                }) => self.on_cheat_symbol(blob, prover, shard, result.ok(), chain, out),
                _ => {}
            },
            Message::InconsistencyNotice { proof, metadata } => {
                self.on_inconsistency_notice(proof, metadata, chain, out)
            }
            Message::ChallengeSymbols { .. } => {
                if let PartyId::Node(sender) = from {
                    self.on_challenge_symbols(sender, msg, chain, out);
                }
            }
            Message::ChallengeConfirm {
                epoch,
                prover,
                verifier,
                signature,
            } => {
                if let PartyId::Node(sender) = from {
                    self.on_challenge_confirm(sender, epoch, prover, verifier, signature, chain, out);
                }
            }
            Message::TransferRequest { epoch, shard } => {
                if let PartyId::Node(sender) = from {
                    self.on_transfer_request(sender, epoch, shard, chain, out);
                }
            }
            Message::TransferResponse {
                epoch,
                shard,
                entries,
            } => {
                if let PartyId::Node(sender) = from {
                    self.on_transfer_response(sender, epoch, shard, entries, chain, out);
                }
            }
            Message::ChainEvent { event, .. } => self.on_event(event, chain, out),
            Message::Timer { token } => self.on_timer(token, chain, out),
            Message::StoreResponse { .. }
            | Message::SliverResponse { .. }
            | Message::TxResult { .. } => {}
        }
    }

    fn reply(&mut self, out: &mut Outbox, to: PartyId, msg: Message) {
        if to == PartyId::Node(self.id) {
            self.local.push_back(msg);
        } else {
            out.send(to, msg);
        }
    }

    fn send_node(&mut self, out: &mut Outbox, to: NodeId, msg: Message) {
        self.reply(out, PartyId::Node(to), msg);
    }

    fn request(&mut self, pending: Pending) -> RequestId {
        let req = self.next_request;
        self.next_request += 1;
        self.requests.insert(req, pending);
        req
    }

    fn arm(&mut self, out: &mut Outbox, purpose: TimerPurpose) {
        let token = self.next_token;
        self.next_token += 1;
        self.timers.insert(token, purpose);
        out.timer(self.params.timeout, token);
    }

    /// Shards this node must hold for `blob` under the current chain state:
    /// its shards in the routing committee, plus its incoming shards when the
    /// blob is migrating.
    fn responsible_shards(&self, blob: &BlobId, chain: &ChainState) -> BTreeSet<ShardIndex> {
        let mut shards = BTreeSet::new();
        if chain.is_expired(blob) {
            return shards;
        }
        if let Some(c) = chain.route_committee(blob) {
            shards.extend(c.shards_of(self.id));
        }
        if let Some(next) = chain.next_committee() {
            if chain.migrating_blobs(next.epoch).contains(blob) {
                shards.extend(next.shards_of(self.id));
            }
        }
        shards
    }

    // ----- writes -----

    fn store(
        &mut self,
        blob: BlobId,
        epoch: Epoch,
        metadata: BlobMetadata,
        pairs: Vec<SliverPair>,
        chain: &ChainState,
    ) -> Result<crate::crypto::Signature, RejectReason> {
        if epoch != chain.write_epoch() {
            return Err(RejectReason::WrongEpoch);
        }
        let committee = chain.committee(epoch).ok_or(RejectReason::WrongEpoch)?;
        let mine: BTreeSet<ShardIndex> = committee.shards_of(self.id).into_iter().collect();
        if mine.is_empty() {
            return Err(RejectReason::NotInCommittee);
        }
        let given: BTreeSet<ShardIndex> = pairs.iter().map(SliverPair::index).collect();
        if given != mine || given.len() != pairs.len() {
            return Err(RejectReason::WrongShards);
        }
        let ack = self.keypair.sign_statement(&Statement::StorageAck { blob, epoch });
        if self.behavior == Behavior::EquivocateAcks {
            return Ok(ack);
        }
        if !chain.is_registered(&blob) {
            return Err(RejectReason::Unregistered);
        }
        if chain.is_expired(&blob) {
            return Err(RejectReason::Expired);
        }
        if let Some(seq) = chain.invalidation_seq(&blob) {
            return Err(RejectReason::Invalid {
                evidence_seq: Some(seq),
            });
        }
        if metadata.blob_id() != blob || metadata.n_shards() != committee.n_shards() {
            return Err(RejectReason::BlobIdMismatch);
        }
        let config = metadata.config().map_err(|_| RejectReason::Malformed)?;
        for pair in &pairs {
            pair.check(&config).map_err(|_| RejectReason::Malformed)?;
            for sliver in [Sliver::from(pair.primary.clone()), Sliver::from(pair.secondary.clone())] {
                let expected = metadata
                    .commitment(sliver.dimension(), pair.index())
                    .ok_or(RejectReason::Malformed)?;
                let actual = commit_sliver(&sliver, &config).map_err(|_| RejectReason::Malformed)?;
                if actual != expected {
                    return Err(RejectReason::CommitmentMismatch);
                }
            }
        }
        let state = self.blobs.entry(blob).or_default();
        if state.metadata.is_none() {
            state.metadata = Some(metadata);
        }
        for pair in pairs {
            let shard = pair.index();
            state.slots.insert(shard, Slot::from_pair(pair));
            self.recoveries.remove(&(blob, shard));
        }
        Ok(ack)
    }

    // ----- serving -----

    fn gate(&self, blob: &BlobId, chain: &ChainState, challenge_applies: bool) -> Result<(), RejectReason> {
        if let Some(seq) = chain.invalidation_seq(blob) {
            return Err(RejectReason::Invalid {
                evidence_seq: Some(seq),
            });
        }
        if self.blobs.get(blob).is_some_and(|b| b.invalid.is_some()) {
            return Err(RejectReason::Invalid { evidence_seq: None });
        }
        if !chain.is_registered(blob) {
            return Err(RejectReason::Unregistered);
        }
        if chain.is_expired(blob) {
            return Err(RejectReason::Expired);
        }
        if chain.certificate(blob).is_none() {
            return Err(RejectReason::NoCertificate);
        }
        if challenge_applies && self.challenge.as_ref().is_some_and(|c| c.blocks(blob)) {
            return Err(RejectReason::ChallengePhase);
        }
        if !self.behavior.serves() {
            return Err(RejectReason::NotStored);
        }
        Ok(())
    }

    fn serve_metadata(
        &mut self,
        blob: &BlobId,
        shard: ShardIndex,
        chain: &ChainState,
    ) -> Result<MetadataShard, RejectReason> {
        if let Some(seq) = chain.invalidation_seq(blob) {
            return Err(RejectReason::Invalid {
                evidence_seq: Some(seq),
            });
        }
        if !self.behavior.serves() {
            return Err(RejectReason::NotStored);
        }
        let state = self.blobs.get_mut(blob).ok_or(RejectReason::NotStored)?;
        let metadata = state.metadata.as_ref().ok_or(RejectReason::NotStored)?;
        if state.metadata_shards.is_none() {
            state.metadata_shards = Some(encode_metadata(metadata).map_err(|_| RejectReason::Malformed)?);
        }
        state
            .metadata_shards
            .as_ref()
            .and_then(|s| s.get(shard))
            .cloned()
            .ok_or(RejectReason::WrongShards)
    }

    fn serve_sliver(
        &self,
        blob: &BlobId,
        shard: ShardIndex,
        dimension: Dimension,
        chain: &ChainState,
    ) -> Result<Sliver, RejectReason> {
        self.gate(blob, chain, true)?;
        if dimension == Dimension::Primary && !self.params.serve_primary {
            return Err(RejectReason::Malformed);
        }
        self.blobs
            .get(blob)
            .and_then(|b| b.slots.get(&shard))
            .and_then(|s| s.sliver(dimension))
            .ok_or(RejectReason::NotStored)
    }

    /// Symbol `E(target, shard)` or `E(shard, target)` for a node rebuilding
    /// its `dimension` sliver `target`, opened against this node's sliver of
    /// the other dimension.
    fn serve_recovery(
        &mut self,
        blob: &BlobId,
        target: ShardIndex,
        dimension: Dimension,
        shard: ShardIndex,
        chain: &ChainState,
    ) -> Result<SymbolProof, RejectReason> {
        let colluding = matches!(self.behavior, Behavior::Colluder { .. });
        self.gate(blob, chain, !colluding)?;
        let state = self.blobs.get_mut(blob).ok_or(RejectReason::NotStored)?;
        let config = state
            .metadata
            .as_ref()
            .ok_or(RejectReason::NotStored)?
            .config()
            .map_err(|_| RejectReason::Malformed)?;
        if target >= config.n_shards() {
            return Err(RejectReason::Malformed);
        }
        let slot = state.slots.get_mut(&shard).ok_or(RejectReason::NotStored)?;
        slot.prove(dimension.other(), target, &config)
            .ok_or(RejectReason::NotStored)
    }

    // ----- recovery -----

    fn start_recovery(&mut self, blob: BlobId, shard: ShardIndex, chain: &ChainState, out: &mut Outbox) {
        if self.recoveries.contains_key(&(blob, shard))
            || self.holds_pair(&blob, shard)
            || self.blobs.get(&blob).is_some_and(|b| b.invalid.is_some())
            || chain.is_invalid(&blob)
        {
            return;
        }
        if matches!(self.behavior, Behavior::EquivocateAcks | Behavior::DeleteSymbols { .. }) {
            return;
        }
        self.recoveries.insert(
            (blob, shard),
            Recovery {
                stage: Stage::Metadata,
                paced: PacedRequests::new(vec![], 0),
                symbols: BTreeMap::new(),
            },
        );
        out.note(format!("node {} recovering shard {shard} of {blob}", self.id));
        self.arm(out, TimerPurpose::Recovery(blob, shard));
        if self.metadata(&blob).is_some() {
            self.advance(blob, shard, chain, out);
        } else {
            self.ensure_metadata_fetch(blob, chain, out);
        }
    }

    /// Remote candidates in the routing committee, rotated to start after
    /// `anchor`.
    fn remote_shards(&self, blob: &BlobId, anchor: ShardIndex, chain: &ChainState) -> Vec<ShardIndex> {
        let Some(committee) = chain.route_committee(blob) else {
            return vec![];
        };
        let n = committee.n_shards();
        (1..=n)
            .map(|d| (anchor + d) % n)
            .filter(|&k| committee.owner(k) != Some(self.id))
            .collect()
    }

    fn ensure_metadata_fetch(&mut self, blob: BlobId, chain: &ChainState, out: &mut Outbox) {
        if self.meta_fetches.contains_key(&blob) {
            return;
        }
        let Some(committee) = chain.route_committee(&blob) else {
            return;
        };
        let anchor = committee.shards_of(self.id).first().copied().unwrap_or(0);
        let candidates = self.remote_shards(&blob, anchor, chain);
        let mut paced = PacedRequests::new(candidates, committee.validity());
        let asked = paced.start();
        self.meta_fetches.insert(
            blob,
            MetaFetch {
                paced,
                shards: vec![],
            },
        );
        self.ask_metadata(blob, asked, chain, out);
        self.arm(out, TimerPurpose::MetaFetch(blob));
    }

    fn ask_metadata(&mut self, blob: BlobId, shards: Vec<ShardIndex>, chain: &ChainState, out: &mut Outbox) {
        for shard in shards {
            let Some(owner) = chain.route_committee(&blob).and_then(|c| c.owner(shard)) else {
                continue;
            };
            let req = self.request(Pending::Metadata { blob, shard });
            self.send_node(out, owner, Message::MetadataRequest { req, blob, shard });
        }
    }

    fn on_metadata_shard(
        &mut self,
        blob: BlobId,
        shard: ShardIndex,
        reply: Option<MetadataShard>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(fetch) = self.meta_fetches.get_mut(&blob) else {
            return;
        };
        let n = chain.route_committee(&blob).map_or(0, Committee::n_shards);
        let retry = match reply {
            Some(ms) if ms.index == shard && ms.n_shards == n && ms.verify() => {
                fetch.shards.push(ms);
                fetch.paced.on_success(shard);
                vec![]
            }
            _ => fetch.paced.on_failure(shard),
        };
        self.ask_metadata(blob, retry, chain, out);
        let fetch = &self.meta_fetches[&blob];
        if !fetch.paced.is_done() {
            return;
        }
        match decode_metadata_for(&fetch.shards, n, &blob) {
            Ok(metadata) => {
                self.meta_fetches.remove(&blob);
                self.blobs.entry(blob).or_default().metadata = Some(metadata);
                let waiting: Vec<ShardIndex> = self
                    .recoveries
                    .iter()
                    .filter(|((b, _), r)| *b == blob && r.stage == Stage::Metadata)
                    .map(|((_, s), _)| *s)
                    .collect();
                for shard in waiting {
                    self.advance(blob, shard, chain, out);
                }
            }
            Err(_) => {
                let fetch = self.meta_fetches.get_mut(&blob).unwrap();
                let more = fetch.paced.need() + 1;
                let asked = fetch.paced.raise_need(more);
                self.ask_metadata(blob, asked, chain, out);
            }
        }
    }

    /// Moves a recovery to its next stage, using locally held slivers first.
    fn advance(&mut self, blob: BlobId, shard: ShardIndex, chain: &ChainState, out: &mut Outbox) {
        let Some(stage) = self.recoveries.get(&(blob, shard)).map(|r| r.stage) else {
            return;
        };
        let metadata = self.metadata(&blob).cloned().expect("metadata known");
        let Ok(config) = metadata.config() else {
            return;
        };
        let target_dim = match stage {
            Stage::Metadata => {
                let has_secondary = self
                    .blobs
                    .get(&blob)
                    .and_then(|b| b.slots.get(&shard))
                    .is_some_and(|s| s.secondary.is_some());
                if has_secondary {
                    Dimension::Primary
                } else {
                    Dimension::Secondary
                }
            }
            Stage::Symbols(Dimension::Secondary) => Dimension::Primary,
            Stage::Symbols(Dimension::Primary) => return,
        };
        let need = match target_dim {
            Dimension::Secondary => config.primary_threshold(),
            Dimension::Primary => config.secondary_threshold(),
        };
        // Symbols from slivers this node already holds.
        let mut local = BTreeMap::new();
        if let Some(state) = self.blobs.get_mut(&blob) {
            for (&k, slot) in state.slots.iter_mut() {
                if let Some(p) = slot.prove(target_dim.other(), shard, &config) {
                    local.insert(k, p);
                }
            }
        }
        let remaining = need.saturating_sub(local.len());
        let candidates: Vec<ShardIndex> = self
            .remote_shards(&blob, shard, chain)
            .into_iter()
            .filter(|k| !local.contains_key(k))
            .collect();
        let mut paced = PacedRequests::new(candidates, remaining);
        let asked = paced.start();
        let recovery = self.recoveries.get_mut(&(blob, shard)).unwrap();
        recovery.stage = Stage::Symbols(target_dim);
        recovery.paced = paced;
        recovery.symbols = local;
        self.ask_symbols(blob, shard, target_dim, asked, chain, out);
        self.try_finish(blob, shard, chain, out);
    }

    fn ask_symbols(
        &mut self,
        blob: BlobId,
        target: ShardIndex,
        dimension: Dimension,
        shards: Vec<ShardIndex>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        for shard in shards {
            let Some(owner) = chain.route_committee(&blob).and_then(|c| c.owner(shard)) else {
                continue;
            };
            let req = self.request(Pending::Recovery {
                blob,
                target,
                dimension,
                shard,
            });
            self.send_node(
                out,
                owner,
                Message::RecoveryRequest {
                    req,
                    blob,
                    target,
                    dimension,
                    shard,
                },
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_recovery_symbol(
        &mut self,
        blob: BlobId,
        target: ShardIndex,
        dimension: Dimension,
        shard: ShardIndex,
        reply: Option<SymbolProof>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(metadata) = self.metadata(&blob).cloned() else {
            return;
        };
        let Some(recovery) = self.recoveries.get_mut(&(blob, target)) else {
            return;
        };
        if recovery.stage != Stage::Symbols(dimension) {
            return;
        }
        let valid = reply.filter(|p| {
            p.symbol.line_in(dimension) == target
                && metadata
                    .commitment(dimension.other(), shard)
                    .is_some_and(|c| c.verify(p))
        });
        let retry = match valid {
            Some(p) => {
                recovery.symbols.insert(shard, p);
                recovery.paced.on_success(shard);
                vec![]
            }
            None => recovery.paced.on_failure(shard),
        };
        self.ask_symbols(blob, target, dimension, retry, chain, out);
        self.try_finish(blob, target, chain, out);
    }

    fn try_finish(&mut self, blob: BlobId, shard: ShardIndex, chain: &ChainState, out: &mut Outbox) {
        let Some(recovery) = self.recoveries.get(&(blob, shard)) else {
            return;
        };
        let Stage::Symbols(dimension) = recovery.stage else {
            return;
        };
        if !recovery.paced.is_done() {
            return;
        }
        let metadata = self.metadata(&blob).cloned().expect("metadata known");
        let config = metadata.config().expect("validated metadata");
        let proofs: Vec<SymbolProof> = recovery.symbols.values().cloned().collect();
        let symbols: Vec<IntersectionSymbol> = proofs.iter().map(|p| p.symbol.clone()).collect();
        let rebuilt: Option<Sliver> = match dimension {
            Dimension::Secondary => recover_secondary(&symbols, shard, &config).ok().map(Sliver::from),
            Dimension::Primary => recover_primary(&symbols, shard, &config).ok().map(Sliver::from),
        };
        let Some(rebuilt) = rebuilt else {
            return;
        };
        let matches = commit_sliver(&rebuilt, &config).ok() == metadata.commitment(dimension, shard);
        if !matches {
            let proof = InconsistencyProof {
                blob,
                dimension,
                index: shard,
                symbols: proofs,
            };
            out.note(format!("node {} found {blob} inconsistent at {dimension:?} {shard}", self.id));
            self.mark_invalid(proof, metadata, true, chain, out);
            return;
        }
        let slot = self
            .blobs
            .entry(blob)
            .or_default()
            .slots
            .entry(shard)
            .or_default();
        match rebuilt {
            Sliver::Secondary(s) => slot.secondary = Some(s),
            Sliver::Primary(p) => slot.primary = Some(p),
        }
        slot.openers = [None, None];
        if slot.is_complete() {
            self.recoveries.remove(&(blob, shard));
            self.recovered += 1;
            out.note(format!("node {} recovered shard {shard} of {blob}", self.id));
        } else {
            self.advance(blob, shard, chain, out);
        }
    }

    fn mark_invalid(
        &mut self,
        proof: InconsistencyProof,
        metadata: BlobMetadata,
        broadcast: bool,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let blob = proof.blob;
        self.recoveries.retain(|(b, _), _| *b != blob);
        self.meta_fetches.remove(&blob);
        let state = self.blobs.entry(blob).or_default();
        state.metadata.get_or_insert(metadata.clone());
        state.invalid = Some(proof.clone());
        let Some(committee) = chain.route_committee(&blob).cloned() else {
            return;
        };
        if committee.is_member(self.id) {
            let signature = self.keypair.sign_statement(&Statement::Inconsistent { blob });
            out.submit(Transaction::AttestInconsistency {
                blob,
                node: self.id,
                signature,
            });
        }
        if broadcast {
            for member in committee.members() {
                if member != self.id {
                    out.send(
                        PartyId::Node(member),
                        Message::InconsistencyNotice {
                            proof: proof.clone(),
                            metadata: metadata.clone(),
                        },
                    );
                }
            }
        }
    }

    fn on_inconsistency_notice(
        &mut self,
        proof: InconsistencyProof,
        metadata: BlobMetadata,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if self.inconsistency(&proof.blob).is_some() {
            return;
        }
        if verify_inconsistency(&proof, &metadata) {
            self.mark_invalid(proof, metadata, false, chain, out);
        } else {
            out.note(format!("node {} rejected inconsistency proof", self.id));
        }
    }

    fn on_timer(&mut self, token: u64, chain: &ChainState, out: &mut Outbox) {
        let Some(purpose) = self.timers.remove(&token) else {
            return;
        };
        match purpose {
            TimerPurpose::MetaFetch(blob) => {
                let Some(fetch) = self.meta_fetches.get_mut(&blob) else {
                    return;
                };
                if chain.is_invalid(&blob) || chain.is_expired(&blob) {
                    self.meta_fetches.remove(&blob);
                    return;
                }
                let asked = fetch.paced.on_timeout();
                self.ask_metadata(blob, asked, chain, out);
                self.arm(out, TimerPurpose::MetaFetch(blob));
            }
            TimerPurpose::Recovery(blob, shard) => {
                if !self.recoveries.contains_key(&(blob, shard)) {
                    return;
                }
                if chain.is_invalid(&blob) || !self.responsible_shards(&blob, chain).contains(&shard) {
                    self.recoveries.remove(&(blob, shard));
                    return;
                }
                let recovery = self.recoveries.get_mut(&(blob, shard)).unwrap();
                match recovery.stage {
                    Stage::Metadata => {
                        if self.metadata(&blob).is_some() {
                            self.advance(blob, shard, chain, out);
                        } else {
                            self.ensure_metadata_fetch(blob, chain, out);
                        }
                    }
                    Stage::Symbols(dimension) => {
                        let asked = recovery.paced.on_timeout();
                        self.ask_symbols(blob, shard, dimension, asked, chain, out);
                    }
                }
                self.arm(out, TimerPurpose::Recovery(blob, shard));
            }
            TimerPurpose::Transfer(shard) => {
                if let Some(epoch) = self.transfers.remove(&shard) {
                    out.note(format!("node {} transfer of shard {shard} timed out", self.id));
                    self.fall_back(epoch, shard, chain, out);
                }
            }
        }
    }

    // ----- chain events -----

    fn on_event(&mut self, event: Event, chain: &ChainState, out: &mut Outbox) {
        match event {
            Event::CertificateStored { blob, .. } => {
                for shard in self.responsible_shards(&blob, chain) {
                    self.start_recovery(blob, shard, chain, out);
                }
            }
            Event::BlobInvalidated { blob } => {
                self.recoveries.retain(|(b, _), _| *b != blob);
                self.meta_fetches.remove(&blob);
            }
            Event::ReconfigurationStarted { epoch } => self.on_reconfiguration(epoch, chain, out),
            Event::EpochCompleted { epoch } => self.on_epoch_completed(epoch, chain, out),
            Event::ChallengeStarted { epoch } => self.on_challenge_started(epoch, chain, out),
            Event::ChallengeOpened { epoch, coin } => self.on_challenge_opened(epoch, coin, chain, out),
            Event::ChallengeEnded { epoch } => {
                if self.challenge.as_ref().is_some_and(|c| c.epoch == epoch) {
                    self.challenge = None;
                    self.buffered.clear();
                    self.cheat.clear();
                    self.cheat_answered.clear();
                }
            }
            Event::Genesis { .. }
            | Event::Registered { .. }
            | Event::InconsistencyAttested { .. }
            | Event::ReadySignaled { .. }
            | Event::ChallengeAcked { .. }
            | Event::ChallengeCertified { .. } => {}
        }
    }

    // ----- reconfiguration -----

    fn on_reconfiguration(&mut self, epoch: Epoch, chain: &ChainState, out: &mut Outbox) {
        self.reconfiguring = Some(epoch);
        let (Some(old), Some(new)) = (chain.committee(epoch - 1), chain.committee(epoch)) else {
            return;
        };
        if chain.migrating_blobs(epoch).is_empty() {
            return;
        }
        for shard in new.shards_of(self.id) {
            let Some(sender) = old.owner(shard) else {
                continue;
            };
            if sender == self.id {
                continue;
            }
            self.transfers.insert(shard, epoch);
            self.send_node(out, sender, Message::TransferRequest { epoch, shard });
            self.arm(out, TimerPurpose::Transfer(shard));
        }
    }

    fn on_transfer_request(
        &mut self,
        sender: NodeId,
        epoch: Epoch,
        shard: ShardIndex,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if chain.committee(epoch).and_then(|c| c.owner(shard)) != Some(sender) {
            return;
        }
        if !self.behavior.serves() {
            return;
        }
        let tamper = self.behavior == Behavior::TamperTransfers;
        let mut entries = Vec::new();
        for blob in chain.migrating_blobs(epoch) {
            let Some(state) = self.blobs.get(blob) else {
                continue;
            };
            let (Some(metadata), Some(mut pair)) = (
                state.metadata.clone(),
                state.slots.get(&shard).and_then(Slot::pair),
            ) else {
                continue;
            };
            if tamper {
                pair.secondary.bytes_mut()[0] ^= 0x5a;
            }
            entries.push(TransferEntry {
                blob: *blob,
                metadata,
                pair,
            });
        }
        self.send_node(
            out,
            sender,
            Message::TransferResponse {
                epoch,
                shard,
                entries,
            },
        );
    }

    fn on_transfer_response(
        &mut self,
        sender: NodeId,
        epoch: Epoch,
        shard: ShardIndex,
        entries: Vec<TransferEntry>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if self.transfers.get(&shard) != Some(&epoch)
            || chain.committee(epoch - 1).and_then(|c| c.owner(shard)) != Some(sender)
        {
            return;
        }
        self.transfers.remove(&shard);
        let migrating = chain.migrating_blobs(epoch);
        let mut rejected = 0;
        for entry in entries {
            if !migrating.contains(&entry.blob) {
                continue;
            }
            if verify_transfer_entry(&entry, shard).is_err() {
                rejected += 1;
                continue;
            }
            let state = self.blobs.entry(entry.blob).or_default();
            state.metadata.get_or_insert(entry.metadata);
            state.slots.insert(shard, Slot::from_pair(entry.pair));
            self.recoveries.remove(&(entry.blob, shard));
            self.transferred += 1;
        }
        if rejected > 0 {
            out.note(format!(
                "node {} rejected {rejected} transfer entries for shard {shard}",
                self.id
            ));
        }
        self.fall_back(epoch, shard, chain, out);
    }

    /// Recovers every migrating blob the transfer did not supply.
    fn fall_back(&mut self, epoch: Epoch, shard: ShardIndex, chain: &ChainState, out: &mut Outbox) {
        let blobs: Vec<BlobId> = chain.migrating_blobs(epoch).to_vec();
        for blob in blobs {
            if !chain.is_expired(&blob) {
                self.start_recovery(blob, shard, chain, out);
            }
        }
    }

    fn maybe_signal_ready(&mut self, chain: &ChainState, out: &mut Outbox) {
        let Some(next) = chain.next_committee() else {
            return;
        };
        let epoch = next.epoch;
        if self.reconfiguring != Some(epoch) || self.ready_sent.contains(&epoch) || !next.is_member(self.id) {
            return;
        }
        if matches!(self.behavior, Behavior::EquivocateAcks | Behavior::DeleteSymbols { .. }) {
            return;
        }
        if self.transfers.values().any(|&e| e == epoch) {
            return;
        }
        let shards = next.shards_of(self.id);
        let all_held = chain.migrating_blobs(epoch).iter().all(|blob| {
            chain.is_invalid(blob)
                || chain.is_expired(blob)
                || self.inconsistency(blob).is_some()
                || shards.iter().all(|&s| self.holds_pair(blob, s))
        });
        if !all_held {
            return;
        }
        self.ready_sent.insert(epoch);
        let signature = self.keypair.sign_statement(&Statement::Ready { epoch });
        out.submit(Transaction::SignalReady {
            node: self.id,
            epoch,
            signature,
        });
        out.note(format!("node {} ready for epoch {epoch}", self.id));
    }

    fn on_epoch_completed(&mut self, epoch: Epoch, chain: &ChainState, out: &mut Outbox) {
        if self.reconfiguring == Some(epoch) {
            self.reconfiguring = None;
        }
        // The epoch can complete without this node's ready signal; the old
        // owner may already have dropped what an unanswered transfer asked for.
        let pending: Vec<(ShardIndex, Epoch)> = self
            .transfers
            .iter()
            .filter(|(_, e)| **e <= epoch)
            .map(|(s, e)| (*s, *e))
            .collect();
        for (shard, e) in pending {
            self.transfers.remove(&shard);
            self.fall_back(e, shard, chain, out);
        }
        let blobs: Vec<BlobId> = self.blobs.keys().copied().collect();
        for blob in blobs {
            let mut keep = self.responsible_shards(&blob, chain);
            if chain.certificate(&blob).is_none() && !chain.is_expired(&blob) {
                // Acked stores of a write still in flight.
                keep.extend(chain.write_committee().shards_of(self.id));
            }
            let state = self.blobs.get_mut(&blob).unwrap();
            state.slots.retain(|s, _| keep.contains(s));
            if state.slots.is_empty() && state.invalid.is_none() && keep.is_empty() {
                self.blobs.remove(&blob);
            }
        }
        let recoveries: Vec<(BlobId, ShardIndex)> = self.recoveries.keys().copied().collect();
        for (blob, shard) in recoveries {
            if !self.responsible_shards(&blob, chain).contains(&shard) {
                self.recoveries.remove(&(blob, shard));
            }
        }
    }

    // ----- challenges -----

    fn on_challenge_started(&mut self, epoch: Epoch, chain: &ChainState, out: &mut Outbox) {
        let Some(committee) = chain.committee(epoch) else {
            return;
        };
        if !committee.is_member(self.id) {
            return;
        }
        self.challenge = Some(ChallengePhase::new(epoch));
        if let Behavior::DeleteSymbols { keep, .. } = &self.behavior {
            let keep = keep.clone();
            self.delete_symbols(&keep, committee);
        }
        let signature = self.keypair.sign_statement(&Statement::ChallengeAck { epoch });
        out.submit(Transaction::ChallengeAck {
            node: self.id,
            epoch,
            signature,
        });
    }

    fn delete_symbols(&mut self, keep: &BTreeSet<ShardIndex>, committee: &Committee) {
        let mine = committee.shards_of(self.id);
        for (blob, state) in self.blobs.iter_mut() {
            let Some(config) = state.metadata.as_ref().and_then(|m| m.config().ok()) else {
                continue;
            };
            for &p in &mine {
                let Some(primary) = state.slots.get(&p).and_then(|s| s.primary.clone()) else {
                    continue;
                };
                let Ok(row) = expand_primary_all(&primary, &config) else {
                    continue;
                };
                let tree = MerkleTree::new(&row);
                let known = row
                    .into_iter()
                    .enumerate()
                    .filter(|(v, _)| keep.contains(v))
                    .collect();
                self.cheat.insert(
                    (*blob, p),
                    CheatRow {
                        tree,
                        known,
                        symbol_size: config.symbol_size(),
                    },
                );
            }
            state.slots.clear();
        }
    }

    fn on_challenge_opened(
        &mut self,
        epoch: Epoch,
        coin: crate::commitments::Digest,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if self.challenge.as_ref().map(|c| c.epoch) != Some(epoch) {
            return;
        }
        let (Some(record), Some(committee)) = (chain.challenge(epoch), chain.committee(epoch)) else {
            return;
        };
        let committee = committee.clone();
        let k = self.params.challenge_k.unwrap_or(usize::MAX);
        let set = ChallengeSet::new(coin, k, &record.blobs, committee.n_shards());
        self.challenge.as_mut().unwrap().set = Some(set.clone());
        if matches!(self.behavior, Behavior::DeleteSymbols { .. }) {
            self.cheat_open(epoch, &set, &committee, out);
        } else {
            self.send_challenge_symbols(epoch, &set, &committee, out);
        }
        for (sender, msg) in std::mem::take(&mut self.buffered) {
            self.on_challenge_symbols(sender, msg, chain, out);
        }
    }

    fn send_challenge_symbols(&mut self, epoch: Epoch, set: &ChallengeSet, committee: &Committee, out: &mut Outbox) {
        let n = committee.n_shards();
        for prover in committee.shards_of(self.id) {
            let blobs = set.for_shard(prover).to_vec();
            let mut rows: Vec<Vec<(BlobId, SymbolProof)>> = vec![Vec::with_capacity(blobs.len()); n];
            let mut complete = true;
            for blob in &blobs {
                let Some(state) = self.blobs.get_mut(blob) else {
                    complete = false;
                    break;
                };
                let Some(config) = state.metadata.as_ref().and_then(|m| m.config().ok()) else {
                    complete = false;
                    break;
                };
                let Some(slot) = state.slots.get_mut(&prover) else {
                    complete = false;
                    break;
                };
                for (v, row) in rows.iter_mut().enumerate() {
                    match slot.prove(Dimension::Primary, v, &config) {
                        Some(p) => row.push((*blob, p)),
                        None => complete = false,
                    }
                }
            }
            if !complete {
                out.note(format!("node {} cannot answer challenge as prover {prover}", self.id));
                continue;
            }
            for (verifier, proofs) in rows.into_iter().enumerate() {
                let owner = committee.owner(verifier).expect("verifier in committee");
                self.send_node(
                    out,
                    owner,
                    Message::ChallengeSymbols {
                        epoch,
                        prover,
                        verifier,
                        proofs,
                    },
                );
            }
        }
    }

    fn on_challenge_symbols(&mut self, sender: NodeId, msg: Message, chain: &ChainState, out: &mut Outbox) {
        let Message::ChallengeSymbols {
            epoch,
            prover,
            verifier,
            ref proofs,
        } = msg
        else {
            return;
        };
        let Some(committee) = chain.committee(epoch) else {
            return;
        };
        if committee.owner(prover) != Some(sender) || committee.owner(verifier) != Some(self.id) {
            return;
        }
        let phase_known = self
            .challenge
            .as_ref()
            .filter(|c| c.epoch == epoch)
            .map(|c| c.set.is_some());
        match phase_known {
            Some(true) => {}
            Some(false) | None => {
                // Not yet in this phase: hold the symbols until it opens here.
                if chain.challenge(epoch).is_some_and(|r| !r.ended) {
                    self.buffered.push((sender, msg));
                }
                return;
            }
        }
        let phase = self.challenge.as_ref().unwrap();
        if phase.confirmed.contains(&(prover, verifier)) {
            return;
        }
        let expected = phase.set.as_ref().unwrap().for_shard(prover).to_vec();
        let blind = match &self.behavior {
            Behavior::Colluder { allies } => allies.contains(&prover),
            Behavior::DeleteSymbols { .. } => committee.owner(prover) == Some(self.id),
            _ => false,
        };
        let refuses = matches!(self.behavior, Behavior::DeleteSymbols { .. }) && !blind;
        let verdict = if blind {
            Ok(())
        } else if refuses {
            return;
        } else {
            let blobs = &self.blobs;
            check_response(
                prover,
                verifier,
                &expected,
                proofs,
                |b| blobs.get(b).and_then(|s| s.metadata.as_ref()),
                |b| {
                    blobs
                        .get(b)
                        .and_then(|s| s.slots.get(&verifier))
                        .and_then(|s| s.secondary.as_ref())
                },
            )
        };
        out.challenge_checks.push(ChallengeCheck {
            epoch,
            prover,
            verifier,
            blobs: expected,
            outcome: match &verdict {
                Ok(()) => "confirmed".into(),
                Err(fault) => format!("{fault:?}"),
            },
        });
        if verdict.is_err() {
            return;
        }
        self.challenge.as_mut().unwrap().confirmed.insert((prover, verifier));
        let signature = self.keypair.sign_statement(&Statement::ChallengeConfirm {
            epoch,
            prover,
            verifier,
        });
        self.send_node(
            out,
            sender,
            Message::ChallengeConfirm {
                epoch,
                prover,
                verifier,
                signature,
            },
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn on_challenge_confirm(
        &mut self,
        sender: NodeId,
        epoch: Epoch,
        prover: ShardIndex,
        verifier: ShardIndex,
        signature: crate::crypto::Signature,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(committee) = chain.committee(epoch) else {
            return;
        };
        if committee.owner(prover) != Some(self.id) || committee.owner(verifier) != Some(sender) {
            return;
        }
        let statement = Statement::ChallengeConfirm {
            epoch,
            prover,
            verifier,
        };
        if !chain.key(sender).is_some_and(|k| statement.verify(k, &signature)) {
            return;
        }
        let Some(phase) = self.challenge.as_mut().filter(|c| c.epoch == epoch) else {
            return;
        };
        let confirmations = phase.confirmations.entry(prover).or_default();
        confirmations.insert(verifier, signature);
        if confirmations.len() >= committee.quorum() && self.certify_sent.insert((epoch, prover)) {
            let confirmations = confirmations.iter().map(|(v, s)| (*v, *s)).collect();
            phase.certified.insert(prover);
            out.submit(Transaction::CertifyChallenge {
                epoch,
                prover,
                confirmations,
            });
        }
    }

    fn cheat_open(
        &mut self,
        epoch: Epoch,
        set: &ChallengeSet,
        committee: &Committee,
        out: &mut Outbox,
    ) {
        let Behavior::DeleteSymbols { fetch_from, .. } = self.behavior.clone() else {
            return;
        };
        for prover in committee.shards_of(self.id) {
            for blob in set.for_shard(prover).to_vec() {
                for &shard in &fetch_from {
                    let held = self
                        .cheat
                        .get(&(blob, prover))
                        .is_some_and(|row| row.known.contains_key(&shard));
                    if held || shard == prover {
                        continue;
                    }
                    let Some(owner) = committee.owner(shard) else {
                        continue;
                    };
                    let req = self.request(Pending::CheatFetch { blob, prover, shard });
                    self.send_node(
                        out,
                        owner,
                        Message::RecoveryRequest {
                            req,
                            blob,
                            target: prover,
                            dimension: Dimension::Primary,
                            shard,
                        },
                    );
                }
            }
            self.cheat_answer(epoch, prover, set, committee, out);
        }
    }

    fn on_cheat_symbol(
        &mut self,
        blob: BlobId,
        prover: ShardIndex,
        shard: ShardIndex,
        reply: Option<SymbolProof>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(metadata) = self.metadata(&blob).cloned() else {
            return;
        };
        let Some(proof) = reply else {
            return;
        };
        let valid = proof.symbol.row == prover
            && metadata
                .commitment(Dimension::Secondary, shard)
                .is_some_and(|c| c.verify(&proof));
        let Some(row) = self.cheat.get_mut(&(blob, prover)) else {
            return;
        };
        if !valid {
            return;
        }
        row.known.insert(shard, proof.symbol.data);
        let Ok(config) = metadata.config() else {
            return;
        };
        if row.known.len() >= config.secondary_threshold() && row.known.len() < config.n_shards() {
            let symbols: Vec<IntersectionSymbol> = row
                .known
                .iter()
                .map(|(&col, data)| IntersectionSymbol {
                    row: prover,
                    col,
                    origin: Dimension::Primary,
                    data: data.clone(),
                })
                .collect();
            if let Ok(primary) = recover_primary(&symbols, prover, &config) {
                if let Ok(all) = expand_primary_all(&primary, &config) {
                    row.known = all.into_iter().enumerate().collect();
                    out.note(format!("node {} rebuilt row {prover} of {blob}", self.id));
                }
            }
        }
        let Some(phase) = self.challenge.as_ref() else {
            return;
        };
        let (epoch, Some(set)) = (phase.epoch, phase.set.clone()) else {
            return;
        };
        let Some(committee) = chain.committee(epoch).cloned() else {
            return;
        };
        self.cheat_answer(epoch, prover, &set, &committee, out);
    }

    /// Sends every verifier the best response the cheater can make: correct
    /// symbols where it has them, stand-ins otherwise. Verifiers that got a
    /// correct response are not written to again.
    fn cheat_answer(
        &mut self,
        epoch: Epoch,
        prover: ShardIndex,
        set: &ChallengeSet,
        committee: &Committee,
        out: &mut Outbox,
    ) {
        let blobs = set.for_shard(prover).to_vec();
        for verifier in 0..committee.n_shards() {
            if self.cheat_answered.contains(&(prover, verifier)) {
                continue;
            }
            let mut proofs = Vec::with_capacity(blobs.len());
            let mut all_known = true;
            for blob in &blobs {
                let Some(row) = self.cheat.get(&(*blob, prover)) else {
                    all_known = false;
                    continue;
                };
                let data = match row.known.get(&verifier) {
                    Some(d) => d.clone(),
                    None => {
                        all_known = false;
                        vec![0xa5; row.symbol_size]
                    }
                };
                proofs.push((
                    *blob,
                    SymbolProof {
                        symbol: IntersectionSymbol {
                            row: prover,
                            col: verifier,
                            origin: Dimension::Primary,
                            data,
                        },
                        merkle_path: row.tree.path(verifier),
                        sliver_index: prover,
                        dimension: Dimension::Primary,
                    },
                ));
            }
            if all_known {
                self.cheat_answered.insert((prover, verifier));
            }
            let owner = committee.owner(verifier).expect("verifier in committee");
            self.send_node(
                out,
                owner,
                Message::ChallengeSymbols {
                    epoch,
                    prover,
                    verifier,
                    proofs,
                },
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Certificate;
    use crate::codec::encode_blob;
    use crate::commitments::{make_metadata, prove_symbol};

    fn setup(blob_bytes: &[u8]) -> (ChainState, Vec<SliverPair>, BlobMetadata, EncodingConfig) {
        let committee = Committee::new(0, vec![0, 1, 2, 3]).unwrap();
        let keys = (0..4).map(|i| (i, Keypair::derive(1, i).public())).collect();
        let mut chain = ChainState::genesis(committee, keys, 9).unwrap();
        let config = EncodingConfig::for_blob(1, blob_bytes.len()).unwrap();
        let pairs = encode_blob(blob_bytes, &config).unwrap();
        let metadata = make_metadata(&pairs, blob_bytes.len(), &config, 0).unwrap();
        chain
            .submit(Transaction::ReserveBlob {
                blob: metadata.blob_id(),
                size: blob_bytes.len() as u64,
                expiry_epoch: 10,
            })
            .unwrap();
        (chain, pairs, metadata, config)
    }

    fn node(id: NodeId) -> Node {
        Node::new(id, Keypair::derive(1, id), Behavior::Honest, NodeParams::default())
    }

    fn store_msg(metadata: &BlobMetadata, pairs: Vec<SliverPair>) -> Message {
        Message::StoreRequest {
            req: 1,
            blob: metadata.blob_id(),
            epoch: 0,
            metadata: metadata.clone(),
            pairs,
        }
    }

    fn store_result(out: &Outbox) -> Result<crate::crypto::Signature, RejectReason> {
        match &out.sends[0].1 {
            Message::StoreResponse { result, .. } => *result,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn honest_store_is_acked_with_a_chain_verifiable_signature() {
        let (mut chain, pairs, metadata, _) = setup(b"hello, world");
        let blob = metadata.blob_id();
        let mut signatures = vec![];
        for id in 0..3 {
            let mut n = node(id);
            let mut out = Outbox::default();
            n.handle(PartyId::Client(0), store_msg(&metadata, vec![pairs[id as usize].clone()]), &chain, &mut out);
            signatures.push((id, store_result(&out).unwrap()));
            assert!(n.holds_pair(&blob, id as usize));
        }
        chain
            .submit(Transaction::StoreCertificate(Certificate {
                blob,
                epoch: 0,
                signatures,
            }))
            .unwrap();
    }

    #[test]
    fn store_checks_have_distinct_reasons() {
        let (chain, pairs, metadata, config) = setup(b"hello, world");
        let mut out = Outbox::default();
        node(0).handle(PartyId::Client(0), store_msg(&metadata, vec![pairs[1].clone()]), &chain, &mut out);
        assert_eq!(store_result(&out), Err(RejectReason::WrongShards));

        let other = encode_blob(b"other blob!!", &config).unwrap();
        let unregistered = make_metadata(&other, 12, &config, 0).unwrap();
        let mut out = Outbox::default();
        node(0).handle(PartyId::Client(0), store_msg(&unregistered, vec![other[0].clone()]), &chain, &mut out);
        assert_eq!(store_result(&out), Err(RejectReason::Unregistered));

        let mut tampered = pairs[0].clone();
        tampered.primary.bytes_mut()[0] ^= 1;
        let mut out = Outbox::default();
        node(0).handle(PartyId::Client(0), store_msg(&metadata, vec![tampered]), &chain, &mut out);
        assert_eq!(store_result(&out), Err(RejectReason::CommitmentMismatch));

        let mut out = Outbox::default();
        node(9).handle(PartyId::Client(0), store_msg(&metadata, vec![]), &chain, &mut out);
        assert_eq!(store_result(&out), Err(RejectReason::NotInCommittee));
    }

    #[test]
    fn slivers_are_not_served_before_the_certificate() {
        let (chain, pairs, metadata, _) = setup(b"hello, world");
        let mut n = node(0);
        let mut out = Outbox::default();
        n.handle(PartyId::Client(0), store_msg(&metadata, vec![pairs[0].clone()]), &chain, &mut out);
        let mut out = Outbox::default();
        n.handle(
            PartyId::Client(1),
            Message::SliverRequest {
                req: 2,
                blob: metadata.blob_id(),
                shard: 0,
                dimension: Dimension::Secondary,
            },
            &chain,
            &mut out,
        );
        match &out.sends[0].1 {
            Message::SliverResponse { result, .. } => assert_eq!(result, &Err(RejectReason::NoCertificate)),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// A writer that committed a corrupted secondary sliver 3.
    fn inconsistent_fixture() -> (BlobMetadata, Vec<SliverPair>, EncodingConfig) {
        let config = EncodingConfig::new(1, 2).unwrap();
        let mut pairs = encode_blob(&(1u8..=12).collect::<Vec<_>>(), &config).unwrap();
        pairs[3].secondary.bytes_mut()[0] ^= 0xff;
        let metadata = make_metadata(&pairs, 12, &config, 0).unwrap();
        (metadata, pairs, config)
    }

    fn column_proofs(pairs: &[SliverPair], col: usize, rows: &[usize], config: &EncodingConfig) -> Vec<SymbolProof> {
        rows.iter()
            .map(|&r| prove_symbol(&Sliver::from(pairs[r].primary.clone()), col, config).unwrap())
            .collect()
    }

    #[test]
    fn inconsistency_proofs_verify_by_trial_recovery() {
        let (metadata, pairs, config) = inconsistent_fixture();
        let proof = InconsistencyProof {
            blob: metadata.blob_id(),
            dimension: Dimension::Secondary,
            index: 3,
            symbols: column_proofs(&pairs, 3, &[0, 1], &config),
        };
        assert!(verify_inconsistency(&proof, &metadata));

        let mut forged = proof.clone();
        forged.symbols[1].symbol.data[0] ^= 1;
        assert!(!verify_inconsistency(&forged, &metadata));

        let mut short = proof.clone();
        short.symbols.pop();
        assert!(!verify_inconsistency(&short, &metadata));

        let consistent_column = InconsistencyProof {
            index: 2,
            symbols: column_proofs(&pairs, 2, &[0, 1], &config),
            ..proof
        };
        assert!(!verify_inconsistency(&consistent_column, &metadata));
    }

    #[test]
    fn proofs_over_consistent_blobs_are_rejected() {
        let config = EncodingConfig::new(1, 2).unwrap();
        let pairs = encode_blob(b"hello, world", &config).unwrap();
        let metadata = make_metadata(&pairs, 12, &config, 0).unwrap();
        for col in 0..4 {
            let proof = InconsistencyProof {
                blob: metadata.blob_id(),
                dimension: Dimension::Secondary,
                index: col,
                symbols: column_proofs(&pairs, col, &[1, 2], &config),
            };
            assert!(!verify_inconsistency(&proof, &metadata));
        }
    }
}
