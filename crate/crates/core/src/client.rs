// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Writer and reader drivers.
//!
//! A write encodes the blob, reserves its id on chain, sends every owner of
//! the write committee its sliver pairs, and posts a certificate once acks
//! cover `2f+1` shards. A read fetches metadata shards until the metadata
//! decodes to the requested id, collects verified slivers, decodes, and
//! re-encodes to check the id before returning the blob.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{Certificate, ChainState, Transaction};
use crate::codec::{decode_from_primary, decode_from_secondary, encode_blob, Dimension, Sliver, SliverPair};
use crate::commitments::{commit_sliver, decode_metadata_for, make_metadata, BlobId, BlobMetadata, MetadataShard};
use crate::crypto::{NodeId, Signature, Statement};
use crate::erasure::EncodingConfig;
use crate::message::{wire_size, ClientId, Message, Outbox, PacedRequests, PartyId, RejectReason, RequestId};
use crate::{Epoch, ShardIndex};

pub type OpId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientParams {
    pub timeout: u64,
    /// Overrides the smallest symbol size that fits the blob.
    pub symbol_size: Option<usize>,
    /// Read primary slivers (`f+1`) instead of secondary ones (`2f+1`).
    pub primary_reads: bool,
}

impl Default for ClientParams {
    fn default() -> Self {
        Self {
            timeout: crate::node::DEFAULT_TIMEOUT,
            symbol_size: None,
            primary_reads: false,
        }
    }
}

/// A deliberately malformed write: secondary sliver `corrupt` is altered
/// before committing, and its pair is never sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzantineWrite {
    pub corrupt: ShardIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReceipt {
    pub op: OpId,
    pub blob: BlobId,
    pub certificate: Option<Certificate>,
    /// Last answer from each node: `"ack"` or the rejection reason.
    pub ack_status: BTreeMap<NodeId, String>,
    pub bytes_sent: u64,
    /// Times the write moved to a new write committee.
    pub restarts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadOutcome {
    Blob(#[serde(with = "crate::hex_bytes")] Vec<u8>),
    /// Slivers decoded to a blob whose encoding does not hash to the id.
    Inconsistent,
    /// The chain holds evidence of inconsistency, sequenced at `evidence_seq`.
    Invalid { evidence_seq: Option<u64> },
    NotCertified,
}

impl ReadOutcome {
    pub fn is_blob(&self) -> bool {
        matches!(self, ReadOutcome::Blob(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadResult {
    pub op: OpId,
    pub blob: BlobId,
    pub outcome: ReadOutcome,
    pub dimension: Dimension,
    pub slivers_used: Vec<ShardIndex>,
    pub bytes_received: u64,
    pub metadata_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completion {
    Write(WriteReceipt),
    Read(ReadResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WriteStage {
    Reserving,
    Storing,
    Certifying,
}

#[derive(Debug, Clone)]
struct WriteOp {
    blob: BlobId,
    metadata: BlobMetadata,
    pairs: Vec<SliverPair>,
    withheld: Option<ShardIndex>,
    stage: WriteStage,
    epoch: Epoch,
    acks: BTreeMap<NodeId, Signature>,
    status: BTreeMap<NodeId, String>,
    bytes_sent: u64,
    restarts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReadStage {
    Metadata,
    Slivers,
}

#[derive(Debug, Clone)]
struct ReadOp {
    blob: BlobId,
    stage: ReadStage,
    paced: PacedRequests,
    metadata_shards: Vec<MetadataShard>,
    metadata: Option<BlobMetadata>,
    dimension: Dimension,
    slivers: BTreeMap<ShardIndex, Sliver>,
    bytes_received: u64,
    metadata_bytes: u64,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Store(OpId, NodeId),
    Metadata(OpId, ShardIndex),
    Sliver(OpId, ShardIndex),
}

#[derive(Debug)]
pub struct Client {
    id: ClientId,
    params: ClientParams,
    writes: BTreeMap<OpId, WriteOp>,
    reads: BTreeMap<OpId, ReadOp>,
    requests: BTreeMap<RequestId, Pending>,
    timers: BTreeMap<u64, OpId>,
    next_request: RequestId,
    next_token: u64,
    completions: Vec<Completion>,
}

impl Client {
    pub fn new(id: ClientId, params: ClientParams) -> Self {
        Self {
            id,
            params,
            writes: BTreeMap::new(),
            reads: BTreeMap::new(),
            requests: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_request: 0,
            next_token: 0,
            completions: Vec::new(),
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    pub fn is_idle(&self) -> bool {
        self.writes.is_empty() && self.reads.is_empty()
    }

    fn request(&mut self, pending: Pending) -> RequestId {
        let req = self.next_request;
        self.next_request += 1;
        self.requests.insert(req, pending);
        req
    }

    fn arm(&mut self, op: OpId, out: &mut Outbox) {
        let token = self.next_token;
        self.next_token += 1;
        self.timers.insert(token, op);
        out.timer(self.params.timeout, token);
    }

    /// Encodes `blob` for the current write committee. Returns the id.
    pub fn start_write(
        &mut self,
        op: OpId,
        blob: &[u8],
        expiry_epoch: Epoch,
        byzantine: Option<ByzantineWrite>,
        chain: &ChainState,
        out: &mut Outbox,
    ) -> Result<BlobId, String> {
        if blob.is_empty() {
            return Err("empty blob".into());
        }
        let committee = chain.write_committee();
        let f = committee.f();
        let config = match self.params.symbol_size {
            Some(size) => EncodingConfig::new(f, size),
            None => EncodingConfig::for_blob(f, blob.len()),
        }
        .map_err(|e| e.to_string())?;
        let mut pairs = encode_blob(blob, &config).map_err(|e| e.to_string())?;
        let mut withheld = None;
        if let Some(b) = byzantine {
            if b.corrupt >= pairs.len() {
                return Err(format!("no shard {}", b.corrupt));
            }
            let bytes = pairs[b.corrupt].secondary.bytes_mut();
            bytes[0] ^= 0xff;
            withheld = Some(b.corrupt);
        }
        let epoch = chain.write_epoch();
        let metadata = make_metadata(&pairs, blob.len(), &config, epoch).map_err(|e| e.to_string())?;
        let id = metadata.blob_id();
        self.writes.insert(
            op,
            WriteOp {
                blob: id,
                metadata,
                pairs,
                withheld,
                stage: WriteStage::Reserving,
                epoch,
                acks: BTreeMap::new(),
                status: BTreeMap::new(),
                bytes_sent: 0,
                restarts: 0,
            },
        );
        out.submit(Transaction::ReserveBlob {
            blob: id,
            size: blob.len() as u64,
            expiry_epoch,
        });
        out.note(format!("client {} writing {id}", self.id));
        Ok(id)
    }

    pub fn start_read(&mut self, op: OpId, blob: BlobId, chain: &ChainState, out: &mut Outbox) {
        if let Some(seq) = chain.invalidation_seq(&blob) {
            self.finish_read_early(op, blob, ReadOutcome::Invalid { evidence_seq: Some(seq) });
            return;
        }
        let Some(committee) = chain.route_committee(&blob).filter(|_| chain.certificate(&blob).is_some()) else {
            self.finish_read_early(op, blob, ReadOutcome::NotCertified);
            return;
        };
        let n = committee.n_shards();
        let anchor = self.id as usize % n;
        let candidates: Vec<ShardIndex> = (0..n).map(|d| (anchor + d) % n).collect();
        let mut paced = PacedRequests::new(candidates, committee.validity());
        let asked = paced.start();
        let dimension = if self.params.primary_reads {
            Dimension::Primary
        } else {
            Dimension::Secondary
        };
        self.reads.insert(
            op,
            ReadOp {
                blob,
                stage: ReadStage::Metadata,
                paced,
                metadata_shards: vec![],
                metadata: None,
                dimension,
                slivers: BTreeMap::new(),
                bytes_received: 0,
                metadata_bytes: 0,
            },
        );
        self.ask(op, asked, chain, out);
        self.arm(op, out);
    }

    fn finish_read_early(&mut self, op: OpId, blob: BlobId, outcome: ReadOutcome) {
        self.completions.push(Completion::Read(ReadResult {
            op,
            blob,
            outcome,
            dimension: Dimension::Secondary,
            slivers_used: vec![],
            bytes_received: 0,
            metadata_bytes: 0,
        }));
    }

    pub fn handle(&mut self, _from: PartyId, msg: Message, chain: &ChainState, out: &mut Outbox) {
        let size = wire_size(&msg);
        match msg {
            Message::TxResult { kind, blob, result } => self.on_tx_result(&kind, blob, result, chain, out),
            Message::StoreResponse {
                req,
                blob,
                epoch,
                result,
            } => {
                if let Some(Pending::Store(op, node)) = self.requests.remove(&req) {
                    self.on_store_response(op, node, blob, epoch, result, chain, out);
                }
            }
            Message::MetadataResponse { req, result, .. } => {
                if let Some(Pending::Metadata(op, shard)) = self.requests.remove(&req) {
                    if let Some(read) = self.reads.get_mut(&op) {
                        read.bytes_received += size;
                        read.metadata_bytes += size;
                    }
                    self.on_metadata(op, shard, result, chain, out);
                }
            }
            Message::SliverResponse { req, result, .. } => {
                if let Some(Pending::Sliver(op, shard)) = self.requests.remove(&req) {
                    if let Some(read) = self.reads.get_mut(&op) {
                        read.bytes_received += size;
                    }
                    self.on_sliver(op, shard, result, chain, out);
                }
            }
            Message::Timer { token } => {
                if let Some(op) = self.timers.remove(&token) {
                    self.on_timer(op, chain, out);
                }
            }
            _ => {}
        }
    }

    // ----- writes -----

    fn on_tx_result(
        &mut self,
        kind: &str,
        blob: Option<BlobId>,
        result: Result<u64, String>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(blob) = blob else {
            return;
        };
        let Some((&op, _)) = self.writes.iter().find(|(_, w)| w.blob == blob) else {
            return;
        };
        let stage = self.writes[&op].stage;
        match (kind, stage) {
            ("ReserveBlob", WriteStage::Reserving) => match result {
                Ok(_) => self.send_stores(op, chain, out),
                Err(e) => self.fail_write(op, format!("reservation rejected: {e}")),
            },
            ("StoreCertificate", WriteStage::Certifying) => match result {
                Ok(_) => self.finish_write(op, chain),
                Err(_) if chain.certificate(&blob).is_some() => self.finish_write(op, chain),
                Err(e) if chain.write_epoch() != self.writes[&op].epoch => {
                    out.note(format!("client {} certificate rejected ({e}); restarting", self.id));
                    self.restart(op, chain, out);
                }
                Err(e) => self.fail_write(op, format!("certificate rejected: {e}")),
            },
            _ => {}
        }
    }

    fn send_stores(&mut self, op: OpId, chain: &ChainState, out: &mut Outbox) {
        let epoch = chain.write_epoch();
        let committee = chain.committee(epoch).expect("write committee").clone();
        let write = self.writes.get_mut(&op).unwrap();
        write.stage = WriteStage::Storing;
        if write.epoch != epoch {
            write.epoch = epoch;
            write.metadata.epoch_written = epoch;
        }
        let mut sends = Vec::new();
        for node in committee.members() {
            if write.acks.contains_key(&node) || write.status.contains_key(&node) {
                continue;
            }
            let pairs: Vec<SliverPair> = committee
                .shards_of(node)
                .into_iter()
                .filter(|&s| Some(s) != write.withheld)
                .map(|s| write.pairs[s].clone())
                .collect();
            if pairs.len() < committee.weight(node) {
                continue;
            }
            sends.push((node, pairs));
        }
        for (node, pairs) in sends {
            let req = self.request(Pending::Store(op, node));
            let write = self.writes.get_mut(&op).unwrap();
            let msg = Message::StoreRequest {
                req,
                blob: write.blob,
                epoch,
                metadata: write.metadata.clone(),
                pairs,
            };
            write.bytes_sent += wire_size(&msg);
            out.send(PartyId::Node(node), msg);
        }
        self.arm(op, out);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_store_response(
        &mut self,
        op: OpId,
        node: NodeId,
        blob: BlobId,
        epoch: Epoch,
        result: Result<Signature, RejectReason>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        let Some(write) = self.writes.get_mut(&op) else {
            return;
        };
        if write.stage != WriteStage::Storing || write.blob != blob || write.epoch != epoch {
            return;
        }
        match result {
            Ok(sig) => {
                let valid = chain
                    .key(node)
                    .is_some_and(|k| Statement::StorageAck { blob, epoch }.verify(k, &sig));
                if !valid {
                    write.status.insert(node, "bad signature".into());
                    return;
                }
                write.status.insert(node, "ack".into());
                write.acks.insert(node, sig);
            }
            Err(reason) => {
                write.status.insert(node, format!("{reason:?}"));
                if reason == RejectReason::WrongEpoch && chain.write_epoch() != write.epoch {
                    self.restart(op, chain, out);
                }
                return;
            }
        }
        let committee = chain.committee(epoch).expect("committee").clone();
        if committee.weight_of(write.acks.keys()) >= committee.quorum() {
            write.stage = WriteStage::Certifying;
            let cert = Certificate {
                blob,
                epoch,
                signatures: write.acks.iter().map(|(n, s)| (*n, *s)).collect(),
            };
            out.submit(Transaction::StoreCertificate(cert));
        }
    }

    fn restart(&mut self, op: OpId, chain: &ChainState, out: &mut Outbox) {
        let write = self.writes.get_mut(&op).unwrap();
        write.acks.clear();
        write.status.clear();
        write.restarts += 1;
        out.note(format!(
            "client {} moving write {} to epoch {}",
            self.id,
            write.blob,
            chain.write_epoch()
        ));
        self.send_stores(op, chain, out);
    }

    fn finish_write(&mut self, op: OpId, chain: &ChainState) {
        let write = self.writes.remove(&op).unwrap();
        self.completions.push(Completion::Write(WriteReceipt {
            op,
            blob: write.blob,
            certificate: chain.certificate(&write.blob).cloned(),
            ack_status: write.status,
            bytes_sent: write.bytes_sent,
            restarts: write.restarts,
            error: None,
        }));
    }

    fn fail_write(&mut self, op: OpId, error: String) {
        let write = self.writes.remove(&op).unwrap();
        self.completions.push(Completion::Write(WriteReceipt {
            op,
            blob: write.blob,
            certificate: None,
            ack_status: write.status,
            bytes_sent: write.bytes_sent,
            restarts: write.restarts,
            error: Some(error),
        }));
    }

    // ----- reads -----

    fn ask(&mut self, op: OpId, shards: Vec<ShardIndex>, chain: &ChainState, out: &mut Outbox) {
        let Some(read) = self.reads.get(&op) else {
            return;
        };
        let (blob, stage, dimension) = (read.blob, read.stage, read.dimension);
        for shard in shards {
            let Some(owner) = chain.route_committee(&blob).and_then(|c| c.owner(shard)) else {
                continue;
            };
            let msg = match stage {
                ReadStage::Metadata => Message::MetadataRequest {
                    req: self.request(Pending::Metadata(op, shard)),
                    blob,
                    shard,
                },
                ReadStage::Slivers => Message::SliverRequest {
                    req: self.request(Pending::Sliver(op, shard)),
                    blob,
                    shard,
                    dimension,
                },
            };
            out.send(PartyId::Node(owner), msg);
        }
    }

    /// Ends the read with `Invalid` if the chain has invalidated the blob.
    fn check_invalidated(&mut self, op: OpId, chain: &ChainState) -> bool {
        let Some(read) = self.reads.get(&op) else {
            return true;
        };
        match chain.invalidation_seq(&read.blob) {
            Some(seq) => {
                self.finish_read(op, ReadOutcome::Invalid { evidence_seq: Some(seq) });
                true
            }
            None => false,
        }
    }

    fn on_metadata(
        &mut self,
        op: OpId,
        shard: ShardIndex,
        result: Result<MetadataShard, RejectReason>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if self.check_invalidated(op, chain) {
            return;
        }
        let Some(read) = self.reads.get_mut(&op) else {
            return;
        };
        if read.stage != ReadStage::Metadata {
            return;
        }
        let n = chain.route_committee(&read.blob).map_or(0, |c| c.n_shards());
        let retry = match result {
            Ok(ms) if ms.index == shard && ms.n_shards == n && ms.verify() => {
                read.metadata_shards.push(ms);
                read.paced.on_success(shard);
                vec![]
            }
            _ => read.paced.on_failure(shard),
        };
        self.ask(op, retry, chain, out);
        let read = self.reads.get_mut(&op).unwrap();
        if !read.paced.is_done() {
            return;
        }
        match decode_metadata_for(&read.metadata_shards, n, &read.blob) {
            Ok(metadata) => {
                let need = match read.dimension {
                    Dimension::Primary => metadata.config().map(|c| c.primary_threshold()),
                    Dimension::Secondary => metadata.config().map(|c| c.secondary_threshold()),
                };
                let Ok(need) = need else {
                    self.finish_read(op, ReadOutcome::Inconsistent);
                    return;
                };
                let anchor = self.id as usize % n;
                let candidates: Vec<ShardIndex> = (0..n).map(|d| (anchor + d) % n).collect();
                read.metadata = Some(metadata);
                read.stage = ReadStage::Slivers;
                read.paced = PacedRequests::new(candidates, need);
                let asked = read.paced.start();
                self.ask(op, asked, chain, out);
            }
            Err(_) => {
                let more = read.paced.need() + 1;
                let asked = read.paced.raise_need(more);
                self.ask(op, asked, chain, out);
            }
        }
    }

    fn on_sliver(
        &mut self,
        op: OpId,
        shard: ShardIndex,
        result: Result<Sliver, RejectReason>,
        chain: &ChainState,
        out: &mut Outbox,
    ) {
        if self.check_invalidated(op, chain) {
            return;
        }
        let Some(read) = self.reads.get_mut(&op) else {
            return;
        };
        if read.stage != ReadStage::Slivers {
            return;
        }
        let metadata = read.metadata.as_ref().unwrap();
        let config = metadata.config().expect("decoded metadata");
        let verified = result.ok().filter(|s| {
            s.dimension() == read.dimension
                && s.index() == shard
                && s.check(&config).is_ok()
                && commit_sliver(s, &config).ok() == metadata.commitment(read.dimension, shard)
        });
        let retry = match verified {
            Some(s) => {
                read.slivers.insert(shard, s);
                read.paced.on_success(shard);
                vec![]
            }
            None => read.paced.on_failure(shard),
        };
        self.ask(op, retry, chain, out);
        if self.reads[&op].paced.is_done() {
            let outcome = self.decode(op);
            self.finish_read(op, outcome);
        }
    }

    fn decode(&self, op: OpId) -> ReadOutcome {
        let read = &self.reads[&op];
        let metadata = read.metadata.as_ref().unwrap();
        let config = metadata.config().expect("decoded metadata");
        let matrix = match read.dimension {
            Dimension::Secondary => {
                let slivers: Vec<_> = read
                    .slivers
                    .values()
                    .filter_map(|s| match s {
                        Sliver::Secondary(s) => Some(s.clone()),
                        Sliver::Primary(_) => None,
                    })
                    .collect();
                decode_from_secondary(&slivers, &config)
            }
            Dimension::Primary => {
                let slivers: Vec<_> = read
                    .slivers
                    .values()
                    .filter_map(|s| match s {
                        Sliver::Primary(p) => Some(p.clone()),
                        Sliver::Secondary(_) => None,
                    })
                    .collect();
                decode_from_primary(&slivers, &config)
            }
        };
        let Ok(blob) = matrix.and_then(|m| m.to_blob(metadata.blob_len as usize)) else {
            return ReadOutcome::Inconsistent;
        };
        let reencoded = encode_blob(&blob, &config)
            .ok()
            .and_then(|pairs| make_metadata(&pairs, blob.len(), &config, metadata.epoch_written).ok());
        match reencoded {
            Some(m) if m.blob_id() == read.blob => ReadOutcome::Blob(blob),
            _ => ReadOutcome::Inconsistent,
        }
    }

    fn finish_read(&mut self, op: OpId, outcome: ReadOutcome) {
        let Some(read) = self.reads.remove(&op) else {
            return;
        };
        self.requests.retain(|_, p| !matches!(p, Pending::Metadata(o, _) | Pending::Sliver(o, _) if *o == op));
        self.completions.push(Completion::Read(ReadResult {
            op,
            blob: read.blob,
            outcome,
            dimension: read.dimension,
            slivers_used: read.slivers.keys().copied().collect(),
            bytes_received: read.bytes_received,
            metadata_bytes: read.metadata_bytes,
        }));
    }

    fn on_timer(&mut self, op: OpId, chain: &ChainState, out: &mut Outbox) {
        if let Some(write) = self.writes.get(&op) {
            if write.stage != WriteStage::Storing {
                return;
            }
            if chain.certificate(&write.blob).is_some() {
                self.finish_write(op, chain);
            } else if chain.write_epoch() != write.epoch {
                self.restart(op, chain, out);
            } else {
                self.send_stores(op, chain, out);
            }
            return;
        }
        if self.check_invalidated(op, chain) {
            return;
        }
        let Some(read) = self.reads.get_mut(&op) else {
            return;
        };
        let asked = read.paced.on_timeout();
        self.ask(op, asked, chain, out);
        self.arm(op, out);
    }
}

/// Blob ids a set of completions certified.
pub fn certified_blobs(completions: &[Completion]) -> BTreeSet<BlobId> {
    completions
        .iter()
        .filter_map(|c| match c {
            Completion::Write(w) if w.certificate.is_some() => Some(w.blob),
            _ => None,
        })
        .collect()
}
