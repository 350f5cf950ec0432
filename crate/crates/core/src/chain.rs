// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! A totally ordered mock control plane.
//!
//! [`ChainState`] is a pure fold over a log of [`Transaction`]s. A
//! transaction either fails validation and leaves no trace, or is appended
//! with a sequence number and emits [`Event`]s. Quorums are counted in shards
//! of the relevant committee.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitments::{sha256, BlobId, Digest};
use crate::crypto::{NodeId, PublicKey, Signature, Statement};
use crate::{Epoch, ShardIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("chain already has a genesis")]
    GenesisRepeated,
    #[error("chain has no genesis")]
    NoGenesis,
    #[error("invalid committee: {0}")]
    InvalidCommittee(String),
    #[error("blob size must be positive")]
    ZeroSize,
    #[error("expiry epoch {expiry} is before the current epoch {current}")]
    ExpiredReservation { expiry: Epoch, current: Epoch },
    #[error("blob {0} is already registered with different parameters")]
    ConflictingRegistration(BlobId),
    #[error("blob {0} is not registered")]
    Unregistered(BlobId),
    #[error("blob {0} has expired")]
    Expired(BlobId),
    #[error("blob {0} has no certificate")]
    NotCertified(BlobId),
    #[error("blob {0} is invalid")]
    Invalid(BlobId),
    #[error("certificate for epoch {got}, writes go to epoch {expected}")]
    WrongEpoch { got: Epoch, expected: Epoch },
    #[error("signatures cover {have} shards, need {need}")]
    InsufficientWeight { have: usize, need: usize },
    #[error("node {0} is not a member of the relevant committee")]
    NotMember(NodeId),
    #[error("bad signature from node {0}")]
    BadSignature(NodeId),
    #[error("node {0} has no registered key")]
    UnknownKey(NodeId),
    #[error("node {0} is already registered with a different key")]
    ConflictingKey(NodeId),
    #[error("shard {0} out of range")]
    BadShard(ShardIndex),
    #[error("transaction not allowed in the current phase: {0}")]
    Phase(String),
}

pub type Result<T, E = ChainError> = std::result::Result<T, E>;

/// The shard-to-node assignment of one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    pub epoch: Epoch,
    /// `shards[i]` owns shard `i`.
    pub shards: Vec<NodeId>,
}

impl Committee {
    pub fn new(epoch: Epoch, shards: Vec<NodeId>) -> Result<Self> {
        let c = Self { epoch, shards };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let n = self.shards.len();
        if n == 0 || n % 3 != 1 {
            return Err(ChainError::InvalidCommittee(format!(
                "{n} shards is not of the form 3f+1"
            )));
        }
        Ok(())
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn f(&self) -> usize {
        (self.n_shards() - 1) / 3
    }

    /// `2f+1`.
    pub fn quorum(&self) -> usize {
        2 * self.f() + 1
    }

    /// `f+1`.
    pub fn validity(&self) -> usize {
        self.f() + 1
    }

    pub fn owner(&self, shard: ShardIndex) -> Option<NodeId> {
        self.shards.get(shard).copied()
    }

    pub fn shards_of(&self, node: NodeId) -> Vec<ShardIndex> {
        (0..self.n_shards())
            .filter(|&s| self.shards[s] == node)
            .collect()
    }

    pub fn weight(&self, node: NodeId) -> usize {
        self.shards.iter().filter(|&&o| o == node).count()
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.shards.contains(&node)
    }

    pub fn members(&self) -> BTreeSet<NodeId> {
        self.shards.iter().copied().collect()
    }

    /// Shards owned by the distinct nodes in `nodes`.
    pub fn weight_of<'a>(&self, nodes: impl IntoIterator<Item = &'a NodeId>) -> usize {
        let distinct: BTreeSet<NodeId> = nodes.into_iter().copied().collect();
        distinct.iter().map(|&n| self.weight(n)).sum()
    }
}

/// `2f+1` storage acknowledgements over a blob id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub blob: BlobId,
    pub epoch: Epoch,
    pub signatures: Vec<(NodeId, Signature)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub size: u64,
    pub expiry_epoch: Epoch,
    pub registered_epoch: Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochPhase {
    Steady,
    Reconfiguring,
    Challenge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeRecord {
    pub epoch: Epoch,
    pub acks: BTreeSet<NodeId>,
    pub coin: Option<Digest>,
    /// Challengeable blobs, fixed when the phase opens.
    pub blobs: Vec<BlobId>,
    pub certified: BTreeMap<ShardIndex, u64>,
    pub ended: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transaction {
    Genesis {
        committee: Committee,
        keys: Vec<(NodeId, PublicKey)>,
        coin_seed: u64,
    },
    ReserveBlob {
        blob: BlobId,
        size: u64,
        expiry_epoch: Epoch,
    },
    StoreCertificate(Certificate),
    AttestInconsistency {
        blob: BlobId,
        node: NodeId,
        signature: Signature,
    },
    BeginReconfiguration {
        committee: Committee,
        keys: Vec<(NodeId, PublicKey)>,
    },
    SignalReady {
        node: NodeId,
        epoch: Epoch,
        signature: Signature,
    },
    BeginChallenge {
        epoch: Epoch,
    },
    ChallengeAck {
        node: NodeId,
        epoch: Epoch,
        signature: Signature,
    },
    CertifyChallenge {
        epoch: Epoch,
        prover: ShardIndex,
        confirmations: Vec<(ShardIndex, Signature)>,
    },
    EndChallenge {
        epoch: Epoch,
    },
}

impl Transaction {
    pub fn kind(&self) -> &'static str {
        match self {
            Transaction::Genesis { .. } => "Genesis",
            Transaction::ReserveBlob { .. } => "ReserveBlob",
            Transaction::StoreCertificate(_) => "StoreCertificate",
            Transaction::AttestInconsistency { .. } => "AttestInconsistency",
            Transaction::BeginReconfiguration { .. } => "BeginReconfiguration",
            Transaction::SignalReady { .. } => "SignalReady",
            Transaction::BeginChallenge { .. } => "BeginChallenge",
            Transaction::ChallengeAck { .. } => "ChallengeAck",
            Transaction::CertifyChallenge { .. } => "CertifyChallenge",
            Transaction::EndChallenge { .. } => "EndChallenge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Genesis { epoch: Epoch },
    Registered { blob: BlobId },
    /// The point of availability.
    CertificateStored { blob: BlobId, epoch: Epoch },
    InconsistencyAttested { blob: BlobId, node: NodeId },
    BlobInvalidated { blob: BlobId },
    ReconfigurationStarted { epoch: Epoch },
    ReadySignaled { node: NodeId, epoch: Epoch },
    EpochCompleted { epoch: Epoch },
    ChallengeStarted { epoch: Epoch },
    ChallengeAcked { node: NodeId, epoch: Epoch },
    ChallengeOpened { epoch: Epoch, coin: Digest },
    ChallengeCertified { epoch: Epoch, prover: ShardIndex },
    ChallengeEnded { epoch: Epoch },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub tx: Transaction,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ExportLine {
    seq: u64,
    tx: String,
    payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChainState {
    seq: u64,
    keys: BTreeMap<NodeId, PublicKey>,
    coin_seed: u64,
    registrations: BTreeMap<BlobId, Registration>,
    certificates: BTreeMap<BlobId, Certificate>,
    attestations: BTreeMap<BlobId, BTreeSet<NodeId>>,
    invalid: BTreeMap<BlobId, u64>,
    committees: BTreeMap<Epoch, Committee>,
    current_epoch: Epoch,
    phase: Option<EpochPhase>,
    ready: BTreeSet<NodeId>,
    migrations: BTreeMap<Epoch, Vec<BlobId>>,
    challenges: BTreeMap<Epoch, ChallengeRecord>,
    log: Vec<LogEntry>,
}

impl ChainState {
    pub fn genesis(committee: Committee, keys: Vec<(NodeId, PublicKey)>, coin_seed: u64) -> Result<Self> {
        let mut chain = Self::default();
        chain.submit(Transaction::Genesis {
            committee,
            keys,
            coin_seed,
        })?;
        Ok(chain)
    }

    /// Validates and sequences `tx`. Rejected transactions leave no trace.
    pub fn submit(&mut self, tx: Transaction) -> Result<(u64, Vec<Event>)> {
        let mut next = self.clone_without_log();
        let events = next.apply(&tx)?;
        let seq = self.seq;
        next.seq = seq + 1;
        next.log = std::mem::take(&mut self.log);
        next.log.push(LogEntry {
            seq,
            tx,
            events: events.clone(),
        });
        *self = next;
        Ok((seq, events))
    }

    fn clone_without_log(&mut self) -> Self {
        let log = std::mem::take(&mut self.log);
        let copy = self.clone();
        self.log = log;
        copy
    }

    fn apply(&mut self, tx: &Transaction) -> Result<Vec<Event>> {
        if self.phase.is_none() && !matches!(tx, Transaction::Genesis { .. }) {
            return Err(ChainError::NoGenesis);
        }
        match tx {
            Transaction::Genesis {
                committee,
                keys,
                coin_seed,
            } => {
                if self.phase.is_some() {
                    return Err(ChainError::GenesisRepeated);
                }
                committee.validate()?;
                self.add_keys(keys)?;
                self.coin_seed = *coin_seed;
                self.current_epoch = committee.epoch;
                self.committees.insert(committee.epoch, committee.clone());
                self.phase = Some(EpochPhase::Steady);
                Ok(vec![Event::Genesis {
                    epoch: committee.epoch,
                }])
            }
            Transaction::ReserveBlob {
                blob,
                size,
                expiry_epoch,
            } => self.reserve_blob(*blob, *size, *expiry_epoch),
            Transaction::StoreCertificate(cert) => self.store_certificate(cert),
            Transaction::AttestInconsistency {
                blob,
                node,
                signature,
            } => self.attest_inconsistency(*blob, *node, signature),
            Transaction::BeginReconfiguration { committee, keys } => {
                self.begin_reconfiguration(committee, keys)
            }
            Transaction::SignalReady {
                node,
                epoch,
                signature,
            } => self.signal_ready(*node, *epoch, signature),
            Transaction::BeginChallenge { epoch } => self.begin_challenge(*epoch),
            Transaction::ChallengeAck {
                node,
                epoch,
                signature,
            } => self.challenge_ack(*node, *epoch, signature),
            Transaction::CertifyChallenge {
                epoch,
                prover,
                confirmations,
            } => self.certify_challenge(*epoch, *prover, confirmations),
            Transaction::EndChallenge { epoch } => self.end_challenge(*epoch),
        }
    }

    fn add_keys(&mut self, keys: &[(NodeId, PublicKey)]) -> Result<()> {
        for (node, key) in keys {
            match self.keys.get(node) {
                Some(k) if k != key => return Err(ChainError::ConflictingKey(*node)),
                _ => {
                    self.keys.insert(*node, *key);
                }
            }
        }
        Ok(())
    }

    fn verify(&self, node: NodeId, statement: &Statement, signature: &Signature) -> Result<()> {
        let key = self.keys.get(&node).ok_or(ChainError::UnknownKey(node))?;
        if statement.verify(key, signature) {
            Ok(())
        } else {
            Err(ChainError::BadSignature(node))
        }
    }

    fn reserve_blob(&mut self, blob: BlobId, size: u64, expiry_epoch: Epoch) -> Result<Vec<Event>> {
        if size == 0 {
            return Err(ChainError::ZeroSize);
        }
        if expiry_epoch < self.current_epoch {
            return Err(ChainError::ExpiredReservation {
                expiry: expiry_epoch,
                current: self.current_epoch,
            });
        }
        if let Some(existing) = self.registrations.get(&blob) {
            if existing.size == size && existing.expiry_epoch == expiry_epoch {
                return Ok(vec![]);
            }
            return Err(ChainError::ConflictingRegistration(blob));
        }
        self.registrations.insert(
            blob,
            Registration {
                size,
                expiry_epoch,
                registered_epoch: self.current_epoch,
            },
        );
        Ok(vec![Event::Registered { blob }])
    }

    fn store_certificate(&mut self, cert: &Certificate) -> Result<Vec<Event>> {
        if !self.registrations.contains_key(&cert.blob) {
            return Err(ChainError::Unregistered(cert.blob));
        }
        if self.is_expired(&cert.blob) {
            return Err(ChainError::Expired(cert.blob));
        }
        if self.certificates.contains_key(&cert.blob) {
            return Ok(vec![]);
        }
        let expected = self.write_epoch();
        if cert.epoch != expected {
            return Err(ChainError::WrongEpoch {
                got: cert.epoch,
                expected,
            });
        }
        let committee = self.committee(cert.epoch).expect("write committee exists");
        let statement = Statement::StorageAck {
            blob: cert.blob,
            epoch: cert.epoch,
        };
        let mut signers = BTreeSet::new();
        for (node, sig) in &cert.signatures {
            if !committee.is_member(*node) {
                return Err(ChainError::NotMember(*node));
            }
            self.verify(*node, &statement, sig)?;
            signers.insert(*node);
        }
        let have = committee.weight_of(&signers);
        if have < committee.quorum() {
            return Err(ChainError::InsufficientWeight {
                have,
                need: committee.quorum(),
            });
        }
        self.certificates.insert(cert.blob, cert.clone());
        Ok(vec![Event::CertificateStored {
            blob: cert.blob,
            epoch: cert.epoch,
        }])
    }

    fn attest_inconsistency(
        &mut self,
        blob: BlobId,
        node: NodeId,
        signature: &Signature,
    ) -> Result<Vec<Event>> {
        let committee = self
            .route_committee(&blob)
            .ok_or(ChainError::NotCertified(blob))?
            .clone();
        if !committee.is_member(node) {
            return Err(ChainError::NotMember(node));
        }
        self.verify(node, &Statement::Inconsistent { blob }, signature)?;
        let set = self.attestations.entry(blob).or_default();
        if !set.insert(node) {
            return Ok(vec![]);
        }
        let mut events = vec![Event::InconsistencyAttested { blob, node }];
        if !self.invalid.contains_key(&blob) && committee.weight_of(&*set) >= committee.validity() {
            self.invalid.insert(blob, self.seq);
            events.push(Event::BlobInvalidated { blob });
        }
        Ok(events)
    }

    fn begin_reconfiguration(
        &mut self,
        committee: &Committee,
        keys: &[(NodeId, PublicKey)],
    ) -> Result<Vec<Event>> {
        committee.validate()?;
        let next = self.current_epoch + 1;
        match self.phase() {
            EpochPhase::Reconfiguring if self.committees.get(&next) == Some(committee) => {
                return Ok(vec![])
            }
            EpochPhase::Steady => {}
            other => return Err(ChainError::Phase(format!("{other:?}"))),
        }
        if committee.epoch != next {
            return Err(ChainError::InvalidCommittee(format!(
                "expected epoch {next}, got {}",
                committee.epoch
            )));
        }
        if committee.n_shards() != self.current_committee().n_shards() {
            return Err(ChainError::InvalidCommittee(
                "shard count cannot change between epochs".into(),
            ));
        }
        self.add_keys(keys)?;
        for node in committee.members() {
            if !self.keys.contains_key(&node) {
                return Err(ChainError::UnknownKey(node));
            }
        }
        let held = self.blobs_held_through(self.current_epoch);
        self.migrations.insert(next, held);
        self.committees.insert(next, committee.clone());
        self.ready.clear();
        self.phase = Some(EpochPhase::Reconfiguring);
        Ok(vec![Event::ReconfigurationStarted { epoch: next }])
    }

    fn signal_ready(&mut self, node: NodeId, epoch: Epoch, signature: &Signature) -> Result<Vec<Event>> {
        if self.phase() != EpochPhase::Reconfiguring || epoch != self.current_epoch + 1 {
            return Err(ChainError::Phase(format!("ready for epoch {epoch}")));
        }
        let committee = self.committees[&epoch].clone();
        if !committee.is_member(node) {
            return Err(ChainError::NotMember(node));
        }
        self.verify(node, &Statement::Ready { epoch }, signature)?;
        if !self.ready.insert(node) {
            return Ok(vec![]);
        }
        let mut events = vec![Event::ReadySignaled { node, epoch }];
        if committee.weight_of(&self.ready) >= committee.quorum() {
            self.current_epoch = epoch;
            self.phase = Some(EpochPhase::Steady);
            self.ready.clear();
            events.push(Event::EpochCompleted { epoch });
        }
        Ok(events)
    }

    fn begin_challenge(&mut self, epoch: Epoch) -> Result<Vec<Event>> {
        if self.phase() != EpochPhase::Steady || epoch != self.current_epoch {
            return Err(ChainError::Phase(format!("challenge for epoch {epoch}")));
        }
        if self.challenges.contains_key(&epoch) {
            return Err(ChainError::Phase(format!("epoch {epoch} already challenged")));
        }
        self.challenges.insert(
            epoch,
            ChallengeRecord {
                epoch,
                acks: BTreeSet::new(),
                coin: None,
                blobs: vec![],
                certified: BTreeMap::new(),
                ended: false,
            },
        );
        self.phase = Some(EpochPhase::Challenge);
        Ok(vec![Event::ChallengeStarted { epoch }])
    }

    fn open_challenge(&self, epoch: Epoch) -> Result<&ChallengeRecord> {
        match self.challenges.get(&epoch) {
            Some(r) if !r.ended && self.phase() == EpochPhase::Challenge => Ok(r),
            _ => Err(ChainError::Phase(format!("no open challenge for epoch {epoch}"))),
        }
    }

    fn challenge_ack(&mut self, node: NodeId, epoch: Epoch, signature: &Signature) -> Result<Vec<Event>> {
        self.open_challenge(epoch)?;
        let committee = self.current_committee().clone();
        if !committee.is_member(node) {
            return Err(ChainError::NotMember(node));
        }
        self.verify(node, &Statement::ChallengeAck { epoch }, signature)?;
        let blobs = self.blobs_held_through(epoch);
        let mut material = b"redstuff/coin".to_vec();
        material.extend_from_slice(&self.coin_seed.to_be_bytes());
        material.extend_from_slice(&epoch.to_be_bytes());
        let record = self.challenges.get_mut(&epoch).unwrap();
        if !record.acks.insert(node) {
            return Ok(vec![]);
        }
        let mut events = vec![Event::ChallengeAcked { node, epoch }];
        if record.coin.is_none() && committee.weight_of(&record.acks) >= committee.quorum() {
            let coin = sha256(&material);
            record.coin = Some(coin);
            record.blobs = blobs;
            events.push(Event::ChallengeOpened { epoch, coin });
        }
        Ok(events)
    }

    fn certify_challenge(
        &mut self,
        epoch: Epoch,
        prover: ShardIndex,
        confirmations: &[(ShardIndex, Signature)],
    ) -> Result<Vec<Event>> {
        let record = self.open_challenge(epoch)?;
        if record.coin.is_none() {
            return Err(ChainError::Phase("challenge not yet open".into()));
        }
        let committee = self.current_committee().clone();
        if prover >= committee.n_shards() {
            return Err(ChainError::BadShard(prover));
        }
        if record.certified.contains_key(&prover) {
            return Ok(vec![]);
        }
        let mut verifiers = BTreeSet::new();
        for (verifier, sig) in confirmations {
            let owner = committee
                .owner(*verifier)
                .ok_or(ChainError::BadShard(*verifier))?;
            self.verify(
                owner,
                &Statement::ChallengeConfirm {
                    epoch,
                    prover,
                    verifier: *verifier,
                },
                sig,
            )?;
            verifiers.insert(*verifier);
        }
        if verifiers.len() < committee.quorum() {
            return Err(ChainError::InsufficientWeight {
                have: verifiers.len(),
                need: committee.quorum(),
            });
        }
        let seq = self.seq;
        let record = self.challenges.get_mut(&epoch).unwrap();
        record.certified.insert(prover, seq);
        let mut events = vec![Event::ChallengeCertified { epoch, prover }];
        if record.certified.len() >= committee.quorum() {
            record.ended = true;
            self.phase = Some(EpochPhase::Steady);
            events.push(Event::ChallengeEnded { epoch });
        }
        Ok(events)
    }

    fn end_challenge(&mut self, epoch: Epoch) -> Result<Vec<Event>> {
        self.open_challenge(epoch)?;
        self.challenges.get_mut(&epoch).unwrap().ended = true;
        self.phase = Some(EpochPhase::Steady);
        Ok(vec![Event::ChallengeEnded { epoch }])
    }

    /// Certified, valid blobs whose certificate epoch is at most `epoch` and
    /// that are still unexpired in the epoch after it.
    fn blobs_held_through(&self, epoch: Epoch) -> Vec<BlobId> {
        self.certificates
            .values()
            .filter(|c| c.epoch <= epoch)
            .map(|c| c.blob)
            .filter(|b| !self.invalid.contains_key(b))
            .filter(|b| self.registrations[b].expiry_epoch > epoch)
            .collect()
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn current_epoch(&self) -> Epoch {
        self.current_epoch
    }

    pub fn phase(&self) -> EpochPhase {
        self.phase.unwrap_or(EpochPhase::Steady)
    }

    pub fn key(&self, node: NodeId) -> Option<&PublicKey> {
        self.keys.get(&node)
    }

    pub fn committee(&self, epoch: Epoch) -> Option<&Committee> {
        self.committees.get(&epoch)
    }

    pub fn current_committee(&self) -> &Committee {
        &self.committees[&self.current_epoch]
    }

    /// The incoming committee while reconfiguring.
    pub fn next_committee(&self) -> Option<&Committee> {
        match self.phase() {
            EpochPhase::Reconfiguring => self.committees.get(&(self.current_epoch + 1)),
            _ => None,
        }
    }

    /// Epoch whose committee receives new writes.
    pub fn write_epoch(&self) -> Epoch {
        match self.phase() {
            EpochPhase::Reconfiguring => self.current_epoch + 1,
            _ => self.current_epoch,
        }
    }

    pub fn write_committee(&self) -> &Committee {
        &self.committees[&self.write_epoch()]
    }

    /// Epoch of the committee that serves reads for `blob`: the incoming
    /// committee for blobs certified into it, otherwise the current one.
    pub fn route_epoch(&self, blob: &BlobId) -> Option<Epoch> {
        let cert = self.certificates.get(blob)?;
        if cert.epoch > self.current_epoch {
            Some(cert.epoch)
        } else {
            Some(self.current_epoch)
        }
    }

    pub fn route_committee(&self, blob: &BlobId) -> Option<&Committee> {
        self.committees.get(&self.route_epoch(blob)?)
    }

    pub fn registration(&self, blob: &BlobId) -> Option<&Registration> {
        self.registrations.get(blob)
    }

    pub fn is_registered(&self, blob: &BlobId) -> bool {
        self.registrations.contains_key(blob)
    }

    pub fn is_expired(&self, blob: &BlobId) -> bool {
        self.registrations
            .get(blob)
            .is_some_and(|r| r.expiry_epoch < self.current_epoch)
    }

    pub fn certificate(&self, blob: &BlobId) -> Option<&Certificate> {
        self.certificates.get(blob)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.values()
    }

    pub fn is_invalid(&self, blob: &BlobId) -> bool {
        self.invalid.contains_key(blob)
    }

    /// Sequence number of the transaction that invalidated `blob`.
    pub fn invalidation_seq(&self, blob: &BlobId) -> Option<u64> {
        self.invalid.get(blob).copied()
    }

    pub fn attestations(&self, blob: &BlobId) -> usize {
        self.attestations.get(blob).map_or(0, BTreeSet::len)
    }

    /// Blobs the committee of `epoch` must take over before signalling
    /// ready, fixed when the reconfiguration into `epoch` started.
    pub fn migrating_blobs(&self, epoch: Epoch) -> &[BlobId] {
        self.migrations.get(&epoch).map_or(&[], Vec::as_slice)
    }

    pub fn ready_weight(&self) -> usize {
        self.next_committee()
            .map_or(0, |c| c.weight_of(&self.ready))
    }

    pub fn challenge(&self, epoch: Epoch) -> Option<&ChallengeRecord> {
        self.challenges.get(&epoch)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Events with sequence number `>= from`.
    pub fn events_since(&self, from: u64) -> impl Iterator<Item = (u64, &Event)> {
        self.log
            .iter()
            .skip_while(move |e| e.seq < from)
            .flat_map(|e| e.events.iter().map(move |ev| (e.seq, ev)))
    }

    /// Rebuilds a chain by folding `txs` from empty.
    pub fn replay<'a>(txs: impl IntoIterator<Item = &'a Transaction>) -> Result<Self> {
        let mut chain = Self::default();
        for tx in txs {
            chain.submit(tx.clone())?;
        }
        Ok(chain)
    }

    /// One JSON object per line: sequence number, transaction kind and the
    /// hex of its binary encoding.
    pub fn export_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for entry in &self.log {
            let line = ExportLine {
                seq: entry.seq,
                tx: entry.tx.kind().to_string(),
                payload: hex::encode(bincode::serialize(&entry.tx).expect("serializable")),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn import_log<R: BufRead>(input: R) -> std::result::Result<Self, String> {
        let mut txs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExportLine =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if parsed.seq != txs.len() as u64 {
                return Err(format!("line {}: sequence gap", i + 1));
            }
            let bytes = hex::decode(&parsed.payload).map_err(|e| format!("line {}: {e}", i + 1))?;
            let tx: Transaction =
                bincode::deserialize(&bytes).map_err(|e| format!("line {}: {e}", i + 1))?;
            if tx.kind() != parsed.tx {
                return Err(format!("line {}: kind does not match payload", i + 1));
            }
            txs.push(tx);
        }
        Self::replay(&txs).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;

    struct Fixture {
        chain: ChainState,
        keys: Vec<Keypair>,
    }

    fn fixture(n: u32) -> Fixture {
        let keys: Vec<Keypair> = (0..n + 4).map(|i| Keypair::derive(9, i)).collect();
        let committee = Committee::new(0, (0..n).collect()).unwrap();
        let public = (0..n).map(|i| (i, keys[i as usize].public())).collect();
        Fixture {
            chain: ChainState::genesis(committee, public, 1).unwrap(),
            keys,
        }
    }

    fn blob(b: u8) -> BlobId {
        BlobId(Digest([b; 32]))
    }

    fn cert(fx: &Fixture, b: BlobId, epoch: Epoch, signers: &[u32]) -> Certificate {
        Certificate {
            blob: b,
            epoch,
            signatures: signers
                .iter()
                .map(|&s| {
                    (
                        s,
                        fx.keys[s as usize].sign_statement(&Statement::StorageAck { blob: b, epoch }),
                    )
                })
                .collect(),
        }
    }

    fn reserve(fx: &mut Fixture, b: BlobId) {
        fx.chain
            .submit(Transaction::ReserveBlob {
                blob: b,
                size: 12,
                expiry_epoch: 5,
            })
            .unwrap();
    }

    #[test]
    fn reservation_rules() {
        let mut fx = fixture(4);
        let b = blob(1);
        reserve(&mut fx, b);
        assert!(fx.chain.is_registered(&b));
        let seq = fx.chain.seq();
        let (_, events) = fx
            .chain
            .submit(Transaction::ReserveBlob {
                blob: b,
                size: 12,
                expiry_epoch: 5,
            })
            .unwrap();
        assert!(events.is_empty(), "idempotent");
        assert_eq!(fx.chain.seq(), seq + 1);
        assert_eq!(
            fx.chain.submit(Transaction::ReserveBlob {
                blob: b,
                size: 13,
                expiry_epoch: 5
            }),
            Err(ChainError::ConflictingRegistration(b))
        );
        assert_eq!(
            fx.chain.submit(Transaction::ReserveBlob {
                blob: blob(2),
                size: 0,
                expiry_epoch: 5
            }),
            Err(ChainError::ZeroSize)
        );
    }

    #[test]
    fn expiry_before_current_epoch_is_rejected() {
        let mut fx = fixture(4);
        let next = Committee::new(1, vec![0, 1, 2, 3]).unwrap();
        fx.chain
            .submit(Transaction::BeginReconfiguration {
                committee: next,
                keys: vec![],
            })
            .unwrap();
        for node in 0..3u32 {
            let signature = fx.keys[node as usize].sign_statement(&Statement::Ready { epoch: 1 });
            fx.chain
                .submit(Transaction::SignalReady {
                    node,
                    epoch: 1,
                    signature,
                })
                .unwrap();
        }
        assert_eq!(fx.chain.current_epoch(), 1);
        assert_eq!(
            fx.chain.submit(Transaction::ReserveBlob {
                blob: blob(1),
                size: 1,
                expiry_epoch: 0
            }),
            Err(ChainError::ExpiredReservation {
                expiry: 0,
                current: 1
            })
        );
    }

    #[test]
    fn certificate_thresholds() {
        let mut fx = fixture(4);
        let b = blob(1);
        assert_eq!(
            fx.chain.submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2]))),
            Err(ChainError::Unregistered(b))
        );
        reserve(&mut fx, b);
        assert_eq!(
            fx.chain.submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1]))),
            Err(ChainError::InsufficientWeight { have: 2, need: 3 })
        );
        let mut dup = cert(&fx, b, 0, &[0, 1]);
        dup.signatures.push(dup.signatures[0]);
        assert!(matches!(
            fx.chain.submit(Transaction::StoreCertificate(dup)),
            Err(ChainError::InsufficientWeight { have: 2, .. })
        ));
        let mut forged = cert(&fx, b, 0, &[0, 1, 2]);
        forged.signatures[2].1 = forged.signatures[1].1;
        assert_eq!(
            fx.chain.submit(Transaction::StoreCertificate(forged)),
            Err(ChainError::BadSignature(2))
        );
        assert_eq!(
            fx.chain.submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 5]))),
            Err(ChainError::NotMember(5))
        );
        let (_, events) = fx
            .chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2])))
            .unwrap();
        assert_eq!(events, vec![Event::CertificateStored { blob: b, epoch: 0 }]);
        let (_, again) = fx
            .chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[1, 2, 3])))
            .unwrap();
        assert!(again.is_empty(), "point of availability is emitted once");
        assert_eq!(fx.chain.certificate(&b).unwrap().signatures.len(), 3);
    }

    #[test]
    fn multi_shard_nodes_count_by_weight() {
        let keys: Vec<Keypair> = (0..2).map(|i| Keypair::derive(3, i)).collect();
        let committee = Committee::new(0, vec![0, 0, 0, 1]).unwrap();
        let mut chain = ChainState::genesis(
            committee,
            vec![(0, keys[0].public()), (1, keys[1].public())],
            0,
        )
        .unwrap();
        let b = blob(4);
        chain
            .submit(Transaction::ReserveBlob {
                blob: b,
                size: 1,
                expiry_epoch: 1,
            })
            .unwrap();
        let sig = keys[0].sign_statement(&Statement::StorageAck { blob: b, epoch: 0 });
        chain
            .submit(Transaction::StoreCertificate(Certificate {
                blob: b,
                epoch: 0,
                signatures: vec![(0, sig)],
            }))
            .unwrap();
    }

    #[test]
    fn invalidation_at_f_plus_one_attestations() {
        let mut fx = fixture(4);
        let b = blob(1);
        let attest = |fx: &mut Fixture, node: u32| {
            let signature = fx.keys[node as usize].sign_statement(&Statement::Inconsistent { blob: b });
            fx.chain.submit(Transaction::AttestInconsistency {
                blob: b,
                node,
                signature,
            })
        };
        assert_eq!(attest(&mut fx, 0), Err(ChainError::NotCertified(b)));
        reserve(&mut fx, b);
        fx.chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2])))
            .unwrap();
        attest(&mut fx, 0).unwrap();
        assert!(!fx.chain.is_invalid(&b));
        let (_, dup) = attest(&mut fx, 0).unwrap();
        assert!(dup.is_empty());
        assert!(!fx.chain.is_invalid(&b), "duplicates count once");
        let (_, events) = attest(&mut fx, 3).unwrap();
        assert!(events.contains(&Event::BlobInvalidated { blob: b }));
        assert!(fx.chain.is_invalid(&b));
        let signature = fx.keys[6].sign_statement(&Statement::Inconsistent { blob: b });
        assert_eq!(
            fx.chain.submit(Transaction::AttestInconsistency {
                blob: b,
                node: 6,
                signature
            }),
            Err(ChainError::NotMember(6))
        );
    }

    #[test]
    fn reconfiguration_completes_at_quorum_and_routes_writes() {
        let mut fx = fixture(4);
        let next = Committee::new(1, vec![0, 1, 2, 4]).unwrap();
        let start = Transaction::BeginReconfiguration {
            committee: next.clone(),
            keys: vec![(4, fx.keys[4].public())],
        };
        fx.chain.submit(start.clone()).unwrap();
        let (_, again) = fx.chain.submit(start).unwrap();
        assert!(again.is_empty());
        assert_eq!(fx.chain.write_epoch(), 1);

        let b = blob(9);
        reserve(&mut fx, b);
        assert_eq!(
            fx.chain.submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2]))),
            Err(ChainError::WrongEpoch {
                got: 0,
                expected: 1
            })
        );
        fx.chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 1, &[0, 1, 4])))
            .unwrap();
        assert_eq!(fx.chain.route_epoch(&b), Some(1));

        let ready = |fx: &mut Fixture, node: u32| {
            let signature = fx.keys[node as usize].sign_statement(&Statement::Ready { epoch: 1 });
            fx.chain.submit(Transaction::SignalReady {
                node,
                epoch: 1,
                signature,
            })
        };
        assert_eq!(ready(&mut fx, 3), Err(ChainError::NotMember(3)));
        ready(&mut fx, 0).unwrap();
        ready(&mut fx, 4).unwrap();
        assert_eq!(fx.chain.phase(), EpochPhase::Reconfiguring);
        assert_eq!(fx.chain.ready_weight(), 2);
        let (_, events) = ready(&mut fx, 1).unwrap();
        assert_eq!(events.last(), Some(&Event::EpochCompleted { epoch: 1 }));
        assert_eq!(fx.chain.current_epoch(), 1);
        assert_eq!(fx.chain.current_committee(), &next);
    }

    #[test]
    fn challenge_lifecycle() {
        let mut fx = fixture(4);
        let b = blob(1);
        reserve(&mut fx, b);
        fx.chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2])))
            .unwrap();
        fx.chain.submit(Transaction::BeginChallenge { epoch: 0 }).unwrap();
        for node in 0..3u32 {
            let signature = fx.keys[node as usize].sign_statement(&Statement::ChallengeAck { epoch: 0 });
            let (_, events) = fx
                .chain
                .submit(Transaction::ChallengeAck {
                    node,
                    epoch: 0,
                    signature,
                })
                .unwrap();
            assert_eq!(
                events.iter().any(|e| matches!(e, Event::ChallengeOpened { .. })),
                node == 2
            );
        }
        assert_eq!(fx.chain.challenge(0).unwrap().blobs, vec![b]);
        let confirm = |fx: &Fixture, prover: usize, verifiers: &[usize]| Transaction::CertifyChallenge {
            epoch: 0,
            prover,
            confirmations: verifiers
                .iter()
                .map(|&v| {
                    (
                        v,
                        fx.keys[v].sign_statement(&Statement::ChallengeConfirm {
                            epoch: 0,
                            prover,
                            verifier: v,
                        }),
                    )
                })
                .collect(),
        };
        assert!(matches!(
            fx.chain.submit(confirm(&fx, 0, &[0, 1])),
            Err(ChainError::InsufficientWeight { have: 2, need: 3 })
        ));
        for p in 0..3 {
            fx.chain.submit(confirm(&fx, p, &[0, 1, 2])).unwrap();
        }
        assert_eq!(fx.chain.phase(), EpochPhase::Steady);
        assert!(fx.chain.challenge(0).unwrap().ended);
        assert!(fx.chain.submit(confirm(&fx, 3, &[0, 1, 2])).is_err());
    }

    #[test]
    fn export_import_replays_identically() {
        let mut fx = fixture(4);
        let b = blob(1);
        reserve(&mut fx, b);
        fx.chain
            .submit(Transaction::StoreCertificate(cert(&fx, b, 0, &[0, 1, 2])))
            .unwrap();
        let mut buf = Vec::new();
        fx.chain.export_log(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains("\"tx\":\"ReserveBlob\""));
        let back = ChainState::import_log(buf.as_slice()).unwrap();
        assert_eq!(back, fx.chain);
        let replayed = ChainState::replay(fx.chain.log().iter().map(|e| &e.tx)).unwrap();
        assert_eq!(replayed, fx.chain);
    }
}
