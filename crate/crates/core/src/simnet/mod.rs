// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event simulation of a full deployment.
//!
//! One seeded scheduler drives the chain, every node and every client. Each
//! delivered message is one step; the run is reproducible from the scenario
//! alone, and the transcript hash pins it down. After every delivery the
//! availability invariant is audited; the remaining protocol properties are
//! checked when the run ends.

pub mod config;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{ChainState, Committee, Event, Transaction};
use crate::client::{ByzantineWrite, Client, ClientParams, Completion, OpId, ReadOutcome, ReadResult, WriteReceipt};
use crate::codec::{encode_blob, SliverPair};
use crate::commitments::{sha256, BlobId};
use crate::crypto::{Keypair, NodeId, PublicKey};
use crate::erasure::EncodingConfig;
use crate::message::{ClientId, Message, Outbox, PartyId};
use crate::node::{Behavior, Node, NodeParams};
use crate::{Epoch, ShardIndex};

pub use config::{
    AdversaryConfig, AdversaryRole, BehaviorConfig, ChallengeSettings, CommitteeConfig, ConfigError,
    DelayTargets, Expectations, Milestone, NetworkConfig, NodeSettings, OpKind, ScenarioConfig,
    WorkloadOp,
};
pub use transcript::{
    party_name, ChallengeSummary, EpochSummary, Metrics, ReadSummary, RecoveryCost, StorageSummary,
    Transcript, WriteSummary,
};

/// Scenarios shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("honest-write", include_str!("../../scenarios/honest-write.toml")),
    ("byzantine-writer", include_str!("../../scenarios/byzantine-writer.toml")),
    ("recovery", include_str!("../../scenarios/recovery.toml")),
    ("epoch-change", include_str!("../../scenarios/epoch-change.toml")),
    ("full-challenge", include_str!("../../scenarios/full-challenge.toml")),
    ("sampled-challenge", include_str!("../../scenarios/sampled-challenge.toml")),
];

pub fn bundled(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text))
}

/// A protocol property that failed during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "kebab-case")]
pub enum Violation {
    /// A certified blob had fewer than `f+1` honest holders of full pairs.
    Availability {
        step: u64,
        blob: String,
        holders: usize,
        need: usize,
    },
    /// An honest owner ended without the correct pair of a certified
    /// honest write.
    WriteCompleteness {
        label: String,
        node: NodeId,
        shard: ShardIndex,
    },
    /// A read of an honest write returned something other than the blob.
    Validity { label: String, outcome: String },
    /// Reads of one blob disagreed.
    ReadConsistency { label: String, outcomes: Vec<String> },
    /// A prover that deleted symbols held by honest verifiers got certified.
    ChallengeSecurity {
        epoch: Epoch,
        prover: ShardIndex,
        node: NodeId,
    },
    ChallengeLiveness { epoch: Epoch },
    /// An epoch completed without exactly crossing `2f+1` ready shards.
    EpochCompletion {
        epoch: Epoch,
        ready_weight: usize,
        quorum: usize,
    },
    Liveness { step: u64, detail: String },
    WriteFailed { label: String, error: String },
    /// A workload step could not be carried out.
    Workload { detail: String },
    Expectation { detail: String },
}

impl Violation {
    pub fn property(&self) -> &'static str {
        match self {
            Violation::Availability { .. } => "availability",
            Violation::WriteCompleteness { .. } => "write-completeness",
            Violation::Validity { .. } => "validity",
            Violation::ReadConsistency { .. } => "read-consistency",
            Violation::ChallengeSecurity { .. } => "challenge-security",
            Violation::ChallengeLiveness { .. } => "challenge-liveness",
            Violation::EpochCompletion { .. } => "epoch-completion",
            Violation::Liveness { .. } => "liveness",
            Violation::WriteFailed { .. } => "write-failed",
            Violation::Workload { .. } => "workload",
            Violation::Expectation { .. } => "expectation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub seed: u64,
    pub f: usize,
    pub steps: u64,
    pub transcript_hash: String,
    pub transcript_lines: u64,
    pub budget_exhausted: bool,
    pub violations: Vec<Violation>,
    pub metrics: Metrics,
}

impl SimReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, property: &str) -> bool {
        self.violations.iter().any(|v| v.property() == property)
    }
}

#[derive(Debug, Clone)]
struct Envelope {
    from: PartyId,
    to: PartyId,
    msg: Message,
    sent_epoch: Epoch,
}

#[derive(Debug, Clone)]
struct WriteRecord {
    byzantine: bool,
    id: Option<BlobId>,
    expected: Vec<SliverPair>,
    start_step: u64,
    poa_step: Option<u64>,
    certified_epoch: Option<Epoch>,
    receipt: Option<WriteReceipt>,
}

#[derive(Debug, Clone)]
struct ReadRecord {
    label: String,
    client: ClientId,
    op: OpId,
    start_step: u64,
    result: Option<(u64, ReadResult)>,
}

pub struct Simulation {
    config: ScenarioConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Envelope>,
    channel_last: BTreeMap<(PartyId, PartyId), u64>,
    chain: ChainState,
    nodes: BTreeMap<NodeId, Node>,
    keys: BTreeMap<NodeId, PublicKey>,
    clients: BTreeMap<ClientId, Client>,
    fired: Vec<bool>,
    data: BTreeMap<String, Vec<u8>>,
    writes: BTreeMap<String, WriteRecord>,
    write_ops: BTreeMap<(ClientId, OpId), String>,
    reads: Vec<ReadRecord>,
    next_op: OpId,
    milestones: BTreeMap<Milestone, u64>,
    reconfig_started: BTreeMap<Epoch, u64>,
    ready: BTreeMap<Epoch, Vec<NodeId>>,
    challenges: BTreeMap<Epoch, ChallengeSummary>,
    recovery: BTreeMap<(NodeId, BlobId), RecoveryCost>,
    unavailable: BTreeSet<BlobId>,
    metrics: Metrics,
    transcript: Transcript,
    violations: Vec<Violation>,
    completions: Vec<Completion>,
    budget_exhausted: bool,
    report: Option<SimReport>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        Self::with_transcript(config, false)
    }

    /// Like [`Simulation::new`], keeping every transcript line in memory.
    pub fn with_transcript(config: ScenarioConfig, keep_lines: bool) -> Result<Self, ConfigError> {
        validate(&config)?;
        let committees = config.committee_list();
        let mut all_nodes = BTreeSet::new();
        for c in &committees {
            all_nodes.extend(c.shards.iter().copied());
        }
        let genesis = Committee::new(0, committees[0].shards.clone())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let keypairs: BTreeMap<NodeId, Keypair> = all_nodes
            .iter()
            .map(|&n| (n, Keypair::derive(config.seed, n)))
            .collect();
        let keys: BTreeMap<NodeId, PublicKey> =
            keypairs.iter().map(|(&n, k)| (n, k.public())).collect();
        let genesis_keys = genesis.members().iter().map(|n| (*n, keys[n])).collect();
        let chain = ChainState::genesis(genesis.clone(), genesis_keys, config.seed)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let params = NodeParams {
            timeout: config.node.timeout,
            challenge_k: config.challenge.k,
            serve_primary: config.node.serve_primary,
        };
        let nodes = keypairs
            .into_iter()
            .map(|(id, kp)| {
                let behavior = behavior_for(&config, id, 0);
                (id, Node::new(id, kp, behavior, params.clone()))
            })
            .collect();

        let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_b10b);
        let mut data = BTreeMap::new();
        for op in &config.workload {
            if op.op != OpKind::Write {
                continue;
            }
            let label = op.label.clone().expect("validated");
            let bytes = match (&op.data, op.size) {
                (Some(text), _) => text.as_bytes().to_vec(),
                (None, Some(size)) => {
                    let mut b = vec![0u8; size];
                    data_rng.fill_bytes(&mut b);
                    b
                }
                (None, None) => unreachable!("validated"),
            };
            data.insert(label, bytes);
        }

        let mut transcript = Transcript::new(keep_lines);
        transcript.record(&json!({
            "scenario": config.name,
            "seed": config.seed,
            "f": config.f,
            "genesis": genesis.shards,
        }));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            fired: vec![false; config.workload.len()],
            config,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            channel_last: BTreeMap::new(),
            chain,
            nodes,
            keys,
            clients: BTreeMap::new(),
            data,
            writes: BTreeMap::new(),
            write_ops: BTreeMap::new(),
            reads: Vec::new(),
            next_op: 0,
            milestones: BTreeMap::new(),
            reconfig_started: BTreeMap::new(),
            ready: BTreeMap::new(),
            challenges: BTreeMap::new(),
            recovery: BTreeMap::new(),
            unavailable: BTreeSet::new(),
            metrics: Metrics::default(),
            transcript,
            violations: Vec::new(),
            completions: Vec::new(),
            budget_exhausted: false,
            report: None,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn blob_id(&self, label: &str) -> Option<BlobId> {
        self.writes.get(label).and_then(|w| w.id)
    }

    pub fn blob_data(&self, label: &str) -> Option<&[u8]> {
        self.data.get(label).map(Vec::as_slice)
    }

    /// Outcomes of the finished reads of `label`, in completion order.
    pub fn read_outcomes(&self, label: &str) -> Vec<&ReadOutcome> {
        let mut done: Vec<_> = self
            .reads
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.result.as_ref())
            .collect();
        done.sort_by_key(|(step, _)| *step);
        done.into_iter().map(|(_, r)| &r.outcome).collect()
    }

    /// Runs to quiescence or the step budget, then checks the properties.
    pub fn run(&mut self) -> SimReport {
        if let Some(report) = &self.report {
            return report.clone();
        }
        loop {
            self.fire_ready_ops();
            let next_msg = self.queue.keys().next().map(|k| k.0);
            let next_op = self.next_op_time();
            let Some(step) = next_msg.into_iter().chain(next_op).min() else {
                break;
            };
            if step > self.config.step_budget {
                self.budget_exhausted = true;
                break;
            }
            self.now = self.now.max(step);
            if next_msg == Some(step) {
                let (_, env) = self.queue.pop_first().expect("non-empty");
                self.deliver(env);
                self.audit_availability();
            }
        }
        let report = self.finish();
        self.report = Some(report.clone());
        report
    }

    // Workload.

    fn ready_time(&self, op: &WorkloadOp) -> Option<u64> {
        let mut t = op.at.unwrap_or(0);
        if let Some(label) = &op.after {
            t = t.max(self.writes.get(label)?.poa_step?);
        }
        if let Some(m) = op.after_event {
            t = t.max(*self.milestones.get(&m)?);
        }
        if op.op == OpKind::Read {
            self.writes.get(op.blob.as_deref()?)?.id?;
        }
        Some(t + op.delay)
    }

    fn next_op_time(&self) -> Option<u64> {
        self.config
            .workload
            .iter()
            .zip(&self.fired)
            .filter(|(_, fired)| !**fired)
            .filter_map(|(op, _)| self.ready_time(op))
            .min()
    }

    fn fire_ready_ops(&mut self) {
        loop {
            let due = (0..self.config.workload.len()).find(|&i| {
                !self.fired[i]
                    && self
                        .ready_time(&self.config.workload[i])
                        .is_some_and(|t| t <= self.now)
            });
            let Some(i) = due else { return };
            self.fired[i] = true;
            self.fire(i);
        }
    }

    fn client_params(&self) -> ClientParams {
        ClientParams {
            timeout: self.config.node.timeout,
            symbol_size: self.config.node.symbol_size,
            primary_reads: self.config.node.primary_reads,
        }
    }

    fn fire(&mut self, index: usize) {
        let op = self.config.workload[index].clone();
        self.transcript.record(&json!({
            "t": self.now,
            "workload": index,
            "op": op.op,
            "label": op.label.as_ref().or(op.blob.as_ref()),
        }));
        let params = self.client_params();
        let mut out = Outbox::default();
        match op.op {
            OpKind::Write => {
                let label = op.label.clone().expect("validated");
                let data = self.data[&label].clone();
                let op_id = self.next_op;
                self.next_op += 1;
                let client = self
                    .clients
                    .entry(op.client)
                    .or_insert_with(|| Client::new(op.client, params));
                let result = client.start_write(
                    op_id,
                    &data,
                    op.expiry,
                    op.byzantine.map(|corrupt| ByzantineWrite { corrupt }),
                    &self.chain,
                    &mut out,
                );
                let id = match result {
                    Ok(id) => Some(id),
                    Err(error) => {
                        self.violations.push(Violation::WriteFailed {
                            label: label.clone(),
                            error,
                        });
                        None
                    }
                };
                let expected = self.expected_pairs(&data);
                self.write_ops.insert((op.client, op_id), label.clone());
                self.writes.insert(
                    label,
                    WriteRecord {
                        byzantine: op.byzantine.is_some(),
                        id,
                        expected,
                        start_step: self.now,
                        poa_step: None,
                        certified_epoch: None,
                        receipt: None,
                    },
                );
                self.process_outbox(PartyId::Client(op.client), out);
            }
            OpKind::Read => {
                let label = op.blob.clone().expect("validated");
                let id = self.writes[&label].id.expect("ready");
                let op_id = self.next_op;
                self.next_op += 1;
                self.reads.push(ReadRecord {
                    label,
                    client: op.client,
                    op: op_id,
                    start_step: self.now,
                    result: None,
                });
                let client = self
                    .clients
                    .entry(op.client)
                    .or_insert_with(|| Client::new(op.client, params));
                client.start_read(op_id, id, &self.chain, &mut out);
                let done = client.take_completions();
                self.process_outbox(PartyId::Client(op.client), out);
                for c in done {
                    self.on_completion(op.client, c);
                }
            }
            OpKind::Reconfigure => {
                let epoch = op.epoch.expect("validated");
                let cfg = self
                    .config
                    .committee_list()
                    .into_iter()
                    .find(|c| c.epoch == epoch)
                    .expect("validated");
                let committee = match Committee::new(epoch, cfg.shards) {
                    Ok(c) => c,
                    Err(e) => {
                        self.violations.push(Violation::Workload { detail: e.to_string() });
                        return;
                    }
                };
                let keys = committee.members().iter().map(|n| (*n, self.keys[n])).collect();
                if let Err(e) = self.apply_tx(PartyId::Chain, Transaction::BeginReconfiguration { committee, keys }) {
                    self.violations.push(Violation::Workload {
                        detail: format!("reconfiguration to epoch {epoch} rejected: {e}"),
                    });
                }
            }
            OpKind::Challenge => {
                let epoch = self.chain.current_epoch();
                if let Err(e) = self.apply_tx(PartyId::Chain, Transaction::BeginChallenge { epoch }) {
                    self.violations.push(Violation::Workload {
                        detail: format!("challenge in epoch {epoch} rejected: {e}"),
                    });
                }
            }
        }
    }

    /// The honest encoding a client would produce for `data` right now.
    fn expected_pairs(&self, data: &[u8]) -> Vec<SliverPair> {
        let f = self.chain.write_committee().f();
        let config = match self.config.node.symbol_size {
            Some(size) => EncodingConfig::new(f, size),
            None => EncodingConfig::for_blob(f, data.len()),
        };
        config
            .ok()
            .and_then(|c| encode_blob(data, &c).ok())
            .unwrap_or_default()
    }

    // Scheduling.

    fn is_corrupt(&self, party: PartyId) -> bool {
        match party {
            PartyId::Node(n) => self.nodes.get(&n).is_some_and(|node| !node.behavior().is_honest()),
            _ => false,
        }
    }

    fn schedule(&mut self, from: PartyId, to: PartyId, msg: Message) {
        let net = &self.config.network;
        let mut delay = if from == PartyId::Chain {
            net.chain_latency
        } else {
            self.rng.gen_range(net.min_delay..=net.max_delay)
        };
        if let (Some(d), PartyId::Node(n)) = (&self.config.adversary.delay, to) {
            let in_window = self.now >= d.from_step && d.until_step.map_or(true, |u| self.now < u);
            let source_ok = !d.clients_only || matches!(from, PartyId::Client(_));
            if in_window && source_ok && d.nodes.contains(&n) && !self.is_corrupt(from) {
                delay += d.steps;
            }
        }
        let mut at = self.now + delay.max(1);
        if !self.config.network.reorder || from == PartyId::Chain {
            let last = self.channel_last.entry((from, to)).or_insert(0);
            at = at.max(*last);
            *last = at;
        }
        self.enqueue(at, from, to, msg);
    }

    fn enqueue(&mut self, at: u64, from: PartyId, to: PartyId, msg: Message) {
        self.seq += 1;
        let sent_epoch = self.chain.current_epoch();
        self.queue.insert(
            (at, self.seq),
            Envelope {
                from,
                to,
                msg,
                sent_epoch,
            },
        );
    }

    fn deliver(&mut self, env: Envelope) {
        let Envelope { from, to, msg, .. } = env;
        self.metrics.delivered += 1;
        if !msg.is_local() {
            let bytes = bincode::serialize(&msg).expect("messages serialize");
            let size = bytes.len() as u64;
            *self.metrics.bytes_up.entry(party_name(from)).or_default() += size;
            *self.metrics.bytes_down.entry(party_name(to)).or_default() += size;
            self.charge(to, &msg, size);
            self.transcript.record(&json!({
                "t": self.now,
                "from": party_name(from),
                "to": party_name(to),
                "kind": msg.kind(),
                "size": size,
                "blob": msg.blob().map(|b| b.to_string()),
                "digest": &sha256(&bytes).to_hex()[..16],
            }));
        } else if let Message::Timer { token } = msg {
            self.transcript.record(&json!({
                "t": self.now,
                "timer": party_name(to),
                "token": token,
            }));
        }
        let mut out = Outbox::default();
        let mut done = Vec::new();
        match to {
            PartyId::Node(id) => {
                if let Some(node) = self.nodes.get_mut(&id) {
                    node.handle(from, msg, &self.chain, &mut out);
                }
            }
            PartyId::Client(c) => {
                if let Some(client) = self.clients.get_mut(&c) {
                    client.handle(from, msg, &self.chain, &mut out);
                    done = client.take_completions();
                }
            }
            PartyId::Chain => {}
        }
        self.process_outbox(to, out);
        if let PartyId::Client(c) = to {
            for completion in done {
                self.on_completion(c, completion);
            }
        }
    }

    fn charge(&mut self, to: PartyId, msg: &Message, size: u64) {
        let PartyId::Node(node) = to else { return };
        match msg {
            Message::RecoveryResponse { blob, .. } => {
                let cost = self.recovery_entry(node, *blob);
                cost.symbol_bytes += size;
                cost.responses += 1;
            }
            Message::MetadataResponse { blob, .. } => {
                self.recovery_entry(node, *blob).metadata_bytes += size;
            }
            Message::TransferResponse { .. } => {
                *self
                    .metrics
                    .transfer_bytes
                    .entry(party_name(to))
                    .or_default() += size;
            }
            _ => {}
        }
    }

    fn recovery_entry(&mut self, node: NodeId, blob: BlobId) -> &mut RecoveryCost {
        self.recovery.entry((node, blob)).or_insert_with(|| RecoveryCost {
            node,
            blob: blob.to_string(),
            ..Default::default()
        })
    }

    fn process_outbox(&mut self, owner: PartyId, out: Outbox) {
        let Outbox {
            sends,
            txs,
            timers,
            notes,
            challenge_checks,
        } = out;
        for note in notes {
            self.transcript.record(&json!({
                "t": self.now,
                "by": party_name(owner),
                "note": note,
            }));
        }
        for check in challenge_checks {
            self.transcript.record(&json!({
                "t": self.now,
                "by": party_name(owner),
                "check": check,
            }));
            if let Some(summary) = self.challenges.get_mut(&check.epoch) {
                if check.outcome == "confirmed" {
                    summary.checks_passed += 1;
                } else {
                    summary.checks_failed += 1;
                }
            }
        }
        for (to, msg) in sends {
            self.schedule(owner, to, msg);
        }
        for (delay, token) in timers {
            self.enqueue(self.now + delay.max(1), owner, owner, Message::Timer { token });
        }
        for tx in txs {
            let _ = self.apply_tx(owner, tx);
        }
    }

    fn apply_tx(&mut self, from: PartyId, tx: Transaction) -> Result<u64, String> {
        let kind = tx.kind();
        let blob = match &tx {
            Transaction::ReserveBlob { blob, .. } => Some(*blob),
            Transaction::StoreCertificate(cert) => Some(cert.blob),
            Transaction::AttestInconsistency { blob, .. } => Some(*blob),
            _ => None,
        };
        let result = match self.chain.submit(tx) {
            Ok((seq, events)) => {
                self.metrics.chain_transactions += 1;
                self.transcript.record(&json!({
                    "t": self.now,
                    "tx": kind,
                    "by": party_name(from),
                    "seq": seq,
                    "events": events.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>(),
                }));
                for event in events {
                    self.on_event(seq, event);
                }
                Ok(seq)
            }
            Err(e) => {
                self.transcript.record(&json!({
                    "t": self.now,
                    "tx": kind,
                    "by": party_name(from),
                    "rejected": e.to_string(),
                }));
                Err(e.to_string())
            }
        };
        if from != PartyId::Chain {
            self.schedule(
                PartyId::Chain,
                from,
                Message::TxResult {
                    kind: kind.into(),
                    blob,
                    result: result.clone(),
                },
            );
        }
        result
    }

    fn on_event(&mut self, seq: u64, event: Event) {
        let milestone = match &event {
            Event::ReconfigurationStarted { .. } => Some(Milestone::ReconfigurationStarted),
            Event::EpochCompleted { .. } => Some(Milestone::EpochCompleted),
            Event::ChallengeStarted { .. } => Some(Milestone::ChallengeStarted),
            Event::ChallengeOpened { .. } => Some(Milestone::ChallengeOpened),
            Event::ChallengeEnded { .. } => Some(Milestone::ChallengeEnded),
            Event::BlobInvalidated { .. } => Some(Milestone::BlobInvalidated),
            _ => None,
        };
        if let Some(m) = milestone {
            self.milestones.entry(m).or_insert(self.now);
        }
        match &event {
            Event::CertificateStored { blob, epoch } => {
                for w in self.writes.values_mut() {
                    if w.id == Some(*blob) && w.poa_step.is_none() {
                        w.poa_step = Some(self.now);
                        w.certified_epoch = Some(*epoch);
                    }
                }
            }
            Event::ReconfigurationStarted { epoch } => {
                self.reconfig_started.insert(*epoch, self.now);
            }
            Event::ReadySignaled { node, epoch } => {
                self.ready.entry(*epoch).or_default().push(*node);
            }
            Event::EpochCompleted { epoch } => self.on_epoch_completed(*epoch),
            Event::ChallengeStarted { epoch } => {
                self.challenges.insert(
                    *epoch,
                    ChallengeSummary {
                        epoch: *epoch,
                        start_step: self.now,
                        ..Default::default()
                    },
                );
            }
            Event::ChallengeOpened { epoch, coin } => {
                let blobs = self.chain.challenge(*epoch).map_or(0, |c| c.blobs.len());
                if let Some(s) = self.challenges.get_mut(epoch) {
                    s.coin = Some(coin.to_hex());
                    s.challenged_blobs = blobs;
                }
            }
            Event::ChallengeCertified { epoch, prover } => self.on_certified(*epoch, *prover),
            Event::ChallengeEnded { epoch } => {
                if let Some(s) = self.challenges.get_mut(epoch) {
                    s.end_step = Some(self.now);
                }
            }
            _ => {}
        }
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            self.schedule(
                PartyId::Chain,
                PartyId::Node(id),
                Message::ChainEvent {
                    seq,
                    event: event.clone(),
                },
            );
        }
    }

    fn on_epoch_completed(&mut self, epoch: Epoch) {
        let committee = self.chain.committee(epoch).cloned().expect("completed epoch exists");
        let signals = self.ready.get(&epoch).cloned().unwrap_or_default();
        let weight = committee.weight_of(&signals);
        let before = committee.weight_of(&signals[..signals.len().saturating_sub(1)]);
        let quorum = committee.quorum();
        if weight < quorum || before >= quorum {
            self.violations.push(Violation::EpochCompletion {
                epoch,
                ready_weight: weight,
                quorum,
            });
        }
        let mut dropped = 0;
        if self.config.network.drop_at_epoch_end {
            let before_len = self.queue.len();
            self.queue
                .retain(|_, env| env.msg.is_local() || env.sent_epoch >= epoch);
            dropped = (before_len - self.queue.len()) as u64;
            self.metrics.dropped += dropped;
        }
        self.metrics.epochs.push(EpochSummary {
            epoch,
            started_step: self.reconfig_started.get(&epoch).copied(),
            completed_step: self.now,
            ready_weight: weight,
            quorum,
            dropped_messages: dropped,
        });
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let behavior = behavior_for(&self.config, id, epoch);
            let node = self.nodes.get_mut(&id).expect("known node");
            if *node.behavior() != behavior {
                self.transcript.record(&json!({
                    "t": self.now,
                    "behavior": party_name(PartyId::Node(id)),
                    "now": format!("{behavior:?}"),
                }));
                node.set_behavior(behavior);
            }
        }
    }

    fn on_certified(&mut self, epoch: Epoch, prover: ShardIndex) {
        let Some(committee) = self.chain.committee(epoch).cloned() else { return };
        let Some(owner) = committee.owner(prover) else { return };
        if let Some(s) = self.challenges.get_mut(&epoch) {
            s.certified.push(prover);
        }
        let Some(Behavior::DeleteSymbols { keep, .. }) = self.nodes.get(&owner).map(|n| n.behavior().clone())
        else {
            return;
        };
        let deleted_from_honest = (0..committee.n_shards()).any(|v| {
            !keep.contains(&v)
                && committee
                    .owner(v)
                    .and_then(|o| self.nodes.get(&o))
                    .is_some_and(|n| n.behavior().is_honest())
        });
        if deleted_from_honest {
            if let Some(s) = self.challenges.get_mut(&epoch) {
                s.certified_cheaters.push(prover);
            }
            self.violations.push(Violation::ChallengeSecurity {
                epoch,
                prover,
                node: owner,
            });
        }
    }

    fn on_completion(&mut self, client: ClientId, completion: Completion) {
        match &completion {
            Completion::Write(receipt) => {
                let label = self.write_ops.get(&(client, receipt.op)).cloned().unwrap_or_default();
                self.transcript.record(&json!({
                    "t": self.now,
                    "write-done": label,
                    "blob": receipt.blob.to_string(),
                    "certified": receipt.certificate.is_some(),
                    "error": receipt.error,
                }));
                if let Some(w) = self.writes.get_mut(&label) {
                    w.receipt = Some(receipt.clone());
                }
            }
            Completion::Read(result) => {
                let now = self.now;
                if let Some(r) = self
                    .reads
                    .iter_mut()
                    .find(|r| r.client == client && r.op == result.op)
                {
                    r.result = Some((now, result.clone()));
                    self.transcript.record(&json!({
                        "t": now,
                        "read-done": r.label,
                        "outcome": outcome_name(&result.outcome),
                    }));
                }
            }
        }
        self.completions.push(completion);
    }

    // Properties.

    fn audit_availability(&mut self) {
        let mut found = Vec::new();
        for cert in self.chain.certificates() {
            let blob = cert.blob;
            if self.unavailable.contains(&blob) || self.chain.is_invalid(&blob) || self.chain.is_expired(&blob) {
                continue;
            }
            let Some(committee) = self.chain.route_committee(&blob) else { continue };
            let holders = (0..committee.n_shards())
                .filter(|&s| {
                    committee
                        .owner(s)
                        .and_then(|o| self.nodes.get(&o))
                        .is_some_and(|n| n.behavior().is_honest() && n.holds_pair(&blob, s))
                })
                .count();
            if holders < committee.validity() {
                found.push((blob, holders, committee.validity()));
            }
        }
        for (blob, holders, need) in found {
            self.unavailable.insert(blob);
            self.violations.push(Violation::Availability {
                step: self.now,
                blob: blob.to_string(),
                holders,
                need,
            });
        }
    }

    fn finish(&mut self) -> SimReport {
        if self.budget_exhausted {
            let busy: Vec<ClientId> = self
                .clients
                .values()
                .filter(|c| !c.is_idle())
                .map(|c| c.id())
                .collect();
            self.violations.push(Violation::Liveness {
                step: self.now,
                detail: format!(
                    "step budget {} exhausted with {} messages queued, clients busy: {busy:?}",
                    self.config.step_budget,
                    self.queue.len()
                ),
            });
        } else {
            for (i, fired) in self.fired.iter().enumerate() {
                if !fired {
                    self.violations.push(Violation::Liveness {
                        step: self.now,
                        detail: format!("workload step {i} never triggered"),
                    });
                }
            }
            for c in self.clients.values().filter(|c| !c.is_idle()) {
                self.violations.push(Violation::Liveness {
                    step: self.now,
                    detail: format!("client {} has unfinished operations", c.id()),
                });
            }
        }
        self.check_writes();
        self.check_reads();
        self.check_challenges();
        self.check_expectations();

        let metrics = self.collect_metrics();
        self.transcript.record(&json!({
            "metrics": metrics,
            "violations": self.violations,
        }));
        SimReport {
            name: self.config.name.clone(),
            seed: self.config.seed,
            f: self.config.f,
            steps: self.now,
            transcript_hash: self.transcript.hash(),
            transcript_lines: self.transcript.len(),
            budget_exhausted: self.budget_exhausted,
            violations: self.violations.clone(),
            metrics,
        }
    }

    fn is_live(&self, blob: &BlobId) -> bool {
        self.chain.certificate(blob).is_some() && !self.chain.is_invalid(blob) && !self.chain.is_expired(blob)
    }

    fn check_writes(&mut self) {
        let mut found = Vec::new();
        for (label, w) in &self.writes {
            if let Some(error) = w.receipt.as_ref().and_then(|r| r.error.clone()) {
                found.push(Violation::WriteFailed {
                    label: label.clone(),
                    error,
                });
                continue;
            }
            let Some(id) = w.id else { continue };
            if w.byzantine {
                continue;
            }
            if self.chain.is_invalid(&id) {
                found.push(Violation::Validity {
                    label: label.clone(),
                    outcome: "honest write invalidated".into(),
                });
                continue;
            }
            if self.budget_exhausted || !self.is_live(&id) {
                continue;
            }
            let committee = self.chain.route_committee(&id).expect("certified");
            for s in 0..committee.n_shards() {
                let owner = committee.owner(s).expect("in range");
                let Some(node) = self.nodes.get(&owner) else { continue };
                if !node.behavior().is_honest() {
                    continue;
                }
                if node.pair(&id, s).as_ref() != w.expected.get(s) {
                    found.push(Violation::WriteCompleteness {
                        label: label.clone(),
                        node: owner,
                        shard: s,
                    });
                }
            }
        }
        self.violations.extend(found);
    }

    fn check_reads(&mut self) {
        let mut found = Vec::new();
        for (label, w) in &self.writes {
            let outcomes = self.read_outcomes(label);
            if outcomes.is_empty() {
                continue;
            }
            if !w.byzantine {
                let data = &self.data[label];
                for o in &outcomes {
                    if !matches!(o, ReadOutcome::Blob(b) if b == data) {
                        found.push(Violation::Validity {
                            label: label.clone(),
                            outcome: outcome_name(o),
                        });
                    }
                }
            } else {
                let names: BTreeSet<String> = outcomes
                    .iter()
                    .filter(|o| !matches!(o, ReadOutcome::NotCertified))
                    .map(|o| consistency_class(o))
                    .collect();
                if names.len() > 1 {
                    found.push(Violation::ReadConsistency {
                        label: label.clone(),
                        outcomes: outcomes.iter().map(|o| outcome_name(o)).collect(),
                    });
                }
            }
        }
        self.violations.extend(found);
    }

    fn check_challenges(&mut self) {
        let mut found = Vec::new();
        for &epoch in self.challenges.keys() {
            if !self.chain.challenge(epoch).is_some_and(|c| c.ended) {
                found.push(Violation::ChallengeLiveness { epoch });
            }
        }
        self.violations.extend(found);
    }

    fn check_expectations(&mut self) {
        let expect = self.config.expect.clone();
        let mut found = Vec::new();
        for label in &expect.invalidated {
            match self.blob_id(label) {
                Some(id) if self.chain.is_invalid(&id) => {}
                _ => found.push(Violation::Expectation {
                    detail: format!("{label} is not invalidated"),
                }),
            }
        }
        for label in &expect.readable {
            let outcomes = self.read_outcomes(label);
            if outcomes.is_empty() || !outcomes.iter().all(|o| o.is_blob()) {
                found.push(Violation::Expectation {
                    detail: format!("{label} is not readable"),
                });
            }
        }
        if let Some(e) = expect.final_epoch {
            if self.chain.current_epoch() != e {
                found.push(Violation::Expectation {
                    detail: format!("ended in epoch {}, expected {e}", self.chain.current_epoch()),
                });
            }
        }
        if expect.challenge_completed && !self.challenges.values().any(|c| c.end_step.is_some()) {
            found.push(Violation::Expectation {
                detail: "no challenge completed".into(),
            });
        }
        self.violations.extend(found);
    }

    fn collect_metrics(&self) -> Metrics {
        let mut m = self.metrics.clone();
        m.steps = self.now;
        m.final_epoch = self.chain.current_epoch();
        m.recovery = self.recovery.values().cloned().collect();
        m.challenges = self.challenges.values().cloned().collect();
        for (label, w) in &self.writes {
            let receipt = w.receipt.as_ref();
            m.writes.push(WriteSummary {
                label: label.clone(),
                blob: w.id.map(|b| b.to_string()),
                blob_len: self.data[label].len(),
                byzantine: w.byzantine,
                start_step: w.start_step,
                poa_step: w.poa_step,
                certified_epoch: w.certified_epoch,
                bytes_sent: receipt.map_or(0, |r| r.bytes_sent),
                restarts: receipt.map_or(0, |r| r.restarts),
                error: receipt.and_then(|r| r.error.clone()),
            });
        }
        for r in &self.reads {
            let (end_step, outcome, slivers, bytes, meta) = match &r.result {
                Some((step, res)) => (
                    *step,
                    outcome_name(&res.outcome),
                    res.slivers_used.clone(),
                    res.bytes_received,
                    res.metadata_bytes,
                ),
                None => (self.now, "unfinished".into(), Vec::new(), 0, 0),
            };
            m.reads.push(ReadSummary {
                label: r.label.clone(),
                client: r.client,
                start_step: r.start_step,
                end_step,
                outcome,
                slivers_used: slivers,
                bytes_received: bytes,
                metadata_bytes: meta,
            });
        }
        let mut storage = StorageSummary::default();
        for node in self.nodes.values() {
            let s = node.storage();
            storage.sliver_bytes += s.sliver_bytes;
            storage.metadata_bytes += s.metadata_bytes;
        }
        storage.blob_bytes = self
            .writes
            .iter()
            .filter(|(_, w)| w.id.is_some_and(|id| self.is_live(&id)))
            .map(|(label, _)| self.data[label].len() as u64)
            .sum();
        if storage.blob_bytes > 0 {
            storage.replication_factor = storage.sliver_bytes as f64 / storage.blob_bytes as f64;
        }
        let n = self.config.n_shards() as f64;
        let f = self.config.f as f64;
        storage.formula = n / (f + 1.0) + n / (2.0 * f + 1.0);
        m.storage = storage;
        m
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(config: ScenarioConfig) -> Result<SimReport, ConfigError> {
    Ok(Simulation::new(config)?.run())
}

fn behavior_for(config: &ScenarioConfig, node: NodeId, epoch: Epoch) -> Behavior {
    config
        .adversary
        .nodes
        .iter()
        .find(|r| r.node == node && r.active_in(epoch))
        .map_or(Behavior::Honest, |r| r.behavior.to_behavior())
}

pub fn outcome_name(outcome: &ReadOutcome) -> String {
    match outcome {
        ReadOutcome::Blob(b) => format!("blob:{}", &sha256(b).to_hex()[..16]),
        ReadOutcome::Inconsistent => "inconsistent".into(),
        ReadOutcome::Invalid { .. } => "invalid".into(),
        ReadOutcome::NotCertified => "not-certified".into(),
    }
}

/// Reads agree when they return the same bytes or all return ⊥.
fn consistency_class(outcome: &ReadOutcome) -> String {
    match outcome {
        ReadOutcome::Blob(_) => outcome_name(outcome),
        _ => "bottom".into(),
    }
}

fn validate(config: &ScenarioConfig) -> Result<(), ConfigError> {
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    if config.f == 0 {
        return invalid("f must be at least 1".into());
    }
    let n = config.n_shards();
    let net = &config.network;
    if net.min_delay > net.max_delay {
        return invalid(format!("min_delay {} exceeds max_delay {}", net.min_delay, net.max_delay));
    }
    let committees = config.committee_list();
    let mut nodes = BTreeSet::new();
    for (i, c) in committees.iter().enumerate() {
        if c.epoch != i as Epoch {
            return invalid(format!("committee {i} is for epoch {}, expected {i}", c.epoch));
        }
        if c.shards.len() != n {
            return invalid(format!("epoch {} has {} shards, expected {n}", c.epoch, c.shards.len()));
        }
        nodes.extend(c.shards.iter().copied());
    }
    for role in &config.adversary.nodes {
        if !nodes.contains(&role.node) {
            return invalid(format!("adversary node {} is in no committee", role.node));
        }
        let shards: Vec<&ShardIndex> = match &role.behavior {
            BehaviorConfig::DeleteSymbols { keep, fetch_from } => keep.iter().chain(fetch_from).collect(),
            BehaviorConfig::Colluder { allies } => allies.iter().collect(),
            _ => Vec::new(),
        };
        if let Some(s) = shards.into_iter().find(|&&s| s >= n) {
            return invalid(format!("shard {s} out of range"));
        }
    }
    for c in &committees {
        let corrupted = c
            .shards
            .iter()
            .filter(|&&o| {
                config
                    .adversary
                    .nodes
                    .iter()
                    .any(|r| r.node == o && r.active_in(c.epoch))
            })
            .count();
        if corrupted > config.f {
            return Err(ConfigError::TooManyCorrupted {
                epoch: c.epoch,
                corrupted,
                f: config.f,
            });
        }
    }
    if let Some(d) = &config.adversary.delay {
        if let Some(x) = d.nodes.iter().find(|x| !nodes.contains(x)) {
            return invalid(format!("delayed node {x} is in no committee"));
        }
    }
    let mut labels = BTreeSet::new();
    for (i, op) in config.workload.iter().enumerate() {
        if let Some(after) = &op.after {
            if !labels.contains(after) {
                return invalid(format!("step {i} waits for unknown write {after:?}"));
            }
        }
        match op.op {
            OpKind::Write => {
                let Some(label) = &op.label else {
                    return invalid(format!("write step {i} has no label"));
                };
                if !labels.insert(label.clone()) {
                    return invalid(format!("duplicate write label {label:?}"));
                }
                let len = op.data.as_ref().map(String::len).or(op.size).unwrap_or(0);
                if len == 0 {
                    return invalid(format!("write {label:?} is empty"));
                }
                if op.byzantine.is_some_and(|s| s >= n) {
                    return invalid(format!("write {label:?} corrupts a shard out of range"));
                }
            }
            OpKind::Read => match &op.blob {
                Some(b) if labels.contains(b) => {}
                other => return invalid(format!("read step {i} names unknown write {other:?}")),
            },
            OpKind::Reconfigure => match op.epoch {
                Some(e) if e >= 1 && (e as usize) < committees.len() => {}
                other => return invalid(format!("reconfigure step {i} names no configured committee ({other:?})")),
            },
            OpKind::Challenge => {}
        }
    }
    for label in config.expect.invalidated.iter().chain(&config.expect.readable) {
        if !labels.contains(label) {
            return invalid(format!("expectation names unknown write {label:?}"));
        }
    }
    Ok(())
}
