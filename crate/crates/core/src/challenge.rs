// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Storage challenges: blob sampling, response checking and rate policy.
//!
//! When a challenge opens, every prover shard `p` sends each verifier shard
//! `v` the symbol `E(p, v)` of every challenged blob, opened against the
//! prover's primary commitment. The verifier checks the opening and the
//! symbol against its own secondary sliver, then signs a confirmation. A
//! prover with confirmations covering `2f+1` shards (its own included) posts
//! a certificate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{expand_secondary, Dimension, SecondarySliver};
use crate::commitments::{sha256, BlobId, BlobMetadata, Digest, SymbolProof};
use crate::crypto::Signature;
use crate::{Epoch, ShardIndex};

/// Samples `k` of `certified` without replacement, keyed by the shared coin
/// and the prover shard. `k >= certified.len()` challenges everything.
///
/// The PRF is `SHA-256(coin || shard || counter)`; the first eight bytes
/// are rejection-sampled into the index range.
pub fn select_challenged_blobs(
    coin: &Digest,
    shard: ShardIndex,
    k: usize,
    certified: &[BlobId],
) -> Vec<BlobId> {
    let total = certified.len();
    if k >= total {
        return certified.to_vec();
    }
    let bound = total as u64;
    let zone = u64::MAX - (u64::MAX % bound);
    let mut chosen = BTreeSet::new();
    let mut counter: u64 = 0;
    while chosen.len() < k {
        let mut material = b"redstuff/prf".to_vec();
        material.extend_from_slice(&coin.0);
        material.extend_from_slice(&(shard as u64).to_be_bytes());
        material.extend_from_slice(&counter.to_be_bytes());
        counter += 1;
        let x = u64::from_be_bytes(sha256(&material).0[..8].try_into().unwrap());
        if x >= zone {
            continue;
        }
        chosen.insert((x % bound) as usize);
    }
    chosen.into_iter().map(|i| certified[i]).collect()
}

/// The per-prover challenged sets of one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSet {
    pub coin: Digest,
    pub k: usize,
    pub per_shard: BTreeMap<ShardIndex, Vec<BlobId>>,
}

impl ChallengeSet {
    pub fn new(coin: Digest, k: usize, certified: &[BlobId], n_shards: usize) -> Self {
        let per_shard = (0..n_shards)
            .map(|s| (s, select_challenged_blobs(&coin, s, k, certified)))
            .collect();
        Self { coin, k, per_shard }
    }

    pub fn for_shard(&self, shard: ShardIndex) -> &[BlobId] {
        self.per_shard.get(&shard).map_or(&[], Vec::as_slice)
    }

    /// Whether any prover is challenged on `blob`.
    pub fn covers(&self, blob: &BlobId) -> bool {
        self.per_shard.values().any(|v| v.contains(blob))
    }
}

/// Why a verifier withheld its confirmation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseFault {
    MissingBlob(BlobId),
    UnexpectedBlob(BlobId),
    UnknownMetadata(BlobId),
    BadOpening(BlobId),
    WrongSymbol(BlobId),
}

/// Checks a prover's symbols for every blob in `expected`.
///
/// `metadata` supplies commitments; `secondary` supplies the verifier's own
/// secondary sliver for a blob when it holds one, which must agree with the
/// symbol at the prover's row.
pub fn check_response<'a>(
    prover: ShardIndex,
    verifier: ShardIndex,
    expected: &[BlobId],
    proofs: &[(BlobId, SymbolProof)],
    metadata: impl Fn(&BlobId) -> Option<&'a BlobMetadata>,
    secondary: impl Fn(&BlobId) -> Option<&'a SecondarySliver>,
) -> Result<(), ResponseFault> {
    let mut by_blob: BTreeMap<BlobId, &SymbolProof> = BTreeMap::new();
    for (blob, proof) in proofs {
        if !expected.contains(blob) {
            return Err(ResponseFault::UnexpectedBlob(*blob));
        }
        by_blob.insert(*blob, proof);
    }
    for blob in expected {
        let proof = by_blob.get(blob).ok_or(ResponseFault::MissingBlob(*blob))?;
        let meta = metadata(blob).ok_or(ResponseFault::UnknownMetadata(*blob))?;
        let commitment = meta
            .commitment(Dimension::Primary, prover)
            .ok_or(ResponseFault::BadOpening(*blob))?;
        if proof.symbol.row != prover || proof.symbol.col != verifier || !commitment.verify(proof) {
            return Err(ResponseFault::BadOpening(*blob));
        }
        if let Some(own) = secondary(blob) {
            let config = meta.config().map_err(|_| ResponseFault::BadOpening(*blob))?;
            let mine = expand_secondary(own, prover, &config)
                .map_err(|_| ResponseFault::WrongSymbol(*blob))?;
            if mine.data != proof.symbol.data {
                return Err(ResponseFault::WrongSymbol(*blob));
            }
        }
    }
    Ok(())
}

/// One verifier's verdict on one prover's response, for the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeCheck {
    pub epoch: Epoch,
    pub prover: ShardIndex,
    pub verifier: ShardIndex,
    pub blobs: Vec<BlobId>,
    /// `"confirmed"` or the fault.
    pub outcome: String,
}

/// A node's view of one challenge phase.
#[derive(Debug, Clone, Default)]
pub struct ChallengePhase {
    pub epoch: Epoch,
    pub set: Option<ChallengeSet>,
    /// Confirmations gathered per prover shard this node owns.
    pub confirmations: BTreeMap<ShardIndex, BTreeMap<ShardIndex, Signature>>,
    pub certified: BTreeSet<ShardIndex>,
    /// `(prover, verifier)` pairs this node has already confirmed.
    pub confirmed: BTreeSet<(ShardIndex, ShardIndex)>,
}

impl ChallengePhase {
    pub fn new(epoch: Epoch) -> Self {
        Self {
            epoch,
            ..Self::default()
        }
    }

    /// Whether reads of `blob` are suspended: all reads until the set is
    /// known, then only challenged blobs.
    pub fn blocks(&self, blob: &BlobId) -> bool {
        self.set.as_ref().map_or(true, |s| s.covers(blob))
    }
}

/// When to widen sampled challenges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePolicy {
    /// Read-failure rate above which `k` grows.
    pub failure_threshold: f64,
    pub growth_factor: usize,
}

impl Default for RatePolicy {
    fn default() -> Self {
        Self {
            failure_threshold: 0.01,
            growth_factor: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReadStats {
    pub attempts: u64,
    pub failures: u64,
}

impl ReadStats {
    pub fn failure_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempts as f64
        }
    }
}

/// Next challenge count: grows by the policy factor while failures exceed
/// the threshold, capped at the full blob set.
pub fn adapt_challenge_rate(k: usize, total: usize, stats: ReadStats, policy: &RatePolicy) -> usize {
    let next = if stats.failures > 0 && stats.failure_rate() > policy.failure_threshold {
        k.max(1).saturating_mul(policy.growth_factor.max(1))
    } else {
        k
    };
    next.min(total)
}

/// Probability that a node holding a fraction `p` of blobs answers `k`
/// independently sampled challenges.
pub fn pass_probability(p: f64, k: u64) -> f64 {
    p.powf(k as f64)
}

/// `log10` of [`pass_probability`], exact where the value underflows.
pub fn log10_pass_probability(p: f64, k: u64) -> f64 {
    k as f64 * p.log10()
}

/// Suggested `k` for a target held fraction.
pub fn default_k(held_fraction: f64) -> u64 {
    if held_fraction >= 0.99 {
        7000
    } else {
        640
    }
}
