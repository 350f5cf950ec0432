// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Sliver commitments, blob ids, symbol openings and metadata shards.
//!
//! All hashing is SHA-256 with a one-byte domain tag: `0x00` for Merkle
//! leaves, `0x01` for internal nodes and `0x02` for the blob id preimage.
//! Trees are built over index-ordered leaves, padded to a power of two by
//! repeating the last leaf.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Dimension, IntersectionSymbol, SliverPair};
use crate::erasure::{EncodingConfig, ErasureError, ReedSolomon};
use crate::{Epoch, ShardIndex};

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;
const BLOB_ID_TAG: u8 = 0x02;

/// Encoding tag for the two-dimensional Reed-Solomon layout in this crate.
pub const ENCODING_RS2D: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitmentError {
    #[error("expected {expected} sliver pairs, got {actual}")]
    WrongPairCount { expected: usize, actual: usize },
    #[error("need {need} consistent metadata shards, have {have}")]
    InsufficientShards { have: usize, need: usize },
    #[error("malformed metadata: {0}")]
    Malformed(String),
    #[error("decoded metadata hashes to {actual}, expected {expected}")]
    BlobIdMismatch { expected: BlobId, actual: BlobId },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Erasure(#[from] ErasureError),
}

pub type Result<T, E = CommitmentError> = std::result::Result<T, E>;

/// A 256-bit hash value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&self.to_hex())
        } else {
            self.0.serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
        } else {
            Ok(Digest(<[u8; 32]>::deserialize(d)?))
        }
    }
}

fn tagged_hash(tag: u8, parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    h.update([tag]);
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Plain SHA-256, for transcript hashing and other untagged uses.
pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

pub fn leaf_hash(data: &[u8]) -> Digest {
    tagged_hash(LEAF_TAG, &[data])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    tagged_hash(NODE_TAG, &[&left.0, &right.0])
}

/// A binary Merkle tree with every level kept for proof extraction.
#[derive(Debug, Clone)]
pub struct MerkleTree {
    leaf_count: usize,
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new<T: AsRef<[u8]>>(leaves: &[T]) -> Self {
        assert!(!leaves.is_empty(), "merkle tree needs at least one leaf");
        let leaf_count = leaves.len();
        let mut level: Vec<Digest> = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
        let last = *level.last().unwrap();
        level.resize(leaf_count.next_power_of_two(), last);
        let mut levels = vec![level];
        while levels.last().unwrap().len() > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks_exact(2)
                .map(|p| node_hash(&p[0], &p[1]))
                .collect();
            levels.push(next);
        }
        Self { leaf_count, levels }
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Sibling hashes from leaf to root.
    pub fn path(&self, index: usize) -> Vec<Digest> {
        assert!(index < self.leaf_count);
        let mut at = index;
        let mut path = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            path.push(level[at ^ 1]);
            at >>= 1;
        }
        path
    }
}

/// Checks that `leaf` sits at `index` of a `leaf_count`-leaf tree with `root`.
pub fn verify_path(
    root: &Digest,
    leaf_count: usize,
    index: usize,
    leaf: &[u8],
    path: &[Digest],
) -> bool {
    if leaf_count == 0 || index >= leaf_count {
        return false;
    }
    let depth = leaf_count.next_power_of_two().trailing_zeros() as usize;
    if path.len() != depth {
        return false;
    }
    let mut acc = leaf_hash(leaf);
    let mut at = index;
    for sibling in path {
        acc = if at & 1 == 0 {
            node_hash(&acc, sibling)
        } else {
            node_hash(sibling, &acc)
        };
        at >>= 1;
    }
    acc == *root
}

/// Merkle root over a sliver's `n` expanded symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliverCommitment {
    pub root: Digest,
    pub dimension: Dimension,
    pub index: ShardIndex,
    /// Leaves in the tree, always `n_shards`.
    pub leaves: usize,
}

impl SliverCommitment {
    pub fn verify(&self, proof: &SymbolProof) -> bool {
        proof.dimension == self.dimension
            && proof.sliver_index == self.index
            && proof.symbol.line_in(self.dimension) == self.index
            && verify_path(
                &self.root,
                self.leaves,
                proof.symbol.position_in(self.dimension),
                &proof.symbol.data,
                &proof.merkle_path,
            )
    }
}

pub fn commit_expanded(
    expanded: &[Vec<u8>],
    dimension: Dimension,
    index: ShardIndex,
) -> SliverCommitment {
    SliverCommitment {
        root: MerkleTree::new(expanded).root(),
        dimension,
        index,
        leaves: expanded.len(),
    }
}

/// Commits to a sliver by expanding it to all `n` positions first.
pub fn commit_sliver(
    sliver: &crate::codec::Sliver,
    config: &EncodingConfig,
) -> Result<SliverCommitment> {
    let expanded = sliver.expand_all(config)?;
    Ok(commit_expanded(&expanded, sliver.dimension(), sliver.index()))
}

/// An expanded symbol together with its opening against the sliver root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolProof {
    pub symbol: IntersectionSymbol,
    pub merkle_path: Vec<Digest>,
    pub sliver_index: ShardIndex,
    pub dimension: Dimension,
}

impl SymbolProof {
    pub fn byte_len(&self) -> usize {
        self.symbol.data.len() + 32 * self.merkle_path.len()
    }
}

/// Opens every position of a sliver's expansion; cheaper than repeated
/// [`prove_symbol`] calls.
#[derive(Debug, Clone)]
pub struct SliverOpener {
    dimension: Dimension,
    index: ShardIndex,
    expanded: Vec<Vec<u8>>,
    tree: MerkleTree,
}

impl SliverOpener {
    pub fn new(sliver: &crate::codec::Sliver, config: &EncodingConfig) -> Result<Self> {
        let expanded = sliver.expand_all(config)?;
        let tree = MerkleTree::new(&expanded);
        Ok(Self {
            dimension: sliver.dimension(),
            index: sliver.index(),
            expanded,
            tree,
        })
    }

    pub fn commitment(&self) -> SliverCommitment {
        SliverCommitment {
            root: self.tree.root(),
            dimension: self.dimension,
            index: self.index,
            leaves: self.tree.leaf_count(),
        }
    }

    pub fn prove(&self, k: ShardIndex) -> Option<SymbolProof> {
        let data = self.expanded.get(k)?.clone();
        let (row, col) = match self.dimension {
            Dimension::Primary => (self.index, k),
            Dimension::Secondary => (k, self.index),
        };
        Some(SymbolProof {
            symbol: IntersectionSymbol {
                row,
                col,
                origin: self.dimension,
                data,
            },
            merkle_path: self.tree.path(k),
            sliver_index: self.index,
            dimension: self.dimension,
        })
    }
}

pub fn prove_symbol(
    sliver: &crate::codec::Sliver,
    k: ShardIndex,
    config: &EncodingConfig,
) -> Result<SymbolProof> {
    SliverOpener::new(sliver, config)?
        .prove(k)
        .ok_or(CommitmentError::Codec(CodecError::IndexOutOfRange {
            index: k,
            n: config.n_shards(),
        }))
}

pub fn verify_symbol(proof: &SymbolProof, commitment: &SliverCommitment) -> bool {
    commitment.verify(proof)
}

/// Digest binding a blob's commitments, length and encoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlobId(pub Digest);

impl fmt::Display for BlobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Per-sliver commitments plus the parameters needed to decode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlobMetadata {
    pub blob_len: u64,
    pub symbol_size: u32,
    pub encoding_tag: u8,
    /// Epoch whose committee received the write. Not part of the blob id.
    pub epoch_written: Epoch,
    pub primary: Vec<Digest>,
    pub secondary: Vec<Digest>,
}

impl BlobMetadata {
    pub fn n_shards(&self) -> usize {
        self.primary.len()
    }

    pub fn config(&self) -> Result<EncodingConfig> {
        Ok(EncodingConfig::from_shards(
            self.n_shards(),
            self.symbol_size as usize,
        )?)
    }

    pub fn commitment(&self, dimension: Dimension, index: ShardIndex) -> Option<SliverCommitment> {
        let roots = match dimension {
            Dimension::Primary => &self.primary,
            Dimension::Secondary => &self.secondary,
        };
        Some(SliverCommitment {
            root: *roots.get(index)?,
            dimension,
            index,
            leaves: self.n_shards(),
        })
    }

    pub fn blob_id(&self) -> BlobId {
        make_blob_id(self)
    }

    /// Big-endian, fixed order: blob_len, symbol_size, encoding_tag,
    /// epoch_written, n, primary roots, secondary roots.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let n = self.n_shards();
        let mut out = Vec::with_capacity(25 + 64 * n);
        out.extend_from_slice(&self.blob_len.to_be_bytes());
        out.extend_from_slice(&self.symbol_size.to_be_bytes());
        out.push(self.encoding_tag);
        out.extend_from_slice(&self.epoch_written.to_be_bytes());
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for d in self.primary.iter().chain(&self.secondary) {
            out.extend_from_slice(&d.0);
        }
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |what: &str| CommitmentError::Malformed(what.to_string());
        if bytes.len() < 25 {
            return Err(malformed("truncated header"));
        }
        let blob_len = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let symbol_size = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let encoding_tag = bytes[12];
        let epoch_written = u64::from_be_bytes(bytes[13..21].try_into().unwrap());
        let n = u32::from_be_bytes(bytes[21..25].try_into().unwrap()) as usize;
        let body = &bytes[25..];
        if n == 0 || body.len() != 64 * n {
            return Err(malformed("root count does not match shard count"));
        }
        let roots: Vec<Digest> = body
            .chunks_exact(32)
            .map(|c| Digest(c.try_into().unwrap()))
            .collect();
        let metadata = Self {
            blob_len,
            symbol_size,
            encoding_tag,
            epoch_written,
            primary: roots[..n].to_vec(),
            secondary: roots[n..].to_vec(),
        };
        metadata.config()?;
        Ok(metadata)
    }
}

/// Builds metadata for `n` sliver pairs produced by one encoding.
pub fn make_metadata(
    pairs: &[SliverPair],
    blob_len: usize,
    config: &EncodingConfig,
    epoch_written: Epoch,
) -> Result<BlobMetadata> {
    if pairs.len() != config.n_shards() {
        return Err(CommitmentError::WrongPairCount {
            expected: config.n_shards(),
            actual: pairs.len(),
        });
    }
    let mut primary = Vec::with_capacity(pairs.len());
    let mut secondary = Vec::with_capacity(pairs.len());
    for pair in pairs {
        pair.check(config)?;
        primary.push(commit_sliver(&pair.primary.clone().into(), config)?.root);
        secondary.push(commit_sliver(&pair.secondary.clone().into(), config)?.root);
    }
    Ok(BlobMetadata {
        blob_len: blob_len as u64,
        symbol_size: config.symbol_size() as u32,
        encoding_tag: ENCODING_RS2D,
        epoch_written,
        primary,
        secondary,
    })
}

pub fn make_blob_id(metadata: &BlobMetadata) -> BlobId {
    let p = MerkleTree::new(&metadata.primary.iter().map(|d| d.0).collect::<Vec<_>>()).root();
    let s = MerkleTree::new(&metadata.secondary.iter().map(|d| d.0).collect::<Vec<_>>()).root();
    BlobId(tagged_hash(
        BLOB_ID_TAG,
        &[
            &p.0,
            &s.0,
            &metadata.blob_len.to_be_bytes(),
            &metadata.symbol_size.to_be_bytes(),
            &[metadata.encoding_tag],
        ],
    ))
}

/// One node's share of the `(f+1)`-of-`n` encoded metadata.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataShard {
    pub index: ShardIndex,
    pub n_shards: usize,
    #[serde(with = "crate::hex_bytes")]
    pub data: Vec<u8>,
    /// Root over all `n` shards of this encoding.
    pub root: Digest,
    pub path: Vec<Digest>,
}

impl MetadataShard {
    /// Checks the shard's opening against its own root.
    pub fn verify(&self) -> bool {
        verify_path(&self.root, self.n_shards, self.index, &self.data, &self.path)
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() + 32 * (self.path.len() + 1)
    }
}

fn metadata_code(n_shards: usize) -> Result<ReedSolomon> {
    let f = (n_shards - 1) / 3;
    Ok(ReedSolomon::new(f + 1, n_shards)?)
}

/// Splits canonical metadata into `n` shards, any `f+1` of which decode it.
pub fn encode_metadata(metadata: &BlobMetadata) -> Result<Vec<MetadataShard>> {
    let n = metadata.n_shards();
    let code = metadata_code(n)?;
    let t = code.source_count();
    let body = metadata.to_canonical_bytes();
    let mut bytes = (body.len() as u32).to_be_bytes().to_vec();
    bytes.extend_from_slice(&body);
    let sym = bytes.len().div_ceil(t).next_multiple_of(2);
    bytes.resize(sym * t, 0);
    let source: Vec<&[u8]> = bytes.chunks_exact(sym).collect();
    let encoded = code.encode(&source)?;
    let tree = MerkleTree::new(&encoded);
    Ok(encoded
        .into_iter()
        .enumerate()
        .map(|(index, data)| MetadataShard {
            index,
            n_shards: n,
            data,
            root: tree.root(),
            path: tree.path(index),
        })
        .collect())
}

fn decode_group(shards: &[&MetadataShard], n_shards: usize) -> Result<BlobMetadata> {
    let code = metadata_code(n_shards)?;
    let shares: Vec<(usize, &[u8])> = shards.iter().map(|s| (s.index, s.data.as_slice())).collect();
    let bytes = code.decode(&shares)?.concat();
    if bytes.len() < 4 {
        return Err(CommitmentError::Malformed("shard too short".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes
        .get(4..4 + len)
        .ok_or_else(|| CommitmentError::Malformed("length prefix exceeds shard data".into()))?;
    BlobMetadata::from_canonical_bytes(body)
}

fn verified_groups(shards: &[MetadataShard], n_shards: usize) -> BTreeMap<Digest, Vec<&MetadataShard>> {
    let mut groups: BTreeMap<Digest, BTreeMap<ShardIndex, &MetadataShard>> = BTreeMap::new();
    for s in shards {
        if s.n_shards == n_shards && s.verify() {
            groups.entry(s.root).or_default().entry(s.index).or_insert(s);
        }
    }
    groups
        .into_iter()
        .map(|(root, g)| (root, g.into_values().collect()))
        .collect()
}

/// Decodes metadata from verified shards sharing one root.
///
/// Shards whose opening fails are ignored. With several roots present, the
/// first group (by root) holding `f+1` shards that decode is returned.
pub fn decode_metadata(shards: &[MetadataShard], n_shards: usize) -> Result<BlobMetadata> {
    let need = (n_shards - 1) / 3 + 1;
    let groups = verified_groups(shards, n_shards);
    let mut best = 0;
    let mut last_err = None;
    for group in groups.values() {
        best = best.max(group.len());
        if group.len() >= need {
            match decode_group(group, n_shards) {
                Ok(m) => return Ok(m),
                Err(e) => last_err = Some(e),
            }
        }
    }
    Err(last_err.unwrap_or(CommitmentError::InsufficientShards { have: best, need }))
}

/// Like [`decode_metadata`] but only accepts metadata hashing to `expected`.
pub fn decode_metadata_for(
    shards: &[MetadataShard],
    n_shards: usize,
    expected: &BlobId,
) -> Result<BlobMetadata> {
    let need = (n_shards - 1) / 3 + 1;
    let groups = verified_groups(shards, n_shards);
    let mut best = 0;
    let mut mismatch = None;
    for group in groups.values() {
        best = best.max(group.len());
        if group.len() < need {
            continue;
        }
        if let Ok(m) = decode_group(group, n_shards) {
            let actual = m.blob_id();
            if actual == *expected {
                return Ok(m);
            }
            mismatch = Some(CommitmentError::BlobIdMismatch {
                expected: *expected,
                actual,
            });
        }
    }
    Err(mismatch.unwrap_or(CommitmentError::InsufficientShards { have: best, need }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_blob, recover_secondary, Sliver};

    fn cfg(f: usize) -> EncodingConfig {
        EncodingConfig::new(f, 2).unwrap()
    }

    fn blob() -> Vec<u8> {
        (0u8..12).collect()
    }

    #[test]
    fn single_leaf_root_is_leaf_hash() {
        let c = cfg(0);
        let pairs = encode_blob(&[0xAB, 0xCD], &c).unwrap();
        let commitment = commit_sliver(&pairs[0].primary.clone().into(), &c).unwrap();
        assert_eq!(commitment.root, leaf_hash(&[0xAB, 0xCD]));
        assert_eq!(commitment.leaves, 1);
    }

    #[test]
    fn merkle_paths_against_manual_tree() {
        let leaves: Vec<Vec<u8>> = (0u8..3).map(|b| vec![b]).collect();
        let tree = MerkleTree::new(&leaves);
        let (a, b, c) = (leaf_hash(&[0]), leaf_hash(&[1]), leaf_hash(&[2]));
        let expected = node_hash(&node_hash(&a, &b), &node_hash(&c, &c));
        assert_eq!(tree.root(), expected);
        for i in 0..3 {
            assert!(verify_path(&expected, 3, i, &leaves[i], &tree.path(i)));
        }
        // The padding leaf exists in the tree but is outside the vector.
        assert!(!verify_path(&expected, 3, 3, &[2], &tree.path(2)));
    }

    #[test]
    fn one_repair_symbol_changes_the_root() {
        let c = cfg(1);
        let pairs = encode_blob(&blob(), &c).unwrap();
        let mut tampered = pairs[2].primary.clone();
        tampered.bytes_mut()[0] ^= 1;
        let a = commit_sliver(&pairs[2].primary.clone().into(), &c).unwrap();
        let b = commit_sliver(&tampered.into(), &c).unwrap();
        assert_ne!(a.root, b.root);
    }

    #[test]
    fn recovered_sliver_recommits_identically() {
        let c = cfg(1);
        let pairs = encode_blob(&blob(), &c).unwrap();
        let meta = make_metadata(&pairs, 12, &c, 0).unwrap();
        let column: Vec<_> = [1, 3]
            .iter()
            .map(|&i| crate::codec::expand_primary(&pairs[i].primary, 2, &c).unwrap())
            .collect();
        let s2 = recover_secondary(&column, 2, &c).unwrap();
        let recommitted = commit_sliver(&s2.into(), &c).unwrap();
        assert_eq!(Some(recommitted), meta.commitment(Dimension::Secondary, 2));
    }

    #[test]
    fn blob_id_binding() {
        let c = cfg(1);
        let pairs = encode_blob(&blob(), &c).unwrap();
        let m1 = make_metadata(&pairs, 12, &c, 0).unwrap();
        let m2 = make_metadata(&encode_blob(&blob(), &c).unwrap(), 12, &c, 5).unwrap();
        assert_eq!(m1.blob_id(), m2.blob_id(), "epoch is not part of the id");
        let mut longer = m1.clone();
        longer.blob_len += 1;
        assert_ne!(longer.blob_id(), m1.blob_id());
        let mut swapped = m1.clone();
        swapped.primary.swap(0, 1);
        assert_ne!(swapped.blob_id(), m1.blob_id());
        let mut retagged = m1.clone();
        retagged.encoding_tag = 9;
        assert_ne!(retagged.blob_id(), m1.blob_id());
        assert!(matches!(
            make_metadata(&pairs[..3], 12, &c, 0),
            Err(CommitmentError::WrongPairCount { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn symbol_proofs_verify_exhaustively_and_reject_tampering() {
        let c = cfg(1);
        let pairs = encode_blob(&blob(), &c).unwrap();
        let meta = make_metadata(&pairs, 12, &c, 0).unwrap();
        for pair in &pairs {
            for sliver in [Sliver::from(pair.primary.clone()), pair.secondary.clone().into()] {
                let commitment = meta.commitment(sliver.dimension(), sliver.index()).unwrap();
                let other = meta
                    .commitment(sliver.dimension(), (sliver.index() + 1) % 4)
                    .unwrap();
                for k in 0..4 {
                    let proof = prove_symbol(&sliver, k, &c).unwrap();
                    assert!(verify_symbol(&proof, &commitment));
                    assert!(!verify_symbol(&proof, &other));
                    let mut bad = proof.clone();
                    bad.symbol.data[1] ^= 0x80;
                    assert!(!verify_symbol(&bad, &commitment));
                    let mut short = proof.clone();
                    short.merkle_path.pop();
                    assert!(!verify_symbol(&short, &commitment));
                }
            }
        }
    }

    #[test]
    fn canonical_bytes_round_trip() {
        let c = cfg(2);
        let data: Vec<u8> = (0..100u8).collect();
        let pairs = encode_blob(&data, &c.with_symbol_size(8).unwrap()).unwrap();
        let meta = make_metadata(&pairs, 100, &c.with_symbol_size(8).unwrap(), 3).unwrap();
        let bytes = meta.to_canonical_bytes();
        assert_eq!(bytes.len(), 25 + 64 * 7);
        assert_eq!(&bytes[..8], &100u64.to_be_bytes());
        assert_eq!(BlobMetadata::from_canonical_bytes(&bytes).unwrap(), meta);
        assert!(BlobMetadata::from_canonical_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect()
    }

    #[test]
    fn metadata_shards_decode_from_any_two_of_four() {
        let c = cfg(1);
        let meta = make_metadata(&encode_blob(&blob(), &c).unwrap(), 12, &c, 0).unwrap();
        let shards = encode_metadata(&meta).unwrap();
        assert_eq!(shards.len(), 4);
        for subset in subsets(4, 2) {
            let picked: Vec<_> = subset.iter().map(|&i| shards[i].clone()).collect();
            assert_eq!(decode_metadata_for(&picked, 4, &meta.blob_id()).unwrap(), meta);
        }
        assert!(matches!(
            decode_metadata(&shards[..1], 4),
            Err(CommitmentError::InsufficientShards { have: 1, need: 2 })
        ));
    }

    #[test]
    fn tampered_shard_is_excluded_and_forged_sets_fail_the_id_check() {
        let c = cfg(1);
        let meta = make_metadata(&encode_blob(&blob(), &c).unwrap(), 12, &c, 0).unwrap();
        let id = meta.blob_id();
        let mut shards = encode_metadata(&meta).unwrap();
        shards[0].data[3] ^= 1;
        assert!(!shards[0].verify());
        assert!(decode_metadata_for(&shards[..2], 4, &id).is_err());
        assert_eq!(decode_metadata_for(&shards, 4, &id).unwrap(), meta);

        // A self-consistent forged encoding under its own root.
        let mut forged_meta = meta.clone();
        forged_meta.blob_len = 11;
        let forged = encode_metadata(&forged_meta).unwrap();
        assert!(matches!(
            decode_metadata_for(&forged, 4, &id),
            Err(CommitmentError::BlobIdMismatch { .. })
        ));
        let mut mixed = forged[..2].to_vec();
        mixed.extend(encode_metadata(&meta).unwrap().into_iter().skip(2));
        assert_eq!(decode_metadata_for(&mixed, 4, &id).unwrap(), meta);
    }

    #[test]
    fn shard_size_is_constant_per_node() {
        // Replicated, every node would hold all 64n bytes. Encoded, a node
        // holds about 64n/(f+1) ~ 192 bytes, independent of n.
        let n = 1000;
        let meta = BlobMetadata {
            blob_len: 1,
            symbol_size: 2,
            encoding_tag: ENCODING_RS2D,
            epoch_written: 0,
            primary: vec![Digest::default(); n],
            secondary: vec![Digest::default(); n],
        };
        assert_eq!(2 * n * 32, 64_000);
        let shards = encode_metadata(&meta).unwrap();
        let per_node = shards[0].data.len();
        assert!(per_node <= (64 * n + 29).div_ceil(334) + 1, "{per_node}");
        assert_eq!(decode_metadata(&shards[500..834], n).unwrap(), meta);
    }
}
