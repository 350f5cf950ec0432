// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! One-dimensional baseline: RS(f+1, n) over the whole blob.
//!
//! Each node holds one codeword symbol of `|B|/(f+1)` bytes. A node that
//! lost its symbol has to download `f+1` other symbols, i.e. the whole blob,
//! re-encode and keep its own position. Used as a cost oracle next to the
//! two-dimensional recovery.

use crate::erasure::{ErasureError, ReedSolomon};
use crate::ShardIndex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrawmanRecovery {
    pub shard: ShardIndex,
    pub recovered: Vec<u8>,
    /// Payload bytes fetched from other nodes.
    pub bytes_downloaded: u64,
    pub sources: Vec<ShardIndex>,
}

#[derive(Debug, Clone)]
pub struct Strawman {
    f: usize,
    rs: ReedSolomon,
}

impl Strawman {
    pub fn new(f: usize) -> Result<Self, ErasureError> {
        Ok(Self {
            f,
            rs: ReedSolomon::new(f + 1, 3 * f + 1)?,
        })
    }

    pub fn n_shards(&self) -> usize {
        3 * self.f + 1
    }

    /// Symbol size for a blob: `ceil(len / (f+1))`, rounded up to even.
    pub fn symbol_size(&self, blob_len: usize) -> usize {
        let per = blob_len.div_ceil(self.f + 1).max(1);
        per + per % 2
    }

    pub fn encode(&self, blob: &[u8]) -> Result<Vec<Vec<u8>>, ErasureError> {
        let size = self.symbol_size(blob.len());
        let mut padded = blob.to_vec();
        padded.resize(size * (self.f + 1), 0);
        let source: Vec<&[u8]> = padded.chunks(size).collect();
        self.rs.encode(&source)
    }

    /// Rebuilds `shard` from the first `f+1` other shards in `shares`.
    pub fn recover(&self, shard: ShardIndex, shares: &[(ShardIndex, Vec<u8>)]) -> Result<StrawmanRecovery, ErasureError> {
        let used: Vec<(usize, &[u8])> = shares
            .iter()
            .filter(|(i, _)| *i != shard)
            .take(self.f + 1)
            .map(|(i, s)| (*i, s.as_slice()))
            .collect();
        let bytes_downloaded = used.iter().map(|(_, s)| s.len() as u64).sum();
        let source = self.rs.decode(&used)?;
        let refs: Vec<&[u8]> = source.iter().map(Vec::as_slice).collect();
        let recovered = self.rs.encode_symbol(&refs, shard)?;
        Ok(StrawmanRecovery {
            shard,
            recovered,
            bytes_downloaded,
            sources: used.iter().map(|(i, _)| *i).collect(),
        })
    }
}

/// Encodes `blob`, drops `shard` and recovers it from the others.
pub fn full_read_recovery(blob: &[u8], f: usize, shard: ShardIndex) -> Result<StrawmanRecovery, ErasureError> {
    let code = Strawman::new(f)?;
    let shares = code.encode(blob)?;
    let others: Vec<(ShardIndex, Vec<u8>)> = shares
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != shard)
        .map(|(i, s)| (i, s.clone()))
        .collect();
    let out = code.recover(shard, &others)?;
    debug_assert_eq!(out.recovered, shares[shard]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_reads_the_whole_blob() {
        let blob: Vec<u8> = (0..1000u32).map(|i| (i * 7 % 251) as u8).collect();
        for f in 1..=3 {
            let code = Strawman::new(f).unwrap();
            let shares = code.encode(&blob).unwrap();
            for shard in 0..code.n_shards() {
                let r = full_read_recovery(&blob, f, shard).unwrap();
                assert_eq!(r.recovered, shares[shard]);
                assert!(r.bytes_downloaded >= blob.len() as u64);
                assert_eq!(r.sources.len(), f + 1);
            }
        }
    }
}
