// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Two-dimensional erasure-coded blob storage.
//!
//! The crate is layered bottom-up:
//!
//! * [`erasure`]: systematic Reed-Solomon over GF(2^16).
//! * [`codec`]: the two-dimensional sliver encoding, expansion and recovery.
//! * [`commitments`]: Merkle commitments, blob ids, symbol openings and the
//!   1D-encoded metadata shards.
//! * [`chain`]: a totally ordered mock control plane.
//! * [`node`], [`client`], [`challenge`], [`reconfig`]: the storage protocol
//!   state machines.
//! * [`simnet`]: a deterministic discrete-event network and adversary.
//! * [`report`], [`strawman`]: claim checks and baseline oracles.
//! * [`fixtures`]: golden vectors from an independent generator.

pub mod chain;
pub mod challenge;
pub mod client;
pub mod codec;
pub mod commitments;
pub mod crypto;
pub mod erasure;
pub mod fixtures;
pub mod message;
pub mod node;
pub mod reconfig;
pub mod report;
pub mod simnet;
pub mod strawman;

pub use codec::{
    decode_from_primary, decode_from_secondary, encode_blob, make_source_matrix, Dimension,
    IntersectionSymbol, PrimarySliver, SecondarySliver, SliverPair, SourceMatrix,
};
pub use commitments::{BlobId, BlobMetadata};
pub use erasure::{EncodingConfig, ErasureError, Symbol, SymbolSet};

/// Epoch number.
pub type Epoch = u64;

/// Shard index, `0..n_shards`. Quorums are always counted in shards.
pub type ShardIndex = usize;

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&hex::encode(bytes))
        } else {
            s.serialize_bytes(bytes)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            hex::decode(s).map_err(serde::de::Error::custom)
        } else {
            <Vec<u8>>::deserialize(d)
        }
    }
}
