// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Golden vectors: field products, Reed-Solomon codewords and full blob
//! encodings with their commitments and ids.
//!
//! The vectors are produced by `fixtures/oracle.py`, an independent
//! implementation, and checked here against the library.

use std::path::Path;

use serde::Deserialize;

use crate::codec::encode_blob;
use crate::commitments::{make_metadata, BlobMetadata};
use crate::erasure::{gf16, EncodingConfig, ReedSolomon};

/// Environment variable naming the fixture directory for the CLI.
pub const FIXTURE_DIR_ENV: &str = "REDSTUFF_FIXTURES";

#[derive(Debug, Deserialize)]
struct GfVector {
    a: u16,
    b: u16,
    product: u16,
    inverse_a: u16,
}

#[derive(Debug, Deserialize)]
struct RsVector {
    t: usize,
    n: usize,
    source: Vec<String>,
    codeword: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BlobVector {
    pub blob: String,
    pub f: usize,
    pub symbol_size: usize,
    pub primary: Vec<String>,
    pub secondary: Vec<String>,
    pub primary_roots: Vec<String>,
    pub secondary_roots: Vec<String>,
    pub metadata: String,
    pub blob_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

fn load<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T, String> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn unhex(s: &str) -> Result<Vec<u8>, String> {
    hex::decode(s).map_err(|e| format!("bad hex {s:?}: {e}"))
}

pub fn load_blob_vectors(dir: &Path) -> Result<Vec<BlobVector>, String> {
    load(dir, "encodings.json")
}

/// Checks every vector in `dir`. Errors only when a file is missing or
/// unreadable; mismatches are listed in the report.
pub fn verify_dir(dir: &Path) -> Result<FixtureReport, String> {
    let mut report = FixtureReport::default();

    let gf: Vec<GfVector> = load(dir, "gf16.json")?;
    for v in &gf {
        report.check(gf16::mul(v.a, v.b) == v.product, || {
            format!("gf16 {:#06x} * {:#06x} != {:#06x}", v.a, v.b, v.product)
        });
        report.check(gf16::inv(v.a) == v.inverse_a, || {
            format!("gf16 inverse of {:#06x} != {:#06x}", v.a, v.inverse_a)
        });
    }

    let rs: Vec<RsVector> = load(dir, "rs.json")?;
    for v in &rs {
        let source = v.source.iter().map(|s| unhex(s)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&[u8]> = source.iter().map(Vec::as_slice).collect();
        let got = ReedSolomon::new(v.t, v.n)
            .and_then(|code| code.encode(&refs))
            .map(|c| c.iter().map(hex::encode).collect::<Vec<_>>());
        report.check(got.as_ref() == Ok(&v.codeword), || {
            format!("rs({}, {}) codeword mismatch: {got:?}", v.t, v.n)
        });
    }

    for v in load_blob_vectors(dir)? {
        let blob = unhex(&v.blob)?;
        let label = format!("blob {} (f={}, symbol {})", v.blob, v.f, v.symbol_size);
        let config = match EncodingConfig::new(v.f, v.symbol_size) {
            Ok(c) => c,
            Err(e) => {
                report.check(false, || format!("{label}: {e}"));
                continue;
            }
        };
        let pairs = match encode_blob(&blob, &config) {
            Ok(p) => p,
            Err(e) => {
                report.check(false, || format!("{label}: {e}"));
                continue;
            }
        };
        let primary: Vec<String> = pairs.iter().map(|p| hex::encode(p.primary.as_bytes())).collect();
        let secondary: Vec<String> = pairs.iter().map(|p| hex::encode(p.secondary.as_bytes())).collect();
        report.check(primary == v.primary, || format!("{label}: primary slivers differ"));
        report.check(secondary == v.secondary, || format!("{label}: secondary slivers differ"));
        let metadata = make_metadata(&pairs, blob.len(), &config, 0).map_err(|e| e.to_string())?;
        let roots = |d: &[crate::commitments::Digest]| d.iter().map(|r| r.to_hex()).collect::<Vec<_>>();
        report.check(roots(&metadata.primary) == v.primary_roots, || {
            format!("{label}: primary commitments differ")
        });
        report.check(roots(&metadata.secondary) == v.secondary_roots, || {
            format!("{label}: secondary commitments differ")
        });
        report.check(hex::encode(metadata.to_canonical_bytes()) == v.metadata, || {
            format!("{label}: canonical metadata differs")
        });
        let parsed = BlobMetadata::from_canonical_bytes(&unhex(&v.metadata)?);
        report.check(parsed.as_ref() == Ok(&metadata), || {
            format!("{label}: canonical metadata does not parse back")
        });
        report.check(metadata.blob_id().to_string() == v.blob_id, || {
            format!("{label}: blob id {} != {}", metadata.blob_id(), v.blob_id)
        });
    }
    Ok(report)
}
