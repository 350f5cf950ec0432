// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! The two-dimensional sliver encoding.
//!
//! A blob fills an `(f+1) x (2f+1)` source matrix row-major, zero padded.
//! Extending every column to `n` symbols (threshold `f+1`) yields `n` rows:
//! row `i` is primary sliver `i`. Extending every row to `n` symbols
//! (threshold `2f+1`) yields `n` columns: column `j` is secondary sliver `j`.
//! Because the code is linear both extensions are slices of one `n x n`
//! matrix `E`, and `E(i, j)` can be computed from either primary sliver `i`
//! or secondary sliver `j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::erasure::{EncodingConfig, ErasureError, ReedSolomon};
use crate::ShardIndex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("blob is empty")]
    EmptyBlob,
    #[error("blob of {len} bytes exceeds matrix capacity of {capacity} bytes")]
    BlobTooLarge { len: usize, capacity: usize },
    #[error("shard index {index} out of range for {n} shards")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{dimension:?} sliver {index} has {actual} bytes, expected {expected}")]
    MalformedSliver {
        dimension: Dimension,
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("symbol at ({row}, {col}) does not lie on {dimension:?} line {line}")]
    OffLine {
        dimension: Dimension,
        line: usize,
        row: usize,
        col: usize,
    },
    #[error(transparent)]
    Erasure(#[from] ErasureError),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

/// Which half of a sliver pair, equivalently which axis of `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    /// Rows of `E`; `2f+1` systematic symbols, recovered with threshold `2f+1`.
    Primary,
    /// Columns of `E`; `f+1` systematic symbols, recovered with threshold `f+1`.
    Secondary,
}

impl Dimension {
    pub fn other(self) -> Self {
        match self {
            Dimension::Primary => Dimension::Secondary,
            Dimension::Secondary => Dimension::Primary,
        }
    }

    /// Systematic symbols in a sliver of this dimension.
    pub fn sliver_len(self, config: &EncodingConfig) -> usize {
        match self {
            Dimension::Primary => config.secondary_threshold(),
            Dimension::Secondary => config.primary_threshold(),
        }
    }
}

/// The blob laid out as `(f+1) x (2f+1)` symbols, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMatrix {
    config: EncodingConfig,
    cells: Vec<u8>,
    pad_len: usize,
}

impl SourceMatrix {
    pub fn config(&self) -> &EncodingConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.primary_threshold()
    }

    pub fn cols(&self) -> usize {
        self.config.secondary_threshold()
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn cell(&self, row: usize, col: usize) -> &[u8] {
        let sz = self.config.symbol_size();
        let at = (row * self.cols() + col) * sz;
        &self.cells[at..at + sz]
    }

    fn row(&self, row: usize) -> Vec<&[u8]> {
        (0..self.cols()).map(|c| self.cell(row, c)).collect()
    }

    fn column(&self, col: usize) -> Vec<&[u8]> {
        (0..self.rows()).map(|r| self.cell(r, col)).collect()
    }

    /// Row-major bytes including padding.
    pub fn as_bytes(&self) -> &[u8] {
        &self.cells
    }

    /// The first `blob_len` bytes, i.e. the blob with padding stripped.
    pub fn to_blob(&self, blob_len: usize) -> Result<Vec<u8>> {
        if blob_len > self.cells.len() {
            return Err(CodecError::BlobTooLarge {
                len: blob_len,
                capacity: self.cells.len(),
            });
        }
        Ok(self.cells[..blob_len].to_vec())
    }

    fn from_cells(config: EncodingConfig, cells: Vec<u8>) -> Self {
        debug_assert_eq!(cells.len(), config.capacity());
        Self {
            config,
            cells,
            pad_len: 0,
        }
    }
}

macro_rules! sliver_type {
    ($(#[$doc:meta])* $name:ident, $dimension:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub struct $name {
            index: ShardIndex,
            symbol_size: usize,
            #[serde(with = "crate::hex_bytes")]
            data: Vec<u8>,
        }

        impl $name {
            pub const DIMENSION: Dimension = $dimension;

            /// Builds a sliver from concatenated symbols, checking its shape
            /// against `config`.
            pub fn new(index: ShardIndex, data: Vec<u8>, config: &EncodingConfig) -> Result<Self> {
                let sliver = Self {
                    index,
                    symbol_size: config.symbol_size(),
                    data,
                };
                sliver.check(config)?;
                Ok(sliver)
            }

            pub fn check(&self, config: &EncodingConfig) -> Result<()> {
                if self.index >= config.n_shards() {
                    return Err(CodecError::IndexOutOfRange {
                        index: self.index,
                        n: config.n_shards(),
                    });
                }
                let expected = Self::DIMENSION.sliver_len(config) * config.symbol_size();
                if self.symbol_size != config.symbol_size() || self.data.len() != expected {
                    return Err(CodecError::MalformedSliver {
                        dimension: Self::DIMENSION,
                        index: self.index,
                        expected,
                        actual: self.data.len(),
                    });
                }
                Ok(())
            }

            pub fn index(&self) -> ShardIndex {
                self.index
            }

            pub fn symbol_size(&self) -> usize {
                self.symbol_size
            }

            pub fn len(&self) -> usize {
                self.data.len() / self.symbol_size
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn symbol(&self, position: usize) -> &[u8] {
                &self.data[position * self.symbol_size..(position + 1) * self.symbol_size]
            }

            pub fn symbols(&self) -> impl Iterator<Item = &[u8]> {
                self.data.chunks_exact(self.symbol_size)
            }

            pub fn as_bytes(&self) -> &[u8] {
                &self.data
            }

            /// Mutable access for fault-injection fixtures.
            pub fn bytes_mut(&mut self) -> &mut [u8] {
                &mut self.data
            }
        }
    };
}

sliver_type!(
    /// Row `index` of the column-extended matrix: `2f+1` symbols.
    PrimarySliver,
    Dimension::Primary
);
sliver_type!(
    /// Column `index` of the row-extended matrix: `f+1` symbols.
    SecondarySliver,
    Dimension::Secondary
);

/// The `index`-th primary and secondary slivers of one blob.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliverPair {
    pub primary: PrimarySliver,
    pub secondary: SecondarySliver,
}

impl SliverPair {
    pub fn index(&self) -> ShardIndex {
        self.primary.index()
    }

    pub fn check(&self, config: &EncodingConfig) -> Result<()> {
        self.primary.check(config)?;
        self.secondary.check(config)?;
        if self.primary.index() != self.secondary.index() {
            return Err(CodecError::IndexOutOfRange {
                index: self.secondary.index(),
                n: config.n_shards(),
            });
        }
        Ok(())
    }

    pub fn byte_len(&self) -> usize {
        self.primary.as_bytes().len() + self.secondary.as_bytes().len()
    }
}

/// Either half of a sliver pair, for messages that carry one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sliver {
    Primary(PrimarySliver),
    Secondary(SecondarySliver),
}

impl Sliver {
    pub fn dimension(&self) -> Dimension {
        match self {
            Sliver::Primary(_) => Dimension::Primary,
            Sliver::Secondary(_) => Dimension::Secondary,
        }
    }

    pub fn index(&self) -> ShardIndex {
        match self {
            Sliver::Primary(s) => s.index(),
            Sliver::Secondary(s) => s.index(),
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        match self {
            Sliver::Primary(s) => s.as_bytes(),
            Sliver::Secondary(s) => s.as_bytes(),
        }
    }

    pub fn check(&self, config: &EncodingConfig) -> Result<()> {
        match self {
            Sliver::Primary(s) => s.check(config),
            Sliver::Secondary(s) => s.check(config),
        }
    }

    /// The sliver's full line of `E`: all `n` expanded symbols, in order.
    pub fn expand_all(&self, config: &EncodingConfig) -> Result<Vec<Vec<u8>>> {
        match self {
            Sliver::Primary(s) => expand_primary_all(s, config),
            Sliver::Secondary(s) => expand_secondary_all(s, config),
        }
    }

    /// Position `k` of the expanded line.
    pub fn expand(&self, k: ShardIndex, config: &EncodingConfig) -> Result<IntersectionSymbol> {
        match self {
            Sliver::Primary(s) => expand_primary(s, k, config),
            Sliver::Secondary(s) => expand_secondary(s, k, config),
        }
    }
}

impl From<PrimarySliver> for Sliver {
    fn from(s: PrimarySliver) -> Self {
        Sliver::Primary(s)
    }
}

impl From<SecondarySliver> for Sliver {
    fn from(s: SecondarySliver) -> Self {
        Sliver::Secondary(s)
    }
}

/// Cell `(row, col)` of the doubly extended matrix `E`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntersectionSymbol {
    pub row: ShardIndex,
    pub col: ShardIndex,
    /// The sliver the symbol was expanded from.
    pub origin: Dimension,
    #[serde(with = "crate::hex_bytes")]
    pub data: Vec<u8>,
}

impl IntersectionSymbol {
    /// Position of this symbol within the expanded line of a sliver of
    /// dimension `dimension`.
    pub fn position_in(&self, dimension: Dimension) -> ShardIndex {
        match dimension {
            Dimension::Primary => self.col,
            Dimension::Secondary => self.row,
        }
    }

    /// Index of the sliver of dimension `dimension` whose line holds it.
    pub fn line_in(&self, dimension: Dimension) -> ShardIndex {
        match dimension {
            Dimension::Primary => self.row,
            Dimension::Secondary => self.col,
        }
    }
}

fn column_code(config: &EncodingConfig) -> Result<ReedSolomon> {
    Ok(ReedSolomon::new(
        config.primary_threshold(),
        config.n_shards(),
    )?)
}

fn row_code(config: &EncodingConfig) -> Result<ReedSolomon> {
    Ok(ReedSolomon::new(
        config.secondary_threshold(),
        config.n_shards(),
    )?)
}

fn check_shard(index: usize, config: &EncodingConfig) -> Result<()> {
    if index >= config.n_shards() {
        return Err(CodecError::IndexOutOfRange {
            index,
            n: config.n_shards(),
        });
    }
    Ok(())
}

/// Lays the blob out row-major in the source matrix, zero padding the tail.
pub fn make_source_matrix(blob: &[u8], config: &EncodingConfig) -> Result<SourceMatrix> {
    if blob.is_empty() {
        return Err(CodecError::EmptyBlob);
    }
    let capacity = config.capacity();
    if blob.len() > capacity {
        return Err(CodecError::BlobTooLarge {
            len: blob.len(),
            capacity,
        });
    }
    let mut cells = blob.to_vec();
    cells.resize(capacity, 0);
    Ok(SourceMatrix {
        config: *config,
        cells,
        pad_len: capacity - blob.len(),
    })
}

/// Encodes a source matrix into `n` sliver pairs.
pub fn encode_matrix(matrix: &SourceMatrix) -> Result<Vec<SliverPair>> {
    let config = *matrix.config();
    let n = config.n_shards();
    let sz = config.symbol_size();
    let cols = matrix.cols();
    let rows = matrix.rows();

    let mut primary: Vec<Vec<u8>> = vec![Vec::with_capacity(cols * sz); n];
    let columns = column_code(&config)?;
    for c in 0..cols {
        for (i, symbol) in columns.encode(&matrix.column(c))?.into_iter().enumerate() {
            primary[i].extend_from_slice(&symbol);
        }
    }

    let mut secondary: Vec<Vec<u8>> = vec![Vec::with_capacity(rows * sz); n];
    let rows_code = row_code(&config)?;
    for r in 0..rows {
        for (j, symbol) in rows_code.encode(&matrix.row(r))?.into_iter().enumerate() {
            secondary[j].extend_from_slice(&symbol);
        }
    }

    primary
        .into_iter()
        .zip(secondary)
        .enumerate()
        .map(|(i, (p, s))| {
            Ok(SliverPair {
                primary: PrimarySliver::new(i, p, &config)?,
                secondary: SecondarySliver::new(i, s, &config)?,
            })
        })
        .collect()
}

/// Encodes a blob into `n` sliver pairs.
pub fn encode_blob(blob: &[u8], config: &EncodingConfig) -> Result<Vec<SliverPair>> {
    encode_matrix(&make_source_matrix(blob, config)?)
}

/// `E(sliver.index, j)`, computed by extending the primary sliver along the
/// row code.
pub fn expand_primary(
    sliver: &PrimarySliver,
    j: ShardIndex,
    config: &EncodingConfig,
) -> Result<IntersectionSymbol> {
    sliver.check(config)?;
    check_shard(j, config)?;
    let source: Vec<&[u8]> = sliver.symbols().collect();
    Ok(IntersectionSymbol {
        row: sliver.index(),
        col: j,
        origin: Dimension::Primary,
        data: row_code(config)?.encode_symbol(&source, j)?,
    })
}

/// `E(i, sliver.index)`, computed by extending the secondary sliver along the
/// column code.
pub fn expand_secondary(
    sliver: &SecondarySliver,
    i: ShardIndex,
    config: &EncodingConfig,
) -> Result<IntersectionSymbol> {
    sliver.check(config)?;
    check_shard(i, config)?;
    let source: Vec<&[u8]> = sliver.symbols().collect();
    Ok(IntersectionSymbol {
        row: i,
        col: sliver.index(),
        origin: Dimension::Secondary,
        data: column_code(config)?.encode_symbol(&source, i)?,
    })
}

/// Row `sliver.index` of `E`, all `n` symbols.
pub fn expand_primary_all(sliver: &PrimarySliver, config: &EncodingConfig) -> Result<Vec<Vec<u8>>> {
    sliver.check(config)?;
    let source: Vec<&[u8]> = sliver.symbols().collect();
    Ok(row_code(config)?.encode(&source)?)
}

/// Column `sliver.index` of `E`, all `n` symbols.
pub fn expand_secondary_all(
    sliver: &SecondarySliver,
    config: &EncodingConfig,
) -> Result<Vec<Vec<u8>>> {
    sliver.check(config)?;
    let source: Vec<&[u8]> = sliver.symbols().collect();
    Ok(column_code(config)?.encode(&source)?)
}

/// Rebuilds secondary sliver `j` from at least `f+1` symbols of column `j`.
///
/// Consistency with the writer's commitment is not judged here.
pub fn recover_secondary(
    symbols: &[IntersectionSymbol],
    j: ShardIndex,
    config: &EncodingConfig,
) -> Result<SecondarySliver> {
    check_shard(j, config)?;
    let mut shares = Vec::with_capacity(symbols.len());
    for s in symbols {
        if s.col != j {
            return Err(CodecError::OffLine {
                dimension: Dimension::Secondary,
                line: j,
                row: s.row,
                col: s.col,
            });
        }
        shares.push((s.row, s.data.as_slice()));
    }
    let decoded = column_code(config)?.decode(&shares)?;
    SecondarySliver::new(j, decoded.concat(), config)
}

/// Rebuilds primary sliver `i` from at least `2f+1` symbols of row `i`.
pub fn recover_primary(
    symbols: &[IntersectionSymbol],
    i: ShardIndex,
    config: &EncodingConfig,
) -> Result<PrimarySliver> {
    check_shard(i, config)?;
    let mut shares = Vec::with_capacity(symbols.len());
    for s in symbols {
        if s.row != i {
            return Err(CodecError::OffLine {
                dimension: Dimension::Primary,
                line: i,
                row: s.row,
                col: s.col,
            });
        }
        shares.push((s.col, s.data.as_slice()));
    }
    let decoded = row_code(config)?.decode(&shares)?;
    PrimarySliver::new(i, decoded.concat(), config)
}

/// Source matrix from at least `f+1` primary slivers (decodes every column).
pub fn decode_from_primary(
    slivers: &[PrimarySliver],
    config: &EncodingConfig,
) -> Result<SourceMatrix> {
    for s in slivers {
        s.check(config)?;
    }
    let code = column_code(config)?;
    let rows = config.primary_threshold();
    let cols = config.secondary_threshold();
    let sz = config.symbol_size();
    let mut cells = vec![0u8; config.capacity()];
    for c in 0..cols {
        let shares: Vec<(usize, &[u8])> =
            slivers.iter().map(|s| (s.index(), s.symbol(c))).collect();
        for (r, symbol) in code.decode(&shares)?.into_iter().enumerate().take(rows) {
            let at = (r * cols + c) * sz;
            cells[at..at + sz].copy_from_slice(&symbol);
        }
    }
    Ok(SourceMatrix::from_cells(*config, cells))
}

/// Source matrix from at least `2f+1` secondary slivers (decodes every row).
pub fn decode_from_secondary(
    slivers: &[SecondarySliver],
    config: &EncodingConfig,
) -> Result<SourceMatrix> {
    for s in slivers {
        s.check(config)?;
    }
    let code = row_code(config)?;
    let rows = config.primary_threshold();
    let mut cells = Vec::with_capacity(config.capacity());
    for r in 0..rows {
        let shares: Vec<(usize, &[u8])> =
            slivers.iter().map(|s| (s.index(), s.symbol(r))).collect();
        for symbol in code.decode(&shares)? {
            cells.extend_from_slice(&symbol);
        }
    }
    Ok(SourceMatrix::from_cells(*config, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(f: usize, sz: usize) -> EncodingConfig {
        EncodingConfig::new(f, sz).unwrap()
    }

    fn random_blob(seed: u64, len: usize) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen()).collect()
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect()
    }

    // Independent oracle: the full n x n matrix built by extending the
    // column-extended rows with a freshly constructed row code.
    fn full_matrix(blob: &[u8], cfg: &EncodingConfig) -> Vec<Vec<Vec<u8>>> {
        let m = make_source_matrix(blob, cfg).unwrap();
        let n = cfg.n_shards();
        let col_code = ReedSolomon::new(cfg.primary_threshold(), n).unwrap();
        let row_code = ReedSolomon::new(cfg.secondary_threshold(), n).unwrap();
        let col_ext: Vec<Vec<Vec<u8>>> = (0..m.cols())
            .map(|c| col_code.encode(&m.column(c)).unwrap())
            .collect();
        (0..n)
            .map(|i| {
                let row: Vec<&[u8]> = col_ext.iter().map(|col| col[i].as_slice()).collect();
                row_code.encode(&row).unwrap()
            })
            .collect()
    }

    #[test]
    fn row_major_layout() {
        let blob: Vec<u8> = (0u8..12).collect();
        let m = make_source_matrix(&blob, &config(1, 2)).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pad_len()), (2, 3, 0));
        assert_eq!(m.cell(0, 0), &[0x00, 0x01]);
        assert_eq!(m.cell(1, 2), &[0x0A, 0x0B]);
    }

    #[test]
    fn padding_and_capacity() {
        let m = make_source_matrix(&[7u8; 11], &config(1, 2)).unwrap();
        assert_eq!(m.pad_len(), 1);
        assert_eq!(m.cell(1, 2), &[7, 0]);
        assert_eq!(
            make_source_matrix(&[0u8; 13], &config(1, 2)),
            Err(CodecError::BlobTooLarge {
                len: 13,
                capacity: 12
            })
        );
        assert_eq!(
            make_source_matrix(&[], &config(1, 2)),
            Err(CodecError::EmptyBlob)
        );
    }

    #[test]
    fn sliver_shapes_and_systematic_ranges() {
        let cfg = config(1, 2);
        let blob: Vec<u8> = (0u8..12).collect();
        let m = make_source_matrix(&blob, &cfg).unwrap();
        let pairs = encode_blob(&blob, &cfg).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(p.primary.len(), 3);
            assert_eq!(p.secondary.len(), 2);
        }
        for i in 0..=1 {
            for j in 0..=2 {
                assert_eq!(pairs[i].primary.symbol(j), m.cell(i, j));
                assert_eq!(pairs[j].secondary.symbol(i), m.cell(i, j));
            }
        }
        let total: usize = pairs.iter().map(SliverPair::byte_len).sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn degenerate_single_shard() {
        let cfg = config(0, 2);
        let pairs = encode_blob(&[0xAB, 0xCD], &cfg).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].primary.as_bytes(), &[0xAB, 0xCD]);
        assert_eq!(pairs[0].secondary.as_bytes(), &[0xAB, 0xCD]);
    }

    #[test]
    fn expansions_agree_with_full_matrix() {
        for (f, seed) in [(1, 11), (2, 12)] {
            let cfg = config(f, 4);
            let blob = random_blob(seed, cfg.capacity() - 3);
            let e = full_matrix(&blob, &cfg);
            let pairs = encode_blob(&blob, &cfg).unwrap();
            let n = cfg.n_shards();
            for i in 0..n {
                for j in 0..n {
                    let p = expand_primary(&pairs[i].primary, j, &cfg).unwrap();
                    let s = expand_secondary(&pairs[j].secondary, i, &cfg).unwrap();
                    assert_eq!(p.data, e[i][j], "primary ({i},{j})");
                    assert_eq!(s.data, e[i][j], "secondary ({i},{j})");
                }
            }
            assert_eq!(
                expand_primary(&pairs[0].primary, n, &cfg).unwrap_err(),
                CodecError::IndexOutOfRange { index: n, n }
            );
        }
    }

    #[test]
    fn secondary_recovery_from_every_pair_of_column_symbols() {
        let cfg = config(1, 2);
        let blob = random_blob(21, 12);
        let pairs = encode_blob(&blob, &cfg).unwrap();
        for j in 0..4 {
            let column: Vec<IntersectionSymbol> = (0..4)
                .map(|i| expand_primary(&pairs[i].primary, j, &cfg).unwrap())
                .collect();
            for subset in subsets(4, 2) {
                let picked: Vec<_> = subset.iter().map(|&i| column[i].clone()).collect();
                assert_eq!(recover_secondary(&picked, j, &cfg).unwrap(), pairs[j].secondary);
            }
            let one = vec![column[3].clone()];
            assert!(matches!(
                recover_secondary(&one, j, &cfg),
                Err(CodecError::Erasure(ErasureError::InsufficientSymbols { have: 1, need: 2 }))
            ));
        }
    }

    #[test]
    fn primary_recovery_thresholds() {
        let cfg = config(1, 2);
        let blob = random_blob(22, 12);
        let pairs = encode_blob(&blob, &cfg).unwrap();
        for i in 0..4 {
            let row: Vec<IntersectionSymbol> = (0..4)
                .map(|j| expand_secondary(&pairs[j].secondary, i, &cfg).unwrap())
                .collect();
            for subset in subsets(4, 3) {
                let picked: Vec<_> = subset.iter().map(|&j| row[j].clone()).collect();
                assert_eq!(recover_primary(&picked, i, &cfg).unwrap(), pairs[i].primary);
            }
            for subset in subsets(4, 2) {
                let picked: Vec<_> = subset.iter().map(|&j| row[j].clone()).collect();
                assert!(recover_primary(&picked, i, &cfg).is_err());
            }
        }
    }

    #[test]
    fn recovery_rejects_symbols_off_the_line() {
        let cfg = config(1, 2);
        let pairs = encode_blob(&random_blob(23, 12), &cfg).unwrap();
        let stray = expand_primary(&pairs[0].primary, 1, &cfg).unwrap();
        assert!(matches!(
            recover_secondary(&[stray], 2, &cfg),
            Err(CodecError::OffLine { .. })
        ));
    }

    #[test]
    fn decode_paths_round_trip() {
        let cfg = config(1, 2);
        let blob: Vec<u8> = (0u8..12).collect();
        let pairs = encode_blob(&blob, &cfg).unwrap();
        for subset in subsets(4, 2) {
            let p: Vec<_> = subset.iter().map(|&i| pairs[i].primary.clone()).collect();
            assert_eq!(decode_from_primary(&p, &cfg).unwrap().to_blob(12).unwrap(), blob);
        }
        for subset in subsets(4, 3) {
            let s: Vec<_> = subset.iter().map(|&i| pairs[i].secondary.clone()).collect();
            let m = decode_from_secondary(&s, &cfg).unwrap();
            assert_eq!(m.to_blob(12).unwrap(), blob);
            let again = encode_matrix(&m).unwrap();
            assert_eq!(again, pairs);
        }
        let too_few = vec![pairs[3].primary.clone()];
        assert!(decode_from_primary(&too_few, &cfg).is_err());
    }

    #[test]
    fn malformed_slivers_are_rejected() {
        let cfg = config(1, 2);
        assert!(matches!(
            PrimarySliver::new(0, vec![0; 4], &cfg),
            Err(CodecError::MalformedSliver { .. })
        ));
        assert!(matches!(
            SecondarySliver::new(4, vec![0; 4], &cfg),
            Err(CodecError::IndexOutOfRange { index: 4, n: 4 })
        ));
    }
}
