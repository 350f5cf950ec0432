// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Numeric claim checks: storage overhead, recovery cost, challenge pass
//! probabilities and the full-replication comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::challenge::{log10_pass_probability, pass_probability};
use crate::codec::encode_blob;
use crate::erasure::{EncodingConfig, ErasureError};
use crate::simnet::{run_scenario, ConfigError, DelayTargets, OpKind, ScenarioConfig, WorkloadOp};
use crate::strawman::full_read_recovery;

/// Version of the JSON layout of [`ClaimsReport`] and the simulation report.
pub const REPORT_SCHEMA: u32 = 1;

/// `n/(f+1) + n/(2f+1)` with `n = 3f+1`.
pub fn overhead_formula(f: usize) -> f64 {
    let n = (3 * f + 1) as f64;
    n / (f as f64 + 1.0) + n / (2.0 * f as f64 + 1.0)
}

/// Sliver bytes over all shards divided by the blob length.
pub fn measured_overhead(config: &EncodingConfig, blob: &[u8]) -> Result<f64, ErasureError> {
    let pairs = encode_blob(blob, config).map_err(|e| ErasureError::InvalidConfig(e.to_string()))?;
    let stored: usize = pairs.iter().map(|p| p.byte_len()).sum();
    Ok(stored as f64 / blob.len() as f64)
}

fn filler(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i.wrapping_mul(131) >> 3) as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub f: usize,
    pub n: usize,
    pub formula: f64,
    /// Overhead of a blob that fills the source matrix exactly.
    pub measured_full: f64,
    pub blob_len: usize,
    pub measured: f64,
    /// Largest overhead padding can cause for `blob_len`.
    pub slack_bound: f64,
    pub within_slack: bool,
}

pub fn overhead_row(f: usize, blob_len: usize) -> Result<OverheadRow, ErasureError> {
    let formula = overhead_formula(f);
    let exact = EncodingConfig::new(f, 2)?;
    let measured_full = measured_overhead(&exact, &filler(exact.capacity()))?;
    let config = EncodingConfig::for_blob(f, blob_len)?;
    let measured = measured_overhead(&config, &filler(blob_len))?;
    let slack_bound = formula * config.capacity() as f64 / blob_len as f64;
    Ok(OverheadRow {
        f,
        n: 3 * f + 1,
        formula,
        measured_full,
        blob_len,
        measured,
        slack_bound,
        within_slack: measured >= formula - 1e-9 && measured <= slack_bound + 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityLine {
    pub p: f64,
    pub k: u64,
    pub computed: f64,
    pub log10: f64,
    /// Bound the sample size is meant to reach.
    pub claim_bound: f64,
    pub claim_holds: bool,
    /// Value the check was given to expect, if any.
    pub expected: Option<f64>,
    /// Whether `computed` equals `expected` to two significant figures.
    pub matches_expected: Option<bool>,
    pub note: Option<String>,
}

fn same_sig_figs(a: f64, b: f64, digits: usize) -> bool {
    format!("{:.*e}", digits - 1, a) == format!("{:.*e}", digits - 1, b)
}

pub fn probability_line(p: f64, k: u64, expected: Option<f64>) -> ProbabilityLine {
    let computed = pass_probability(p, k);
    let claim_bound = 1e-30;
    let claim_holds = computed < claim_bound;
    let matches_expected = expected.map(|e| same_sig_figs(computed, e, 2));
    let mut notes = Vec::new();
    if matches_expected == Some(false) {
        notes.push(format!(
            "computed {computed:.4e} differs from the expected {:.1e}",
            expected.unwrap()
        ));
    }
    if !claim_holds {
        notes.push(format!(
            "computed {computed:.4e} is not below the claimed {claim_bound:.0e}"
        ));
    }
    ProbabilityLine {
        p,
        k,
        computed,
        log10: log10_pass_probability(p, k),
        claim_bound,
        claim_holds,
        expected,
        matches_expected,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

pub fn probability_lines() -> Vec<ProbabilityLine> {
    vec![
        probability_line(0.99, 7000, None),
        probability_line(0.9, 640, Some(4.7e-30)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationLine {
    pub base: u32,
    pub copies: i32,
    pub computed: f64,
    pub reference: f64,
    pub matches_3_sig_figs: bool,
}

/// Chance that every one of `copies` replicas is on a faulty node when a
/// third of the nodes are faulty: `3^-copies`.
pub fn replication_line() -> ReplicationLine {
    let computed = 3f64.powi(-25);
    let reference = 1.18e-12;
    ReplicationLine {
        base: 3,
        copies: 25,
        computed,
        reference,
        matches_3_sig_figs: same_sig_figs(computed, reference, 3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryLine {
    pub f: usize,
    pub n: usize,
    pub blob_len: usize,
    pub node: u32,
    /// Recovery-symbol response bytes the node downloaded.
    pub symbol_bytes: u64,
    pub metadata_bytes: u64,
    /// `4|B|/n`.
    pub bound: f64,
    pub within_bound: bool,
    /// Bytes the one-dimensional baseline downloads for the same shard.
    pub strawman_bytes: u64,
    pub strawman_at_least_blob: bool,
    /// `symbol_bytes / |B|`.
    pub ratio_to_blob: f64,
    /// `symbol_bytes / strawman_bytes`.
    pub ratio_to_strawman: f64,
    pub scenario_passed: bool,
}

/// One write whose writer never reaches the last node, which then recovers
/// its pair from the others.
pub fn recovery_scenario(f: usize, blob_len: usize, seed: u64) -> ScenarioConfig {
    let mut config = ScenarioConfig::from_toml(&format!("f = {f}\nseed = {seed}"))
        .expect("minimal scenario parses");
    config.name = format!("recovery-f{f}");
    let last = (3 * f) as u32;
    config.adversary.delay = Some(DelayTargets {
        nodes: vec![last],
        steps: 5000,
        from_step: 0,
        until_step: None,
        clients_only: true,
    });
    let mut write = WorkloadOp::new(OpKind::Write);
    write.label = Some("a".into());
    write.size = Some(blob_len);
    let mut read = WorkloadOp::new(OpKind::Read);
    read.blob = Some("a".into());
    read.after = Some("a".into());
    read.delay = 400;
    read.client = 1;
    config.workload = vec![write, read];
    config
}

pub fn measure_recovery(f: usize, blob_len: usize, seed: u64) -> Result<RecoveryLine, ConfigError> {
    let report = run_scenario(recovery_scenario(f, blob_len, seed))?;
    let node = (3 * f) as u32;
    let n = 3 * f + 1;
    let (symbol_bytes, metadata_bytes) = report
        .metrics
        .recovery_of(node)
        .fold((0, 0), |(s, m), r| (s + r.symbol_bytes, m + r.metadata_bytes));
    let bound = 4.0 * blob_len as f64 / n as f64;
    let strawman_bytes = full_read_recovery(&filler(blob_len), f, node as usize)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?
        .bytes_downloaded;
    Ok(RecoveryLine {
        f,
        n,
        blob_len,
        node,
        symbol_bytes,
        metadata_bytes,
        bound,
        within_bound: symbol_bytes > 0 && (symbol_bytes as f64) <= bound,
        strawman_bytes,
        strawman_at_least_blob: strawman_bytes >= blob_len as u64,
        ratio_to_blob: symbol_bytes as f64 / blob_len as f64,
        ratio_to_strawman: symbol_bytes as f64 / strawman_bytes as f64,
        scenario_passed: report.passed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsReport {
    pub schema: u32,
    pub overhead: Vec<OverheadRow>,
    pub pass_probabilities: Vec<ProbabilityLine>,
    pub replication: ReplicationLine,
    pub recovery: Vec<RecoveryLine>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimsOptions {
    pub overhead_f: Vec<usize>,
    pub overhead_blob_len: usize,
    /// Fault levels to run the recovery scenario at; empty skips it.
    pub recovery_f: Vec<usize>,
    pub recovery_blob_len: usize,
    pub seed: u64,
}

impl Default for ClaimsOptions {
    fn default() -> Self {
        Self {
            overhead_f: vec![0, 1, 2, 3, 5, 10, 33],
            overhead_blob_len: 1 << 20,
            recovery_f: vec![1, 2, 3],
            recovery_blob_len: 1 << 20,
            seed: 1,
        }
    }
}

pub fn claims_report(options: &ClaimsOptions) -> Result<ClaimsReport, ConfigError> {
    let overhead = options
        .overhead_f
        .iter()
        .map(|&f| overhead_row(f, options.overhead_blob_len))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let recovery = options
        .recovery_f
        .iter()
        .map(|&f| measure_recovery(f, options.recovery_blob_len, options.seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClaimsReport {
        schema: REPORT_SCHEMA,
        overhead,
        pass_probabilities: probability_lines(),
        replication: replication_line(),
        recovery,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISMATCH"
    }
}

impl ClaimsReport {
    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "storage overhead (sliver bytes / blob bytes)").unwrap();
        for r in &self.overhead {
            writeln!(
                s,
                "  f={:<3} n={:<4} formula={:.4} full={:.4} |B|={} measured={:.4} slack<={:.4} {}",
                r.f,
                r.n,
                r.formula,
                r.measured_full,
                r.blob_len,
                r.measured,
                r.slack_bound,
                verdict(r.within_slack)
            )
            .unwrap();
        }
        writeln!(s, "recovery download per shard").unwrap();
        for r in &self.recovery {
            writeln!(
                s,
                "  f={} |B|={} symbols={} metadata={} bound={:.0} {} baseline={} ratio={:.4} vs baseline={:.4}",
                r.f,
                r.blob_len,
                r.symbol_bytes,
                r.metadata_bytes,
                r.bound,
                verdict(r.within_bound && r.strawman_at_least_blob),
                r.strawman_bytes,
                r.ratio_to_blob,
                r.ratio_to_strawman
            )
            .unwrap();
        }
        writeln!(s, "challenge pass probability p^k").unwrap();
        for l in &self.pass_probabilities {
            write!(
                s,
                "  p={} k={} computed={:.4e} (log10 {:.3}) below {:.0e}: {}",
                l.p, l.k, l.computed, l.log10, l.claim_bound, l.claim_holds
            )
            .unwrap();
            if let (Some(e), Some(m)) = (l.expected, l.matches_expected) {
                write!(s, " expected≈{e:.1e}: {}", verdict(m)).unwrap();
            }
            writeln!(s).unwrap();
            if let Some(note) = &l.note {
                writeln!(s, "    note: {note}").unwrap();
            }
        }
        let r = &self.replication;
        writeln!(
            s,
            "full replication: {}^-{} = {:.3e} reference {:.2e} {}",
            r.base,
            r.copies,
            r.computed,
            r.reference,
            verdict(r.matches_3_sig_figs)
        )
        .unwrap();
        s
    }
}
