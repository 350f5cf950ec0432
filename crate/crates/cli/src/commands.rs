// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use redstuff::codec::{decode_from_primary, decode_from_secondary, encode_blob, Dimension, Sliver, SliverPair};
use redstuff::commitments::{commit_sliver, make_metadata, BlobMetadata};
use redstuff::erasure::EncodingConfig;
use redstuff::fixtures::verify_dir;
use redstuff::report::{claims_report, ClaimsOptions, REPORT_SCHEMA};
use redstuff::simnet::{bundled, ScenarioConfig, SimReport, Simulation};
use serde_json::json;

use crate::{DimensionArg, Failure, Faults, ReportFormat, EXIT_OK, EXIT_VIOLATION};

impl Faults {
    fn resolve(&self) -> Result<usize, Failure> {
        match (self.f, self.shards) {
            (Some(f), _) => Ok(f),
            (None, Some(n)) if n > 0 && (n - 1) % 3 == 0 => Ok((n - 1) / 3),
            (None, Some(n)) => Err(Failure::config(format!("{n} shards is not of the form 3f+1"))),
            (None, None) => Ok(1),
        }
    }
}

pub fn pair_file_name(index: usize) -> String {
    format!("pair-{index:03}.json")
}

pub fn encode(
    file: &Path,
    faults: &Faults,
    symbol_size: Option<usize>,
    out: &Path,
    format: ReportFormat,
) -> Result<u8, Failure> {
    let blob = fs::read(file).map_err(|e| Failure::config(format!("{}: {e}", file.display())))?;
    if blob.is_empty() {
        return Err(Failure::config(format!("{} is empty", file.display())));
    }
    let f = faults.resolve()?;
    let config = match symbol_size {
        Some(size) => EncodingConfig::new(f, size),
        None => EncodingConfig::for_blob(f, blob.len()),
    }
    .map_err(|e| Failure::config(e.to_string()))?;
    let pairs = encode_blob(&blob, &config).map_err(|e| Failure::config(e.to_string()))?;
    let metadata = make_metadata(&pairs, blob.len(), &config, 0).map_err(|e| Failure::runtime(e.to_string()))?;

    fs::create_dir_all(out)?;
    fs::write(out.join("metadata.bin"), metadata.to_canonical_bytes())?;
    let mut files = vec!["metadata.bin".to_string()];
    for pair in &pairs {
        let name = pair_file_name(pair.index());
        let text = serde_json::to_string_pretty(pair).map_err(|e| Failure::runtime(e.to_string()))?;
        fs::write(out.join(&name), text + "\n")?;
        files.push(name);
    }
    let blob_id = metadata.blob_id().to_string();
    match format {
        ReportFormat::Json => println!(
            "{}",
            json!({
                "schema": REPORT_SCHEMA,
                "blob_id": blob_id,
                "f": f,
                "n_shards": config.n_shards(),
                "symbol_size": config.symbol_size(),
                "blob_len": blob.len(),
                "files": files,
            })
        ),
        ReportFormat::Summary => {
            println!("blob_id {blob_id}");
            println!(
                "{} bytes, f={f}, {} shards, symbol size {}, written to {}",
                blob.len(),
                config.n_shards(),
                config.symbol_size(),
                out.display()
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn decode(pairs: &[PathBuf], metadata: &Path, dimension: DimensionArg, out: &Path) -> Result<u8, Failure> {
    let bytes = fs::read(metadata).map_err(|e| Failure::config(format!("{}: {e}", metadata.display())))?;
    let meta = BlobMetadata::from_canonical_bytes(&bytes).map_err(|e| Failure::config(format!("metadata: {e}")))?;
    let config = meta.config().map_err(|e| Failure::config(e.to_string()))?;
    let dimension = match dimension {
        DimensionArg::Primary => Dimension::Primary,
        DimensionArg::Secondary => Dimension::Secondary,
    };

    let mut slivers: BTreeMap<usize, Sliver> = BTreeMap::new();
    for path in pairs {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let pair: SliverPair =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let sliver: Sliver = match dimension {
            Dimension::Primary => pair.primary.into(),
            Dimension::Secondary => pair.secondary.into(),
        };
        let index = sliver.index();
        let matches = sliver.check(&config).is_ok()
            && meta.commitment(dimension, index).is_some_and(|expected| {
                commit_sliver(&sliver, &config).is_ok_and(|c| c.root == expected.root)
            });
        if !matches {
            return Err(Failure::bottom(format!(
                "⊥: {dimension:?} sliver {index} in {} does not match its commitment",
                path.display()
            )));
        }
        slivers.insert(index, sliver);
    }

    let need = match dimension {
        Dimension::Primary => config.primary_threshold(),
        Dimension::Secondary => config.secondary_threshold(),
    };
    if slivers.len() < need {
        return Err(Failure::config(format!(
            "need {need} distinct {dimension:?} slivers (f+1 primary, 2f+1 secondary), got {}",
            slivers.len()
        )));
    }
    let matrix = match dimension {
        Dimension::Primary => {
            let s: Vec<_> = slivers
                .into_values()
                .filter_map(|s| match s {
                    Sliver::Primary(p) => Some(p),
                    Sliver::Secondary(_) => None,
                })
                .collect();
            decode_from_primary(&s, &config)
        }
        Dimension::Secondary => {
            let s: Vec<_> = slivers
                .into_values()
                .filter_map(|s| match s {
                    Sliver::Secondary(p) => Some(p),
                    Sliver::Primary(_) => None,
                })
                .collect();
            decode_from_secondary(&s, &config)
        }
    }
    .map_err(|e| Failure::bottom(format!("⊥: {e}")))?;
    let blob = matrix
        .to_blob(meta.blob_len as usize)
        .map_err(|e| Failure::bottom(format!("⊥: {e}")))?;
    let consistent = encode_blob(&blob, &config)
        .ok()
        .and_then(|p| make_metadata(&p, blob.len(), &config, meta.epoch_written).ok())
        .is_some_and(|m| m.blob_id() == meta.blob_id());
    if !consistent {
        return Err(Failure::bottom(
            "⊥(inconsistent): the decoded blob does not re-encode to the blob id",
        ));
    }
    fs::write(out, &blob)?;
    println!("decoded {} bytes to {}", blob.len(), out.display());
    Ok(EXIT_OK)
}

fn load_scenario(scenario: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(scenario);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        return ScenarioConfig::from_toml(&text).map_err(|e| Failure::config(format!("{scenario}: {e}")));
    }
    match bundled(scenario) {
        Some(parsed) => parsed.map_err(|e| Failure::config(e.to_string())),
        None => Err(Failure::config(format!(
            "{scenario}: no such file or bundled scenario"
        ))),
    }
}

fn print_sim(report: &SimReport, format: ReportFormat) {
    match format {
        ReportFormat::Json => println!("{}", json!({"schema": REPORT_SCHEMA, "report": report})),
        ReportFormat::Summary => {
            let m = &report.metrics;
            println!(
                "{} seed={} steps={} transcript={} {}",
                report.name,
                report.seed,
                report.steps,
                report.transcript_hash,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            println!(
                "  writes={} reads={} epoch={} replication={:.4} (formula {:.4}) chain txs={}",
                m.writes.len(),
                m.reads.len(),
                m.final_epoch,
                m.storage.replication_factor,
                m.storage.formula,
                m.chain_transactions
            );
            for w in &m.writes {
                println!(
                    "  write {} poa={:?} epoch={:?} restarts={}",
                    w.label, w.poa_step, w.certified_epoch, w.restarts
                );
            }
            for r in &m.reads {
                println!("  read {} -> {} at {}", r.label, r.outcome, r.end_step);
            }
            for c in &m.challenges {
                println!(
                    "  challenge epoch {} certified {:?} ended {:?}",
                    c.epoch, c.certified, c.end_step
                );
            }
            for v in &report.violations {
                println!("  violation {}: {v:?}", v.property());
            }
        }
    }
}

pub fn simulate(
    scenario: &str,
    seed: Option<u64>,
    runs: u64,
    out: Option<&Path>,
    format: ReportFormat,
) -> Result<u8, Failure> {
    let base = load_scenario(scenario)?;
    let first = seed.unwrap_or(base.seed);
    let mut failed = 0;
    for i in 0..runs.max(1) {
        let mut config = base.clone();
        config.seed = first.wrapping_add(i);
        let mut sim = Simulation::with_transcript(config, out.is_some()).map_err(|e| Failure::config(e.to_string()))?;
        let report = sim.run();
        if let Some(out) = out {
            let dir = if runs > 1 {
                out.join(format!("seed-{}", report.seed))
            } else {
                out.to_path_buf()
            };
            fs::create_dir_all(&dir)?;
            let mut lines = sim.transcript().lines().unwrap_or_default().join("\n");
            lines.push('\n');
            fs::write(dir.join("transcript.jsonl"), lines)?;
            let metrics = serde_json::to_string_pretty(&json!({"schema": REPORT_SCHEMA, "report": report}))
                .map_err(|e| Failure::runtime(e.to_string()))?;
            fs::write(dir.join("metrics.json"), metrics + "\n")?;
        }
        print_sim(&report, format);
        if !report.passed() {
            failed += 1;
        }
    }
    if runs > 1 && format == ReportFormat::Summary {
        println!("{} of {} runs passed", runs - failed, runs);
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn verify_fixtures(dir: &Path) -> Result<u8, Failure> {
    let report = verify_dir(dir).map_err(Failure::config)?;
    for failure in &report.failures {
        println!("FAIL {failure}");
    }
    println!(
        "checked {} vectors in {}: {} failed",
        report.checked,
        dir.display(),
        report.failures.len()
    );
    Ok(if report.passed() { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn report(
    format: ReportFormat,
    blob_size: usize,
    recovery_f: Vec<usize>,
    no_recovery: bool,
    seed: u64,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    if blob_size == 0 {
        return Err(Failure::config("blob size must be positive"));
    }
    let options = ClaimsOptions {
        overhead_blob_len: blob_size,
        recovery_f: if no_recovery { Vec::new() } else { recovery_f },
        recovery_blob_len: blob_size,
        seed,
        ..ClaimsOptions::default()
    };
    let claims = claims_report(&options).map_err(|e| Failure::config(e.to_string()))?;
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(&claims).map_err(|e| Failure::runtime(e.to_string()))? + "\n",
        ReportFormat::Summary => claims.to_summary(),
    };
    if let Some(out) = out {
        fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(EXIT_OK)
}
