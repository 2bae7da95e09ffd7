//! End-to-end analysis reports, atomic persistence and the results cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{Classification, Classifier, Verdict};
use crate::error::{Error, Result};
use crate::nse::{rank_estimate_with_budget, search_nse, NseCertificate, RankEstimate, Strategy};
use crate::operator::{OperatorKind, OperatorSpec};
use crate::probe::{ProbeSet, DEFAULT_BASIS_PROBES, DEFAULT_RANDOM_PROBES, DEFAULT_SEED};
use crate::tree::DEFAULT_MAX_NODES;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "ERGORANK_CACHE_DIR";
pub const NSE_CONSTRUCT: &str = "NSE certificate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub horizon: usize,
    pub tolerance: f64,
    pub bound_cap: f64,
    pub depth: usize,
    pub index_bound: usize,
    pub eps_grid: Vec<u64>,
    pub seed: u64,
    pub strategy: Strategy,
    pub basis_probes: usize,
    pub random_probes: usize,
    pub max_nodes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            tolerance: 0.05,
            bound_cap: 100.0,
            depth: 5,
            index_bound: 32,
            eps_grid: (1..=8).collect(),
            seed: DEFAULT_SEED,
            strategy: Strategy::Doubling,
            basis_probes: DEFAULT_BASIS_PROBES,
            random_probes: DEFAULT_RANDOM_PROBES,
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

impl AnalysisConfig {
    pub fn probes_for(&self, spec: &OperatorSpec) -> ProbeSet {
        ProbeSet::basis(spec.dim(), self.basis_probes, spec.norm()).concat(ProbeSet::seeded_random(
            spec.dim(),
            self.random_probes,
            spec.norm(),
            self.seed,
        ))
    }
}

/// Second reading of uniform ergodicity for finite sections of shifts.
///
/// A `d`-dimensional shift section is nilpotent, so norm-level tests past
/// `d / 2` describe the section rather than the operator on the full
/// sequence space. The primary verdict stops at `trusted_horizon`; this one
/// runs to the configured horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRegime {
    pub trusted_horizon: usize,
    pub uniformly_ergodic: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseEntry {
    pub k: u64,
    pub epsilon: f64,
    pub construct: String,
    /// `complete`, `partial` or `none`.
    pub status: String,
    pub depth: usize,
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    pub certificate_sha256: Option<String>,
    pub certificate_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub version: String,
    pub operator: OperatorSpec,
    pub operator_sha256: String,
    pub dim: usize,
    pub config: AnalysisConfig,
    pub probe_label: String,
    pub verdicts: Classification,
    pub finite_section: Option<SectionRegime>,
    pub rank: RankEstimate,
    pub nse: Vec<NseEntry>,
    pub partial: bool,
    /// Wall-clock milliseconds per stage; excluded from stability checks.
    pub timings_ms: BTreeMap<String, u64>,
}

/// A report together with the certificates it references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub report: AnalysisReport,
    /// `(k, certificate)` for every grid entry with a certificate.
    pub certificates: Vec<(u64, NseCertificate)>,
}

fn ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs all four classifiers, the rank estimate and one NSE search per grid `ε`.
pub fn analyze(spec: &OperatorSpec, config: &AnalysisConfig) -> Result<Analysis> {
    if config.eps_grid.is_empty() || config.eps_grid.contains(&0) {
        return Err(Error::InvalidArgument("epsilon grid needs k >= 1 values".into()));
    }
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let probes = config.probes_for(spec);

    let t = Instant::now();
    let classifier = Classifier::new(spec, &probes)
        .horizon(config.horizon)
        .tolerance(config.tolerance)
        .bound_cap(config.bound_cap);
    let mut verdicts = classifier.classify()?;
    let mut finite_section = None;
    if spec.kind() == OperatorKind::WeightedLeftShift {
        let trusted = config.horizon.min((spec.dim() / 2).max(1));
        let primary = classifier
            .clone()
            .horizon(trusted)
            .uniformly_ergodic_given(&verdicts.ergodic)?;
        let full = std::mem::replace(&mut verdicts.uniformly_ergodic, primary);
        finite_section = Some(SectionRegime {
            trusted_horizon: trusted,
            uniformly_ergodic: full,
        });
    }
    timings.insert("classify".to_string(), ms(t));

    let t = Instant::now();
    let rank = rank_estimate_with_budget(
        spec,
        &config.eps_grid,
        config.depth,
        config.index_bound,
        &probes,
        config.max_nodes,
    )?;
    timings.insert("rank".to_string(), ms(t));

    let t = Instant::now();
    let mut nse = Vec::with_capacity(config.eps_grid.len());
    let mut certificates = Vec::new();
    for &k in &config.eps_grid {
        let epsilon = 1.0 / k as f64;
        let found = search_nse(spec, epsilon, config.depth, config.strategy, &probes, config.index_bound)?;
        let mut entry = NseEntry {
            k,
            epsilon,
            construct: NSE_CONSTRUCT.to_string(),
            status: "none".into(),
            depth: 0,
            j: Vec::new(),
            certificate_sha256: None,
            certificate_file: None,
        };
        if let Some(r) = found {
            entry.status = if r.complete { "complete" } else { "partial" }.into();
            entry.depth = r.certificate.depth;
            entry.j = r.certificate.j.clone();
            entry.certificate_sha256 = Some(sha256_hex(&certificate_bytes(&r.certificate)?));
            certificates.push((k, r.certificate));
        }
        nse.push(entry);
    }
    timings.insert("nse".to_string(), ms(t));
    timings.insert("total".to_string(), ms(start));

    Ok(Analysis {
        report: AnalysisReport {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            operator: spec.clone(),
            operator_sha256: spec.content_hash(),
            dim: spec.dim(),
            config: config.clone(),
            probe_label: probes.label().to_string(),
            verdicts,
            finite_section,
            partial: rank.partial,
            rank,
            nse,
            timings_ms: timings,
        },
        certificates,
    })
}

/// Canonical certificate file contents (pretty JSON plus newline).
pub fn certificate_bytes(cert: &NseCertificate) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(cert)?;
    v.push(b'\n');
    Ok(v)
}

pub fn report_bytes(report: &AnalysisReport) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(report)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `report.json` with grid entry `k` becomes `report.cert-k{k}.json`.
pub fn certificate_file_name(report_path: &Path, k: u64) -> String {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    format!("{stem}.cert-k{k}.json")
}

impl Analysis {
    /// Writes the certificates next to `out`, then the report referencing them.
    pub fn write(&mut self, out: &Path) -> Result<()> {
        let dir = out.parent().unwrap_or(Path::new(""));
        for (k, cert) in &self.certificates {
            let name = certificate_file_name(out, *k);
            write_atomic(&dir.join(&name), &certificate_bytes(cert)?)?;
            if let Some(e) = self.report.nse.iter_mut().find(|e| e.k == *k) {
                e.certificate_file = Some(name);
            }
        }
        write_atomic(out, &report_bytes(&self.report)?)
    }
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ergorank-cache"))
}

/// Key over the operator hash, the config and the tool version.
pub fn cache_key(spec: &OperatorSpec, config: &AnalysisConfig) -> Result<String> {
    let config_json = serde_json::to_vec(config)?;
    let mut h = Sha256::new();
    h.update(spec.content_hash().as_bytes());
    h.update([0]);
    h.update(&config_json);
    h.update([0]);
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Looks up a cached analysis; unreadable or mismatched entries count as misses.
pub fn cache_load(dir: &Path, spec: &OperatorSpec, config: &AnalysisConfig) -> Option<Analysis> {
    let key = cache_key(spec, config).ok()?;
    let text = fs::read(dir.join(format!("{key}.json"))).ok()?;
    let a: Analysis = serde_json::from_slice(&text).ok()?;
    (a.report.operator == *spec && a.report.config == *config).then_some(a)
}

pub fn cache_store(dir: &Path, spec: &OperatorSpec, config: &AnalysisConfig, analysis: &Analysis) -> Result<()> {
    let key = cache_key(spec, config)?;
    write_atomic(&dir.join(format!("{key}.json")), &serde_json::to_vec(analysis)?)
}

/// [`analyze`] behind the cache; a hit only replaces the timings.
pub fn analyze_cached(spec: &OperatorSpec, config: &AnalysisConfig, dir: Option<&Path>) -> Result<Analysis> {
    let start = Instant::now();
    if let Some(dir) = dir {
        if let Some(mut hit) = cache_load(dir, spec, config) {
            hit.report.timings_ms = BTreeMap::from([
                ("cache_load".to_string(), ms(start)),
                ("total".to_string(), ms(start)),
            ]);
            return Ok(hit);
        }
    }
    let analysis = analyze(spec, config)?;
    if let Some(dir) = dir {
        // the cache is an optimization; a failed store is not an analysis failure
        let _ = cache_store(dir, spec, config, &analysis);
    }
    Ok(analysis)
}
