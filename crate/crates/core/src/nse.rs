//! NSE certificates: finite, independently checkable evidence that the
//! Cesàro means fail to be Cauchy at a fixed scale `ε`.
//!
//! A certificate of depth `m` holds indices `j_1 < ... < j_{m+1}` and, for
//! each `q = 1..=m`, a unit-ball vector `x_q` with
//! `‖A_{j_p} x_q - A_{j_{p+1}} x_q‖ > ε` for every `p <= q`. The checker
//! recomputes all margins from the embedded operator and trusts nothing else.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cesaro::CesaroTrajectory;
use crate::error::{Error, Result};
use crate::operator::{vec_norm, OperatorSpec};
use crate::probe::ProbeSet;
use crate::tree::{MarginTable, DEFAULT_MAX_NODES};

pub const CERTIFICATE_VERSION: u32 = 1;
pub const DEFAULT_BEAM_WIDTH: usize = 8;
/// Slack on the unit-ball condition for witnesses.
pub const BALL_TOLERANCE: f64 = 1e-12;
/// Relative slack between recorded and recomputed margins.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseCertificate {
    pub version: u32,
    pub operator: OperatorSpec,
    pub epsilon: f64,
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    pub witnesses: Vec<Vec<f64>>,
    /// `margins[q - 1][p - 1]` for `1 <= p <= q <= depth`.
    pub margins: Vec<Vec<f64>>,
    pub depth: usize,
    pub probe_label: String,
}

/// First condition a certificate violates.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Malformed(String),
    NotIncreasing { position: usize },
    OutsideBall { q: usize, norm: f64 },
    MarginMismatch { q: usize, p: usize, recorded: f64, recomputed: f64 },
    MarginNotAboveEpsilon { q: usize, p: usize, margin: f64, epsilon: f64 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Malformed(why) => write!(f, "malformed certificate: {why}"),
            Rejection::NotIncreasing { position } => {
                write!(f, "J not strictly increasing at position {position}")
            }
            Rejection::OutsideBall { q, norm } => {
                write!(f, "witness x_{q} outside unit ball (norm {norm})")
            }
            Rejection::MarginMismatch { q, p, recorded, recomputed } => write!(
                f,
                "recorded margin at (q,p)=({q},{p}) is {recorded}, recomputed {recomputed}"
            ),
            Rejection::MarginNotAboveEpsilon { q, p, margin, epsilon } => {
                write!(f, "margin ≤ ε at (q,p)=({q},{p}): {margin} ≤ {epsilon}")
            }
        }
    }
}

impl std::error::Error for Rejection {}

/// Re-verifies every claim of `cert` from its embedded operator.
pub fn check_certificate(cert: &NseCertificate) -> std::result::Result<(), Rejection> {
    let malformed = |s: String| Err(Rejection::Malformed(s));
    if cert.version != CERTIFICATE_VERSION {
        return malformed(format!("unsupported version {}", cert.version));
    }
    let m = cert.depth;
    if m == 0 {
        return malformed("depth must be at least 1".into());
    }
    if !(cert.epsilon.is_finite() && cert.epsilon > 0.0) {
        return malformed(format!("epsilon must be positive, got {}", cert.epsilon));
    }
    if cert.j.len() != m + 1 {
        return malformed(format!("J has {} entries, depth {m} needs {}", cert.j.len(), m + 1));
    }
    if cert.witnesses.len() != m {
        return malformed(format!("{} witnesses for depth {m}", cert.witnesses.len()));
    }
    if cert.margins.len() != m {
        return malformed(format!("{} margin rows for depth {m}", cert.margins.len()));
    }
    if let Some(q) = (1..=m).find(|&q| cert.margins[q - 1].len() != q) {
        return malformed(format!("margin row {q} has {} entries", cert.margins[q - 1].len()));
    }
    if cert.j[0] == 0 {
        return Err(Rejection::NotIncreasing { position: 0 });
    }
    if let Some(i) = cert.j.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Rejection::NotIncreasing { position: i + 1 });
    }
    let spec = &cert.operator;
    for (i, x) in cert.witnesses.iter().enumerate() {
        if x.len() != spec.dim() {
            return malformed(format!(
                "witness x_{} has dim {}, operator has {}",
                i + 1,
                x.len(),
                spec.dim()
            ));
        }
        let norm = vec_norm(x, spec.norm())
            .map_err(|_| Rejection::Malformed(format!("witness x_{} is not finite", i + 1)))?;
        if norm > 1.0 + BALL_TOLERANCE {
            return Err(Rejection::OutsideBall { q: i + 1, norm });
        }
    }
    for q in 1..=m {
        let x = &cert.witnesses[q - 1];
        let traj = CesaroTrajectory::build(spec, x, cert.j[q])
            .map_err(|e| Rejection::Malformed(e.to_string()))?;
        if traj.horizon() < cert.j[q] {
            return malformed(format!("trajectory of x_{q} diverges before n = {}", cert.j[q]));
        }
        for p in 1..=q {
            let recomputed = traj
                .cesaro_diff(cert.j[p - 1], cert.j[p])
                .map_err(|e| Rejection::Malformed(e.to_string()))?;
            let recorded = cert.margins[q - 1][p - 1];
            if !((recorded - recomputed).abs() <= MARGIN_TOLERANCE * recomputed.abs().max(1.0)) {
                return Err(Rejection::MarginMismatch { q, p, recorded, recomputed });
            }
            if !(recomputed > cert.epsilon) {
                return Err(Rejection::MarginNotAboveEpsilon {
                    q,
                    p,
                    margin: recomputed,
                    epsilon: cert.epsilon,
                });
            }
        }
    }
    Ok(())
}

/// Parses and checks a certificate document.
pub fn check_certificate_json(text: &str) -> std::result::Result<NseCertificate, Rejection> {
    let cert: NseCertificate =
        serde_json::from_str(text).map_err(|e| Rejection::Malformed(e.to_string()))?;
    check_certificate(&cert)?;
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Strategy {
    /// `J = (1, 2, 4, 8, ...)`.
    Doubling,
    BeamSearch { width: usize },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Doubling => f.write_str("doubling"),
            Strategy::BeamSearch { width } => write!(f, "beam:{width}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown strategy `{s}` (doubling, beam, beam:W)"));
        match s {
            "doubling" => Ok(Strategy::Doubling),
            "beam" => Ok(Strategy::BeamSearch { width: DEFAULT_BEAM_WIDTH }),
            _ => {
                let w: usize = s.strip_prefix("beam:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if w == 0 {
                    return Err(bad());
                }
                Ok(Strategy::BeamSearch { width: w })
            }
        }
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Deepest certificate a search found; `complete` when it reached the target depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub certificate: NseCertificate,
    pub complete: bool,
}

/// Chain under construction: `probes[q - 1]` certifies the first `q` gaps.
#[derive(Debug, Clone)]
struct Chain {
    j: Vec<usize>,
    probes: Vec<usize>,
    min_margin: f64,
}

/// Probe with the largest smallest margin along `j`, if that margin exceeds
/// `epsilon`. Near-ties (relative `1e-12`) go to the lowest index.
fn best_certifying(table: &MarginTable, epsilon: f64, j: &[usize]) -> Option<(usize, f64)> {
    let mins: Vec<f64> = (0..table.probe_count())
        .map(|p| {
            j.windows(2)
                .map(|w| table.margin(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let best = mins.iter().copied().filter(|m| *m > epsilon).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let cut = best - 1e-12 * best.abs();
    mins.iter()
        .position(|m| *m > epsilon && *m >= cut)
        .map(|p| (p, mins[p]))
}

/// Searches for a chain of depth `target_depth` with entries `<= index_bound`.
///
/// The witness at depth `q` is the probe whose smallest margin along
/// `j_1..j_{q+1}` is largest; candidates are scanned in probe order.
/// Returns `None` when not even depth 1 is reachable; otherwise the deepest
/// certificate found.
pub fn search_nse(
    spec: &OperatorSpec,
    epsilon: f64,
    target_depth: usize,
    strategy: Strategy,
    probes: &ProbeSet,
    index_bound: usize,
) -> Result<Option<SearchResult>> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveTolerance(epsilon));
    }
    if target_depth == 0 {
        return Err(Error::InvalidArgument("target depth must be at least 1".into()));
    }
    probes.check_against(spec)?;
    if index_bound < 2 || probes.is_empty() {
        return Ok(None);
    }
    let table = MarginTable::build(spec, probes, index_bound)?;
    let chain = match strategy {
        Strategy::Doubling => doubling(&table, epsilon, target_depth),
        Strategy::BeamSearch { width } => {
            if width == 0 {
                return Err(Error::InvalidArgument("beam width must be at least 1".into()));
            }
            beam(&table, epsilon, target_depth, width)
        }
    };
    Ok(chain.map(|c| {
        let depth = c.probes.len();
        let certificate = NseCertificate {
            version: CERTIFICATE_VERSION,
            operator: spec.clone(),
            epsilon,
            witnesses: c.probes.iter().map(|&p| probes.get(p).unwrap().to_vec()).collect(),
            margins: (1..=depth)
                .map(|q| table.chain_margins(c.probes[q - 1], &c.j[..=q]))
                .collect(),
            j: c.j,
            depth,
            probe_label: probes.label().to_string(),
        };
        SearchResult {
            certificate,
            complete: depth == target_depth,
        }
    }))
}

fn doubling(table: &MarginTable, epsilon: f64, target: usize) -> Option<Chain> {
    let mut chain = Chain {
        j: vec![1],
        probes: Vec::new(),
        min_margin: f64::INFINITY,
    };
    while chain.probes.len() < target {
        let next = 2 * chain.j.last().unwrap();
        if next > table.bound() {
            break;
        }
        let mut j = chain.j.clone();
        j.push(next);
        let Some((p, min)) = best_certifying(table, epsilon, &j) else {
            break;
        };
        chain.min_margin = chain.min_margin.min(min);
        chain.j = j;
        chain.probes.push(p);
    }
    (!chain.probes.is_empty()).then_some(chain)
}

fn beam(table: &MarginTable, epsilon: f64, target: usize, width: usize) -> Option<Chain> {
    let b = table.bound();
    let mut frontier: Vec<Chain> = (1..=b)
        .map(|j| Chain {
            j: vec![j],
            probes: Vec::new(),
            min_margin: f64::INFINITY,
        })
        .collect();
    let reach = reach_bounds(table, epsilon);
    let mut best = None;
    for depth in 0..target {
        let mut next: Vec<Chain> = frontier
            .par_iter()
            .flat_map_iter(|c| {
                let last = *c.j.last().unwrap();
                (last + 1..=b).filter_map(move |n| {
                    let mut j = c.j.clone();
                    j.push(n);
                    let (p, min) = best_certifying(table, epsilon, &j)?;
                    let mut probes = c.probes.clone();
                    probes.push(p);
                    Some(Chain {
                        j,
                        probes,
                        min_margin: c.min_margin.min(min),
                    })
                })
            })
            .collect();
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| b.min_margin.total_cmp(&a.min_margin).then_with(|| a.j.cmp(&b.j)));
        best = Some(next[0].clone());
        if depth + 1 == target {
            break;
        }
        // wide margins tend to come from late indices with no room left, so
        // the beam keeps the best prefixes that can still reach the target
        let keep: Vec<Chain> = next
            .iter()
            .filter(|c| c.j.len() - 1 + reach[*c.j.last().unwrap()] >= target)
            .take(width)
            .cloned()
            .collect();
        frontier = if keep.is_empty() {
            next.truncate(width);
            next
        } else {
            keep
        };
    }
    best
}

/// `reach[n]`: longest chain of steps from `n` when each pair only needs
/// some certifying probe of its own. An upper bound on what a single
/// witness per depth can achieve.
fn reach_bounds(table: &MarginTable, epsilon: f64) -> Vec<usize> {
    let b = table.bound();
    let mut reach = vec![0usize; b + 1];
    for n in (1..b).rev() {
        reach[n] = (n + 1..=b)
            .filter(|&m| (0..table.probe_count()).any(|p| table.margin(p, n, m) > epsilon))
            .map(|m| reach[m] + 1)
            .max()
            .unwrap_or(0);
    }
    reach
}

/// Height of one truncation on the `ε = 1/k` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub k: u64,
    pub epsilon: f64,
    pub height: usize,
    pub members: usize,
    pub partial: bool,
}

/// `η̂ = max_k height(A_{1/k})`, a lower bound for the entropy rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub construct: String,
    pub entries: Vec<RankEntry>,
    pub eta_hat: usize,
    pub depth_cap: usize,
    pub index_bound: usize,
    pub probe_label: String,
    pub partial: bool,
}

pub fn rank_estimate(
    spec: &OperatorSpec,
    ks: &[u64],
    depth: usize,
    index_bound: usize,
    probes: &ProbeSet,
) -> Result<RankEstimate> {
    rank_estimate_with_budget(spec, ks, depth, index_bound, probes, DEFAULT_MAX_NODES)
}

pub fn rank_estimate_with_budget(
    spec: &OperatorSpec,
    ks: &[u64],
    depth: usize,
    index_bound: usize,
    probes: &ProbeSet,
    max_nodes: usize,
) -> Result<RankEstimate> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("epsilon grid needs k >= 1 values".into()));
    }
    probes.check_against(spec)?;
    let table = MarginTable::build(spec, probes, index_bound)?;
    let entries = ks
        .par_iter()
        .map(|&k| {
            let epsilon = 1.0 / k as f64;
            let tr = table.truncation(epsilon, depth, max_nodes)?;
            Ok(RankEntry {
                k,
                epsilon,
                height: tr.height(),
                members: tr.members.len(),
                partial: tr.partial,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankEstimate {
        construct: "A_e(T,eps) truncation".into(),
        eta_hat: entries.iter().map(|e| e.height).max().unwrap_or(0),
        partial: entries.iter().any(|e| e.partial),
        entries,
        depth_cap: depth,
        index_bound,
        probe_label: probes.label().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::gallery;
    use crate::operator::NormTag;
    use crate::tree::{build_truncation, IncreasingSeq};

    fn shift_cert() -> NseCertificate {
        let s = gallery("left_shift_l1(256)").unwrap();
        let p = ProbeSet::basis(256, 32, NormTag::L1);
        search_nse(&s, 0.5, 4, Strategy::Doubling, &p, 32)
            .unwrap()
            .unwrap()
            .certificate
    }

    #[test]
    fn doubling_on_the_shift() {
        let cert = shift_cert();
        assert_eq!(cert.j, vec![1, 2, 4, 8, 16]);
        assert_eq!(cert.depth, 4);
        // x_q = e_{j_{q+1} - 1}, the first basis vector with every margin 1
        for (q, x) in cert.witnesses.iter().enumerate() {
            assert_eq!(x[cert.j[q + 1] - 1], 1.0);
        }
        for row in &cert.margins {
            assert!(row.iter().all(|m| (m - 1.0).abs() < 1e-9));
        }
        assert_eq!(check_certificate(&cert), Ok(()));
    }

    #[test]
    fn tampering_is_rejected_with_the_right_reason() {
        let cert = shift_cert();

        let mut c = cert.clone();
        c.epsilon = 2.0;
        assert!(matches!(
            check_certificate(&c),
            Err(Rejection::MarginNotAboveEpsilon { q: 1, p: 1, .. })
        ));

        let mut c = cert.clone();
        c.j.swap(1, 2);
        assert_eq!(check_certificate(&c), Err(Rejection::NotIncreasing { position: 2 }));

        let mut c = cert.clone();
        c.witnesses[0].iter_mut().for_each(|v| *v *= 1.5);
        assert!(matches!(check_certificate(&c), Err(Rejection::OutsideBall { q: 1, .. })));

        let mut c = cert.clone();
        c.margins[2][1] += 1e-3;
        assert!(matches!(
            check_certificate(&c),
            Err(Rejection::MarginMismatch { q: 3, p: 2, .. })
        ));

        let mut c = cert;
        c.margins.pop();
        assert!(matches!(check_certificate(&c), Err(Rejection::Malformed(_))));
    }

    #[test]
    fn json_round_trip_and_field_order() {
        let cert = shift_cert();
        let json = serde_json::to_string(&cert).unwrap();
        assert!(json.starts_with("{\"version\":1,\"operator\":{\"kind\":\"weighted_left_shift\""));
        let order = ["\"epsilon\"", "\"J\"", "\"witnesses\"", "\"margins\"", "\"depth\"", "\"probe_label\""];
        let pos: Vec<usize> = order.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let back = check_certificate_json(&json).unwrap();
        assert_eq!(back, cert);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert!(matches!(check_certificate_json("{"), Err(Rejection::Malformed(_))));
    }

    #[test]
    fn doubling_finds_nothing_for_a_contraction_at_large_scale() {
        let s = gallery("scalar(0.5)").unwrap();
        let p = ProbeSet::default_for(&s, 0);
        assert_eq!(search_nse(&s, 0.9, 1, Strategy::Doubling, &p, 32).unwrap(), None);
        let z = gallery("identity(4)").unwrap();
        let p = ProbeSet::default_for(&z, 0);
        let beam = Strategy::BeamSearch { width: DEFAULT_BEAM_WIDTH };
        assert_eq!(search_nse(&z, 0.01, 3, beam, &p, 16).unwrap(), None);
    }

    #[test]
    fn beam_search_reaches_the_target_and_is_checkable() {
        let s = gallery("left_shift_l1(64)").unwrap();
        let p = ProbeSet::default_for(&s, 0);
        let r = search_nse(&s, 0.5, 3, Strategy::BeamSearch { width: 4 }, &p, 32)
            .unwrap()
            .unwrap();
        assert!(r.complete);
        assert_eq!(r.certificate.depth, 3);
        assert_eq!(check_certificate(&r.certificate), Ok(()));
        let again = search_nse(&s, 0.5, 3, Strategy::BeamSearch { width: 4 }, &p, 32).unwrap().unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn partial_result_when_index_bound_is_short() {
        let s = gallery("left_shift_l1(64)").unwrap();
        let p = ProbeSet::default_for(&s, 0);
        let r = search_nse(&s, 0.5, 6, Strategy::Doubling, &p, 16).unwrap().unwrap();
        assert!(!r.complete);
        assert_eq!(r.certificate.j, vec![1, 2, 4, 8, 16]);
        assert_eq!(check_certificate(&r.certificate), Ok(()));
    }

    #[test]
    fn certified_chain_is_a_tree_member() {
        let s = gallery("left_shift_l1(64)").unwrap();
        let p = ProbeSet::default_for(&s, 0);
        let cert = search_nse(&s, 0.5, 3, Strategy::BeamSearch { width: 8 }, &p, 16)
            .unwrap()
            .unwrap()
            .certificate;
        let tr = build_truncation(&s, 0.5, 4, 16, &p).unwrap();
        assert!(tr.contains(&IncreasingSeq::new(cert.j.clone()).unwrap()));
    }

    #[test]
    fn rank_estimates() {
        let id = gallery("identity(4)").unwrap();
        let r = rank_estimate(&id, &[1, 2, 3, 4], 4, 16, &ProbeSet::default_for(&id, 0)).unwrap();
        assert_eq!(r.eta_hat, 1);
        assert!(!r.partial);

        let s = gallery("left_shift_l1(64)").unwrap();
        let r = rank_estimate(&s, &[2], 5, 32, &ProbeSet::default_for(&s, 0)).unwrap();
        assert_eq!(r.eta_hat, 5);
        assert_eq!(r.entries[0].epsilon, 0.5);

        assert!(rank_estimate(&s, &[], 3, 8, &ProbeSet::default_for(&s, 0)).is_err());
        assert!(rank_estimate(&s, &[0, 2], 3, 8, &ProbeSet::default_for(&s, 0)).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("doubling".parse::<Strategy>().unwrap(), Strategy::Doubling);
        assert_eq!("beam".parse::<Strategy>().unwrap(), Strategy::BeamSearch { width: 8 });
        assert_eq!("beam:3".parse::<Strategy>().unwrap(), Strategy::BeamSearch { width: 3 });
        assert!("beam:0".parse::<Strategy>().is_err());
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
