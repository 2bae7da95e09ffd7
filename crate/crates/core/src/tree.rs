//! Finite truncations of the entropy tree `A_e(T, ε)`.
//!
//! A strictly increasing sequence `s` of positive integers belongs to the
//! tree when `|s| <= 1`, or when some vector `x` of the unit ball separates
//! every pair of consecutive Cesàro means along `s`:
//! `‖A_{s_p} x - A_{s_{p+1}} x‖ > ε` for `1 <= p < |s|`.
//!
//! The unit ball is replaced by a finite [`ProbeSet`], so membership here is
//! a lower approximation of the true tree, and [`TreeTruncation::height`] is a
//! lower bound for the tree's ordinal height. Height convention: the root
//! alone has height 0; otherwise the height is the longest member's length.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::cesaro::ProbeTrajectories;
use crate::error::{Error, Result};
use crate::operator::OperatorSpec;
use crate::probe::ProbeSet;

/// Largest index bound `B` accepted for materialized truncations.
pub const MAX_INDEX_BOUND: usize = 512;
/// Default cap on the number of members in one truncation.
pub const DEFAULT_MAX_NODES: usize = 1_000_000;

/// Finite strictly increasing sequence of positive integers; empty is the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IncreasingSeq(Vec<usize>);

impl IncreasingSeq {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn new(items: Vec<usize>) -> Result<Self> {
        if items.first() == Some(&0) {
            return Err(Error::InvalidArgument("sequence items must be >= 1".into()));
        }
        if let Some(i) = items.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "sequence is not strictly increasing at position {}",
                i + 1
            )));
        }
        Ok(Self(items))
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// `s⌢j`, if that is still strictly increasing.
    pub fn child(&self, j: usize) -> Option<Self> {
        (j > self.last().unwrap_or(0)).then(|| {
            let mut v = self.0.clone();
            v.push(j);
            Self(v)
        })
    }

    /// The sequence without its last item (`None` for the root).
    pub fn parent(&self) -> Option<Self> {
        (!self.0.is_empty()).then(|| Self(self.0[..self.0.len() - 1].to_vec()))
    }

    /// All prefixes, root first, ending with `self`.
    pub fn prefixes(&self) -> impl Iterator<Item = IncreasingSeq> + '_ {
        (0..=self.0.len()).map(|l| Self(self.0[..l].to_vec()))
    }

    /// Comma-joined items, e.g. `"1,2,4"`; the root is `""`.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        if key.is_empty() {
            return Ok(Self::root());
        }
        let items = key
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad node key `{key}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Self::new(items)
    }
}

impl TryFrom<Vec<usize>> for IncreasingSeq {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<IncreasingSeq> for Vec<usize> {
    fn from(s: IncreasingSeq) -> Self {
        s.0
    }
}

impl fmt::Display for IncreasingSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.key())
    }
}

/// Lowest-index probe certifying a node, with its consecutive margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeWitness {
    pub probe: usize,
    pub margins: Vec<f64>,
}

/// Intensional membership: scans the trajectories in probe order.
///
/// Nodes of length at most one are members without a witness. Errors if an
/// item of `s` lies beyond a trajectory's horizon.
pub fn node_member(
    trajectories: &ProbeTrajectories,
    epsilon: f64,
    s: &IncreasingSeq,
) -> Result<(bool, Option<NodeWitness>)> {
    if s.len() <= 1 {
        return Ok((true, None));
    }
    let items = s.items();
    let top = *items.last().unwrap();
    'probes: for (i, t) in trajectories.iter().enumerate() {
        if top > t.horizon() {
            return Err(Error::HorizonExceeded {
                requested: top,
                available: t.horizon(),
            });
        }
        let mut margins = Vec::with_capacity(items.len() - 1);
        for w in items.windows(2) {
            let m = t.cesaro_diff(w[0], w[1])?;
            if !(m > epsilon) {
                continue 'probes;
            }
            margins.push(m);
        }
        return Ok((true, Some(NodeWitness { probe: i, margins })));
    }
    Ok((false, None))
}

/// Node `(k, s)` of the combined tree: `s` in the tree for `ε = 1/k`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CombinedNode {
    pub k: u64,
    pub s: IncreasingSeq,
}

pub fn combined_member(spec: &OperatorSpec, node: &CombinedNode, probes: &ProbeSet) -> Result<bool> {
    if node.k == 0 {
        return Err(Error::InvalidArgument("combined node needs k >= 1".into()));
    }
    if node.s.len() <= 1 {
        return Ok(true);
    }
    let horizon = node.s.last().unwrap_or(1);
    let trajectories = ProbeTrajectories::build(spec, probes, horizon)?;
    Ok(node_member(&trajectories, 1.0 / node.k as f64, &node.s)?.0)
}

/// Pairwise gaps `‖A_n x - A_m x‖`, `1 <= n < m <= B`, for every probe.
#[derive(Debug, Clone)]
pub struct MarginTable {
    bound: usize,
    probes: usize,
    probe_label: String,
    /// Per probe, `bound * bound` row-major; NaN where unavailable.
    data: Vec<f64>,
    /// Some trajectory diverged before reaching `bound`.
    truncated: bool,
}

impl MarginTable {
    pub fn build(spec: &OperatorSpec, probes: &ProbeSet, bound: usize) -> Result<Self> {
        if bound == 0 {
            return Err(Error::InvalidArgument("index bound must be at least 1".into()));
        }
        if bound > MAX_INDEX_BOUND {
            return Err(Error::InvalidArgument(format!(
                "index bound {bound} exceeds the budget of {MAX_INDEX_BOUND}"
            )));
        }
        let trajectories = ProbeTrajectories::build(spec, probes, bound)?;
        let mut data = vec![f64::NAN; probes.len() * bound * bound];
        let mut truncated = false;
        for (p, t) in trajectories.iter().enumerate() {
            let h = t.horizon();
            truncated |= h < bound;
            let block = &mut data[p * bound * bound..(p + 1) * bound * bound];
            for n in 1..=h {
                for m in n + 1..=h {
                    block[(n - 1) * bound + (m - 1)] = t.cesaro_diff(n, m)?;
                }
            }
        }
        Ok(Self {
            bound,
            probes: probes.len(),
            probe_label: probes.label().to_string(),
            data,
            truncated,
        })
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn probe_count(&self) -> usize {
        self.probes
    }

    pub fn probe_label(&self) -> &str {
        &self.probe_label
    }

    /// `‖A_n x_p - A_m x_p‖` for `1 <= n < m <= bound` (NaN past divergence).
    #[inline]
    pub fn margin(&self, probe: usize, n: usize, m: usize) -> f64 {
        debug_assert!(n < m && m <= self.bound);
        let b = self.bound;
        self.data[probe * b * b + (n - 1) * b + (m - 1)]
    }

    /// Margins of `probe` along consecutive pairs of `items`.
    pub fn chain_margins(&self, probe: usize, items: &[usize]) -> Vec<f64> {
        items.windows(2).map(|w| self.margin(probe, w[0], w[1])).collect()
    }

    /// Materializes the truncation with length `<= depth` and entries `<= self.bound()`.
    pub fn truncation(&self, epsilon: f64, depth: usize, max_nodes: usize) -> Result<TreeTruncation> {
        if !(epsilon > 0.0) {
            return Err(Error::NonPositiveTolerance(epsilon));
        }
        if depth == 0 {
            return Err(Error::InvalidArgument("depth cap must be at least 1".into()));
        }
        let b = self.bound;
        let mut tr = TreeTruncation {
            epsilon,
            depth_cap: depth,
            index_bound: b,
            probe_label: self.probe_label.clone(),
            members: BTreeSet::new(),
            witnesses: BTreeMap::new(),
            partial: self.truncated,
        };
        tr.members.insert(IncreasingSeq::root());
        let all: Vec<usize> = (0..self.probes).collect();
        // (node, probes certifying every margin of node)
        let mut stack: Vec<(IncreasingSeq, Vec<usize>)> = Vec::new();
        for j in (1..=b).rev() {
            stack.push((IncreasingSeq(vec![j]), all.clone()));
        }
        while let Some((node, valid)) = stack.pop() {
            if tr.members.len() >= max_nodes {
                tr.partial = true;
                break;
            }
            let last = node.last().unwrap_or(0);
            if node.len() >= 2 {
                let probe = valid[0];
                tr.witnesses.insert(
                    node.clone(),
                    NodeWitness {
                        probe,
                        margins: self.chain_margins(probe, node.items()),
                    },
                );
            }
            tr.members.insert(node.clone());
            if node.len() >= depth {
                continue;
            }
            for j in (last + 1..=b).rev() {
                let next: Vec<usize> = valid
                    .iter()
                    .copied()
                    .filter(|&p| self.margin(p, last, j) > epsilon)
                    .collect();
                if !next.is_empty() {
                    stack.push((node.child(j).unwrap(), next));
                }
            }
        }
        Ok(tr)
    }
}

/// Materialized finite part of `A_e(T, ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeTruncation {
    pub epsilon: f64,
    pub depth_cap: usize,
    pub index_bound: usize,
    pub probe_label: String,
    /// Canonical (lexicographic) order, root first.
    pub members: BTreeSet<IncreasingSeq>,
    pub witnesses: BTreeMap<IncreasingSeq, NodeWitness>,
    /// The node budget ran out or a trajectory diverged before the index bound.
    pub partial: bool,
}

impl TreeTruncation {
    pub fn contains(&self, s: &IncreasingSeq) -> bool {
        self.members.contains(s)
    }

    /// Longest member length: a lower bound for the tree height.
    pub fn height(&self) -> usize {
        self.members.iter().map(IncreasingSeq::len).max().unwrap_or(0)
    }

    /// Graphviz rendering, one node per member, edges from parent to child.
    pub fn to_dot(&self) -> String {
        let id = |s: &IncreasingSeq| {
            if s.is_empty() {
                "root".to_string()
            } else {
                s.key()
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "digraph entropy_tree {{");
        let _ = writeln!(
            out,
            "  label=\"A_e(T,eps) truncation: eps={}, D={}, B={}\";",
            self.epsilon, self.depth_cap, self.index_bound
        );
        for s in &self.members {
            let _ = writeln!(out, "  \"{}\";", id(s));
        }
        for s in &self.members {
            if let Some(p) = s.parent() {
                let _ = writeln!(out, "  \"{}\" -> \"{}\";", id(&p), id(s));
            }
        }
        out.push_str("}\n");
        out
    }
}

pub fn truncated_height(tr: &TreeTruncation) -> usize {
    tr.height()
}

/// Builds the truncation with the default node budget.
pub fn build_truncation(
    spec: &OperatorSpec,
    epsilon: f64,
    depth: usize,
    index_bound: usize,
    probes: &ProbeSet,
) -> Result<TreeTruncation> {
    MarginTable::build(spec, probes, index_bound)?.truncation(epsilon, depth, DEFAULT_MAX_NODES)
}

#[derive(Serialize, Deserialize)]
struct TruncationWire {
    epsilon: f64,
    depth_cap: usize,
    index_bound: usize,
    probe_label: String,
    members: Vec<IncreasingSeq>,
    witnesses: BTreeMap<String, NodeWitness>,
    partial: bool,
}

impl Serialize for TreeTruncation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TruncationWire {
            epsilon: self.epsilon,
            depth_cap: self.depth_cap,
            index_bound: self.index_bound,
            probe_label: self.probe_label.clone(),
            members: self.members.iter().cloned().collect(),
            witnesses: self.witnesses.iter().map(|(k, v)| (k.key(), v.clone())).collect(),
            partial: self.partial,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreeTruncation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = TruncationWire::deserialize(deserializer)?;
        let witnesses = w
            .witnesses
            .into_iter()
            .map(|(k, v)| IncreasingSeq::parse_key(&k).map(|s| (s, v)))
            .collect::<Result<_>>()
            .map_err(serde::de::Error::custom)?;
        Ok(Self {
            epsilon: w.epsilon,
            depth_cap: w.depth_cap,
            index_bound: w.index_bound,
            probe_label: w.probe_label,
            members: w.members.into_iter().collect(),
            witnesses,
            partial: w.partial,
        })
    }
}
