//! Finite probe sets standing in for a dense subset of the unit ball.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operator::{vec_norm, NormTag, OperatorSpec};

/// Default PRNG seed for random probes.
pub const DEFAULT_SEED: u64 = 0xE46_0D1C;
pub const DEFAULT_BASIS_PROBES: usize = 32;
pub const DEFAULT_RANDOM_PROBES: usize = 16;

const BALL_SLACK: f64 = 1e-12;

/// Ordered list of vectors in the closed unit ball of `(R^d, norm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    probes: Vec<Vec<f64>>,
    norm: NormTag,
    label: String,
}

impl ProbeSet {
    pub fn new(probes: Vec<Vec<f64>>, norm: NormTag, label: impl Into<String>) -> Result<Self> {
        if let Some(first) = probes.first() {
            let d = first.len();
            for (i, p) in probes.iter().enumerate() {
                if p.len() != d {
                    return Err(Error::InvalidProbe(format!(
                        "probe {i} has dim {}, expected {d}",
                        p.len()
                    )));
                }
                let n = vec_norm(p, norm)?;
                if n > 1.0 + BALL_SLACK {
                    return Err(Error::InvalidProbe(format!(
                        "probe {i} has norm {n} > 1"
                    )));
                }
            }
        }
        Ok(Self {
            probes,
            norm,
            label: label.into(),
        })
    }

    /// `e_0 .. e_{count-1}` in dimension `dim`.
    pub fn basis(dim: usize, count: usize, norm: NormTag) -> Self {
        let count = count.min(dim);
        let probes = (0..count)
            .map(|k| {
                let mut e = vec![0.0; dim];
                e[k] = 1.0;
                e
            })
            .collect();
        Self {
            probes,
            norm,
            label: format!("canonical-basis-0..{}", count.saturating_sub(1)),
        }
    }

    /// `count` Gaussian directions normalized onto the unit sphere of `norm`.
    pub fn seeded_random(dim: usize, count: usize, norm: NormTag, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes = (0..count)
            .map(|_| {
                let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = vec_norm(&x, norm).unwrap_or(0.0);
                if n > 0.0 {
                    x.iter_mut().for_each(|c| *c /= n);
                }
                // rounding can leave the norm a few ulps above 1
                while vec_norm(&x, norm).unwrap_or(0.0) > 1.0 {
                    x.iter_mut().for_each(|c| *c *= 1.0 - f64::EPSILON);
                }
                x
            })
            .collect();
        Self {
            probes,
            norm,
            label: format!("seeded-random-{count}(seed={seed})"),
        }
    }

    /// First `min(d, 32)` basis vectors followed by 16 seeded random unit vectors.
    pub fn default_for(spec: &OperatorSpec, seed: u64) -> Self {
        let d = spec.dim();
        Self::basis(d, DEFAULT_BASIS_PROBES, spec.norm())
            .concat(Self::seeded_random(d, DEFAULT_RANDOM_PROBES, spec.norm(), seed))
    }

    /// Appends `other`'s probes after this set's.
    pub fn concat(mut self, other: ProbeSet) -> Self {
        self.label = format!("{}+{}", self.label, other.label);
        self.probes.extend(other.probes);
        self
    }

    /// The first `n` probes, keeping order.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.probes.len());
        Self {
            probes: self.probes[..n].to_vec(),
            norm: self.norm,
            label: format!("{}[..{n}]", self.label),
        }
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.probes.get(i).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.probes.iter().map(Vec::as_slice)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn norm(&self) -> NormTag {
        self.norm
    }

    /// Checks that every probe matches `spec`'s dimension.
    pub fn check_against(&self, spec: &OperatorSpec) -> Result<()> {
        match self.probes.iter().find(|p| p.len() != spec.dim()) {
            Some(p) => Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: p.len(),
            }),
            None => Ok(()),
        }
    }
}
