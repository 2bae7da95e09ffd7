//! Cesàro means `A_n = (1/n) Σ_{k<n} T^k`, built incrementally.
//!
//! Everything here advances by the recurrence
//! `A_{n+1} = (n A_n + T^n) / (n + 1)`, one application of `T` per step.
//! The same stepper drives vector trajectories `A_n x` and column-major
//! dense matrices `A_n`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::{dist, vec_norm_unchecked, NormTag, OperatorSpec, DENSE_CAP};
use crate::probe::ProbeSet;

/// Powers whose norm exceeds this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e300;

/// Streaming state at index `n`: `mean = A_n (·)`, `power = T^n (·)`.
/// Matrix steppers hold column-major `d * d` buffers.
pub(crate) struct Stepper<'a> {
    spec: &'a OperatorSpec,
    n: usize,
    mean: Vec<f64>,
    power: Vec<f64>,
    scratch: Vec<f64>,
    matrix: bool,
    diverged: bool,
}

impl<'a> Stepper<'a> {
    pub(crate) fn vector(spec: &'a OperatorSpec, x: &[f64]) -> Self {
        let d = spec.dim();
        let mut power = vec![0.0; d];
        spec.apply_into(x, &mut power);
        let mut s = Self {
            spec,
            n: 1,
            mean: x.to_vec(),
            power,
            scratch: vec![0.0; d],
            matrix: false,
            diverged: false,
        };
        s.check_divergence();
        s
    }

    pub(crate) fn matrix(spec: &'a OperatorSpec) -> Self {
        let d = spec.dim();
        let mut id = vec![0.0; d * d];
        for i in 0..d {
            id[i * d + i] = 1.0;
        }
        let power = spec.to_dense_columns();
        let mut s = Self {
            spec,
            n: 1,
            mean: id,
            power,
            scratch: vec![0.0; d * d],
            matrix: true,
            diverged: false,
        };
        s.check_divergence();
        s
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(crate) fn power(&self) -> &[f64] {
        &self.power
    }

    /// True once `T^n` has left the representable range; no further steps are taken.
    pub(crate) fn diverged(&self) -> bool {
        self.diverged
    }

    fn check_divergence(&mut self) {
        let big = if self.matrix {
            self.power.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT))
        } else {
            !(vec_norm_unchecked(&self.power, self.spec.norm()) <= DIVERGENCE_LIMIT)
        };
        self.diverged = big;
    }

    /// Advances to `n + 1`. Returns false (and does nothing) after divergence.
    pub(crate) fn step(&mut self) -> bool {
        if self.diverged {
            return false;
        }
        let n = self.n as f64;
        for (a, p) in self.mean.iter_mut().zip(&self.power) {
            *a = (n * *a + p) / (n + 1.0);
        }
        if self.matrix {
            self.spec.apply_columns_into(&self.power, &mut self.scratch);
        } else {
            self.spec.apply_into(&self.power, &mut self.scratch);
        }
        std::mem::swap(&mut self.power, &mut self.scratch);
        self.n += 1;
        self.check_divergence();
        true
    }
}

/// Cached `A_1 x, ..., A_N x` for one probe `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CesaroTrajectory {
    dim: usize,
    norm: NormTag,
    probe: Vec<f64>,
    /// Flat `horizon * dim`; block `n - 1` is `A_n x`.
    values: Vec<f64>,
    /// `T^horizon x`.
    power_cursor: Vec<f64>,
    /// `‖T^k x‖` for `k = 0..=horizon`.
    power_norms: Vec<f64>,
    diverged_at: Option<usize>,
}

impl CesaroTrajectory {
    /// Trajectory of horizon 1 (`A_1 x = x`).
    pub fn new(spec: &OperatorSpec, probe: &[f64]) -> Result<Self> {
        if probe.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: probe.len(),
            });
        }
        let mut cursor = vec![0.0; spec.dim()];
        spec.apply_into(probe, &mut cursor);
        let cursor_norm = vec_norm_unchecked(&cursor, spec.norm());
        Ok(Self {
            dim: spec.dim(),
            norm: spec.norm(),
            probe: probe.to_vec(),
            values: probe.to_vec(),
            power_norms: vec![vec_norm_unchecked(probe, spec.norm()), cursor_norm],
            diverged_at: (!(cursor_norm <= DIVERGENCE_LIMIT)).then_some(1),
            power_cursor: cursor,
        })
    }

    /// Builds `A_1 x ..= A_horizon x` in one go.
    pub fn build(spec: &OperatorSpec, probe: &[f64], horizon: usize) -> Result<Self> {
        let mut t = Self::new(spec, probe)?;
        t.extend(spec, horizon)?;
        Ok(t)
    }

    /// Extends to `new_horizon` with one application of `T` per step.
    ///
    /// Stops early, recording [`diverged_at`](Self::diverged_at), if
    /// `‖T^n x‖` exceeds [`DIVERGENCE_LIMIT`].
    pub fn extend(&mut self, spec: &OperatorSpec, new_horizon: usize) -> Result<()> {
        if spec.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: self.dim,
            });
        }
        if new_horizon < self.horizon() {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink trajectory from {} to {new_horizon}",
                self.horizon()
            )));
        }
        let d = self.dim;
        self.values.reserve((new_horizon - self.horizon()) * d);
        let mut next = vec![0.0; d];
        while self.horizon() < new_horizon && self.diverged_at.is_none() {
            let n = self.horizon();
            let nf = n as f64;
            let last = &self.values[(n - 1) * d..n * d];
            let mean: Vec<f64> = last
                .iter()
                .zip(&self.power_cursor)
                .map(|(a, p)| (nf * a + p) / (nf + 1.0))
                .collect();
            self.values.extend_from_slice(&mean);
            spec.apply_into(&self.power_cursor, &mut next);
            std::mem::swap(&mut self.power_cursor, &mut next);
            let pn = vec_norm_unchecked(&self.power_cursor, self.norm);
            self.power_norms.push(pn);
            if !(pn <= DIVERGENCE_LIMIT) {
                self.diverged_at = Some(n + 1);
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn probe(&self) -> &[f64] {
        &self.probe
    }

    /// `A_n x` for `1 <= n <= horizon`.
    pub fn mean(&self, n: usize) -> Result<&[f64]> {
        if n == 0 || n > self.horizon() {
            return Err(Error::HorizonExceeded {
                requested: n,
                available: self.horizon(),
            });
        }
        Ok(&self.values[(n - 1) * self.dim..n * self.dim])
    }

    /// `T^horizon x`.
    pub fn power_cursor(&self) -> &[f64] {
        &self.power_cursor
    }

    /// `‖T^k x‖` for `k = 0..=horizon`.
    pub fn power_norms(&self) -> &[f64] {
        &self.power_norms
    }

    /// The `n` with `‖T^n x‖ > DIVERGENCE_LIMIT`, if that happened.
    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    /// `‖A_n x - A_m x‖` in the ambient norm.
    pub fn cesaro_diff(&self, n: usize, m: usize) -> Result<f64> {
        Ok(dist(self.mean(n)?, self.mean(m)?, self.norm))
    }
}

/// Consuming form of [`CesaroTrajectory::extend`].
pub fn cesaro_extend(
    mut traj: CesaroTrajectory,
    spec: &OperatorSpec,
    new_horizon: usize,
) -> Result<CesaroTrajectory> {
    traj.extend(spec, new_horizon)?;
    Ok(traj)
}

/// One trajectory per probe, all to the same horizon, in probe order.
#[derive(Debug, Clone)]
pub struct ProbeTrajectories {
    trajectories: Vec<CesaroTrajectory>,
    horizon: usize,
}

impl ProbeTrajectories {
    pub fn build(spec: &OperatorSpec, probes: &ProbeSet, horizon: usize) -> Result<Self> {
        probes.check_against(spec)?;
        let trajectories = probes
            .iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| CesaroTrajectory::build(spec, x, horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trajectories,
            horizon,
        })
    }

    /// Requested horizon; individual trajectories may be shorter after divergence.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&CesaroTrajectory> {
        self.trajectories.get(i)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &CesaroTrajectory> {
        self.trajectories.iter()
    }
}

/// Dense `A_1 ..= A_N` (requires `d <= DENSE_CAP`).
#[derive(Debug, Clone)]
pub struct CesaroMatrixSeq {
    matrices: Vec<DMatrix<f64>>,
    diverged_at: Option<usize>,
}

impl CesaroMatrixSeq {
    pub fn build(spec: &OperatorSpec, horizon: usize) -> Result<Self> {
        let d = spec.dim();
        if d > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                what: "dense Cesàro matrices",
                dim: d,
                cap: DENSE_CAP,
            });
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let mut stepper = Stepper::matrix(spec);
        let mut matrices = Vec::with_capacity(horizon);
        matrices.push(DMatrix::from_column_slice(d, d, stepper.mean()));
        let mut diverged_at = None;
        while matrices.len() < horizon {
            if !stepper.step() {
                diverged_at = Some(stepper.n());
                break;
            }
            matrices.push(DMatrix::from_column_slice(d, d, stepper.mean()));
        }
        if stepper.diverged() && diverged_at.is_none() {
            diverged_at = Some(stepper.n());
        }
        Ok(Self {
            matrices,
            diverged_at,
        })
    }

    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }

    /// `A_n` for `1 <= n <= horizon`.
    pub fn get(&self, n: usize) -> Result<&DMatrix<f64>> {
        n.checked_sub(1)
            .and_then(|i| self.matrices.get(i))
            .ok_or(Error::HorizonExceeded {
                requested: n,
                available: self.matrices.len(),
            })
    }

    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }
}

/// Convenience: dense `A_1 ..= A_N`.
pub fn cesaro_matrices(spec: &OperatorSpec, horizon: usize) -> Result<CesaroMatrixSeq> {
    CesaroMatrixSeq::build(spec, horizon)
}
