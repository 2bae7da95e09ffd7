//! Operators on finite sections of sequence spaces.
//!
//! An [`OperatorSpec`] is a declarative description of a real linear map on
//! `R^d` together with the ambient vector norm it is measured in. Four
//! storage kinds are supported; all of them apply in `O(nnz)`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probe::ProbeSet;

/// Largest dimension for which dense (exact) computations are allowed.
pub const DENSE_CAP: usize = 512;

/// Ambient vector norm of an operator's coordinate space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormTag {
    L1,
    L2,
    Linf,
}

impl NormTag {
    pub fn as_str(self) -> &'static str {
        match self {
            NormTag::L1 => "l1",
            NormTag::L2 => "l2",
            NormTag::Linf => "linf",
        }
    }
}

impl fmt::Display for NormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NormTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormTag::L1),
            "l2" => Ok(NormTag::L2),
            "linf" => Ok(NormTag::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    DenseMatrix,
    WeightedLeftShift,
    Diagonal,
    SparseTriplets,
}

#[derive(Debug, Clone, PartialEq)]
enum Coefficients {
    /// Row-major `d * d` entries.
    Dense(Vec<f64>),
    /// `weights[k - 1]` is the weight `w_k` in `S e_k = w_k e_{k-1}`.
    Shift(Vec<f64>),
    Diagonal(Vec<f64>),
    /// Sorted by (row, col), no duplicates.
    Sparse(Vec<(usize, usize, f64)>),
}

/// A validated real operator on `R^dim` with a declared ambient norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SpecWire", try_from = "SpecWire")]
pub struct OperatorSpec {
    dim: usize,
    norm: NormTag,
    coeffs: Coefficients,
}

fn ensure_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidSpec("coefficients must be finite".into()))
    }
}

fn ensure_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidSpec("dim must be at least 1".into()));
    }
    Ok(())
}

impl OperatorSpec {
    /// Dense matrix from rows.
    pub fn dense(rows: Vec<Vec<f64>>, norm: NormTag) -> Result<Self> {
        let dim = rows.len();
        ensure_dim(dim)?;
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidSpec(format!(
                "row {bad} has {} entries, expected {dim}",
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        ensure_finite(flat.iter().copied())?;
        Ok(Self {
            dim,
            norm,
            coeffs: Coefficients::Dense(flat),
        })
    }

    /// Weighted left shift `S e_k = w_k e_{k-1}`, `S e_0 = 0`; `weights` holds `w_1..w_{d-1}`.
    pub fn weighted_left_shift(dim: usize, weights: Vec<f64>, norm: NormTag) -> Result<Self> {
        ensure_dim(dim)?;
        if weights.len() != dim - 1 {
            return Err(Error::InvalidSpec(format!(
                "weighted left shift of dim {dim} needs {} weights, got {}",
                dim - 1,
                weights.len()
            )));
        }
        ensure_finite(weights.iter().copied())?;
        Ok(Self {
            dim,
            norm,
            coeffs: Coefficients::Shift(weights),
        })
    }

    pub fn diagonal(entries: Vec<f64>, norm: NormTag) -> Result<Self> {
        let dim = entries.len();
        ensure_dim(dim)?;
        ensure_finite(entries.iter().copied())?;
        Ok(Self {
            dim,
            norm,
            coeffs: Coefficients::Diagonal(entries),
        })
    }

    pub fn sparse(dim: usize, mut triplets: Vec<(usize, usize, f64)>, norm: NormTag) -> Result<Self> {
        ensure_dim(dim)?;
        ensure_finite(triplets.iter().map(|t| t.2))?;
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return Err(Error::InvalidSpec(format!(
                "triplet index ({r},{c}) out of range for dim {dim}"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidSpec(format!(
                "duplicate triplet at ({},{})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self {
            dim,
            norm,
            coeffs: Coefficients::Sparse(triplets),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> NormTag {
        self.norm
    }

    pub fn kind(&self) -> OperatorKind {
        match self.coeffs {
            Coefficients::Dense(_) => OperatorKind::DenseMatrix,
            Coefficients::Shift(_) => OperatorKind::WeightedLeftShift,
            Coefficients::Diagonal(_) => OperatorKind::Diagonal,
            Coefficients::Sparse(_) => OperatorKind::SparseTriplets,
        }
    }

    /// Same operator, different ambient norm.
    pub fn with_norm(mut self, norm: NormTag) -> Self {
        self.norm = norm;
        self
    }

    /// `T x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Writes `T x` into `out`. Both slices must have length `dim`.
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(out.len(), d);
        match &self.coeffs {
            Coefficients::Dense(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &a[i * d..(i + 1) * d];
                    *o = row.iter().zip(x).map(|(a, x)| a * x).sum();
                }
            }
            Coefficients::Shift(w) => {
                for i in 0..d - 1 {
                    out[i] = w[i] * x[i + 1];
                }
                out[d - 1] = 0.0;
            }
            Coefficients::Diagonal(diag) => {
                for ((o, a), x) in out.iter_mut().zip(diag).zip(x) {
                    *o = a * x;
                }
            }
            Coefficients::Sparse(t) => {
                out.fill(0.0);
                for &(r, c, v) in t {
                    out[r] += v * x[c];
                }
            }
        }
    }

    /// `T M` for a column-major `d * d` matrix `m`.
    pub(crate) fn apply_columns_into(&self, m: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (src, dst) in m.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.apply_into(src, dst);
        }
    }

    /// Column-major dense representation.
    pub fn to_dense_columns(&self) -> Vec<f64> {
        let d = self.dim;
        let mut cols = vec![0.0; d * d];
        match &self.coeffs {
            Coefficients::Dense(a) => {
                for i in 0..d {
                    for j in 0..d {
                        cols[j * d + i] = a[i * d + j];
                    }
                }
            }
            Coefficients::Shift(w) => {
                for k in 1..d {
                    cols[k * d + (k - 1)] = w[k - 1];
                }
            }
            Coefficients::Diagonal(diag) => {
                for (i, v) in diag.iter().enumerate() {
                    cols[i * d + i] = *v;
                }
            }
            Coefficients::Sparse(t) => {
                for &(r, c, v) in t {
                    cols[c * d + r] = v;
                }
            }
        }
        cols
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.to_dense_columns())
    }

    /// Operator norm induced by the ambient norm.
    pub fn operator_norm(&self, mode: NormMode<'_>) -> Result<NormEstimate> {
        match mode {
            NormMode::Exact => {
                if self.dim > DENSE_CAP {
                    return Err(Error::DenseCapExceeded {
                        what: "exact operator norm",
                        dim: self.dim,
                        cap: DENSE_CAP,
                    });
                }
                let value = matrix_norm(&self.to_dense_columns(), self.dim, self.norm);
                Ok(NormEstimate { value, exact: true })
            }
            NormMode::ProbeLowerBound(probes) => {
                if probes.is_empty() {
                    return Err(Error::EmptyProbeSet);
                }
                let mut best = 0.0f64;
                let mut tx = vec![0.0; self.dim];
                for x in probes.iter() {
                    if x.len() != self.dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.dim,
                            found: x.len(),
                        });
                    }
                    self.apply_into(x, &mut tx);
                    let ratio = vec_norm(&tx, self.norm)? / vec_norm(x, self.norm)?.max(1e-300);
                    best = best.max(ratio);
                }
                Ok(NormEstimate {
                    value: best,
                    exact: false,
                })
            }
        }
    }

    /// Hex SHA-256 of the canonical compact JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serialization is infallible");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    Exact,
    ProbeLowerBound(&'a ProbeSet),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub exact: bool,
}

/// Norm of a coordinate vector. Errors on NaN/Inf input.
pub fn vec_norm(x: &[f64], norm: NormTag) -> Result<f64> {
    let v = vec_norm_unchecked(x, norm);
    if v.is_nan() || x.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("vector norm"));
    }
    Ok(v)
}

#[inline]
pub(crate) fn vec_norm_unchecked(x: &[f64], norm: NormTag) -> f64 {
    match norm {
        NormTag::L1 => x.iter().map(|c| c.abs()).sum(),
        NormTag::L2 => l2(x.iter().copied()),
        NormTag::Linf => x.iter().fold(0.0, |m, c| m.max(c.abs())),
    }
}

/// Euclidean norm that rescales when the plain sum of squares over- or underflows.
#[inline]
fn l2(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let sq: f64 = it.clone().map(|c| c * c).sum();
    if sq.is_finite() && sq >= f64::MIN_POSITIVE {
        return sq.sqrt();
    }
    let scale = it.clone().fold(0.0, |m: f64, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return if scale.is_nan() { f64::NAN } else { scale };
    }
    scale * it.map(|c| (c / scale) * (c / scale)).sum::<f64>().sqrt()
}

/// `‖a - b‖` without allocating.
#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64], norm: NormTag) -> f64 {
    let diffs = a.iter().zip(b).map(|(a, b)| a - b);
    match norm {
        NormTag::L1 => diffs.map(f64::abs).sum(),
        NormTag::L2 => l2(diffs),
        NormTag::Linf => diffs.fold(0.0, |m, c| m.max(c.abs())),
    }
}

/// Induced operator norm of a column-major `d * d` matrix.
pub fn matrix_norm(cols: &[f64], d: usize, norm: NormTag) -> f64 {
    debug_assert_eq!(cols.len(), d * d);
    match norm {
        NormTag::L1 => cols
            .chunks_exact(d)
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormTag::Linf => {
            let mut rows = vec![0.0; d];
            for col in cols.chunks_exact(d) {
                for (r, v) in rows.iter_mut().zip(col) {
                    *r += v.abs();
                }
            }
            rows.into_iter().fold(0.0, f64::max)
        }
        NormTag::L2 => {
            if d == 1 {
                return cols[0].abs();
            }
            DMatrix::from_column_slice(d, d, cols)
                .singular_values()
                .iter()
                .copied()
                .fold(0.0, f64::max)
        }
    }
}

/// `‖A - B‖` for column-major matrices.
pub(crate) fn matrix_dist(a: &[f64], b: &[f64], d: usize, norm: NormTag) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(a, b)| a - b).collect();
    matrix_norm(&diff, d, norm)
}

#[derive(Serialize, Deserialize)]
struct SpecWire {
    kind: OperatorKind,
    dim: usize,
    norm: NormTag,
    entries: serde_json::Value,
}

impl From<OperatorSpec> for SpecWire {
    fn from(spec: OperatorSpec) -> Self {
        let d = spec.dim;
        let kind = spec.kind();
        let entries = match spec.coeffs {
            Coefficients::Dense(a) => {
                let rows: Vec<&[f64]> = a.chunks_exact(d).collect();
                serde_json::to_value(rows)
            }
            Coefficients::Shift(w) => serde_json::to_value(w),
            Coefficients::Diagonal(diag) => serde_json::to_value(diag),
            Coefficients::Sparse(t) => serde_json::to_value(t),
        }
        .expect("finite coefficients always serialize");
        SpecWire {
            kind,
            dim: d,
            norm: spec.norm,
            entries,
        }
    }
}

impl TryFrom<SpecWire> for OperatorSpec {
    type Error = Error;

    fn try_from(w: SpecWire) -> Result<Self> {
        let spec = match w.kind {
            OperatorKind::DenseMatrix => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(w.entries)?;
                OperatorSpec::dense(rows, w.norm)?
            }
            OperatorKind::WeightedLeftShift => {
                let weights: Vec<f64> = serde_json::from_value(w.entries)?;
                OperatorSpec::weighted_left_shift(w.dim, weights, w.norm)?
            }
            OperatorKind::Diagonal => {
                let diag: Vec<f64> = serde_json::from_value(w.entries)?;
                OperatorSpec::diagonal(diag, w.norm)?
            }
            OperatorKind::SparseTriplets => {
                let t: Vec<(usize, usize, f64)> = serde_json::from_value(w.entries)?;
                OperatorSpec::sparse(w.dim, t, w.norm)?
            }
        };
        if spec.dim != w.dim {
            return Err(Error::InvalidSpec(format!(
                "declared dim {} does not match entries (dim {})",
                w.dim, spec.dim
            )));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        e
    }

    #[test]
    fn identity_diagonal_applies_as_identity() {
        let id = OperatorSpec::diagonal(vec![1.0; 3], NormTag::L2).unwrap();
        assert_eq!(id.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unit_shift_moves_basis_vectors_down() {
        let s = OperatorSpec::weighted_left_shift(4, vec![1.0; 3], NormTag::L1).unwrap();
        assert_eq!(s.apply(&basis(4, 2)).unwrap(), basis(4, 1));
        assert_eq!(s.apply(&basis(4, 0)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn diagonal_is_componentwise() {
        let t = OperatorSpec::diagonal(vec![0.5, -1.0], NormTag::L2).unwrap();
        assert_eq!(t.apply(&[2.0, 2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let t = OperatorSpec::diagonal(vec![1.0; 3], NormTag::L2).unwrap();
        let err = t.apply(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2 }));
        assert!(err.to_string().contains('3') && err.to_string().contains('2'));
    }

    #[test]
    fn the_three_vector_norms() {
        let x = [3.0, -4.0];
        assert_eq!(vec_norm(&x, NormTag::L2).unwrap(), 5.0);
        assert_eq!(vec_norm(&x, NormTag::L1).unwrap(), 7.0);
        assert_eq!(vec_norm(&x, NormTag::Linf).unwrap(), 4.0);
        assert!(vec_norm(&[f64::NAN, 1.0], NormTag::Linf).is_err());
    }

    #[test]
    fn exact_operator_norms() {
        let id = OperatorSpec::diagonal(vec![1.0; 5], NormTag::L1).unwrap();
        assert_eq!(id.operator_norm(NormMode::Exact).unwrap().value, 1.0);

        let diag = OperatorSpec::diagonal(vec![2.0, 0.5], NormTag::Linf).unwrap();
        assert_eq!(diag.operator_norm(NormMode::Exact).unwrap().value, 2.0);

        let s = OperatorSpec::weighted_left_shift(8, vec![1.0; 7], NormTag::L1).unwrap();
        let est = s.operator_norm(NormMode::Exact).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(est.exact);

        let rot = OperatorSpec::dense(
            vec![vec![1f64.cos(), -1f64.sin()], vec![1f64.sin(), 1f64.cos()]],
            NormTag::L2,
        )
        .unwrap();
        let n = rot.operator_norm(NormMode::Exact).unwrap().value;
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_norm_above_cap_is_refused() {
        let big = OperatorSpec::diagonal(vec![1.0; DENSE_CAP + 1], NormTag::L1).unwrap();
        let err = big.operator_norm(NormMode::Exact).unwrap_err();
        assert!(err.to_string().contains("probe"));
    }

    #[test]
    fn probe_lower_bound_flags_inexact() {
        let t = OperatorSpec::diagonal(vec![3.0, 1.0], NormTag::L2).unwrap();
        let probes = ProbeSet::new(vec![vec![0.0, 1.0]], NormTag::L2, "e1").unwrap();
        let est = t.operator_norm(NormMode::ProbeLowerBound(&probes)).unwrap();
        assert_eq!(est, NormEstimate { value: 1.0, exact: false });
    }

    #[test]
    fn all_kinds_agree_with_their_dense_form() {
        let specs = [
            OperatorSpec::dense(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], NormTag::L2).unwrap(),
            OperatorSpec::weighted_left_shift(3, vec![2.0, -1.0], NormTag::L1).unwrap(),
            OperatorSpec::diagonal(vec![0.1, 0.2, 0.3], NormTag::Linf).unwrap(),
            OperatorSpec::sparse(3, vec![(2, 0, 1.5), (0, 1, -2.0)], NormTag::L1).unwrap(),
        ];
        for spec in &specs {
            let m = spec.to_dmatrix();
            let x: Vec<f64> = (0..spec.dim()).map(|i| 0.3 + i as f64).collect();
            let direct = spec.apply(&x).unwrap();
            let via = &m * nalgebra::DVector::from_column_slice(&x);
            for (a, b) in direct.iter().zip(via.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(OperatorSpec::diagonal(vec![], NormTag::L1).is_err());
        assert!(OperatorSpec::diagonal(vec![f64::INFINITY], NormTag::L1).is_err());
        assert!(OperatorSpec::weighted_left_shift(3, vec![1.0], NormTag::L1).is_err());
        assert!(OperatorSpec::sparse(2, vec![(0, 2, 1.0)], NormTag::L1).is_err());
        assert!(OperatorSpec::sparse(2, vec![(0, 1, 1.0), (0, 1, 2.0)], NormTag::L1).is_err());
        assert!(OperatorSpec::dense(vec![vec![1.0], vec![1.0, 2.0]], NormTag::L1).is_err());
    }

    #[test]
    fn json_uses_canonical_field_order() {
        let s = OperatorSpec::weighted_left_shift(3, vec![1.0, 0.1], NormTag::L1).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"weighted_left_shift","dim":3,"norm":"l1","entries":[1.0,0.1]}"#
        );
        let back: OperatorSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_rejects_inconsistent_dim() {
        let bad = r#"{"kind":"diagonal","dim":3,"norm":"l2","entries":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<OperatorSpec>(bad).is_err());
        let bad = r#"{"kind":"sparse_triplets","dim":2,"norm":"l2","entries":[[0,5,1.0]]}"#;
        assert!(serde_json::from_str::<OperatorSpec>(bad).is_err());
    }
}
