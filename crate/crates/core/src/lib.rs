//! Ergodic-type classification of linear operators on finite sections of
//! sequence spaces, finite truncations of the Cesàro entropy tree, and
//! checkable NSE certificates.
//!
//! The pipeline is: build an [`OperatorSpec`] (or pick one from the
//! [`gallery`]), choose a [`ProbeSet`] standing in for a dense subset of the
//! unit ball, then
//!
//! - [`Classifier`] tests power-boundedness, Cesàro-boundedness, ergodicity
//!   and uniform ergodicity over a finite horizon;
//! - [`tree::build_truncation`] materializes the part of the entropy tree
//!   `A_e(T, ε)` with entries `<= B` and length `<= D`;
//! - [`nse::search_nse`] looks for long chains and packages them as
//!   [`NseCertificate`]s that [`nse::check_certificate`] re-verifies from
//!   scratch.
//!
//! All heights and ranks are finite truncations, hence lower bounds.

// NaN-rejecting guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cesaro;
pub mod classify;
pub mod error;
pub mod gallery;
pub mod nse;
pub mod operator;
pub mod probe;
pub mod report;
pub mod tree;

pub use cesaro::{cesaro_extend, cesaro_matrices, CesaroMatrixSeq, CesaroTrajectory, ProbeTrajectories};
pub use classify::{replay_witness, Classification, Classifier, Evaluation, Family, Quantity, Status, Verdict, Witness};
pub use error::{Error, Result};
pub use gallery::gallery;
pub use operator::{matrix_norm, vec_norm, NormEstimate, NormMode, NormTag, OperatorKind, OperatorSpec, DENSE_CAP};
pub use nse::{check_certificate, check_certificate_json, rank_estimate, search_nse, NseCertificate, RankEstimate, Rejection, SearchResult, Strategy};
pub use probe::ProbeSet;
pub use tree::{build_truncation, node_member, truncated_height, CombinedNode, IncreasingSeq, MarginTable, TreeTruncation};
