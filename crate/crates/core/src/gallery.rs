//! Named reference operators.
//!
//! Entries are written as call expressions, e.g. `left_shift_l1(64)` or
//! `random_diagonalizable(7,8)`. All entries use the L2 norm except
//! `left_shift_l1`, which lives on `l1`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::operator::{NormTag, OperatorSpec};

pub const TEMPLATES: &[&str] = &[
    "identity(d)",
    "zero(d)",
    "left_shift_l1(d)",
    "scalar(lambda)",
    "jordan_1(d)",
    "rotation(theta)",
    "random_diagonalizable(seed,d)",
];

/// Default concrete instances, one or two per template.
pub const CATALOG: &[&str] = &[
    "identity(8)",
    "zero(4)",
    "left_shift_l1(64)",
    "left_shift_l1(256)",
    "scalar(0.5)",
    "scalar(-1)",
    "jordan_1(2)",
    "rotation(1)",
    "random_diagonalizable(7,8)",
];

fn unknown(name: &str) -> Error {
    Error::UnknownGallery {
        name: name.to_string(),
        available: TEMPLATES.join(", "),
    }
}

fn parse_call(expr: &str) -> Option<(&str, Vec<&str>)> {
    let expr = expr.trim();
    let open = expr.find('(')?;
    let inner = expr[open + 1..].strip_suffix(')')?;
    let args = inner.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
    Some((expr[..open].trim(), args))
}

fn arg<T: std::str::FromStr>(name: &str, args: &[&str], i: usize) -> Result<T> {
    args.get(i)
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("bad argument {i} for gallery entry `{name}`")))
}

/// Builds the operator named by a gallery expression.
pub fn gallery(name: &str) -> Result<OperatorSpec> {
    let (head, args) = parse_call(name).ok_or_else(|| unknown(name))?;
    let arity = match head {
        "random_diagonalizable" => 2,
        "identity" | "zero" | "left_shift_l1" | "scalar" | "jordan_1" | "rotation" => 1,
        _ => return Err(unknown(name)),
    };
    if args.len() != arity {
        return Err(Error::InvalidArgument(format!(
            "gallery entry `{head}` takes {arity} argument(s), got {}",
            args.len()
        )));
    }
    match head {
        "identity" => OperatorSpec::diagonal(vec![1.0; arg(name, &args, 0)?], NormTag::L2),
        "zero" => OperatorSpec::diagonal(vec![0.0; arg(name, &args, 0)?], NormTag::L2),
        "left_shift_l1" => {
            let d: usize = arg(name, &args, 0)?;
            OperatorSpec::weighted_left_shift(d, vec![1.0; d.saturating_sub(1)], NormTag::L1)
        }
        "scalar" => OperatorSpec::diagonal(vec![arg(name, &args, 0)?], NormTag::L2),
        "jordan_1" => jordan(arg(name, &args, 0)?),
        "rotation" => {
            let t: f64 = arg(name, &args, 0)?;
            OperatorSpec::dense(vec![vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]], NormTag::L2)
        }
        "random_diagonalizable" => random_diagonalizable(arg(name, &args, 0)?, arg(name, &args, 1)?),
        _ => unreachable!(),
    }
}

fn jordan(d: usize) -> Result<OperatorSpec> {
    let rows = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| if j == i || j == i + 1 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    OperatorSpec::dense(rows, NormTag::L2)
}

/// `Q B Q^T` with `Q` a seeded random orthogonal matrix and `B` block
/// diagonal: eigenvalue 1 blocks, real eigenvalues in `[-1, 0.9]`, and 2x2
/// rotation-scaling blocks. Every eigenvalue `λ != 1` has `|1 - λ| >= 0.1`
/// and `|λ| <= 1`, so the operator is normal and power-bounded in L2.
pub fn random_diagonalizable(seed: u64, d: usize) -> Result<OperatorSpec> {
    if d == 0 {
        return Err(Error::InvalidSpec("dim must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = DMatrix::<f64>::zeros(d, d);
    let mut i = 0;
    while i < d {
        let pick: f64 = rng.random();
        if pick < 0.2 {
            block[(i, i)] = 1.0;
            i += 1;
        } else if pick < 0.6 || i + 1 == d {
            block[(i, i)] = rng.random_range(-1.0..=0.9);
            i += 1;
        } else {
            let r: f64 = rng.random_range(0.3..=1.0);
            let theta: f64 = rng.random_range(0.2..=(std::f64::consts::PI - 0.1));
            let (s, c) = theta.sin_cos();
            block[(i, i)] = r * c;
            block[(i, i + 1)] = -r * s;
            block[(i + 1, i)] = r * s;
            block[(i + 1, i + 1)] = r * c;
            i += 2;
        }
    }
    let gauss = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let q = gauss.qr().q();
    let t = &q * block * q.transpose();
    let rows = (0..d).map(|r| t.row(r).iter().copied().collect()).collect();
    OperatorSpec::dense(rows, NormTag::L2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::OperatorKind;

    #[test]
    fn identity_is_all_ones_diagonal() {
        let s = gallery("identity(3)").unwrap();
        assert_eq!(s.kind(), OperatorKind::Diagonal);
        assert_eq!(s.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn left_shift_is_unit_weighted_on_l1() {
        let s = gallery("left_shift_l1(64)").unwrap();
        assert_eq!(s.kind(), OperatorKind::WeightedLeftShift);
        assert_eq!(s.dim(), 64);
        assert_eq!(s.norm(), NormTag::L1);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["entries"].as_array().unwrap().iter().all(|w| w == 1.0));
    }

    #[test]
    fn jordan_block() {
        let s = gallery("jordan_1(2)").unwrap();
        assert_eq!(s.kind(), OperatorKind::DenseMatrix);
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["entries"], serde_json::json!([[1.0, 1.0], [0.0, 1.0]]));
    }

    #[test]
    fn unknown_name_lists_entries() {
        let err = gallery("banana(3)").unwrap_err().to_string();
        assert!(err.contains("left_shift_l1(d)") && err.contains("rotation(theta)"));
        assert!(gallery("identity(3").is_err());
        assert!(gallery("identity(x)").is_err());
        assert!(gallery("random_diagonalizable(3)").is_err());
    }

    #[test]
    fn catalog_entries_all_build() {
        for name in CATALOG {
            gallery(name).unwrap();
        }
    }

    #[test]
    fn random_diagonalizable_has_eigenvalues_in_the_disc() {
        for seed in 0..10 {
            let s = random_diagonalizable(seed, 9).unwrap();
            let eig = s.to_dmatrix().complex_eigenvalues();
            for l in eig.iter() {
                assert!(l.norm() <= 1.0 + 1e-9);
                let gap = (l - nalgebra::Complex::new(1.0, 0.0)).norm();
                assert!(!(1e-9..0.1 - 1e-9).contains(&gap), "seed {seed}: {l}");
            }
        }
    }
}
