#![allow(dead_code)]

use ergorank::{NormTag, OperatorSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn norm(v: &[f64], tag: NormTag) -> f64 {
    match tag {
        NormTag::L1 => v.iter().map(|c| c.abs()).sum(),
        NormTag::L2 => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
        NormTag::Linf => v.iter().fold(0.0, |m, c| m.max(c.abs())),
    }
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Random dense operator rescaled to spectral radius `radius`, with a random
/// ambient norm, plus a random unit-ball probe.
pub fn random_dense(seed: u64, max_dim: usize, radius: f64) -> (OperatorSpec, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=max_dim);
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let rho = g.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    let t = g / rho * radius;
    let tag = [NormTag::L1, NormTag::L2, NormTag::Linf][rng.random_range(0..3)];
    let rows = (0..d).map(|r| t.row(r).iter().copied().collect()).collect();
    let spec = OperatorSpec::dense(rows, tag).unwrap();
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&x, tag);
    x.iter_mut().for_each(|c| *c /= n * (1.0 + 1e-15));
    (spec, x)
}

/// `A_n x` for `n = 1..=horizon` by explicit powers and partial sums, each
/// mean divided out from its own sum.
pub fn direct_means(spec: &OperatorSpec, x: &[f64], horizon: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = spec.to_dmatrix();
    let mut power = DVector::from_column_slice(x);
    let mut sum = DVector::<f64>::zeros(x.len());
    let mut means = Vec::with_capacity(horizon);
    let mut powers = Vec::with_capacity(horizon + 1);
    for n in 1..=horizon {
        powers.push(power.as_slice().to_vec());
        sum += &power;
        power = &t * &power;
        means.push((&sum / n as f64).as_slice().to_vec());
    }
    powers.push(power.as_slice().to_vec());
    (means, powers)
}

/// Left shift `A_j e_k` summed directly: `S^i e_k = e_{k-i}` for `i <= k`.
pub fn shift_mean_on_basis(d: usize, k: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for i in 0..j {
        if i <= k {
            v[k - i] += 1.0;
        }
    }
    v.iter_mut().for_each(|c| *c /= j as f64);
    v
}
