//! Finite-horizon membership tests for power-bounded, Cesàro-bounded,
//! ergodic and uniformly ergodic operators.
//!
//! Every test is a semi-decision over a horizon `N`: `Holds` and `Fails`
//! are only returned on evidence, anything else is `Inconclusive`. A `Fails`
//! verdict always carries a [`Witness`] that [`replay_witness`] can
//! recompute from scratch.
//!
//! Cauchy-type tests look at the tail window `N/2 <= n < m <= N`. The
//! diameter of `{A_n}` over that window is computed pairwise when the window
//! is short, and otherwise bounded above by `2 max_n ‖A_n - c‖`, minimized
//! over a few centers `c` from the window. Failure
//! needs a persistent gap: at each dyadic scale `s = N/16, ..., N/2, N` the
//! look-back oscillation `max_{s/2 <= j < s} ‖A_j - A_s‖` is at least `4τ`,
//! and the five values stay within a factor 1.5 of each other. A convergent
//! `O(1/n)` tail shrinks by 16 over that span, and a slow pre-asymptotic
//! approach grows instead.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cesaro::{CesaroTrajectory, Stepper};
use crate::error::{Error, Result};
use crate::operator::{dist, matrix_dist, matrix_norm, vec_norm_unchecked, NormTag, OperatorSpec, DENSE_CAP};
use crate::probe::ProbeSet;

pub const DEFAULT_HORIZON: usize = 1000;
pub const DEFAULT_BOUND_CAP: f64 = 100.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-2;

/// Longest tail window whose diameter is computed pairwise.
pub const EXACT_WINDOW_VECTORS: usize = 256;
pub const EXACT_WINDOW_MATRICES: usize = 32;

const GROWTH_FACTOR: f64 = 1.5;
const GAP_FACTOR: f64 = 4.0;
/// Largest max/min ratio of the dyadic look-back gaps still read as non-decaying.
const GAP_SPREAD: f64 = 1.5;
/// Dyadic scales `N / 2^(SCALES-1) ..= N` for the persistent-gap test.
const SCALES: usize = 5;
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PowerBounded,
    CesaroBounded,
    Ergodic,
    UniformlyErgodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Holds,
    Fails,
    Inconclusive,
}

/// What a witness value measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `‖T^n x‖`, or `‖T^n‖` without a probe.
    PowerNorm,
    /// `‖A_n x‖`, or `‖A_n‖`.
    MeanNorm,
    /// `‖A_n x - A_m x‖`, or `‖A_n - A_m‖`.
    MeanGap,
}

/// How norms of `T^n`, `A_n` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Exact operator norms when the dimension is small enough, else probes.
    Auto,
    Probes,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub quantity: Quantity,
    /// Probe index; `None` for operator-norm witnesses.
    pub probe: Option<usize>,
    pub n: usize,
    pub m: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub family: Family,
    pub status: Status,
    /// Horizon actually used (shorter than requested after divergence).
    pub horizon: usize,
    pub tolerance: Option<f64>,
    pub bound: Option<u64>,
    pub witness: Option<Witness>,
    pub probe_label: String,
    pub evaluation: Evaluation,
    pub bound_cap: Option<f64>,
    /// Tail-window diameters, one per probe (or one for operator norms).
    pub tail_diameters: Vec<f64>,
    /// Whether `tail_diameters` are pairwise maxima or upper bounds.
    pub diameter_exact: Option<bool>,
}

/// Configured classifier over one operator and probe set.
///
/// ```
/// use ergorank::{gallery, Classifier, ProbeSet, Status};
/// let spec = gallery("identity(4)").unwrap();
/// let probes = ProbeSet::default_for(&spec, 0);
/// let v = Classifier::new(&spec, &probes).horizon(100).ergodic().unwrap();
/// assert_eq!(v.status, Status::Holds);
/// ```
#[derive(Debug, Clone)]
pub struct Classifier<'a> {
    spec: &'a OperatorSpec,
    probes: &'a ProbeSet,
    horizon: usize,
    bound_cap: f64,
    tolerance: f64,
    evaluation: Evaluation,
}

/// All four verdicts for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub power_bounded: Verdict,
    pub cesaro_bounded: Verdict,
    pub ergodic: Verdict,
    pub uniformly_ergodic: Verdict,
}

impl Classification {
    pub fn iter(&self) -> impl Iterator<Item = &Verdict> {
        [
            &self.power_bounded,
            &self.cesaro_bounded,
            &self.ergodic,
            &self.uniformly_ergodic,
        ]
        .into_iter()
    }
}

impl<'a> Classifier<'a> {
    pub fn new(spec: &'a OperatorSpec, probes: &'a ProbeSet) -> Self {
        Self {
            spec,
            probes,
            horizon: DEFAULT_HORIZON,
            bound_cap: DEFAULT_BOUND_CAP,
            tolerance: DEFAULT_TOLERANCE,
            evaluation: Evaluation::Auto,
        }
    }

    pub fn horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn bound_cap(mut self, cap: f64) -> Self {
        self.bound_cap = cap;
        self
    }

    pub fn tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn evaluation(mut self, evaluation: Evaluation) -> Self {
        self.evaluation = evaluation;
        self
    }

    fn validate_common(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_probes(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::EmptyProbeSet);
        }
        self.probes.check_against(self.spec)
    }

    fn validate_tolerance(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::NonPositiveTolerance(self.tolerance));
        }
        Ok(())
    }

    fn bounded_mode(&self) -> Result<Evaluation> {
        let d = self.spec.dim();
        match self.evaluation {
            Evaluation::Auto => Ok(if exact_sweep_affordable(self.spec) {
                Evaluation::Exact
            } else {
                Evaluation::Probes
            }),
            Evaluation::Exact if d > DENSE_CAP => Err(Error::DenseCapExceeded {
                what: "exact Cesàro norms",
                dim: d,
                cap: DENSE_CAP,
            }),
            e => Ok(e),
        }
    }

    fn uniform_mode(&self) -> Result<Evaluation> {
        let d = self.spec.dim();
        match self.evaluation {
            Evaluation::Auto => Ok(
                if d <= DENSE_CAP && (self.spec.norm() != NormTag::L2 || d <= 64) {
                    Evaluation::Exact
                } else {
                    Evaluation::Probes
                },
            ),
            Evaluation::Exact if d > DENSE_CAP => Err(Error::DenseCapExceeded {
                what: "exact uniform ergodicity test",
                dim: d,
                cap: DENSE_CAP,
            }),
            e => Ok(e),
        }
    }

    pub fn power_bounded(&self) -> Result<Verdict> {
        Ok(self.bounded_pair()?.0)
    }

    pub fn cesaro_bounded(&self) -> Result<Verdict> {
        Ok(self.bounded_pair()?.1)
    }

    /// Power-bounded and Cesàro-bounded verdicts from one sweep.
    fn bounded_pair(&self) -> Result<(Verdict, Verdict)> {
        self.validate_common()?;
        self.validate_probes()?;
        if !(self.bound_cap >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bound cap must be at least 1, got {}",
                self.bound_cap
            )));
        }
        let mode = self.bounded_mode()?;
        let spec = self.spec;
        let (power, mean, horizon, label) = match mode {
            Evaluation::Exact => {
                let d = spec.dim();
                let norm = |m: &[f64]| matrix_norm(m, d, spec.norm());
                let pass = first_pass(&|| Stepper::matrix(spec), self.horizon, true, &norm, &[]);
                let power = Growth::from_norms(&pass.power_norms, 0, pass.n_eff, self.bound_cap, None);
                let mean = Growth::from_norms(&pass.mean_norms, 1, pass.n_eff, self.bound_cap, None);
                (power, mean, pass.n_eff, "exact-operator-norm".to_string())
            }
            _ => {
                let norm = |v: &[f64]| vec_norm_unchecked(v, spec.norm());
                let per_probe: Vec<(Growth, Growth, usize)> = self
                    .probes
                    .iter()
                    .enumerate()
                    .collect::<Vec<_>>()
                    .into_par_iter()
                    .map(|(i, x)| {
                        let pass = first_pass(&|| Stepper::vector(spec, x), self.horizon, true, &norm, &[]);
                        (
                            Growth::from_norms(&pass.power_norms, 0, pass.n_eff, self.bound_cap, Some(i)),
                            Growth::from_norms(&pass.mean_norms, 1, pass.n_eff, self.bound_cap, Some(i)),
                            pass.n_eff,
                        )
                    })
                    .collect();
                let power = Growth::merge(per_probe.iter().map(|p| &p.0));
                let mean = Growth::merge(per_probe.iter().map(|p| &p.1));
                let n_eff = per_probe.iter().map(|p| p.2).min().unwrap_or(self.horizon);
                (power, mean, n_eff, self.probes.label().to_string())
            }
        };
        let pb = self.bounded_verdict(Family::PowerBounded, Quantity::PowerNorm, &power, horizon, &label, mode);
        let cb = self.bounded_verdict(Family::CesaroBounded, Quantity::MeanNorm, &mean, horizon, &label, mode);
        Ok((pb, cb))
    }

    fn bounded_verdict(
        &self,
        family: Family,
        quantity: Quantity,
        g: &Growth,
        horizon: usize,
        label: &str,
        evaluation: Evaluation,
    ) -> Verdict {
        let k = (g.sup - BOUND_SLACK).ceil().max(1.0);
        let (status, bound, witness) = if k <= self.bound_cap {
            (Status::Holds, Some(k as u64), None)
        } else if let (true, Some((probe, n, value))) =
            (g.sup >= GROWTH_FACTOR * g.sup_half, g.first_above)
        {
            let w = Witness {
                quantity,
                probe,
                n,
                m: None,
                value,
            };
            (Status::Fails, None, Some(w))
        } else {
            (Status::Inconclusive, None, None)
        };
        Verdict {
            family,
            status,
            horizon,
            tolerance: None,
            bound,
            witness,
            probe_label: label.to_string(),
            evaluation,
            bound_cap: Some(self.bound_cap),
            tail_diameters: Vec::new(),
            diameter_exact: None,
        }
    }

    /// Ergodicity over the probe set; runs the Cesàro-bounded test first.
    pub fn ergodic(&self) -> Result<Verdict> {
        let cb = self.cesaro_bounded()?;
        self.ergodic_given(&cb)
    }

    /// Ergodicity given an already computed Cesàro-bounded verdict.
    ///
    /// A failed boundedness test is inherited; an inconclusive one caps the
    /// result at `Inconclusive` unless a persistent gap is found.
    pub fn ergodic_given(&self, cesaro_bounded: &Verdict) -> Result<Verdict> {
        self.validate_common()?;
        self.validate_probes()?;
        self.validate_tolerance()?;
        let mut verdict = Verdict {
            family: Family::Ergodic,
            status: Status::Inconclusive,
            horizon: self.horizon,
            tolerance: Some(self.tolerance),
            bound: None,
            witness: None,
            probe_label: self.probes.label().to_string(),
            evaluation: Evaluation::Probes,
            bound_cap: None,
            tail_diameters: Vec::new(),
            diameter_exact: None,
        };
        if cesaro_bounded.status == Status::Fails {
            verdict.status = Status::Fails;
            verdict.witness = cesaro_bounded.witness.clone();
            verdict.horizon = cesaro_bounded.horizon;
            return Ok(verdict);
        }
        let stats = self.probe_cauchy()?;
        verdict.horizon = stats.iter().map(|s| s.n_eff).min().unwrap_or(self.horizon);
        verdict.tail_diameters = stats.iter().map(|s| s.diameter).collect();
        verdict.diameter_exact = Some(stats.iter().all(|s| s.exact));
        if let Some((i, s)) = stats.iter().enumerate().find(|(_, s)| s.persistent(self.tolerance)) {
            verdict.status = Status::Fails;
            verdict.witness = Some(s.witness(Some(i)));
        } else if cesaro_bounded.status == Status::Holds
            && stats.iter().all(|s| !s.diverged && s.diameter < self.tolerance)
        {
            verdict.status = Status::Holds;
        }
        Ok(verdict)
    }

    fn probe_cauchy(&self) -> Result<Vec<Cauchy>> {
        let spec = self.spec;
        let norm = |v: &[f64]| vec_norm_unchecked(v, spec.norm());
        let d = |a: &[f64], b: &[f64]| dist(a, b, spec.norm());
        Ok(self
            .probes
            .iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| cauchy(&|| Stepper::vector(spec, x), self.horizon, &norm, &d, EXACT_WINDOW_VECTORS))
            .collect())
    }

    /// Uniform ergodicity: Cauchy test on `‖A_n - A_m‖`.
    ///
    /// Above the dense cap only probe lower bounds are available, so the
    /// result is `Fails` or `Inconclusive`.
    pub fn uniformly_ergodic(&self) -> Result<Verdict> {
        self.validate_common()?;
        self.validate_tolerance()?;
        let mode = self.uniform_mode()?;
        let mut verdict = Verdict {
            family: Family::UniformlyErgodic,
            status: Status::Inconclusive,
            horizon: self.horizon,
            tolerance: Some(self.tolerance),
            bound: None,
            witness: None,
            probe_label: "exact-operator-norm".into(),
            evaluation: mode,
            bound_cap: None,
            tail_diameters: Vec::new(),
            diameter_exact: None,
        };
        if mode == Evaluation::Exact {
            let spec = self.spec;
            let dim = spec.dim();
            let norm = |m: &[f64]| matrix_norm(m, dim, spec.norm());
            let d = |a: &[f64], b: &[f64]| matrix_dist(a, b, dim, spec.norm());
            let s = cauchy(&|| Stepper::matrix(spec), self.horizon, &norm, &d, EXACT_WINDOW_MATRICES);
            verdict.horizon = s.n_eff;
            verdict.tail_diameters = vec![s.diameter];
            verdict.diameter_exact = Some(s.exact);
            if s.persistent(self.tolerance) {
                verdict.status = Status::Fails;
                verdict.witness = Some(s.witness(None));
            } else if !s.diverged && s.diameter < self.tolerance {
                verdict.status = Status::Holds;
            }
        } else {
            self.validate_probes()?;
            verdict.probe_label = self.probes.label().to_string();
            let stats = self.probe_cauchy()?;
            verdict.horizon = stats.iter().map(|s| s.n_eff).min().unwrap_or(self.horizon);
            if let Some((i, s)) = stats.iter().enumerate().find(|(_, s)| s.persistent(self.tolerance)) {
                verdict.status = Status::Fails;
                verdict.witness = Some(s.witness(Some(i)));
            }
        }
        Ok(verdict)
    }

    /// All four families, sharing the boundedness sweep.
    /// Uniform ergodicity given a verdict for a weaker family.
    ///
    /// Uniform ergodicity implies ergodicity and Cesàro-boundedness, so a
    /// `Fails` there is inherited together with its witness.
    pub fn uniformly_ergodic_given(&self, weaker: &Verdict) -> Result<Verdict> {
        let mut verdict = self.uniformly_ergodic()?;
        if weaker.status == Status::Fails && verdict.status != Status::Fails {
            verdict.status = Status::Fails;
            verdict.witness = weaker.witness.clone();
            verdict.horizon = weaker.horizon;
            verdict.probe_label = weaker.probe_label.clone();
        }
        Ok(verdict)
    }

    pub fn classify(&self) -> Result<Classification> {
        let (power_bounded, cesaro_bounded) = self.bounded_pair()?;
        let ergodic = self.ergodic_given(&cesaro_bounded)?;
        let uniformly_ergodic = self.uniformly_ergodic_given(&ergodic)?;
        Ok(Classification {
            power_bounded,
            cesaro_bounded,
            ergodic,
            uniformly_ergodic,
        })
    }
}

fn exact_sweep_affordable(spec: &OperatorSpec) -> bool {
    match spec.norm() {
        NormTag::L2 => spec.dim() <= 16,
        _ => spec.dim() <= 64,
    }
}

/// Running maximum of a norm sequence over `[first, n_eff]` and over its first half.
#[derive(Debug, Clone, Default)]
struct Growth {
    sup: f64,
    sup_half: f64,
    /// First index whose value exceeds the cap: (probe, index, value).
    first_above: Option<(Option<usize>, usize, f64)>,
}

impl Growth {
    fn from_norms(values: &[f64], first: usize, n_eff: usize, cap: f64, probe: Option<usize>) -> Self {
        let half = n_eff / 2;
        let mut g = Growth::default();
        for (offset, &v) in values.iter().enumerate() {
            let idx = first + offset;
            g.sup = g.sup.max(v);
            if idx <= half {
                g.sup_half = g.sup_half.max(v);
            }
            if g.first_above.is_none() && v > cap {
                g.first_above = Some((probe, idx, v));
            }
        }
        g
    }

    fn merge<'g>(parts: impl Iterator<Item = &'g Growth>) -> Growth {
        parts.fold(Growth::default(), |mut acc, g| {
            acc.sup = acc.sup.max(g.sup);
            acc.sup_half = acc.sup_half.max(g.sup_half);
            if acc.first_above.is_none() {
                acc.first_above = g.first_above;
            }
            acc
        })
    }
}

struct FirstPass {
    n_eff: usize,
    diverged: bool,
    /// `‖T^m‖` for `m = 0..n_eff` (plus `m = n_eff` when finite).
    power_norms: Vec<f64>,
    /// `‖A_n‖` for `n = 1..=n_eff`.
    mean_norms: Vec<f64>,
    snapshots: Vec<(usize, Vec<f64>)>,
}

fn first_pass<'s>(
    make: &dyn Fn() -> Stepper<'s>,
    horizon: usize,
    with_norms: bool,
    norm: &dyn Fn(&[f64]) -> f64,
    snap_at: &[usize],
) -> FirstPass {
    let mut st = make();
    let mut out = FirstPass {
        n_eff: 0,
        diverged: false,
        power_norms: Vec::new(),
        mean_norms: Vec::new(),
        snapshots: Vec::new(),
    };
    loop {
        let n = st.n();
        out.n_eff = n;
        if with_norms {
            let mn = norm(st.mean());
            if n == 1 {
                out.power_norms.push(mn);
            }
            out.mean_norms.push(mn);
        }
        if snap_at.contains(&n) {
            out.snapshots.push((n, st.mean().to_vec()));
        }
        if st.diverged() {
            out.diverged = true;
            break;
        }
        if with_norms {
            out.power_norms.push(norm(st.power()));
        }
        if n >= horizon {
            break;
        }
        st.step();
    }
    out
}

/// Tail-window statistics of one mean sequence.
#[derive(Debug, Clone)]
struct Cauchy {
    n_eff: usize,
    diverged: bool,
    diameter: f64,
    exact: bool,
    scales: [usize; SCALES],
    /// (oscillation, argmax j) at each scale.
    gaps: [(f64, usize); SCALES],
}

impl Cauchy {
    fn persistent(&self, tol: f64) -> bool {
        let lo = self.gaps.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
        let hi = self.gaps.iter().map(|g| g.0).fold(0.0, f64::max);
        self.scales[0] >= 2 && lo >= GAP_FACTOR * tol && hi <= GAP_SPREAD * lo
    }

    fn witness(&self, probe: Option<usize>) -> Witness {
        Witness {
            quantity: Quantity::MeanGap,
            probe,
            n: self.gaps[SCALES - 1].1,
            m: Some(self.scales[SCALES - 1]),
            value: self.gaps[SCALES - 1].0,
        }
    }
}

fn cauchy<'s>(
    make: &dyn Fn() -> Stepper<'s>,
    horizon: usize,
    norm: &dyn Fn(&[f64]) -> f64,
    distance: &dyn Fn(&[f64], &[f64]) -> f64,
    exact_window: usize,
) -> Cauchy {
    let scales_for = |n: usize| std::array::from_fn::<usize, SCALES, _>(|i| n >> (SCALES - 1 - i));
    let centers_for = |n: usize| {
        let lo = (n / 2).max(1);
        [lo, (lo + n) / 2, n]
    };
    let snaps_for = |n: usize| [&scales_for(n)[..], &centers_for(n)[..]].concat();
    let mut pass = first_pass(make, horizon, false, norm, &snaps_for(horizon));
    if pass.n_eff < horizon {
        // diverged early: redo the snapshots for the shortened horizon
        pass = first_pass(make, pass.n_eff, false, norm, &snaps_for(pass.n_eff));
        pass.diverged = true;
    }
    let n_eff = pass.n_eff;
    let scales = scales_for(n_eff);
    let snap = |s: usize| {
        pass.snapshots
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, v)| v.as_slice())
    };
    let centers: Vec<&[f64]> = centers_for(n_eff)
        .iter()
        .map(|&c| snap(c).expect("centers are snapshotted"))
        .collect();

    let lo = (n_eff / 2).max(1);
    let exact = n_eff - lo < exact_window;
    let mut window: Vec<Vec<f64>> = Vec::new();
    // diameter <= 2 * radius about any center
    let mut radii = vec![0.0f64; centers.len()];
    let mut gaps = [(0.0f64, 0usize); SCALES];

    let mut st = make();
    loop {
        let n = st.n();
        let a = st.mean();
        for (i, &s) in scales.iter().enumerate() {
            if s >= 2 && n >= s.div_ceil(2) && n < s {
                if let Some(target) = snap(s) {
                    let g = distance(a, target);
                    if g > gaps[i].0 {
                        gaps[i] = (g, n);
                    }
                }
            }
        }
        if n >= lo {
            for (r, c) in radii.iter_mut().zip(&centers) {
                *r = r.max(distance(a, c));
            }
            if exact {
                window.push(a.to_vec());
            }
        }
        if n >= n_eff {
            break;
        }
        st.step();
    }

    let diameter = if exact {
        let mut best = 0.0f64;
        for i in 0..window.len() {
            for j in i + 1..window.len() {
                best = best.max(distance(&window[i], &window[j]));
            }
        }
        best
    } else {
        2.0 * radii.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Cauchy {
        n_eff,
        diverged: pass.diverged,
        diameter,
        exact,
        scales,
        gaps,
    }
}

/// Recomputes a witness value from scratch.
///
/// Probe witnesses go through a fresh [`CesaroTrajectory`]; operator-norm
/// witnesses through explicit dense powers and partial sums.
pub fn replay_witness(spec: &OperatorSpec, probes: &ProbeSet, w: &Witness) -> Result<f64> {
    let top = w.n.max(w.m.unwrap_or(0));
    match w.probe {
        Some(i) => {
            let x = probes.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("witness refers to missing probe {i}"))
            })?;
            let traj = CesaroTrajectory::build(spec, x, top.max(1))?;
            match w.quantity {
                Quantity::PowerNorm => traj.power_norms().get(w.n).copied().ok_or(
                    Error::HorizonExceeded {
                        requested: w.n,
                        available: traj.horizon(),
                    },
                ),
                Quantity::MeanNorm => Ok(vec_norm_unchecked(traj.mean(w.n)?, spec.norm())),
                Quantity::MeanGap => traj.cesaro_diff(w.n, w.m.unwrap_or(w.n)),
            }
        }
        None => {
            let d = spec.dim();
            if d > DENSE_CAP {
                return Err(Error::DenseCapExceeded {
                    what: "operator-norm witness replay",
                    dim: d,
                    cap: DENSE_CAP,
                });
            }
            let t = spec.to_dmatrix();
            let norm = |m: &DMatrix<f64>| matrix_norm(m.as_slice(), d, spec.norm());
            let mut power = DMatrix::<f64>::identity(d, d);
            let mut sum = DMatrix::<f64>::zeros(d, d);
            let mut means = Vec::with_capacity(top);
            for k in 0..=top {
                if k == w.n && w.quantity == Quantity::PowerNorm {
                    return Ok(norm(&power));
                }
                if k == top {
                    break;
                }
                sum += &power;
                means.push(&sum / (k + 1) as f64);
                power = &t * power;
            }
            let mean = |n: usize| &means[n - 1];
            match w.quantity {
                Quantity::PowerNorm => unreachable!(),
                Quantity::MeanNorm => Ok(norm(mean(w.n))),
                Quantity::MeanGap => Ok(norm(&(mean(w.n) - mean(w.m.unwrap_or(w.n))))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::gallery;

    fn default_probes(spec: &OperatorSpec) -> ProbeSet {
        ProbeSet::default_for(spec, 1)
    }

    fn assert_replays(spec: &OperatorSpec, probes: &ProbeSet, v: &Verdict) {
        let w = v.witness.as_ref().expect("Fails carries a witness");
        let again = replay_witness(spec, probes, w).unwrap();
        assert!(
            (again - w.value).abs() <= 1e-9 * w.value.abs().max(1.0),
            "{again} vs {}",
            w.value
        );
    }

    #[test]
    fn identity_is_power_bounded_by_one() {
        let id = gallery("identity(8)").unwrap();
        let p = default_probes(&id);
        for eval in [Evaluation::Auto, Evaluation::Probes, Evaluation::Exact] {
            let v = Classifier::new(&id, &p).horizon(100).evaluation(eval).power_bounded().unwrap();
            assert_eq!(v.status, Status::Holds);
            assert_eq!(v.bound, Some(1));
        }
    }

    #[test]
    fn doubling_scalar_fails_power_boundedness() {
        let s = gallery("scalar(2)").unwrap();
        let p = ProbeSet::new(vec![vec![1.0]], NormTag::L2, "one").unwrap();
        for eval in [Evaluation::Probes, Evaluation::Exact] {
            let v = Classifier::new(&s, &p)
                .horizon(60)
                .bound_cap(1e6)
                .evaluation(eval)
                .power_bounded()
                .unwrap();
            assert_eq!(v.status, Status::Fails);
            let w = v.witness.as_ref().unwrap();
            assert_eq!(w.n, 20);
            assert_eq!(w.value, 2f64.powi(20));
            assert_replays(&s, &p, &v);
        }
    }

    #[test]
    fn rotation_preserves_l2_norm() {
        let r = gallery("rotation(1)").unwrap();
        let p = default_probes(&r);
        let v = Classifier::new(&r, &p).horizon(1000).power_bounded().unwrap();
        assert_eq!((v.status, v.bound), (Status::Holds, Some(1)));
    }

    #[test]
    fn jordan_block_is_not_cesaro_bounded() {
        let j = gallery("jordan_1(2)").unwrap();
        let p = default_probes(&j);
        let v = Classifier::new(&j, &p)
            .horizon(200)
            .bound_cap(10.0)
            .evaluation(Evaluation::Exact)
            .cesaro_bounded()
            .unwrap();
        assert_eq!(v.status, Status::Fails);
        let w = v.witness.as_ref().unwrap();
        assert!(w.probe.is_none());
        assert!(w.value >= (w.n as f64 - 1.0) / 2.0);
        assert!(w.value > 10.0);
        assert_replays(&j, &p, &v);
    }

    #[test]
    fn bounded_means() {
        let id = gallery("identity(4)").unwrap();
        let v = Classifier::new(&id, &default_probes(&id)).horizon(100).cesaro_bounded().unwrap();
        assert_eq!((v.status, v.bound), (Status::Holds, Some(1)));

        let s = gallery("left_shift_l1(64)").unwrap();
        let v = Classifier::new(&s, &default_probes(&s)).horizon(500).cesaro_bounded().unwrap();
        assert_eq!(v.evaluation, Evaluation::Exact);
        assert_eq!((v.status, v.bound), (Status::Holds, Some(1)));
    }

    #[test]
    fn ergodic_examples() {
        let id = gallery("identity(8)").unwrap();
        let v = Classifier::new(&id, &default_probes(&id))
            .horizon(100)
            .tolerance(1e-6)
            .ergodic()
            .unwrap();
        assert_eq!(v.status, Status::Holds);
        assert!(v.tail_diameters.iter().all(|d| *d < 1e-14));

        let one = gallery("scalar(1)").unwrap();
        let p = ProbeSet::new(vec![vec![1.0]], NormTag::L2, "one").unwrap();
        let v = Classifier::new(&one, &p).horizon(50).tolerance(1e-9).ergodic().unwrap();
        assert_eq!(v.status, Status::Holds);
    }

    #[test]
    fn shift_is_ergodic_on_basis_probes() {
        let s = gallery("left_shift_l1(256)").unwrap();
        let p = ProbeSet::basis(256, 32, NormTag::L1);
        let v = Classifier::new(&s, &p).horizon(10_000).tolerance(1e-2).ergodic().unwrap();
        assert_eq!(v.status, Status::Holds);
        assert_eq!(v.tail_diameters.len(), 32);
    }

    #[test]
    fn ergodic_inherits_cesaro_failure() {
        let j = gallery("jordan_1(2)").unwrap();
        let p = default_probes(&j);
        let v = Classifier::new(&j, &p).horizon(400).bound_cap(10.0).ergodic().unwrap();
        assert_eq!(v.status, Status::Fails);
        assert_eq!(v.witness.as_ref().unwrap().quantity, Quantity::MeanNorm);
        assert_replays(&j, &p, &v);
    }

    #[test]
    fn oscillating_block_fails_ergodicity() {
        // Jordan block at -1: Cesàro-bounded, means oscillate forever
        let t = OperatorSpec::dense(vec![vec![-1.0, 1.0], vec![0.0, -1.0]], NormTag::L2).unwrap();
        let p = ProbeSet::basis(2, 2, NormTag::L2);
        let c = Classifier::new(&t, &p).horizon(2000).tolerance(1e-2);
        let cb = c.cesaro_bounded().unwrap();
        assert_eq!(cb.status, Status::Holds);
        let v = c.ergodic_given(&cb).unwrap();
        assert_eq!(v.status, Status::Fails);
        assert_replays(&t, &p, &v);
        let ue = c.uniformly_ergodic().unwrap();
        assert_eq!(ue.status, Status::Fails);
        assert_replays(&t, &p, &ue);
    }

    #[test]
    fn uniform_ergodicity_examples() {
        let id = gallery("identity(4)").unwrap();
        let p = default_probes(&id);
        let v = Classifier::new(&id, &p).horizon(50).tolerance(1e-9).uniformly_ergodic().unwrap();
        assert_eq!(v.status, Status::Holds);
        assert_eq!(v.diameter_exact, Some(true));

        // tail diameter of A_n = (1 - 0.5^n) / (0.5 n) over [N/2, N] is about 2/N
        let half = gallery("scalar(0.5)").unwrap();
        let p = default_probes(&half);
        let at = |n: usize| Classifier::new(&half, &p).horizon(n).tolerance(1e-3).uniformly_ergodic().unwrap();
        assert_eq!(at(200).status, Status::Inconclusive);
        assert_eq!(at(4000).status, Status::Holds);

        let s = gallery("left_shift_l1(64)").unwrap();
        let p = default_probes(&s);
        let v = Classifier::new(&s, &p).horizon(64).tolerance(0.1).uniformly_ergodic().unwrap();
        assert_ne!(v.status, Status::Holds);
        if v.status == Status::Fails {
            let w = v.witness.as_ref().unwrap();
            let (n, m) = (w.n as f64, w.m.unwrap() as f64);
            assert!((w.value - 2.0 * (1.0 - n / m)).abs() < 1e-12);
            assert_replays(&s, &p, &v);
        }
    }

    #[test]
    fn slowly_converging_scalar_never_fails() {
        for lambda in ["0.5", "0.9", "0.99", "-1", "-0.5"] {
            let s = gallery(&format!("scalar({lambda})")).unwrap();
            let p = default_probes(&s);
            for n in [16, 100, 1000] {
                let c = Classifier::new(&s, &p).horizon(n).tolerance(1e-3).classify().unwrap();
                for v in c.iter() {
                    assert_ne!(v.status, Status::Fails, "scalar({lambda}) N={n} {:?}", v.family);
                }
            }
        }
    }

    #[test]
    fn bad_arguments() {
        let id = gallery("identity(2)").unwrap();
        let empty = ProbeSet::new(vec![], NormTag::L2, "none").unwrap();
        assert!(matches!(
            Classifier::new(&id, &empty).power_bounded(),
            Err(Error::EmptyProbeSet)
        ));
        let p = default_probes(&id);
        assert!(matches!(
            Classifier::new(&id, &p).tolerance(0.0).ergodic(),
            Err(Error::NonPositiveTolerance(_))
        ));
        assert!(Classifier::new(&id, &p).tolerance(-1.0).uniformly_ergodic().is_err());
        assert!(Classifier::new(&id, &p).horizon(0).cesaro_bounded().is_err());
        // exact mode needs no probes
        assert!(Classifier::new(&id, &empty).uniformly_ergodic().is_ok());
    }

    #[test]
    fn diverging_scalar_is_caught_everywhere() {
        let s = gallery("scalar(3)").unwrap();
        let p = ProbeSet::new(vec![vec![1.0]], NormTag::L2, "one").unwrap();
        let c = Classifier::new(&s, &p).horizon(5000).tolerance(1e-2).classify().unwrap();
        for v in c.iter() {
            assert_eq!(v.status, Status::Fails, "{:?}", v.family);
            assert!(v.witness.as_ref().unwrap().value.is_finite());
            assert_replays(&s, &p, v);
        }
        assert!(c.uniformly_ergodic.horizon < 5000);
    }

    #[test]
    fn verdict_json_field_order() {
        let id = gallery("identity(2)").unwrap();
        let v = Classifier::new(&id, &default_probes(&id)).horizon(10).power_bounded().unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let keys = ["\"family\"", "\"status\"", "\"horizon\"", "\"tolerance\"", "\"bound\"", "\"witness\"", "\"probe_label\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        let back: Verdict = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
