//! Threshold detection of classical fields and the bipartite field model.
//!
//! A bipartite state `Psi` on `C^n (x) C^n` with coefficient matrix `M_jk = Psi_{jn+k}` is
//! represented by a circular Gaussian pair `(phi_1, chi)` with block covariance
//!
//! ```text
//! [[ M M^H + eps I,  M             ],
//!  [ M^H,            M^H M + eps I ]]
//! ```
//!
//! and party two observes `phi_2 = conj(chi)`, so that `Cov(phi_2) = rho_2 + eps I`. By
//! Wick's theorem
//!
//! ```text
//! E f_A(phi_1) f_B(phi_2) = Tr(D_1 A) Tr(D_2 B) + Tr(A M B^T M^H)
//! ```
//!
//! and the last term is `<Psi| A (x) B |Psi>`. The block matrix has eigenvalues
//! `s^2 + eps +- s` over the singular values `s` of `M`, hence the lower bound
//! `eps* = max s (1 - s)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    check_dim, coefficient_matrix, max_abs_diff, partial_trace_first, partial_trace_second, projector_from_state,
    trace_product, FieldVector, HermitianOperator, C64, HERMITIAN_TOL, PSD_TOL,
};
use crate::montecarlo::{estimate_mean, reduce_blocks, McEstimate};
use crate::random_field::{BackgroundField, GaussianFieldEnsemble, RandomSeed};

/// Allowed deviation of `||Psi||` from one.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Background scale and threshold found by a grid search that matches click correlations
/// of the singlet to `-cos 2(theta_1 - theta_2)`.
pub const TUNED_EPR_EPSILON: f64 = 0.24;
pub const TUNED_EPR_THRESHOLD: f64 = 1.25;

/// Smallest background scale for which the block covariance of `Psi` is positive.
pub fn minimal_epsilon(psi: &FieldVector) -> Result<f64> {
    let m = coefficient_matrix(psi)?;
    let singular = m.singular_values();
    Ok(singular.iter().map(|s| s * (1.0 - s)).fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub struct BipartiteEnsemble {
    state: FieldVector,
    coefficients: DMatrix<C64>,
    background: BackgroundField,
    minimal_epsilon: f64,
    joint: GaussianFieldEnsemble,
}

impl BipartiteEnsemble {
    pub fn new(psi: &FieldVector, background: BackgroundField) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(norm));
        }
        let m = coefficient_matrix(psi)?;
        let n = m.nrows();
        let eps = background.epsilon();
        let minimum = minimal_epsilon(psi)?;
        let mut block = DMatrix::zeros(2 * n, 2 * n);
        let shift = DMatrix::<C64>::identity(n, n) * C64::new(eps, 0.0);
        block.view_mut((0, 0), (n, n)).copy_from(&(&m * m.adjoint() + &shift));
        block.view_mut((0, n), (n, n)).copy_from(&m);
        block.view_mut((n, 0), (n, n)).copy_from(&m.adjoint());
        block.view_mut((n, n), (n, n)).copy_from(&(m.adjoint() * &m + &shift));
        let block = HermitianOperator::symmetrized(block)?;
        let lowest = block.min_eigenvalue();
        if lowest < -PSD_TOL {
            return Err(Error::EpsilonBelowMinimum { epsilon: eps, minimum });
        }
        let joint = GaussianFieldEnsemble::new(block)?;
        Ok(BipartiteEnsemble { state: psi.clone(), coefficients: m, background, minimal_epsilon: minimum, joint })
    }

    /// The two-qubit singlet `(|01> - |10>) / sqrt 2`.
    pub fn singlet(background: BackgroundField) -> Result<Self> {
        Self::new(&singlet_state(), background)
    }

    pub fn state(&self) -> &FieldVector {
        &self.state
    }

    /// Dimension of each party.
    pub fn party_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn background(&self) -> BackgroundField {
        self.background
    }

    pub fn minimal_epsilon(&self) -> f64 {
        self.minimal_epsilon
    }

    /// Circular covariance of the stacked field `(phi_1, conj phi_2)`.
    pub fn block_covariance(&self) -> &HermitianOperator {
        self.joint.covariance()
    }

    /// The cross block `M`.
    pub fn cross_covariance(&self) -> &DMatrix<C64> {
        &self.coefficients
    }

    pub fn reduced_first(&self) -> Result<HermitianOperator> {
        let n = self.party_dim();
        partial_trace_second(&projector_from_state(&self.state)?, n, n)
    }

    pub fn reduced_second(&self) -> Result<HermitianOperator> {
        let n = self.party_dim();
        partial_trace_first(&projector_from_state(&self.state)?, n, n)
    }

    /// `D_1 = rho_1 + eps I`.
    pub fn covariance_first(&self) -> Result<HermitianOperator> {
        Ok(self.reduced_first()?.shifted(self.background.epsilon()))
    }

    /// `D_2 = rho_2 + eps I`.
    pub fn covariance_second(&self) -> Result<HermitianOperator> {
        Ok(self.reduced_second()?.shifted(self.background.epsilon()))
    }

    pub fn sample_pair_with<R: Rng + ?Sized>(&self, rng: &mut R) -> (FieldVector, FieldVector) {
        let n = self.party_dim();
        let joint = self.joint.sample_with(rng);
        let v = joint.components();
        let first = DVector::from_fn(n, |k, _| v[k]);
        let second = DVector::from_fn(n, |k, _| v[n + k].conj());
        (FieldVector::from_dvector(first).expect("n >= 1"), FieldVector::from_dvector(second).expect("n >= 1"))
    }

    pub fn sample_pair_at(&self, seed: RandomSeed, index: u64) -> (FieldVector, FieldVector) {
        self.sample_pair_with(&mut seed.stream(index))
    }

    pub fn sample_pairs(&self, n_samples: usize, seed: RandomSeed) -> Vec<(FieldVector, FieldVector)> {
        (0..n_samples as u64).into_par_iter().map(|i| self.sample_pair_at(seed, i)).collect()
    }
}

/// Builds the ensemble of `psi` with background scale `epsilon`.
pub fn bipartite_ensemble(psi: &FieldVector, epsilon: f64) -> Result<BipartiteEnsemble> {
    BipartiteEnsemble::new(psi, BackgroundField::new(epsilon)?)
}

pub fn singlet_state() -> FieldVector {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    FieldVector::from_real(&[0.0, a, -a, 0.0]).expect("dimension 4")
}

fn check_party_operators(ensemble: &BipartiteEnsemble, a: &HermitianOperator, b: &HermitianOperator) -> Result<()> {
    check_dim(ensemble.party_dim(), a.dim())?;
    check_dim(ensemble.party_dim(), b.dim())
}

/// Exact `E f_A(phi_1) f_B(phi_2)` by Wick's theorem.
pub fn wick_moment(ensemble: &BipartiteEnsemble, a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    check_party_operators(ensemble, a, b)?;
    let means = trace_product(&ensemble.covariance_first()?, a)? * trace_product(&ensemble.covariance_second()?, b)?;
    Ok(means + wick_cross_term(ensemble, a, b)?)
}

fn wick_cross_term(ensemble: &BipartiteEnsemble, a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    let m = ensemble.cross_covariance();
    let product = a.matrix() * m * b.matrix().transpose() * m.adjoint();
    let t = product.trace();
    let scale = a.matrix().norm() * b.matrix().norm();
    if t.im.abs() > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::ImaginaryResidue(t.im));
    }
    Ok(t.re)
}

/// Renormalized correlation `E f_A f_B - Tr(D_1 A) Tr(D_2 B)`, equal to `<Psi| A (x) B |Psi>`.
pub fn quadratic_correlation(
    ensemble: &BipartiteEnsemble,
    a: &HermitianOperator,
    b: &HermitianOperator,
) -> Result<f64> {
    check_party_operators(ensemble, a, b)?;
    wick_cross_term(ensemble, a, b)
}

/// Renormalized correlation minus the product of renormalized means; zero for product states.
pub fn connected_correlation(
    ensemble: &BipartiteEnsemble,
    a: &HermitianOperator,
    b: &HermitianOperator,
) -> Result<f64> {
    let full = quadratic_correlation(ensemble, a, b)?;
    Ok(full - trace_product(&ensemble.reduced_first()?, a)? * trace_product(&ensemble.reduced_second()?, b)?)
}

fn form_value(a: &HermitianOperator, phi: &FieldVector) -> f64 {
    let v = phi.components();
    v.dotc(&(a.matrix() * v)).re
}

/// Monte Carlo estimate of the raw moment `E f_A(phi_1) f_B(phi_2)`.
pub fn wick_moment_mc(
    ensemble: &BipartiteEnsemble,
    a: &HermitianOperator,
    b: &HermitianOperator,
    n_samples: u64,
    seed: RandomSeed,
) -> Result<McEstimate> {
    check_party_operators(ensemble, a, b)?;
    if n_samples < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n_samples as usize });
    }
    Ok(estimate_mean(n_samples, seed, |_, rng| {
        let (x, y) = ensemble.sample_pair_with(rng);
        form_value(a, &x) * form_value(b, &y)
    }))
}

/// Monte Carlo estimate of the renormalized correlation, averaging
/// `(f_A - Tr D_1 A)(f_B - Tr D_2 B)`.
pub fn quadratic_correlation_mc(
    ensemble: &BipartiteEnsemble,
    a: &HermitianOperator,
    b: &HermitianOperator,
    n_samples: u64,
    seed: RandomSeed,
) -> Result<McEstimate> {
    check_party_operators(ensemble, a, b)?;
    if n_samples < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n_samples as usize });
    }
    let mean_a = trace_product(&ensemble.covariance_first()?, a)?;
    let mean_b = trace_product(&ensemble.covariance_second()?, b)?;
    Ok(estimate_mean(n_samples, seed, |_, rng| {
        let (x, y) = ensemble.sample_pair_with(rng);
        (form_value(a, &x) - mean_a) * (form_value(b, &y) - mean_b)
    }))
}

/// Polarizing beam splitter at angle `theta`: projectors on `(cos, sin)` and `(-sin, cos)`.
pub fn pbs_projectors(theta: f64) -> (HermitianOperator, HermitianOperator) {
    let (s, c) = theta.sin_cos();
    let plus = HermitianOperator::from_real_rows(&[vec![c * c, c * s], vec![c * s, s * s]]).expect("symmetric");
    let minus = HermitianOperator::from_real_rows(&[vec![s * s, -c * s], vec![-c * s, c * c]]).expect("symmetric");
    (plus, minus)
}

/// `P_+(theta) - P_-(theta)`.
pub fn spin_observable(theta: f64) -> HermitianOperator {
    let (plus, minus) = pbs_projectors(theta);
    plus.sub(&minus).expect("same dimension")
}

/// Channel `c` clicks when `||P_c phi||^2 > threshold`.
#[derive(Clone, Debug)]
pub struct ThresholdDetector {
    threshold: f64,
    channels: Vec<HermitianOperator>,
}

impl ThresholdDetector {
    pub fn new(threshold: f64, channels: Vec<HermitianOperator>) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold must be non-negative, got {threshold}")));
        }
        let first = channels.first().ok_or_else(|| Error::InvalidArgument("detector needs a channel".into()))?;
        let dim = first.dim();
        let mut total = DMatrix::<C64>::zeros(dim, dim);
        for (i, p) in channels.iter().enumerate() {
            check_dim(dim, p.dim())?;
            total += p.matrix();
            for (j, q) in channels.iter().enumerate() {
                let product = p.matrix() * q.matrix();
                let target = if i == j { p.matrix().clone() } else { DMatrix::zeros(dim, dim) };
                let defect = max_abs_diff(&product, &target);
                if defect > HERMITIAN_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "channels {i} and {j} are not orthogonal projectors (defect {defect:e})"
                    )));
                }
            }
        }
        let defect = max_abs_diff(&total, &DMatrix::identity(dim, dim));
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidArgument(format!(
                "channel projectors do not sum to identity (defect {defect:e})"
            )));
        }
        Ok(ThresholdDetector { threshold, channels })
    }

    pub fn pbs(theta: f64, threshold: f64) -> Result<Self> {
        let (plus, minus) = pbs_projectors(theta);
        Self::new(threshold, vec![plus, minus])
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn channels(&self) -> &[HermitianOperator] {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.channels[0].dim()
    }

    pub fn channel_powers(&self, phi: &FieldVector) -> Vec<f64> {
        let v = phi.components();
        self.channels.iter().map(|p| (p.matrix() * v).norm_squared()).collect()
    }

    pub fn clicks(&self, phi: &FieldVector) -> Vec<bool> {
        self.channel_powers(phi).into_iter().map(|w| w > self.threshold).collect()
    }

    fn pbs_clicks(&self, phi: &FieldVector) -> [bool; 2] {
        let v = phi.components();
        let hit = |c: usize| (self.channels[c].matrix() * v).norm_squared() > self.threshold;
        [hit(0), hit(1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    None,
    Single,
    Double,
}

impl Classification {
    pub fn of(clicks: &[bool]) -> Self {
        match clicks.iter().filter(|&&c| c).count() {
            0 => Classification::None,
            1 => Classification::Single,
            _ => Classification::Double,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::None => "none",
            Classification::Single => "single",
            Classification::Double => "double",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Classification::None),
            "single" => Ok(Classification::Single),
            "double" => Ok(Classification::Double),
            other => Err(Error::InvalidArgument(format!("unknown classification {other:?}"))),
        }
    }
}

/// Which trials enter coincidence statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostSelection {
    /// Both parties register exactly one click.
    #[default]
    KeepSingles,
    /// Both parties register at least one click.
    KeepAnyClick,
    KeepAll,
}

impl PostSelection {
    pub fn accepts(&self, first: Classification, second: Classification) -> bool {
        match self {
            PostSelection::KeepSingles => first == Classification::Single && second == Classification::Single,
            PostSelection::KeepAnyClick => first != Classification::None && second != Classification::None,
            PostSelection::KeepAll => true,
        }
    }
}

impl FromStr for PostSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep-singles" => Ok(PostSelection::KeepSingles),
            "keep-any-click" => Ok(PostSelection::KeepAnyClick),
            "keep-all" => Ok(PostSelection::KeepAll),
            other => Err(Error::InvalidArgument(format!("unknown post-selection policy {other:?}"))),
        }
    }
}

/// One coincidence window. Channel 0 is the `+` output of the beam splitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub theta1: f64,
    pub theta2: f64,
    pub clicks1: [bool; 2],
    pub clicks2: [bool; 2],
    pub accepted: bool,
}

impl TrialRecord {
    pub fn class1(&self) -> Classification {
        Classification::of(&self.clicks1)
    }

    pub fn class2(&self) -> Classification {
        Classification::of(&self.clicks2)
    }

    /// `+1` / `-1` for a single click in the `+` / `-` channel.
    pub fn outcome1(&self) -> Option<i8> {
        single_outcome(self.clicks1)
    }

    pub fn outcome2(&self) -> Option<i8> {
        single_outcome(self.clicks2)
    }
}

fn single_outcome(clicks: [bool; 2]) -> Option<i8> {
    match clicks {
        [true, false] => Some(1),
        [false, true] => Some(-1),
        _ => None,
    }
}

/// Trials with beam splitters at `theta1`, `theta2` and a common threshold.
pub fn run_trials(
    ensemble: &BipartiteEnsemble,
    theta1: f64,
    theta2: f64,
    threshold: f64,
    n_trials: u64,
    seed: RandomSeed,
    policy: PostSelection,
) -> Result<Vec<TrialRecord>> {
    let first = ThresholdDetector::pbs(theta1, threshold)?;
    let second = ThresholdDetector::pbs(theta2, threshold)?;
    run_trials_with(ensemble, (theta1, theta2), &first, &second, n_trials, seed, policy)
}

/// Trials with explicit two-channel detectors; `settings` is only recorded.
pub fn run_trials_with(
    ensemble: &BipartiteEnsemble,
    settings: (f64, f64),
    first: &ThresholdDetector,
    second: &ThresholdDetector,
    n_trials: u64,
    seed: RandomSeed,
    policy: PostSelection,
) -> Result<Vec<TrialRecord>> {
    if n_trials == 0 {
        return Err(Error::InsufficientSamples { needed: 1, found: 0 });
    }
    for detector in [first, second] {
        check_dim(ensemble.party_dim(), detector.dim())?;
        if detector.channels().len() != 2 {
            return Err(Error::InvalidArgument("trial records need two-channel detectors".into()));
        }
    }
    Ok((0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let (x, y) = ensemble.sample_pair_at(seed, trial);
            let clicks1 = first.pbs_clicks(&x);
            let clicks2 = second.pbs_clicks(&y);
            let accepted = policy.accepts(Classification::of(&clicks1), Classification::of(&clicks2));
            TrialRecord { trial, theta1: settings.0, theta2: settings.1, clicks1, clicks2, accepted }
        })
        .collect())
}

/// Aggregate counts for one party.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChannelCounts {
    pub n_trials: u64,
    /// Trials in which the channel fired (alone or together with others).
    pub clicks: Vec<u64>,
    /// Trials in which only this channel fired.
    pub singles: Vec<u64>,
    pub multiple: u64,
    pub none: u64,
}

impl ChannelCounts {
    fn empty(channels: usize) -> Self {
        ChannelCounts { clicks: vec![0; channels], singles: vec![0; channels], ..Default::default() }
    }

    fn record(&mut self, clicks: &[bool]) {
        self.n_trials += 1;
        let mut fired = 0;
        let mut last = 0;
        for (c, &hit) in clicks.iter().enumerate() {
            if hit {
                self.clicks[c] += 1;
                fired += 1;
                last = c;
            }
        }
        match fired {
            0 => self.none += 1,
            1 => self.singles[last] += 1,
            _ => self.multiple += 1,
        }
    }

    fn merge(mut self, other: ChannelCounts) -> ChannelCounts {
        self.n_trials += other.n_trials;
        self.multiple += other.multiple;
        self.none += other.none;
        for (a, b) in self.clicks.iter_mut().zip(&other.clicks) {
            *a += b;
        }
        for (a, b) in self.singles.iter_mut().zip(&other.singles) {
            *a += b;
        }
        self
    }

    pub fn click_fractions(&self) -> Vec<f64> {
        self.clicks.iter().map(|&c| c as f64 / self.n_trials as f64).collect()
    }

    /// Relative frequencies of the single-click outcomes among single-click trials.
    pub fn single_frequencies(&self) -> Vec<f64> {
        let total: u64 = self.singles.iter().sum();
        self.singles.iter().map(|&s| if total == 0 { 0.0 } else { s as f64 / total as f64 }).collect()
    }

    pub fn multiple_rate(&self) -> f64 {
        self.multiple as f64 / self.n_trials as f64
    }
}

/// Single-party detection of an ensemble.
pub fn single_party_counts(
    ensemble: &GaussianFieldEnsemble,
    detector: &ThresholdDetector,
    n_trials: u64,
    seed: RandomSeed,
) -> Result<ChannelCounts> {
    check_dim(ensemble.dim(), detector.dim())?;
    if n_trials == 0 {
        return Err(Error::InsufficientSamples { needed: 1, found: 0 });
    }
    let channels = detector.channels().len();
    Ok(reduce_blocks(
        n_trials,
        |range| {
            let mut counts = ChannelCounts::empty(channels);
            for trial in range {
                counts.record(&detector.clicks(&ensemble.sample_at(seed, trial)));
            }
            counts
        },
        ChannelCounts::merge,
        ChannelCounts::empty(channels),
    ))
}

/// Counts and derived rates of a batch of bipartite trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClickStatistics {
    pub n_trials: u64,
    pub n_accepted: u64,
    pub first: ChannelCounts,
    pub second: ChannelCounts,
    /// Accepted single-click coincidences indexed by `(outcome 1, outcome 2)` with `+` first.
    pub coincidences: [[u64; 2]; 2],
    /// Trials in which at least one party registered a double click.
    pub double_click_trials: u64,
    pub double_click_rate: f64,
    pub accepted_fraction: f64,
    /// Per-channel click frequencies of each party.
    pub frequencies1: Vec<f64>,
    pub frequencies2: Vec<f64>,
    /// No channel fired in any trial.
    pub degenerate: bool,
}

pub fn click_statistics(records: &[TrialRecord]) -> Result<ClickStatistics> {
    if records.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, found: 0 });
    }
    let mut first = ChannelCounts::empty(2);
    let mut second = ChannelCounts::empty(2);
    let mut coincidences = [[0u64; 2]; 2];
    let mut n_accepted = 0;
    let mut double_click_trials = 0;
    for r in records {
        first.record(&r.clicks1);
        second.record(&r.clicks2);
        if r.class1() == Classification::Double || r.class2() == Classification::Double {
            double_click_trials += 1;
        }
        if r.accepted {
            n_accepted += 1;
            if let (Some(a), Some(b)) = (r.outcome1(), r.outcome2()) {
                coincidences[usize::from(a < 0)][usize::from(b < 0)] += 1;
            }
        }
    }
    let n = records.len() as u64;
    let degenerate = first.clicks.iter().chain(&second.clicks).all(|&c| c == 0);
    Ok(ClickStatistics {
        n_trials: n,
        n_accepted,
        frequencies1: first.click_fractions(),
        frequencies2: second.click_fractions(),
        first,
        second,
        coincidences,
        double_click_trials,
        double_click_rate: double_click_trials as f64 / n as f64,
        accepted_fraction: n_accepted as f64 / n as f64,
        degenerate,
    })
}

/// Click correlation over accepted trials; trials without a single-click coincidence count as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickCorrelation {
    pub correlation: f64,
    pub standard_error: f64,
    pub n_accepted: u64,
}

/// `E = (N_{++} + N_{--} - N_{+-} - N_{-+}) / N_accepted`.
pub fn correlation_from_clicks(records: &[TrialRecord]) -> Result<ClickCorrelation> {
    let mut n = 0u64;
    let mut sum = 0i64;
    let mut sum_sq = 0u64;
    for r in records.iter().filter(|r| r.accepted) {
        n += 1;
        if let (Some(a), Some(b)) = (r.outcome1(), r.outcome2()) {
            sum += i64::from(a * b);
            sum_sq += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoCoincidences);
    }
    let e = sum as f64 / n as f64;
    let second_moment = sum_sq as f64 / n as f64;
    let standard_error = ((second_moment - e * e).max(0.0) / n as f64).sqrt();
    Ok(ClickCorrelation { correlation: e, standard_error, n_accepted: n })
}

/// Mean power of a rank-one channel whose power is exponential, from its click fraction.
pub fn channel_intensity(click_fraction: f64, threshold: f64) -> Result<f64> {
    if !(click_fraction > 0.0 && click_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "click fraction {click_fraction} leaves the intensity unidentified; adjust the threshold"
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("intensity inversion needs a positive threshold".into()));
    }
    Ok(threshold / (1.0 / click_fraction).ln())
}

/// Threshold placed at the mean channel power `Tr D / channels`.
pub fn calibrated_threshold(ensemble: &GaussianFieldEnsemble, channels: usize) -> f64 {
    ensemble.dispersion() / channels as f64
}

fn check_rank_one(detector: &ThresholdDetector) -> Result<()> {
    for (c, p) in detector.channels().iter().enumerate() {
        if (p.trace() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("channel {c} is not rank one (trace {})", p.trace())));
        }
    }
    Ok(())
}

/// Background scale measured by the detector itself on vacuum fluctuations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackgroundCalibration {
    pub threshold: f64,
    pub vacuum_click_fraction: f64,
    pub epsilon_hat: f64,
    pub counts: ChannelCounts,
}

pub fn calibrate_background(
    background: BackgroundField,
    detector: &ThresholdDetector,
    n_trials: u64,
    seed: RandomSeed,
) -> Result<BackgroundCalibration> {
    check_rank_one(detector)?;
    let vacuum = GaussianFieldEnsemble::background_only(detector.dim(), background)?;
    let counts = single_party_counts(&vacuum, detector, n_trials, seed)?;
    let fired: u64 = counts.clicks.iter().sum();
    let fraction = fired as f64 / (counts.n_trials * detector.channels().len() as u64) as f64;
    Ok(BackgroundCalibration {
        threshold: detector.threshold(),
        vacuum_click_fraction: fraction,
        epsilon_hat: channel_intensity(fraction, detector.threshold())?,
        counts,
    })
}

/// Born probabilities recovered from click fractions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BornFromClicks {
    pub counts: ChannelCounts,
    pub raw_single_frequencies: Vec<f64>,
    pub intensities: Vec<f64>,
    pub epsilon_hat: f64,
    pub born: Vec<f64>,
}

/// `p_c = (I_c - eps_hat) / sum (I - eps_hat)` with `I_c = d / ln(1 / f_c)`.
pub fn born_from_clicks(
    counts: &ChannelCounts,
    threshold: f64,
    calibration: &BackgroundCalibration,
) -> Result<BornFromClicks> {
    let intensities =
        counts.click_fractions().into_iter().map(|f| channel_intensity(f, threshold)).collect::<Result<Vec<_>>>()?;
    let signal: Vec<f64> = intensities.iter().map(|i| i - calibration.epsilon_hat).collect();
    let total: f64 = signal.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("no signal above the calibrated background".into()));
    }
    Ok(BornFromClicks {
        raw_single_frequencies: counts.single_frequencies(),
        born: signal.iter().map(|s| s / total).collect(),
        intensities,
        epsilon_hat: calibration.epsilon_hat,
        counts: counts.clone(),
    })
}

/// Vacuum calibration followed by a signal run with the same detector.
pub fn calibrated_born_frequencies(
    ensemble: &GaussianFieldEnsemble,
    detector: &ThresholdDetector,
    n_trials: u64,
    seed: RandomSeed,
) -> Result<BornFromClicks> {
    check_rank_one(detector)?;
    let calibration = calibrate_background(ensemble.background(), detector, n_trials, seed.derive(1))?;
    let counts = single_party_counts(ensemble, detector, n_trials, seed.derive(2))?;
    born_from_clicks(&counts, detector.threshold(), &calibration)
}

const CSV_HEADER: [&str; 10] = [
    "trial",
    "theta1",
    "theta2",
    "click1_plus",
    "click1_minus",
    "click2_plus",
    "click2_minus",
    "class1",
    "class2",
    "accepted",
];

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_flag(s: &str, line: usize) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::InvalidArgument(format!("row {line}: expected a boolean, found {other:?}"))),
    }
}

pub fn write_trials_csv<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            r.trial.to_string().as_str(),
            &r.theta1.to_string(),
            &r.theta2.to_string(),
            flag(r.clicks1[0]),
            flag(r.clicks1[1]),
            flag(r.clicks2[0]),
            flag(r.clicks2[1]),
            r.class1().as_str(),
            r.class2().as_str(),
            flag(r.accepted),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the trial schema written by [`write_trials_csv`]; classification columns must agree
/// with the click flags.
pub fn read_trials_csv<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected trial header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut records = Vec::new();
    for (line, row) in input.records().enumerate() {
        let row = row?;
        let number = |k: usize| -> Result<f64> {
            row[k].trim().parse().map_err(|_| Error::InvalidArgument(format!("row {line}: bad number {:?}", &row[k])))
        };
        let trial = row[0]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("row {line}: bad trial index {:?}", &row[0])))?;
        let record = TrialRecord {
            trial,
            theta1: number(1)?,
            theta2: number(2)?,
            clicks1: [parse_flag(&row[3], line)?, parse_flag(&row[4], line)?],
            clicks2: [parse_flag(&row[5], line)?, parse_flag(&row[6], line)?],
            accepted: parse_flag(&row[9], line)?,
        };
        let class1: Classification = row[7].trim().parse()?;
        let class2: Classification = row[8].trim().parse()?;
        if class1 != record.class1() || class2 != record.class2() {
            return Err(Error::InvalidArgument(format!("row {line}: classification disagrees with click flags")));
        }
        records.push(record);
    }
    Ok(records)
}
