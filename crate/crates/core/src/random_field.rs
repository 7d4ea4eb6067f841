//! Zero-mean circular complex Gaussian field ensembles.
//!
//! An ensemble is fixed by its covariance operator `D = E[phi phi^H]`; the mean is zero
//! and the pseudo-covariance `E[phi phi^T]` vanishes. Samples are drawn as `phi = S xi`
//! with `S = V sqrt(Lambda)` from the eigendecomposition of `D`, which tolerates the
//! rank-deficient covariances of pure states. Every sample is tied to a
//! `(seed, index)` pair through its own ChaCha stream.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{projector_from_state, DensityOperator, FieldVector, HermitianOperator, C64, PSD_TOL};

/// Covariance scale of the white-noise background, `D_background = epsilon I`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackgroundField(f64);

impl BackgroundField {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be non-negative and finite, got {epsilon}")));
        }
        Ok(BackgroundField(epsilon))
    }

    pub fn none() -> Self {
        BackgroundField(0.0)
    }

    pub fn epsilon(&self) -> f64 {
        self.0
    }
}

/// Master seed; trial `i` always reads stream `i` of a ChaCha8 generator keyed by the seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed(u64);

impl RandomSeed {
    pub fn new(master: u64) -> Self {
        RandomSeed(master)
    }

    pub fn master(&self) -> u64 {
        self.0
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// Independent child seed for a labelled sub-experiment (splitmix64 finalizer).
    pub fn derive(&self, label: u64) -> RandomSeed {
        let mut z = self.0 ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        RandomSeed(z ^ (z >> 31))
    }
}

/// Standard circular complex normal: independent real and imaginary parts of variance 1/2.
pub fn circular_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Eigenvalue-based square root factor `S` with `S S^H = D`; small negative eigenvalues
/// (down to `-PSD_TOL`) are clipped to zero.
pub(crate) fn sampler_factor(covariance: &HermitianOperator) -> Result<DMatrix<C64>> {
    let (values, vectors) = covariance.eigh();
    if values[0] < -PSD_TOL {
        return Err(Error::NotPositive(values[0]));
    }
    let n = covariance.dim();
    let roots = DVector::from_iterator(n, values.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)));
    Ok(vectors * DMatrix::from_diagonal(&roots))
}

#[derive(Clone, Debug)]
pub struct GaussianFieldEnsemble {
    covariance: HermitianOperator,
    factor: DMatrix<C64>,
    background: BackgroundField,
}

impl GaussianFieldEnsemble {
    /// Ensemble with covariance `D` exactly as given (no background recorded).
    pub fn new(covariance: HermitianOperator) -> Result<Self> {
        Self::with_background(covariance, BackgroundField::none())
    }

    /// `covariance` must already contain the background part; `background` only records it.
    pub(crate) fn with_background(covariance: HermitianOperator, background: BackgroundField) -> Result<Self> {
        let factor = sampler_factor(&covariance)?;
        Ok(GaussianFieldEnsemble { covariance, factor, background })
    }

    /// `D = psi psi^H / ||psi||^2 + epsilon I`.
    pub fn from_pure_state(psi: &FieldVector, background: BackgroundField) -> Result<Self> {
        let projector = projector_from_state(psi)?;
        Self::with_background(projector.shifted(background.epsilon()), background)
    }

    /// `D = rho + epsilon I`.
    pub fn from_density(rho: &DensityOperator, background: BackgroundField) -> Result<Self> {
        Self::with_background(rho.operator().shifted(background.epsilon()), background)
    }

    /// Vacuum fluctuations alone, `D = epsilon I`.
    pub fn background_only(dim: usize, background: BackgroundField) -> Result<Self> {
        Self::with_background(HermitianOperator::zeros(dim).shifted(background.epsilon()), background)
    }

    pub fn covariance(&self) -> &HermitianOperator {
        &self.covariance
    }

    pub fn background(&self) -> BackgroundField {
        self.background
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn sampler_factor(&self) -> &DMatrix<C64> {
        &self.factor
    }

    /// `sigma^2 = E ||phi||^2 = Tr D`.
    pub fn dispersion(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldVector {
        let xi = DVector::from_fn(self.dim(), |_, _| circular_normal(rng));
        FieldVector::from_dvector(&self.factor * xi).expect("dimension >= 1")
    }

    /// The sample tied to trial `index`.
    pub fn sample_at(&self, seed: RandomSeed, index: u64) -> FieldVector {
        self.sample_with(&mut seed.stream(index))
    }

    pub fn sample(&self, n_samples: usize, seed: RandomSeed) -> Vec<FieldVector> {
        (0..n_samples as u64).into_par_iter().map(|i| self.sample_at(seed, i)).collect()
    }

    /// Stationary signal, white in time: step `t` is an independent draw.
    pub fn time_series(&self, length: usize, seed: RandomSeed) -> Vec<FieldVector> {
        self.sample(length, seed)
    }

    /// Wraps a new covariance while keeping the recorded background.
    pub(crate) fn replace_covariance(&self, covariance: HermitianOperator) -> Result<Self> {
        Self::with_background(covariance, self.background)
    }
}

/// Serialized form of an ensemble: full covariance plus the background scale it contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub covariance: HermitianOperator,
    pub epsilon: f64,
}

impl From<&GaussianFieldEnsemble> for EnsembleRecord {
    fn from(e: &GaussianFieldEnsemble) -> Self {
        EnsembleRecord { covariance: e.covariance.clone(), epsilon: e.background.epsilon() }
    }
}

impl TryFrom<EnsembleRecord> for GaussianFieldEnsemble {
    type Error = Error;

    fn try_from(record: EnsembleRecord) -> Result<Self> {
        GaussianFieldEnsemble::with_background(record.covariance, BackgroundField::new(record.epsilon)?)
    }
}

/// Power of a field sample, `||phi||^2`.
pub fn power(phi: &FieldVector) -> f64 {
    phi.norm_sqr()
}

pub fn dispersion(ensemble: &GaussianFieldEnsemble) -> f64 {
    ensemble.dispersion()
}

fn check_samples(samples: &[FieldVector]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: samples.len() });
    }
    let dim = samples[0].dim();
    if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    Ok(dim)
}

/// `(1/N) sum phi phi^H`; the mean is taken to be zero, not subtracted.
pub fn empirical_covariance(samples: &[FieldVector]) -> Result<HermitianOperator> {
    let dim = check_samples(samples)?;
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for s in samples {
        let v = s.components();
        acc += v * v.adjoint();
    }
    HermitianOperator::symmetrized(acc.unscale(samples.len() as f64))
}

/// `(1/N) sum phi phi^T`, which vanishes for circular ensembles.
pub fn empirical_pseudo_covariance(samples: &[FieldVector]) -> Result<DMatrix<C64>> {
    let dim = check_samples(samples)?;
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for s in samples {
        let v = s.components();
        acc += v * v.transpose();
    }
    Ok(acc.unscale(samples.len() as f64))
}

/// `(1/N) sum phi`.
pub fn empirical_mean(samples: &[FieldVector]) -> Result<FieldVector> {
    let dim = check_samples(samples)?;
    let mut acc = DVector::<C64>::zeros(dim);
    for s in samples {
        acc += s.components();
    }
    FieldVector::from_dvector(acc.unscale(samples.len() as f64))
}

/// CSV with header `re_0,im_0,re_1,im_1,...`, one row per sample.
pub fn write_samples_csv<W: Write>(samples: &[FieldVector], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let dim = samples.first().map_or(0, |s| s.dim());
    let header: Vec<String> = (0..dim).flat_map(|k| [format!("re_{k}"), format!("im_{k}")]).collect();
    out.write_record(&header)?;
    for s in samples {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
        }
        out.write_record(s.as_slice().iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::random;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn real_rows(rows: &[Vec<f64>]) -> HermitianOperator {
        HermitianOperator::from_real_rows(rows).unwrap()
    }

    #[test]
    fn pure_state_ensemble_examples() {
        let up = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&up, BackgroundField::none()).unwrap();
        assert_eq!(e.covariance(), &real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]));

        let e = GaussianFieldEnsemble::from_pure_state(&up, BackgroundField::new(0.1).unwrap()).unwrap();
        assert!(e.covariance().max_abs_diff(&real_rows(&[vec![1.1, 0.0], vec![0.0, 0.1]])) < 1e-15);

        let plus = FieldVector::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&plus, BackgroundField::none()).unwrap();
        assert!(e.covariance().max_abs_diff(&real_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]])) < 1e-15);

        assert_eq!(
            GaussianFieldEnsemble::from_pure_state(&FieldVector::zeros(2), BackgroundField::none()).err(),
            Some(Error::ZeroVector)
        );
    }

    #[test]
    fn density_ensemble_examples() {
        let mixed = DensityOperator::maximally_mixed(2);
        let e = GaussianFieldEnsemble::from_density(&mixed, BackgroundField::none()).unwrap();
        assert_eq!(e.covariance(), &HermitianOperator::identity(2).scaled(0.5));
        let e = GaussianFieldEnsemble::from_density(&mixed, BackgroundField::new(0.25).unwrap()).unwrap();
        assert_eq!(e.covariance(), &HermitianOperator::identity(2).scaled(0.75));
        let rho = DensityOperator::diagonal(&[0.9, 0.1]).unwrap();
        let e = GaussianFieldEnsemble::from_density(&rho, BackgroundField::none()).unwrap();
        assert_eq!(e.covariance(), rho.operator());
    }

    #[test]
    fn negative_background_rejected() {
        assert!(BackgroundField::new(-0.1).is_err());
        assert!(BackgroundField::new(f64::NAN).is_err());
    }

    #[test]
    fn clipping_and_rejection_of_negative_eigenvalues() {
        let almost = HermitianOperator::from_real_diagonal(&[1.0, -1e-12]).unwrap();
        assert!(GaussianFieldEnsemble::new(almost).is_ok());
        let negative = HermitianOperator::from_real_diagonal(&[1.0, -1e-6]).unwrap();
        assert!(matches!(GaussianFieldEnsemble::new(negative), Err(Error::NotPositive(_))));
    }

    #[test]
    fn zero_covariance_gives_zero_samples() {
        let e = GaussianFieldEnsemble::new(HermitianOperator::zeros(3)).unwrap();
        assert!(e.sample(50, RandomSeed::new(1)).iter().all(|s| s.norm_sqr() == 0.0));
        assert!(e.time_series(20, RandomSeed::new(2)).iter().all(|s| s.norm_sqr() == 0.0));
    }

    #[test]
    fn unit_variance_scalar_field() {
        let e = GaussianFieldEnsemble::new(HermitianOperator::identity(1)).unwrap();
        let samples = e.sample(1_000_000, RandomSeed::new(2024));
        let mean_power = samples.iter().map(power).sum::<f64>() / samples.len() as f64;
        assert!((mean_power - 1.0).abs() <= 0.005, "{mean_power}");
    }

    #[test]
    fn rank_one_support() {
        let up = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&up, BackgroundField::none()).unwrap();
        for s in e.sample(1000, RandomSeed::new(4)) {
            assert_eq!(s.as_slice()[1], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn empirical_covariance_examples() {
        let a = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        let b = FieldVector::from_real(&[-1.0, 0.0]).unwrap();
        assert_eq!(empirical_covariance(&[a, b]).unwrap(), real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]));

        let c = FieldVector::from_real(&[0.0, 2.0]).unwrap();
        assert_eq!(empirical_covariance(&[c.clone(), c]).unwrap(), real_rows(&[vec![0.0, 0.0], vec![0.0, 4.0]]));

        assert_eq!(empirical_covariance(&[]), Err(Error::InsufficientSamples { needed: 2, found: 0 }));
    }

    #[test]
    fn empirical_covariance_of_mixed_state() {
        let e = GaussianFieldEnsemble::new(HermitianOperator::identity(2).scaled(0.5)).unwrap();
        let est = empirical_covariance(&e.sample(100_000, RandomSeed::new(8))).unwrap();
        assert!(est.max_abs_diff(e.covariance()) <= 0.02);
    }

    #[test]
    fn power_and_dispersion() {
        assert_eq!(power(&FieldVector::zeros(2)), 0.0);
        assert_eq!(power(&FieldVector::new(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]).unwrap()), 2.0);
        let mut rng = RandomSeed::new(3).stream(0);
        for n in 2..6 {
            let rho = random::density(n, &mut rng);
            let e = GaussianFieldEnsemble::from_density(&rho, BackgroundField::new(0.3).unwrap()).unwrap();
            assert!((dispersion(&e) - (1.0 + n as f64 * 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn time_series_ergodic_power() {
        let e = GaussianFieldEnsemble::new(HermitianOperator::identity(2)).unwrap();
        let seed = RandomSeed::new(99);
        let series = e.time_series(1_000_000, seed);
        let avg = series.iter().map(power).sum::<f64>() / series.len() as f64;
        assert!((avg - 2.0).abs() <= 0.02, "{avg}");
        assert_eq!(e.time_series(1, seed), e.sample(1, seed));
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RandomSeed::new(1);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(5), s.derive(5));
    }

    #[test]
    fn samples_csv_layout() {
        let samples = vec![
            FieldVector::new(vec![C64::new(1.0, 2.0), C64::new(3.0, -4.0)]).unwrap(),
            FieldVector::new(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.25)]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_samples_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "re_0,im_0,re_1,im_1\n1,2,3,-4\n0.5,0,0,0.25\n");
    }

    #[test]
    fn ensemble_record_round_trip() {
        let up = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&up, BackgroundField::new(0.1).unwrap()).unwrap();
        let json = serde_json::to_string(&EnsembleRecord::from(&e)).unwrap();
        let back: EnsembleRecord = serde_json::from_str(&json).unwrap();
        let e2 = GaussianFieldEnsemble::try_from(back).unwrap();
        assert_eq!(e2.covariance(), e.covariance());
        assert_eq!(e2.background(), e.background());
    }
}
