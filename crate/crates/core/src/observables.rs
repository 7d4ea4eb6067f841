//! Field functionals and their classical averages.
//!
//! A quantum observable `A` corresponds to the quadratic form `f_A(phi) = <A phi, phi>`.
//! For a zero-mean Gaussian field with covariance `D` its average is `Tr(D A)`; with a
//! background `epsilon I` the extra `epsilon Tr A` is removed by [`renormalize`].
//! Smooth nonquadratic functionals are reduced to their quadratic part through the
//! Hessian at the origin, taken in real coordinates `phi = q + i p`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, trace_product, FieldVector, HermitianOperator, C64, HERMITIAN_TOL};
use crate::montecarlo::{estimate_mean, McEstimate};
use crate::random_field::{GaussianFieldEnsemble, RandomSeed};

/// Default finite-difference step for [`hessian_extract`].
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-3;

/// `f_A(phi) = <A phi, phi> = phi^H A phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    operator: HermitianOperator,
}

impl QuadraticForm {
    pub fn new(operator: HermitianOperator) -> Self {
        QuadraticForm { operator }
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn evaluate(&self, phi: &FieldVector) -> Result<f64> {
        let a_phi = self.operator.apply(phi)?;
        let value = a_phi.inner(phi)?;
        let scale = (self.operator.matrix().norm() * phi.norm_sqr()).max(1.0);
        if value.im.abs() > HERMITIAN_TOL * scale {
            return Err(Error::ImaginaryResidue(value.im));
        }
        Ok(value.re)
    }
}

pub fn evaluate_quadratic(form: &QuadraticForm, phi: &FieldVector) -> Result<f64> {
    form.evaluate(phi)
}

/// Real coordinates `(q_1..q_n, p_1..p_n)` of `phi = q + i p`.
pub fn to_phase_coordinates(phi: &FieldVector) -> Vec<f64> {
    let s = phi.as_slice();
    s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)).collect()
}

/// Inverse of [`to_phase_coordinates`]; `x` must have even length.
pub fn from_phase_coordinates(x: &[f64]) -> Result<FieldVector> {
    if !x.len().is_multiple_of(2) || x.is_empty() {
        return Err(Error::InvalidArgument(format!("phase coordinates need even length, got {}", x.len())));
    }
    let n = x.len() / 2;
    FieldVector::new((0..n).map(|k| C64::new(x[k], x[n + k])).collect())
}

type Evaluator = Arc<dyn Fn(&FieldVector) -> f64 + Send + Sync>;
type Gradient = Arc<dyn Fn(&FieldVector) -> Vec<f64> + Send + Sync>;

/// A smooth real functional of the field with `f(0) = 0`.
///
/// The optional gradient is taken with respect to the phase coordinates `(q, p)`.
#[derive(Clone)]
pub struct FieldFunctional {
    name: String,
    dim: usize,
    smoothness: u32,
    evaluator: Evaluator,
    gradient: Option<Gradient>,
}

impl fmt::Debug for FieldFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldFunctional")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("smoothness", &self.smoothness)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl FieldFunctional {
    /// Registers `f`; rejects it unless `f(0) == 0` exactly.
    pub fn new<F>(name: impl Into<String>, dim: usize, smoothness: u32, f: F) -> Result<Self>
    where
        F: Fn(&FieldVector) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("functional dimension must be >= 1".into()));
        }
        let at_origin = f(&FieldVector::zeros(dim));
        if at_origin != 0.0 {
            return Err(Error::NonzeroAtOrigin(at_origin));
        }
        Ok(FieldFunctional { name: name.into(), dim, smoothness, evaluator: Arc::new(f), gradient: None })
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&FieldVector) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn evaluate(&self, phi: &FieldVector) -> Result<f64> {
        check_dim(self.dim, phi.dim())?;
        Ok((self.evaluator)(phi))
    }

    pub fn analytic_gradient(&self, phi: &FieldVector) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(phi))
    }

    pub fn zero(dim: usize) -> Self {
        FieldFunctional::new("zero", dim, u32::MAX, |_| 0.0)
            .expect("zero functional")
            .with_gradient(move |phi| vec![0.0; 2 * phi.dim()])
    }

    /// `||phi||^2`.
    pub fn power(dim: usize) -> Self {
        FieldFunctional::new("power", dim, u32::MAX, |phi| phi.norm_sqr())
            .expect("power vanishes at 0")
            .with_gradient(|phi| to_phase_coordinates(phi).into_iter().map(|x| 2.0 * x).collect())
    }

    /// `||phi||^4`.
    pub fn quartic_power(dim: usize) -> Self {
        FieldFunctional::new("quartic_power", dim, u32::MAX, |phi| phi.norm_sqr().powi(2))
            .expect("quartic vanishes at 0")
            .with_gradient(|phi| {
                let p = phi.norm_sqr();
                to_phase_coordinates(phi).into_iter().map(|x| 4.0 * p * x).collect()
            })
    }

    /// `<A phi, phi>`; the gradient in `(q, p)` is `(Re 2A phi, Im 2A phi)`.
    pub fn quadratic(form: QuadraticForm) -> Self {
        let dim = form.dim();
        let grad_form = form.clone();
        FieldFunctional::new("quadratic", dim, u32::MAX, move |phi| {
            let a_phi = form.operator().apply(phi).expect("dimension checked");
            a_phi.inner(phi).expect("dimension checked").re
        })
        .expect("quadratic form vanishes at 0")
        .with_gradient(move |phi| {
            let a_phi = grad_form.operator().apply(phi).expect("dimension checked");
            to_phase_coordinates(&a_phi).into_iter().map(|x| 2.0 * x).collect()
        })
    }

    /// Pointwise sum; the gradient is kept when both terms provide one.
    pub fn sum(a: &FieldFunctional, b: &FieldFunctional) -> Result<Self> {
        check_dim(a.dim, b.dim)?;
        let (fa, fb) = (a.evaluator.clone(), b.evaluator.clone());
        let mut out = FieldFunctional::new(
            format!("{}+{}", a.name, b.name),
            a.dim,
            a.smoothness.min(b.smoothness),
            move |phi| fa(phi) + fb(phi),
        )?;
        if let (Some(ga), Some(gb)) = (a.gradient.clone(), b.gradient.clone()) {
            out = out.with_gradient(move |phi| ga(phi).into_iter().zip(gb(phi)).map(|(x, y)| x + y).collect());
        }
        Ok(out)
    }
}

/// Exact Gaussian average of a quadratic form, `Tr(D A)`.
pub fn classical_average_exact(ensemble: &GaussianFieldEnsemble, form: &QuadraticForm) -> Result<f64> {
    trace_product(ensemble.covariance(), form.operator())
}

/// Monte Carlo mean of `f` over `n_samples` draws; sample `i` uses stream `i` of `seed`.
pub fn classical_average_mc(
    ensemble: &GaussianFieldEnsemble,
    f: &FieldFunctional,
    n_samples: u64,
    seed: RandomSeed,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n_samples as usize });
    }
    check_dim(f.dim(), ensemble.dim())?;
    let est = estimate_mean(n_samples, seed, |_, rng| (f.evaluator)(&ensemble.sample_with(rng)));
    if !est.mean.is_finite() {
        return Err(Error::NonFinite(format!("Monte Carlo average of {}", f.name())));
    }
    Ok(est)
}

/// Removes the background contribution: `average - epsilon Tr A`.
pub fn renormalize(average: f64, observable: &HermitianOperator, epsilon: f64) -> f64 {
    average - epsilon * observable.trace()
}

/// Exact `E <phi, y>`, which is zero for every zero-mean ensemble.
pub fn linear_functional_average(ensemble: &GaussianFieldEnsemble, y: &FieldVector) -> Result<C64> {
    check_dim(ensemble.dim(), y.dim())?;
    Ok(C64::new(0.0, 0.0))
}

/// Monte Carlo estimate of `E <phi, y>`, real and imaginary parts separately.
pub fn linear_functional_average_mc(
    ensemble: &GaussianFieldEnsemble,
    y: &FieldVector,
    n_samples: u64,
    seed: RandomSeed,
) -> Result<(McEstimate, McEstimate)> {
    check_dim(ensemble.dim(), y.dim())?;
    if n_samples < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n_samples as usize });
    }
    let inner = |rng: &mut rand_chacha::ChaCha8Rng| ensemble.sample_with(rng).inner(y).expect("dimension checked");
    let re = estimate_mean(n_samples, seed, |_, rng| inner(rng).re);
    let im = estimate_mean(n_samples, seed, |_, rng| inner(rng).im);
    Ok((re, im))
}

fn eval_at(f: &FieldFunctional, x: &[f64]) -> Result<f64> {
    let v = (f.evaluator)(&from_phase_coordinates(x)?);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{} evaluated to {v}", f.name())));
    }
    Ok(v)
}

fn central_hessian(f: &FieldFunctional, h: f64) -> Result<DMatrix<f64>> {
    let m = 2 * f.dim();
    let mut hess = DMatrix::zeros(m, m);
    let mut x = vec![0.0; m];
    for i in 0..m {
        x[i] = h;
        let plus = eval_at(f, &x)?;
        x[i] = -h;
        let minus = eval_at(f, &x)?;
        x[i] = 0.0;
        hess[(i, i)] = (plus - 2.0 * (f.evaluator)(&FieldVector::zeros(f.dim())) + minus) / (h * h);
        for j in (i + 1)..m {
            let mut corner = |si: f64, sj: f64| {
                x[i] = si * h;
                x[j] = sj * h;
                let v = eval_at(f, &x);
                x[i] = 0.0;
                x[j] = 0.0;
                v
            };
            let value =
                (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?) / (4.0 * h * h);
            hess[(i, j)] = value;
            hess[(j, i)] = value;
        }
    }
    Ok(hess)
}

/// Hessian of `f` at the origin in phase coordinates, central differences at `step`
/// and `step/2` combined by one Richardson extrapolation.
pub fn real_hessian(f: &FieldFunctional, step: f64) -> Result<DMatrix<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let coarse = central_hessian(f, step)?;
    let fine = central_hessian(f, step / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Operator `A` whose quadratic form is the second-order part of `f` at the origin,
/// i.e. `A = f''(0)/2` reassembled from phase coordinates.
///
/// With `A = R + iS`, the form `<A phi, phi>` has real Hessian `2 [[R, -S], [S, R]]`.
/// Any part of the Hessian outside that pattern couples to `phi phi^T` and has no
/// operator counterpart; above `10 step^2` it is reported as `NotPhaseInvariant`.
pub fn hessian_extract(f: &FieldFunctional, step: f64) -> Result<HermitianOperator> {
    let hess = real_hessian(f, step)?;
    let n = f.dim();
    let block = |r: usize, c: usize| hess.view((r * n, c * n), (n, n)).into_owned();
    let (hqq, hqp, hpq, hpp) = (block(0, 0), block(0, 1), block(1, 0), block(1, 1));

    let residual = (&hqq - &hpp).abs().max().max((&hqp + &hpq).abs().max()) / 4.0;
    let tol = 10.0 * step * step;
    if residual > tol {
        return Err(Error::NotPhaseInvariant(residual));
    }
    let re = (&hqq + &hpp) / 4.0;
    let im = (&hpq - &hqp) / 4.0;
    let a = DMatrix::from_fn(n, n, |i, j| C64::new(re[(i, j)], im[(i, j)]));
    HermitianOperator::symmetrized(a)
}

/// Central-difference gradient in phase coordinates at `phi`.
pub fn finite_difference_gradient(f: &FieldFunctional, phi: &FieldVector, step: f64) -> Result<Vec<f64>> {
    check_dim(f.dim(), phi.dim())?;
    let mut x = to_phase_coordinates(phi);
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = eval_at(f, &x)?;
        x[i] = orig - step;
        let minus = eval_at(f, &x)?;
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Gap between the Monte Carlo average of `f` and its Born term `Tr(D A_f)`.
#[derive(Clone, Debug, Serialize)]
pub struct ApproximationReport {
    pub monte_carlo: McEstimate,
    pub born_term: f64,
    pub gap: f64,
    pub standard_error: f64,
    pub quadratic_part: HermitianOperator,
}

pub fn quadratic_approximation_error(
    f: &FieldFunctional,
    ensemble: &GaussianFieldEnsemble,
    n_samples: u64,
    seed: RandomSeed,
) -> Result<ApproximationReport> {
    let quadratic_part = hessian_extract(f, DEFAULT_HESSIAN_STEP)?;
    let born_term = trace_product(ensemble.covariance(), &quadratic_part)?;
    let monte_carlo = classical_average_mc(ensemble, f, n_samples, seed)?;
    Ok(ApproximationReport {
        gap: (monte_carlo.mean - born_term).abs(),
        standard_error: monte_carlo.standard_error,
        born_term,
        monte_carlo,
        quadratic_part,
    })
}

/// `<A phi, phi>` evaluated for a batch, convenient for exports.
pub fn quadratic_values(form: &QuadraticForm, samples: &[FieldVector]) -> Result<Vec<f64>> {
    samples.iter().map(|s| form.evaluate(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{random, DensityOperator};
    use crate::random_field::BackgroundField;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn sigma_z() -> HermitianOperator {
        HermitianOperator::from_real_diagonal(&[1.0, -1.0]).unwrap()
    }

    fn sigma_x() -> HermitianOperator {
        HermitianOperator::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn evaluate_quadratic_examples() {
        let phi = FieldVector::new(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]).unwrap();
        assert_eq!(QuadraticForm::new(HermitianOperator::identity(2)).evaluate(&phi).unwrap(), 2.0);
        let up = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        assert_eq!(QuadraticForm::new(sigma_z()).evaluate(&up).unwrap(), 1.0);
        let plus = FieldVector::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        assert!((QuadraticForm::new(sigma_x()).evaluate(&plus).unwrap() - 1.0).abs() < 1e-15);
        assert!(QuadraticForm::new(sigma_x()).evaluate(&FieldVector::zeros(3)).is_err());
    }

    #[test]
    fn exact_average_examples() {
        let up = FieldVector::from_real(&[1.0, 0.0]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&up, BackgroundField::none()).unwrap();
        assert_eq!(classical_average_exact(&e, &QuadraticForm::new(sigma_z())).unwrap(), 1.0);

        let e = GaussianFieldEnsemble::from_density(
            &DensityOperator::maximally_mixed(2),
            BackgroundField::new(0.3).unwrap(),
        )
        .unwrap();
        assert_eq!(classical_average_exact(&e, &QuadraticForm::new(sigma_x())).unwrap(), 0.0);

        let rho = DensityOperator::diagonal(&[0.9, 0.1]).unwrap();
        let e = GaussianFieldEnsemble::from_density(&rho, BackgroundField::new(0.2).unwrap()).unwrap();
        let avg = classical_average_exact(&e, &QuadraticForm::new(sigma_z())).unwrap();
        assert!((avg - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mc_average_examples() {
        let e = GaussianFieldEnsemble::new(HermitianOperator::identity(2)).unwrap();
        let zero = classical_average_mc(&e, &FieldFunctional::zero(2), 100, RandomSeed::new(1)).unwrap();
        assert_eq!((zero.mean, zero.standard_error), (0.0, 0.0));

        let est = classical_average_mc(&e, &FieldFunctional::power(2), 100_000, RandomSeed::new(2)).unwrap();
        assert!(est.within_sigmas(2.0, 5.0), "{est:?}");

        let mut rng = RandomSeed::new(3).stream(0);
        let psi = random::unit_vector(3, &mut rng);
        let a = random::hermitian(3, 1.0, &mut rng);
        let e = GaussianFieldEnsemble::from_pure_state(&psi, BackgroundField::new(0.2).unwrap()).unwrap();
        let form = QuadraticForm::new(a);
        let exact = classical_average_exact(&e, &form).unwrap();
        let est = classical_average_mc(&e, &FieldFunctional::quadratic(form), 100_000, RandomSeed::new(4)).unwrap();
        assert!(est.within_sigmas(exact, 5.0), "{est:?} vs {exact}");

        assert!(classical_average_mc(&e, &FieldFunctional::power(3), 1, RandomSeed::new(1)).is_err());
    }

    #[test]
    fn renormalize_examples() {
        let plus = FieldVector::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        assert_eq!(renormalize(1.0, &sigma_x(), 0.3), 1.0);
        assert_eq!(renormalize(0.25, &sigma_z(), 0.7), 0.25);
        let a = HermitianOperator::from_real_diagonal(&[2.0, 0.5]).unwrap();
        let e = GaussianFieldEnsemble::from_pure_state(&plus, BackgroundField::new(0.3).unwrap()).unwrap();
        let raw = classical_average_exact(&e, &QuadraticForm::new(a.clone())).unwrap();
        let born = QuadraticForm::new(a.clone()).evaluate(&plus).unwrap();
        assert!((renormalize(raw, &a, 0.3) - born).abs() < 1e-15);
    }

    #[test]
    fn linear_functional_vanishes() {
        let mut rng = RandomSeed::new(12).stream(0);
        let rho = random::density(4, &mut rng);
        let e = GaussianFieldEnsemble::from_density(&rho, BackgroundField::new(0.1).unwrap()).unwrap();
        let y = random::unit_vector(4, &mut rng);
        assert_eq!(linear_functional_average(&e, &y).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(linear_functional_average(&e, &FieldVector::zeros(4)).unwrap(), C64::new(0.0, 0.0));
        let (re, im) = linear_functional_average_mc(&e, &y, 100_000, RandomSeed::new(5)).unwrap();
        assert!(C64::new(re.mean, im.mean).norm() <= 0.05);
        assert!(linear_functional_average(&e, &FieldVector::zeros(2)).is_err());
    }

    #[test]
    fn functional_must_vanish_at_origin() {
        let err = FieldFunctional::new("shifted", 2, 2, |phi| phi.norm_sqr() + 1.0).unwrap_err();
        assert_eq!(err, Error::NonzeroAtOrigin(1.0));
    }

    #[test]
    fn hessian_of_quadratic_and_quartic() {
        let f = FieldFunctional::quadratic(QuadraticForm::new(sigma_z()));
        let a = hessian_extract(&f, DEFAULT_HESSIAN_STEP).unwrap();
        assert!(a.max_abs_diff(&sigma_z()) < 1e-6);

        let g = FieldFunctional::quartic_power(3);
        assert!(hessian_extract(&g, DEFAULT_HESSIAN_STEP).unwrap().is_zero_within(1e-6));
    }

    #[test]
    fn hessian_of_complex_operator_plus_quartic() {
        let mut rng = RandomSeed::new(21).stream(0);
        let a = random::hermitian(3, 1.0, &mut rng);
        let f = FieldFunctional::sum(
            &FieldFunctional::quadratic(QuadraticForm::new(a.clone())),
            &FieldFunctional::quartic_power(3),
        )
        .unwrap();
        let recovered = hessian_extract(&f, DEFAULT_HESSIAN_STEP).unwrap();
        assert!(recovered.max_abs_diff(&a) < 1e-5, "{}", recovered.max_abs_diff(&a));
    }

    #[test]
    fn non_phase_invariant_rejected() {
        // Re(phi_0^2) = q^2 - p^2 couples to phi phi^T
        let f = FieldFunctional::new("re_square", 1, 2, |phi| (phi.as_slice()[0] * phi.as_slice()[0]).re).unwrap();
        assert!(matches!(hessian_extract(&f, DEFAULT_HESSIAN_STEP), Err(Error::NotPhaseInvariant(_))));
    }

    #[test]
    fn non_finite_evaluation_reported() {
        let f = FieldFunctional::new("blowup", 1, 0, |phi| if phi.norm_sqr() > 0.0 { f64::NAN } else { 0.0 }).unwrap();
        assert!(matches!(hessian_extract(&f, DEFAULT_HESSIAN_STEP), Err(Error::NonFinite(_))));
        assert!(hessian_extract(&f, 0.0).is_err());
    }

    #[test]
    fn gradient_check_for_builtins() {
        let mut rng = RandomSeed::new(31).stream(0);
        let a = random::hermitian(3, 1.0, &mut rng);
        let quadratic = FieldFunctional::quadratic(QuadraticForm::new(a));
        let functionals = vec![
            FieldFunctional::zero(3),
            FieldFunctional::power(3),
            FieldFunctional::quartic_power(3),
            quadratic.clone(),
            FieldFunctional::sum(&quadratic, &FieldFunctional::quartic_power(3)).unwrap(),
        ];
        for f in &functionals {
            for _ in 0..10 {
                let phi = random::unit_vector(3, &mut rng);
                let numeric = finite_difference_gradient(f, &phi, 1e-5).unwrap();
                let analytic = f.analytic_gradient(&phi).unwrap();
                for (x, y) in numeric.iter().zip(&analytic) {
                    assert!((x - y).abs() < 1e-6, "{}: {x} vs {y}", f.name());
                }
            }
        }
    }

    #[test]
    fn quadratic_approximation_examples() {
        let mut rng = RandomSeed::new(41).stream(0);
        let a = random::hermitian(2, 1.0, &mut rng);
        let e = GaussianFieldEnsemble::new(HermitianOperator::identity(2).scaled(0.5)).unwrap();
        let quad = FieldFunctional::quadratic(QuadraticForm::new(a));
        let report = quadratic_approximation_error(&quad, &e, 50_000, RandomSeed::new(6)).unwrap();
        assert!(report.gap <= 5.0 * report.standard_error, "{report:?}");

        // quartic only on D = eps I: Born term is zero, gap is E||phi||^4 = (n eps)^2 + n eps^2
        let eps = 0.4;
        let e = GaussianFieldEnsemble::background_only(2, BackgroundField::new(eps).unwrap()).unwrap();
        let report =
            quadratic_approximation_error(&FieldFunctional::quartic_power(2), &e, 100_000, RandomSeed::new(7)).unwrap();
        let wick = (2.0 * eps).powi(2) + 2.0 * eps * eps;
        assert!(report.born_term.abs() < 1e-9);
        assert!(report.gap > 0.0);
        assert!(report.monte_carlo.within_sigmas(wick, 5.0), "{report:?} vs {wick}");
    }

    #[test]
    fn phase_coordinates_round_trip() {
        let phi = FieldVector::new(vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]).unwrap();
        let x = to_phase_coordinates(&phi);
        assert_eq!(x, vec![1.0, -3.0, 2.0, 0.5]);
        assert_eq!(from_phase_coordinates(&x).unwrap(), phi);
        assert!(from_phase_coordinates(&[1.0]).is_err());
    }
}
