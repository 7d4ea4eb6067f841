//! Schrödinger evolution of fields and covariances.
//!
//! With `hbar = 1` and `phi = q + i p`, the Hamilton function
//! `H(q, p) = 1/2 <H phi, phi>` generates `phi' = -i H phi`. Writing `H = R + i S`
//! (`R` real symmetric, `S` real antisymmetric):
//!
//! ```text
//! H(q, p) = 1/2 (q^T R q + p^T R p) + p^T S q
//! q' =  dH/dp = R p + S q
//! p' = -dH/dq = -R q + S p
//! ```
//!
//! The `S` part rotates `q` and `p` independently by `exp(S t)` and is applied exactly;
//! the separable `R` part is advanced by Störmer-Verlet. A Strang step of the two is
//! symplectic and second order.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, FieldVector, HermitianOperator, Unitary, C64};
use crate::random_field::GaussianFieldEnsemble;

/// `U(t) = exp(-i t H)` from the eigendecomposition of `H`.
pub fn exact_propagator(h: &HermitianOperator, t: f64) -> Unitary {
    let (values, vectors) = h.eigh();
    let phases = DVector::from_iterator(values.len(), values.iter().map(|&l| C64::from_polar(1.0, -l * t)));
    let u = &vectors * DMatrix::from_diagonal(&phases) * vectors.adjoint();
    Unitary::from_matrix_unchecked(u)
}

/// Real phase-space coordinates of a field, `phi = q + i p`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        check_dim(q.len(), p.len())?;
        Ok(PhasePoint { q, p })
    }

    pub fn from_field(phi: &FieldVector) -> Self {
        let v = phi.components();
        PhasePoint { q: v.map(|z| z.re), p: v.map(|z| z.im) }
    }

    pub fn to_field(&self) -> FieldVector {
        let v = DVector::from_fn(self.q.len(), |k, _| C64::new(self.q[k], self.p[k]));
        FieldVector::from_dvector(v).expect("dimension >= 1")
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    fn rotate(&mut self, rotation: &DMatrix<f64>) {
        self.q = rotation * &self.q;
        self.p = rotation * &self.p;
    }
}

/// Linear Hamiltonian field `H(q, p) = 1/2 <H phi, phi>`.
#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    operator: HermitianOperator,
    real: DMatrix<f64>,
    imag: DMatrix<f64>,
}

impl HamiltonianSystem {
    pub fn new(operator: HermitianOperator) -> Self {
        let m = operator.matrix();
        HamiltonianSystem { real: m.map(|z| z.re), imag: m.map(|z| z.im), operator }
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn energy(&self, point: &PhasePoint) -> f64 {
        let (q, p) = (&point.q, &point.p);
        0.5 * (q.dot(&(&self.real * q)) + p.dot(&(&self.real * p))) + p.dot(&(&self.imag * q))
    }

    /// `(dq/dt, dp/dt)` from Hamilton's equations.
    pub fn vector_field(&self, point: &PhasePoint) -> (DVector<f64>, DVector<f64>) {
        let (q, p) = (&point.q, &point.p);
        (&self.real * p + &self.imag * q, -(&self.real * q) + &self.imag * p)
    }

    /// `exp(S tau)`, the exact flow of the `p^T S q` part.
    fn rotation(&self, tau: f64) -> DMatrix<f64> {
        let generator =
            HermitianOperator::new(self.imag.map(|s| C64::new(0.0, s))).expect("i S is Hermitian for antisymmetric S");
        exact_propagator(&generator, tau).matrix().map(|z| z.re)
    }
}

/// Integration scheme built from the Strang-split Störmer-Verlet step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// One Störmer-Verlet step per `dt`; global error `O(dt^2)`.
    StormerVerlet,
    /// Triple-jump composition of three Verlet steps; global error `O(dt^4)`.
    #[default]
    TripleJump,
}

#[derive(Clone, Debug)]
struct Stage {
    dt: f64,
    half_rotation: DMatrix<f64>,
}

/// Symplectic integrator with precomputed rotations for a fixed step size.
#[derive(Clone, Debug)]
pub struct SymplecticIntegrator {
    system: HamiltonianSystem,
    dt: f64,
    scheme: Scheme,
    stages: Vec<Stage>,
}

impl SymplecticIntegrator {
    pub fn new(system: HamiltonianSystem, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let weights: Vec<f64> = match scheme {
            Scheme::StormerVerlet => vec![1.0],
            Scheme::TripleJump => {
                let cbrt2 = 2f64.cbrt();
                let w1 = 1.0 / (2.0 - cbrt2);
                vec![w1, 1.0 - 2.0 * w1, w1]
            }
        };
        let stages =
            weights.iter().map(|w| Stage { dt: w * dt, half_rotation: system.rotation(0.5 * w * dt) }).collect();
        Ok(SymplecticIntegrator { system, dt, scheme, stages })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn system(&self) -> &HamiltonianSystem {
        &self.system
    }

    pub fn step(&self, point: &PhasePoint) -> Result<PhasePoint> {
        check_dim(self.system.dim(), point.dim())?;
        let mut x = point.clone();
        for stage in &self.stages {
            verlet_strang(&self.system, &mut x, stage.dt, &stage.half_rotation);
        }
        Ok(x)
    }

    /// Advances by `t >= 0` in `ceil(t/dt)` equal steps (the step shrinks slightly when
    /// `t` is not a multiple of `dt`).
    pub fn integrate(&self, point: &PhasePoint, t: f64) -> Result<PhasePoint> {
        Ok(self.trajectory(point, t, usize::MAX)?.pop().expect("trajectory holds the end point").1)
    }

    /// States at `t = 0`, every `record_every` steps, and at the end.
    pub fn trajectory(&self, point: &PhasePoint, t: f64, record_every: usize) -> Result<Vec<(f64, PhasePoint)>> {
        check_dim(self.system.dim(), point.dim())?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("integration time must be non-negative, got {t}")));
        }
        let n_steps = step_count(t, self.dt);
        let resized;
        let integrator = if n_steps > 0 && (n_steps as f64 * self.dt - t).abs() > 1e-12 * t.max(1.0) {
            resized = SymplecticIntegrator::new(self.system.clone(), t / n_steps as f64, self.scheme)?;
            &resized
        } else {
            self
        };
        let mut out = vec![(0.0, point.clone())];
        let mut x = point.clone();
        for k in 1..=n_steps {
            for stage in &integrator.stages {
                verlet_strang(&integrator.system, &mut x, stage.dt, &stage.half_rotation);
            }
            if k == n_steps || (record_every != usize::MAX && k % record_every.max(1) == 0) {
                out.push((k as f64 * integrator.dt, x.clone()));
            }
        }
        Ok(out)
    }
}

fn step_count(t: f64, dt: f64) -> usize {
    let ratio = t / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

fn verlet_strang(system: &HamiltonianSystem, x: &mut PhasePoint, dt: f64, half_rotation: &DMatrix<f64>) {
    x.rotate(half_rotation);
    x.p -= (&system.real * &x.q) * (0.5 * dt);
    x.q += (&system.real * &x.p) * dt;
    x.p -= (&system.real * &x.q) * (0.5 * dt);
    x.rotate(half_rotation);
}

/// One plain Störmer-Verlet step of size `dt`.
pub fn symplectic_step(system: &HamiltonianSystem, point: &PhasePoint, dt: f64) -> Result<PhasePoint> {
    SymplecticIntegrator::new(system.clone(), dt, Scheme::StormerVerlet)?.step(point)
}

/// Integrates to time `t` with the default (fourth-order) composition.
pub fn integrate(system: &HamiltonianSystem, point: &PhasePoint, t: f64, dt: f64) -> Result<PhasePoint> {
    SymplecticIntegrator::new(system.clone(), dt, Scheme::default())?.integrate(point, t)
}

/// Push-forward of a Gaussian ensemble: covariance `U(t) D U(t)^H`, background kept.
pub fn evolve_ensemble(
    ensemble: &GaussianFieldEnsemble,
    h: &HermitianOperator,
    t: f64,
) -> Result<GaussianFieldEnsemble> {
    check_dim(ensemble.dim(), h.dim())?;
    let u = exact_propagator(h, t);
    ensemble.replace_covariance(u.conjugate(ensemble.covariance())?)
}

/// Integrates every sample to time `t`; output order matches input order.
pub fn propagate_samples(samples: &[FieldVector], h: &HermitianOperator, t: f64, dt: f64) -> Result<Vec<FieldVector>> {
    if let Some(bad) = samples.iter().find(|s| s.dim() != h.dim()) {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: bad.dim() });
    }
    let integrator = SymplecticIntegrator::new(HamiltonianSystem::new(h.clone()), dt, Scheme::default())?;
    samples.par_iter().map(|s| integrator.integrate(&PhasePoint::from_field(s), t).map(|x| x.to_field())).collect()
}

/// Right-hand side of the von Neumann equation, `-i [H, D]`.
pub fn von_neumann_rhs(h: &HermitianOperator, d: &HermitianOperator) -> Result<HermitianOperator> {
    check_dim(h.dim(), d.dim())?;
    let commutator = h.matrix() * d.matrix() - d.matrix() * h.matrix();
    HermitianOperator::symmetrized(commutator * C64::new(0.0, -1.0))
}

/// CSV columns `t, re_0, im_0, ..., energy, norm_sqr`.
pub fn write_trajectory_csv<W: Write>(
    system: &HamiltonianSystem,
    trajectory: &[(f64, PhasePoint)],
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let dim = system.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).flat_map(|k| [format!("re_{k}"), format!("im_{k}")]));
    header.extend(["energy".to_string(), "norm_sqr".to_string()]);
    out.write_record(&header)?;
    for (t, x) in trajectory {
        let mut row = vec![t.to_string()];
        row.extend((0..dim).flat_map(|k| [x.q[k].to_string(), x.p[k].to_string()]));
        row.push(system.energy(x).to_string());
        row.push((x.q.norm_squared() + x.p.norm_squared()).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
