//! One runner per experiment kind. Runners compute; `report::write_all` writes.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};
use std::fs::File;

use anyhow::{bail, Context, Result};
use pcsft::analysis::{
    assignment, check_no_signalling, chsh, chsh_max, kolmogorov_feasible, polarization_lhv, random_no_signalling_table,
    singlet_table, triangle_angle_test, CorrelationTable, FeasibilityVerdict, DEFAULT_FLAT_SUM,
};
use pcsft::detection::{
    click_statistics, correlation_from_clicks, quadratic_correlation, read_trials_csv, run_trials, spin_observable,
    write_trials_csv, BipartiteEnsemble, PostSelection, TrialRecord, TUNED_EPR_EPSILON, TUNED_EPR_THRESHOLD,
};
use pcsft::dynamics::{
    evolve_ensemble, exact_propagator, propagate_samples, von_neumann_rhs, write_trajectory_csv, HamiltonianSystem,
    PhasePoint, Scheme, SymplecticIntegrator,
};
use pcsft::hilbert::{random, trace_product, FieldVector, HermitianOperator};
use pcsft::montecarlo::{map_trials, RunningStats};
use pcsft::observables::{
    classical_average_exact, classical_average_mc, hessian_extract, quadratic_approximation_error, renormalize,
    FieldFunctional, QuadraticForm, DEFAULT_HESSIAN_STEP,
};
use pcsft::random_field::{empirical_covariance, BackgroundField, GaussianFieldEnsemble, RandomSeed};
use pcsft::Error;

use crate::config::{ExperimentConfig, Kind, Source};
use crate::report::{Artifacts, Results};

pub fn run(cfg: &ExperimentConfig) -> Result<(Results, Artifacts)> {
    let root = RandomSeed::new(cfg.seed);
    match cfg.kind {
        Kind::Born => born(cfg, root).context("born experiment"),
        Kind::Dynamics => dynamics(cfg, root).context("dynamics experiment"),
        Kind::Hessian => hessian(cfg, root).context("hessian experiment"),
        Kind::Epr => epr(cfg, root).context("epr experiment"),
        Kind::Chsh => chsh_experiment(cfg, root).context("chsh experiment"),
        Kind::Kolmogorov => kolmogorov(cfg, root).context("kolmogorov experiment"),
        Kind::Triangle => triangle(cfg).context("triangle experiment"),
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn born(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let dim = cfg.dim.unwrap_or(2);
    let eps = cfg.epsilon.unwrap_or(0.1);
    let n = cfg.trials.unwrap_or(100_000);
    let mut rng = root.derive(1).stream(0);
    let psi = random::unit_vector(dim, &mut rng);
    let a = random::hermitian(dim, 1.0, &mut rng);
    let ensemble = GaussianFieldEnsemble::from_pure_state(&psi, BackgroundField::new(eps)?)?;
    let form = QuadraticForm::new(a.clone());

    let mut res = Results::new("born");
    let classical = classical_average_exact(&ensemble, &form)?;
    let renormalized = renormalize(classical, &a, eps);
    let quantum = a.apply(&psi)?.inner(&psi)?.re;
    res.exact("classical_average", classical);
    res.exact("renormalized_average", renormalized);
    res.oracle("quantum_average", quantum);
    res.check("born-exact", (renormalized - quantum).abs() <= 1e-10, "|Tr(DA) - eps Tr A - <A psi, psi>| <= 1e-10");

    let mc = classical_average_mc(&ensemble, &FieldFunctional::quadratic(form.clone()), n, root.derive(2))?;
    res.estimate("classical_average_mc", &mc);
    res.check("born-mc", mc.within_sigmas(classical, 5.0), "|MC mean - Tr(DA)| <= 5 SE");

    let dispersion = ensemble.dispersion();
    let power = classical_average_mc(&ensemble, &FieldFunctional::power(dim), n, root.derive(3))?;
    res.exact("dispersion", dispersion);
    res.estimate("power_mc", &power);
    res.check("dispersion-mc", power.within_sigmas(dispersion, 5.0), "|MC mean power - Tr D| <= 5 SE");

    let values = map_trials(n, root.derive(2), |_, rng| form.evaluate(&ensemble.sample_with(rng)).unwrap_or(f64::NAN));
    let mut stats = RunningStats::default();
    let mut rows = Vec::new();
    let checkpoints = 20u64.min(n);
    let mut next = 1;
    for (k, v) in values.iter().enumerate() {
        stats.push(*v);
        if (k as u64 + 1) * checkpoints >= next * n {
            rows.push(vec![
                stats.count().to_string(),
                stats.mean().to_string(),
                stats.standard_error().to_string(),
                classical.to_string(),
            ]);
            next += 1;
        }
    }
    let mut art = Artifacts::default();
    art.add("convergence.csv", csv_bytes(&["n", "mc_mean", "standard_error", "exact"], rows)?);
    Ok((res, art))
}

fn dynamics(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let dim = cfg.dim.unwrap_or(4);
    let t = cfg.time.unwrap_or(1.0);
    let dt = cfg.dt.unwrap_or(1e-3);
    let eps = cfg.epsilon.unwrap_or(0.1);
    let n = cfg.trials.unwrap_or(10_000);
    let horizon = 10.0;
    let mut rng = root.derive(1).stream(0);
    let h = random::hermitian(dim, 1.0, &mut rng);
    let phi0 = random::unit_vector(dim, &mut rng);
    let rho = random::density(dim, &mut rng);
    let system = HamiltonianSystem::new(h.clone());
    let mut res = Results::new("dynamics");

    let u = exact_propagator(&h, t);
    res.exact("unitarity_defect", u.unitarity_defect());
    res.check("unitarity", u.unitarity_defect() <= 1e-10, "||U^H U - I|| <= 1e-10");
    let exact = u.apply(&phi0)?;
    let x0 = PhasePoint::from_field(&phi0);
    let integrator = SymplecticIntegrator::new(system.clone(), dt, Scheme::default())?;
    let error = integrator.integrate(&x0, t)?.to_field().sub(&exact)?.norm();
    res.exact("state_error", error);
    res.check("state-error", error <= 1e-4, "||phi_num(t) - U(t) phi_0|| <= 1e-4");
    let verlet = SymplecticIntegrator::new(system.clone(), dt, Scheme::StormerVerlet)?;
    res.exact("state_error_single_verlet", verlet.integrate(&x0, t)?.to_field().sub(&exact)?.norm());

    let trajectory = integrator.trajectory(&x0, horizon, 1)?;
    let e0 = system.energy(&x0);
    let norm0 = phi0.norm();
    let (mut energy_drift, mut norm_drift) = (0.0f64, 0.0f64);
    for (_, x) in &trajectory {
        energy_drift = energy_drift.max((system.energy(x) - e0).abs());
        norm_drift = norm_drift.max(((x.q.norm_squared() + x.p.norm_squared()).sqrt() - norm0).abs());
    }
    res.exact("energy_drift", energy_drift);
    res.exact("norm_drift", norm_drift);
    res.check("energy-drift", energy_drift <= 1e-6, "max |H(t) - H(0)| <= 1e-6 on [0, 10]");
    res.check("norm-drift", norm_drift <= 1e-6, "max | ||phi(t)|| - ||phi(0)|| | <= 1e-6 on [0, 10]");
    let exact_norm_drift = (exact_propagator(&h, horizon).apply(&phi0)?.norm() - norm0).abs();
    res.exact("exact_norm_drift", exact_norm_drift);
    res.check("exact-norm", exact_norm_drift <= 1e-12, "| ||U(10) phi|| - ||phi|| | <= 1e-12");

    let ensemble = GaussianFieldEnsemble::from_density(&rho, BackgroundField::new(eps)?)?;
    let step = 1e-4;
    let derivative = evolve_ensemble(&ensemble, &h, step)?
        .covariance()
        .sub(evolve_ensemble(&ensemble, &h, -step)?.covariance())?
        .scaled(0.5 / step);
    let von_neumann = derivative.max_abs_diff(&von_neumann_rhs(&h, ensemble.covariance())?);
    res.exact("von_neumann_residual", von_neumann);
    res.check("von-neumann", von_neumann <= 1e-6, "max |dD/dt + i[H, D]| <= 1e-6 at t = 0");

    let vacuum = GaussianFieldEnsemble::background_only(dim, BackgroundField::new(eps)?)?;
    let background_shift = evolve_ensemble(&vacuum, &h, t)?.covariance().max_abs_diff(vacuum.covariance());
    res.exact("background_shift", background_shift);
    res.check("background-invariance", background_shift <= 1e-12, "max |U (eps I) U^H - eps I| <= 1e-12");

    let samples = ensemble.sample(n as usize, root.derive(2));
    let pushed = propagate_samples(&samples, &h, t, dt)?;
    let power_error = samples.iter().zip(&pushed).map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs()).fold(0.0, f64::max);
    res.exact("sample_power_error", power_error);
    res.check("sample-power", power_error <= 1e-6, "max | ||phi(t)||^2 - ||phi(0)||^2 | <= 1e-6 per sample");
    let target = evolve_ensemble(&ensemble, &h, t)?;
    let emp = empirical_covariance(&pushed)?;
    let d = target.covariance().matrix();
    let mut worst_z = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let sd = (d[(i, i)].re * d[(j, j)].re / n as f64).sqrt();
            let gap = (emp.matrix()[(i, j)] - d[(i, j)]).norm();
            res.mc(format!("pushed_covariance_gap[{i},{j}]"), gap, n, sd);
            worst_z = worst_z.max(gap / sd);
        }
    }
    res.check("push-forward-covariance", worst_z <= 5.0, "|C_emp - U D U^H|_ij <= 5 sqrt(D_ii D_jj / N)");

    let thinned: Vec<(f64, PhasePoint)> = trajectory.iter().step_by(10).cloned().collect();
    let mut csv = Vec::new();
    write_trajectory_csv(&system, &thinned, &mut csv)?;
    let mut art = Artifacts::default();
    art.add("trajectory.csv", csv);
    Ok((res, art))
}

fn phase_violating(dim: usize) -> Result<FieldFunctional> {
    Ok(FieldFunctional::new("re_sum_squares", dim, 2, |phi: &FieldVector| {
        phi.as_slice().iter().map(|z| (z * z).re).sum()
    })?)
}

fn hessian(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let dim = cfg.dim.unwrap_or(3);
    let eps = cfg.epsilon.unwrap_or(0.1);
    let n = cfg.trials.unwrap_or(100_000);
    let mut rng = root.derive(1).stream(0);
    let a = random::hermitian(dim, 1.0, &mut rng);
    let psi = random::unit_vector(dim, &mut rng);
    let quartic = FieldFunctional::quartic_power(dim);
    let f = FieldFunctional::sum(&FieldFunctional::quadratic(QuadraticForm::new(a.clone())), &quartic)?;
    let mut res = Results::new("hessian");

    let recovered = hessian_extract(&f, DEFAULT_HESSIAN_STEP)?;
    let error = recovered.max_abs_diff(&a);
    res.exact("hessian_error", error);
    res.check("hessian-recovery", error <= 1e-5, "max |A_rec - A| <= 1e-5 for <A phi, phi> + ||phi||^4");
    let quartic_part = hessian_extract(&quartic, DEFAULT_HESSIAN_STEP)?.max_abs_diff(&HermitianOperator::zeros(dim));
    res.exact("quartic_hessian", quartic_part);
    res.check("quartic-zero", quartic_part <= 1e-6, "max |A_rec| <= 1e-6 for ||phi||^4");
    let rejected =
        matches!(hessian_extract(&phase_violating(dim)?, DEFAULT_HESSIAN_STEP), Err(Error::NotPhaseInvariant(_)));
    res.label("re_sum_squares", if rejected { "non-representable" } else { "representable" });
    res.check("phase-invariance", rejected, "Re sum phi_k^2 is reported as non-representable");

    let ensemble = GaussianFieldEnsemble::from_pure_state(&psi, BackgroundField::new(eps)?)?;
    let report = quadratic_approximation_error(&f, &ensemble, n, root.derive(2))?;
    let d = ensemble.covariance();
    let trace = d.trace();
    let trace_sq = trace_product(d, d)?;
    let wick = trace_product(d, &a)? + trace * trace + trace_sq;
    res.exact("born_term", report.born_term);
    res.estimate("functional_average_mc", &report.monte_carlo);
    res.oracle("functional_average_wick", wick);
    res.check(
        "wick-average",
        report.monte_carlo.within_sigmas(wick, 5.0),
        "|MC E f - (Tr DA + (Tr D)^2 + Tr D^2)| <= 5 SE",
    );
    res.mc("quadratic_approximation_gap", report.gap, report.monte_carlo.n_samples, report.standard_error);

    let rows = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| {
        let t = a.matrix()[(i, j)];
        let r = recovered.matrix()[(i, j)];
        vec![i.to_string(), j.to_string(), t.re.to_string(), t.im.to_string(), r.re.to_string(), r.im.to_string()]
    });
    let mut art = Artifacts::default();
    art.add("hessian.csv", csv_bytes(&["row", "col", "true_re", "true_im", "recovered_re", "recovered_im"], rows)?);
    Ok((res, art))
}

fn default_deltas() -> Vec<f64> {
    (0..9).map(|k| k as f64 * PI / 16.0).collect()
}

fn any_click_fraction(records: &[TrialRecord]) -> f64 {
    let kept = records.iter().filter(|r| PostSelection::KeepAnyClick.accepts(r.class1(), r.class2())).count();
    kept as f64 / records.len() as f64
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn epr(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let eps = cfg.epsilon.unwrap_or(TUNED_EPR_EPSILON);
    let d = cfg.threshold.unwrap_or(TUNED_EPR_THRESHOLD);
    let n = cfg.trials.unwrap_or(100_000);
    let policy = cfg.policy.unwrap_or_default();
    let deltas = cfg.angles.clone().unwrap_or_else(default_deltas);
    let ensemble = BipartiteEnsemble::singlet(BackgroundField::new(eps)?)?;
    let mut res = Results::new("epr");
    res.label("parameters", format!("epsilon={eps} threshold={d} trials_per_angle={n} policy={policy:?}"));

    let mut curve = Vec::new();
    let mut exact_ok = true;
    let mut click_ok = true;
    let mut marginals = Vec::new();
    for (k, &delta) in deltas.iter().enumerate() {
        let qm = -(2.0 * delta).cos();
        let field = quadratic_correlation(&ensemble, &spin_observable(0.0), &spin_observable(delta))?;
        exact_ok &= (field - qm).abs() <= 1e-10;
        let records = run_trials(&ensemble, 0.0, delta, d, n, root.derive(100 + k as u64), policy)?;
        let stats = click_statistics(&records)?;
        let corr = correlation_from_clicks(&records)?;
        click_ok &= (corr.correlation - qm).abs() <= 0.05;
        res.oracle(format!("qm_correlation[{k}]"), qm);
        res.exact(format!("field_correlation[{k}]"), field);
        res.mc(format!("click_correlation[{k}]"), corr.correlation, corr.n_accepted, corr.standard_error);
        res.mc(format!("party1_plus_frequency[{k}]"), stats.frequencies1[0], n, binomial_se(stats.frequencies1[0], n));
        marginals.push(stats.frequencies1[0]);
        curve.push(vec![
            delta.to_string(),
            corr.correlation.to_string(),
            corr.standard_error.to_string(),
            corr.n_accepted.to_string(),
            qm.to_string(),
            field.to_string(),
        ]);
    }
    res.check("field-correlation", exact_ok, "|renormalized correlation + cos 2 delta| <= 1e-10");
    res.check("click-correlation", click_ok, "|E_clicks + cos 2 delta| <= 0.05");
    let signalling_ok = marginals.iter().all(|&f| {
        let pooled = 0.5 * (f + marginals[0]);
        (f - marginals[0]).abs() <= 5.0 * (pooled * (1.0 - pooled) * 2.0 / n as f64).sqrt()
    });
    res.check("no-signalling", signalling_ok, "party 1 click frequency independent of theta_2 within 5 SE");

    let grid: Vec<f64> = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0].iter().map(|m| m * d).collect();
    let mut scan = Vec::new();
    let mut rates = Vec::new();
    for (k, &threshold) in grid.iter().enumerate() {
        let records =
            run_trials(&ensemble, 0.0, 0.0, threshold, n, root.derive(300 + k as u64), PostSelection::KeepSingles)?;
        let stats = click_statistics(&records)?;
        let any = any_click_fraction(&records);
        res.mc(format!("double_click_rate[{k}]"), stats.double_click_rate, n, binomial_se(stats.double_click_rate, n));
        res.mc(format!("any_click_fraction[{k}]"), any, n, binomial_se(any, n));
        rates.push((stats.double_click_rate, any));
        scan.push(vec![
            threshold.to_string(),
            stats.double_click_rate.to_string(),
            binomial_se(stats.double_click_rate, n).to_string(),
            stats.accepted_fraction.to_string(),
            any.to_string(),
        ]);
    }
    let decreasing = rates.windows(2).all(|w| {
        let se = (binomial_se(w[0].0, n).powi(2) + binomial_se(w[1].0, n).powi(2)).sqrt();
        w[0].0 - w[1].0 >= 5.0 * se
    });
    res.check("double-click-monotone", decreasing, "double-click rate decreases between grid points by >= 5 SE");
    let non_increasing = rates.windows(2).all(|w| {
        let se = (binomial_se(w[0].1, n).powi(2) + binomial_se(w[1].1, n).powi(2)).sqrt();
        w[1].1 - w[0].1 <= 5.0 * se
    });
    res.check("acceptance-monotone", non_increasing, "any-click coincidence fraction does not increase by > 5 SE");

    let mut art = Artifacts::default();
    art.add(
        "epr_curve.csv",
        csv_bytes(&["delta", "click_correlation", "standard_error", "accepted", "qm_reference", "field_exact"], curve)?,
    );
    art.add(
        "double_clicks.csv",
        csv_bytes(
            &["threshold", "double_click_rate", "standard_error", "singles_accepted_fraction", "any_click_fraction"],
            scan,
        )?,
    );
    Ok((res, art))
}

fn default_chsh_angles() -> Vec<f64> {
    vec![0.0, FRAC_PI_4, FRAC_PI_8, -FRAC_PI_8]
}

fn record_table(res: &mut Results, table: &CorrelationTable, mc: bool) -> Result<()> {
    for i in 0..2 {
        for j in 0..2 {
            let e = table.entry(i, j)?;
            let name = format!("E[a{},b{}]", i + 1, j + 1);
            match (mc, e.count) {
                (true, Some(count)) => res.mc(name, e.correlation, count, e.standard_error),
                _ => res.oracle(name, e.correlation),
            }
        }
    }
    Ok(())
}

fn record_verdict(res: &mut Results, verdict: &FeasibilityVerdict, art: &mut Artifacts) -> Result<()> {
    res.exact("kolmogorov_residual", verdict.residual);
    res.label("kolmogorov", if verdict.feasible { "feasible" } else { "infeasible" });
    if !verdict.certificate().is_empty() {
        let text: Vec<String> =
            verdict.certificate().iter().map(|(i, j)| format!("minus at (a{}, b{})", i + 1, j + 1)).collect();
        res.label("chsh_certificate", text.join("; "));
    }
    if let Some(w) = verdict.witness {
        let rows = (0..16).map(|lambda| {
            let v = assignment(lambda);
            let mut row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            row.push(w[lambda].to_string());
            row
        });
        art.add("witness.csv", csv_bytes(&["a1", "a2", "b1", "b2", "weight"], rows)?);
    }
    Ok(())
}

fn chsh_experiment(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let angles = cfg.angles.clone().unwrap_or_else(default_chsh_angles);
    let (a, b) = ([angles[0], angles[1]], [angles[2], angles[3]]);
    if a[0] == a[1] || b[0] == b[1] {
        bail!("chsh needs two distinct settings per party");
    }
    let source = cfg.source.unwrap_or(Source::Lhv);
    let n = cfg.trials.unwrap_or(100_000);
    let mut res = Results::new("chsh");
    let mut art = Artifacts::default();
    res.label("source", format!("{source:?}").to_lowercase());

    let table = match source {
        Source::Lhv => polarization_lhv().table(a, b, n, root.derive(1))?,
        Source::Singlet => singlet_table(a, b),
        _ => {
            let eps = cfg.epsilon.unwrap_or(TUNED_EPR_EPSILON);
            let d = cfg.threshold.unwrap_or(TUNED_EPR_THRESHOLD);
            let policy = cfg.policy.unwrap_or_default();
            res.label("parameters", format!("epsilon={eps} threshold={d} trials_per_setting={n} policy={policy:?}"));
            let ensemble = BipartiteEnsemble::singlet(BackgroundField::new(eps)?)?;
            let mut records = Vec::new();
            for (k, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                records.extend(run_trials(&ensemble, a[i], b[j], d, n, root.derive(200 + k as u64), policy)?);
            }
            let mut csv = Vec::new();
            write_trials_csv(&records, &mut csv)?;
            art.add("trials.csv", csv);
            CorrelationTable::from_trials(&records)?
        }
    };
    let mc = source != Source::Singlet;
    record_table(&mut res, &table, mc)?;
    let s = chsh(&table)?;
    let (best, minus) = chsh_max(&table)?;
    let push_s = |res: &mut Results, name: &str, v: f64, se: f64| {
        if mc {
            res.mc(name, v, n, se);
        } else {
            res.oracle(name, v);
        }
    };
    push_s(&mut res, "chsh", s.s, s.standard_error);
    push_s(&mut res, "chsh_max", best.s, best.standard_error);
    res.label("chsh_max_minus_position", format!("(a{}, b{})", minus.0 + 1, minus.1 + 1));

    match source {
        Source::Lhv => {
            res.check("lhv-bound", best.s.abs() <= 2.0 + 5.0 * best.standard_error, "max |S| <= 2 + 5 SE");
            let verdict = kolmogorov_feasible(&table)?;
            res.check("lhv-feasible", verdict.feasible, "local data admit a joint distribution");
            record_verdict(&mut res, &verdict, &mut art)?;
        }
        Source::Singlet => {
            let verdict = kolmogorov_feasible(&table)?;
            res.check(
                "fine-agreement",
                verdict.agrees_with_fine(),
                "LP feasibility agrees with the eight CHSH inequalities",
            );
            record_verdict(&mut res, &verdict, &mut art)?;
        }
        _ => {
            let signalling = check_no_signalling(&table);
            res.check(
                "no-signalling",
                signalling.is_ok(),
                "single-party marginals independent of the remote setting within 5 SE",
            );
            res.target("chsh-violation", s.s.abs() >= 2.6, "|S| >= 2.6 from clicks");
            res.label("chsh_target", if s.s.abs() >= 2.6 { "reproduced" } else { "not reproduced" });
            if signalling.is_ok() {
                record_verdict(&mut res, &kolmogorov_feasible(&table)?, &mut art)?;
            }
        }
    }
    Ok((res, art))
}

fn kolmogorov(cfg: &ExperimentConfig, root: RandomSeed) -> Result<(Results, Artifacts)> {
    let mut res = Results::new("kolmogorov");
    let mut art = Artifacts::default();
    let table = if let Some(path) = &cfg.table {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Some(
            serde_json::from_reader::<_, CorrelationTable>(file)
                .with_context(|| format!("reading table {}", path.display()))?,
        )
    } else if let Some(path) = &cfg.trials_csv {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Some(CorrelationTable::from_trials(&read_trials_csv(file)?)?)
    } else {
        let angles = cfg.angles.clone().unwrap_or_else(default_chsh_angles);
        let (a, b) = ([angles[0], angles[1]], [angles[2], angles[3]]);
        match cfg.source.unwrap_or(Source::Random) {
            Source::Singlet => Some(singlet_table(a, b)),
            Source::Lhv => Some(polarization_lhv().table(a, b, cfg.trials.unwrap_or(100_000), root.derive(1))?),
            _ => None,
        }
    };
    match table {
        Some(table) => {
            let verdict = kolmogorov_feasible(&table)?;
            res.exact("chsh", chsh(&table)?.s);
            res.check(
                "fine-agreement",
                verdict.agrees_with_fine(),
                "LP feasibility agrees with the eight CHSH inequalities",
            );
            record_verdict(&mut res, &verdict, &mut art)?;
        }
        None => {
            let count = cfg.trials.unwrap_or(1000);
            let verdicts =
                map_trials(count, root.derive(2), |_, rng| kolmogorov_feasible(&random_no_signalling_table(rng)));
            let verdicts = verdicts.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
            let feasible = verdicts.iter().filter(|v| v.feasible).count();
            let agree = verdicts.iter().filter(|v| v.agrees_with_fine()).count();
            res.exact("tables", count as f64);
            res.exact("feasible", feasible as f64);
            res.exact("agreement_fraction", agree as f64 / count as f64);
            res.check(
                "fine-agreement",
                agree as u64 == count,
                "LP feasibility agrees with Fine's criterion on every table",
            );
            let rows = verdicts.iter().enumerate().map(|(k, v)| {
                vec![k.to_string(), v.feasible.to_string(), v.fine.satisfied().to_string(), v.residual.to_string()]
            });
            art.add("random_tables.csv", csv_bytes(&["table", "lp_feasible", "fine_satisfied", "residual"], rows)?);
        }
    }
    Ok((res, art))
}

fn triangle(cfg: &ExperimentConfig) -> Result<(Results, Artifacts)> {
    let angles = cfg.angles.clone().context("triangle needs three angles")?;
    let flat_sum = cfg.flat_sum.unwrap_or(DEFAULT_FLAT_SUM);
    let report = triangle_angle_test([angles[0], angles[1], angles[2]], flat_sum)?;
    let mut res = Results::new("triangle");
    res.exact("angle_sum", report.angle_sum);
    res.exact("flat_sum", report.flat_sum);
    res.label("class", format!("{:?}", report.class).to_lowercase());
    Ok((res, Artifacts::default()))
}
