//! Temporary debugging harness (removed before release).

use tfp_core::gmm::{estimate_one_step, estimate_two_step, windmeijer_correct};
use tfp_core::instruments::{
    assemble_system, build_difference_instruments, build_level_instruments,
};
use tfp_core::production::build_production_spec;
use tfp_core::synthetic::{generate, DgpConfig};

#[test]
#[ignore]
fn moment_validity_against_truth() {
    let cfg = DgpConfig { n_units: 4000, n_periods: 10, seed: 77, ..DgpConfig::default() };
    let sp = generate(&cfg).unwrap();
    let (ds, spec) = build_production_spec(&sp.panel, false).unwrap();
    let diff = build_difference_instruments(&ds, &spec.instruments, &spec.model).unwrap();
    let level = build_level_instruments(&ds, &spec.instruments, &spec.model).unwrap();
    let z = assemble_system(&diff, &level).unwrap();
    let rho = cfg.rho;
    // xi_t = omega_t - rho*omega_{t-1}, from per-row truth values.
    let xi = |unit: usize, year: i32| -> f64 {
        let r1 = ds.row_for_year(unit, year).unwrap();
        let r0 = ds.row_for_year(unit, year - 1).unwrap();
        sp.truth.omega[r1] - rho * sp.truth.omega[r0]
    };
    let ncols = z.column_count();
    let nunits = z.units.len();
    let mut sums = vec![0.0f64; ncols];
    let mut sqs = vec![0.0f64; ncols];
    for block in &z.units {
        let mut v = Vec::new();
        for &t in &block.diff_years {
            v.push(xi(block.unit, t) - xi(block.unit, t - 1));
        }
        for &t in &block.level_years {
            v.push((1.0 - rho) * sp.truth.eta[block.unit] + xi(block.unit, t));
        }
        let zv = block.z.transpose() * nalgebra::DVector::from_vec(v);
        for j in 0..ncols {
            sums[j] += zv[j];
            sqs[j] += zv[j] * zv[j];
        }
    }
    let mut bad = 0;
    for j in 0..ncols {
        let mean = sums[j] / nunits as f64;
        let var = sqs[j] / nunits as f64 - mean * mean;
        let se = (var / nunits as f64).sqrt();
        let tstat = if se > 0.0 { mean / se } else { 0.0 };
        if tstat.abs() > 4.0 {
            bad += 1;
            println!("VIOLATION {:22} mean={:+.5} t={:+.1}", z.labels[j], mean, tstat);
        }
    }
    println!("{bad} / {ncols} columns violate orthogonality at |t|>4");
}

#[test]
#[ignore]
fn design_reproduces_truth_errors() {
    let cfg = DgpConfig { n_units: 50, n_periods: 10, seed: 77, ..DgpConfig::default() };
    let sp = generate(&cfg).unwrap();
    let (ds, spec) = build_production_spec(&sp.panel, false).unwrap();
    let diff = build_difference_instruments(&ds, &spec.instruments, &spec.model).unwrap();
    let level = build_level_instruments(&ds, &spec.instruments, &spec.model).unwrap();
    let z = assemble_system(&diff, &level).unwrap();
    let design = tfp_core::gmm::build_design(&ds, &spec.model, &z.layout).unwrap();
    let rho = cfg.rho;
    let beta = cfg.beta;
    let years = ds.years();
    let base = years[0];
    let gamma = |t: i32| sp.truth.year_effects[(t - base) as usize];
    // True stacked-system coefficients under the common-factor structure.
    let mut pi = Vec::new();
    pi.push(rho);
    for b in beta {
        pi.push(b);
        pi.push(-rho * b);
    }
    let first_level = z.layout.level_periods[0];
    let c = gamma(first_level) - rho * gamma(first_level - 1);
    for label in &design.labels {
        if let Some(t) = label.strip_prefix("yr") {
            let t: i32 = t.parse().unwrap();
            pi.push(gamma(t) - rho * gamma(t - 1) - c);
        }
    }
    pi.push(c);
    assert_eq!(pi.len(), design.labels.len(), "coefficient count");
    let pi = nalgebra::DVector::from_vec(pi);
    let xi = |unit: usize, year: i32| -> f64 {
        let r1 = ds.row_for_year(unit, year).unwrap();
        let r0 = ds.row_for_year(unit, year - 1).unwrap();
        sp.truth.omega[r1] - rho * sp.truth.omega[r0]
    };
    let mut max_diff_dev = 0.0f64;
    let mut max_level_dev = 0.0f64;
    for u in &design.units {
        let resid = &u.y - &u.x * &pi;
        for (k, &t) in u.diff_years.iter().enumerate() {
            let truth = xi(u.unit, t) - xi(u.unit, t - 1);
            let dev = (resid[k] - truth).abs();
            if dev > max_diff_dev {
                max_diff_dev = dev;
                if dev > 1e-10 {
                    println!("diff unit={} t={} resid={:+.6} truth={:+.6}", u.unit, t, resid[k], truth);
                }
            }
        }
        for (k, &t) in u.level_years.iter().enumerate() {
            let truth = (1.0 - rho) * sp.truth.eta[u.unit] + xi(u.unit, t);
            let dev = (resid[u.diff_years.len() + k] - truth).abs();
            if dev > max_level_dev {
                max_level_dev = dev;
                if dev > 1e-10 {
                    println!("level unit={} t={} resid={:+.6} truth={:+.6}", u.unit, t, resid[u.diff_years.len() + k], truth);
                }
            }
        }
    }
    println!("max diff-row deviation  = {max_diff_dev:.3e}");
    println!("max level-row deviation = {max_level_dev:.3e}");
}

#[test]
#[ignore]
fn sargan_distribution_probe() {
    use tfp_core::production::estimate_pi;
    for n in [500usize, 2000, 8000] {
        let mut stats = Vec::new();
        let mut pvals = Vec::new();
        let mut dof = 0;
        for r in 0..60u64 {
            let cfg = DgpConfig {
                n_units: n,
                n_periods: 8,
                seed: 50_000 + r,
                ..DgpConfig::default()
            };
            let sp = generate(&cfg).unwrap();
            let (ds, spec) = build_production_spec(&sp.panel, true).unwrap();
            let fit = estimate_pi(&ds, &spec).unwrap();
            let t = fit.tests.iter().find(|t| t.name == "Sargan").unwrap();
            stats.push(t.statistic);
            pvals.push(t.p_value);
            dof = t.dof.unwrap();
        }
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        let mean_p = pvals.iter().sum::<f64>() / pvals.len() as f64;
        println!("N={n:5} dof={dof} mean(J)={mean:6.2} mean(p)={mean_p:.3}");
    }
}

#[test]
#[ignore]
fn acf_basin_probe() {
    use tfp_core::acf::{acf_first_stage, acf_second_stage, AcfConfig};
    let cfg = DgpConfig {
        n_units: 2000,
        n_periods: 10,
        acf_timing: true,
        fixed_effect_sd: 0.0,
        year_effect_sd: 0.0,
        measurement_sd: 0.1,
        seed: 500_000,
        ..DgpConfig::default()
    };
    let sp = generate(&cfg).unwrap();
    let truth = cfg.beta.to_vec();
    for (label, start, n_starts, spread) in [
        ("start at truth, single", Some(truth.clone()), 1usize, 0.0),
        ("start at truth, 8 starts spread 0.5", Some(truth.clone()), 8, 0.5),
        ("default center, 8 starts spread 0.25", None, 8, 0.25),
    ] {
        let acf_cfg = AcfConfig {
            start_beta: start,
            n_starts,
            start_spread: spread,
            ..AcfConfig::default()
        };
        let fs = acf_first_stage(&sp.panel, &acf_cfg).unwrap();
        match acf_second_stage(&sp.panel, &fs, &acf_cfg) {
            Ok(fit) => {
                println!("{label}: beta={:?} Q={:.2e}", fit.beta, fit.objective_value);
                for t in &fit.trace {
                    println!(
                        "   start[0..2]=({:.2},{:.2}) -> value {:.2e} conv={} min={:?}",
                        t.start[0], t.start[1], t.value, t.converged,
                        t.minimizer.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
                    );
                }
            }
            Err(e) => println!("{label}: ERR {e}"),
        }
    }
}

#[test]
#[ignore]
fn acf_recovery_probe() {
    use tfp_core::acf::{estimate_acf, AcfConfig};
    let reps = 20;
    let mut sums = [0.0f64; 5];
    let mut truth = [0.0f64; 5];
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for r in 0..reps {
        let cfg = DgpConfig {
            n_units: 2000,
            n_periods: 10,
            acf_timing: true,
            fixed_effect_sd: 0.0,
            year_effect_sd: 0.0,
            measurement_sd: 0.1,
            seed: 500_000 + r,
            ..DgpConfig::default()
        };
        truth = cfg.beta;
        let sp = generate(&cfg).unwrap();
        // center the multistart on the step-1 minimum-distance estimate,
        // as the pipeline does
        let (ds, spec) = tfp_core::production::build_production_spec(&sp.panel, true).unwrap();
        let pi_fit = tfp_core::production::estimate_pi(&ds, &spec).unwrap();
        let md = tfp_core::production::minimum_distance(&pi_fit.pi).unwrap();
        let acf_cfg = AcfConfig { start_beta: Some(md.beta.clone()), ..AcfConfig::default() };
        match estimate_acf(&sp.panel, &acf_cfg) {
            Ok(fit) => {
                for (i, b) in fit.beta.iter().enumerate() {
                    sums[i] += b;
                }
                worst = worst.max(fit.objective_value);
                println!(
                    "rep {r}: md={:?} beta={:?} Q={:.2e}",
                    md.beta.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    fit.beta.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                    fit.objective_value
                );
            }
            Err(e) => {
                fails += 1;
                if fails < 3 {
                    println!("rep {r} failed: {e}");
                }
            }
        }
    }
    let done = (reps - fails) as f64;
    println!("failures: {fails}/{reps}, worst Q {worst:.2e}");
    for i in 0..5 {
        println!(
            "factor {i}: mean {:.4} truth {:.4} bias {:+.4}",
            sums[i] / done,
            truth[i],
            sums[i] / done - truth[i]
        );
    }
}

#[test]
#[ignore]
fn sargan_power_probe() {
    use tfp_core::gmm::ModelSpec;
    use tfp_core::instruments::{InstrumentSpec, VariableInstrument};
    use tfp_core::production::estimate_pi;
    // scenario, n_units, strength, misclassify n/m/g as exogenous?
    for (label, n_units, strength, misclass) in [
        ("n exog, N=1000", 1000usize, 0.5, vec!["n"]),
        ("n exog, N=4000", 4000, 0.5, vec!["n"]),
        ("n,m,g exog, N=1000", 1000, 0.5, vec!["n", "m", "g"]),
        ("n,m,g exog s=1, N=1000", 1000, 1.0, vec!["n", "m", "g"]),
        ("n exog s=1, N=1000", 1000, 1.0, vec!["n"]),
    ] {
        let mut rejections = 0;
        let reps = 50;
        for r in 0..reps {
            let cfg = DgpConfig {
                n_units,
                n_periods: 8,
                endogeneity_strength: strength,
                seed: 200_000 + r,
                ..DgpConfig::default()
            };
            let sp = generate(&cfg).unwrap();
            let (ds, mut spec) = build_production_spec(&sp.panel, true).unwrap();
            for (name, rule) in &mut spec.instruments.variables {
                if misclass.contains(&name.as_str()) {
                    *rule = VariableInstrument::exogenous();
                }
            }
            let fit = estimate_pi(&ds, &spec).unwrap();
            let p = fit
                .tests
                .iter()
                .find(|t| t.name == "Sargan")
                .map(|t| t.p_value)
                .unwrap();
            if p < 0.05 {
                rejections += 1;
            }
        }
        println!("{label}: power = {}", rejections as f64 / reps as f64);
    }
    let _ = ModelSpec {
        dependent: String::new(),
        regressors: vec![],
        time_dummies: false,
        constant_in_levels: false,
    };
}

#[test]
#[ignore]
fn sargan_ar_model_probe() {
    use tfp_core::diagnostics::sargan;
    use tfp_core::gmm::ModelSpec;
    use tfp_core::instruments::{InstrumentSpec, VariableInstrument};
    let model = ModelSpec {
        dependent: "y".into(),
        regressors: vec!["y_lag_1".into()],
        time_dummies: true,
        constant_in_levels: true,
    };
    for (label, collapse, lag_max) in [("collapsed 2..3", true, 3), ("uncollapsed 2..4", false, 4)] {
        let instruments = InstrumentSpec {
            variables: vec![("y".into(), {
                let mut r = VariableInstrument::predetermined().with_lags(2, Some(lag_max));
                if collapse {
                    r = r.collapsed();
                }
                r
            })],
            include_time_dummies: true,
        };
        let mut stats = Vec::new();
        let mut dof = 0;
        for r in 0..60u64 {
            let cfg = DgpConfig {
                n_units: 4000,
                n_periods: 8,
                rho: 0.5,
                beta: [0.0; 5],
                seed: 90_000 + r,
                ..DgpConfig::default()
            };
            let sp = generate(&cfg).unwrap();
            let ds = sp.panel.lag("y", 1).unwrap();
            let diff = build_difference_instruments(&ds, &instruments, &model).unwrap();
            let level = build_level_instruments(&ds, &instruments, &model).unwrap();
            let z = assemble_system(&diff, &level).unwrap();
            let fit = estimate_one_step(&ds, &model, &z).unwrap();
            let fit = estimate_two_step(fit, &ds, &model, &z).unwrap();
            let t = sargan(&fit, &z).unwrap();
            stats.push(t.statistic);
            dof = t.dof.unwrap();
            if r == 0 {
                println!(
                    "{label}: z={} p={} weight_rank={:?}",
                    z.column_count(),
                    fit.labels.len(),
                    fit.weight_rank
                );
                // Moment covariance from the one-step residuals, rebuilt here.
                let zc = z.column_count();
                let mut gram = nalgebra::DMatrix::<f64>::zeros(zc, zc);
                let beta = fit.coefficients.clone();
                let design = tfp_core::gmm::build_design(&ds, &model, &z.layout).unwrap();
                for (block, u) in z.units.iter().zip(design.units.iter()) {
                    let e = &u.y - &u.x * &beta;
                    let g = block.z.transpose() * e;
                    gram += &g * g.transpose();
                }
                let eig = gram.clone().symmetric_eigen();
                let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
                let rank = eig.eigenvalues.iter().filter(|&&v| v > max * 1e-10).count();
                println!("  moment covariance rank = {rank} / {zc}");
                // Which columns do the near-null directions load on?
                let names = &z.labels;
                for (j, &ev) in eig.eigenvalues.iter().enumerate() {
                    if ev <= max * 1e-10 {
                        let v = eig.eigenvectors.column(j);
                        let mut loads: Vec<(f64, &str)> = names
                            .iter()
                            .enumerate()
                            .map(|(c, n)| (v[c].abs(), n.as_str()))
                            .collect();
                        loads.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                        let top: Vec<String> = loads
                            .iter()
                            .take(5)
                            .map(|(w, n)| format!("{n}:{w:.3}"))
                            .collect();
                        println!("  null dir (ev={ev:.2e}): {}", top.join(" "));
                    }
                }
            }
        }
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        println!("{label}: dof={dof} mean(J)={mean:.2}");
    }
}

#[test]
#[ignore]
fn md_bias_probe() {
    use tfp_core::synthetic::monte_carlo;
    for (phi, collapse) in [([0.5, 0.3], false), ([0.3, 0.5], false), ([0.2, 0.6], false), ([0.2, 0.6], true)] {
        let cfg = DgpConfig {
            n_units: 1000,
            n_periods: 10,
            free_input_persistence: phi,
            seed: 9000,
            ..DgpConfig::default()
        };
        let stats = monte_carlo(&cfg, 20, |sp| {
            let (ds, spec) = build_production_spec(&sp.panel, collapse)?;
            let fit = tfp_core::production::estimate_pi(&ds, &spec)?;
            let md = tfp_core::production::minimum_distance(&fit.pi)?;
            let mut names = vec!["rho".to_string()];
            let mut estimates = vec![md.rho];
            let mut truth = vec![cfg.rho];
            for (i, f) in md.factor_names.iter().enumerate() {
                names.push(f.clone());
                estimates.push(md.beta[i]);
                truth.push(cfg.beta[i]);
            }
            Ok(tfp_core::synthetic::McOutcome {
                names,
                estimates,
                std_errors: vec![f64::NAN; 6],
                truth,
                p_values: vec![],
            })
        })
        .unwrap();
        print!("phi={phi:?} collapse={collapse}  bias:");
        for (n, b) in stats.names.iter().zip(stats.mean_bias.iter()) {
            print!(" {n}={b:+.3}");
        }
        println!();
    }
}

#[test]
#[ignore]
fn exogenous_factor_probe() {
    for n in [2000usize, 8000] {
        let cfg = DgpConfig {
            n_units: n,
            n_periods: 8,
            endogeneity_strength: 0.0,
            seed: 4242,
            ..DgpConfig::default()
        };
        let sp = generate(&cfg).unwrap();
        for collapse in [false, true] {
            let (ds, spec) = build_production_spec(&sp.panel, collapse).unwrap();
            let fit = tfp_core::production::estimate_pi(&ds, &spec).unwrap();
            let md = tfp_core::production::minimum_distance(&fit.pi).unwrap();
            println!(
                "N={n} collapse={collapse} rho={:+.3} beta={:?}",
                md.rho,
                md.beta.iter().map(|b| (b * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
#[ignore]
fn identification_rank_probe() {
    let cfg = DgpConfig { n_units: 16000, n_periods: 10, seed: 4242, ..DgpConfig::default() };
    let sp = generate(&cfg).unwrap();
    for collapse in [false, true] {
        let (ds, spec) = build_production_spec(&sp.panel, collapse).unwrap();
        let diff = build_difference_instruments(&ds, &spec.instruments, &spec.model).unwrap();
        let level = build_level_instruments(&ds, &spec.instruments, &spec.model).unwrap();
        let z = assemble_system(&diff, &level).unwrap();
        let design = tfp_core::gmm::build_design(&ds, &spec.model, &z.layout).unwrap();
        let p = design.labels.len();
        let zc = z.column_count();
        let mut m = nalgebra::DMatrix::<f64>::zeros(zc, p);
        for (zb, du) in z.units.iter().zip(design.units.iter()) {
            assert_eq!(zb.unit, du.unit);
            m += zb.z.transpose() * &du.x;
        }
        m /= cfg.n_units as f64;
        // Scale columns to unit norm so singular values compare identification
        // strength per coefficient direction.
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let norm = m.column(j).norm();
            scales.push(norm);
            if norm > 0.0 {
                let col = m.column(j) / norm;
                m.set_column(j, &col);
            }
        }
        let svd = nalgebra::SVD::new(m.clone(), true, true);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        println!("collapse={collapse} z={zc} p={p}");
        println!("  largest sv  = {:.4}", sv[0]);
        println!("  smallest sv = {:?}", &sv[p.saturating_sub(4)..]);
        // Right singular vector for the smallest singular value.
        let vt = svd.v_t.unwrap();
        let idx = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let dir = vt.row(idx);
        println!("  weakest direction (label: weight, only |w|>0.05):");
        for (j, label) in design.labels.iter().enumerate() {
            if dir[j].abs() > 0.05 {
                println!("    {label:10} {:+.3}", dir[j]);
            }
        }
    }
}

#[test]
#[ignore]
fn bias_vs_sample_size() {
    for n in [1000usize, 4000, 16000] {
        let cfg = DgpConfig { n_units: n, n_periods: 10, seed: 4242, ..DgpConfig::default() };
        let sp = generate(&cfg).unwrap();
        for collapse in [false, true] {
            let (ds, spec) = build_production_spec(&sp.panel, collapse).unwrap();
            let diff = build_difference_instruments(&ds, &spec.instruments, &spec.model).unwrap();
            let level = build_level_instruments(&ds, &spec.instruments, &spec.model).unwrap();
            let z = assemble_system(&diff, &level).unwrap();
            let fit1 = estimate_one_step(&ds, &spec.model, &z).unwrap();
            let p1 = fit1.coefficients[0];
            let pn = fit1.coefficients[5];
            let pm = fit1.coefficients[7];
            let fit2 = estimate_two_step(fit1, &ds, &spec.model, &z).unwrap();
            println!(
                "N={n:6} collapse={collapse:5} z={:3}  1step: rho={p1:+.3} n={pn:+.3} m={pm:+.3}  2step: rho={:+.3} n={:+.3} m={:+.3}",
                z.column_count(),
                fit2.coefficients[0],
                fit2.coefficients[5],
                fit2.coefficients[7],
            );
        }
    }
}

#[test]
#[ignore]
fn dump_pipeline_states() {
    let cfg = DgpConfig { n_units: 1000, n_periods: 10, seed: 4242, ..DgpConfig::default() };
    let sp = generate(&cfg).unwrap();
    for collapse in [false, true] {
        let (ds, spec) = build_production_spec(&sp.panel, collapse).unwrap();
        let diff = build_difference_instruments(&ds, &spec.instruments, &spec.model).unwrap();
        let level = build_level_instruments(&ds, &spec.instruments, &spec.model).unwrap();
        let z = assemble_system(&diff, &level).unwrap();
        println!("collapse={collapse} z={} warnings={:?}", z.column_count(), z.warnings);
        let fit1 = estimate_one_step(&ds, &spec.model, &z).unwrap();
        println!("  one-step:");
        for (l, c) in fit1.labels.iter().zip(fit1.coefficients.iter()).take(11) {
            println!("    {l:10} {c:8.4}");
        }
        let fit2 = estimate_two_step(fit1, &ds, &spec.model, &z).unwrap();
        let fit2 = windmeijer_correct(fit2, &ds, &spec.model, &z).unwrap();
        println!("  two-step:");
        for (l, c) in fit2.labels.iter().zip(fit2.coefficients.iter()).take(11) {
            println!("    {l:10} {c:8.4}");
        }
    }
}
