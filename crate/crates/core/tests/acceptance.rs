//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ilc_core::config::preset;
use ilc_core::controller::{j_index, update_input, ErrorHistory, LearningParams};
use ilc_core::diagnostics::{analyze, AnalysisOptions, DiagnosticsReport};
use ilc_core::engine::{run, RunConfig, RunRecord};
use ilc_core::estimator::{apriori_bound, h_index, q_matrix, update_estimates, EstimateTable};
use ilc_core::linearization::{verify_linearization, Excitation};
use ilc_core::plant::{PlantModel, PlantRegistry};
use ilc_core::triangular::LowerTriangular;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_preset(name: &str, iterations: Option<usize>) -> Result<(RunConfig, RunRecord, Duration), String> {
    let mut config = preset(name).ok_or_else(|| format!("missing preset {name}"))?;
    if let Some(k) = iterations {
        config.iterations = k;
    }
    let start = Instant::now();
    let record = run(&config, &PlantRegistry::builtin()).map_err(|e| e.to_string())?;
    Ok((config, record, start.elapsed()))
}

fn report_for(config: &RunConfig, record: &RunRecord) -> Result<DiagnosticsReport, String> {
    let plant = config.resolve_plant(&PlantRegistry::builtin()).map_err(|e| e.to_string())?;
    let history = record.history.as_ref().ok_or("run kept no history")?;
    analyze(&plant, &config.params, history, AnalysisOptions::default()).map_err(|e| e.to_string())
}

fn nominal_reproduction(record: &RunRecord, elapsed: Duration) -> Outcome {
    let e400 = record.metrics[400].max_abs_e;
    let e1000 = record.metrics[1000].max_abs_e;
    let sup_u = record.sup_abs_input();
    check(
        elapsed < Duration::from_secs(30) && e400 <= 5e-2 && e1000 <= 1e-2 && sup_u <= 20.0,
        format!(
            "{:.2} s, max|e_400| = {e400:.3e}, max|e_1000| = {e1000:.3e}, sup|u| = {sup_u:.4}",
            elapsed.as_secs_f64()
        ),
    )
}

fn estimator_invariants(config: &RunConfig, record: &RunRecord, report: &DiagnosticsReport) -> Outcome {
    let history = record.history.as_ref().ok_or("run kept no history")?;
    let p = &config.params;
    let horizon = history.estimates[0].horizon();
    let bound = apriori_bound(
        history.estimates[0].initial().max_row_norm(),
        p.mu1,
        p.mu2,
        horizon,
        report.bounds.beta_theta,
    );
    let mut floor_violations = 0;
    let mut norm_violations = 0;
    let mut min_diag = f64::INFINITY;
    let mut max_norm: f64 = 0.0;
    for table in &history.estimates {
        for t in 0..horizon {
            let d = table.diagonal(t);
            min_diag = min_diag.min(d);
            if d < p.epsilon {
                floor_violations += 1;
            }
        }
        max_norm = max_norm.max(table.max_row_norm());
        if table.max_row_norm() > bound {
            norm_violations += 1;
        }
    }
    check(
        floor_violations == 0 && norm_violations == 0,
        format!(
            "min diag {min_diag:.4} (floor {}), max row norm {max_norm:.4} vs bound {bound:.4e} (beta_theta {:.2}), violations {floor_violations}/{norm_violations}",
            p.epsilon, report.bounds.beta_theta
        ),
    )
}

fn power_iteration_norm(q: &nalgebra::DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let n = q.nrows();
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..500 {
        let next = q.transpose() * (q * &v);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm.sqrt();
        v = next / norm;
    }
    estimate
}

fn q_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_spectral: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=8);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let du: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let mu1 = 10f64.powf(rng.gen_range(-3.0..1.0));
        let mu2 = 10f64.powf(rng.gen_range(-4.0..0.0));
        let q = q_matrix(&du, mu1, mu2);
        worst_spectral = worst_spectral.max(power_iteration_norm(&q, &mut rng));
        for _ in 0..10 {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
            worst_ratio = worst_ratio.max((&q * &x).norm() / x.norm());
        }
    }
    check(
        worst_spectral <= 1.0 + 1e-9 && worst_ratio <= 1.0 + 1e-9,
        format!("worst spectral norm {worst_spectral:.15}, worst |Qx|/|x| {worst_ratio:.15}"),
    )
}

fn random_row(rng: &mut ChaCha8Rng, len: usize, floor: f64) -> Vec<f64> {
    (0..len)
        .map(|i| if i + 1 == len { rng.gen_range(floor..3.0) } else { rng.gen_range(-2.0..2.0) })
        .collect()
}

fn estimation_optimality(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (mu1, mu2, floor) = (1.0, 0.001, 0.01);
    let mut done = 0;
    let mut failures = 0;
    while done < 500 {
        let n = rng.gen_range(1..=8);
        let rows: Vec<Vec<f64>> = (1..=n).map(|len| random_row(rng, len, floor)).collect();
        let prev = EstimateTable::from_initial(LowerTriangular::from_rows(rows).unwrap(), floor).unwrap();
        let du: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dy: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let next = update_estimates(&prev, &du, &dy, mu1, mu2).map_err(|e| e.to_string())?;
        if next.resets() > 0 {
            continue;
        }
        done += 1;
        for t in 0..n {
            let theta = next.row(t).to_vec();
            let old = prev.row(t);
            let h = |x: &[f64]| h_index(x, old, &du[..=t], dy[t], mu1, mu2).unwrap();
            let at = h(&theta);
            for i in 0..=t {
                for step in [1e-3, -1e-3] {
                    let mut moved = theta.clone();
                    moved[i] += step;
                    if h(&moved) < at {
                        failures += 1;
                    }
                }
            }
        }
    }
    Ok(failures)
}

fn learning_optimality(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut failures = 0;
    for case in 0..500 {
        let order = 1 + case % 4;
        let gammas: Vec<f64> = (0..order).map(|_| rng.gen_range(0.05..1.0)).collect();
        let params = LearningParams::new(rng.gen_range(0.1..3.0), gammas, 0.01, 1.0, 0.001).map_err(|e| e.to_string())?;
        let n = rng.gen_range(1..=8);
        // the oracle table doubles as the exact linearization
        let rows: Vec<Vec<f64>> = (1..=n).map(|len| random_row(rng, len, 0.1)).collect();
        let theta = EstimateTable::from_initial(LowerTriangular::from_rows(rows).unwrap(), 0.01).unwrap();
        let mut hist = ErrorHistory::new(order, n);
        for _ in 0..order {
            hist.push((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).map_err(|e| e.to_string())?;
        }
        let u_prev: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u = update_input(&u_prev, &theta, &hist, &params).map_err(|e| e.to_string())?;
        let du: Vec<f64> = u.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
        for t in 0..n {
            let row = theta.row(t);
            let past: Vec<f64> = (1..order).map(|lag| hist.lag(lag)[t]).collect();
            let cost = |x: f64| {
                let shift: f64 = (0..t).map(|i| row[i] * du[i]).sum::<f64>() + row[t] * x;
                j_index(x, hist.lag(1)[t] - shift, &past, &params)
            };
            let at = cost(du[t]);
            if cost(du[t] + 1e-3) < at || cost(du[t] - 1e-3) < at {
                failures += 1;
            }
        }
    }
    Ok(failures)
}

fn optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = estimation_optimality(&mut rng)?;
    let j = learning_optimality(&mut rng)?;
    check(
        h == 0 && j == 0,
        format!("500 reset-free estimator cases: {h} failures; 500 input-update cases: {j} failures"),
    )
}

fn secant_residuals() -> Outcome {
    let plant = PlantModel::benchmark(10).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = [0.0f64; 2];
    let mut failures = [0; 2];
    for (mode, robust) in [false, true].into_iter().enumerate() {
        for _ in 0..100 {
            let draw = |rng: &mut ChaCha8Rng| {
                let mut x = Excitation::nominal((0..10).map(|_| rng.gen_range(-1.0..=1.0)).collect());
                if robust {
                    x.w = (0..10).map(|_| rng.gen_range(-0.01..=0.01)).collect();
                    x.delta = rng.gen_range(-0.01..=0.01);
                }
                x
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let du = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let residual = verify_linearization(&plant, &a, &b, 129).map_err(|e| e.to_string())?;
            let ratio = residual / (1e-6 * (1.0 + du));
            worst[mode] = worst[mode].max(ratio);
            if ratio > 1.0 {
                failures[mode] += 1;
            }
        }
    }
    check(
        failures == [0, 0],
        format!(
            "worst residual / tolerance: nominal {:.3e}, robust {:.3e}; failures {}/{}",
            worst[0], worst[1], failures[0], failures[1]
        ),
    )
}

fn consistency(nominal: &DiagnosticsReport, robust: &DiagnosticsReport) -> Outcome {
    let tol = 1e-8;
    check(
        !nominal.robust && robust.robust && nominal.consistency_holds(tol) && robust.consistency_holds(tol),
        format!(
            "nominal e {:.3e} u {:.3e}; robust e {:.3e} u {:.3e} (relative, tol {tol:e})",
            nominal.max_consistency_err_e,
            nominal.max_consistency_err_u,
            robust.max_consistency_err_e,
            robust.max_consistency_err_u
        ),
    )
}

fn window_products(reports: &[&DiagnosticsReport]) -> Outcome {
    let mut windows = 0;
    let mut violations = 0;
    let mut worst_slack = f64::NEG_INFINITY;
    for report in reports {
        for row in &report.rows {
            if row.window_norm.is_nan() || row.window_zeta_max >= 1.0 {
                continue;
            }
            windows += 1;
            worst_slack = worst_slack.max(row.window_norm - row.window_zeta_max);
            if row.window_norm > row.window_zeta_max + 1e-12 {
                violations += 1;
            }
        }
        violations += report.window_violations;
    }
    check(
        windows > 0 && violations == 0,
        format!("{windows} windows with zeta* < 1, {violations} violations, max norm - zeta* = {worst_slack:.3e}"),
    )
}

fn robust_tracking() -> Outcome {
    let (_, bounded, _) = run_preset("sec6-robust", None)?;
    let late = bounded.max_error_between(900, 1000);
    let sup_u = bounded.sup_abs_input();
    let sup_y = bounded.sup_abs_output();
    let finite = sup_u.is_finite() && sup_y.is_finite();
    let (_, decaying, _) = run_preset("sec6-decaying", None)?;
    let final_decaying = decaying.final_metrics().max_abs_e;
    check(
        finite && sup_u <= 20.0 && late <= 0.1 && final_decaying <= 1e-2,
        format!(
            "bounded uncertainty: sup|u| = {sup_u:.4}, sup|y| = {sup_y:.4}, max|e| over k in [900,1000] = {late:.3e} (threshold 0.1); decaying: final max|e| = {final_decaying:.3e}"
        ),
    )
}

fn first_order() -> Outcome {
    let (config, record, _) = run_preset("sec6-first-order", None)?;
    let final_error = record.final_metrics().max_abs_e;
    check(
        config.params.order() == 1 && final_error <= 1e-2,
        format!("m = 1, final max|e| = {final_error:.3e}, sup|u| = {:.4}", record.sup_abs_input()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    let nominal = run_preset("sec6-nominal", None);
    let nominal_report = nominal.as_ref().map_err(Clone::clone).and_then(|(c, r, _)| report_for(c, r));
    results.push((
        "nominal reproduction",
        nominal.as_ref().map_err(Clone::clone).and_then(|(_, r, t)| nominal_reproduction(r, *t)),
    ));
    results.push((
        "estimator invariants",
        match (&nominal, &nominal_report) {
            (Ok((c, r, _)), Ok(rep)) => estimator_invariants(c, r, rep),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    ));
    results.push(("Q-matrix contraction", q_contraction()));
    results.push(("optimality oracles", optimality()));
    results.push(("linearization oracle", secant_residuals()));

    let short = |name| run_preset(name, Some(200)).and_then(|(c, r, _)| report_for(&c, &r));
    let short_nominal = short("sec6-nominal");
    let short_robust = short("sec6-robust");
    let (c6, c7) = match (&short_nominal, &short_robust) {
        (Ok(n), Ok(r)) => (consistency(n, r), window_products(&[n, r])),
        (Err(e), _) | (_, Err(e)) => (Err(e.clone()), Err(e.clone())),
    };
    results.push(("analysis-chain consistency", c6));
    results.push(("nonnegative-matrix window bound", c7));
    results.push(("robust tracking", robust_tracking()));
    results.push(("first-order mode", first_order()));

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
