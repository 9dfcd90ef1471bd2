//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use odcast::config::RunConfig;
use odcast::evaluation::{improvement, rmse, rmsn, sse, stratified_eval, EvaluationReport, Method, Stratum};
use odcast::gradcheck::{suite, SUITE_TOLERANCE};
use odcast::kalman::{
    estimate_assignment, ground_truth_assignment, AugmentedKalmanState, KalmanConfig, KalmanFilter, MeasurementModel,
    TransitionModel,
};
use odcast::pipeline;
use odcast::rng::substream;
use odcast::simulator::{generate_od_panel, simulate_link_counts, CountMode};
use odcast::topology::{DirectedNetwork, Link, LinkAdjacency};
use rand::Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

fn single_core<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    in_pool(1, f)
}

fn run_criterion(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (ok, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("criterion {n} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    ok
}

// ---------------------------------------------------------------- pipeline

struct PipelineRun {
    dir: PathBuf,
    report: EvaluationReport,
    elapsed: Duration,
}

fn run_pipeline(config: &RunConfig, dir: &Path) -> Result<PipelineRun, String> {
    let start = Instant::now();
    let data = dir.join("data");
    let models = dir.join("models");
    let kalman = dir.join("kalman");
    let eval = dir.join("eval");
    let e = |x: odcast::Error| x.to_string();
    pipeline::cmd_simulate(config, &data).map_err(e)?;
    pipeline::cmd_train(config, &data, &models).map_err(e)?;
    pipeline::cmd_kalman(config, &data, &kalman).map_err(e)?;
    let report = pipeline::cmd_evaluate(config, &data, &models, &kalman, &eval).map_err(e)?;
    pipeline::cmd_compare(&[eval.join(pipeline::REPORT_CSV)], &dir.join("compare")).map_err(e)?;
    Ok(PipelineRun { dir: dir.to_path_buf(), report, elapsed: start.elapsed() })
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable run directory") {
            let p = entry.expect("directory entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

// --------------------------------------------------------------- criteria

fn header(line: &str) -> Vec<&str> {
    line.split("  ").map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn table_layout(run: &Result<PipelineRun, String>) -> Check {
    let run = run.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let text = fs::read_to_string(run.dir.join("eval").join(pipeline::REPORT_TABLES)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let t1 = lines.iter().position(|l| *l == "Prediction comparison between FL-GCN and Kalman filter.").ok_or("missing first table title")?;
    let t2 = lines
        .iter()
        .position(|l| *l == "Prediction comparison between FL-GCN and Kalman filter for different flows.")
        .ok_or("missing second table title")?;
    let columns = ["FL-GCN-CNN", "FL-GCN-FCN", "Kalman filter", "Historical"];
    ensure!(header(lines[t1 + 1]) == columns, "first table columns {:?}", header(lines[t1 + 1]));
    ensure!(header(lines[t2 + 1]) == columns, "second table columns {:?}", header(lines[t2 + 1]));
    let body1 = &lines[t1 + 2..t1 + 8];
    for (i, row) in body1.iter().enumerate() {
        ensure!(row.contains(&format!("{}-Step Predicted", i % 3 + 1)), "first table row {i}: {row}");
        ensure!(row.split_whitespace().filter(|w| w.parse::<f64>().is_ok()).count() == 4, "first table row {i} values: {row}");
    }
    ensure!(body1[0].starts_with("RMSE") && body1[3].starts_with("RMSN"), "first table metric labels");
    let body2 = &lines[t2 + 2..t2 + 14];
    for (i, row) in body2.iter().enumerate() {
        ensure!(row.contains(&format!("{}-Step Predicted", i % 3 + 1)), "second table row {i}: {row}");
        ensure!(row.split_whitespace().rev().take(4).all(|w| w.parse::<f64>().is_ok()), "second table row {i} values: {row}");
    }
    ensure!(body2[0].contains("Flows < 100") && body2[3].contains("Flows >= 100"), "second table flow labels");
    ensure!(body2[0].starts_with("RMSE") && body2[6].starts_with("RMSN"), "second table metric labels");
    let methods = Method::ALL.len();
    let horizons = run.report.horizons().len();
    ensure!(methods == 4 && horizons == 3, "report covers {methods} methods x {horizons} horizons");
    Ok("published table values come from proprietary turnpike data and are not reproduced; both tables emitted in the published layout on synthetic data".into())
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let entries = single_core(|| suite(20)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for e in &entries {
        ensure!(e.seeds >= 20, "{} ran {} seeds", e.name, e.seeds);
        ensure!(e.passed && e.max_relative_error <= SUITE_TOLERANCE, "{} max relative error {:.3e}", e.name, e.max_relative_error);
    }
    for needed in ["matmul", "conv2d", "relu", "mse_loss", "flgcn-fcn", "flgcn-cnn"] {
        ensure!(entries.iter().any(|e| e.name == needed), "{needed} missing from the suite");
    }
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    let worst = entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max);
    Ok(format!("{} checks x 20 seeds, worst {worst:.2e}, {elapsed:.1?} on one core", entries.len()))
}

fn random_digraph(seed: u64) -> DirectedNetwork {
    let mut rng = substream(seed, "digraph", &[]);
    let n = rng.random_range(2..=8usize);
    let density = rng.random_range(0.1..0.9);
    let mut links = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(density) {
                let id = links.len();
                links.push(Link { id, from_node: a, to_node: b, length: rng.random_range(0.5..9.0), has_sensor: rng.random_bool(0.8) });
            }
        }
    }
    DirectedNetwork::new(n, links).expect("valid digraph")
}

fn topology_oracles() -> Check {
    let graphs = 200;
    for seed in 0..graphs {
        let net = random_digraph(seed);
        let s = net.sensor_links();
        let l = |c: usize| &net.links()[s[c]];
        let a = net.line_graph().0;
        let p = net.incidence().0;
        let r = net.line_graph().renormalized().0;
        ensure!(a.shape() == (s.len(), s.len()) && p.shape() == (net.node_count(), s.len()), "seed {seed}: shapes");
        for i in 0..s.len() {
            for j in 0..s.len() {
                let want = if l(i).to_node == l(j).from_node { 1.0 } else { 0.0 };
                ensure!(a[(i, j)] == want, "seed {seed}: line graph ({i}, {j})");
            }
        }
        for c in 0..s.len() {
            for v in 0..net.node_count() {
                let want = f64::from(u8::from(l(c).from_node == v)) - f64::from(u8::from(l(c).to_node == v));
                ensure!(p[(v, c)] == want, "seed {seed}: incidence ({v}, {c})");
            }
            ensure!(p.column(c).sum() == 0.0, "seed {seed}: incidence column {c}");
        }
        for i in 0..s.len() {
            let degree = 1.0 + a.row(i).iter().filter(|x| **x != 0.0).count() as f64;
            for j in 0..s.len() {
                let want = if i == j || a[(i, j)] != 0.0 { 1.0 / degree } else { 0.0 };
                ensure!((r[(i, j)] - want).abs() <= 1e-15, "seed {seed}: renormalized ({i}, {j})");
            }
            ensure!((r.row(i).sum() - 1.0).abs() <= 1e-12, "seed {seed}: renormalized row {i}");
        }
    }
    let cycle = DirectedNetwork::new(
        3,
        (0..3).map(|i| Link { id: i, from_node: i, to_node: (i + 1) % 3, length: 1.0, has_sensor: true }).collect(),
    )
    .unwrap();
    let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
    ensure!(cycle.incidence().0 == want, "3-cycle incidence");
    let r = LinkAdjacency(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).renormalized().0;
    ensure!(r == DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]), "two-link renormalization {r}");
    Ok(format!("{graphs} random digraphs (n <= 8) against brute-force loops"))
}

fn random_system(seed: u64, n_od: usize, n_l: usize, q_prime: usize, p_prime: usize, q: f64, r: f64) -> (TransitionModel, MeasurementModel) {
    let mut rng = substream(seed, "system", &[]);
    let f_blocks = (0..q_prime).map(|_| DVector::from_fn(n_od, |_, _| rng.random_range(-0.6..0.6))).collect();
    let a_blocks = (0..=p_prime).map(|_| DMatrix::from_fn(n_l, n_od, |_, _| rng.random_range(0.0..1.0))).collect();
    (
        TransitionModel { f_blocks, q_diag: DVector::from_element(n_od, q), fallback_pairs: vec![] },
        MeasurementModel { a_blocks, r_diag: DVector::from_element(n_l, r) },
    )
}

fn kalman_correctness() -> Check {
    // (a) scalar cases
    let scalar = |f: f64, q: f64, a: f64, r: f64| {
        let t = TransitionModel { f_blocks: vec![DVector::from_element(1, f)], q_diag: DVector::from_element(1, q), fallback_pairs: vec![] };
        let m = MeasurementModel { a_blocks: vec![DMatrix::from_element(1, 1, a)], r_diag: DVector::from_element(1, r) };
        KalmanFilter::new(&t, &m, KalmanConfig::new(1, 0).unwrap()).unwrap()
    };
    let st = |x: f64, p: f64| AugmentedKalmanState { x: DVector::from_element(1, x), cov: DMatrix::from_element(1, 1, p) };
    let pred = scalar(0.5, 0.1, 1.0, 1.0).predict(&st(2.0, 1.0));
    ensure!((pred.x[0] - 1.0).abs() <= 1e-10 && (pred.cov[(0, 0)] - 0.35).abs() <= 1e-10, "predict gave {} {}", pred.x[0], pred.cov[(0, 0)]);
    let upd = scalar(0.5, 0.1, 1.0, 1.0).update(&st(0.0, 1.0), &[1.0], &[0.0]).map_err(|e| e.to_string())?;
    ensure!((upd.x[0] - 0.5).abs() <= 1e-10 && (upd.cov[(0, 0)] - 0.5).abs() <= 1e-10, "update gave {} {}", upd.x[0], upd.cov[(0, 0)]);
    let upd = scalar(0.9, 0.2, 2.0, 0.5).update(&st(1.0, 3.0), &[7.0], &[2.0]).map_err(|e| e.to_string())?;
    // Gain 3*2/(4*3 + 0.5) = 0.48; innovation 5 - 2 = 3.
    ensure!((upd.x[0] - 2.44).abs() <= 1e-10, "update with gain 0.48 gave {}", upd.x[0]);
    // Joseph form (1 - Ka)^2 P + K^2 R equals (1 - Ka) P at the optimal gain.
    let joseph = 0.04f64.powi(2) * 3.0 + 0.48 * 0.48 * 0.5;
    ensure!((joseph - 0.04 * 3.0).abs() <= 1e-12, "hand values disagree");
    ensure!((upd.cov[(0, 0)] - joseph).abs() <= 1e-10, "joseph covariance {}", upd.cov[(0, 0)]);

    // (b) closed loop, n_od = 4
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let config = KalmanConfig::new(2, 1).unwrap();
        let (t, m) = random_system(seed, 4, 3, 2, 1, 1e-12, 1e-12);
        let dim = 4 * (config.s() + 1);
        let kf = KalmanFilter::new(&t, &m, config).unwrap().with_initial_covariance(DMatrix::identity(dim, dim) * 100.0);
        let mut f = DMatrix::zeros(dim, dim);
        let mut h = DMatrix::zeros(3, dim);
        for r in 0..4 {
            f[(r, r)] = t.f_blocks[0][r];
            f[(r, 4 + r)] = t.f_blocks[1][r];
            f[(4 + r, r)] = 1.0;
        }
        for (p, a) in m.a_blocks.iter().enumerate() {
            h.view_mut((0, 4 * p), (3, 4)).copy_from(a);
        }
        let mut rng = substream(seed, "truth", &[]);
        let mut truth = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
        let mut state = kf.initial_state();
        for step in 0..40 {
            if step > 0 {
                truth = &f * &truth;
                state = kf.predict(&state);
            }
            let y: Vec<f64> = (&h * &truth).iter().copied().collect();
            state = kf.update(&state, &y, &[0.0; 3]).map_err(|e| e.to_string())?;
            if step >= 12 {
                worst = worst.max((&state.x - &truth).amax());
            }
        }
    }
    ensure!(worst < 1e-6, "closed-loop error {worst:.2e}");

    // (c) PSD over 1000 random steps
    let (t, mut m) = random_system(7, 4, 5, 1, 2, 3.0, 0.5);
    m.r_diag[0] = 1e-10;
    let kf = KalmanFilter::new(&t, &m, KalmanConfig::new(1, 2).unwrap()).unwrap();
    let mut rng = substream(7, "observations", &[]);
    let mut state = kf.initial_state();
    let mut min_eig = f64::INFINITY;
    for step in 0..1000 {
        state = kf.predict(&state);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..200.0)).collect();
        let yh: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..200.0)).collect();
        state = kf.update(&state, &y, &yh).map_err(|e| e.to_string())?;
        let e = state.min_eigenvalue();
        ensure!(state.asymmetry() == 0.0 && e >= -1e-9 * state.cov.diagonal().amax().max(1.0), "step {step}: min eigenvalue {e}");
        min_eig = min_eig.min(e);
    }
    Ok(format!("scalar cases within 1e-10, closed-loop error {worst:.1e}, min eigenvalue over 1000 steps {min_eig:.2e}"))
}

fn conservation() -> Check {
    let config = RunConfig::default();
    let (net, panel) = pipeline::simulate(&config).map_err(|e| e.to_string())?;
    let routes = net.routes().map_err(|e| e.to_string())?;
    let intervals = panel.intervals_per_day();
    for day in 0..panel.days() {
        for (s, &link) in net.sensor_links().iter().enumerate() {
            let counted: f64 = (0..intervals).map(|h| panel.link.at(day, h)[s]).sum::<f64>() + panel.closure_at(day)[s];
            let departed: f64 = routes
                .iter()
                .enumerate()
                .filter(|(_, r)| r.links.contains(&link))
                .map(|(r, _)| (0..intervals).map(|h| panel.od.at(day, h)[r]).sum::<f64>())
                .sum();
            ensure!(counted.fract() == 0.0 && counted == departed, "day {day} sensor {s}: {counted} vs {departed}");
        }
    }
    let blocks = ground_truth_assignment(&net, config.network.speed_mph, config.network.interval_minutes).map_err(|e| e.to_string())?;
    for (r, route) in routes.iter().enumerate() {
        for (s, link) in net.sensor_links().iter().enumerate() {
            let total: f64 = blocks.iter().map(|b| b[(s, r)]).sum();
            let want = if route.links.contains(link) { 1.0 } else { 0.0 };
            ensure!((total - want).abs() <= 1e-12, "pair {r} link {s}: fractions sum to {total}");
        }
    }
    Ok(format!("{} days x {} sensors exact; fractions sum to 1 per (pair, link)", panel.days(), net.sensor_count()))
}

fn assignment_estimation() -> Check {
    let config = RunConfig::default();
    let net = config.network().map_err(|e| e.to_string())?;
    let (speed, minutes) = (config.network.speed_mph, config.network.interval_minutes);
    let p = config.p_prime(&net).map_err(|e| e.to_string())?;
    let truth = ground_truth_assignment(&net, speed, minutes).map_err(|e| e.to_string())?;
    let gap = |est: &[DMatrix<f64>]| est.iter().zip(&truth).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);

    let od = generate_od_panel(&config.demand_model(&net), 30, &net).map_err(|e| e.to_string())?;
    let (link, _) = simulate_link_counts(&od, &net, speed, minutes, CountMode::Analytic, config.seed).map_err(|e| e.to_string())?;
    let days: Vec<usize> = (0..30).collect();
    let clean = estimate_assignment(&net, &od, &link, &days, p, speed, minutes).map_err(|e| e.to_string())?;
    let clean_gap = gap(&clean.blocks);
    ensure!(clean_gap <= 1e-6, "noiseless gap {clean_gap:.2e}");

    let (_, panel) = pipeline::simulate(&config).map_err(|e| e.to_string())?;
    let days: Vec<usize> = (0..panel.days()).collect();
    let noisy = estimate_assignment(&net, &panel.od, &panel.link, &days, p, speed, minutes).map_err(|e| e.to_string())?;
    let noisy_gap = gap(&noisy.blocks);
    ensure!(noisy_gap <= 0.05, "Poisson gap {noisy_gap:.4} at {} days", panel.days());
    Ok(format!("noiseless gap {clean_gap:.1e}, Poisson vehicle counts over {} days gap {noisy_gap:.4}", panel.days()))
}

fn trends(run: &Result<PipelineRun, String>) -> Check {
    let run = run.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    ensure!(run.elapsed < Duration::from_secs(600), "pipeline took {:.1?}", run.elapsed);
    let r = &run.report;
    let metric = |m: Method, h: usize, rmsn: bool| {
        let row = r.get(m, h, Stratum::All).expect("row present");
        if rmsn { row.rmsn.expect("rmsn") } else { row.rmse.expect("rmse") }
    };
    for h in 1..=3 {
        let hist = metric(Method::Historical, h, true);
        for m in [Method::FlGcnCnn, Method::FlGcnFcn] {
            ensure!(metric(m, h, true) < hist, "(a) {} RMSN {:.4} vs historical {hist:.4} at horizon {h}", m.label(), metric(m, h, true));
        }
        let (kf, hist_rmse) = (metric(Method::Kalman, h, false), metric(Method::Historical, h, false));
        ensure!(kf < hist_rmse, "(c) Kalman RMSE {kf:.3} vs historical {hist_rmse:.3} at horizon {h}");
    }
    let (cnn, fcn) = (metric(Method::FlGcnCnn, 1, false), metric(Method::FlGcnFcn, 1, false));
    let b = if cnn <= fcn {
        format!("(b) CNN {cnn:.3} <= FCN {fcn:.3}")
    } else if cnn <= 1.02 * fcn {
        let note = format!("(b) waived: CNN {cnn:.3} above FCN {fcn:.3} by {:.2}%, within 2%", 100.0 * (cnn / fcn - 1.0));
        eprintln!("acceptance: {note}");
        note
    } else {
        return Err(format!("(b) CNN RMSE {cnn:.3} exceeds FCN {fcn:.3} by more than 2%"));
    };
    Ok(format!(
        "(a) both FL-GCN variants below historical RMSN at h=1..3, {b}, (c) Kalman below historical RMSE; {:.1?} on one core",
        run.elapsed
    ))
}

fn metric_identities() -> Check {
    let mut rng = substream(0, "metrics", &[]);
    let cases = 2000;
    for case in 0..cases {
        let n = rng.random_range(1..400usize);
        let truth: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u32..500))).collect();
        let pred: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u32..500))).collect();
        let threshold = f64::from(rng.random_range(0u32..500));
        let e = sse(&truth, &pred).map_err(|e| e.to_string())?;
        let (below, above): (Vec<(f64, f64)>, Vec<(f64, f64)>) = truth.iter().copied().zip(pred.iter().copied()).partition(|(t, _)| *t < threshold);
        let part_sse = |v: &[(f64, f64)]| v.iter().map(|(t, p)| (t - p) * (t - p)).sum::<f64>();
        ensure!(part_sse(&below) + part_sse(&above) == e, "case {case}: SSE additivity");
        let r = rmse(&truth, &pred).map_err(|e| e.to_string())?;
        ensure!(r == (e / n as f64).sqrt(), "case {case}: rmse");
        let total: f64 = truth.iter().sum();
        if total > 0.0 {
            let q = rmsn(&truth, &pred).map_err(|e| e.to_string())?;
            ensure!(q == (n as f64 * e).sqrt() / total, "case {case}: rmsn");
            ensure!((q - r * n as f64 / total).abs() <= 1e-12 * q.max(1e-300), "case {case}: rmsn = rmse * N / total");
        }
        let rows = stratified_eval(Method::Kalman, 1, &truth, &pred, threshold).map_err(|e| e.to_string())?;
        for (stratum, part) in [(Stratum::Below, &below), (Stratum::AtOrAbove, &above)] {
            let row = rows.iter().find(|x| x.stratum == stratum).unwrap();
            ensure!(row.n == part.len(), "case {case}: stratum size");
            let (t, p): (Vec<f64>, Vec<f64>) = part.iter().copied().unzip();
            ensure!(row.rmse == rmse(&t, &p).ok() && row.rmsn == rmsn(&t, &p).ok(), "case {case}: stratum metrics");
        }
    }
    let ex1 = format!("{:.7}", rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap());
    ensure!(ex1 == "3.5355339", "rmse example gave {ex1}");
    ensure!(rmsn(&[1.0, 1.0], &[2.0, 2.0]).unwrap() == 1.0, "rmsn example");
    ensure!(rmse(&[4.0, 9.0], &[4.0, 9.0]).unwrap() == 0.0, "identical inputs");
    let pct = format!("{:.2}", 100.0 * improvement(9.383, 7.629));
    ensure!(pct == "18.69", "improvement example gave {pct}");
    ensure!(improvement(9.383, 9.383) == 0.0, "identical methods");
    Ok(format!("{cases} randomized integer cases exact; printed examples 3.5355339, 1, 18.69%"))
}

fn determinism(first: &Result<PipelineRun, String>, second: &Result<PipelineRun, String>) -> Check {
    let a = first.as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let b = second.as_ref().map_err(|e| format!("second run failed: {e}"))?;
    let (fa, fb) = (files_under(&a.dir), files_under(&b.dir));
    ensure!(fa.keys().eq(fb.keys()), "different file sets");
    for (path, bytes) in &fa {
        ensure!(bytes == &fb[path], "{} differs", path.display());
    }
    let kinds = |ext: &str| fa.keys().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    Ok(format!(
        "{} artifacts byte-identical across a one-thread and a four-thread run ({} checkpoints, {} csv)",
        fa.len(),
        kinds("ckpt"),
        kinds("csv")
    ))
}

fn main() -> ExitCode {
    let config = RunConfig::default();
    let root = tempfile::tempdir().expect("temporary directory");
    let first = single_core(|| run_pipeline(&config, &root.path().join("run1")));
    let second = in_pool(4, || run_pipeline(&config, &root.path().join("run2")));

    let results = [
        run_criterion(1, "published tables and report layout", || table_layout(&first)),
        run_criterion(2, "gradient suite", gradient_suite),
        run_criterion(3, "topology oracles", topology_oracles),
        run_criterion(4, "kalman correctness", kalman_correctness),
        run_criterion(5, "simulator conservation", conservation),
        run_criterion(6, "assignment estimation", assignment_estimation),
        run_criterion(7, "end-to-end trends", || trends(&first)),
        run_criterion(8, "metric identities", metric_identities),
        run_criterion(9, "determinism", || determinism(&first, &second)),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
