use nalgebra::{DMatrix, DVector};
use odcast::kalman::{
    estimate_assignment, estimate_transition, ground_truth_assignment, AugmentedKalmanState, KalmanConfig, KalmanFilter,
    MeasurementModel, TransitionModel,
};
use odcast::rng::substream;
use odcast::simulator::{generate_od_panel, make_historical, simulate_link_counts, simulate_panel, CountMode, DemandModel, Fluctuation, Noise};
use odcast::topology::DirectedNetwork;
use rand::Rng;

fn random_models(seed: u64, n_od: usize, n_l: usize, q_prime: usize, p_prime: usize, q: f64, r: f64) -> (TransitionModel, MeasurementModel) {
    let mut rng = substream(seed, "models", &[]);
    let f_blocks = (0..q_prime).map(|_| DVector::from_fn(n_od, |_, _| rng.random_range(-0.6..0.6))).collect();
    let a_blocks = (0..=p_prime).map(|_| DMatrix::from_fn(n_l, n_od, |_, _| rng.random_range(0.0..1.0))).collect();
    (
        TransitionModel { f_blocks, q_diag: DVector::from_element(n_od, q), fallback_pairs: vec![] },
        MeasurementModel { a_blocks, r_diag: DVector::from_element(n_l, r) },
    )
}

/// Companion-form transition and stacked measurement, built independently.
fn dense_system(t: &TransitionModel, m: &MeasurementModel, s: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = t.n_od();
    let dim = n * (s + 1);
    let mut f = DMatrix::zeros(dim, dim);
    for (p, fb) in t.f_blocks.iter().enumerate() {
        for r in 0..n {
            f[(r, p * n + r)] = fb[r];
        }
    }
    for i in n..dim {
        f[(i, i - n)] = 1.0;
    }
    let mut h = DMatrix::zeros(m.r_diag.len(), dim);
    for (p, a) in m.a_blocks.iter().enumerate() {
        for i in 0..a.nrows() {
            for j in 0..n {
                h[(i, p * n + j)] = a[(i, j)];
            }
        }
    }
    (f, h)
}

#[test]
fn noiseless_trajectories_are_recovered() {
    for seed in 0..5 {
        let (n_od, n_l, q_prime, p_prime) = (4, 3, 2, 1);
        let config = KalmanConfig::new(q_prime, p_prime).unwrap();
        let (t, m) = random_models(seed, n_od, n_l, q_prime, p_prime, 1e-12, 1e-12);
        let s = config.s();
        let (f, h) = dense_system(&t, &m, s);
        let dim = n_od * (s + 1);
        let kf = KalmanFilter::new(&t, &m, config).unwrap().with_initial_covariance(DMatrix::identity(dim, dim) * 100.0);

        let mut rng = substream(seed, "truth", &[]);
        let mut truth = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
        let mut state = kf.initial_state();
        let zeros = vec![0.0; n_l];
        for step in 0..40 {
            if step > 0 {
                truth = &f * &truth;
                state = kf.predict(&state);
            }
            let y: Vec<f64> = (&h * &truth).iter().copied().collect();
            state = kf.update(&state, &y, &zeros).unwrap();
            if step >= 12 {
                let err = (&state.x - &truth).amax();
                assert!(err < 1e-6, "seed {seed} step {step}: {err}");
            }
        }
    }
}

fn check_psd(state: &AugmentedKalmanState, context: &str) {
    assert_eq!(state.asymmetry(), 0.0, "{context}");
    let scale = state.cov.diagonal().amax().max(1.0);
    assert!(state.min_eigenvalue() >= -1e-9 * scale, "{context}: {}", state.min_eigenvalue());
}

#[test]
fn covariance_stays_psd_over_a_long_random_run() {
    let (n_od, n_l, q_prime, p_prime) = (4, 5, 1, 2);
    let config = KalmanConfig::new(q_prime, p_prime).unwrap();
    let (t, mut m) = random_models(7, n_od, n_l, q_prime, p_prime, 3.0, 0.5);
    // Mixed noise scales, including a nearly noiseless sensor.
    m.r_diag[0] = 1e-10;
    m.r_diag[1] = 40.0;
    let kf = KalmanFilter::new(&t, &m, config).unwrap();
    let mut rng = substream(7, "observations", &[]);
    let mut state = kf.initial_state();
    check_psd(&state, "initial");
    for step in 0..1000 {
        state = kf.predict(&state);
        check_psd(&state, &format!("predict {step}"));
        let y: Vec<f64> = (0..n_l).map(|_| rng.random_range(0.0..200.0)).collect();
        let yh: Vec<f64> = (0..n_l).map(|_| rng.random_range(0.0..200.0)).collect();
        state = kf.update(&state, &y, &yh).unwrap();
        check_psd(&state, &format!("update {step}"));
    }
}

#[test]
fn update_shrinks_uncertainty() {
    let config = KalmanConfig::new(1, 1).unwrap();
    let (t, m) = random_models(3, 2, 2, 1, 1, 2.0, 1.0);
    let kf = KalmanFilter::new(&t, &m, config).unwrap();
    let prior = kf.predict(&kf.initial_state());
    let post = kf.update(&prior, &[10.0, 5.0], &[8.0, 8.0]).unwrap();
    assert!(post.cov.trace() < prior.cov.trace());
}

fn gravity_demand(n_d: usize, seed: u64, noise: Noise) -> DemandModel {
    DemandModel {
        base_od: DemandModel::gravity_base(n_d, 150.0, 0.35),
        profile: vec![0.55, 0.7, 0.85, 0.95, 1.05, 1.1, 1.1, 1.05, 1.0, 0.9, 0.85, 0.75, 0.7, 0.65],
        weekday_factor: [1.0, 1.02, 1.0, 0.98, 0.95, 0.6, 0.5],
        noise,
        fluctuation: Fluctuation { persistence: 0.8, volatility: 0.2, correlation: 0.5 },
        seed,
    }
}

fn max_gap(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[test]
fn assignment_recovered_from_noiseless_analytic_counts() {
    let net = DirectedNetwork::turnpike(6, 5.0).unwrap();
    let od = generate_od_panel(&gravity_demand(6, 0, Noise::Poisson), 30, &net).unwrap();
    let (link, _) = simulate_link_counts(&od, &net, 60.0, 15.0, CountMode::Analytic, 0).unwrap();
    let truth = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
    let days: Vec<usize> = (0..30).collect();
    let est = estimate_assignment(&net, &od, &link, &days, 2, 60.0, 15.0).unwrap();
    assert!(est.fallback_sensors.is_empty());
    let gap = max_gap(&est.blocks, &truth);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn assignment_recovered_under_counting_noise() {
    let net = DirectedNetwork::turnpike(6, 5.0).unwrap();
    let panel = simulate_panel(&gravity_demand(6, 0, Noise::Poisson), 120, &net, 60.0, 15.0, CountMode::Vehicle).unwrap();
    let truth = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
    let days: Vec<usize> = (0..120).collect();
    let est = estimate_assignment(&net, &panel.od, &panel.link, &days, 2, 60.0, 15.0).unwrap();
    let gap = max_gap(&est.blocks, &truth);
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn degenerate_sensors_fall_back_to_geometry() {
    let net = DirectedNetwork::turnpike(4, 5.0).unwrap();
    let mut demand = gravity_demand(4, 1, Noise::None);
    demand.fluctuation = Fluctuation::NONE;
    // Identical profiles for every pair make the regressors collinear.
    let od = generate_od_panel(&demand, 3, &net).unwrap();
    let (link, _) = simulate_link_counts(&od, &net, 60.0, 15.0, CountMode::Analytic, 0).unwrap();
    let est = estimate_assignment(&net, &od, &link, &[0, 1, 2], 2, 60.0, 15.0).unwrap();
    assert!(!est.fallback_sensors.is_empty());
    let truth = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
    for &s in &est.fallback_sensors {
        for (b, t) in est.blocks.iter().zip(&truth) {
            assert_eq!(b.row(s), t.row(s));
        }
    }
}

#[test]
fn transition_is_estimated_on_deviations_from_history() {
    let net = DirectedNetwork::turnpike(4, 5.0).unwrap();
    let panel = simulate_panel(&gravity_demand(4, 2, Noise::Poisson), 60, &net, 60.0, 15.0, CountMode::Vehicle).unwrap();
    let hist = make_historical(&panel, 7).unwrap();
    let days: Vec<usize> = (7..60).collect();
    let t = estimate_transition(&panel.od, &hist.od, &days, 1).unwrap();
    // The demand fluctuation has persistence 0.8; O-D deviations inherit a
    // clearly positive lag-one dependence.
    for r in 0..t.n_od() {
        assert!(t.f_blocks[0][r] > 0.1 && t.f_blocks[0][r] < 0.9, "pair {r}: {}", t.f_blocks[0][r]);
        assert!(t.q_diag[r] > 0.0);
    }
}
