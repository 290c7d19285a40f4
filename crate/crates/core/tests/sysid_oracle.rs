use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thermsid::linalg::spectral_radius;
use thermsid::sysid::{fit_percent, mse, n4sid_identify, LqRoute, N4sid, StateSpaceModel};

/// Random stable system with spectral radius `rho`.
fn random_system(n: usize, m: usize, rho: f64, seed: u64) -> StateSpaceModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let a0: DMatrix<f64> = g(n, n);
    let a = &a0 * (rho / spectral_radius(&a0));
    let (b, c) = (g(n, m), g(1, n));
    StateSpaceModel::new(a, b, c, DMatrix::zeros(n, 1), 0.0, 1.0).unwrap()
}

fn white(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn add_noise(y: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let power = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let noise = Normal::new(0.0, (power / 10f64.powf(snr_db / 10.0)).sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    y.iter().map(|v| v + noise.sample(&mut rng)).collect()
}

/// Identifies on the first `train` samples and returns the free-run fit on
/// the rest against the noise-free truth. Both start from the true state.
fn holdout_fit(truth: &StateSpaceModel<f64>, order: usize, snr_db: Option<f64>) -> f64 {
    let (train, test) = (20_000, 5_000);
    let u = white(train + test, truth.m(), 11);
    let y = truth.simulate(&u).unwrap();
    let measured = match snr_db {
        Some(db) => add_noise(&y, db, 12),
        None => y.clone(),
    };
    let model = N4sid::new(order)
        .identify(&u.rows(0, train).clone_owned(), &measured[..train])
        .unwrap();
    // the held-out segment starts mid-run: fit the model state on 20 samples
    let u_test = u.rows(train, test).clone_owned();
    let y_test = &y[train..];
    let x0 = model.estimate_initial_state(&u_test, &measured[train..], 20).unwrap();
    let y_hat = model.simulate_from(&u_test, &x0).unwrap();
    fit_percent(&y_hat[20..], &y_test[20..]).unwrap()
}

#[test]
fn siso_first_order_is_recovered() {
    let e = |x| DMatrix::from_element(1, 1, x);
    let truth = StateSpaceModel::new(e(0.9), e(1.0), e(1.0), e(0.0), 0.0, 1.0).unwrap();
    let u = white(20_000, 1, 3);
    let y = truth.simulate(&u).unwrap();
    let model = n4sid_identify(&u, &y, 1, 3).unwrap();
    let fit = fit_percent(&model.simulate(&u).unwrap(), &y).unwrap();
    assert!(fit >= 99.9, "fit {fit}");
    // similarity invariant quantities
    assert!((model.a()[(0, 0)] - 0.9).abs() < 1e-6);
    assert!((model.steady_state_gain().unwrap()[(0, 0)] - 10.0).abs() < 1e-4);
}

#[test]
fn third_order_two_input_noise_free() {
    let truth = random_system(3, 2, 0.9, 7);
    let fit = holdout_fit(&truth, 3, None);
    assert!(fit >= 98.0, "fit {fit}");
}

#[test]
fn third_order_two_input_at_20db() {
    let truth = random_system(3, 2, 0.9, 7);
    let fit = holdout_fit(&truth, 3, Some(20.0));
    assert!(fit >= 90.0, "fit {fit}");
}

#[test]
fn gram_and_householder_routes_agree() {
    let truth = random_system(3, 2, 0.8, 21);
    let u = white(3_000, 2, 22);
    let y = add_noise(&truth.simulate(&u).unwrap(), 30.0, 23);
    let g = N4sid::new(3).route(LqRoute::Gram).identify(&u, &y).unwrap();
    let h = N4sid::new(3).route(LqRoute::Householder).identify(&u, &y).unwrap();
    let (yg, yh) = (g.simulate(&u).unwrap(), h.simulate(&u).unwrap());
    let diff = mse(&yg, &yh, 0).unwrap();
    assert!(diff < 1e-12, "route disagreement {diff}");
    assert!((g.spectral_radius() - h.spectral_radius()).abs() < 1e-8);
}

#[test]
fn one_step_predictor_converges_on_exact_data() {
    let truth = random_system(2, 1, 0.7, 31);
    let u = white(4_000, 1, 32);
    let y = truth.simulate(&u).unwrap();
    let model = N4sid::new(2).identify(&u, &y).unwrap();
    let pred = model.predict_one_step(&u, &y).unwrap();
    let e = mse(&pred, &y, 200).unwrap();
    assert!(e < 1e-7, "{e}");
}

#[test]
fn one_step_beats_free_run_with_process_noise() {
    // innovation-form truth: output noise filtered through K
    let truth = random_system(3, 2, 0.95, 41);
    let n = 8_000;
    let u = white(n, 2, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let k = DVector::from_vec(vec![0.5, -0.3, 0.2]);
    let mut x = DVector::zeros(3);
    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        let e: f64 = rng.random_range(-0.5..0.5);
        y.push((truth.c() * &x)[(0, 0)] + e);
        x = truth.a() * &x + truth.b() * u.row(t).transpose() + &k * e;
    }
    let model = N4sid::new(3).identify(&u, &y).unwrap();
    let free = mse(&model.simulate(&u).unwrap(), &y, 100).unwrap();
    let one = mse(&model.predict_one_step(&u, &y).unwrap(), &y, 100).unwrap();
    assert!(one <= free, "one-step {one} vs free-run {free}");
    assert!(model.k().iter().any(|v| *v != 0.0));
}

#[test]
fn null_output_gives_offset_only() {
    let u = white(2_000, 3, 51);
    let y = vec![37.5; 2_000];
    let model = N4sid::new(4).identify(&u, &y).unwrap();
    assert!(model.b().iter().all(|v| v.abs() < 1e-12));
    assert!(model.simulate(&u).unwrap().iter().all(|&v| (v - 37.5).abs() < 1e-12));
}

#[test]
fn precondition_errors() {
    let u = white(500, 2, 61);
    let y = vec![0.0; 500];
    // order must stay below the horizon
    assert!(n4sid_identify(&u, &y, 5, 5).is_err());
    // too few samples
    assert!(n4sid_identify(&u.rows(0, 20).clone_owned(), &y[..20], 2, 4).is_err());
    // constant input column
    let mut flat = white(2_000, 2, 62);
    flat.column_mut(1).fill(3.0);
    let y = white(2_000, 1, 63).column(0).iter().copied().collect::<Vec<_>>();
    let err = N4sid::new(2).identify(&flat, &y).unwrap_err();
    assert!(err.to_string().contains("input excitation"), "{err}");
    // non-finite data
    let mut bad = white(2_000, 1, 64);
    bad[(10, 0)] = f64::NAN;
    assert!(N4sid::new(2).identify(&bad, &y).is_err());
}

#[test]
fn excess_order_on_exact_data_is_rank_error() {
    let truth = random_system(2, 1, 0.8, 71);
    let u = white(3_000, 1, 72);
    let y = truth.simulate(&u).unwrap();
    let err = N4sid::new(5).identify(&u, &y).unwrap_err();
    assert!(err.to_string().contains("order selection"), "{err}");
}

#[test]
fn single_precision_identification() {
    let truth = random_system(2, 1, 0.8, 81);
    let u = white(5_000, 1, 82);
    let y = truth.simulate(&u).unwrap();
    let u32m = u.map(|v| v as f32);
    let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let model = N4sid::new(2).identify(&u32m, &y32).unwrap();
    let fit = fit_percent(&model.simulate(&u32m).unwrap(), &y32).unwrap();
    assert!(fit > 99.0, "f32 fit {fit}");
}

#[test]
fn dc_gain_matches_long_free_run() {
    for seed in 0..8 {
        let model = random_system(4, 3, 0.8, 100 + seed);
        let v = DVector::from_fn(3, |j, _| 0.5 - j as f64);
        let u = DMatrix::from_fn(10_000, 3, |_, j| v[j]);
        let y = model.simulate(&u).unwrap();
        let g = model.steady_state_gain().unwrap();
        let want = (&g * &v)[0] + model.output_offset();
        let got = *y.last().unwrap();
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

fn median_secs(mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..3)
        .map(|_| {
            let start = std::time::Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[1]
}

// Ratios over orders {8, 16, 32}, never absolute times. Identification cost
// is dominated by the horizon-sized decomposition and grows faster than n;
// simulation costs n² + n·m per step, close to linear while n ≲ m.
#[test]
fn complexity_trend_over_order() {
    let truth = random_system(6, 34, 0.9, 77);
    let u = white(30_000, 34, 78);
    let y = add_noise(&truth.simulate(&u).unwrap(), 30.0, 79);
    let mut train = Vec::new();
    let mut predict = Vec::new();
    for order in [8, 16, 32] {
        let mut model = None;
        train.push(median_secs(|| model = Some(N4sid::new(order).identify(&u, &y).unwrap())));
        let model = model.unwrap();
        predict.push(median_secs(|| {
            model.simulate(&u).unwrap();
        }));
    }
    let (t16, t32) = (train[1] / train[0], train[2] / train[0]);
    assert!(t16 > 2.0 && t32 > 4.0, "training time ratios {t16:.2}, {t32:.2}");
    let (p16, p32) = (predict[1] / predict[0], predict[2] / predict[0]);
    assert!(p16 > 1.0 && p32 > 1.5, "prediction time ratios {p16:.2}, {p32:.2}");
    assert!(p32 < 16.0, "prediction time ratio {p32:.2} is quadratic or worse");
}
