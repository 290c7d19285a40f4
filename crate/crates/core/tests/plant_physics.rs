use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermsid::plant::{
    power, random_configuration, random_schedule, simulate_schedule, simulate_schedule_with,
    steady_state_temperature, Schedule, SimOptions,
};
use thermsid::{Configuration, PlantParams, CORES};

fn quiet() -> PlantParams {
    PlantParams {
        noise_sigma: 0.0,
        ..PlantParams::default()
    }
}

fn final_temp(config: Configuration, params: &PlantParams, taus: f64) -> f64 {
    let sched = Schedule::constant(config, taus * params.time_constant());
    let tr = simulate_schedule(&sched, params, 0).unwrap();
    *tr.temp.last().unwrap()
}

fn config_strategy() -> impl Strategy<Value = Configuration> {
    any::<u64>().prop_map(|s| random_configuration(&mut ChaCha8Rng::seed_from_u64(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The residual after k time constants is ΔT·e^-k; 12 τ covers the
    // hottest configuration at the 1e-3 °C tolerance.
    #[test]
    fn converges_to_ambient_plus_rp(config in config_strategy()) {
        let p = quiet();
        let expected = p.t_amb + p.r_th * power(&config, &p);
        prop_assume!(expected < p.throttle_on);
        let got = final_temp(config, &p, 12.0);
        prop_assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn steady_state_is_monotone_in_utilization(
        config in config_strategy(),
        bumps in prop::collection::vec(0usize..5, CORES),
    ) {
        let p = quiet();
        let mut hotter = config;
        for (u, b) in hotter.util.iter_mut().zip(&bumps) {
            *u = (*u + 0.25 * *b as f64).min(1.0);
        }
        prop_assert!(steady_state_temperature(&hotter, &p) >= steady_state_temperature(&config, &p));
    }
}

#[test]
fn ten_time_constants_for_moderate_rise() {
    let p = quiet();
    let config = Configuration::new(1000, 1000, [0.25; CORES]);
    let expected = steady_state_temperature(&config, &p);
    assert!(expected - p.t_amb < 20.0);
    let got = final_temp(config, &p, 10.0);
    assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
}

#[test]
fn simulated_temperature_monotone_over_random_pairs() {
    let p = quiet();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a = random_configuration(&mut rng);
        let b = random_configuration(&mut rng);
        let lo = Configuration::new(a.f_big, a.f_little, std::array::from_fn(|i| a.util[i].min(b.util[i])));
        let hi = Configuration::new(a.f_big, a.f_little, std::array::from_fn(|i| a.util[i].max(b.util[i])));
        let (tl, th) = (final_temp(lo, &p, 3.0), final_temp(hi, &p, 3.0));
        assert!(th >= tl - 1e-12, "{lo:?} -> {tl}, {hi:?} -> {th}");
    }
}

#[test]
fn throttle_bounds_temperature_under_forced_heat() {
    let hot = PlantParams {
        noise_sigma: 0.0,
        c_dyn_big: 6.0,
        ..PlantParams::default()
    };
    let full = Configuration::new(1900, 1500, [1.0; CORES]);
    assert!(steady_state_temperature(&full, &hot) > hot.throttle_on + 20.0);
    let sched = random_schedule(1800.0, 3).unwrap();
    let mut segments = vec![(full, 600.0)];
    segments.extend(sched.segments);
    let sched = Schedule { segments };
    let opts = SimOptions {
        substeps: 4,
        ..SimOptions::default()
    };
    let tr = simulate_schedule_with(&sched, &hot, &opts, 0).unwrap();
    let peak = tr.temp.iter().copied().fold(f64::MIN, f64::max);
    assert!(peak <= hot.throttle_on + 0.5, "peak {peak}");
    assert!(peak > hot.throttle_off, "throttle never engaged");
    assert!(tr.f_big.contains(&hot.throttle_freq));
}

#[test]
fn same_seed_same_trace() {
    let p = PlantParams::default();
    let s = random_schedule(600.0, 5).unwrap();
    assert_eq!(simulate_schedule(&s, &p, 9).unwrap(), simulate_schedule(&s, &p, 9).unwrap());
    assert_ne!(simulate_schedule(&s, &p, 9).unwrap().temp, simulate_schedule(&s, &p, 10).unwrap().temp);
}

#[test]
fn schedule_segments_respect_bounds() {
    let s = random_schedule(3600.0, 2).unwrap();
    assert!((s.total_duration() - 3600.0).abs() < 1e-9);
    let n = s.segments.len();
    for (k, (c, d)) in s.segments.iter().enumerate() {
        assert!(c.is_on_grid());
        if k + 1 < n {
            assert!((10.0..=60.0).contains(d), "segment {k} lasts {d}");
        }
    }
}
