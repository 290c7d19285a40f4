use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use thermsid::features::{candidate_regressors, eq7_regressors, pow_half, search_combos, Scope};
use thermsid::persist::{spec_from_json, spec_to_json};
use thermsid::{Cluster, RegressorSpec, Trace, CORES};
use thermsid::trace::Sample;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

/// `x^(half/2)` in exact arithmetic for `x = s²` with `s` dyadic.
fn exact_pow_half(s: f64, half: u8) -> BigRational {
    let s = rat(s);
    let mut acc = BigRational::from_integer(BigInt::from(1));
    for _ in 0..half {
        acc *= &s;
    }
    acc
}

// Perfect squares of dyadic rationals, so every half power is exact.
const ROOTS: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

#[test]
fn pow_half_matches_rational_oracle() {
    for s in ROOTS {
        for half in 0..=6u8 {
            let got = pow_half(s * s, half);
            let want = exact_pow_half(s, half).to_f64().unwrap();
            assert_eq!(got, want, "({s}²)^({half}/2)");
        }
    }
}

#[test]
fn eq7_vector_matches_rational_oracle() {
    let spec = eq7_regressors::<f64>();
    let (sb, sl) = (1.25, 0.75);
    let util = [0.0, 0.25, 0.5, 0.75, 1.0, 0.125, 0.375, 0.625];
    let v = spec.apply(sb * sb * 1000.0, sl * sl * 1000.0, &util).unwrap();
    for (term, got) in spec.terms().iter().zip(&v) {
        let s = match term.scope.cluster() {
            Cluster::Big => sb,
            Cluster::Little => sl,
        };
        let mut want = exact_pow_half(s, term.half_p);
        if let (Scope::Core(i), 1) = (term.scope, term.q) {
            want *= rat(util[usize::from(i)]);
        }
        let want = want.to_f64().unwrap();
        assert!((got - want).abs() <= 2.0 * f64::EPSILON * want.abs(), "{term}: {got} vs {want}");
        if want.is_zero() {
            assert_eq!(*got, 0.0);
        }
    }
}

#[test]
fn family_sizes() {
    assert_eq!(eq7_regressors::<f64>().len(), 34);
    assert_eq!(search_combos().len(), 9);
    let all = candidate_regressors::<f64>();
    assert_eq!(all.len(), 58);
    assert_eq!(all.terms().iter().filter(|t| t.q == 0).count(), 2 + 4 * 2);
}

fn random_trace(seed: u64, n: usize) -> Trace {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Trace::new(5.0);
    for k in 0..n {
        tr.push(Sample {
            t: k as f64 / 5.0,
            f_big: rng.random_range(1000..=1900) as f64,
            f_little: rng.random_range(1000..=1500) as f64,
            util: std::array::from_fn(|_| rng.random_range(0.0..=1.0)),
            temp: 40.0,
        });
    }
    tr
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalized_columns_are_standardized(seed in any::<u64>()) {
        let tr = random_trace(seed, 200);
        let spec = eq7_regressors::<f64>();
        let mut m = spec.apply_trace(&tr).unwrap();
        let fitted = spec.fit_normalization(&m).unwrap();
        fitted.normalize_matrix(&mut m);
        for col in m.column_iter() {
            let mean = col.mean();
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cached_factors_agree_with_apply(
        fb in 1000u32..=1900, fl in 1000u32..=1500,
        util in prop::array::uniform8(0.0f64..=1.0),
        seed in any::<u64>(),
    ) {
        let spec = eq7_regressors::<f64>();
        let m = spec.apply_trace(&random_trace(seed, 50)).unwrap();
        let spec = spec.fit_normalization(&m).unwrap();
        let direct = spec.apply(fb as f64, fl as f64, &util).unwrap();
        let mut cached = vec![0.0; spec.len()];
        spec.apply_with_factors(&spec.frequency_factors(fb as f64, fl as f64), &util, &mut cached);
        prop_assert_eq!(direct, cached);
    }
}

#[test]
fn constant_column_is_flagged() {
    let mut tr = random_trace(1, 100);
    tr.f_little.iter_mut().for_each(|f| *f = 1200.0);
    let spec = eq7_regressors::<f64>();
    let fitted = spec.fit_normalization(&spec.apply_trace(&tr).unwrap()).unwrap();
    let norm = fitted.normalization().unwrap();
    let little_f2 = fitted
        .terms()
        .iter()
        .position(|t| t.scope == Scope::Cluster(Cluster::Little))
        .unwrap();
    assert!(norm[little_f2].flagged);
    assert_eq!(norm[little_f2].scale, 1.0);
    assert_eq!(norm.iter().filter(|n| n.flagged).count(), 1);
}

#[test]
fn rejects_bad_inputs() {
    let spec = eq7_regressors::<f64>();
    assert!(spec.apply(0.0, 1000.0, &[0.5; CORES]).is_err());
    let mut u = [0.5; CORES];
    u[3] = -0.1;
    assert!(spec.apply(1000.0, 1000.0, &u).is_err());
    assert!(RegressorSpec::new(vec![]).is_err());
    let t = spec.terms()[0];
    assert!(RegressorSpec::new(vec![t, t]).is_err());
}

#[test]
fn spec_json_round_trip() {
    for spec in [eq7_regressors::<f64>(), candidate_regressors()] {
        let back: RegressorSpec = spec_from_json(&spec_to_json(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}

#[test]
fn f32_regressors_track_f64() {
    let s64 = eq7_regressors::<f64>();
    let s32 = eq7_regressors::<f32>();
    let u = [0.3; CORES];
    let a = s64.apply(1700.0, 1300.0, &u).unwrap();
    let b = s32.apply(1700.0, 1300.0, &u.map(|x| x as f32)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - f64::from(*y)).abs() <= 1e-6 * x.abs().max(1.0));
    }
}
