//! Lumped-RC plant: per-core DVFS power feeding a single thermal node,
//! `C dT/dt + (T - T_amb)/R = P`, with a hysteretic big-cluster throttle and
//! Gaussian sensor noise. Serves as ground truth for identification and as
//! the oracle for exploration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::soc::{Cluster, Configuration, CORES, FREQ_BIG_LEVELS, FREQ_LITTLE_LEVELS, UTIL_LEVELS};
use crate::trace::{Sample, Trace};

/// Shortest and longest segment of a random schedule, seconds.
pub const SEGMENT_MIN_S: f64 = 10.0;
pub const SEGMENT_MAX_S: f64 = 60.0;

/// Sampling rate of the recorded traces, Hz.
pub const RECORD_RATE_HZ: f64 = 32.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams<T> {
    /// Ambient temperature, °C.
    pub t_amb: T,
    /// Thermal resistance, K/W.
    pub r_th: T,
    /// Thermal capacitance, J/K.
    pub c_th: T,
    /// Dynamic power per core at full utilization, W/GHz².
    pub c_dyn_big: T,
    pub c_dyn_little: T,
    /// Static power per core, W/GHz^1.5.
    pub c_sta_big: T,
    pub c_sta_little: T,
    /// Standard deviation of the temperature sensor noise, °C.
    pub noise_sigma: T,
    pub throttle_on: T,
    pub throttle_off: T,
    /// Big-cluster frequency while throttled, MHz.
    pub throttle_freq: T,
}

impl<T: Scalar> Default for PlantParams<T> {
    fn default() -> Self {
        PlantParams {
            t_amb: T::of(21.0),
            r_th: T::of(2.0),
            c_th: T::of(11.0),
            c_dyn_big: T::of(1.77),
            c_dyn_little: T::of(0.335),
            c_sta_big: T::of(0.41),
            c_sta_little: T::of(0.093),
            noise_sigma: T::of(0.33),
            throttle_on: T::of(90.0),
            throttle_off: T::of(85.0),
            throttle_freq: T::of(900.0),
        }
    }
}

impl<T: Scalar> PlantParams<T> {
    /// Thermal time constant `R·C`, seconds.
    pub fn time_constant(&self) -> T {
        self.r_th * self.c_th
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_amb,
            self.r_th,
            self.c_th,
            self.c_dyn_big,
            self.c_dyn_little,
            self.c_sta_big,
            self.c_sta_little,
            self.noise_sigma,
            self.throttle_on,
            self.throttle_off,
            self.throttle_freq,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("plant parameters".into()));
        }
        if !(self.r_th > T::zero() && self.c_th > T::zero()) {
            return Err(Error::InvalidArgument("r_th and c_th must be positive".into()));
        }
        let coeffs = [self.c_dyn_big, self.c_dyn_little, self.c_sta_big, self.c_sta_little];
        if coeffs.iter().any(|&c| c < T::zero()) || self.noise_sigma < T::zero() {
            return Err(Error::InvalidArgument(
                "power coefficients and noise sigma must be non-negative".into(),
            ));
        }
        if !(self.throttle_off < self.throttle_on) {
            return Err(Error::InvalidArgument(
                "throttle_off must be below throttle_on".into(),
            ));
        }
        if !(self.throttle_freq > T::zero()) {
            return Err(Error::InvalidArgument("throttle_freq must be positive".into()));
        }
        Ok(())
    }

    fn coeffs(&self, cluster: Cluster) -> (T, T) {
        match cluster {
            Cluster::Big => (self.c_dyn_big, self.c_sta_big),
            Cluster::Little => (self.c_dyn_little, self.c_sta_little),
        }
    }

    /// Total power for explicit cluster frequencies (MHz) and utilizations.
    pub fn power_at(&self, f_big_mhz: T, f_little_mhz: T, util: &[T; CORES]) -> T {
        let ghz = T::of(1000.0);
        let mut p = T::zero();
        for (core, &u) in util.iter().enumerate() {
            let cluster = Cluster::of_core(core);
            let f = match cluster {
                Cluster::Big => f_big_mhz,
                Cluster::Little => f_little_mhz,
            } / ghz;
            let (c_dyn, c_sta) = self.coeffs(cluster);
            p += c_dyn * u * f * f + c_sta * f * f.sqrt();
        }
        p
    }
}

/// Power drawn by `config`, W.
pub fn power<T: Scalar>(config: &Configuration, params: &PlantParams<T>) -> T {
    params.power_at(
        T::of(f64::from(config.f_big)),
        T::of(f64::from(config.f_little)),
        &config.util.map(T::of),
    )
}

/// One explicit-Euler step of the thermal ODE.
pub fn step_temperature<T: Scalar>(t_now: T, p: T, params: &PlantParams<T>, dt: T) -> Result<T> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if dt > params.time_constant() / T::of(2.0) {
        return Err(Error::InvalidArgument(format!(
            "dt {dt} exceeds half the time constant {}; explicit Euler would be unstable",
            params.time_constant()
        )));
    }
    Ok(euler(t_now, p, params, dt))
}

#[inline]
fn euler<T: Scalar>(t_now: T, p: T, params: &PlantParams<T>, dt: T) -> T {
    t_now + dt / params.c_th * (p - (t_now - params.t_amb) / params.r_th)
}

/// Equilibrium temperature under a constant configuration, °C.
pub fn steady_state_temperature<T: Scalar>(config: &Configuration, params: &PlantParams<T>) -> T {
    params.t_amb + params.r_th * power(config, params)
}

/// Ordered list of configurations with their hold durations in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<(Configuration, f64)>,
}

impl Schedule {
    pub fn constant(config: Configuration, duration: f64) -> Self {
        Schedule {
            segments: vec![(config, duration)],
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("schedule is empty".into()));
        }
        if self.segments.iter().any(|(_, d)| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(
                "segment durations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Configuration active at time `t` (the last one past the end).
    pub fn config_at(&self, t: f64) -> &Configuration {
        let mut acc = 0.0;
        for (c, d) in &self.segments {
            acc += d;
            if t < acc {
                return c;
            }
        }
        &self.segments.last().expect("non-empty schedule").0
    }
}

/// Uniformly random configuration on the default grid.
pub fn random_configuration<R: Rng>(rng: &mut R) -> Configuration {
    let f_big = FREQ_BIG_LEVELS[rng.random_range(0..FREQ_BIG_LEVELS.len())];
    let f_little = FREQ_LITTLE_LEVELS[rng.random_range(0..FREQ_LITTLE_LEVELS.len())];
    let util = std::array::from_fn(|_| UTIL_LEVELS[rng.random_range(0..UTIL_LEVELS.len())]);
    Configuration::new(f_big, f_little, util)
}

/// Random schedule: i.i.d. uniform configurations held for uniform
/// `[10, 60]` s, the last segment truncated to `total_duration`.
pub fn random_schedule(total_duration: f64, seed: u64) -> Result<Schedule> {
    if !(total_duration >= SEGMENT_MIN_S) || !total_duration.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "schedule duration must be at least {SEGMENT_MIN_S} s, got {total_duration}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut elapsed = 0.0;
    while elapsed < total_duration {
        let config = random_configuration(&mut rng);
        let d = rng.random_range(SEGMENT_MIN_S..=SEGMENT_MAX_S);
        let d = d.min(total_duration - elapsed);
        segments.push((config, d));
        elapsed += d;
    }
    Ok(Schedule { segments })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions<T> {
    /// Recording rate, Hz.
    pub sample_rate: T,
    /// Euler steps per recorded sample.
    pub substeps: usize,
    /// Initial die temperature; ambient when `None`.
    pub initial_temp: Option<T>,
}

impl<T: Scalar> Default for SimOptions<T> {
    fn default() -> Self {
        SimOptions {
            sample_rate: T::of(RECORD_RATE_HZ),
            substeps: 1,
            initial_temp: None,
        }
    }
}

/// Simulates `schedule` at the default 32 Hz recording rate.
pub fn simulate_schedule<T: Scalar>(
    schedule: &Schedule,
    params: &PlantParams<T>,
    seed: u64,
) -> Result<Trace<T>> {
    simulate_schedule_with(schedule, params, &SimOptions::default(), seed)
}

/// Integrates the plant over `schedule` and records one sample per period.
///
/// The recorded temperature is the true state plus sensor noise; recorded
/// frequencies are the effective ones after throttling. The throttle engages
/// once the true temperature reaches `throttle_on` and releases at
/// `throttle_off`.
pub fn simulate_schedule_with<T: Scalar>(
    schedule: &Schedule,
    params: &PlantParams<T>,
    opts: &SimOptions<T>,
    seed: u64,
) -> Result<Trace<T>> {
    schedule.validate()?;
    params.validate()?;
    if opts.substeps == 0 || !(opts.sample_rate > T::zero()) {
        return Err(Error::InvalidArgument(
            "sample rate and substeps must be positive".into(),
        ));
    }
    let rate = opts.sample_rate.as_f64();
    let dt = T::one() / (opts.sample_rate * T::of_usize(opts.substeps));
    if dt > params.time_constant() / T::of(10.0) {
        return Err(Error::InvalidArgument(format!(
            "integration step {dt} s is too coarse for time constant {}",
            params.time_constant()
        )));
    }
    let n = (schedule.total_duration() * rate + 1e-9).floor() as usize;
    let noise = if params.noise_sigma > T::zero() {
        Some(Normal::new(0.0, params.noise_sigma.as_f64()).map_err(|e| {
            Error::InvalidArgument(format!("noise distribution: {e}"))
        })?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut trace = Trace::with_capacity(opts.sample_rate, n);
    let mut temp = opts.initial_temp.unwrap_or(params.t_amb);
    let mut throttled = false;
    let mut seg = 0usize;
    let mut seg_end = schedule.segments[0].1;
    for k in 0..n {
        let t = k as f64 / rate;
        while t >= seg_end && seg + 1 < schedule.segments.len() {
            seg += 1;
            seg_end += schedule.segments[seg].1;
        }
        let config = &schedule.segments[seg].0;
        let f_little = T::of(f64::from(config.f_little));
        let f_big_set = T::of(f64::from(config.f_big));
        let util = config.util.map(T::of);

        update_throttle(&mut throttled, temp, params);
        let f_big_rec = effective_big(f_big_set, throttled, params);
        let measured = match &noise {
            Some(d) => temp + T::of(d.sample(&mut rng)),
            None => temp,
        };
        trace.push(Sample {
            t: T::of(t),
            f_big: f_big_rec,
            f_little,
            util,
            temp: measured,
        });

        for sub in 0..opts.substeps {
            if sub > 0 {
                update_throttle(&mut throttled, temp, params);
            }
            let f_big = effective_big(f_big_set, throttled, params);
            let p = params.power_at(f_big, f_little, &util);
            temp = euler(temp, p, params, dt);
        }
    }
    Ok(trace)
}

fn update_throttle<T: Scalar>(throttled: &mut bool, temp: T, params: &PlantParams<T>) {
    if !*throttled && temp >= params.throttle_on {
        *throttled = true;
    } else if *throttled && temp <= params.throttle_off {
        *throttled = false;
    }
}

fn effective_big<T: Scalar>(f_big: T, throttled: bool, params: &PlantParams<T>) -> T {
    if throttled {
        f_big.min(params.throttle_freq)
    } else {
        f_big
    }
}

/// Random schedule plus simulation, with sub-seeds derived from `seed` for
/// the `"schedule"` and `"noise"` stages.
pub fn generate_trace<T: Scalar>(
    params: &PlantParams<T>,
    duration_s: f64,
    seed: u64,
) -> Result<(Schedule, Trace<T>)> {
    let schedule = random_schedule(duration_s, derive_seed(seed, "schedule"))?;
    let trace = simulate_schedule(&schedule, params, derive_seed(seed, "noise"))?;
    Ok((schedule, trace))
}
