//! INI-style run configuration: `[section]` headers, `key = value` lines,
//! `#` or `;` comments. Unknown sections and keys are errors.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use thermsid::explorer::{ConfigGrid, DEFAULT_THRESHOLD_C};
use thermsid::modelselect::{EvalMode, Scheme};
use thermsid::plant::RECORD_RATE_HZ;
use thermsid::PlantParams;

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Verbatim file contents, for the manifest.
    pub text: Option<String>,
    pub seed: u64,
    pub plant: PlantParams,
    pub duration_s: f64,
    pub record_rate_hz: f64,
    pub model_rate_hz: f64,
    pub order: usize,
    pub spec: String,
    pub eval: EvalMode,
    pub scheme: Scheme,
    pub orders: String,
    pub iterations: u64,
    pub fold: usize,
    pub threshold_c: f64,
    pub grid: ConfigGrid,
    pub shards: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            text: None,
            seed: 1,
            plant: PlantParams::default(),
            duration_s: 36_000.0,
            record_rate_hz: RECORD_RATE_HZ,
            model_rate_hz: 5.0,
            order: 32,
            spec: "eq7".into(),
            eval: EvalMode::default(),
            scheme: Scheme::OneHour,
            orders: "2..60".into(),
            iterations: 500,
            fold: 0,
            threshold_c: DEFAULT_THRESHOLD_C,
            grid: ConfigGrid::default(),
            shards: 1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            text: Some(text.to_string()),
            ..RunConfig::default()
        };
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "run" | "plant" | "simulate" | "train" | "crossval" | "search" | "explore"
                ) {
                    bail!("line {line_no}: unknown section [{section}]");
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let full = format!("{section}.{key}");
            cfg.set(&full, value)
                .with_context(|| format!("line {line_no}"))?;
        }
        cfg.plant.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.plant;
        match key {
            "run.seed" => self.seed = num(key, v)?,
            "plant.t_amb_c" => p.t_amb = num(key, v)?,
            "plant.r_th" => p.r_th = num(key, v)?,
            "plant.c_th" => p.c_th = num(key, v)?,
            "plant.c_dyn_big" => p.c_dyn_big = num(key, v)?,
            "plant.c_dyn_little" => p.c_dyn_little = num(key, v)?,
            "plant.c_sta_big" => p.c_sta_big = num(key, v)?,
            "plant.c_sta_little" => p.c_sta_little = num(key, v)?,
            "plant.noise_sigma_c" => p.noise_sigma = num(key, v)?,
            "plant.throttle_on_c" => p.throttle_on = num(key, v)?,
            "plant.throttle_off_c" => p.throttle_off = num(key, v)?,
            "plant.throttle_freq_mhz" => p.throttle_freq = num(key, v)?,
            "simulate.duration_s" => self.duration_s = num(key, v)?,
            "simulate.sample_rate_hz" => self.record_rate_hz = num(key, v)?,
            "train.sample_rate_hz" => self.model_rate_hz = num(key, v)?,
            "train.order" => self.order = num(key, v)?,
            "train.spec" => self.spec = v.to_string(),
            "train.eval" => self.eval = num(key, v)?,
            "crossval.scheme" => self.scheme = num(key, v)?,
            "search.orders" => self.orders = v.to_string(),
            "search.iterations" => self.iterations = num(key, v)?,
            "search.fold" => self.fold = num(key, v)?,
            "explore.threshold_c" => self.threshold_c = num(key, v)?,
            "explore.grid" => {
                self.grid = ConfigGrid::parse(v).map_err(|e| anyhow!("{key}: {e}"))?
            }
            "explore.shards" => self.shards = num(key, v)?,
            _ if key.starts_with('.') => bail!("key {:?} appears before any section", &key[1..]),
            _ => bail!("unknown config key {key}"),
        }
        Ok(())
    }
}
