//! Platform description: cores, clusters and the settable configuration grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of CPU cores on the platform.
pub const CORES: usize = 8;

/// Big-cluster frequency levels, MHz.
pub const FREQ_BIG_LEVELS: [u32; 10] = [1000, 1100, 1200, 1300, 1400, 1500, 1600, 1700, 1800, 1900];

/// Little-cluster frequency levels, MHz.
pub const FREQ_LITTLE_LEVELS: [u32; 6] = [1000, 1100, 1200, 1300, 1400, 1500];

/// Per-core utilization levels.
pub const UTIL_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cluster {
    Big,
    Little,
}

impl Cluster {
    /// Cores 0..4 form the little cluster, 4..8 the big one.
    pub fn of_core(core: usize) -> Cluster {
        if core < 4 {
            Cluster::Little
        } else {
            Cluster::Big
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cluster::Big => "big",
            Cluster::Little => "little",
        }
    }
}

/// One point of the settable space: two cluster frequencies and eight
/// per-core utilizations. Field order gives the lexicographic order used
/// for enumeration and tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Configuration {
    pub f_big: u32,
    pub f_little: u32,
    pub util: [f64; CORES],
}

impl Configuration {
    pub fn new(f_big: u32, f_little: u32, util: [f64; CORES]) -> Self {
        Configuration {
            f_big,
            f_little,
            util,
        }
    }

    /// Frequency of the cluster `core` belongs to, MHz.
    pub fn core_freq(&self, core: usize) -> u32 {
        match Cluster::of_core(core) {
            Cluster::Big => self.f_big,
            Cluster::Little => self.f_little,
        }
    }

    pub fn cluster_freq(&self, cluster: Cluster) -> u32 {
        match cluster {
            Cluster::Big => self.f_big,
            Cluster::Little => self.f_little,
        }
    }

    /// True when every field sits on the default level grid.
    pub fn is_on_grid(&self) -> bool {
        FREQ_BIG_LEVELS.contains(&self.f_big)
            && FREQ_LITTLE_LEVELS.contains(&self.f_little)
            && self.util.iter().all(|u| UTIL_LEVELS.contains(u))
    }

    pub fn validate_grid(&self) -> Result<()> {
        if self.is_on_grid() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "configuration {self:?} is not on the platform grid"
            )))
        }
    }

    /// Parses `f_big,f_little,u0,...,u7`, e.g. `1900,1500,1,1,1,1,1,1,1,1`.
    pub fn parse(literal: &str) -> Result<Self> {
        let fields: Vec<&str> = literal.split(',').map(str::trim).collect();
        if fields.len() != 2 + CORES {
            return Err(Error::InvalidArgument(format!(
                "configuration literal needs {} comma-separated fields, got {}",
                2 + CORES,
                fields.len()
            )));
        }
        let freq = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| Error::InvalidArgument(format!("bad frequency {s:?}: {e}")))
        };
        let mut util = [0.0; CORES];
        for (u, s) in util.iter_mut().zip(&fields[2..]) {
            *u = s
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad utilization {s:?}: {e}")))?;
            if !(0.0..=1.0).contains(u) {
                return Err(Error::InvalidArgument(format!(
                    "utilization {u} outside [0, 1]"
                )));
            }
        }
        Ok(Configuration::new(freq(fields[0])?, freq(fields[1])?, util))
    }

    /// Aggregate delivered cycles, GHz: sum over cores of utilization times
    /// cluster frequency.
    pub fn perf_proxy_ghz(&self) -> f64 {
        (0..CORES).fold(0.0, |acc, i| {
            acc + self.util[i] * f64::from(self.core_freq(i)) / 1000.0
        })
    }
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.f_big, self.f_little)?;
        for u in &self.util {
            write!(f, ",{u}")?;
        }
        Ok(())
    }
}
