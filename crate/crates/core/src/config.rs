//! System configuration shared by every other module.
//!
//! A [`SystemConfig`] is plain data; [`SystemConfig::validate`] turns it into
//! a [`ValidatedConfig`], which is immutable and is what the rest of the
//! crate accepts. The sample duration is always derived from the bandwidth
//! and never stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{path_delay, MultipathChannel};
use crate::error::{Error, Result};

/// Raw system parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Carrier frequency in Hz.
    pub fc_hz: f64,
    /// Bandwidth in Hz (sample rate).
    pub bw_hz: f64,
    /// Total number of OFDM subcarriers.
    pub mtot: usize,
    /// Cyclic prefix length in samples.
    pub ncp: usize,
    pub ntx: usize,
    pub nrx: usize,
    /// Spacing between adjacent TTD taps in seconds.
    pub delta_tau_s: f64,
    /// Noise spectral-density parameter; `E|N[m]|^2 = n0 * bw / (2 * mtot)`.
    pub n0: f64,
    /// Strictly increasing pilot subcarrier indices.
    pub pilot_set: Vec<usize>,
}

impl SystemConfig {
    /// Configuration with every subcarrier used as a pilot and a cyclic
    /// prefix of `mtot / 8` samples.
    pub fn new(
        fc_hz: f64,
        bw_hz: f64,
        mtot: usize,
        ntx: usize,
        nrx: usize,
        delta_tau_s: f64,
    ) -> Self {
        SystemConfig {
            fc_hz,
            bw_hz,
            mtot,
            ncp: mtot / 8,
            ntx,
            nrx,
            delta_tau_s,
            n0: 1.0,
            pilot_set: (0..mtot).collect(),
        }
    }

    pub fn with_ncp(mut self, ncp: usize) -> Self {
        self.ncp = ncp;
        self
    }

    pub fn with_n0(mut self, n0: f64) -> Self {
        self.n0 = n0;
        self
    }

    pub fn with_pilots(mut self, pilots: Vec<usize>) -> Self {
        self.pilot_set = pilots;
        self
    }

    pub fn validate(self) -> Result<ValidatedConfig> {
        let finite = [self.fc_hz, self.bw_hz, self.delta_tau_s, self.n0];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        if self.fc_hz <= 0.0 || self.bw_hz <= 0.0 {
            return Err(Error::InvalidConfig(
                "carrier and bandwidth must be positive".into(),
            ));
        }
        if self.n0 < 0.0 {
            return Err(Error::InvalidConfig("n0 must be non-negative".into()));
        }
        if self.ntx == 0 || self.nrx == 0 {
            return Err(Error::InvalidConfig(
                "antenna counts must be positive".into(),
            ));
        }
        if self.mtot == 0 || !self.mtot.is_multiple_of(2) {
            return Err(Error::OddSubcarrierCount(self.mtot));
        }
        let min_s = 1.0 / (2.0 * self.fc_hz);
        if self.delta_tau_s <= min_s {
            return Err(Error::InvalidDelaySpacing {
                delta_tau_s: self.delta_tau_s,
                min_s,
            });
        }
        check_pilot_set(&self.pilot_set, self.mtot)?;
        Ok(ValidatedConfig(self))
    }

    /// Loads and validates a TOML configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<ValidatedConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)?.validate()
    }

    pub fn from_toml(text: &str) -> Result<SystemConfig> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
            record: 0,
            field: "config".into(),
            message: e.to_string(),
        })?;
        Ok(file.into())
    }
}

fn check_pilot_set(pilots: &[usize], mtot: usize) -> Result<()> {
    if let Some(&last) = pilots.last() {
        if last >= mtot {
            return Err(Error::InvalidPilotSet(format!(
                "index {last} not below mtot = {mtot}"
            )));
        }
    }
    if pilots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidPilotSet(
            "indices must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Configuration that has passed [`SystemConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(SystemConfig);

impl ValidatedConfig {
    pub fn raw(&self) -> &SystemConfig {
        &self.0
    }

    pub fn fc(&self) -> f64 {
        self.0.fc_hz
    }

    pub fn bw(&self) -> f64 {
        self.0.bw_hz
    }

    /// Sample duration, `1 / bw`.
    pub fn ts(&self) -> f64 {
        1.0 / self.0.bw_hz
    }

    pub fn mtot(&self) -> usize {
        self.0.mtot
    }

    pub fn ncp(&self) -> usize {
        self.0.ncp
    }

    pub fn ntx(&self) -> usize {
        self.0.ntx
    }

    pub fn nrx(&self) -> usize {
        self.0.nrx
    }

    pub fn delta_tau(&self) -> f64 {
        self.0.delta_tau_s
    }

    pub fn n0(&self) -> f64 {
        self.0.n0
    }

    pub fn pilot_set(&self) -> &[usize] {
        &self.0.pilot_set
    }

    /// Per-subcarrier noise variance `n0 * bw / (2 * mtot)`.
    pub fn noise_variance(&self) -> f64 {
        self.0.n0 * self.0.bw_hz / (2.0 * self.0.mtot as f64)
    }

    /// Returns a re-validated copy with a different noise level.
    pub fn with_n0(&self, n0: f64) -> Result<ValidatedConfig> {
        self.0.clone().with_n0(n0).validate()
    }

    pub fn with_pilots(&self, pilots: Vec<usize>) -> Result<ValidatedConfig> {
        self.0.clone().with_pilots(pilots).validate()
    }

    /// Signed baseband bin of subcarrier `m`: `m` in the upper half of the
    /// DFT maps to `m - mtot`.
    pub fn baseband_bin(&self, m: usize) -> Result<i64> {
        let mtot = self.0.mtot;
        if m >= mtot {
            return Err(Error::IndexOutOfRange {
                index: m,
                limit: mtot,
            });
        }
        Ok(if m < mtot / 2 {
            m as i64
        } else {
            m as i64 - mtot as i64
        })
    }

    /// RF frequency of subcarrier `m`.
    pub fn subcarrier_frequency(&self, m: usize) -> Result<f64> {
        let k = self.baseband_bin(m)?;
        Ok(self.0.fc_hz + (k as f64 / self.0.mtot as f64) * self.0.bw_hz)
    }

    /// Delay applied by the TTD circuit of receive element `n` (zero-based).
    pub fn ttd_delay(&self, n: usize) -> f64 {
        n as f64 * self.0.delta_tau_s
    }

    /// Largest propagation delay over all paths and element pairs plus the
    /// largest TTD delay.
    pub fn cumulative_delay(&self, ch: &MultipathChannel) -> f64 {
        let max_gamma = ch
            .paths()
            .iter()
            .map(|p| {
                // Γ is affine in q and n, so the maximum sits on a corner.
                let q = if p.aod_rad.sin() > 0.0 {
                    0
                } else {
                    self.ntx() - 1
                };
                let n = if p.aoa_rad.sin() > 0.0 {
                    self.nrx() - 1
                } else {
                    0
                };
                path_delay(p, q, n, self.fc())
            })
            .fold(0.0, f64::max);
        max_gamma + self.ttd_delay(self.nrx() - 1)
    }

    /// True iff the cyclic prefix is longer than the cumulative delay of
    /// the channel and the TTD circuits.
    pub fn check_cp_condition(&self, ch: &MultipathChannel) -> bool {
        self.ncp() as f64 * self.ts() > self.cumulative_delay(ch)
    }
}

/// Pilot set as written in a configuration file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PilotSpec {
    List(Vec<usize>),
    Stride {
        start: usize,
        stride: usize,
        count: usize,
    },
}

impl PilotSpec {
    pub fn indices(&self) -> Vec<usize> {
        match self {
            PilotSpec::List(v) => v.clone(),
            PilotSpec::Stride {
                start,
                stride,
                count,
            } => (0..*count).map(|i| start + i * stride).collect(),
        }
    }
}

/// On-disk configuration schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub fc_hz: f64,
    pub bw_hz: f64,
    pub mtot: usize,
    /// Defaults to `mtot / 8`.
    pub ncp: Option<usize>,
    pub ntx: usize,
    pub nrx: usize,
    pub delta_tau_s: f64,
    #[serde(default = "default_n0")]
    pub n0: f64,
    /// Defaults to every subcarrier.
    pub pilot_set: Option<PilotSpec>,
    /// Experiment settings, read by the harness.
    pub experiment: Option<toml::Table>,
}

fn default_n0() -> f64 {
    1.0
}

impl From<ConfigFile> for SystemConfig {
    fn from(f: ConfigFile) -> Self {
        SystemConfig {
            fc_hz: f.fc_hz,
            bw_hz: f.bw_hz,
            mtot: f.mtot,
            ncp: f.ncp.unwrap_or(f.mtot / 8),
            ntx: f.ntx,
            nrx: f.nrx,
            delta_tau_s: f.delta_tau_s,
            n0: f.n0,
            pilot_set: f
                .pilot_set
                .map(|p| p.indices())
                .unwrap_or_else(|| (0..f.mtot).collect()),
        }
    }
}
