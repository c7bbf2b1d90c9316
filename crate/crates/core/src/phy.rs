//! OFDM-domain signal synthesis: pilots, received symbols and noise.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arraylab::ttd_combiner;
use crate::channel::{
    beamformed_channel_unchecked, check_freq_inputs, MultipathChannel, PulseShape,
};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};

/// Neighbours on each side of a pilot inside its resource block.
pub const BLOCK_HALF_WIDTH: usize = 6;

/// Transmitted frequency-domain pilots.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotGrid {
    x: Vec<Complex64>,
    active: Vec<usize>,
}

impl PilotGrid {
    /// Pilot value per subcarrier, zero off the active set.
    pub fn values(&self) -> &[Complex64] {
        &self.x
    }

    /// Sorted active subcarrier indices.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn total_power(&self) -> f64 {
        self.x.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Grid scaled by `c`. Only useful for linearity checks, since the
    /// result no longer meets the power constraint.
    pub fn scaled(&self, c: Complex64) -> PilotGrid {
        PilotGrid {
            x: self.x.iter().map(|z| z * c).collect(),
            active: self.active.clone(),
        }
    }
}

/// Equal-power, zero-phase pilots on `set` with total power `mtot`.
pub fn make_pilots(cfg: &ValidatedConfig, set: &[usize]) -> Result<PilotGrid> {
    let mtot = cfg.mtot();
    let active: Vec<usize> = set
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if active.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    if let Some(&last) = active.last() {
        if last >= mtot {
            return Err(Error::InvalidPilotSet(format!(
                "index {last} not below mtot = {mtot}"
            )));
        }
    }
    let amp = (mtot as f64 / active.len() as f64).sqrt();
    let mut x = vec![Complex64::new(0.0, 0.0); mtot];
    for &m in &active {
        x[m] = Complex64::new(amp, 0.0);
    }
    Ok(PilotGrid { x, active })
}

/// Every `total / beams`-th subcarrier starting at 0.
pub fn select_pilot_subcarriers(total: usize, beams: usize) -> Result<Vec<usize>> {
    if beams == 0 || !total.is_multiple_of(beams) {
        return Err(Error::NonDivisible { total, beams });
    }
    let stride = total / beams;
    Ok((0..beams).map(|m| m * stride).collect())
}

/// Indices of the resource block around pilot `p`, clipped to the band.
pub fn resource_block(p: usize, mtot: usize) -> Vec<usize> {
    if p >= mtot {
        return Vec::new();
    }
    let lo = p.saturating_sub(BLOCK_HALF_WIDTH);
    let hi = (p + BLOCK_HALF_WIDTH).min(mtot - 1);
    (lo..=hi).collect()
}

/// Union of the resource blocks of all pilots, sorted.
pub fn resource_block_expand(set: &[usize], mtot: usize) -> Vec<usize> {
    set.iter()
        .flat_map(|&p| resource_block(p, mtot))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Per-pilot resource blocks, in the order of `set`.
pub fn resource_blocks(set: &[usize], mtot: usize) -> Vec<Vec<usize>> {
    set.iter().map(|&p| resource_block(p, mtot)).collect()
}

/// Single-index blocks, i.e. RSRP on the pilot subcarrier alone.
pub fn single_index_blocks(set: &[usize]) -> Vec<Vec<usize>> {
    set.iter().map(|&p| vec![p]).collect()
}

/// One received OFDM symbol after combining and DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSymbol {
    pub y: Vec<Complex64>,
    /// `E|N[m]|^2` that was (or would have been) added.
    pub noise_variance: f64,
}

pub(crate) fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Adds i.i.d. circularly-symmetric Gaussian noise of the given variance.
pub fn add_noise(y: &mut [Complex64], variance: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in y {
        *v += complex_gaussian(&mut rng, variance);
    }
}

/// Received symbol through the TTD combiner. `noise_seed = None` gives a
/// noiseless symbol.
pub fn receive_symbol(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
) -> Result<ReceivedSymbol> {
    if !cfg.check_cp_condition(ch) {
        return Err(Error::CpViolation(format!(
            "cumulative delay {} s not below cyclic prefix {} s",
            cfg.cumulative_delay(ch),
            cfg.ncp() as f64 * cfg.ts()
        )));
    }
    receive_symbol_unchecked(cfg, ch, pulse, v, x, noise_seed)
}

/// [`receive_symbol`] without the cyclic-prefix test. The frequency-domain
/// model is evaluated as if the prefix were long enough.
pub fn receive_symbol_unchecked(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
) -> Result<ReceivedSymbol> {
    receive_with_combiner(cfg, ch, pulse, v, x, noise_seed, |m| ttd_combiner(cfg, m))
}

/// Received symbol with an arbitrary per-subcarrier combiner `w(m)`,
/// `Y[m] = w(m)^H H[m] v X[m] + N[m]`.
pub fn receive_with_combiner(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
    combiner: impl Fn(usize) -> Result<Vec<Complex64>>,
) -> Result<ReceivedSymbol> {
    let mtot = cfg.mtot();
    if x.values().len() != mtot {
        return Err(Error::InvalidConfig(format!(
            "pilot grid has {} entries, mtot is {mtot}",
            x.values().len()
        )));
    }
    if v.len() != cfg.ntx() {
        return Err(Error::InvalidConfig(format!(
            "beamformer length {} differs from ntx {}",
            v.len(),
            cfg.ntx()
        )));
    }
    check_freq_inputs(cfg, ch, pulse)?;
    let mut y = vec![Complex64::new(0.0, 0.0); mtot];
    for &m in x.active() {
        let xm = x.values()[m];
        if xm == Complex64::new(0.0, 0.0) || ch.is_empty() {
            continue;
        }
        let hv = beamformed_channel_unchecked(cfg, ch, pulse, v, m)?;
        let w = combiner(m)?;
        let wh: Complex64 = w.iter().zip(&hv).map(|(w, h)| w.conj() * h).sum();
        y[m] = wh * xm;
    }
    let noise_variance = cfg.noise_variance();
    if let Some(seed) = noise_seed {
        add_noise(&mut y, noise_variance, seed);
    }
    Ok(ReceivedSymbol { y, noise_variance })
}
