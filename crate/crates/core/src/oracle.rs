//! Sample-level time-domain simulator used to cross-check the
//! frequency-domain received-symbol model.
//!
//! The transmitter takes the inverse DFT of the pilots, prepends a cyclic
//! prefix, and every (path, tx element, rx element) triple filters the
//! stream with its own discrete taps. Delays of the receive TTD circuit are
//! part of the tap delay. The receiver sums, drops the prefix and takes the
//! DFT. Nothing here uses steering vectors or the TTD combiner.
//!
//! Scaling: `x[i] = sum_m X[m] exp(+j 2 pi i m / M)` and
//! `Y[m] = (1/M) sum_i y[i] exp(-j 2 pi i m / M)`, so an identity channel
//! gives `Y = X` and white noise of per-sample variance `n0 bw / 2` ends up
//! with variance `n0 bw / (2 M)` per subcarrier.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::arraylab::{cis_turns, product_turns};
use crate::channel::{path_delay, MultipathChannel, PathComponent, PulseKind, PulseShape};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::phy::{
    complex_gaussian, receive_symbol, receive_symbol_unchecked, PilotGrid, ReceivedSymbol,
};

/// Relative-error denominator floor.
pub const REL_FLOOR: f64 = 1e-30;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Discrete taps of one (path, tx element, rx element) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TapVector {
    pub taps: Vec<Complex64>,
    /// Number of taps that can be nonzero. For time-limited pulses this is
    /// one past the last nonzero tap; for the periodic kernel it is `mtot`.
    pub ncip: usize,
    /// Total delay of the triple, including the TTD circuit.
    pub delay_s: f64,
    /// True for taps of the periodic kernel, which act circularly.
    pub circular: bool,
}

/// Taps `g p(i ts - tau) exp(-j 2 pi fc tau)` for a single delay.
///
/// Time-limited pulses give taps `0..=ncp`; a nonzero pulse sample past
/// index `ncp` is a [`Error::CpViolation`]. The periodic kernel gives `mtot`
/// circular taps and is limited by `tau <= ncp ts` instead.
pub fn taps_for_delay(
    gain: Complex64,
    tau: f64,
    cfg: &ValidatedConfig,
    pulse: &PulseShape,
) -> Result<TapVector> {
    checked_taps(gain, tau, product_turns(cfg.fc(), tau), cfg, pulse)
}

fn checked_taps(
    gain: Complex64,
    tau: f64,
    carrier_turns: f64,
    cfg: &ValidatedConfig,
    pulse: &PulseShape,
) -> Result<TapVector> {
    let t = taps_unchecked(gain, tau, carrier_turns, cfg, pulse)?;
    let ncp = cfg.ncp();
    if t.circular {
        if tau > ncp as f64 * cfg.ts() {
            return Err(Error::CpViolation(format!(
                "tap delay {tau} s exceeds the prefix of {ncp} samples"
            )));
        }
    } else if t.ncip > ncp + 1 {
        return Err(Error::CpViolation(format!(
            "nonzero tap at index {} beyond the prefix of {ncp} samples",
            t.ncip - 1
        )));
    }
    Ok(t)
}

fn taps_unchecked(
    gain: Complex64,
    tau: f64,
    carrier_turns: f64,
    cfg: &ValidatedConfig,
    pulse: &PulseShape,
) -> Result<TapVector> {
    pulse.validate()?;
    let ts = cfg.ts();
    let phase = gain * cis_turns(-carrier_turns);
    match pulse.kind {
        PulseKind::PeriodicSinc { period } => {
            if period != cfg.mtot() {
                return Err(Error::InvalidSpec(format!(
                    "periodic pulse period {period} differs from mtot {}",
                    cfg.mtot()
                )));
            }
            let taps = (0..period)
                .map(|i| phase * pulse.value(i as f64 * ts - tau, ts))
                .collect();
            Ok(TapVector {
                taps,
                ncip: period,
                delay_s: tau,
                circular: true,
            })
        }
        _ => {
            let half = pulse.span as f64 / 2.0;
            let last = ((tau / ts + half).floor().max(0.0)) as usize;
            let mut taps: Vec<Complex64> = (0..=last)
                .map(|i| phase * pulse.value(i as f64 * ts - tau, ts))
                .collect();
            while taps.len() > 1 && taps.last() == Some(&ZERO) {
                taps.pop();
            }
            let ncip = if taps.iter().all(|z| *z == ZERO) {
                1
            } else {
                taps.len()
            };
            Ok(TapVector {
                taps,
                ncip,
                delay_s: tau,
                circular: false,
            })
        }
    }
}

/// Taps of path `path` from transmit element `q` to receive element `n`,
/// with the TTD delay of element `n` folded into the tap delay.
pub fn discrete_channel_taps(
    path: &PathComponent,
    q: usize,
    n: usize,
    cfg: &ValidatedConfig,
    pulse: &PulseShape,
) -> Result<TapVector> {
    let tau = path_delay(path, q, n, cfg.fc()) + cfg.ttd_delay(n);
    checked_taps(
        path.gain,
        tau,
        element_carrier_turns(path, q, n, cfg),
        cfg,
        pulse,
    )
}

/// `fc` times the tap delay of [`discrete_channel_taps`], reduced piece by
/// piece so the large path delay does not swamp the element offsets.
fn element_carrier_turns(path: &PathComponent, q: usize, n: usize, cfg: &ValidatedConfig) -> f64 {
    let geometric = 0.5 * (n as f64 * path.aoa_rad.sin() - q as f64 * path.aod_rad.sin());
    let ttd = n as f64 * product_turns(cfg.fc(), cfg.delta_tau());
    product_turns(cfg.fc(), path.delay_s) + geometric + ttd
}

/// Unnormalized DFT of the taps, wrapped onto `mtot` bins. This is the
/// eigenvalue spectrum of the circulant built from them.
pub fn tap_frequency_response(taps: &TapVector, mtot: usize) -> Vec<Complex64> {
    let mut buf = vec![ZERO; mtot];
    for (i, h) in taps.taps.iter().enumerate() {
        buf[i % mtot] += h;
    }
    FftPlanner::new().plan_fft_forward(mtot).process(&mut buf);
    buf
}

fn cp_error(cfg: &ValidatedConfig, ch: &MultipathChannel) -> Error {
    Error::CpViolation(format!(
        "cumulative delay {} s not below cyclic prefix {} s",
        cfg.cumulative_delay(ch),
        cfg.ncp() as f64 * cfg.ts()
    ))
}

/// Time-domain received symbol. `noise_seed = None` is noiseless.
pub fn simulate_time_domain(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
) -> Result<ReceivedSymbol> {
    if !cfg.check_cp_condition(ch) {
        return Err(cp_error(cfg, ch));
    }
    simulate(cfg, ch, pulse, v, x, noise_seed, true)
}

/// [`simulate_time_domain`] without any prefix checks. Whatever leaks past
/// the prefix comes from an all-zero previous symbol.
pub fn simulate_time_domain_unchecked(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
) -> Result<ReceivedSymbol> {
    simulate(cfg, ch, pulse, v, x, noise_seed, false)
}

fn check_inputs(cfg: &ValidatedConfig, v: &[Complex64], x: &PilotGrid) -> Result<()> {
    if v.len() != cfg.ntx() {
        return Err(Error::InvalidConfig(format!(
            "beamformer length {} differs from ntx {}",
            v.len(),
            cfg.ntx()
        )));
    }
    if x.values().len() != cfg.mtot() {
        return Err(Error::InvalidConfig(
            "pilot grid length differs from mtot".into(),
        ));
    }
    Ok(())
}

/// Inverse DFT of the pilots with a cyclic prefix in front.
fn transmit_samples(cfg: &ValidatedConfig, x: &PilotGrid) -> Vec<Complex64> {
    let mtot = cfg.mtot();
    let ncp = cfg.ncp();
    let mut body = x.values().to_vec();
    FftPlanner::new().plan_fft_inverse(mtot).process(&mut body);
    let mut out = Vec::with_capacity(mtot + ncp);
    for k in 0..ncp {
        // Prefixes longer than the symbol repeat it.
        out.push(body[(mtot - ncp % mtot + k) % mtot]);
    }
    out.extend_from_slice(&body);
    out
}

/// Adds one triple's contribution to the `mtot` post-prefix samples.
fn accumulate(
    acc: &mut [Complex64],
    tx: &[Complex64],
    taps: &TapVector,
    scale: Complex64,
    ncp: usize,
    ts: f64,
) {
    let mtot = acc.len();
    let body = &tx[ncp..];
    if taps.circular {
        // Band-limited interpolation of the periodic symbol. Samples that
        // reach back before the prefix would see the previous symbol, which
        // is all zeros here.
        let first_valid = taps.delay_s / ts - ncp as f64;
        for (i, a) in acc.iter_mut().enumerate() {
            if (i as f64) < first_valid {
                continue;
            }
            let mut s = ZERO;
            for (d, h) in taps.taps.iter().enumerate() {
                s += h * body[(i + mtot - d) % mtot];
            }
            *a += scale * s;
        }
    } else {
        for (i, a) in acc.iter_mut().enumerate() {
            let pos = i + ncp;
            let mut s = ZERO;
            for (d, h) in taps.taps.iter().enumerate().take(pos + 1) {
                s += h * tx[pos - d];
            }
            *a += scale * s;
        }
    }
}

fn simulate(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    noise_seed: Option<u64>,
    checked: bool,
) -> Result<ReceivedSymbol> {
    check_inputs(cfg, v, x)?;
    let mtot = cfg.mtot();
    let ncp = cfg.ncp();
    let tx = transmit_samples(cfg, x);
    let rho = ch.rho(cfg.ntx(), cfg.nrx());
    let mut y = vec![ZERO; mtot];
    for path in ch.paths() {
        for (q, &vq) in v.iter().enumerate() {
            for n in 0..cfg.nrx() {
                let taps = if checked {
                    discrete_channel_taps(path, q, n, cfg, pulse)?
                } else {
                    let tau = path_delay(path, q, n, cfg.fc()) + cfg.ttd_delay(n);
                    let turns = element_carrier_turns(path, q, n, cfg);
                    taps_unchecked(path.gain, tau, turns, cfg, pulse)?
                };
                accumulate(&mut y, &tx, &taps, rho * vq, ncp, cfg.ts());
            }
        }
    }
    let noise_variance = cfg.noise_variance();
    if let Some(seed) = noise_seed {
        let per_sample = cfg.n0() * cfg.bw() / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut y {
            *s += complex_gaussian(&mut rng, per_sample);
        }
    }
    Ok(ReceivedSymbol {
        y: dft_normalized(y),
        noise_variance,
    })
}

fn dft_normalized(mut y: Vec<Complex64>) -> Vec<Complex64> {
    let m = y.len();
    FftPlanner::new().plan_fft_forward(m).process(&mut y);
    let k = 1.0 / m as f64;
    y.iter_mut().for_each(|z| *z *= k);
    y
}

/// Largest symbol size for the literal matrix path.
pub const CYCLIC_MATRIX_MAX: usize = 64;

/// Effective `mtot x mtot` channel matrix after prefix insertion and
/// removal, combined over receive elements. Built from the
/// `mtot x (mtot + ncp)` convolution matrices, whose row `k` is the
/// reversed tap vector shifted right by `k`.
pub fn cyclic_channel_matrix(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
) -> Result<Array2<Complex64>> {
    let mtot = cfg.mtot();
    let ncp = cfg.ncp();
    if mtot > CYCLIC_MATRIX_MAX {
        return Err(Error::InvalidConfig(format!(
            "matrix path limited to mtot <= {CYCLIC_MATRIX_MAX}"
        )));
    }
    if v.len() != cfg.ntx() {
        return Err(Error::InvalidConfig(
            "beamformer length differs from ntx".into(),
        ));
    }
    if !cfg.check_cp_condition(ch) {
        return Err(cp_error(cfg, ch));
    }
    let rho = ch.rho(cfg.ntx(), cfg.nrx());
    let mut full = Array2::<Complex64>::zeros((mtot, mtot + ncp));
    let mut circ = Array2::<Complex64>::zeros((mtot, mtot));
    for path in ch.paths() {
        for (q, &vq) in v.iter().enumerate() {
            for n in 0..cfg.nrx() {
                let t = discrete_channel_taps(path, q, n, cfg, pulse)?;
                let s = rho * vq;
                if t.circular {
                    for k in 0..mtot {
                        for j in 0..mtot {
                            circ[[k, j]] += s * t.taps[(k + mtot - j) % mtot];
                        }
                    }
                } else {
                    for k in 0..mtot {
                        for (d, h) in t.taps.iter().enumerate() {
                            full[[k, k + ncp - d]] += s * h;
                        }
                    }
                }
            }
        }
    }
    // Prefix column c < ncp carries a copy of sample mtot - ncp + c.
    for k in 0..mtot {
        for c in 0..mtot + ncp {
            let j = if c < ncp { mtot - ncp + c } else { c - ncp };
            circ[[k, j]] += full[[k, c]];
        }
    }
    Ok(circ)
}

/// Noiseless received symbol through [`cyclic_channel_matrix`].
pub fn simulate_cyclic_matrix(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
) -> Result<ReceivedSymbol> {
    check_inputs(cfg, v, x)?;
    let h = cyclic_channel_matrix(cfg, ch, pulse, v)?;
    let mut body = x.values().to_vec();
    FftPlanner::new()
        .plan_fft_inverse(cfg.mtot())
        .process(&mut body);
    let y: Vec<Complex64> = h
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&body).map(|(a, b)| a * b).sum())
        .collect();
    Ok(ReceivedSymbol {
        y: dft_normalized(y),
        noise_variance: cfg.noise_variance(),
    })
}

fn max_relative_error(fd: &ReceivedSymbol, td: &ReceivedSymbol, active: &[usize]) -> f64 {
    active
        .iter()
        .map(|&m| (td.y[m] - fd.y[m]).norm() / fd.y[m].norm().max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Largest relative difference over the active pilots between the
/// frequency-domain model and the time-domain simulation, both noiseless.
pub fn verify_model_equivalence(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
) -> Result<f64> {
    let fd = receive_symbol(cfg, ch, pulse, v, x, None)?;
    let td = simulate_time_domain(cfg, ch, pulse, v, x, None)?;
    Ok(max_relative_error(&fd, &td, x.active()))
}

/// [`verify_model_equivalence`] with every prefix check disabled, for measuring
/// how far the two models drift apart when the prefix is too short.
pub fn model_mismatch(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
) -> Result<f64> {
    let fd = receive_symbol_unchecked(cfg, ch, pulse, v, x, None)?;
    let td = simulate_time_domain_unchecked(cfg, ch, pulse, v, x, None)?;
    Ok(max_relative_error(&fd, &td, x.active()))
}
