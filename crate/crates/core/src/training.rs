//! Receive beam training and the metrics used to judge it.

use num_complex::Complex64;

use crate::arraylab::{argmax_first, build_lut, cis_turns, rx_steering, SoundingLut};
use crate::channel::{beamformed_channel, MultipathChannel, PulseShape};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::phy::{
    make_pilots, receive_symbol, receive_with_combiner, resource_block_expand, resource_blocks,
    single_index_blocks, PilotGrid, ReceivedSymbol,
};

/// Outcome of one training procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingResult {
    /// Winning pilot subcarrier (TTD) or DFT beam index (phased array).
    pub m_best: usize,
    pub aoa_estimate: f64,
    pub rsrp: Vec<f64>,
    pub symbols_used: usize,
}

/// Power summed over each block of subcarriers.
pub fn rsrp(y: &ReceivedSymbol, blocks: &[Vec<usize>]) -> Result<Vec<f64>> {
    if blocks.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b.is_empty() {
                return Err(Error::EmptyBlock(i));
            }
            b.iter()
                .map(|&k| {
                    y.y.get(k)
                        .map(|z| z.norm_sqr())
                        .ok_or(Error::IndexOutOfRange {
                            index: k,
                            limit: y.y.len(),
                        })
                })
                .sum()
        })
        .collect()
}

/// Picks the LUT entry with the strongest RSRP. Ties go to the earlier
/// (smaller) pilot.
pub fn estimate_aoa(rsrp: &[f64], lut: &SoundingLut) -> Result<TrainingResult> {
    if rsrp.len() != lut.len() {
        return Err(Error::InvalidConfig(format!(
            "{} RSRP values for {} LUT entries",
            rsrp.len(),
            lut.len()
        )));
    }
    let i = argmax_first(rsrp).ok_or(Error::EmptyPilotSet)?;
    let (m_best, aoa_estimate) = lut.entries()[i];
    Ok(TrainingResult {
        m_best,
        aoa_estimate,
        rsrp: rsrp.to_vec(),
        symbols_used: 1,
    })
}

/// Whether pilots are measured on their own subcarrier or on their whole
/// resource block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Single,
    ResourceBlock,
}

/// Pilot grid and per-pilot measurement blocks for a sounding set.
pub fn sounding_layout(
    cfg: &ValidatedConfig,
    pilots: &[usize],
    mode: BlockMode,
) -> Result<(PilotGrid, Vec<Vec<usize>>)> {
    match mode {
        BlockMode::Single => Ok((make_pilots(cfg, pilots)?, single_index_blocks(pilots))),
        BlockMode::ResourceBlock => Ok((
            make_pilots(cfg, &resource_block_expand(pilots, cfg.mtot()))?,
            resource_blocks(pilots, cfg.mtot()),
        )),
    }
}

/// One-shot TTD training: a single symbol, RSRP per pilot, LUT lookup.
pub fn ttd_training(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    pilots: &[usize],
    mode: BlockMode,
    noise_seed: Option<u64>,
) -> Result<TrainingResult> {
    let lut = build_lut(cfg, pilots)?;
    let sorted: Vec<usize> = lut.entries().iter().map(|e| e.0).collect();
    let (x, blocks) = sounding_layout(cfg, &sorted, mode)?;
    let y = receive_symbol(cfg, ch, pulse, v, &x, noise_seed)?;
    estimate_aoa(&rsrp(&y, &blocks)?, &lut)
}

/// Receive weights of DFT beam `k` out of `count`:
/// `exp(j 2 pi n k / count)`.
pub fn dft_weights(k: usize, count: usize, nrx: usize) -> Vec<Complex64> {
    (0..nrx)
        .map(|n| cis_turns(((n * k) % count) as f64 / count as f64))
        .collect()
}

/// Arrival angle at which DFT beam `k` of `count` peaks.
pub fn dft_beam_angle(k: usize, count: usize) -> f64 {
    let s = (1.0 - 2.0 * k as f64 / count as f64).rem_euclid(2.0) - 1.0;
    s.asin()
}

/// Seed of the `k`-th symbol of a multi-symbol sweep.
pub fn symbol_seed(seed: u64, k: usize) -> u64 {
    crate::harness::split_seed(seed, 0x5eed, k as u64)
}

/// Phased-array benchmark: `count` symbols, each received with one DFT
/// beam over the same pilot grid; the beam with the largest wideband power
/// wins.
pub fn paa_dft_training(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    x: &PilotGrid,
    count: usize,
    noise_seed: Option<u64>,
) -> Result<TrainingResult> {
    if count == 0 {
        return Err(Error::InvalidConfig(
            "at least one DFT beam is required".into(),
        ));
    }
    let mut power = Vec::with_capacity(count);
    for k in 0..count {
        let w = dft_weights(k, count, cfg.nrx());
        let seed = noise_seed.map(|s| symbol_seed(s, k));
        let y = receive_with_combiner(cfg, ch, pulse, v, x, seed, |_| Ok(w.clone()))?;
        power.push(x.active().iter().map(|&m| y.y[m].norm_sqr()).sum::<f64>());
    }
    let k = argmax_first(&power).expect("count >= 1");
    Ok(TrainingResult {
        m_best: k,
        aoa_estimate: dft_beam_angle(k, count),
        rsrp: power,
        symbols_used: count,
    })
}

/// `|a(estimate)^H a(truth)|^2 / nrx^2` with both vectors at the carrier.
pub fn post_training_gain(estimate: f64, truth: f64, nrx: usize, fc: f64) -> f64 {
    let a = rx_steering(estimate, fc, nrx, fc);
    let b = rx_steering(truth, fc, nrx, fc);
    let ip: Complex64 = a
        .entries
        .iter()
        .zip(&b.entries)
        .map(|(a, b)| a.conj() * b)
        .sum();
    (ip.norm_sqr() / (nrx * nrx) as f64).min(1.0)
}

/// `sum_m |H[m] v|^2` over every subcarrier.
pub fn signal_power(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
) -> Result<f64> {
    let mut total = 0.0;
    for m in 0..cfg.mtot() {
        total += beamformed_channel(cfg, ch, pulse, v, m)?
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>();
    }
    Ok(total)
}

/// Post-transmit-beam SNR over the whole band,
/// `sum_m |H[m] v|^2 / sum_m E|N[m]|^2`.
pub fn snr(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
) -> Result<f64> {
    let s = signal_power(cfg, ch, pulse, v)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(s / (cfg.mtot() as f64 * cfg.noise_variance()))
}

pub fn snr_db(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
) -> Result<f64> {
    Ok(10.0 * snr(cfg, ch, pulse, v)?.log10())
}

/// Noise level that makes [`snr`] equal `snr_linear` for a channel with
/// total beamformed power `signal_power`.
pub fn n0_for_snr(cfg: &ValidatedConfig, signal_power: f64, snr_linear: f64) -> f64 {
    2.0 * signal_power / (cfg.bw() * snr_linear)
}

/// Frequency-flat unit-norm combiner steered at `angle`,
/// `a_rx(angle, fc) / sqrt(nrx)`.
pub fn phased_array_combiner(angle: f64, cfg: &ValidatedConfig) -> Vec<Complex64> {
    let k = 1.0 / (cfg.nrx() as f64).sqrt();
    rx_steering(angle, cfg.fc(), cfg.nrx(), cfg.fc())
        .entries
        .into_iter()
        .map(|a| a * k)
        .collect()
}

/// `(1/mtot) sum_m log2(1 + |w_m^H H[m] v|^2 / (nrx E|N[m]|^2))`, with each
/// combiner scaled to unit norm.
pub fn spectral_efficiency(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    combiner: impl Fn(usize) -> Result<Vec<Complex64>>,
) -> Result<f64> {
    let noise = cfg.nrx() as f64 * cfg.noise_variance();
    let mut total = 0.0;
    for m in 0..cfg.mtot() {
        let hv = beamformed_channel(cfg, ch, pulse, v, m)?;
        let w = combiner(m)?;
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let ip: Complex64 = w.iter().zip(&hv).map(|(w, h)| w.conj() * h).sum();
        let s = (ip / norm).norm_sqr();
        if s > 0.0 {
            total += (1.0 + s / noise).log2();
        }
    }
    Ok(total / cfg.mtot() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arraylab::{beam_center, ttd_combiner};
    use crate::channel::aligned_tx_beamformer;
    use crate::config::SystemConfig;
    use crate::phy::select_pilot_subcarriers;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cfg(mtot: usize, ntx: usize, nrx: usize) -> ValidatedConfig {
        SystemConfig::new(28e9, 400e6, mtot, ntx, nrx, 2.5e-9)
            .validate()
            .unwrap()
    }

    fn sym(y: Vec<Complex64>) -> ReceivedSymbol {
        ReceivedSymbol {
            y,
            noise_variance: 0.0,
        }
    }

    #[test]
    fn rsrp_examples() {
        let y = sym(vec![Complex64::new(0.0, 0.0); 16]);
        assert_eq!(
            rsrp(&y, &single_index_blocks(&[0, 4, 8])).unwrap(),
            vec![0.0; 3]
        );
        let y = sym((0..16).map(|i| Complex64::new(i as f64, 1.0)).collect());
        let r = rsrp(&y, &single_index_blocks(&[2, 5])).unwrap();
        assert_eq!(r, vec![5.0, 26.0]);
        let r = rsrp(&y, &[vec![1, 2]]).unwrap();
        assert_eq!(r, vec![2.0 + 5.0]);
        assert_eq!(rsrp(&y, &[vec![1], vec![]]), Err(Error::EmptyBlock(1)));
        assert!(matches!(
            rsrp(&y, &[vec![16]]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn estimate_examples() {
        let c = cfg(8, 1, 8);
        let lut = build_lut(&c, &(0..8).collect::<Vec<_>>()).unwrap();
        let mut r = vec![0.0; 8];
        r[5] = 5.0;
        let t = estimate_aoa(&r, &lut).unwrap();
        assert_eq!(t.m_best, 5);
        assert_eq!(t.aoa_estimate, beam_center(&c, 5).unwrap());
        assert_eq!(t.symbols_used, 1);
        let t = estimate_aoa(&[1.0; 8], &lut).unwrap();
        assert_eq!(t.m_best, 0);
        assert!(estimate_aoa(&[1.0; 3], &lut).is_err());
    }

    #[test]
    fn noiseless_training_on_a_lut_angle() {
        // Beam centers of the 8-subcarrier layout: 27.9 GHz points at +pi/6.
        let c = SystemConfig::new(28e9, 400e6, 8, 4, 8, 2.5e-9)
            .with_ncp(8)
            .validate()
            .unwrap();
        let pilots: Vec<usize> = (0..8).collect();
        let ch = MultipathChannel::line_of_sight(0.0, 0.0, PI / 6.0);
        let v = aligned_tx_beamformer(&ch, &c, 0).unwrap();
        let t = ttd_training(
            &c,
            &ch,
            &PulseShape::default(),
            &v,
            &pilots,
            BlockMode::Single,
            None,
        )
        .unwrap();
        assert_eq!(c.subcarrier_frequency(t.m_best).unwrap(), 27.9e9);
        assert!((t.aoa_estimate - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_invariant_to_symbol_scaling() {
        let c = cfg(2048, 4, 16);
        let pilots = select_pilot_subcarriers(2048, 32).unwrap();
        let lut = build_lut(&c, &pilots).unwrap();
        let ch = MultipathChannel::line_of_sight(0.0, 0.1, 0.77);
        let v = aligned_tx_beamformer(&ch, &c, 0).unwrap();
        let (x, blocks) = sounding_layout(&c, &pilots, BlockMode::ResourceBlock).unwrap();
        let y = receive_symbol(&c, &ch, &PulseShape::default(), &v, &x, Some(1)).unwrap();
        let a = estimate_aoa(&rsrp(&y, &blocks).unwrap(), &lut).unwrap();
        let k = Complex64::new(-3.0, 0.5);
        let ys = sym(y.y.iter().map(|z| z * k).collect());
        let b = estimate_aoa(&rsrp(&ys, &blocks).unwrap(), &lut).unwrap();
        assert_eq!(a.m_best, b.m_best);
    }

    #[test]
    fn noiseless_error_within_half_spacing() {
        let c = cfg(2048, 4, 16);
        let pilots = select_pilot_subcarriers(2048, 32).unwrap();
        for i in 0..40 {
            let truth = -1.5 + 3.0 * i as f64 / 39.0;
            let ch = MultipathChannel::line_of_sight(0.0, 0.0, truth);
            let v = aligned_tx_beamformer(&ch, &c, 0).unwrap();
            let t = ttd_training(
                &c,
                &ch,
                &PulseShape::default(),
                &v,
                &pilots,
                BlockMode::Single,
                None,
            )
            .unwrap();
            let mut d = (t.aoa_estimate.sin() - truth.sin()).abs();
            d = d.min(2.0 - d);
            // Half the beam spacing, plus the squint shift of the beam
            // centers at the band edges.
            let bound = 1.0 / 32.0 + truth.sin().abs() * 200e6 / 28e9;
            assert!(d <= bound + 1e-9, "truth={truth} est={}", t.aoa_estimate);
        }
    }

    #[test]
    fn dft_beam_recovery() {
        let c = cfg(64, 2, 8);
        let x = make_pilots(&c, &(0..64).collect::<Vec<_>>()).unwrap();
        for k in 0..8 {
            let theta = dft_beam_angle(k, 8);
            let ch = MultipathChannel::line_of_sight(0.0, 0.0, theta);
            let v = aligned_tx_beamformer(&ch, &c, 0).unwrap();
            let t = paa_dft_training(&c, &ch, &PulseShape::default(), &v, &x, 8, None).unwrap();
            assert_eq!(t.m_best, k);
            assert_eq!(t.symbols_used, 8);
        }
        let ch = MultipathChannel::line_of_sight(0.0, 0.0, 0.4);
        let t = paa_dft_training(
            &c,
            &ch,
            &PulseShape::default(),
            &[Complex64::new(1.0, 0.0); 2],
            &x,
            1,
            Some(3),
        )
        .unwrap();
        assert_eq!(t.m_best, 0);
        assert!(paa_dft_training(
            &c,
            &ch,
            &PulseShape::default(),
            &[Complex64::new(1.0, 0.0); 2],
            &x,
            0,
            None
        )
        .is_err());
    }

    #[test]
    fn ttd_mimics_dft_sweep() {
        let k = 16;
        let c = SystemConfig::new(28e9, 400e6, k, 1, 16, 1.0 / 400e6)
            .validate()
            .unwrap();
        let dft: Vec<Vec<Complex64>> = (0..k).map(|j| dft_weights(j, k, 16)).collect();
        for m in 0..k {
            let w = ttd_combiner(&c, m).unwrap();
            let j = c.baseband_bin(m).unwrap().rem_euclid(k as i64) as usize;
            for (a, b) in w.iter().zip(&dft[j]) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn post_gain_examples() {
        assert!((post_training_gain(0.3, 0.3, 16, 28e9) - 1.0).abs() < 1e-12);
        let a = (0.25f64).asin();
        let b = (0.25f64 + 2.0 / 16.0).asin();
        assert!(post_training_gain(a, b, 16, 28e9) < 1e-20);
        let g1 = post_training_gain(0.1, -0.7, 16, 28e9);
        let g2 = post_training_gain(-0.7, 0.1, 16, 28e9);
        assert!((g1 - g2).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&g1));
        assert!((post_training_gain(FRAC_PI_2, -FRAC_PI_2, 16, 28e9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_examples() {
        let c = cfg(64, 4, 4).with_n0(1e-9).unwrap();
        let p = PulseShape::default();
        let v = vec![Complex64::new(1.0, 0.0); 4];
        assert_eq!(snr(&c, &MultipathChannel::default(), &p, &v).unwrap(), 0.0);
        let ch = MultipathChannel::line_of_sight(0.0, 0.2, -0.3);
        let s1 = snr(&c, &ch, &p, &v).unwrap();
        let s2 = snr(&c, &ch.scaled(Complex64::new(2.0, 0.0)), &p, &v).unwrap();
        assert!((s2 / s1 - 4.0).abs() < 1e-12);
        let s3 = snr(&c.with_n0(3e-9).unwrap(), &ch, &p, &v).unwrap();
        assert!((s1 / s3 - 3.0).abs() < 1e-12);
        let n0 = n0_for_snr(&c, signal_power(&c, &ch, &p, &v).unwrap(), 100.0);
        let s = snr(&c.with_n0(n0).unwrap(), &ch, &p, &v).unwrap();
        assert!((s / 100.0 - 1.0).abs() < 1e-12);
        assert!((snr_db(&c.with_n0(n0).unwrap(), &ch, &p, &v).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_efficiency_examples() {
        let c = cfg(64, 4, 8).with_n0(1e-9).unwrap();
        let p = PulseShape::default();
        let ch = MultipathChannel::line_of_sight(0.0, 0.3, 0.5);
        let v = aligned_tx_beamformer(&ch, &c, 0).unwrap();
        let w = |a: f64| {
            let w = phased_array_combiner(a, &c);
            move |_m: usize| Ok(w.clone())
        };
        assert_eq!(
            spectral_efficiency(&c, &MultipathChannel::default(), &p, &v, w(0.5)).unwrap(),
            0.0
        );
        let best = spectral_efficiency(&c, &ch, &p, &v, w(0.5)).unwrap();
        let off = spectral_efficiency(&c, &ch, &p, &v, w(0.6)).unwrap();
        assert!(best > off);
        // Direct evaluation of the same sum.
        let sigma = c.noise_variance();
        let comb = phased_array_combiner(0.5, &c);
        let mut want = 0.0;
        for m in 0..64 {
            let hv = beamformed_channel(&c, &ch, &p, &v, m).unwrap();
            let ip: Complex64 = comb.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
            want += (1.0 + ip.norm_sqr() / (8.0 * sigma)).log2();
        }
        assert!((best - want / 64.0).abs() < 1e-12);
        // At the carrier the aligned gain is rho^2 ntx^2 nrx.
        let f0 = {
            let hv = beamformed_channel(&c, &ch, &p, &v, 0).unwrap();
            let ip: Complex64 = comb.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
            ip.norm_sqr()
        };
        assert!((f0 - 32.0 * 16.0 * 8.0).abs() < 1e-9);
    }
}
