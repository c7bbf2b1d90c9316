//! Antenna-array mathematics for a uniform linear receive array behind
//! true-time-delay (TTD) taps.
//!
//! The TTD combiner applies a delay of `n * delta_tau` to element `n`, so the
//! effective weight vector rotates with subcarrier frequency. The receive
//! gain only depends on
//!
//! ```text
//! psi = 2 f delta_tau + (f / fc) sin(theta)
//! ```
//!
//! and is the squared Dirichlet kernel `|sin(N pi psi / 2) / sin(pi psi / 2)|^2 / N`,
//! which has period 2 in `psi` and peaks at even integers. A subcarrier's
//! sounding beam therefore points where `psi` is an even integer.
//!
//! The half-width of the main lobe above a gain floor `(1 - eps) N` is
//! written `Omega(eps, N)` and is measured in `psi` units.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};

/// Threshold on `|sin(pi psi / 2)|` below which the gain is replaced by its
/// limit `N`.
const SINGULAR_EPS: f64 = 1e-12;

/// Default angular grid used by brute-force scans.
pub const DEFAULT_GRID: usize = 4096;

/// Uniform linear array response sampled at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: Vec<Complex64>,
    pub angle: f64,
    pub freq: f64,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `exp(j 2 pi turns)` with the integer part of `turns` removed first.
#[inline]
pub(crate) fn cis_turns(turns: f64) -> Complex64 {
    let r = turns - turns.round();
    Complex64::from_polar(1.0, 2.0 * PI * r)
}

/// Fractional part of `a * b` in turns, with the rounding error of the
/// product recovered by a fused multiply-add. Large products such as
/// `fc * tau` otherwise lose about `1e-13` of a turn.
#[inline]
pub(crate) fn product_turns(a: f64, b: f64) -> f64 {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p - p.round()) + e
}

/// Half-wavelength (at `fc`) array response: entry `n` is
/// `exp(-j pi n (f / fc) sin(angle))`.
pub fn rx_steering(angle: f64, f: f64, n: usize, fc: f64) -> SteeringVector {
    let step = -0.5 * (f / fc) * angle.sin();
    SteeringVector {
        entries: (0..n).map(|i| cis_turns(i as f64 * step)).collect(),
        angle,
        freq: f,
    }
}

/// Transmit array response; same geometry as [`rx_steering`].
pub fn tx_steering(angle: f64, f: f64, n: usize, fc: f64) -> SteeringVector {
    rx_steering(angle, f, n, fc)
}

/// TTD combining weights at subcarrier `m`: entry `n` is
/// `exp(j 2 pi f_m n delta_tau)`.
pub fn ttd_combiner(cfg: &ValidatedConfig, m: usize) -> Result<Vec<Complex64>> {
    let k = cfg.baseband_bin(m)?;
    let dt = cfg.delta_tau();
    let frac = product_turns(cfg.fc(), dt) + (k as f64 / cfg.mtot() as f64) * cfg.bw() * dt;
    Ok((0..cfg.nrx()).map(|n| cis_turns(n as f64 * frac)).collect())
}

/// `psi` reduced to `[-1, 1]`.
pub fn psi(theta: f64, f: f64, fc: f64, delta_tau: f64) -> f64 {
    let r = 2.0 * product_turns(f, delta_tau) + (f / fc) * theta.sin();
    r - 2.0 * (r / 2.0).round()
}

/// Array gain as a function of `psi`; value in `[0, n]`.
pub fn dirichlet_gain(psi: f64, n: usize) -> f64 {
    let r = psi - 2.0 * (psi / 2.0).round();
    let x = 0.5 * PI * r;
    let den = x.sin();
    if den.abs() < SINGULAR_EPS {
        return n as f64;
    }
    let ratio = (n as f64 * x).sin() / den;
    ratio * ratio / n as f64
}

/// Receive gain toward `theta` at RF frequency `f`.
pub fn gain_at_frequency(cfg: &ValidatedConfig, theta: f64, f: f64) -> f64 {
    dirichlet_gain(psi(theta, f, cfg.fc(), cfg.delta_tau()), cfg.nrx())
}

/// Closed-form receive gain of subcarrier `m` toward `theta`.
pub fn gain(cfg: &ValidatedConfig, theta: f64, m: usize) -> Result<f64> {
    let f = cfg.subcarrier_frequency(m)?;
    Ok(gain_at_frequency(cfg, theta, f))
}

/// Gain evaluated as `|w^H a|^2 / N` from the combiner and steering vector.
pub fn gain_inner_product(cfg: &ValidatedConfig, theta: f64, m: usize) -> Result<f64> {
    let f = cfg.subcarrier_frequency(m)?;
    let w = ttd_combiner(cfg, m)?;
    let a = rx_steering(theta, f, cfg.nrx(), cfg.fc());
    let ip: Complex64 = w.iter().zip(&a.entries).map(|(w, a)| w.conj() * a).sum();
    Ok(ip.norm_sqr() / cfg.nrx() as f64)
}

/// Sine of the beam center under `f / fc ~ 1`: the representative in
/// `[-1, 1)` of `-2 f delta_tau` modulo 2.
pub fn sine_center(f: f64, delta_tau: f64) -> f64 {
    let turns = f * delta_tau;
    let frac2 = 2.0 * (turns - turns.floor());
    (1.0 - frac2).rem_euclid(2.0) - 1.0
}

/// Approximate pointing direction of the sounding beam of subcarrier `m`,
/// in `[-pi/2, pi/2)`.
pub fn beam_center(cfg: &ValidatedConfig, m: usize) -> Result<f64> {
    let f = cfg.subcarrier_frequency(m)?;
    Ok(sine_center(f, cfg.delta_tau()).asin())
}

/// Exact solution of `psi = 2z` on the same branch as [`beam_center`],
/// keeping the `f / fc` factor. `None` when the branch has no real angle.
pub fn beam_center_exact(cfg: &ValidatedConfig, m: usize) -> Result<Option<f64>> {
    let f = cfg.subcarrier_frequency(m)?;
    let s = sine_center(f, cfg.delta_tau()) * cfg.fc() / f;
    Ok((s.abs() <= 1.0).then(|| s.asin()))
}

/// Uniform grid of `n` angles covering `[-pi/2, pi/2]` inclusive.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => {
            let step = PI / (n - 1) as f64;
            (0..n).map(|i| -FRAC_PI_2 + i as f64 * step).collect()
        }
    }
}

/// Index of the largest value; values within `1e-12` relative of the
/// running best count as ties and keep the earlier index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b + 1e-12 * b.abs().max(f64::MIN_POSITIVE) => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// Grid angle with the highest gain for subcarrier `m`.
pub fn numeric_beam_center(cfg: &ValidatedConfig, m: usize, grid_size: usize) -> Result<f64> {
    let f = cfg.subcarrier_frequency(m)?;
    let grid = theta_grid(grid_size);
    let g: Vec<f64> = grid.iter().map(|&t| gain_at_frequency(cfg, t, f)).collect();
    Ok(grid[argmax_first(&g).expect("non-empty grid")])
}

/// Half-width `Omega(eps, n)` in `psi` units of the main lobe above
/// `(1 - eps) n`, by bisection to `1e-10`.
///
/// For `n < 2` the gain is flat and the whole half period (1.0) is returned.
pub fn epsilon_beamwidth(eps: f64, n: usize) -> f64 {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    if n < 2 {
        return 1.0;
    }
    let floor = 1.0 - eps;
    let above = |p: f64| dirichlet_gain(p, n) / n as f64 >= floor;
    // The main lobe falls monotonically to its first null at 2/n.
    let (mut lo, mut hi) = (0.0, 2.0 / n as f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `min over theta of max over pilots` of the receive gain, on a uniform
/// angular grid.
pub fn min_max_gain(cfg: &ValidatedConfig, pilots: &[usize], grid_size: usize) -> Result<f64> {
    Ok(max_gain_profile(cfg, pilots, grid_size)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// `max over pilots` of the gain at each grid angle.
pub fn max_gain_profile(
    cfg: &ValidatedConfig,
    pilots: &[usize],
    grid_size: usize,
) -> Result<Vec<f64>> {
    if pilots.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    let freqs = pilots
        .iter()
        .map(|&m| cfg.subcarrier_frequency(m))
        .collect::<Result<Vec<_>>>()?;
    Ok(theta_grid(grid_size)
        .into_iter()
        .map(|t| {
            freqs
                .iter()
                .map(|&f| gain_at_frequency(cfg, t, f))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Carrier, bandwidth and array size against which design points are judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignContext {
    pub fc: f64,
    pub bw: f64,
    pub nrx: usize,
}

/// A candidate `(delta_tau, mtot)` with its gain-floor parameter `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub delta_tau: f64,
    pub mtot: usize,
    pub epsilon: f64,
}

impl DesignPoint {
    pub fn new(delta_tau: f64, mtot: usize, epsilon: f64) -> Result<Self> {
        if mtot == 0 {
            return Err(Error::InvalidConfig("mtot must be at least 1".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig("epsilon must lie in (0, 1)".into()));
        }
        Ok(DesignPoint {
            delta_tau,
            mtot,
            epsilon,
        })
    }
}

// Thresholds like 1/bw are compared with a relative slack so that a delay
// written as 2.5e-9 meets 1/400e6.
fn at_least(x: f64, threshold: f64) -> bool {
    x >= threshold * (1.0 - 1e-12)
}

/// Minimum tap spacing for the strict or relaxed subset.
pub fn min_delay_spacing(ctx: &DesignContext, relaxed: bool) -> f64 {
    if relaxed {
        1.0 / ctx.bw
    } else {
        1.0 / ctx.bw + 1.0 / (2.0 * ctx.fc)
    }
}

/// Membership of `dp` in the sufficient design subset.
///
/// Strict: `delta_tau >= 1/bw + 1/(2 fc)` and
/// `mtot >= (bw delta_tau + bw/(2 fc)) / Omega`. Relaxed (`bw << fc`):
/// `delta_tau >= 1/bw` and `mtot >= ceil(1 / Omega)`.
pub fn in_design_subset(dp: &DesignPoint, ctx: &DesignContext, relaxed: bool) -> bool {
    match required_subcarriers(dp.delta_tau, ctx, dp.epsilon, relaxed) {
        Ok(m) => dp.mtot >= m,
        Err(_) => false,
    }
}

/// Smallest subcarrier count that puts `delta_tau` in the design subset.
pub fn required_subcarriers(
    delta_tau: f64,
    ctx: &DesignContext,
    epsilon: f64,
    relaxed: bool,
) -> Result<usize> {
    let min_s = min_delay_spacing(ctx, relaxed);
    if !at_least(delta_tau, min_s) {
        return Err(Error::DelayTooSmall {
            delta_tau_s: delta_tau,
            min_s,
        });
    }
    let omega = epsilon_beamwidth(epsilon, ctx.nrx);
    let bound = if relaxed {
        1.0 / omega
    } else {
        (ctx.bw * delta_tau + ctx.bw / (2.0 * ctx.fc)) / omega
    };
    Ok(bound.ceil() as usize)
}

/// Pilot subcarriers paired with their approximate beam centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingLut {
    entries: Vec<(usize, f64)>,
}

impl SoundingLut {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn angle_of(&self, m: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&m, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }
}

pub fn build_lut(cfg: &ValidatedConfig, pilots: &[usize]) -> Result<SoundingLut> {
    if pilots.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    let mut entries = pilots
        .iter()
        .map(|&m| Ok((m, beam_center(cfg, m)?)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.0);
    entries.dedup_by_key(|e| e.0);
    Ok(SoundingLut { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use proptest::prelude::*;

    fn eight_beam() -> ValidatedConfig {
        SystemConfig::new(28e9, 400e6, 8, 1, 8, 2.5e-9)
            .validate()
            .unwrap()
    }

    fn ctx() -> DesignContext {
        DesignContext {
            fc: 28e9,
            bw: 400e6,
            nrx: 8,
        }
    }

    fn index_of(cfg: &ValidatedConfig, f: f64) -> usize {
        (0..cfg.mtot())
            .find(|&m| (cfg.subcarrier_frequency(m).unwrap() - f).abs() < 1.0)
            .unwrap()
    }

    #[test]
    fn steering_examples() {
        let a = rx_steering(0.0, 28e9, 5, 28e9);
        assert!(a.entries.iter().all(|e| (e - 1.0).norm() < 1e-15));
        let a = rx_steering(FRAC_PI_2, 28e9, 2, 28e9);
        assert!((a.entries[0] - 1.0).norm() < 1e-15);
        assert!((a.entries[1] - Complex64::from_polar(1.0, -PI)).norm() < 1e-12);
    }

    #[test]
    fn combiner_examples() {
        let cfg = eight_beam();
        let w = ttd_combiner(&cfg, 0).unwrap();
        assert!(w.iter().all(|e| (e - 1.0).norm() < 1e-12));
        let w = ttd_combiner(&cfg, index_of(&cfg, 28.1e9)).unwrap();
        for (n, e) in w.iter().enumerate() {
            let want = Complex64::from_polar(1.0, PI * n as f64 / 2.0);
            assert!((e - want).norm() < 1e-12, "n={n}");
        }
        assert!(matches!(
            ttd_combiner(&cfg, 8),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn gain_peak_and_null() {
        let cfg = eight_beam();
        assert!((gain(&cfg, 0.0, 0).unwrap() - 8.0).abs() < 1e-9);
        // f_m = fc, psi = sin(theta); first null at psi = 2/8.
        let theta = (2.0f64 / 8.0).asin();
        assert!(gain(&cfg, theta, 0).unwrap() < 1e-20);
        assert_eq!(dirichlet_gain(0.0, 8), 8.0);
        assert_eq!(dirichlet_gain(2.0, 8), 8.0);
        assert!((dirichlet_gain(0.3, 8) - dirichlet_gain(2.3, 8)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_inner_product() {
        use rand::{Rng, SeedableRng};
        let cfg = SystemConfig::new(28e9, 400e6, 64, 1, 16, 2.6e-9)
            .validate()
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            let m = rng.random_range(0..64);
            let a = gain(&cfg, theta, m).unwrap();
            let b = gain_inner_product(&cfg, theta, m).unwrap();
            worst = worst.max((a - b).abs() / b.max(1e-300));
        }
        assert!(worst < 1e-10, "worst relative error {worst}");
    }

    #[test]
    fn beam_center_examples() {
        let cfg = eight_beam();
        assert!(beam_center(&cfg, 0).unwrap().abs() < 1e-12);
        let c = beam_center(&cfg, index_of(&cfg, 28.1e9)).unwrap();
        assert!((c + PI / 6.0).abs() < 1e-12, "{c}");
        let c = beam_center(&cfg, index_of(&cfg, 27.9e9)).unwrap();
        assert!((c - PI / 6.0).abs() < 1e-12, "{c}");
        let c = beam_center(&cfg, index_of(&cfg, 27.8e9)).unwrap();
        assert_eq!(c, -FRAC_PI_2);
    }

    #[test]
    fn beam_center_tracks_numeric_argmax() {
        let cfg = eight_beam();
        let step = PI / 4095.0;
        let tol = step + (cfg.bw() / (2.0 * cfg.fc())).asin();
        for m in 0..8 {
            let approx = beam_center(&cfg, m).unwrap();
            let numeric = numeric_beam_center(&cfg, m, DEFAULT_GRID).unwrap();
            assert!(
                (approx - numeric).abs() <= tol,
                "m={m}: {approx} vs {numeric}"
            );
            if let Some(exact) = beam_center_exact(&cfg, m).unwrap() {
                assert!((exact - numeric).abs() <= step, "m={m}");
            }
        }
    }

    #[test]
    fn beamwidth_values() {
        for n in [8, 16, 32] {
            assert!((epsilon_beamwidth(0.5, n) - 0.886 / n as f64).abs() < 1e-3);
        }
        assert!((epsilon_beamwidth(0.6, 8) - 0.1266).abs() < 1e-3);
        let w = epsilon_beamwidth(0.6, 8);
        assert!(dirichlet_gain(w, 8) >= 0.4 * 8.0 - 1e-9);
        assert!(dirichlet_gain(w + 1e-8, 8) < 0.4 * 8.0);
    }

    #[test]
    fn min_max_gain_single_pilot_leaves_gaps() {
        let cfg = eight_beam();
        let v = min_max_gain(&cfg, &[0], DEFAULT_GRID).unwrap();
        assert!(v < 0.1 * 8.0);
        assert_eq!(min_max_gain(&cfg, &[], 256), Err(Error::EmptyPilotSet));
    }

    #[test]
    fn min_max_gain_grows_with_pilots() {
        let cfg = eight_beam();
        let mut pilots = vec![];
        let mut prev = 0.0;
        for m in [3, 0, 6, 1, 7, 2, 5, 4] {
            pilots.push(m);
            pilots.sort();
            let v = min_max_gain(&cfg, &pilots, 1024).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn design_subset_examples() {
        let w = epsilon_beamwidth(0.6, 8);
        let eight_beam = DesignPoint::new(2.5e-9, 8, 0.6).unwrap();
        assert!(in_design_subset(&eight_beam, &ctx(), true));
        assert!(!in_design_subset(&eight_beam, &ctx(), false));
        let p = DesignPoint::new(2.6e-9, 9, 0.6).unwrap();
        assert!(in_design_subset(&p, &ctx(), false));
        assert!(((1.04 + 400e6 / 56e9) / w - 8.27).abs() < 0.01);
        let p = DesignPoint::new(2.6e-9, 1, 0.6).unwrap();
        assert!(!in_design_subset(&p, &ctx(), false));
        assert!(!in_design_subset(&p, &ctx(), true));
        assert!(DesignPoint::new(2.6e-9, 0, 0.6).is_err());
        assert!(DesignPoint::new(2.6e-9, 4, 1.0).is_err());
    }

    #[test]
    fn required_subcarrier_examples() {
        assert_eq!(required_subcarriers(2.5e-9, &ctx(), 0.6, true), Ok(8));
        assert_eq!(required_subcarriers(2.5179e-9, &ctx(), 0.6, false), Ok(9));
        assert!(matches!(
            required_subcarriers(2.5e-9, &ctx(), 0.6, false),
            Err(Error::DelayTooSmall { .. })
        ));
        let mut last = 0;
        for nrx in [8, 16, 32, 64, 128] {
            let c = DesignContext { nrx, ..ctx() };
            let m = required_subcarriers(2.5e-9, &c, 0.6, true).unwrap();
            assert!(m > last);
            last = m;
        }
    }

    #[test]
    fn lut_examples() {
        let cfg = eight_beam();
        let lut = build_lut(&cfg, &[4, 0, 2]).unwrap();
        assert_eq!(
            lut.entries().iter().map(|e| e.0).collect::<Vec<_>>(),
            vec![0, 2, 4]
        );
        assert!(lut.angle_of(0).unwrap().abs() < 1e-12);
        let lut = build_lut(&cfg, &(0..8).collect::<Vec<_>>()).unwrap();
        assert_eq!(lut.len(), 8);
        assert!(lut
            .entries()
            .iter()
            .all(|&(_, t)| (-FRAC_PI_2..FRAC_PI_2).contains(&t)));
        assert_eq!(build_lut(&cfg, &[5]).unwrap().len(), 1);
        assert_eq!(build_lut(&cfg, &[]), Err(Error::EmptyPilotSet));
    }

    proptest! {
        #[test]
        fn steering_is_unit_modulus_and_conjugate_symmetric(
            theta in -FRAC_PI_2..FRAC_PI_2, f in 27.8e9..28.2e9f64, n in 1usize..64
        ) {
            let a = rx_steering(theta, f, n, 28e9);
            let b = rx_steering(-theta, f, n, 28e9);
            prop_assert!((a.entries[0] - 1.0).norm() < 1e-15);
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert!((x.norm() - 1.0).abs() < 1e-12);
                prop_assert!((x - y.conj()).norm() < 1e-12);
            }
        }

        #[test]
        fn gain_is_two_periodic_and_bounded(p in -10.0..10.0f64, n in 1usize..128) {
            let g = dirichlet_gain(p, n);
            prop_assert!(g >= 0.0 && g <= n as f64 * (1.0 + 1e-12));
            prop_assert!((g - dirichlet_gain(p + 2.0, n)).abs() <= 1e-9 * n as f64);
        }
    }
}
