//! Geometric multipath channel between a transmit ULA and a receive ULA.
//!
//! Each path carries a complex gain, a delay between the first transmit
//! and first receive element, and a departure/arrival angle. Per-subcarrier
//! channel matrices combine the pulse-shaped delay response with
//! frequency-dependent array responses and the `sqrt(ntx nrx / L)`
//! normalization.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arraylab::{cis_turns, product_turns, rx_steering, tx_steering};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One multipath component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: Complex64,
    /// Delay from first transmit to first receive element, s.
    pub delay_s: f64,
    /// Angle of departure, rad.
    pub aod_rad: f64,
    /// Angle of arrival, rad.
    pub aoa_rad: f64,
}

impl PathComponent {
    pub fn new(gain: Complex64, delay_s: f64, aod_rad: f64, aoa_rad: f64) -> Self {
        PathComponent {
            gain,
            delay_s,
            aod_rad,
            aoa_rad,
        }
    }

    /// Gain including the carrier phase rotation, `g exp(-j 2 pi fc tau)`.
    pub fn carrier_gain(&self, fc: f64) -> Complex64 {
        self.gain * cis_turns(-product_turns(fc, self.delay_s))
    }

    fn check(&self) -> Result<()> {
        let angle_ok = |a: f64| a.is_finite() && (-FRAC_PI_2..=FRAC_PI_2).contains(&a);
        if !(self.delay_s.is_finite() && self.delay_s >= 0.0) {
            return Err(Error::InvalidSpec(format!("bad delay {}", self.delay_s)));
        }
        if !angle_ok(self.aod_rad) || !angle_ok(self.aoa_rad) {
            return Err(Error::InvalidSpec(
                "angles must lie in [-pi/2, pi/2]".into(),
            ));
        }
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(Error::InvalidSpec("non-finite gain".into()));
        }
        Ok(())
    }
}

/// A set of paths. The normalization `rho` is always recomputed from the
/// array sizes and path count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultipathChannel {
    paths: Vec<PathComponent>,
}

impl MultipathChannel {
    pub fn new(paths: Vec<PathComponent>) -> Self {
        MultipathChannel { paths }
    }

    /// Single unit-gain path.
    pub fn line_of_sight(delay_s: f64, aod_rad: f64, aoa_rad: f64) -> Self {
        Self::new(vec![PathComponent::new(
            Complex64::new(1.0, 0.0),
            delay_s,
            aod_rad,
            aoa_rad,
        )])
    }

    pub fn paths(&self) -> &[PathComponent] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// `sqrt(ntx nrx / L)`; zero for an empty channel.
    pub fn rho(&self, ntx: usize, nrx: usize) -> f64 {
        if self.paths.is_empty() {
            0.0
        } else {
            ((ntx * nrx) as f64 / self.paths.len() as f64).sqrt()
        }
    }

    /// Copy with every path gain multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self::new(
            self.paths
                .iter()
                .map(|p| PathComponent {
                    gain: p.gain * c,
                    ..*p
                })
                .collect(),
        )
    }

    pub fn max_delay(&self) -> f64 {
        self.paths.iter().map(|p| p.delay_s).fold(0.0, f64::max)
    }
}

/// Propagation delay from transmit element `q` to receive element `n`
/// (zero-based) along `path`, with half-wavelength spacing at `fc`.
pub fn path_delay(path: &PathComponent, q: usize, n: usize, fc: f64) -> f64 {
    let half_wave = 1.0 / (2.0 * fc);
    path.delay_s - q as f64 * half_wave * path.aod_rad.sin()
        + n as f64 * half_wave * path.aoa_rad.sin()
}

/// Shape of the hardware response filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseKind {
    /// `sinc(t / ts)`, truncated to `|t| <= span ts / 2`.
    IdealSinc,
    /// Raised-cosine impulse response, truncated like `IdealSinc`.
    RaisedCosine { rolloff: f64 },
    /// Band-limited interpolator of one `period`-sample OFDM symbol: the
    /// sinc aliased onto the symbol period with the passband matching the
    /// subcarrier layout `[-bw/2, bw/2)`. Complex-valued, not time-limited.
    PeriodicSinc { period: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub kind: PulseKind,
    /// Truncation span in samples (ignored by `PeriodicSinc`).
    pub span: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape::ideal_sinc(32)
    }
}

/// Offsets this close to an integer are evaluated at the integer, so that
/// sinc zeros are exact.
const SNAP: f64 = 1e-12;

impl PulseShape {
    pub fn ideal_sinc(span: usize) -> Self {
        PulseShape {
            kind: PulseKind::IdealSinc,
            span,
        }
    }

    pub fn raised_cosine(rolloff: f64, span: usize) -> Self {
        PulseShape {
            kind: PulseKind::RaisedCosine { rolloff },
            span,
        }
    }

    pub fn periodic_sinc(period: usize) -> Self {
        PulseShape {
            kind: PulseKind::PeriodicSinc { period },
            span: period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PulseKind::PeriodicSinc { period } if period == 0 || period % 2 != 0 => Err(
                Error::InvalidSpec("periodic sinc needs an even positive period".into()),
            ),
            PulseKind::PeriodicSinc { .. } => Ok(()),
            PulseKind::RaisedCosine { rolloff } if !(0.0..=1.0).contains(&rolloff) => Err(
                Error::InvalidSpec(format!("rolloff {rolloff} outside [0, 1]")),
            ),
            _ if self.span < 2 || !self.span.is_multiple_of(2) => Err(Error::InvalidSpec(format!(
                "span {} must be even and at least 2",
                self.span
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_time_limited(&self) -> bool {
        !matches!(self.kind, PulseKind::PeriodicSinc { .. })
    }

    /// Support half-width in samples, `None` for the periodic kernel.
    pub fn half_span(&self) -> Option<f64> {
        self.is_time_limited().then(|| self.span as f64 / 2.0)
    }

    /// Pulse value at time `t` for sample duration `ts`.
    pub fn value(&self, t: f64, ts: f64) -> Complex64 {
        let u = t / ts;
        match self.kind {
            PulseKind::IdealSinc => Complex64::new(self.truncate(u, sinc), 0.0),
            PulseKind::RaisedCosine { rolloff } => {
                Complex64::new(self.truncate(u, |u| raised_cosine(u, rolloff)), 0.0)
            }
            PulseKind::PeriodicSinc { period } => periodic_sinc(u, period),
        }
    }

    fn truncate(&self, u: f64, f: impl Fn(f64) -> f64) -> f64 {
        if u.abs() > self.span as f64 / 2.0 {
            0.0
        } else {
            f(u)
        }
    }
}

/// Convenience wrapper returning the real part, which is the whole value
/// for the time-limited shapes.
pub fn pulse_value(p: &PulseShape, t: f64, ts: f64) -> f64 {
    p.value(t, ts).re
}

fn sinc(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        return if r == 0.0 { 1.0 } else { 0.0 };
    }
    (PI * u).sin() / (PI * u)
}

fn raised_cosine(u: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return sinc(u);
    }
    let edge = 1.0 / (2.0 * beta);
    if (u.abs() - edge).abs() < 1e-9 {
        return PI / 4.0 * sinc(edge);
    }
    let d = 2.0 * beta * u;
    sinc(u) * (PI * beta * u).cos() / (1.0 - d * d)
}

fn periodic_sinc(u: f64, period: usize) -> Complex64 {
    let m = period as f64;
    let ur = u - m * (u / m).round();
    let r = ur.round();
    if (ur - r).abs() < SNAP {
        return if r == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let mag = (PI * ur).sin() / (m * (PI * ur / m).sin());
    Complex64::from_polar(1.0, -PI * ur / m) * mag
}

/// `sum_{i=0}^{mtot-1} exp(-j 2 pi i m / mtot) p(i ts - tau)`: the
/// sampled delay response of one path at subcarrier `m`.
pub fn delay_kernel(cfg: &ValidatedConfig, pulse: &PulseShape, tau: f64, m: usize) -> Complex64 {
    let mtot = cfg.mtot();
    let ts = cfg.ts();
    let (lo, hi) = match pulse.half_span() {
        Some(h) => {
            let c = tau / ts;
            let lo = (c - h).ceil().max(0.0) as usize;
            let hi = ((c + h).floor() as i64).clamp(-1, mtot as i64 - 1);
            (lo, (hi + 1) as usize)
        }
        None => (0, mtot),
    };
    (lo..hi.max(lo))
        .map(|i| {
            let k = (i * m) % mtot;
            cis_turns(-(k as f64) / mtot as f64) * pulse.value(i as f64 * ts - tau, ts)
        })
        .sum()
}

pub(crate) fn check_freq_inputs(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
) -> Result<()> {
    pulse.validate()?;
    if let PulseKind::PeriodicSinc { period } = pulse.kind {
        if period != cfg.mtot() {
            return Err(Error::InvalidSpec(format!(
                "periodic pulse period {period} differs from mtot {}",
                cfg.mtot()
            )));
        }
    }
    let budget = cfg.ncp() as f64 * cfg.ts();
    if let Some(p) = ch.paths().iter().find(|p| p.delay_s >= budget) {
        return Err(Error::CpViolation(format!(
            "path delay {} s reaches the cyclic prefix {} s",
            p.delay_s, budget
        )));
    }
    Ok(())
}

/// Channel matrix `H[m]` (nrx x ntx) at subcarrier `m`.
pub fn freq_channel(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    m: usize,
) -> Result<Array2<Complex64>> {
    check_freq_inputs(cfg, ch, pulse)?;
    let f = cfg.subcarrier_frequency(m)?;
    let rho = ch.rho(cfg.ntx(), cfg.nrx());
    let mut h = Array2::zeros((cfg.nrx(), cfg.ntx()));
    for p in ch.paths() {
        let coef = rho * p.carrier_gain(cfg.fc()) * delay_kernel(cfg, pulse, p.delay_s, m);
        let ar = rx_steering(p.aoa_rad, f, cfg.nrx(), cfg.fc());
        let at = tx_steering(p.aod_rad, f, cfg.ntx(), cfg.fc());
        for (n, a) in ar.entries.iter().enumerate() {
            for (q, b) in at.entries.iter().enumerate() {
                h[[n, q]] += coef * a * b.conj();
            }
        }
    }
    Ok(h)
}

/// `H[m] v` without forming the matrix.
pub fn beamformed_channel(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    m: usize,
) -> Result<Vec<Complex64>> {
    check_freq_inputs(cfg, ch, pulse)?;
    beamformed_channel_unchecked(cfg, ch, pulse, v, m)
}

pub(crate) fn beamformed_channel_unchecked(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    m: usize,
) -> Result<Vec<Complex64>> {
    if v.len() != cfg.ntx() {
        return Err(Error::InvalidConfig(format!(
            "beamformer length {} differs from ntx {}",
            v.len(),
            cfg.ntx()
        )));
    }
    let f = cfg.subcarrier_frequency(m)?;
    let rho = ch.rho(cfg.ntx(), cfg.nrx());
    let mut out = vec![Complex64::new(0.0, 0.0); cfg.nrx()];
    for p in ch.paths() {
        let at = tx_steering(p.aod_rad, f, cfg.ntx(), cfg.fc());
        let atv: Complex64 = at.entries.iter().zip(v).map(|(a, v)| a.conj() * v).sum();
        let coef = rho * p.carrier_gain(cfg.fc()) * delay_kernel(cfg, pulse, p.delay_s, m) * atv;
        let ar = rx_steering(p.aoa_rad, f, cfg.nrx(), cfg.fc());
        for (o, a) in out.iter_mut().zip(&ar.entries) {
            *o += coef * a;
        }
    }
    Ok(out)
}

/// Transmit beamformer matched to the departure angle of path `l` at the
/// carrier: `a_tx(aod, fc)`, so that `a_tx^H(aod, fc) v = ntx`.
pub fn aligned_tx_beamformer(
    ch: &MultipathChannel,
    cfg: &ValidatedConfig,
    l: usize,
) -> Result<Vec<Complex64>> {
    let p = ch.paths().get(l).ok_or(Error::IndexOutOfRange {
        index: l,
        limit: ch.len(),
    })?;
    Ok(tx_steering(p.aod_rad, cfg.fc(), cfg.ntx(), cfg.fc()).entries)
}

/// Angle distribution for synthetic paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleDistribution {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl AngleDistribution {
    pub fn full_range() -> Self {
        AngleDistribution::Uniform {
            lo: -FRAC_PI_2,
            hi: FRAC_PI_2,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            AngleDistribution::Fixed(a) => a,
            AngleDistribution::Uniform { lo, hi } if lo == hi => lo,
            AngleDistribution::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = |a: f64| (-FRAC_PI_2..=FRAC_PI_2).contains(&a);
        match *self {
            AngleDistribution::Fixed(a) if ok(a) => Ok(()),
            AngleDistribution::Uniform { lo, hi } if ok(lo) && ok(hi) && lo <= hi => Ok(()),
            _ => Err(Error::InvalidSpec(format!(
                "bad angle distribution {self:?}"
            ))),
        }
    }
}

/// Average path power versus delay before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainProfile {
    Equal,
    /// Power proportional to `exp(-delay / decay_s)`.
    ExponentialDelay {
        decay_s: f64,
    },
}

/// Recipe for [`generate_paths`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub num_paths: usize,
    pub delay_range_s: (f64, f64),
    pub aoa: AngleDistribution,
    pub aod: AngleDistribution,
    pub gain_profile: GainProfile,
}

impl PathSpec {
    /// Single path at zero delay with uniformly drawn angles.
    pub fn line_of_sight() -> Self {
        PathSpec {
            num_paths: 1,
            delay_range_s: (0.0, 0.0),
            aoa: AngleDistribution::full_range(),
            aod: AngleDistribution::full_range(),
            gain_profile: GainProfile::Equal,
        }
    }
}

/// Draws a synthetic channel. Gains are circularly-symmetric Gaussian with
/// the profile's average power, then scaled so that `sum |g|^2 = 1`.
pub fn generate_paths(rng: &mut impl Rng, spec: &PathSpec) -> Result<MultipathChannel> {
    if spec.num_paths == 0 {
        return Err(Error::InvalidSpec("at least one path is required".into()));
    }
    let (lo, hi) = spec.delay_range_s;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
        return Err(Error::InvalidSpec(format!("bad delay range [{lo}, {hi}]")));
    }
    spec.aoa.check()?;
    spec.aod.check()?;
    if let GainProfile::ExponentialDelay { decay_s } = spec.gain_profile {
        if decay_s.is_nan() || decay_s <= 0.0 {
            return Err(Error::InvalidSpec("decay must be positive".into()));
        }
    }
    let mut paths = Vec::with_capacity(spec.num_paths);
    for _ in 0..spec.num_paths {
        let delay = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let aoa = spec.aoa.sample(rng);
        let aod = spec.aod.sample(rng);
        let power = match spec.gain_profile {
            GainProfile::Equal => 1.0,
            GainProfile::ExponentialDelay { decay_s } => (-delay / decay_s).exp(),
        };
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let g = Complex64::new(re, im) * (power / 2.0).sqrt();
        paths.push(PathComponent::new(g, delay, aod, aoa));
    }
    let total: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidSpec("degenerate gain draw".into()));
    }
    let scale = total.sqrt().recip();
    for p in &mut paths {
        p.gain *= scale;
    }
    Ok(MultipathChannel::new(paths))
}

pub fn generate_paths_seeded(seed: u64, spec: &PathSpec) -> Result<MultipathChannel> {
    generate_paths(&mut ChaCha8Rng::seed_from_u64(seed), spec)
}

const CHANNEL_FIELDS: [&str; 5] = ["gain_re", "gain_im", "delay_s", "aod_rad", "aoa_rad"];

/// Parses the channel text format: one comma-separated record per path
/// with fields `gain_re, gain_im, delay_s, aod_rad, aoa_rad`. Blank lines
/// and lines starting with `#` are skipped; an optional header row naming
/// the fields is accepted.
pub fn parse_channel(text: &str) -> Result<MultipathChannel> {
    let mut paths = Vec::new();
    let mut record = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if paths.is_empty() && record == 0 && cols == CHANNEL_FIELDS {
            continue;
        }
        record += 1;
        if cols.len() != CHANNEL_FIELDS.len() {
            return Err(Error::Parse {
                record,
                field: "record".into(),
                message: format!("expected 5 fields, found {}", cols.len()),
            });
        }
        let mut vals = [0.0; 5];
        for (i, (c, name)) in cols.iter().zip(CHANNEL_FIELDS).enumerate() {
            vals[i] = c.parse::<f64>().map_err(|e| Error::Parse {
                record,
                field: name.into(),
                message: format!("`{c}`: {e}"),
            })?;
        }
        let p = PathComponent::new(Complex64::new(vals[0], vals[1]), vals[2], vals[3], vals[4]);
        p.check().map_err(|e| Error::Parse {
            record,
            field: "record".into(),
            message: e.to_string(),
        })?;
        paths.push(p);
    }
    if paths.is_empty() {
        return Err(Error::EmptyChannel);
    }
    Ok(MultipathChannel::new(paths))
}

pub fn load_channel(path: impl AsRef<Path>) -> Result<MultipathChannel> {
    parse_channel(&std::fs::read_to_string(path)?)
}

/// Renders a channel in the format read by [`parse_channel`], with 17
/// significant digits so values round-trip exactly.
pub fn format_channel(ch: &MultipathChannel) -> String {
    let mut s = CHANNEL_FIELDS.join(",");
    s.push('\n');
    for p in ch.paths() {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.gain.re, p.gain.im, p.delay_s, p.aod_rad, p.aoa_rad
        );
    }
    s
}

pub fn save_channel(ch: &MultipathChannel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_channel(ch))?;
    Ok(())
}
