//! Monte Carlo experiments and CSV output.
//!
//! Every trial draws its randomness from [`split_seed`] applied to the
//! master seed, the SNR index and the trial index, so results do not depend
//! on how trials are scheduled across threads.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::arraylab::{
    gain_at_frequency, in_design_subset, min_max_gain, theta_grid, DesignContext, DesignPoint,
};
use crate::channel::{
    aligned_tx_beamformer, generate_paths, AngleDistribution, GainProfile, MultipathChannel,
    PathComponent, PathSpec, PulseShape,
};
use crate::config::{SystemConfig, ValidatedConfig};
use crate::error::{Error, Result};
use crate::oracle::verify_model_equivalence;
use crate::phy::{complex_gaussian, make_pilots, select_pilot_subcarriers};
use crate::training::{
    n0_for_snr, paa_dft_training, phased_array_combiner, post_training_gain, signal_power,
    sounding_layout, spectral_efficiency, ttd_training, BlockMode,
};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from `(master, a, b)` with two rounds of
/// the SplitMix64 finalizer.
pub fn split_seed(master: u64, a: u64, b: u64) -> u64 {
    let h = mix64(master.wrapping_add(GOLDEN.wrapping_mul(a.wrapping_add(1))));
    mix64(h.wrapping_add(GOLDEN.wrapping_mul(b.wrapping_add(1))) ^ 0xd6e8_feb8_6659_fd93)
}

/// Pulse selection, resolved against the symbol size when needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseChoice {
    IdealSinc { span: usize },
    RaisedCosine { rolloff: f64, span: usize },
    PeriodicSinc,
}

impl PulseChoice {
    pub fn resolve(&self, mtot: usize) -> PulseShape {
        match *self {
            PulseChoice::IdealSinc { span } => PulseShape::ideal_sinc(span),
            PulseChoice::RaisedCosine { rolloff, span } => PulseShape::raised_cosine(rolloff, span),
            PulseChoice::PeriodicSinc => PulseShape::periodic_sinc(mtot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Beampattern,
    DesignScan,
    LosSweep,
    Benchmark,
    Verify,
    Train,
}

/// Everything an experiment needs besides the system configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Sounding beam counts for the LoS sweep; the first one is used by the
    /// benchmark and single-trial training.
    pub pilot_counts: Vec<usize>,
    /// DFT sweep sizes of the phased-array benchmark.
    pub paa_symbols: Vec<usize>,
    pub num_paths: usize,
    pub max_delay_s: f64,
    pub block_mode: BlockMode,
    pub pulse: PulseChoice,
    pub grid_size: usize,
    pub epsilon: f64,
    /// Tap spacings for the design scan; `None` means quarter steps from
    /// `1/bw` to `4/bw`.
    pub delta_tau_grid: Option<Vec<f64>>,
    pub subcarrier_grid: Vec<usize>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            snr_db: vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            trials: 500,
            seed: 0,
            pilot_counts: vec![8, 16, 32, 64],
            paa_symbols: vec![4, 8, 16, 32],
            num_paths: 1,
            max_delay_s: 100e-9,
            block_mode: BlockMode::ResourceBlock,
            pulse: match kind {
                ExperimentKind::Verify => PulseChoice::PeriodicSinc,
                _ => PulseChoice::IdealSinc { span: 32 },
            },
            grid_size: 4096,
            epsilon: 0.6,
            delta_tau_grid: None,
            subcarrier_grid: (2..=32).map(|m| 2 * m).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidConfig(s.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("SNR grid must be finite");
        }
        if self.pilot_counts.is_empty() || self.pilot_counts.contains(&0) {
            return bad("pilot counts must be positive");
        }
        if self.paa_symbols.contains(&0) {
            return bad("DFT sweep sizes must be positive");
        }
        if self.num_paths == 0 {
            return bad("at least one path is required");
        }
        if !(self.max_delay_s >= 0.0 && self.max_delay_s.is_finite()) {
            return bad("max_delay_s must be finite and non-negative");
        }
        if self.grid_size < 2 {
            return bad("grid_size must be at least 2");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        self.pulse.resolve(64).validate()
    }

    /// Reads the optional `[experiment]` table of a configuration file.
    pub fn from_toml(kind: ExperimentKind, text: &str) -> Result<Self> {
        let parse_err = |e: &dyn std::fmt::Display| Error::Parse {
            record: 0,
            field: "experiment".into(),
            message: e.to_string(),
        };
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(&e))?;
        let mut spec = ExperimentSpec::new(kind);
        let Some(section) = table.remove("experiment") else {
            return Ok(spec);
        };
        let f: ExperimentFile = section.try_into().map_err(|e| parse_err(&e))?;
        if let Some(v) = f.snr_db {
            spec.snr_db = v;
        }
        if let Some(v) = f.trials {
            spec.trials = v;
        }
        if let Some(v) = f.seed {
            spec.seed = v;
        }
        if let Some(v) = f.pilot_counts {
            spec.pilot_counts = v;
        }
        if let Some(v) = f.paa_symbols {
            spec.paa_symbols = v;
        }
        if let Some(v) = f.num_paths {
            spec.num_paths = v;
        }
        if let Some(v) = f.max_delay_s {
            spec.max_delay_s = v;
        }
        if let Some(v) = f.resource_blocks {
            spec.block_mode = if v {
                BlockMode::ResourceBlock
            } else {
                BlockMode::Single
            };
        }
        let span = f.pulse_span.unwrap_or(32);
        match f.pulse.as_deref() {
            None => {}
            Some("ideal-sinc") => spec.pulse = PulseChoice::IdealSinc { span },
            Some("raised-cosine") => {
                spec.pulse = PulseChoice::RaisedCosine {
                    rolloff: f.rolloff.unwrap_or(0.25),
                    span,
                }
            }
            Some("periodic-sinc") => spec.pulse = PulseChoice::PeriodicSinc,
            Some(other) => {
                return Err(Error::InvalidConfig(format!("unknown pulse `{other}`")));
            }
        }
        if let Some(v) = f.grid_size {
            spec.grid_size = v;
        }
        if let Some(v) = f.epsilon {
            spec.epsilon = v;
        }
        if f.delta_tau_grid.is_some() {
            spec.delta_tau_grid = f.delta_tau_grid;
        }
        if let Some(v) = f.subcarrier_grid {
            spec.subcarrier_grid = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    snr_db: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    pilot_counts: Option<Vec<usize>>,
    paa_symbols: Option<Vec<usize>>,
    num_paths: Option<usize>,
    max_delay_s: Option<f64>,
    resource_blocks: Option<bool>,
    pulse: Option<String>,
    pulse_span: Option<usize>,
    rolloff: Option<f64>,
    grid_size: Option<usize>,
    epsilon: Option<f64>,
    delta_tau_grid: Option<Vec<f64>>,
    subcarrier_grid: Option<Vec<usize>>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A row type with a fixed CSV schema.
pub trait CsvRecord {
    fn header() -> Vec<&'static str>;
    fn fields(&self) -> Vec<String>;
}

/// Header plus rows, ready to write.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn from_records<R: CsvRecord>(rows: &[R]) -> Self {
        CsvTable {
            header: R::header().into_iter().map(String::from).collect(),
            rows: rows.iter().map(CsvRecord::fields).collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn snr_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn uniform_los(rng: &mut ChaCha8Rng) -> Result<MultipathChannel> {
    generate_paths(rng, &PathSpec::line_of_sight())
}

/// Copy of `cfg` whose noise level puts the band SNR at `snr_db`.
fn calibrated(
    cfg: &ValidatedConfig,
    ch: &MultipathChannel,
    pulse: &PulseShape,
    v: &[Complex64],
    snr_db: f64,
) -> Result<(ValidatedConfig, f64)> {
    let s = signal_power(cfg, ch, pulse, v)?;
    let c = cfg.with_n0(n0_for_snr(cfg, s, snr_linear(snr_db)))?;
    let achieved = s / (c.mtot() as f64 * c.noise_variance());
    Ok((c, 10.0 * achieved.log10()))
}

fn strongest_path(ch: &MultipathChannel) -> usize {
    let p = ch.paths();
    (0..p.len()).fold(0, |b, i| {
        if p[i].gain.norm_sqr() > p[b].gain.norm_sqr() {
            i
        } else {
            b
        }
    })
}

/// One trial of the LoS sweep for one pilot count.
#[derive(Debug, Clone, PartialEq)]
pub struct LosRow {
    pub snr_db: f64,
    pub snr_db_achieved: f64,
    pub trial: usize,
    pub pilots: usize,
    pub aoa_true: f64,
    pub aoa_estimate: f64,
    pub post_gain: f64,
}

impl CsvRecord for LosRow {
    fn header() -> Vec<&'static str> {
        vec![
            "snr_db",
            "snr_db_achieved",
            "trial",
            "pilots",
            "aoa_true_rad",
            "aoa_estimate_rad",
            "post_gain",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_f64(self.snr_db),
            fmt_f64(self.snr_db_achieved),
            self.trial.to_string(),
            self.pilots.to_string(),
            fmt_f64(self.aoa_true),
            fmt_f64(self.aoa_estimate),
            fmt_f64(self.post_gain),
        ]
    }
}

fn trial_grid(spec: &ExperimentSpec) -> Vec<(usize, usize)> {
    (0..spec.snr_db.len())
        .flat_map(|i| (0..spec.trials).map(move |t| (i, t)))
        .collect()
}

/// Single-path channels with uniformly drawn angles, one-shot TTD training
/// for each pilot count. Rows are ordered by SNR, trial, then pilot count.
pub fn run_los_sweep(cfg: &ValidatedConfig, spec: &ExperimentSpec) -> Result<Vec<LosRow>> {
    spec.validate()?;
    let pulse = spec.pulse.resolve(cfg.mtot());
    let pilot_sets = spec
        .pilot_counts
        .iter()
        .map(|&p| select_pilot_subcarriers(cfg.mtot(), p))
        .collect::<Result<Vec<_>>>()?;
    let rows = trial_grid(spec)
        .into_par_iter()
        .map(|(i, t)| -> Result<Vec<LosRow>> {
            let seed = split_seed(spec.seed, i as u64, t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1, 0));
            let ch = uniform_los(&mut rng)?;
            let v = aligned_tx_beamformer(&ch, cfg, 0)?;
            let (c, achieved) = calibrated(cfg, &ch, &pulse, &v, spec.snr_db[i])?;
            let truth = ch.paths()[0].aoa_rad;
            pilot_sets
                .iter()
                .enumerate()
                .map(|(j, set)| {
                    let noise = split_seed(seed, 2, j as u64);
                    let r = ttd_training(&c, &ch, &pulse, &v, set, spec.block_mode, Some(noise))?;
                    Ok(LosRow {
                        snr_db: spec.snr_db[i],
                        snr_db_achieved: achieved,
                        trial: t,
                        pilots: set.len(),
                        aoa_true: truth,
                        aoa_estimate: r.aoa_estimate,
                        post_gain: post_training_gain(r.aoa_estimate, truth, c.nrx(), c.fc()),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// One method in one benchmark trial.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub snr_db: f64,
    pub trial: usize,
    /// `ttd` or `paa_k<K>`.
    pub method: String,
    pub symbols_used: usize,
    pub aoa_true: f64,
    pub aoa_estimate: f64,
    pub post_gain: f64,
    pub se_bps_hz: f64,
}

impl CsvRecord for BenchmarkRow {
    fn header() -> Vec<&'static str> {
        vec![
            "snr_db",
            "trial",
            "method",
            "symbols_used",
            "aoa_true_rad",
            "aoa_estimate_rad",
            "post_gain",
            "se_bps_hz",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_f64(self.snr_db),
            self.trial.to_string(),
            self.method.clone(),
            self.symbols_used.to_string(),
            fmt_f64(self.aoa_true),
            fmt_f64(self.aoa_estimate),
            fmt_f64(self.post_gain),
            fmt_f64(self.se_bps_hz),
        ]
    }
}

/// Synthetic channel recipe used by the benchmark.
pub fn benchmark_path_spec(spec: &ExperimentSpec) -> PathSpec {
    PathSpec {
        num_paths: spec.num_paths,
        delay_range_s: if spec.num_paths == 1 {
            (0.0, 0.0)
        } else {
            (0.0, spec.max_delay_s)
        },
        aoa: AngleDistribution::full_range(),
        aod: AngleDistribution::full_range(),
        gain_profile: if spec.num_paths == 1 {
            GainProfile::Equal
        } else {
            GainProfile::ExponentialDelay {
                decay_s: (spec.max_delay_s / 3.0).max(1e-12),
            }
        },
    }
}

/// TTD one-shot training against phased-array DFT sweeps on the same
/// pilots. `fixed` replaces the synthetic channel draw in every trial.
pub fn run_benchmark(
    cfg: &ValidatedConfig,
    spec: &ExperimentSpec,
    fixed: Option<&MultipathChannel>,
) -> Result<Vec<BenchmarkRow>> {
    spec.validate()?;
    let pulse = spec.pulse.resolve(cfg.mtot());
    let pilots = select_pilot_subcarriers(cfg.mtot(), spec.pilot_counts[0])?;
    let (x, _) = sounding_layout(cfg, &pilots, spec.block_mode)?;
    let path_spec = benchmark_path_spec(spec);
    let rows = trial_grid(spec)
        .into_par_iter()
        .map(|(i, t)| -> Result<Vec<BenchmarkRow>> {
            let seed = split_seed(spec.seed, i as u64, t as u64);
            let ch = match fixed {
                Some(ch) => ch.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1, 0));
                    generate_paths(&mut rng, &path_spec)?
                }
            };
            let l = strongest_path(&ch);
            let truth = ch.paths()[l].aoa_rad;
            let v = aligned_tx_beamformer(&ch, cfg, l)?;
            let (c, _) = calibrated(cfg, &ch, &pulse, &v, spec.snr_db[i])?;
            let row = |method: String, symbols: usize, est: f64| -> Result<BenchmarkRow> {
                let w = phased_array_combiner(est, &c);
                Ok(BenchmarkRow {
                    snr_db: spec.snr_db[i],
                    trial: t,
                    method,
                    symbols_used: symbols,
                    aoa_true: truth,
                    aoa_estimate: est,
                    post_gain: post_training_gain(est, truth, c.nrx(), c.fc()),
                    se_bps_hz: spectral_efficiency(&c, &ch, &pulse, &v, |_| Ok(w.clone()))?,
                })
            };
            let mut out = Vec::with_capacity(1 + spec.paa_symbols.len());
            let r = ttd_training(
                &c,
                &ch,
                &pulse,
                &v,
                &pilots,
                spec.block_mode,
                Some(split_seed(seed, 2, 0)),
            )?;
            out.push(row("ttd".into(), r.symbols_used, r.aoa_estimate)?);
            for (j, &k) in spec.paa_symbols.iter().enumerate() {
                let r = paa_dft_training(
                    &c,
                    &ch,
                    &pulse,
                    &v,
                    &x,
                    k,
                    Some(split_seed(seed, 3, j as u64)),
                )?;
                out.push(row(format!("paa_k{k}"), r.symbols_used, r.aoa_estimate)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// One design point of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub delta_tau: f64,
    pub mtot: usize,
    pub in_ss_strict: bool,
    pub in_ss_relaxed: bool,
    pub min_max_gain: f64,
    pub pass: bool,
}

impl CsvRecord for DesignRow {
    fn header() -> Vec<&'static str> {
        vec![
            "delta_tau_s",
            "mtot",
            "in_ss_strict",
            "in_ss_relaxed",
            "min_max_gain",
            "pass",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_f64(self.delta_tau),
            self.mtot.to_string(),
            self.in_ss_strict.to_string(),
            self.in_ss_relaxed.to_string(),
            fmt_f64(self.min_max_gain),
            self.pass.to_string(),
        ]
    }
}

/// Absolute slack on the gain floor in the design scan.
pub const DESIGN_TOL: f64 = 1e-9;

/// Brute-force `min_theta max_m G` over a `(delta_tau, mtot)` grid, every
/// subcarrier used as a pilot, against the `(1 - eps) nrx` floor.
pub fn run_design_scan(cfg: &ValidatedConfig, spec: &ExperimentSpec) -> Result<Vec<DesignRow>> {
    spec.validate()?;
    let ctx = DesignContext {
        fc: cfg.fc(),
        bw: cfg.bw(),
        nrx: cfg.nrx(),
    };
    let taus = spec
        .delta_tau_grid
        .clone()
        .unwrap_or_else(|| (4..=16).map(|q| q as f64 / (4.0 * cfg.bw())).collect());
    let points: Vec<(f64, usize)> = taus
        .iter()
        .flat_map(|&d| spec.subcarrier_grid.iter().map(move |&m| (d, m)))
        .collect();
    let floor = (1.0 - spec.epsilon) * cfg.nrx() as f64;
    points
        .into_par_iter()
        .map(|(d, m)| {
            let c = SystemConfig::new(cfg.fc(), cfg.bw(), m, 1, cfg.nrx(), d).validate()?;
            let dp = DesignPoint::new(d, m, spec.epsilon)?;
            let g = min_max_gain(&c, &(0..m).collect::<Vec<_>>(), spec.grid_size)?;
            Ok(DesignRow {
                delta_tau: d,
                mtot: m,
                in_ss_strict: in_design_subset(&dp, &ctx, false),
                in_ss_relaxed: in_design_subset(&dp, &ctx, true),
                min_max_gain: g,
                pass: g >= floor - DESIGN_TOL,
            })
        })
        .collect()
}

/// Gain of every pilot of `cfg` on a uniform angle grid, plus the best
/// pilot per angle.
pub fn beampattern_table(cfg: &ValidatedConfig, grid_size: usize) -> Result<CsvTable> {
    let pilots = cfg.pilot_set();
    if pilots.is_empty() {
        return Err(Error::EmptyPilotSet);
    }
    let freqs = pilots
        .iter()
        .map(|&m| cfg.subcarrier_frequency(m))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["theta_rad".to_string()];
    header.extend(pilots.iter().map(|m| format!("gain_m{m}")));
    header.push("max_gain".into());
    let rows = theta_grid(grid_size)
        .into_iter()
        .map(|t| {
            let g: Vec<f64> = freqs
                .iter()
                .map(|&f| gain_at_frequency(cfg, t, f))
                .collect();
            let best = g.iter().copied().fold(0.0, f64::max);
            let mut row = vec![fmt_f64(t)];
            row.extend(g.into_iter().map(fmt_f64));
            row.push(fmt_f64(best));
            row
        })
        .collect();
    Ok(CsvTable { header, rows })
}

/// One randomized oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub trial: usize,
    pub mtot: usize,
    pub num_paths: usize,
    pub max_rel_error: f64,
}

impl CsvRecord for VerifyRow {
    fn header() -> Vec<&'static str> {
        vec!["trial", "mtot", "num_paths", "max_rel_error"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.mtot.to_string(),
            self.num_paths.to_string(),
            fmt_f64(self.max_rel_error),
        ]
    }
}

/// Random channel with 1 to `max_paths` paths, fractional delays and
/// angles chosen so that the cyclic-prefix condition holds with margin.
pub fn random_oracle_channel(
    cfg: &ValidatedConfig,
    rng: &mut impl Rng,
    max_paths: usize,
) -> Result<MultipathChannel> {
    let aperture = (cfg.ntx() + cfg.nrx()).saturating_sub(2) as f64 / (2.0 * cfg.fc());
    let budget = cfg.ncp() as f64 * cfg.ts() - cfg.ttd_delay(cfg.nrx() - 1) - aperture;
    if budget <= 0.0 {
        return Err(Error::InvalidConfig(
            "cyclic prefix too short for any channel".into(),
        ));
    }
    let l = rng.random_range(1..=max_paths.max(1));
    let max_angle = FRAC_PI_2 * 0.999;
    Ok(MultipathChannel::new(
        (0..l)
            .map(|_| {
                PathComponent::new(
                    complex_gaussian(rng, 1.0),
                    rng.random_range(0.0..0.9 * budget),
                    rng.random_range(-max_angle..max_angle),
                    rng.random_range(-max_angle..max_angle),
                )
            })
            .collect(),
    ))
}

/// Oracle check on one random channel with all subcarriers loaded.
pub fn verify_trial(
    cfg: &ValidatedConfig,
    pulse: &PulseShape,
    seed: u64,
    max_paths: usize,
) -> Result<VerifyRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = random_oracle_channel(cfg, &mut rng, max_paths)?;
    let v = aligned_tx_beamformer(&ch, cfg, 0)?;
    let x = make_pilots(cfg, &(0..cfg.mtot()).collect::<Vec<_>>())?;
    Ok(VerifyRow {
        trial: 0,
        mtot: cfg.mtot(),
        num_paths: ch.len(),
        max_rel_error: verify_model_equivalence(cfg, &ch, pulse, &v, &x)?,
    })
}

/// `spec.trials` oracle checks, up to `spec.num_paths` paths each.
pub fn run_verify(cfg: &ValidatedConfig, spec: &ExperimentSpec) -> Result<Vec<VerifyRow>> {
    spec.validate()?;
    let pulse = spec.pulse.resolve(cfg.mtot());
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let row = verify_trial(
                cfg,
                &pulse,
                split_seed(spec.seed, 0, t as u64),
                spec.num_paths,
            )?;
            Ok(VerifyRow { trial: t, ..row })
        })
        .collect()
}

/// Result of a single training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub snr_db: f64,
    pub pilots: usize,
    pub m_best: usize,
    pub aoa_true: f64,
    pub aoa_estimate: f64,
    pub post_gain: f64,
    pub symbols_used: usize,
}

impl CsvRecord for TrainRow {
    fn header() -> Vec<&'static str> {
        vec![
            "snr_db",
            "pilots",
            "m_best",
            "aoa_true_rad",
            "aoa_estimate_rad",
            "post_gain",
            "symbols_used",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_f64(self.snr_db),
            self.pilots.to_string(),
            self.m_best.to_string(),
            fmt_f64(self.aoa_true),
            fmt_f64(self.aoa_estimate),
            fmt_f64(self.post_gain),
            self.symbols_used.to_string(),
        ]
    }
}

/// One-shot training on one channel at the first SNR of the grid. Without
/// `fixed`, a single-path channel is drawn from the master seed.
pub fn run_train(
    cfg: &ValidatedConfig,
    spec: &ExperimentSpec,
    fixed: Option<&MultipathChannel>,
) -> Result<TrainRow> {
    spec.validate()?;
    let snr_db = *spec
        .snr_db
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty SNR grid".into()))?;
    let pulse = spec.pulse.resolve(cfg.mtot());
    let seed = split_seed(spec.seed, 0, 0);
    let ch = match fixed {
        Some(ch) => ch.clone(),
        None => uniform_los(&mut ChaCha8Rng::seed_from_u64(split_seed(seed, 1, 0)))?,
    };
    let l = strongest_path(&ch);
    let v = aligned_tx_beamformer(&ch, cfg, l)?;
    let (c, _) = calibrated(cfg, &ch, &pulse, &v, snr_db)?;
    let pilots = select_pilot_subcarriers(c.mtot(), spec.pilot_counts[0])?;
    let r = ttd_training(
        &c,
        &ch,
        &pulse,
        &v,
        &pilots,
        spec.block_mode,
        Some(split_seed(seed, 2, 0)),
    )?;
    let truth = ch.paths()[l].aoa_rad;
    Ok(TrainRow {
        snr_db,
        pilots: pilots.len(),
        m_best: r.m_best,
        aoa_true: truth,
        aoa_estimate: r.aoa_estimate,
        post_gain: post_training_gain(r.aoa_estimate, truth, c.nrx(), c.fc()),
        symbols_used: r.symbols_used,
    })
}

/// Median of a sample; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide_array(mtot: usize) -> ValidatedConfig {
        SystemConfig::new(28e9, 400e6, mtot, 8, 16, 2.5e-9)
            .validate()
            .unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..20 {
            for b in 0..50 {
                assert!(seen.insert(split_seed(7, a, b)));
            }
        }
        assert_eq!(split_seed(7, 3, 4), split_seed(7, 3, 4));
        assert_ne!(split_seed(7, 3, 4), split_seed(8, 3, 4));
        assert_ne!(split_seed(7, 3, 4), split_seed(7, 4, 3));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -2.5e-9, 1.0 / 3.0, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn spec_from_toml() {
        let text = "fc_hz = 28e9\n[experiment]\ntrials = 3\nsnr_db = [0.0]\npulse = \"raised-cosine\"\nresource_blocks = false\n";
        let s = ExperimentSpec::from_toml(ExperimentKind::LosSweep, text).unwrap();
        assert_eq!(s.trials, 3);
        assert_eq!(s.snr_db, vec![0.0]);
        assert_eq!(s.block_mode, BlockMode::Single);
        assert_eq!(
            s.pulse,
            PulseChoice::RaisedCosine {
                rolloff: 0.25,
                span: 32
            }
        );
        let s = ExperimentSpec::from_toml(ExperimentKind::Verify, "fc_hz = 1.0\n").unwrap();
        assert_eq!(s.pulse, PulseChoice::PeriodicSinc);
        assert!(
            ExperimentSpec::from_toml(ExperimentKind::LosSweep, "[experiment]\nbogus = 1\n")
                .is_err()
        );
        assert!(
            ExperimentSpec::from_toml(ExperimentKind::LosSweep, "[experiment]\ntrials = 0\n")
                .is_err()
        );
        assert!(ExperimentSpec::from_toml(
            ExperimentKind::LosSweep,
            "[experiment]\npulse = \"box\"\n"
        )
        .is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_calibrated() {
        let cfg = wide_array(256);
        let spec = ExperimentSpec {
            snr_db: vec![0.0, 10.0],
            trials: 6,
            seed: 42,
            pilot_counts: vec![8, 16],
            ..ExperimentSpec::new(ExperimentKind::LosSweep)
        };
        let a = run_los_sweep(&cfg, &spec).unwrap();
        let b = run_los_sweep(&cfg, &spec).unwrap();
        assert_eq!(a.len(), 2 * 6 * 2);
        let ta = CsvTable::from_records(&a).to_csv_string();
        assert_eq!(ta, CsvTable::from_records(&b).to_csv_string());
        for r in &a {
            assert!((r.snr_db_achieved - r.snr_db).abs() < 1e-9 * r.snr_db.abs().max(1.0));
            assert!((0.0..=1.0).contains(&r.post_gain));
        }
        let keys: Vec<(usize, usize)> = a.iter().map(|r| (r.trial, r.pilots)).collect();
        assert_eq!(&keys[..4], &[(0, 8), (0, 16), (1, 8), (1, 16)]);
        let c = run_los_sweep(&cfg, &ExperimentSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(ta, CsvTable::from_records(&c).to_csv_string());
    }

    #[test]
    fn benchmark_rows() {
        let cfg = wide_array(512);
        let spec = ExperimentSpec {
            snr_db: vec![10.0],
            trials: 3,
            pilot_counts: vec![32],
            paa_symbols: vec![4, 32],
            ..ExperimentSpec::new(ExperimentKind::Benchmark)
        };
        let rows = run_benchmark(&cfg, &spec, None).unwrap();
        assert_eq!(rows.len(), 9);
        for r in rows.iter().filter(|r| r.method == "ttd") {
            assert_eq!(r.symbols_used, 1);
        }
        assert!(rows
            .iter()
            .any(|r| r.method == "paa_k32" && r.symbols_used == 32));
        let fixed = MultipathChannel::line_of_sight(0.0, 0.2, 0.4);
        let rows = run_benchmark(&cfg, &spec, Some(&fixed)).unwrap();
        assert!(rows.iter().all(|r| r.aoa_true == 0.4));
    }

    #[test]
    fn design_scan_small_grid() {
        let cfg = SystemConfig::new(28e9, 400e6, 8, 1, 8, 2.5e-9)
            .validate()
            .unwrap();
        let spec = ExperimentSpec {
            grid_size: 1024,
            delta_tau_grid: Some(vec![2.5e-9, 5.0e-9]),
            subcarrier_grid: vec![6, 8, 12],
            ..ExperimentSpec::new(ExperimentKind::DesignScan)
        };
        let rows = run_design_scan(&cfg, &spec).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(!r.in_ss_relaxed || r.mtot >= 8);
            if r.mtot == 6 {
                assert!(!r.pass, "{r:?}");
            }
        }
        let t = CsvTable::from_records(&rows);
        assert_eq!(t.header[0], "delta_tau_s");
    }

    #[test]
    fn beampattern_shape() {
        let cfg = SystemConfig::new(28e9, 400e6, 8, 1, 8, 2.5e-9)
            .validate()
            .unwrap();
        let t = beampattern_table(&cfg, 33).unwrap();
        assert_eq!(t.header.len(), 10);
        assert_eq!(t.rows.len(), 33);
        assert!(t.rows.iter().all(|r| r.len() == 10));
    }

    #[test]
    fn verify_runs() {
        let cfg = SystemConfig::new(28e9, 400e6, 64, 2, 4, 2.5e-9)
            .validate()
            .unwrap();
        let spec = ExperimentSpec {
            trials: 4,
            num_paths: 3,
            ..ExperimentSpec::new(ExperimentKind::Verify)
        };
        let rows = run_verify(&cfg, &spec).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.max_rel_error < 1e-9));
    }

    #[test]
    fn train_once() {
        let cfg = wide_array(512);
        let spec = ExperimentSpec {
            snr_db: vec![30.0],
            pilot_counts: vec![32],
            ..ExperimentSpec::new(ExperimentKind::Train)
        };
        let r = run_train(&cfg, &spec, None).unwrap();
        assert_eq!(r.symbols_used, 1);
        assert!(r.post_gain > 0.5);
        assert_eq!(r, run_train(&cfg, &spec, None).unwrap());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
