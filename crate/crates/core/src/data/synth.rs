//! Synthetic modulated signals with channel impairments.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng, Stream};

use super::dataset::{Dataset, SignalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Psk8,
    Pam4,
    Qam16,
    Qam64,
    Gfsk,
    Cpfsk,
}

impl Modulation {
    pub const ALL: [Modulation; 8] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Psk8,
        Modulation::Pam4,
        Modulation::Qam16,
        Modulation::Qam64,
        Modulation::Gfsk,
        Modulation::Cpfsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Psk8 => "8PSK",
            Modulation::Pam4 => "PAM4",
            Modulation::Qam16 => "QAM16",
            Modulation::Qam64 => "QAM64",
            Modulation::Gfsk => "GFSK",
            Modulation::Cpfsk => "CPFSK",
        }
    }

    /// Unit-average-power constellation for the linear modulations.
    fn constellation(self) -> Option<Vec<Complex64>> {
        let c = Complex64::new;
        let points = match self {
            Modulation::Bpsk => vec![c(-1.0, 0.0), c(1.0, 0.0)],
            Modulation::Qpsk => (0..4)
                .map(|k| Complex64::from_polar(1.0, PI / 4.0 + k as f64 * PI / 2.0))
                .collect(),
            Modulation::Psk8 => (0..8)
                .map(|k| Complex64::from_polar(1.0, k as f64 * PI / 4.0))
                .collect(),
            Modulation::Pam4 => [-3.0, -1.0, 1.0, 3.0]
                .iter()
                .map(|&a| c(a / 5f64.sqrt(), 0.0))
                .collect(),
            Modulation::Qam16 => square_qam(4),
            Modulation::Qam64 => square_qam(8),
            Modulation::Gfsk | Modulation::Cpfsk => return None,
        };
        Some(points)
    }
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let levels: Vec<f64> = (0..side).map(|k| 2.0 * k as f64 - (side - 1) as f64).collect();
    let power = 2.0 * levels.iter().map(|l| l * l).sum::<f64>() / side as f64;
    let scale = power.sqrt();
    levels
        .iter()
        .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i / scale, q / scale)))
        .collect()
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let found = match upper.as_str() {
            "PSK8" => Some(Modulation::Psk8),
            other => Modulation::ALL.into_iter().find(|m| m.name() == other),
        };
        found.ok_or_else(|| Error::UnsupportedModulation(s.to_string()))
    }
}

/// Which impairments [`synthesize`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpairmentFlags {
    pub timing: bool,
    pub frequency: bool,
    pub phase: bool,
    pub noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// `+∞` means noiseless.
    pub snr_db: f64,
    pub phase_rotation: f64,
    /// Cycles per sample.
    pub freq_offset: f64,
    /// Fractional samples.
    pub timing_offset: f64,
    pub enabled: ImpairmentFlags,
}

impl ChannelSpec {
    pub fn noiseless() -> Self {
        ChannelSpec {
            snr_db: f64::INFINITY,
            phase_rotation: 0.0,
            freq_offset: 0.0,
            timing_offset: 0.0,
            enabled: ImpairmentFlags {
                timing: false,
                frequency: false,
                phase: false,
                noise: false,
            },
        }
    }

    /// Additive noise only.
    pub fn awgn(snr_db: f64) -> Self {
        let mut spec = Self::noiseless();
        spec.snr_db = snr_db;
        spec.enabled.noise = true;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db {} is not usable", self.snr_db)));
        }
        for (name, v) in [
            ("phase_rotation", self.phase_rotation),
            ("freq_offset", self.freq_offset),
            ("timing_offset", self.timing_offset),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    /// Root-raised-cosine truncation, total length in symbols.
    pub span_symbols: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape {
            rolloff: 0.35,
            samples_per_symbol: 8,
            span_symbols: 10,
        }
    }
}

impl PulseShape {
    fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::Config(format!("rolloff {} outside (0, 1]", self.rolloff)));
        }
        if self.samples_per_symbol == 0 || self.span_symbols == 0 {
            return Err(Error::Config("samples_per_symbol and span must be positive".into()));
        }
        Ok(())
    }
}

/// Modulation index shared by the two frequency-shift keyed schemes.
const FSK_INDEX: f64 = 0.5;
/// Bandwidth-time product of the GFSK Gaussian filter.
const GFSK_BT: f64 = 0.35;
/// Frequency pulses are treated as zero beyond this many symbols from centre.
const FSK_PULSE_HALF_SPAN: f64 = 3.0;

/// Root-raised-cosine impulse response at `t` symbol periods.
pub fn rrc(t: f64, beta: f64) -> f64 {
    if t == 0.0 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let x = 4.0 * beta * t;
    if (x.abs() - 1.0).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    ((PI * t * (1.0 - beta)).sin() + x * (PI * t * (1.0 + beta)).cos()) / (PI * t * (1.0 - x * x))
}

/// Integrated frequency pulse of one symbol, rising from 0 to 1 around
/// `v = 0` (symbol periods).
fn phase_pulse(v: f64, gaussian: bool) -> f64 {
    if !gaussian {
        return (v + 0.5).clamp(0.0, 1.0);
    }
    let c = PI * GFSK_BT * (2.0 / 2f64.ln()).sqrt();
    let antiderivative = |x: f64| x * libm::erf(x) + (-x * x).exp() / PI.sqrt();
    ((antiderivative(c * (v + 0.5)) - antiderivative(c * (v - 0.5)) + c) / (2.0 * c)).clamp(0.0, 1.0)
}

fn linear_baseband(
    constellation: &[Complex64],
    n: usize,
    tau: f64,
    shape: &PulseShape,
    rng: &mut Rng,
) -> Vec<Complex64> {
    let sps = shape.samples_per_symbol as f64;
    let half = shape.span_symbols as f64 / 2.0;
    let count = ((n as f64 + tau.abs() + 1.0) / sps).ceil() as usize + 2 * shape.span_symbols + 2;
    let symbols: Vec<Complex64> = (0..count)
        .map(|_| constellation[rng.below(constellation.len())])
        .collect();
    (0..n)
        .map(|j| {
            let u = (j as f64 + tau) / sps + half;
            let lo = (u - half).ceil().max(0.0) as usize;
            let hi = ((u + half).floor() as usize).min(count - 1);
            (lo..=hi)
                .map(|k| symbols[k] * rrc(u - k as f64, shape.rolloff))
                .sum()
        })
        .collect()
}

fn fsk_baseband(n: usize, tau: f64, gaussian: bool, shape: &PulseShape, rng: &mut Rng) -> Vec<Complex64> {
    let sps = shape.samples_per_symbol as f64;
    let half = FSK_PULSE_HALF_SPAN;
    let count = ((n as f64 + tau.abs() + 1.0) / sps).ceil() as usize + 2 * half as usize + 2;
    let symbols: Vec<f64> = (0..count)
        .map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 })
        .collect();
    let mut prefix = vec![0.0; count + 1];
    for k in 0..count {
        prefix[k + 1] = prefix[k] + symbols[k];
    }
    (0..n)
        .map(|j| {
            let u = (j as f64 + tau) / sps + half;
            // Symbols with k < u − half have fully settled.
            let settled = ((u - half).ceil().max(0.0) as usize).min(count);
            let hi = ((u + half).floor() as usize).min(count - 1);
            let mut acc = prefix[settled];
            for k in settled..=hi {
                acc += symbols[k] * phase_pulse(u - k as f64, gaussian);
            }
            Complex64::from_polar(1.0, PI * FSK_INDEX * acc)
        })
        .collect()
}

/// One `n × 2` IQ sequence (columns I, Q).
pub fn synthesize(modulation: Modulation, n: usize, channel: &ChannelSpec, rng: &mut Rng) -> Result<Matrix> {
    synthesize_with(modulation, n, channel, &PulseShape::default(), rng)
}

pub fn synthesize_with(
    modulation: Modulation,
    n: usize,
    channel: &ChannelSpec,
    shape: &PulseShape,
    rng: &mut Rng,
) -> Result<Matrix> {
    if n < 16 {
        return Err(Error::InvalidInput(format!("sequence length {n} < 16")));
    }
    channel.validate()?;
    shape.validate()?;
    let flags = channel.enabled;
    let tau = if flags.timing { channel.timing_offset } else { 0.0 };
    let mut s = match modulation.constellation() {
        Some(points) => linear_baseband(&points, n, tau, shape, rng),
        None => fsk_baseband(n, tau, modulation == Modulation::Gfsk, shape, rng),
    };
    if flags.frequency && channel.freq_offset != 0.0 {
        for (j, v) in s.iter_mut().enumerate() {
            *v *= Complex64::from_polar(1.0, 2.0 * PI * channel.freq_offset * j as f64);
        }
    }
    if flags.phase && channel.phase_rotation != 0.0 {
        let r = Complex64::from_polar(1.0, channel.phase_rotation);
        s.iter_mut().for_each(|v| *v *= r);
    }
    if flags.noise && channel.snr_db.is_finite() {
        let power = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let sigma = (power / 10f64.powf(channel.snr_db / 10.0) / 2.0).sqrt();
        for v in s.iter_mut() {
            let re = rng.normal();
            let im = rng.normal();
            *v += Complex64::new(sigma * re, sigma * im);
        }
    }
    let data = s.iter().flat_map(|v| [v.re, v.im]).collect();
    Matrix::from_vec(n, 2, data)
}

/// Per-record random impairment ranges used by [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpairmentRanges {
    /// Uniform phase rotation over `[0, 2π)`.
    pub random_phase: bool,
    /// Frequency offset drawn from `[−max, max]` cycles/sample.
    pub max_freq_offset: f64,
    /// Timing offset drawn from `[0, 1)` samples.
    pub random_timing: bool,
}

impl Default for ImpairmentRanges {
    fn default() -> Self {
        ImpairmentRanges {
            random_phase: true,
            max_freq_offset: 0.001,
            random_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub modulations: Vec<Modulation>,
    pub snrs_db: Vec<i16>,
    pub per_class_snr: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub pulse: PulseShape,
    pub impairments: ImpairmentRanges,
}

/// Labeled IQ dataset with `per_class_snr` records for every
/// (modulation, SNR) pair. Record `i` draws from its own fork of the seed,
/// so the output does not depend on generation order.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    if config.modulations.len() < 2 {
        return Err(Error::Config("at least two modulations are required".into()));
    }
    if config.snrs_db.is_empty() || config.per_class_snr == 0 {
        return Err(Error::Config("empty SNR list or zero records per class".into()));
    }
    let root = Rng::new(config.seed).substream(Stream::Synthesis);
    let mut records = Vec::with_capacity(
        config.modulations.len() * config.snrs_db.len() * config.per_class_snr,
    );
    for (label, &modulation) in config.modulations.iter().enumerate() {
        for &snr in &config.snrs_db {
            for _ in 0..config.per_class_snr {
                let mut rng = root.fork(records.len() as u64);
                let imp = config.impairments;
                let channel = ChannelSpec {
                    snr_db: f64::from(snr),
                    phase_rotation: if imp.random_phase { rng.uniform() * 2.0 * PI } else { 0.0 },
                    freq_offset: rng.uniform_range(-imp.max_freq_offset, imp.max_freq_offset),
                    timing_offset: if imp.random_timing { rng.uniform() } else { 0.0 },
                    enabled: ImpairmentFlags {
                        timing: imp.random_timing,
                        frequency: imp.max_freq_offset > 0.0,
                        phase: imp.random_phase,
                        noise: true,
                    },
                };
                let iq = synthesize_with(modulation, config.seq_len, &channel, &config.pulse, &mut rng)?;
                records.push(SignalRecord::new(iq, label, snr)?);
            }
        }
    }
    let names = config.modulations.iter().map(|m| m.name().to_string()).collect();
    let snrs: Vec<String> = config.snrs_db.iter().map(i16::to_string).collect();
    let provenance = format!(
        "synthetic seed={} n={} per_class_snr={} snrs={} rolloff={} sps={}",
        config.seed,
        config.seq_len,
        config.per_class_snr,
        snrs.join(","),
        config.pulse.rolloff,
        config.pulse.samples_per_symbol
    );
    Dataset::new(records, names, provenance)
}
