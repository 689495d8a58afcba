//! Classification throughput: timed single-example inference loops.

use std::time::{Duration, Instant};

use crate::data::iq_to_amp_phase;
use crate::error::{Error, Result};
use crate::model::{DaeModel, FeatureTransform};
use crate::numeric::{Matrix, Rng, Stream};

/// Forward passes run before timing starts.
pub const WARMUP_PASSES: usize = 50;

/// A timed loop must span at least this many timer ticks.
const MIN_TICKS_PER_REP: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// One example per call; the edge-deployment figure.
    Single,
    /// `n` distinct examples classified back to back per timed iteration.
    Batched(usize),
}

impl BatchMode {
    pub fn label(&self) -> String {
        match self {
            BatchMode::Single => "single-example".into(),
            BatchMode::Batched(n) => format!("batched({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seq_len: usize,
    pub repetitions: usize,
    pub duration_per_rep: Duration,
    pub mode: BatchMode,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seq_len: 128,
            repetitions: 10,
            duration_per_rep: Duration::from_secs(1),
            mode: BatchMode::Single,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    /// Mean over repetitions.
    pub classifications_per_second: f64,
    /// Sample standard deviation over repetitions.
    pub std: f64,
    pub per_repetition: Vec<f64>,
    pub repetitions: usize,
    pub seq_len: usize,
    pub mode: BatchMode,
    pub platform: String,
}

/// Smallest nonzero step observed on the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// OS, architecture, CPU model when known, and available parallelism.
pub fn platform_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}; {cpu}; {threads} logical cpus",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn probe_inputs(model: &DaeModel, seq_len: usize, count: usize, seed: u64) -> Result<Vec<Matrix>> {
    let mut rng = Rng::new(seed).substream(Stream::Synthesis);
    let m = model.config.input_features;
    (0..count)
        .map(|_| {
            let raw = Matrix::from_vec(seq_len, m, (0..seq_len * m).map(|_| rng.normal()).collect())?;
            match model.config.features {
                FeatureTransform::AmpPhase => iq_to_amp_phase(&raw),
                FeatureTransform::Raw => Ok(raw),
            }
        })
        .collect()
}

/// Measures classifications per second with the model in inference mode.
/// Each repetition runs for `duration_per_rep`; warm-up is excluded.
pub fn bench(model: &DaeModel, cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.repetitions < 2 {
        return Err(Error::Config("benchmark needs at least 2 repetitions".into()));
    }
    if cfg.seq_len == 0 {
        return Err(Error::Config("benchmark sequence length must be positive".into()));
    }
    let resolution = timer_resolution();
    if cfg.duration_per_rep < resolution * MIN_TICKS_PER_REP {
        return Err(Error::TimerResolution {
            resolution_ns: resolution.as_nanos(),
            duration_ns: cfg.duration_per_rep.as_nanos(),
        });
    }
    let per_iter = match cfg.mode {
        BatchMode::Single => 1,
        BatchMode::Batched(0) => return Err(Error::Config("batch size must be positive".into())),
        BatchMode::Batched(n) => n,
    };
    let inputs = probe_inputs(model, cfg.seq_len, per_iter, cfg.seed)?;
    let mut sink = 0usize;
    for i in 0..WARMUP_PASSES {
        sink = sink.wrapping_add(model.classify(&inputs[i % per_iter])?);
    }
    let mut rates = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        let mut done = 0u64;
        loop {
            for x in &inputs {
                sink = sink.wrapping_add(std::hint::black_box(model.classify(std::hint::black_box(x))?));
            }
            done += per_iter as u64;
            let elapsed = start.elapsed();
            if elapsed >= cfg.duration_per_rep {
                rates.push(done as f64 / elapsed.as_secs_f64());
                break;
            }
        }
    }
    std::hint::black_box(sink);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rates.len() - 1) as f64;
    Ok(BenchResult {
        classifications_per_second: mean,
        std: var.sqrt(),
        repetitions: rates.len(),
        per_repetition: rates,
        seq_len: cfg.seq_len,
        mode: cfg.mode,
        platform: platform_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> DaeModel {
        DaeModel::new(ModelConfig::paper(2, 32, 4), &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn records_requested_repetitions() {
        let cfg = BenchConfig {
            seq_len: 32,
            repetitions: 10,
            duration_per_rep: Duration::from_millis(20),
            ..Default::default()
        };
        let r = bench(&model(), &cfg).unwrap();
        assert_eq!(r.repetitions, 10);
        assert_eq!(r.per_repetition.len(), 10);
        assert!(r.classifications_per_second > 0.0);
        assert!(r.std >= 0.0);
        assert!(!r.platform.is_empty());
    }

    #[test]
    fn rejects_single_repetition_and_too_short_duration() {
        let m = model();
        let one = BenchConfig { repetitions: 1, ..Default::default() };
        assert!(bench(&m, &one).is_err());
        let short = BenchConfig {
            duration_per_rep: Duration::from_nanos(1),
            ..Default::default()
        };
        assert!(matches!(bench(&m, &short), Err(Error::TimerResolution { .. })));
    }

    #[test]
    fn batched_mode_is_labeled_distinctly() {
        let cfg = BenchConfig {
            seq_len: 16,
            repetitions: 2,
            duration_per_rep: Duration::from_millis(10),
            mode: BatchMode::Batched(4),
            ..Default::default()
        };
        let r = bench(&model(), &cfg).unwrap();
        assert_eq!(r.mode.label(), "batched(4)");
        assert_eq!(BatchMode::Single.label(), "single-example");
    }
}
