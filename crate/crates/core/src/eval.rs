//! Accuracy reports: per-SNR top-1 accuracy and confusion matrices.

use std::collections::BTreeMap;

use crate::data::{prepare, Dataset};
use crate::error::{Error, Result};
use crate::model::{count_flops, DaeModel};

/// Accuracy and sample count for one SNR bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrAccuracy {
    pub accuracy: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_snr_accuracy: BTreeMap<i16, SnrAccuracy>,
    pub overall_accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub param_count: usize,
    pub flop_count: u64,
    pub checkpoint_bytes: u64,
}

/// One scored example: (true label, predicted label, SNR tag).
pub type Outcome = (usize, usize, i16);

impl EvalReport {
    /// Builds a report from scored examples. Model accounting fields are zero.
    pub fn from_outcomes(outcomes: &[Outcome], class_names: Vec<String>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
        }
        let k = class_names.len();
        let mut confusion = vec![vec![0u64; k]; k];
        let mut buckets: BTreeMap<i16, (u64, u64)> = BTreeMap::new();
        for &(truth, predicted, snr) in outcomes {
            if truth >= k || predicted >= k {
                return Err(Error::InvalidInput(format!(
                    "label {truth} or prediction {predicted} outside {k} classes"
                )));
            }
            confusion[truth][predicted] += 1;
            let b = buckets.entry(snr).or_default();
            b.0 += u64::from(truth == predicted);
            b.1 += 1;
        }
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let total = outcomes.len() as u64;
        Ok(EvalReport {
            class_names,
            per_snr_accuracy: buckets
                .into_iter()
                .map(|(snr, (hit, n))| {
                    (
                        snr,
                        SnrAccuracy {
                            accuracy: hit as f64 / n as f64,
                            count: n,
                        },
                    )
                })
                .collect(),
            overall_accuracy: correct as f64 / total as f64,
            confusion,
            param_count: 0,
            flop_count: 0,
            checkpoint_bytes: 0,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Accuracy over every bucket with SNR ≥ `min_snr`.
    pub fn accuracy_at_or_above(&self, min_snr: i16) -> Option<f64> {
        let (hit, n) = self
            .per_snr_accuracy
            .range(min_snr..)
            .fold((0.0, 0u64), |(h, n), (_, b)| (h + b.accuracy * b.count as f64, n + b.count));
        (n > 0).then(|| hit / n as f64)
    }
}

/// Scores `indices` of `data` with the model in inference mode on the
/// original (uncorrupted) signals.
pub fn outcomes(model: &DaeModel, data: &Dataset, indices: &[usize]) -> Result<Vec<Outcome>> {
    check_compatible(model, data)?;
    indices
        .iter()
        .map(|&i| {
            let r = &data.records[i];
            let x = prepare(&r.features, model.config.features)?;
            Ok((r.label, model.classify(&x)?, r.snr_db))
        })
        .collect()
}

pub fn check_compatible(model: &DaeModel, data: &Dataset) -> Result<()> {
    if data.num_features != model.config.input_features {
        return Err(Error::InvalidInput(format!(
            "dataset has m={} features, model expects {}",
            data.num_features, model.config.input_features
        )));
    }
    if data.num_classes() != model.config.num_classes {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model has {}",
            data.num_classes(),
            model.config.num_classes
        )));
    }
    Ok(())
}

/// Full report over `indices`, with parameter and FLOP accounting.
pub fn evaluate(model: &DaeModel, data: &Dataset, indices: &[usize]) -> Result<EvalReport> {
    let scored = outcomes(model, data, indices)?;
    let mut report = EvalReport::from_outcomes(&scored, data.class_names.clone())?;
    let mut config = model.config;
    config.seq_len = data.seq_len;
    report.param_count = model.param_count();
    report.flop_count = count_flops(&config).flops;
    report.checkpoint_bytes = crate::data::checkpoint::to_bytes(model)?.len() as u64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn labels(k: usize) -> Vec<(usize, i16)> {
        (0..600).map(|i| (i % k, [-10, 0, 10][i % 3])).collect()
    }

    #[test]
    fn oracle_predictor() {
        let o: Vec<Outcome> = labels(4).into_iter().map(|(l, s)| (l, l, s)).collect();
        let r = EvalReport::from_outcomes(&o, names(4)).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert!(r.per_snr_accuracy.values().all(|b| b.accuracy == 1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert!(i == j || c == 0);
            }
        }
    }

    #[test]
    fn anti_oracle_predictor() {
        let o: Vec<Outcome> = labels(4).into_iter().map(|(l, s)| (l, (l + 1) % 4, s)).collect();
        let r = EvalReport::from_outcomes(&o, names(4)).unwrap();
        assert_eq!(r.overall_accuracy, 0.0);
        assert!(r.per_snr_accuracy.values().all(|b| b.accuracy == 0.0));
        assert!((0..4).all(|c| r.confusion[c][c] == 0));
    }

    #[test]
    fn counting_identities() {
        let mut rng = Rng::new(3);
        let o: Vec<Outcome> = labels(5)
            .into_iter()
            .map(|(l, s)| (l, if rng.uniform() < 0.6 { l } else { rng.below(5) }, s))
            .collect();
        let r = EvalReport::from_outcomes(&o, names(5)).unwrap();
        let trace: u64 = (0..5).map(|c| r.confusion[c][c]).sum();
        assert_eq!(r.overall_accuracy, trace as f64 / r.total() as f64);
        assert_eq!(r.total(), 600);
        for c in 0..5 {
            let per_class = o.iter().filter(|x| x.0 == c).count() as u64;
            assert_eq!(r.confusion[c].iter().sum::<u64>(), per_class);
        }
        let per_snr_total: u64 = r.per_snr_accuracy.values().map(|b| b.count).sum();
        assert_eq!(per_snr_total, 600);
    }

    #[test]
    fn uniform_random_predictor_is_near_chance() {
        let k = 11;
        let n = 11_000;
        let mut rng = Rng::new(17);
        let o: Vec<Outcome> = (0..n).map(|i| (i % k, rng.below(k), 0)).collect();
        let r = EvalReport::from_outcomes(&o, names(k)).unwrap();
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((r.overall_accuracy - p).abs() < 3.0 * sigma, "{}", r.overall_accuracy);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(EvalReport::from_outcomes(&[], names(2)).is_err());
    }

    #[test]
    fn threshold_accuracy_pools_buckets() {
        let o = [(0, 0, 10), (0, 1, 10), (1, 1, 12), (1, 1, -4)];
        let r = EvalReport::from_outcomes(&o, names(2)).unwrap();
        assert_eq!(r.accuracy_at_or_above(10), Some(2.0 / 3.0));
        assert_eq!(r.accuracy_at_or_above(20), None);
    }
}
