use rfdae::data::synth::ImpairmentRanges;
use rfdae::data::{generate, Dataset, GenConfig, Modulation};
use rfdae::eval::evaluate;
use rfdae::model::{DaeModel, ModelConfig};
use rfdae::numeric::{Rng, Stream};
use rfdae::train::{train, TrainConfig};

fn two_class_set(seed: u64) -> Dataset {
    generate(&GenConfig {
        modulations: vec![Modulation::Bpsk, Modulation::Qpsk],
        snrs_db: vec![14, 18],
        per_class_snr: 60,
        seq_len: 32,
        seed,
        pulse: Default::default(),
        impairments: ImpairmentRanges {
            random_phase: false,
            max_freq_offset: 0.0,
            random_timing: false,
        },
    })
    .unwrap()
}

fn small_model(seed: u64) -> DaeModel {
    let config = ModelConfig {
        hidden: 8,
        classifier_widths: [8, 8],
        final_relu: false,
        ..ModelConfig::paper(2, 32, 2)
    };
    DaeModel::new(config, &mut Rng::new(seed).substream(Stream::Init)).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 0.01,
        seed: 3,
        lambda: 0.5,
        dropout_rate: 0.0,
        ..Default::default()
    }
}

#[test]
fn easy_pair_is_learned() {
    let data = two_class_set(1);
    let out = train(small_model(3), &data, &config(15)).unwrap();
    let report = evaluate(&out.model, &data, &out.split.test).unwrap();
    assert!(report.overall_accuracy > 0.9, "test accuracy {}", report.overall_accuracy);
    let best = &out.log.records[out.log.best_epoch - 1];
    assert!(best.val_acc > 0.9, "validation accuracy {}", best.val_acc);
}

#[test]
fn training_loss_decreases() {
    let data = two_class_set(2);
    let out = train(small_model(4), &data, &config(8)).unwrap();
    let first = out.log.records.first().unwrap();
    let last = out.log.records.last().unwrap();
    assert!(last.total < 0.7 * first.total, "{} -> {}", first.total, last.total);
    assert!(last.recon < first.recon);
    assert!(last.clf < first.clf);
}

#[test]
fn split_partitions_are_disjoint_and_cover_the_set() {
    let data = two_class_set(5);
    let out = train(small_model(1), &data, &config(1)).unwrap();
    let mut all: Vec<usize> = [&out.split.train, &out.split.val, &out.split.test]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
    // Four groups of 60 records, each split 30/15/15.
    assert_eq!(out.split.train.len(), 4 * 30);
    assert_eq!(out.split.val.len(), 4 * 15);
    assert_eq!(out.split.test.len(), 4 * 15);
}
