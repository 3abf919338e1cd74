mod common;

use flexbody_core::sim::{NoiseSpec, RobotModel, ToolState};
use flexbody_core::trainer::{collect_training_set, train, SamplingPolicy, ToolDataset, TrainConfig, Trainer};
use flexbody_core::wtnpb::Architecture;
use proptest::prelude::*;
use std::sync::OnceLock;

fn datasets() -> &'static [ToolDataset] {
    static DATA: OnceLock<Vec<ToolDataset>> = OnceLock::new();
    DATA.get_or_init(|| {
        collect_training_set(
            &RobotModel::default(),
            &ToolState::training_states(),
            60,
            SamplingPolicy::RandomConstrained,
            &NoiseSpec::default(),
            5,
        )
        .unwrap()
    })
}

fn small(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        architecture: Architecture {
            encoder_hidden: vec![24],
            latent_dim: 4,
            decoder_hidden: vec![24],
            pb_dim: 2,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn mask_draws_are_uniform_within_three_sigma() {
    let data = datasets();
    let mut trainer = Trainer::new(data, &small(0, 9), None).unwrap();
    for _ in 0..5 {
        trainer.epoch().unwrap();
    }
    let counts = trainer.mask_counts();
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    let expected = n as f64 / k;
    let sigma = (n as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
    assert_eq!(n, 5 * data.iter().map(|d| d.samples.len()).sum::<usize>());
    for (i, c) in counts.iter().enumerate() {
        assert!((*c as f64 - expected).abs() <= 3.0 * sigma, "mask {i}: {c} vs {expected:.1} +- {sigma:.1}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_on_one_tool_leaves_other_pbs_alone(k in 0usize..6, seed in any::<u64>(), warmup in 0usize..3) {
        let data = datasets();
        let mut trainer = Trainer::new(data, &small(0, seed), None).unwrap();
        for _ in 0..warmup {
            trainer.epoch().unwrap();
        }
        let before = trainer.bundle().pb_table.clone();
        let batch: Vec<(usize, usize)> = (0..8).map(|s| (k, (s * 7 + seed as usize) % data[k].samples.len())).collect();
        trainer.step(&batch).unwrap();
        let after = &trainer.bundle().pb_table;
        for j in 0..data.len() {
            let same = before[j].p.iter().zip(&after[j].p).all(|(a, b)| a.to_bits() == b.to_bits());
            if j == k {
                prop_assert!(!same, "p_{k} did not move");
            } else {
                prop_assert!(same, "p_{j} moved on a step for tool {k}");
            }
        }
    }
}

#[test]
fn fine_tune_starts_from_sim_weights_and_zero_pbs() {
    let data = datasets();
    let (sim, _) = train(data, &small(3, 1), None).unwrap();
    assert!(sim.pb_table.iter().any(|e| e.p.iter().any(|x| *x != 0.0)));
    let cfg = TrainConfig { fine_tune: true, ..small(0, 2) };
    let trainer = Trainer::new(data, &cfg, Some(&sim)).unwrap();
    let b = trainer.bundle();
    assert_eq!(b.encoder, sim.encoder);
    assert_eq!(b.decoder, sim.decoder);
    assert_eq!(b.normalizer, sim.normalizer);
    assert!(b.pb_table.iter().all(|e| e.p.iter().all(|x| *x == 0.0)));

    let (tuned, _) = train(data, &TrainConfig { epochs: 2, ..cfg }, Some(&sim)).unwrap();
    assert_eq!(tuned.normalizer, sim.normalizer);
    assert_ne!(tuned.encoder, sim.encoder);
}

#[test]
fn fine_tune_requires_a_bundle() {
    let cfg = TrainConfig { fine_tune: true, ..small(1, 0) };
    assert!(train(datasets(), &cfg, None).is_err());
}

#[test]
fn same_seed_same_loss_history() {
    let data = datasets();
    let (_, a) = train(data, &small(4, 77), None).unwrap();
    let (_, b) = train(data, &small(4, 77), None).unwrap();
    let (_, c) = train(data, &small(4, 78), None).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
    assert_ne!(bits(&a.loss_history), bits(&c.loss_history));
}

#[test]
fn loss_decreases_over_training() {
    let (_, report) = train(datasets(), &small(40, 3), None).unwrap();
    let first = report.loss_history[0];
    let last = *report.loss_history.last().unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn collected_samples_respect_the_support_margin() {
    let m = RobotModel::default();
    for d in datasets() {
        assert!(d.samples.iter().all(|s| flexbody_core::trainer::is_acceptable(&m, s)));
        assert!(d.samples.iter().all(|s| s.tool == Some(d.tool)));
    }
}
