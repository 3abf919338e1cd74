mod common;

use std::collections::VecDeque;

use common::{random_bundle, random_sample, rng};
use flexbody_core::online::{update_pb, OnlineBuffer, OnlineConfig, OnlineEstimator, UpdateOutcome};
use flexbody_core::net::MomentumState;
use flexbody_core::sim::StateSample;
use flexbody_core::wtnpb::{Modality, ModelBundle, ModalityMask};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random sample whose presence flags cover every feasible pattern and some
/// infeasible ones.
fn stream_sample(r: &mut ChaCha8Rng, bundle: &ModelBundle) -> StateSample {
    let mut s = random_sample(r, bundle);
    s.present = [true, r.random_bool(0.9), r.random_bool(0.6), r.random_bool(0.7)];
    if r.random_bool(0.3) {
        // Repeat a fixed point so sub-threshold samples occur.
        s.theta_deg = [50.0, 0.0, 20.0, 0.0];
        s.x_cog_mm = [5.0, 0.0];
    }
    s.zero_absent();
    s
}

fn bits(b: &ModelBundle) -> Vec<u64> {
    let nets = [&b.encoder, &b.decoder];
    let mut out: Vec<u64> = nets
        .iter()
        .flat_map(|s| s.layers.iter())
        .flat_map(|l| l.weights.iter().chain(&l.bias))
        .map(|x| x.to_bits())
        .collect();
    out.extend(b.normalizer.mean.iter().chain(&b.normalizer.std).map(|x| x.to_bits()));
    out.extend(b.pb_table.iter().flat_map(|e| e.p.iter()).map(|x| x.to_bits()));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn buffer_evicts_oldest_first(seed in any::<u64>(), capacity in 1usize..12, n in 1usize..80) {
        let bundle = random_bundle(seed);
        let mut r = rng(seed);
        let cfg = OnlineConfig::default();
        let mut buffer = OnlineBuffer::new(capacity);
        let mut model: VecDeque<StateSample> = VecDeque::new();
        for _ in 0..n {
            let s = stream_sample(&mut r, &bundle);
            if buffer.maybe_collect(&s, &bundle.masks, &cfg.thresholds) {
                model.push_back(s);
                if model.len() > capacity {
                    model.pop_front();
                }
            }
            prop_assert!(buffer.len() <= capacity);
            let stored: Vec<&StateSample> = buffer.entries().map(|e| &e.sample).collect();
            prop_assert_eq!(stored, model.iter().collect::<Vec<_>>());
        }
    }

    #[test]
    fn collections_exceed_a_threshold(seed in any::<u64>()) {
        let bundle = random_bundle(seed);
        let mut r = rng(seed);
        let cfg = OnlineConfig::default();
        let mut buffer = OnlineBuffer::new(cfg.capacity);
        for _ in 0..60 {
            let s = stream_sample(&mut r, &bundle);
            let prev: Vec<Option<Vec<f64>>> = Modality::ALL.iter().map(|m| buffer.last_collected(*m).map(<[f64]>::to_vec)).collect();
            if buffer.maybe_collect(&s, &bundle.masks, &cfg.thresholds) {
                let v = s.to_vector();
                let exceeded = Modality::ALL.iter().any(|&m| {
                    s.present[m.index()]
                        && match &prev[m.index()] {
                            None => true,
                            Some(p) => {
                                let d: f64 = m.range().zip(p).map(|(i, q)| (v[i] - q).powi(2)).sum::<f64>().sqrt();
                                d > cfg.thresholds[m.index()]
                            }
                        }
                });
                prop_assert!(exceeded);
                let e = buffer.entries().last().unwrap();
                prop_assert!(bundle.masks.contains(&e.input_mask));
                prop_assert!(e.input_mask.is_subset_of(&e.loss_mask));
                prop_assert_eq!(e.loss_mask, ModalityMask::new(s.present));
            }
        }
    }

    #[test]
    fn pb_updates_leave_the_network_untouched(seed in any::<u64>()) {
        let bundle = random_bundle(seed);
        let before = bits(&bundle);
        let mut r = rng(seed);
        let mut est = OnlineEstimator::new(&vec![0.0; bundle.pb_dim()], OnlineConfig::default());
        let mut updated = false;
        for _ in 0..40 {
            let s = stream_sample(&mut r, &bundle);
            updated |= est.offer(&bundle, &s).unwrap().updated;
        }
        prop_assert!(updated);
        let mut p = est.snapshot();
        let mut state = MomentumState::new(p.len());
        let outcome = update_pb(&est.buffer, &bundle, &mut p, &mut state, &est.cfg).unwrap();
        prop_assert_eq!(outcome, UpdateOutcome::Updated);
        prop_assert_eq!(bits(&bundle), before);
    }
}

#[test]
fn small_buffer_does_not_update() {
    let bundle = random_bundle(4);
    let mut r = rng(4);
    let cfg = OnlineConfig::default();
    let mut buffer = OnlineBuffer::new(cfg.capacity);
    while buffer.len() < cfg.min_samples - 1 {
        let s = random_sample(&mut r, &bundle);
        buffer.maybe_collect(&s, &bundle.masks, &cfg.thresholds);
    }
    let mut p = vec![0.3; bundle.pb_dim()];
    let mut state = MomentumState::new(p.len());
    let outcome = update_pb(&buffer, &bundle, &mut p, &mut state, &cfg).unwrap();
    assert_eq!(outcome, UpdateOutcome::BelowThreshold);
    assert!(p.iter().all(|x| *x == 0.3));
}
