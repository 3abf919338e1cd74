mod common;

use common::{random_bundle, random_normalizer, random_sample, random_vec, rng};
use flexbody_core::wtnpb::{masked_loss, Modality, ModalityMask, STATE_DIM};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn masked_modalities_enter_as_exact_zeros(seed in any::<u64>()) {
        let bundle = random_bundle(seed);
        let mut r = rng(seed);
        let x = random_sample(&mut r, &bundle);
        let p = random_vec(&mut r, bundle.pb_dim(), 1.0);
        for m in &bundle.masks.masks {
            let input = bundle.assemble_input(&x, m, &p).unwrap();
            prop_assert_eq!(input.len(), bundle.architecture.input_dim());
            for modality in Modality::ALL {
                if !m.uses(modality) {
                    for i in modality.range() {
                        prop_assert_eq!(input[i].to_bits(), 0.0f64.to_bits());
                    }
                }
            }
            for (k, bit) in m.0.iter().enumerate() {
                prop_assert_eq!(input[STATE_DIM + k], if *bit { 1.0 } else { 0.0 });
            }
            prop_assert_eq!(&input[STATE_DIM + 4..], &p[..]);
        }
    }

    #[test]
    fn normalization_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = random_normalizer(&mut r);
        let x: [f64; STATE_DIM] = core::array::from_fn(|_| r.random_range(-1000.0..=1000.0));
        let back = n.denormalize(&n.normalize(&x));
        for i in 0..STATE_DIM {
            prop_assert!((back[i] - x[i]).abs() <= 1e-12 * x[i].abs().max(1.0), "{} vs {}", back[i], x[i]);
        }
    }

    #[test]
    fn loss_ignores_dims_outside_the_mask(seed in any::<u64>(), bits in any::<[bool; 4]>(), bump in -50.0..=50.0f64) {
        prop_assume!(bits.iter().any(|b| *b));
        let mask = ModalityMask::new(bits);
        let mut r = rng(seed);
        let pred = random_vec(&mut r, STATE_DIM, 3.0);
        let target: [f64; STATE_DIM] = core::array::from_fn(|_| r.random_range(-3.0..=3.0));
        let (base, grad) = masked_loss(&pred, &target, &mask).unwrap();
        let keep = mask.dims();
        for i in 0..STATE_DIM {
            if !keep[i] {
                prop_assert_eq!(grad[i], 0.0);
                let mut moved = pred.clone();
                moved[i] += bump;
                prop_assert_eq!(masked_loss(&moved, &target, &mask).unwrap().0.to_bits(), base.to_bits());
            }
        }
    }

    #[test]
    fn forward_is_pure(seed in any::<u64>()) {
        let bundle = random_bundle(seed);
        let before = bundle.clone();
        let mut r = rng(seed);
        let x = random_sample(&mut r, &bundle);
        let p = random_vec(&mut r, bundle.pb_dim(), 1.0);
        let m = bundle.masks.masks[0];
        let a = bundle.reconstruct(&x, &m, &p).unwrap();
        let b = bundle.reconstruct(&x, &m, &p).unwrap();
        prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        prop_assert_eq!(bundle, before);
    }
}

#[test]
fn infeasible_mask_is_rejected() {
    let bundle = random_bundle(11);
    let x = random_sample(&mut rng(1), &bundle);
    let p = vec![0.0; bundle.pb_dim()];
    let none = ModalityMask::new([false; 4]);
    assert!(!bundle.masks.contains(&none));
    assert!(bundle.assemble_input(&x, &none, &p).is_err());
}
