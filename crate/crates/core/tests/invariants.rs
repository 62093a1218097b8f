use imp_rg_core::imp::{density, prune_count, prune_step, rewind, PruneScope};
use imp_rg_core::nn::{init_network, Activation, Mask, NetworkSpec, ParamState};
use imp_rg_core::rg::{
    classify_direction, coarse_graining_base, magnitude_fractions, sigma, Direction,
};
use imp_rg_core::transfer::{duplicate_output_mask, truncate_output_mask, DEFAULT_DROPPED_ROWS};
use proptest::prelude::*;

fn small_spec(out: usize) -> NetworkSpec {
    NetworkSpec::new(1, vec![6, 5], out, Activation::Tanh).unwrap()
}

fn random_mask(spec: &NetworkSpec, bits: &[bool]) -> Mask {
    let n = spec.weight_count();
    Mask::from_bits(
        spec.layer_shapes(),
        bits.iter().cycle().take(n).copied().collect(),
    )
    .unwrap()
}

fn perturbed(spec: &NetworkSpec, seed: u64, values: &[f64]) -> ParamState {
    let mut p = init_network(spec, seed).unwrap();
    for (v, d) in p.as_flat_mut().iter_mut().zip(values.iter().cycle()) {
        *v += d;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_only_removes_weights(
        seed in any::<u64>(),
        bits in prop::collection::vec(prop::bool::weighted(0.8), 1..80),
        x in 0.01f64..0.5,
    ) {
        let spec = small_spec(2);
        let mask = random_mask(&spec, &bits);
        prop_assume!((0..spec.num_layers()).all(|l| mask.surviving_in_layer(l) >= 2));
        let params = init_network(&spec, seed).unwrap();
        match prune_step(&params, &mask, x, PruneScope::FullModel) {
            Ok(next) => {
                prop_assert!(next.is_subset_of(&mask));
                let s = mask.surviving();
                prop_assert_eq!(next.surviving(), s - prune_count(s, x));
            }
            Err(imp_rg_core::Error::LayerCollapse { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn rewind_restores_survivors_bit_for_bit(
        seed in any::<u64>(),
        bits in prop::collection::vec(any::<bool>(), 1..80),
    ) {
        let spec = small_spec(2);
        let mask = random_mask(&spec, &bits);
        let init = init_network(&spec, seed).unwrap();
        let rewound = rewind(&init, &mask).unwrap();
        for (l, layout) in init.layouts().iter().enumerate() {
            for (j, &bit) in mask.layer_bits(l).iter().enumerate() {
                let i = layout.weight_offset + j;
                let expected = if bit { init.as_flat()[i] } else { 0.0 };
                prop_assert_eq!(rewound.as_flat()[i].to_bits(), expected.to_bits());
            }
            prop_assert_eq!(rewound.bias(l), init.bias(l));
        }
    }

    #[test]
    fn magnitude_fractions_sum_to_one(
        seed in any::<u64>(),
        bits in prop::collection::vec(prop::bool::weighted(0.7), 1..80),
        shift in prop::collection::vec(-1.0f64..1.0, 1..20),
    ) {
        let spec = small_spec(4);
        let mask = random_mask(&spec, &bits);
        prop_assume!(mask.surviving() > 0);
        let params = perturbed(&spec, seed, &shift);
        let m = magnitude_fractions(&params, &mask).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn truncate_inverts_duplicate(bits in prop::collection::vec(any::<bool>(), 2650)) {
        let spec = NetworkSpec::hnn(2);
        let mask = Mask::from_bits(spec.layer_shapes(), bits).unwrap();
        let wide = duplicate_output_mask(&mask).unwrap();
        prop_assert_eq!(wide.shapes().to_vec(), NetworkSpec::hnn(4).layer_shapes());
        let back = truncate_output_mask(&wide, &DEFAULT_DROPPED_ROWS).unwrap();
        prop_assert_eq!(back, mask);
    }

    #[test]
    fn classification_follows_lambda_against_base(
        lambda in 0.5f64..2.0,
        x in 0.005f64..0.3,
        tol in 0.0f64..0.2,
    ) {
        let s = sigma(lambda, x).unwrap();
        let c = coarse_graining_base(x);
        let class = classify_direction(s, tol);
        // Skip the rounding band right at the boundaries.
        let margin = 1e-9;
        if lambda > c.powf(tol) * (1.0 + margin) {
            prop_assert_eq!(class, Direction::Relevant);
        } else if lambda < c.powf(-tol) * (1.0 - margin) {
            prop_assert_eq!(class, Direction::Irrelevant);
        } else if lambda < c.powf(tol) * (1.0 - margin) && lambda > c.powf(-tol) * (1.0 + margin) {
            prop_assert_eq!(class, Direction::Marginal);
        }
    }

    #[test]
    fn density_tracks_geometric_decay(weights in 100usize..5000, x in 0.005f64..0.2) {
        let mut surviving = weights;
        let mut n = 0;
        while surviving > 1 && n < 400 {
            let d = surviving as f64 / weights as f64;
            prop_assert!(
                (d - (1.0 - x).powi(n)).abs() <= n as f64 / weights as f64,
                "n {n}: {d}"
            );
            surviving -= prune_count(surviving, x);
            n += 1;
        }
    }
}

#[test]
fn full_mask_density_is_one() {
    let spec = NetworkSpec::hnn(2);
    assert_eq!(density(&Mask::ones(&spec)), 1.0);
}
