mod common;

use common::*;
use ffvol::mask::{compute_avm, dilate, VoxelMask};
use ffvol::volume::{Dims, Grid, MultiGridVolume};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn dilate_matches_brute_force_oracle() {
    let dims = Dims::new(8, 8, 8);
    let mut r = rng(1);
    for i in 0..50 {
        let mask = random_mask(dims, [0.005, 0.02, 0.08, 0.25][i % 4], &mut r);
        for steps in 0..=3 {
            assert!(
                masks_equal(&dilate(&mask, steps), &brute_dilate(&mask, steps)),
                "mask {i}, steps {steps}"
            );
        }
    }
}

#[test]
fn dilate_matches_oracle_on_anisotropic_boxes() {
    let mut r = rng(2);
    for dims in [Dims::new(1, 1, 1), Dims::new(5, 1, 3), Dims::new(2, 7, 1), Dims::new(9, 4, 6)] {
        let mask = random_mask(dims, 0.1, &mut r);
        for steps in 0..=4 {
            assert!(masks_equal(&dilate(&mask, steps), &brute_dilate(&mask, steps)));
        }
    }
}

#[test]
fn large_dilation_fills_box_and_empty_stays_empty() {
    let dims = Dims::new(8, 8, 8);
    let mut r = rng(3);
    for _ in 0..20 {
        let mut mask = VoxelMask::empty(dims);
        mask.set(r.random_range(0..dims.len()), true);
        assert!(dilate(&mask, 7).is_full());
        assert!(dilate(&mask, 1000).is_full());
    }
    assert_eq!(dilate(&VoxelMask::empty(dims), 5).count_ones(), 0);
}

#[test]
fn avm_matches_scalar_oracle() {
    let dims = Dims::new(6, 6, 6);
    let mut r = rng(4);
    for _ in 0..25 {
        let grids = ["a", "b"]
            .iter()
            .map(|n| Grid {
                name: n.to_string(),
                values: (0..dims.len())
                    .map(|_| if r.random_bool(0.7) { 0.0 } else { r.random_range(-1.0..1.0) })
                    .collect(),
            })
            .collect();
        let vol = MultiGridVolume::new(dims, grids).unwrap();
        let avm = compute_avm(&vol);
        let oracle = scalar_avm(&vol);
        assert!((0..dims.len()).all(|i| avm.get(i) == oracle[i]));
    }
}

fn mask_strategy() -> impl Strategy<Value = VoxelMask> {
    (1usize..7, 1usize..7, 1usize..7, any::<u64>()).prop_map(|(x, y, z, seed)| {
        let mut r = rng(seed);
        random_mask(Dims::new(x, y, z), 0.1, &mut r)
    })
}

proptest! {
    #[test]
    fn dilation_is_monotone(mask in mask_strategy(), steps in 0usize..4) {
        prop_assert!(mask.is_subset_of(&dilate(&mask, steps)));
        prop_assert!(dilate(&mask, steps).is_subset_of(&dilate(&mask, steps + 1)));
    }

    #[test]
    fn dilation_composes(mask in mask_strategy(), a in 0usize..3, b in 0usize..3) {
        prop_assert!(masks_equal(&dilate(&dilate(&mask, a), b), &dilate(&mask, a + b)));
    }

    #[test]
    fn vmsk_roundtrip(mask in mask_strategy()) {
        let mut buf = Vec::new();
        mask.write_vmsk(&mut buf).unwrap();
        let back = VoxelMask::read_vmsk(&buf[..]).unwrap();
        prop_assert!(masks_equal(&mask, &back));
    }
}
