use proptest::prelude::*;
use vgan_core::data::{
    flip, inverse_remap, pad_volume, remap_labels, crop, Grade, LabelVolume, Region, RegionMaps, VolumeSample,
};
use vgan_core::discriminator::{multiscale_l1, FeatureStack};
use vgan_core::metrics::{ensemble_average, score_region};
use vgan_core::{Graph, Tensor};

const EXT: [usize; 3] = [3, 4, 5];
const VOXELS: usize = 60;

fn labels() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=4, VOXELS)
}

fn stack_pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    // Three stacks of the same layout: layer sizes 6, 3, 1.
    let layer = |n| prop::collection::vec(-5.0f64..5.0, n);
    let stack = move || (layer(6), layer(3), layer(1)).prop_map(|(a, b, c)| vec![a, b, c]);
    (stack(), stack(), stack())
}

fn ms_l1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut g = Graph::new();
    let mut to_stack = |s: &[Vec<f64>]| FeatureStack {
        layers: s
            .iter()
            .map(|l| g.constant(Tensor::from_vec(&[1, l.len()], l.clone()).unwrap()))
            .collect(),
    };
    let (sa, sb) = (to_stack(a), to_stack(b));
    let d = multiscale_l1(&mut g, &sa, &sb).unwrap();
    g.value(d).item()
}

#[test]
fn hand_built_single_layer_distance() {
    assert_eq!(ms_l1(&[vec![1.0, 2.0]], &[vec![2.0, 4.0]]), 1.5);
}

proptest! {
    #[test]
    fn feature_distance_is_a_metric((a, b, c) in stack_pair()) {
        prop_assert_eq!(ms_l1(&a, &a), 0.0);
        let ab = ms_l1(&a, &b);
        prop_assert_eq!(ab, ms_l1(&b, &a));
        prop_assert!(ab >= 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
        prop_assert!(ms_l1(&a, &c) <= ab + ms_l1(&b, &c) + 1e-12);
    }

    #[test]
    fn remapped_regions_nest(l in labels()) {
        let maps = remap_labels::<f64>(&LabelVolume::new(EXT, l).unwrap());
        for v in maps.binarize() {
            prop_assert!(!v[2] || v[1]);
            prop_assert!(!v[1] || v[0]);
        }
    }

    #[test]
    fn inverse_recovers_labels_without_label_three(l in prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 4]), VOXELS)) {
        let vol = LabelVolume::new(EXT, l).unwrap();
        let back = inverse_remap(&remap_labels::<f64>(&vol));
        prop_assert_eq!(back.nesting_fixes, 0);
        prop_assert_eq!(back.labels, vol);
    }

    #[test]
    fn remap_inverts_inverse_on_nested_maps(l in labels()) {
        let maps = remap_labels::<f64>(&LabelVolume::new(EXT, l).unwrap());
        let again = remap_labels::<f64>(&inverse_remap(&maps).labels);
        prop_assert_eq!(again, maps);
    }

    #[test]
    fn swapping_prediction_and_truth_swaps_ppv_and_sensitivity(
        pred in prop::collection::vec(any::<bool>(), 1..200),
        seed in any::<u64>(),
    ) {
        let gt: Vec<bool> = pred.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
        let a = score_region(Region::TumorCore, &pred, &gt).unwrap();
        let b = score_region(Region::TumorCore, &gt, &pred).unwrap();
        prop_assert_eq!(a.dice, b.dice);
        prop_assert_eq!(a.ppv, b.sensitivity);
        prop_assert_eq!(a.sensitivity, b.ppv);
        prop_assert!(a.dice <= 1.0);
        if a.tp > 0 {
            let harmonic = 2.0 * a.ppv * a.sensitivity / (a.ppv + a.sensitivity);
            prop_assert!((a.dice - harmonic).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_stays_within_member_range(
        members in prop::collection::vec(prop::collection::vec(0.001f64..0.999, 3 * VOXELS), 1..5),
    ) {
        let maps: Vec<RegionMaps<f64>> = members
            .iter()
            .map(|m| RegionMaps::new(Tensor::from_vec(&[3, EXT[0], EXT[1], EXT[2]], m.clone()).unwrap()).unwrap())
            .collect();
        let avg = ensemble_average(&maps).unwrap();
        for (i, &v) in avg.tensor().data().iter().enumerate() {
            let lo = members.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }

    /// Tag every voxel's image value with its own label; after any
    /// augmentation the tag must still match the label at that voxel.
    #[test]
    fn augmentations_keep_labels_with_their_voxels(
        l in labels(),
        axes in any::<[bool; 3]>(),
        corner in (0usize..=1, 0usize..=2, 0usize..=2),
        pad in (0usize..3, 0usize..3, 0usize..3),
    ) {
        let vol = LabelVolume::new(EXT, l.clone()).unwrap();
        let image = Tensor::from_fn(&[4, EXT[0], EXT[1], EXT[2]], |i| 10.0 * (f32::from(l[i % VOXELS]) + 1.0) + (i / VOXELS) as f32);
        let s = VolumeSample::new("t".into(), image, vol, Grade::Hgg).unwrap();
        let consistent = |s: &VolumeSample| {
            let n = s.labels.data().len();
            s.labels.data().iter().enumerate().all(|(v, &lab)| {
                (0..4).all(|c| {
                    let x = s.image.data()[c * n + v];
                    x == 0.0 || x == 10.0 * (f32::from(lab) + 1.0) + c as f32
                }) && (s.image.data()[v] != 0.0 || lab == 0)
            })
        };
        let padded = pad_volume(&s, [EXT[0] + pad.0, EXT[1] + pad.1, EXT[2] + pad.2]).unwrap();
        prop_assert!(consistent(&padded));
        let cropped = crop(&s, [corner.0, corner.1, corner.2], [2, 2, 3]).unwrap();
        prop_assert!(consistent(&cropped));
        prop_assert!(consistent(&flip(&s, axes)));
    }
}
