use alloc::vec::Vec;

use super::{LabelVolume, RegionMaps};
use crate::{Real, Tensor};

/// WT = {1,2,3,4}, TC = {1,3,4}, ET = {4}.
pub fn remap_labels<T: Real>(labels: &LabelVolume) -> RegionMaps<T> {
    let [d, h, w] = labels.extents();
    let n = d * h * w;
    let mut out = Tensor::zeros(&[3, d, h, w]);
    let o = out.data_mut();
    for (i, &v) in labels.data().iter().enumerate() {
        let set = |b: bool| if b { T::one() } else { T::zero() };
        o[i] = set(v != 0);
        o[n + i] = set(matches!(v, 1 | 3 | 4));
        o[2 * n + i] = set(v == 4);
    }
    RegionMaps::new(out).expect("three channels")
}

/// Labels recovered from region maps, and how many voxels had to be
/// trimmed to restore `ET ⊆ TC ⊆ WT`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InverseRemap {
    pub labels: LabelVolume,
    pub nesting_fixes: usize,
}

/// ET → 4, TC∖ET → 1, WT∖TC → 2, else 0. Label 3 is never produced.
/// Non-nested maps are first intersected (`TC ∧= WT`, `ET ∧= TC`).
pub fn inverse_remap<T: Real>(maps: &RegionMaps<T>) -> InverseRemap {
    let mut fixes = 0;
    let data: Vec<u8> = maps
        .binarize()
        .into_iter()
        .map(|[wt, tc, et]| {
            let tc2 = tc && wt;
            let et2 = et && tc2;
            fixes += usize::from(tc2 != tc || et2 != et);
            match (wt, tc2, et2) {
                (_, _, true) => 4,
                (_, true, false) => 1,
                (true, false, false) => 2,
                _ => 0,
            }
        })
        .collect();
    if fixes > 0 {
        log::warn!("inverse_remap: {fixes} voxels violated region nesting and were trimmed");
    }
    InverseRemap {
        labels: LabelVolume::new(maps.extents(), data).expect("labels in range"),
        nesting_fixes: fixes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Region;

    #[test]
    fn region_counts_by_definition() {
        let mut v = Vec::new();
        for (label, count) in [(1u8, 10), (2, 20), (3, 5), (4, 3), (0, 26)] {
            v.extend(core::iter::repeat_n(label, count));
        }
        let labels = LabelVolume::new([4, 4, 4], v).unwrap();
        let maps = remap_labels::<f64>(&labels);
        let count = |r| maps.channel(r).iter().filter(|&&x| x == 1.0).count();
        assert_eq!(count(Region::WholeTumor), 38);
        assert_eq!(count(Region::TumorCore), 18);
        assert_eq!(count(Region::Enhancing), 3);
    }

    #[test]
    fn label_three_comes_back_as_necrosis() {
        let labels = LabelVolume::new([1, 1, 5], alloc::vec![0, 1, 2, 3, 4]).unwrap();
        let back = inverse_remap(&remap_labels::<f32>(&labels));
        assert_eq!(back.labels.data(), &[0, 1, 2, 1, 4]);
        assert_eq!(back.nesting_fixes, 0);
    }

    #[test]
    fn nesting_is_enforced_by_intersection() {
        // ET without TC, TC without WT.
        let maps = RegionMaps::new(Tensor::from_vec(&[3, 1, 1, 2], alloc::vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let back = inverse_remap(&maps);
        assert_eq!(back.labels.data(), &[0, 2]);
        assert_eq!(back.nesting_fixes, 2);
    }

    #[test]
    fn out_of_range_label_names_voxel() {
        let err = LabelVolume::new([1, 1, 3], alloc::vec![0, 7, 9]).unwrap_err();
        assert_eq!(err, crate::Error::Label { index: 1, value: 7 });
    }
}
