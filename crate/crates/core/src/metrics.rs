//! Overlap scores per region, the enhancing-tumor threshold rule and
//! ensemble averaging.
//!
//! Empty denominators score 1: an empty prediction of an empty target is
//! perfect, and an empty prediction has no false positives (PPV 1) while
//! its Dice and sensitivity against a non-empty target are 0.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{inverse_remap, InverseRemap, Region, RegionMaps};
use crate::error::{shape_err, Error, Result};
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: Region,
    pub dice: f64,
    pub ppv: f64,
    pub sensitivity: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl RegionScore {
    pub fn from_counts(region: Region, tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            region,
            dice: ratio(2 * tp, 2 * tp + fp + fn_),
            ppv: ratio(tp, tp + fp),
            sensitivity: ratio(tp, tp + fn_),
            tp,
            fp,
            fn_,
        }
    }
}

/// Score two binary masks of equal length.
pub fn score_region(region: Region, pred: &[bool], gt: &[bool]) -> Result<RegionScore> {
    if pred.len() != gt.len() {
        return Err(shape_err("score_region", format!("{} vs {} voxels", pred.len(), gt.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(RegionScore::from_counts(region, tp, fp, fn_))
}

/// Score all three regions of two maps, each binarized at one half.
pub fn score_maps<T: Real>(pred: &RegionMaps<T>, gt: &RegionMaps<T>) -> Result<[RegionScore; 3]> {
    if pred.extents() != gt.extents() {
        return Err(shape_err("score_maps", format!("{:?} vs {:?}", pred.extents(), gt.extents())));
    }
    let (p, g) = (pred.binarize(), gt.binarize());
    let mut out = Vec::with_capacity(3);
    for r in Region::ALL {
        let c = r.channel();
        let pm: Vec<bool> = p.iter().map(|v| v[c]).collect();
        let gm: Vec<bool> = g.iter().map(|v| v[c]).collect();
        out.push(score_region(r, &pm, &gm)?);
    }
    Ok([out[0], out[1], out[2]])
}

/// Binarize at one half; if the mean ET probability over predicted-ET voxels
/// is below `threshold` (or there are none), those voxels lose their ET bit
/// and come back as necrosis. Then convert to labels.
pub fn threshold_postprocess<T: Real>(maps: &RegionMaps<T>, threshold: f64) -> Result<InverseRemap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let et = maps.channel(Region::Enhancing);
    let half = T::lit(0.5);
    let (mut sum, mut count) = (0.0, 0usize);
    for &p in et.iter().filter(|&&p| p >= half) {
        sum += p.as_f64();
        count += 1;
    }
    if count > 0 && sum / count as f64 >= threshold {
        return Ok(inverse_remap(maps));
    }
    // The voxel stays tumor core (and whole tumor) but loses ET.
    let n = et.len();
    let mut t = maps.tensor().clone();
    let d = t.data_mut();
    for i in 0..n {
        if d[2 * n + i] >= half {
            d[2 * n + i] = T::zero();
            d[n + i] = T::one();
            d[i] = T::one();
        }
    }
    Ok(inverse_remap(&RegionMaps::new(t)?))
}

/// Elementwise arithmetic mean of same-shaped maps.
pub fn ensemble_average<T: Real>(maps: &[RegionMaps<T>]) -> Result<RegionMaps<T>> {
    let first = maps.first().ok_or_else(|| Error::Invalid("ensemble of zero maps".into()))?;
    let shape = first.tensor().shape();
    let mut acc = Tensor::<T>::zeros(shape);
    for m in maps {
        if m.tensor().shape() != shape {
            return Err(shape_err("ensemble_average", format!("{:?} vs {shape:?}", m.tensor().shape())));
        }
        acc.add_assign(m.tensor());
    }
    let k = T::lit(maps.len() as f64);
    RegionMaps::new(acc.map(|v| v / k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn counts_example() {
        let s = RegionScore::from_counts(Region::WholeTumor, 8, 2, 4);
        assert!(approx(s.dice, 16.0 / 22.0) && approx(s.ppv, 0.8) && approx(s.sensitivity, 8.0 / 12.0));
    }

    #[test]
    fn empty_conventions() {
        let both = score_region(Region::Enhancing, &[false; 4], &[false; 4]).unwrap();
        assert_eq!((both.dice, both.ppv, both.sensitivity), (1.0, 1.0, 1.0));
        let missed = score_region(Region::Enhancing, &[false, false], &[true, false]).unwrap();
        assert_eq!((missed.dice, missed.ppv, missed.sensitivity), (0.0, 1.0, 0.0));
    }

    #[test]
    fn disjoint_scores_zero_dice() {
        let s = score_region(Region::TumorCore, &[true, false], &[false, true]).unwrap();
        assert_eq!(s.dice, 0.0);
    }

    fn et_maps(et_prob: f64) -> RegionMaps<f64> {
        // Two voxels: the first is ET, the second plain edema.
        RegionMaps::new(Tensor::from_vec(&[3, 1, 1, 2], alloc::vec![1.0, 1.0, 1.0, 0.0, et_prob, 0.0]).unwrap()).unwrap()
    }

    #[test]
    fn confident_et_is_kept() {
        assert_eq!(threshold_postprocess(&et_maps(0.99), 0.5).unwrap().labels.data(), &[4, 2]);
    }

    #[test]
    fn faint_et_becomes_necrosis() {
        assert_eq!(threshold_postprocess(&et_maps(0.51), 0.7).unwrap().labels.data(), &[1, 2]);
    }

    #[test]
    fn vanishing_threshold_only_binarizes() {
        let m = et_maps(0.6);
        assert_eq!(threshold_postprocess(&m, 1e-9).unwrap(), inverse_remap(&m));
    }

    #[test]
    fn ensemble_arithmetic() {
        let c = |v: f64| RegionMaps::new(Tensor::full(&[3, 1, 2, 2], v)).unwrap();
        let avg = ensemble_average(&[c(0.2), c(0.4), c(0.9)]).unwrap();
        assert!(avg.tensor().data().iter().all(|&v| approx(v, 0.5)));
        let m = RegionMaps::new(Tensor::from_fn(&[3, 1, 2, 2], |i| 0.05 + 0.07 * i as f64)).unwrap();
        let inv = RegionMaps::new(m.tensor().map(|v| 1.0 - v)).unwrap();
        assert!(ensemble_average(&[m.clone(), inv]).unwrap().tensor().data().iter().all(|&v| approx(v, 0.5)));
        assert_eq!(ensemble_average(core::slice::from_ref(&m)).unwrap(), m);
        assert!(ensemble_average::<f64>(&[]).is_err());
    }
}
