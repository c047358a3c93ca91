//! Whole-volume prediction with a patch-sized generator.

use vgan_core::data::{InverseRemap, RegionMaps};
use vgan_core::generator::{Generator, REGION_CHANNELS};
use vgan_core::metrics::{ensemble_average, threshold_postprocess};
use vgan_core::training::predict;
use vgan_core::{ParamStore, Tensor};

use crate::run::LoadedGenerator;

/// Corners of the non-overlapping tiles covering `extents` with `patch`-sized
/// windows; the last tile on an axis is shifted back so it ends at the edge.
fn tile_corners(extents: [usize; 3], patch: [usize; 3]) -> Vec<[usize; 3]> {
    let axis = |a: usize| -> Vec<usize> {
        if extents[a] <= patch[a] {
            return vec![0];
        }
        let mut v: Vec<usize> = (0..extents[a]).step_by(patch[a]).collect();
        if let Some(last) = v.last_mut() {
            *last = (*last).min(extents[a] - patch[a]);
        }
        v.dedup();
        v
    };
    let (zs, ys, xs) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([z, y, x]);
            }
        }
    }
    out
}

/// Copy the window at `corner` of size `win` between a `[C, ..src]` buffer
/// and a `[C, ..win]` buffer; voxels outside `src` read as zero.
fn window(src: &[f32], src_ext: [usize; 3], channels: usize, corner: [usize; 3], win: [usize; 3]) -> Vec<f32> {
    let [d, h, w] = src_ext;
    let mut out = vec![0.0; channels * win.iter().product::<usize>()];
    let mut k = 0;
    for c in 0..channels {
        for z in corner[0]..corner[0] + win[0] {
            for y in corner[1]..corner[1] + win[1] {
                for x in corner[2]..corner[2] + win[2] {
                    if z < d && y < h && x < w {
                        out[k] = src[((c * d + z) * h + y) * w + x];
                    }
                    k += 1;
                }
            }
        }
    }
    out
}

/// Region probabilities for a `[4, D, H, W]` image of any size. Volumes
/// smaller than the patch are zero-padded at the far end; larger ones are
/// covered by patch-sized tiles, later tiles overwriting overlaps.
pub fn predict_volume(generator: &Generator, params: &ParamStore<f32>, image: &Tensor<f32>) -> anyhow::Result<RegionMaps<f32>> {
    let s = image.shape();
    anyhow::ensure!(s.len() == 4, "expected a [C, D, H, W] image, got {s:?}");
    let (channels, ext) = (s[0], [s[1], s[2], s[3]]);
    let patch = generator.config().patch;
    let mut maps = vec![0.0f32; REGION_CHANNELS * ext.iter().product::<usize>()];
    for corner in tile_corners(ext, patch) {
        let tile = window(image.data(), ext, channels, corner, patch);
        let input = Tensor::from_vec(&[1, channels, patch[0], patch[1], patch[2]], tile)?;
        let out = predict(generator, params, &input)?;
        let probs = out.data();
        let mut k = 0;
        for c in 0..REGION_CHANNELS {
            for z in corner[0]..corner[0] + patch[0] {
                for y in corner[1]..corner[1] + patch[1] {
                    for x in corner[2]..corner[2] + patch[2] {
                        if z < ext[0] && y < ext[1] && x < ext[2] {
                            maps[((c * ext[0] + z) * ext[1] + y) * ext[2] + x] = probs[k];
                        }
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(RegionMaps::new(Tensor::from_vec(&[REGION_CHANNELS, ext[0], ext[1], ext[2]], maps)?)?)
}

/// Averaged probability maps of every model, then the threshold rule and
/// inverse remapping.
pub fn segment(models: &[LoadedGenerator], image: &Tensor<f32>, threshold: f64) -> anyhow::Result<(RegionMaps<f32>, InverseRemap)> {
    anyhow::ensure!(!models.is_empty(), "no models to run");
    let maps = models
        .iter()
        .map(|m| predict_volume(&m.generator, &m.params, image))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let averaged = if maps.len() == 1 {
        maps.into_iter().next().expect("one map")
    } else {
        ensemble_average(&maps)?
    };
    let labels = threshold_postprocess(&averaged, threshold)?;
    Ok((averaged, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_cover_every_voxel() {
        let ext = [5, 8, 3];
        let patch = [2, 4, 4];
        let mut hit = [false; 5 * 8 * 3];
        for c in tile_corners(ext, patch) {
            for z in c[0]..(c[0] + patch[0]).min(ext[0]) {
                for y in c[1]..(c[1] + patch[1]).min(ext[1]) {
                    for x in c[2]..(c[2] + patch[2]).min(ext[2]) {
                        hit[(z * 8 + y) * 3 + x] = true;
                    }
                }
            }
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn window_zero_fills_outside() {
        let src: Vec<f32> = (1..=8).map(|v| v as f32).collect();
        let w = window(&src, [2, 2, 2], 1, [1, 1, 1], [2, 1, 1]);
        assert_eq!(w, vec![8.0, 0.0]);
    }
}
