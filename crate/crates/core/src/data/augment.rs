//! Label-consistent geometric augmentation: centered zero padding, crops
//! and per-axis flips. Image and labels always move together.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{LabelVolume, VolumeSample};
use crate::error::{shape_err, Error, Result};
use crate::Tensor;

/// Gather a `[channels, dst]` volume from `[channels, src]`; `source` maps a
/// destination voxel to its source voxel, `None` meaning zero.
fn resample<E: Copy + Default>(
    data: &[E],
    channels: usize,
    src: [usize; 3],
    dst: [usize; 3],
    source: impl Fn([usize; 3]) -> Option<[usize; 3]>,
) -> Vec<E> {
    let src_n = src.iter().product::<usize>();
    let mut out = Vec::with_capacity(channels * dst.iter().product::<usize>());
    for c in 0..channels {
        let base = c * src_n;
        for z in 0..dst[0] {
            for y in 0..dst[1] {
                for x in 0..dst[2] {
                    out.push(match source([z, y, x]) {
                        Some([sz, sy, sx]) => data[base + (sz * src[1] + sy) * src[2] + sx],
                        None => E::default(),
                    });
                }
            }
        }
    }
    out
}

fn rebuild(sample: &VolumeSample, dst: [usize; 3], source: impl Fn([usize; 3]) -> Option<[usize; 3]> + Copy) -> VolumeSample {
    let src = sample.extents();
    let channels = sample.image.shape()[0];
    let image = resample(sample.image.data(), channels, src, dst, source);
    let labels = resample(sample.labels.data(), 1, src, dst, source);
    VolumeSample {
        id: sample.id.clone(),
        image: Tensor::from_vec(&[channels, dst[0], dst[1], dst[2]], image).expect("sized"),
        labels: LabelVolume { extents: dst, data: labels },
        grade: sample.grade,
    }
}

/// Zero-pad to `target`, placing the source at the center (an odd surplus
/// puts the extra voxel after the data).
pub fn pad_volume(sample: &VolumeSample, target: [usize; 3]) -> Result<VolumeSample> {
    let src = sample.extents();
    if (0..3).any(|a| target[a] < src[a]) {
        return Err(shape_err("pad_volume", format!("target {target:?} smaller than source {src:?}")));
    }
    let off: [usize; 3] = core::array::from_fn(|a| (target[a] - src[a]) / 2);
    Ok(rebuild(sample, target, |p| {
        let mut s = [0; 3];
        for a in 0..3 {
            s[a] = p[a].checked_sub(off[a]).filter(|&v| v < src[a])?;
        }
        Some(s)
    }))
}

/// Crop `extents` starting at `corner`.
pub fn crop(sample: &VolumeSample, corner: [usize; 3], extents: [usize; 3]) -> Result<VolumeSample> {
    let src = sample.extents();
    if (0..3).any(|a| corner[a] + extents[a] > src[a]) {
        return Err(shape_err(
            "crop",
            format!("window {extents:?} at {corner:?} exceeds {src:?}"),
        ));
    }
    Ok(rebuild(sample, extents, |p| Some([p[0] + corner[0], p[1] + corner[1], p[2] + corner[2]])))
}

/// Uniform corner such that the window fits inside `source`.
pub fn draw_corner(source: [usize; 3], extents: [usize; 3], rng: &mut impl Rng) -> Result<[usize; 3]> {
    if (0..3).any(|a| extents[a] > source[a]) {
        return Err(shape_err("random_crop", format!("extents {extents:?} exceed source {source:?}")));
    }
    Ok(core::array::from_fn(|a| rng.random_range(0..=source[a] - extents[a])))
}

pub fn random_crop(sample: &VolumeSample, extents: [usize; 3], rng: &mut impl Rng) -> Result<VolumeSample> {
    let corner = draw_corner(sample.extents(), extents, rng)?;
    crop(sample, corner, extents)
}

/// Reverse the axes marked `true`.
pub fn flip(sample: &VolumeSample, axes: [bool; 3]) -> VolumeSample {
    let e = sample.extents();
    rebuild(sample, e, |p| {
        Some(core::array::from_fn(|a| if axes[a] { e[a] - 1 - p[a] } else { p[a] }))
    })
}

/// Independent Bernoulli(`p`) draw per axis.
pub fn draw_flips(p: f64, rng: &mut impl Rng) -> Result<[bool; 3]> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("flip probability {p} outside [0, 1]")));
    }
    Ok(core::array::from_fn(|_| rng.random_bool(p)))
}

pub fn random_flip(sample: &VolumeSample, p: f64, rng: &mut impl Rng) -> Result<VolumeSample> {
    let axes = draw_flips(p, rng)?;
    Ok(if axes.contains(&true) { flip(sample, axes) } else { sample.clone() })
}
