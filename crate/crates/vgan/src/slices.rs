//! Binary PPM (`P6`) export of axis-aligned slices.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure};
use vgan_core::data::LabelVolume;

use crate::bytes::write_atomic;

/// Colors for labels 0..=4: background, necrosis, edema, non-enhancing,
/// enhancing.
pub const PALETTE: [[u8; 3]; 5] = [[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];

/// A `width × height` RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Rgb {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// Voxel indices of slice `index` along `axis` of a `[D, H, W]` grid, rows
/// then columns over the two remaining axes.
fn slice_indices(extents: [usize; 3], axis: usize, index: usize) -> anyhow::Result<(usize, usize, Vec<usize>)> {
    ensure!(axis < 3, "axis must be 0, 1 or 2, got {axis}");
    if index >= extents[axis] {
        bail!("slice {index} out of range for axis {axis} of extent {}", extents[axis]);
    }
    let [d, h, w] = extents;
    let at = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let (rows, cols) = match axis {
        0 => (h, w),
        1 => (d, w),
        _ => (d, h),
    };
    let mut idx = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            idx.push(match axis {
                0 => at(index, r, c),
                1 => at(r, index, c),
                _ => at(r, c, index),
            });
        }
    }
    Ok((cols, rows, idx))
}

pub fn label_slice(labels: &LabelVolume, axis: usize, index: usize) -> anyhow::Result<Rgb> {
    let (width, height, idx) = slice_indices(labels.extents(), axis, index)?;
    let data = labels.data();
    Ok(Rgb {
        width,
        height,
        pixels: idx.iter().map(|&i| PALETTE[usize::from(data[i])]).collect(),
    })
}

/// Grayscale slice of one channel, scaled by the channel's min/max over the
/// whole volume (a constant channel maps to mid-gray).
pub fn gray_slice(channel: &[f32], extents: [usize; 3], axis: usize, index: usize) -> anyhow::Result<Rgb> {
    ensure!(channel.len() == extents.iter().product::<usize>(), "channel length does not match extents");
    let (width, height, idx) = slice_indices(extents, axis, index)?;
    let (lo, hi) = channel
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let shade = |v: f32| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    };
    Ok(Rgb {
        width,
        height,
        pixels: idx.iter().map(|&i| [shade(channel[i]); 3]).collect(),
    })
}

/// Write `<dir>/<stem>_axis<a>_<index>.ppm` for each slice.
pub fn write_slices(
    dir: &Path,
    stem: &str,
    axis: usize,
    indices: &[usize],
    render: impl Fn(usize) -> anyhow::Result<Rgb>,
) -> anyhow::Result<Vec<PathBuf>> {
    indices
        .iter()
        .map(|&i| {
            let image = render(i)?;
            let path = dir.join(format!("{stem}_axis{axis}_{i:04}.ppm"));
            write_atomic(&path, &image.to_ppm())?;
            Ok(path)
        })
        .collect()
}
