//! Nested-ellipsoid tumor phantoms standing in for clinical scans.

use num_traits::Float;
use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Grade, LabelVolume, VolumeSample, MODALITIES};
use crate::error::{Error, Result};
use crate::Tensor;

pub const MIN_PHANTOM_EXTENT: usize = 16;

/// Mean intensity per label (rows) and modality (T1, T1c, T2, FLAIR): edema
/// is bright on FLAIR, the enhancing rim on T1c, necrosis dark on T1.
const CONTRAST: [[f32; MODALITIES]; 5] = [
    [0.60, 0.60, 0.40, 0.40],
    [0.25, 0.30, 0.90, 0.55],
    [0.50, 0.50, 0.80, 0.95],
    [0.40, 0.50, 0.65, 0.70],
    [0.50, 1.00, 0.70, 0.65],
];
const NOISE_STD: f64 = 0.05;

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    /// Squared normalized distance; ≤ 1 inside.
    fn r2(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| Float::powi((p[a] - self.center[a]) / self.radii[a], 2)).sum()
    }
}

/// Seeded phantom: an edema ellipsoid (label 2) containing a tumor core
/// whose outer shell enhances (4), with non-enhancing tissue (3) around a
/// necrotic center (1). Each modality is a fixed per-label contrast plus
/// Gaussian noise.
pub fn synth_phantom(seed: u64, extents: [usize; 3], grade: Grade) -> Result<VolumeSample> {
    if let Some(axis) = extents.iter().position(|&e| e < MIN_PHANTOM_EXTENT) {
        return Err(Error::Config(format!(
            "phantom extent {} on axis {axis} is below {MIN_PHANTOM_EXTENT}",
            extents[axis]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radii = [0.0; 3];
    let mut center = [0.0; 3];
    for a in 0..3 {
        let e = extents[a] as f64;
        radii[a] = rng.random_range(0.18..0.28) * e;
        let margin = radii[a] + 1.0;
        center[a] = rng.random_range(margin..=e - margin);
    }
    let edema = Ellipsoid { center, radii };
    let core_scale = rng.random_range(0.55..0.7);
    let mut core_center = center;
    for a in 0..3 {
        core_center[a] += rng.random_range(-0.1..0.1) * radii[a];
    }
    let core = Ellipsoid {
        center: core_center,
        radii: radii.map(|r| r * core_scale),
    };
    let (rim, necrosis) = match grade {
        Grade::Hgg => (rng.random_range(0.55..0.65), rng.random_range(0.25..0.35)),
        Grade::Lgg => (rng.random_range(0.75..0.85), rng.random_range(0.1..0.2)),
    };

    let [d, h, w] = extents;
    let n = d * h * w;
    let mut labels = alloc::vec![0u8; n];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let rc = core.r2(p);
                labels[(z * h + y) * w + x] = if rc <= necrosis {
                    1
                } else if rc <= rim {
                    3
                } else if rc <= 1.0 {
                    4
                } else if edema.r2(p) <= 1.0 {
                    2
                } else {
                    0
                };
            }
        }
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let mut image = Tensor::zeros(&[MODALITIES, d, h, w]);
    for m in 0..MODALITIES {
        let chan = &mut image.data_mut()[m * n..(m + 1) * n];
        for (v, &l) in chan.iter_mut().zip(&labels) {
            *v = CONTRAST[l as usize][m] + noise.sample(&mut rng) as f32;
        }
    }
    let tag = match grade {
        Grade::Hgg => "hgg",
        Grade::Lgg => "lgg",
    };
    VolumeSample::new(
        format!("phantom-{tag}-{seed}"),
        image,
        LabelVolume::new(extents, labels)?,
        grade,
    )
}
