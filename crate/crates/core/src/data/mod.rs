//! Subjects, label volumes and region maps, plus the synthetic phantom
//! generator, augmentations and the stratified train/validation split.

mod augment;
mod labels;
mod phantom;
mod split;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::{Real, Tensor};

pub use augment::{crop, draw_corner, draw_flips, flip, pad_volume, random_crop, random_flip};
pub use labels::{inverse_remap, remap_labels, InverseRemap};
pub use phantom::{synth_phantom, MIN_PHANTOM_EXTENT};
pub use split::{split_dataset, Graded};

/// Number of image modalities (T1, T1c, T2, FLAIR).
pub const MODALITIES: usize = 4;
/// Largest valid raw label.
pub const MAX_LABEL: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grade {
    #[serde(rename = "HGG")]
    Hgg,
    #[serde(rename = "LGG")]
    Lgg,
}

/// Integer label volume with values in `0..=4`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    extents: [usize; 3],
    data: Vec<u8>,
}

impl LabelVolume {
    /// Rejects out-of-range values, naming the first offending voxel.
    pub fn new(extents: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let n = extents.iter().product::<usize>();
        if data.len() != n {
            return Err(shape_err("LabelVolume", format!("{} values for extents {extents:?}", data.len())));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > MAX_LABEL) {
            return Err(Error::Label { index, value });
        }
        Ok(Self { extents, data })
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        Self {
            extents,
            data: alloc::vec![0; extents.iter().product()],
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Voxel count per label value `0..=4`.
    pub fn histogram(&self) -> [usize; 5] {
        let mut h = [0; 5];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }
}

/// One subject: a `[4, D, H, W]` modality volume and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub id: String,
    pub image: Tensor<f32>,
    pub labels: LabelVolume,
    pub grade: Grade,
}

impl VolumeSample {
    pub fn new(id: String, image: Tensor<f32>, labels: LabelVolume, grade: Grade) -> Result<Self> {
        let s = image.shape();
        if s.len() != 4 || s[1..] != labels.extents() {
            return Err(shape_err(
                "VolumeSample",
                format!("image {s:?} vs labels {:?}", labels.extents()),
            ));
        }
        Ok(Self { id, image, labels, grade })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.labels.extents()
    }
}

/// Region index within a [`RegionMaps`] volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "WT")]
    WholeTumor,
    #[serde(rename = "TC")]
    TumorCore,
    #[serde(rename = "ET")]
    Enhancing,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WholeTumor, Region::TumorCore, Region::Enhancing];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "WT",
            Region::TumorCore => "TC",
            Region::Enhancing => "ET",
        }
    }
}

/// `[3, D, H, W]` volume of WT/TC/ET channels: binary for targets,
/// probabilities for predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMaps<T>(Tensor<T>);

impl<T: Real> RegionMaps<T> {
    pub fn new(maps: Tensor<T>) -> Result<Self> {
        let s = maps.shape();
        if s.len() != 4 || s[0] != Region::ALL.len() {
            return Err(shape_err("RegionMaps", format!("expected [3,D,H,W], got {s:?}")));
        }
        Ok(Self(maps))
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.0.shape();
        [s[1], s[2], s[3]]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// Voxels of one region channel.
    pub fn channel(&self, region: Region) -> &[T] {
        let n = self.0.numel() / 3;
        let c = region.channel();
        &self.0.data()[c * n..(c + 1) * n]
    }

    /// Set where the value is at least one half.
    pub fn binarize(&self) -> Vec<[bool; 3]> {
        let n = self.0.numel() / 3;
        let half = T::lit(0.5);
        let d = self.0.data();
        (0..n).map(|i| [d[i] >= half, d[n + i] >= half, d[2 * n + i] >= half]).collect()
    }
}
