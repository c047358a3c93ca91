//! `VVOL` raw volume files.
//!
//! Layout (little-endian): magic `VVOL`, version `u32`, channel count `u32`,
//! three `u64` extents, a dtype tag byte (0 = f32, 1 = u8), then the payload,
//! channel-major and row-major within each channel.

use std::fs;
use std::io::Read;
use std::path::Path;

use vgan_core::data::LabelVolume;
use vgan_core::Tensor;

use crate::bytes::{put_f32s, write_atomic, Reader};
use crate::error::{io_err, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"VVOL";
pub const VERSION: u32 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 4 + 4 + 4 + 3 * 8 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeHeader {
    pub channels: usize,
    pub extents: [usize; 3],
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn voxels(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn payload_len(&self) -> u64 {
        (self.channels as u64) * (self.voxels() as u64) * self.dtype.size() as u64
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for &e in &self.extents {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(self.dtype.tag());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(MAGIC)?;
        let offset = r.offset();
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version { offset, found: version });
        }
        let channels = r.u32()? as usize;
        let extents = [r.extent()?, r.extent()?, r.extent()?];
        let offset = r.offset();
        let dtype = match r.u8()? {
            0 => Dtype::F32,
            1 => Dtype::U8,
            t => {
                return Err(FormatError::Invalid {
                    offset,
                    reason: format!("unknown dtype tag {t}"),
                })
            }
        };
        Ok(Self { channels, extents, dtype })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// A decoded volume file.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub header: VolumeHeader,
    pub data: VolumeData,
}

impl Volume {
    /// `[C, D, H, W]` float volume.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(FormatError::Invalid {
                offset: 0,
                reason: format!("expected a [C, D, H, W] tensor, got {s:?}"),
            });
        }
        Ok(Self {
            header: VolumeHeader {
                channels: s[0],
                extents: [s[1], s[2], s[3]],
                dtype: Dtype::F32,
            },
            data: VolumeData::F32(t.data().to_vec()),
        })
    }

    pub fn from_labels(labels: &LabelVolume) -> Self {
        Self {
            header: VolumeHeader {
                channels: 1,
                extents: labels.extents(),
                dtype: Dtype::U8,
            },
            data: VolumeData::U8(labels.data().to_vec()),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor<f32>> {
        let h = self.header;
        match self.data {
            VolumeData::F32(v) => Ok(Tensor::from_vec(&[h.channels, h.extents[0], h.extents[1], h.extents[2]], v)?),
            VolumeData::U8(_) => Err(FormatError::Invalid {
                offset: (HEADER_LEN - 1) as u64,
                reason: "expected f32 data, found u8".into(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        let h = self.header;
        match self.data {
            VolumeData::U8(v) if h.channels == 1 => Ok(LabelVolume::new(h.extents, v)?),
            VolumeData::U8(_) => Err(FormatError::Invalid {
                offset: 8,
                reason: format!("label volumes have 1 channel, found {}", h.channels),
            }),
            VolumeData::F32(_) => Err(FormatError::Invalid {
                offset: (HEADER_LEN - 1) as u64,
                reason: "expected u8 labels, found f32 data".into(),
            }),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.header.payload_len() as usize);
        self.header.encode(&mut out);
        match &self.data {
            VolumeData::F32(v) => put_f32s(&mut out, v.iter().copied()),
            VolumeData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header = VolumeHeader::decode(&mut r)?;
        let expected = HEADER_LEN as u64 + header.payload_len();
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(FormatError::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(FormatError::Invalid {
                offset: expected,
                reason: format!("{} trailing bytes", actual - expected),
            });
        }
        let n = header.channels * header.voxels();
        let data = match header.dtype {
            Dtype::F32 => VolumeData::F32(r.f32s(n)?),
            Dtype::U8 => VolumeData::U8(r.take(n)?.to_vec()),
        };
        Ok(Self { header, data })
    }
}

pub fn save_volume(path: &Path, volume: &Volume) -> Result<()> {
    write_atomic(path, &volume.encode())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Volume::decode(&bytes)
}

/// Read only the header; the payload is not touched.
pub fn inspect_volume(path: &Path) -> Result<VolumeHeader> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    file.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(io_err(path))?;
    VolumeHeader::decode(&mut Reader::new(&buf))
}

pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    save_volume(path, &Volume::from_tensor(image)?)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    load_volume(path)?.into_tensor()
}

pub fn save_labels(path: &Path, labels: &LabelVolume) -> Result<()> {
    save_volume(path, &Volume::from_labels(labels))
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    load_volume(path)?.into_labels()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let t = Tensor::from_fn(&[2, 2, 3, 4], |i| i as f32 * 0.25 - 1.0);
        Volume::from_tensor(&t).unwrap()
    }

    #[test]
    fn header_length_matches_encoding() {
        let v = sample();
        assert_eq!(v.encode().len(), HEADER_LEN + 2 * 24 * 4);
    }

    #[test]
    fn decode_inverts_encode() {
        let v = sample();
        assert_eq!(Volume::decode(&v.encode()).unwrap(), v);
        let l = Volume::from_labels(&LabelVolume::new([1, 2, 2], vec![0, 1, 2, 4]).unwrap());
        assert_eq!(Volume::decode(&l.encode()).unwrap(), l);
    }

    #[test]
    fn truncation_names_both_lengths() {
        let bytes = sample().encode();
        let cut = bytes.len() - 3;
        match Volume::decode(&bytes[..cut]) {
            Err(FormatError::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_rejected_at_its_offset() {
        let mut bytes = sample().encode();
        bytes[HEADER_LEN - 1] = 9;
        match Volume::decode(&bytes) {
            Err(FormatError::Invalid { offset, .. }) => assert_eq!(offset, (HEADER_LEN - 1) as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut bytes = Volume::from_labels(&LabelVolume::zeros([1, 1, 2])).encode();
        *bytes.last_mut().unwrap() = 7;
        assert!(matches!(
            Volume::decode(&bytes).unwrap().into_labels(),
            Err(FormatError::Model(vgan_core::Error::Label { index: 1, value: 7 }))
        ));
    }
}
