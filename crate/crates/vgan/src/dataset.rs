//! JSON dataset manifests: a list of `{id, image, label, grade}` entries whose
//! paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vgan_core::data::{synth_phantom, Grade, VolumeSample, MODALITIES};

use crate::bytes::write_atomic;
use crate::volume::{load_image, load_labels, save_image, save_labels};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
    pub grade: Grade,
}

pub fn read_manifest(path: &Path) -> anyhow::Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

pub fn load_entry(manifest: &Path, entry: &ManifestEntry) -> anyhow::Result<VolumeSample> {
    let base = base_dir(manifest);
    let image_path = base.join(&entry.image);
    let image = load_image(&image_path).with_context(|| format!("loading {}", image_path.display()))?;
    if image.shape()[0] != MODALITIES {
        bail!(
            "{}: expected {MODALITIES} modality channels, found {}",
            image_path.display(),
            image.shape()[0]
        );
    }
    let label_path = base.join(&entry.label);
    let labels = load_labels(&label_path).with_context(|| format!("loading {}", label_path.display()))?;
    VolumeSample::new(entry.id.clone(), image, labels, entry.grade)
        .with_context(|| format!("case {}", entry.id))
}

pub fn load_dataset(manifest: &Path) -> anyhow::Result<Vec<VolumeSample>> {
    read_manifest(manifest)?
        .iter()
        .map(|e| load_entry(manifest, e))
        .collect()
}

/// HGG/LGG assignment for `count` phantoms at an `hgg:lgg` ratio: the first
/// `round(count · hgg / (hgg + lgg))` are high grade.
pub fn grade_schedule(count: usize, ratio: (u32, u32)) -> anyhow::Result<Vec<Grade>> {
    let (h, l) = ratio;
    if h + l == 0 {
        bail!("grade ratio {h}:{l} has no weight");
    }
    let hgg = ((count as f64) * f64::from(h) / f64::from(h + l)).round() as usize;
    Ok((0..count).map(|i| if i < hgg { Grade::Hgg } else { Grade::Lgg }).collect())
}

/// Per-sample seed: phantoms are independent of each other and of `count`,
/// and the first one is the phantom of `seed` itself.
pub fn phantom_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn synth_dataset(count: usize, seed: u64, extents: [usize; 3], ratio: (u32, u32)) -> anyhow::Result<Vec<VolumeSample>> {
    grade_schedule(count, ratio)?
        .into_iter()
        .enumerate()
        .map(|(i, grade)| Ok(synth_phantom(phantom_seed(seed, i), extents, grade)?))
        .collect()
}

/// Write samples under `out/images`, `out/labels` and `out/manifest.json`.
pub fn write_dataset(out: &Path, samples: &[VolumeSample]) -> anyhow::Result<PathBuf> {
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let image = PathBuf::from("images").join(format!("{}.vvol", s.id));
        let label = PathBuf::from("labels").join(format!("{}.vvol", s.id));
        save_image(&out.join(&image), &s.image)?;
        save_labels(&out.join(&label), &s.labels)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            label,
            grade: s.grade,
        });
    }
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_to_one_split_of_ten() {
        let g = grade_schedule(10, (4, 1)).unwrap();
        assert_eq!(g.iter().filter(|&&g| g == Grade::Hgg).count(), 8);
        assert_eq!(g.iter().filter(|&&g| g == Grade::Lgg).count(), 2);
    }

    #[test]
    fn first_phantom_uses_the_dataset_seed() {
        assert_eq!(phantom_seed(20_240_607, 0), 20_240_607);
        assert_ne!(phantom_seed(5, 1), phantom_seed(6, 0));
    }

    #[test]
    fn zero_ratio_is_rejected() {
        assert!(grade_schedule(3, (0, 0)).is_err());
    }

    #[test]
    fn entry_json_uses_grade_tags() {
        let e = ManifestEntry {
            id: "c".into(),
            image: "images/c.vvol".into(),
            label: "labels/c.vvol".into(),
            grade: Grade::Lgg,
        };
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"LGG\""), "{json}");
        assert_eq!(serde_json::from_str::<ManifestEntry>(&json).unwrap(), e);
    }
}
