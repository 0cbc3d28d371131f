//! Study directory format.
//!
//! ```text
//! ct.raw   pet.raw   little-endian f32, x-fastest
//! mask.raw           little-endian u16
//! ct.json  pet.json  mask.json   sidecar headers
//! report.json  meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::{BinaryMask, Grid, Lesion, MaskVolume, Modality, Report, Study, Volume};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U16,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub modality: String,
    pub dtype: Dtype,
    pub byte_order: String,
}

impl Sidecar {
    fn new(grid: Grid, modality: &str, dtype: Dtype) -> Self {
        Self {
            dims: grid.dims,
            spacing: grid.spacing,
            modality: modality.to_string(),
            dtype,
            byte_order: "little".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub format_version: u32,
    pub id: String,
    pub subject_age: f64,
    pub lesions: Vec<Lesion>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_raw(dir: &Path, stem: &str, sidecar: &Sidecar, bytes: Vec<u8>) -> Result<[PathBuf; 2]> {
    let raw = dir.join(format!("{stem}.raw"));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(&json, sidecar)?;
    Ok([raw, json])
}

/// Reads a payload and checks it against its sidecar.
fn read_raw(dir: &Path, stem: &str, dtype: Dtype) -> Result<(Sidecar, Vec<u8>)> {
    let json = dir.join(format!("{stem}.json"));
    let raw = dir.join(format!("{stem}.raw"));
    let header: Sidecar = read_json(&json)?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: raw.clone(),
        reason,
    };
    if header.byte_order != "little" {
        return Err(corrupt(format!("unsupported byte order {}", header.byte_order)));
    }
    if header.dtype != dtype {
        return Err(corrupt(format!("expected {dtype:?}, header says {:?}", header.dtype)));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected: usize = header.dims.iter().product();
    if bytes.len() % dtype.size() != 0 {
        return Err(corrupt(format!("{} bytes is not a whole number of {dtype:?} values", bytes.len())));
    }
    let found = bytes.len() / dtype.size();
    if found < expected {
        return Err(corrupt(format!("truncated payload: {found} of {expected} values")));
    }
    if found > expected {
        return Err(Error::Consistency(format!(
            "{}: header dims {:?} imply {expected} values, payload has {found}",
            raw.display(),
            header.dims
        )));
    }
    Ok((header, bytes))
}

fn grid_of(header: &Sidecar) -> Result<Grid> {
    Grid::new(header.dims, header.spacing)
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn modality_tag(m: Modality) -> &'static str {
    match m {
        Modality::Ct => "CT",
        Modality::Pet => "PET",
    }
}

pub fn save_volume(volume: &Volume, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let header = Sidecar::new(volume.grid, modality_tag(volume.modality), Dtype::F32);
    write_raw(dir, stem, &header, f32_bytes(&volume.values))
}

pub fn load_volume(dir: &Path, stem: &str, modality: Modality) -> Result<Volume> {
    let (header, bytes) = read_raw(dir, stem, Dtype::F32)?;
    if header.modality != modality_tag(modality) {
        return Err(Error::Consistency(format!(
            "{stem}: expected modality {}, header says {}",
            modality_tag(modality),
            header.modality
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(grid_of(&header)?, modality, values)
}

pub fn save_mask(mask: &MaskVolume, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let header = Sidecar::new(mask.grid, "MASK", Dtype::U16);
    let bytes = mask.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(dir, stem, &header, bytes)
}

pub fn load_mask(dir: &Path, stem: &str) -> Result<MaskVolume> {
    let (header, bytes) = read_raw(dir, stem, Dtype::U16)?;
    let labels = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    MaskVolume::new(grid_of(&header)?, labels)
}

pub fn save_binary_mask(mask: &BinaryMask, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let header = Sidecar::new(mask.grid, "BINARY", Dtype::U8);
    let bytes = mask.voxels.iter().map(|&v| v as u8).collect();
    write_raw(dir, stem, &header, bytes)
}

pub fn load_binary_mask(dir: &Path, stem: &str) -> Result<BinaryMask> {
    let (header, bytes) = read_raw(dir, stem, Dtype::U8)?;
    BinaryMask::new(grid_of(&header)?, bytes.iter().map(|&b| b != 0).collect())
}

/// Writes every component of `study` into `dir` (created if missing).
pub fn save_study(study: &Study, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    paths.extend(save_volume(&study.ct, dir, "ct")?);
    paths.extend(save_volume(&study.pet, dir, "pet")?);
    paths.extend(save_mask(&study.mask, dir, "mask")?);
    let report = dir.join("report.json");
    write_json(&report, &study.report)?;
    paths.push(report);
    let meta = dir.join("meta.json");
    write_json(
        &meta,
        &StudyMeta {
            format_version: FORMAT_VERSION,
            id: study.id.clone(),
            subject_age: study.subject_age,
            lesions: study.lesions.clone(),
        },
    )?;
    paths.push(meta);
    Ok(paths)
}

pub fn load_study(dir: &Path) -> Result<Study> {
    let ct = load_volume(dir, "ct", Modality::Ct)?;
    let pet = load_volume(dir, "pet", Modality::Pet)?;
    let mask = load_mask(dir, "mask")?;
    let report: Report = read_json(&dir.join("report.json"))?;
    let meta: StudyMeta = read_json(&dir.join("meta.json"))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: meta.format_version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    Study::new(meta.id, ct, pet, mask, report, meta.subject_age, meta.lesions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::Language;
    use crate::rng::SeedStream;

    fn random_study(seed: u64) -> Study {
        let grid = Grid::new([8, 8, 8], [1.5, 1.5, 2.0]).unwrap();
        let mut s = SeedStream::new(seed);
        let ct = (0..grid.len()).map(|_| s.uniform_range(-1000.0, 1000.0) as f32).collect();
        let pet = (0..grid.len()).map(|_| s.uniform_range(0.0, 10.0) as f32).collect();
        let labels = (0..grid.len()).map(|_| s.int_inclusive(0, 180) as u16).collect();
        Study::new(
            "s0".into(),
            Volume::new(grid, Modality::Ct, ct).unwrap(),
            Volume::new(grid, Modality::Pet, pet).unwrap(),
            MaskVolume::new(grid, labels).unwrap(),
            Report {
                text: "the liver .".into(),
                tokens: vec![1, 3, 4, 2],
                language: Language::En,
            },
            40.0,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let study = random_study(3);
        save_study(&study, dir.path()).unwrap();
        let back = load_study(dir.path()).unwrap();
        assert_eq!(back, study);
        let bits = |v: &Volume| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.ct), bits(&study.ct));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        save_study(&random_study(1), dir.path()).unwrap();
        let raw = dir.path().join("pet.raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 6]).unwrap();
        assert!(matches!(load_study(dir.path()), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn oversized_payload_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new([4, 4, 4], [1.0; 3]).unwrap();
        write_raw(
            dir.path(),
            "ct",
            &Sidecar::new(grid, "CT", Dtype::F32),
            f32_bytes(&[0.0; 65]),
        )
        .unwrap();
        assert!(matches!(
            load_volume(dir.path(), "ct", Modality::Ct),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn component_dims_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let study = random_study(2);
        save_study(&study, dir.path()).unwrap();
        let other = Grid::new([8, 8, 4], [1.5, 1.5, 2.0]).unwrap();
        save_mask(&MaskVolume::background(other), dir.path(), "mask").unwrap();
        assert!(matches!(load_study(dir.path()), Err(Error::Consistency(_))));
    }
}
