//! Splits a whole-body study into six anatomically ordered regions.
//!
//! Five regions are axial slabs cut at mask-derived landmarks (with
//! percentile fallbacks); the upper-limb region is carved out of the thorax
//! slab by label and is emitted even when empty, so every study yields the
//! same region list.

use serde::{Deserialize, Serialize};

use crate::anatomy::{well_known, ClassId};
use crate::error::{Error, Result};
use crate::model::PATCH;
use crate::synth::{Grid, MaskVolume, Study, Volume};

pub const NUM_REGIONS: usize = 6;

/// Region names in canonical order; the index is the region id.
pub const REGION_NAMES: [&str; NUM_REGIONS] = [
    "head_neck",
    "thorax",
    "upper_abdomen",
    "pelvis",
    "upper_limbs",
    "lower_limbs",
];

pub const UPPER_LIMBS: usize = 4;

/// Axial slabs in top-to-bottom order, as region ids.
const AXIAL_ORDER: [usize; 5] = [0, 1, 2, 3, 5];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkTable {
    pub lung_superior: Option<usize>,
    pub lung_inferior: Option<usize>,
    pub liver_superior: Option<usize>,
    pub bladder_superior: Option<usize>,
    pub femur_superior: Option<usize>,
    pub femur_inferior: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Fallback cut positions as fractions of the axial extent.
    pub fallback: [f64; 4],
    pub limb_classes: Vec<ClassId>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            fallback: [0.12, 0.40, 0.58, 0.72],
            limb_classes: well_known::upper_limbs(),
        }
    }
}

/// Axial extent (min, max slice) of any class in `classes`.
fn z_extent(mask: &MaskVolume, classes: &[ClassId]) -> Option<(usize, usize)> {
    let plane = mask.grid.dims[0] * mask.grid.dims[1];
    let mut lo = None;
    let mut hi = None;
    for (i, l) in mask.labels.iter().enumerate() {
        if classes.contains(l) {
            let z = i / plane;
            lo = Some(lo.map_or(z, |v: usize| v.min(z)));
            hi = Some(hi.map_or(z, |v: usize| v.max(z)));
        }
    }
    lo.zip(hi)
}

pub fn compute_landmarks(mask: &MaskVolume) -> LandmarkTable {
    let lungs = z_extent(mask, &well_known::lungs());
    let femurs = z_extent(mask, &well_known::femurs());
    LandmarkTable {
        lung_superior: lungs.map(|e| e.0),
        lung_inferior: lungs.map(|e| e.1),
        liver_superior: z_extent(mask, &[well_known::liver()]).map(|e| e.0),
        bladder_superior: z_extent(mask, &[well_known::bladder()]).map(|e| e.0),
        femur_superior: femurs.map(|e| e.0),
        femur_inferior: femurs.map(|e| e.1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub index: usize,
    pub name: &'static str,
    pub ct: Volume,
    pub pet: Volume,
    pub mask: MaskVolume,
    /// Source slab `[start, end)` along z.
    pub z_bounds: (usize, usize),
    /// Dims before padding.
    pub original_dims: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub regions: Vec<Region>,
    pub boundaries: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionManifestEntry {
    pub index: usize,
    pub name: String,
    pub z_bounds: (usize, usize),
    pub original_dims: [usize; 3],
    pub padded_dims: [usize; 3],
}

impl RegionSet {
    pub fn manifest(&self) -> Vec<RegionManifestEntry> {
        self.regions
            .iter()
            .map(|r| RegionManifestEntry {
                index: r.index,
                name: r.name.to_string(),
                z_bounds: r.z_bounds,
                original_dims: r.original_dims,
                padded_dims: r.ct.grid.dims,
            })
            .collect()
    }
}

fn round_up(v: usize) -> usize {
    v.div_ceil(PATCH) * PATCH
}

/// Crop `[z0, z1)` and zero-pad every axis to a multiple of the patch size.
fn crop_pad<T: Copy>(values: &[T], grid: Grid, z0: usize, z1: usize, zero: T) -> (Vec<T>, [usize; 3]) {
    let [w, h, _] = grid.dims;
    let dims = [round_up(w), round_up(h), round_up(z1 - z0)];
    let mut out = vec![zero; dims.iter().product()];
    for z in z0..z1 {
        for y in 0..h {
            for x in 0..w {
                out[x + dims[0] * (y + dims[1] * (z - z0))] = values[grid.index(x, y, z)];
            }
        }
    }
    (out, dims)
}

pub fn partition(study: &Study, landmarks: &LandmarkTable, config: &PartitionConfig) -> Result<RegionSet> {
    study.validate()?;
    let grid = study.grid();
    let depth = grid.dims[2];
    let fallback = |k: usize| (config.fallback[k] * depth as f64).floor() as usize;
    let b = [
        landmarks.lung_superior.unwrap_or_else(|| fallback(0)),
        landmarks
            .lung_inferior
            .or(landmarks.liver_superior)
            .unwrap_or_else(|| fallback(1)),
        landmarks.bladder_superior.unwrap_or_else(|| fallback(2)),
        landmarks.femur_superior.unwrap_or_else(|| fallback(3)),
    ];
    let cuts = [0, b[0], b[1], b[2], b[3], depth];
    for (k, w) in cuts.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::DegeneratePartition {
                slab: REGION_NAMES[AXIAL_ORDER[k]],
            });
        }
    }

    let make = |index: usize, z0: usize, z1: usize, keep: &dyn Fn(usize) -> bool| -> Result<Region> {
        let masked = |v: &[f32]| -> Vec<f32> {
            v.iter().enumerate().map(|(i, &x)| if keep(i) { x } else { 0.0 }).collect()
        };
        let labels: Vec<ClassId> = study
            .mask
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| if keep(i) { l } else { 0 })
            .collect();
        let (ct, dims) = crop_pad(&masked(&study.ct.values), grid, z0, z1, 0.0);
        let (pet, _) = crop_pad(&masked(&study.pet.values), grid, z0, z1, 0.0);
        let (labels, _) = crop_pad(&labels, grid, z0, z1, 0);
        let rgrid = Grid::new(dims, grid.spacing)?;
        Ok(Region {
            index,
            name: REGION_NAMES[index],
            ct: Volume::new(rgrid, study.ct.modality, ct)?,
            pet: Volume::new(rgrid, study.pet.modality, pet)?,
            mask: MaskVolume::new(rgrid, labels)?,
            z_bounds: (z0, z1),
            original_dims: [grid.dims[0], grid.dims[1], z1 - z0],
        })
    };

    let all = |_: usize| true;
    let limb = |i: usize| config.limb_classes.contains(&study.mask.labels[i]);
    let mut regions: Vec<Option<Region>> = vec![None; NUM_REGIONS];
    for (k, &index) in AXIAL_ORDER.iter().enumerate() {
        regions[index] = Some(make(index, cuts[k], cuts[k + 1], &all)?);
    }
    regions[UPPER_LIMBS] = Some(make(UPPER_LIMBS, cuts[1], cuts[2], &limb)?);
    Ok(RegionSet {
        regions: regions.into_iter().map(|r| r.expect("all regions built")).collect(),
        boundaries: b,
    })
}
