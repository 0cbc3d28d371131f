use serde::{Deserialize, Serialize};

use crate::anatomy::{ClassId, Language};
use crate::error::{Error, Result};

/// Voxel grid geometry. Voxels are stored x-fastest, then y, then z; z is
/// the axial axis with slice 0 at the top of the body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Voxel volume in millilitres (spacing is in mm).
    pub fn voxel_ml(&self) -> f64 {
        self.spacing.iter().product::<f64>() / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Ct,
    Pet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub grid: Grid,
    pub modality: Modality,
    pub values: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, modality: Modality, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Consistency(format!(
                "{modality:?} volume has {} values for dims {:?}",
                values.len(),
                grid.dims
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!("{modality:?} volume contains {v}")));
        }
        if modality == Modality::Pet {
            if let Some(v) = values.iter().find(|&&v| v < 0.0) {
                return Err(Error::Consistency(format!("negative PET value {v}")));
            }
        }
        Ok(Self { grid, modality, values })
    }

    pub fn filled(grid: Grid, modality: Modality, value: f32) -> Self {
        Self {
            grid,
            modality,
            values: vec![value; grid.len()],
        }
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.grid.index(x, y, z)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskVolume {
    pub grid: Grid,
    pub labels: Vec<ClassId>,
}

impl MaskVolume {
    pub fn new(grid: Grid, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Consistency(format!(
                "mask has {} labels for dims {:?}",
                labels.len(),
                grid.dims
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > crate::anatomy::NUM_CLASSES) {
            return Err(Error::UnknownClass(*l));
        }
        Ok(Self { grid, labels })
    }

    pub fn background(grid: Grid) -> Self {
        Self {
            grid,
            labels: vec![0; grid.len()],
        }
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> ClassId {
        self.labels[self.grid.index(x, y, z)]
    }

    /// Sorted distinct non-background labels.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut seen = vec![false; crate::anatomy::NUM_CLASSES as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..seen.len()).filter(|&c| seen[c]).map(|c| c as ClassId).collect()
    }
}

/// Boolean voxel mask (lesion prediction or ground truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub grid: Grid,
    pub voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, voxels: Vec<bool>) -> Result<Self> {
        if voxels.len() != grid.len() {
            return Err(Error::Consistency(format!(
                "binary mask has {} voxels for dims {:?}",
                voxels.len(),
                grid.dims
            )));
        }
        Ok(Self { grid, voxels })
    }

    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            voxels: vec![false; grid.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub text: String,
    pub tokens: Vec<u32>,
    pub language: Language,
}

/// A Gaussian PET hotspot attached to an organ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub organ: ClassId,
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    /// Gaussian width in voxels.
    pub sigma: f64,
    pub amplitude: f64,
}

impl Lesion {
    /// Voxels where the hotspot reaches at least half its peak.
    pub fn contains(&self, p: [usize; 3]) -> bool {
        let r2: f64 = (0..3).map(|a| (p[a] as f64 - self.center[a]).powi(2)).sum();
        r2 <= 2.0 * std::f64::consts::LN_2 * self.sigma * self.sigma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub ct: Volume,
    pub pet: Volume,
    pub mask: MaskVolume,
    pub report: Report,
    pub subject_age: f64,
    #[serde(default)]
    pub lesions: Vec<Lesion>,
}

impl Study {
    pub fn new(
        id: String,
        ct: Volume,
        pet: Volume,
        mask: MaskVolume,
        report: Report,
        subject_age: f64,
        lesions: Vec<Lesion>,
    ) -> Result<Self> {
        let s = Self {
            id,
            ct,
            pet,
            mask,
            report,
            subject_age,
            lesions,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn grid(&self) -> Grid {
        self.ct.grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.ct.modality != Modality::Ct || self.pet.modality != Modality::Pet {
            return Err(Error::Consistency("study volumes have wrong modalities".into()));
        }
        if self.ct.grid != self.pet.grid || self.ct.grid != self.mask.grid {
            return Err(Error::Consistency(format!(
                "grids disagree: ct {:?}, pet {:?}, mask {:?}",
                self.ct.grid, self.pet.grid, self.mask.grid
            )));
        }
        if !(0.0..=120.0).contains(&self.subject_age) {
            return Err(Error::Consistency(format!("age {} outside [0, 120]", self.subject_age)));
        }
        if self.report.tokens.is_empty() {
            return Err(Error::Consistency("report has no tokens".into()));
        }
        Ok(())
    }

    /// Ground-truth lesion mask from the recorded hotspots.
    pub fn lesion_mask(&self) -> BinaryMask {
        let grid = self.grid();
        let voxels = (0..grid.len())
            .map(|i| {
                let p = grid.coords(i);
                self.lesions.iter().any(|l| l.amplitude > 0.0 && l.contains(p))
            })
            .collect();
        BinaryMask { grid, voxels }
    }
}
