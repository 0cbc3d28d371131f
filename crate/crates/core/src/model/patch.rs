//! Patch tokenization, synchronized masking and fixed positional codes.

use serde::{Deserialize, Serialize};

use super::config::Normalization;
use super::PATCH;
use crate::anatomy::{ClassId, BACKGROUND};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::synth::{MaskVolume, Modality, Volume};
use crate::tensor::Array;

/// Non-overlapping 16³ patches of one volume, enumerated x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches {
    /// `[N, 4096]`, each row a patch flattened x-fastest.
    pub vectors: Array,
    pub coords: Vec<[usize; 3]>,
    /// Patches per axis.
    pub grid: [usize; 3],
}

impl Patches {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn patch_grid(dims: [usize; 3]) -> Result<[usize; 3]> {
    if dims.iter().any(|d| d % PATCH != 0) {
        return Err(Error::Contract(format!("dims {dims:?} not divisible by {PATCH}")));
    }
    Ok(dims.map(|d| d / PATCH))
}

fn patch_coords(grid: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(grid.iter().product());
    for z in 0..grid[2] {
        for y in 0..grid[1] {
            for x in 0..grid[0] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Visits voxel indices of patch `c` in x-fastest order.
fn for_each_voxel(dims: [usize; 3], c: [usize; 3], mut f: impl FnMut(usize)) {
    for z in 0..PATCH {
        for y in 0..PATCH {
            let row = (c[0] * PATCH) + dims[0] * ((c[1] * PATCH + y) + dims[1] * (c[2] * PATCH + z));
            for x in 0..PATCH {
                f(row + x);
            }
        }
    }
}

/// Patches with intensities normalized for `volume.modality`.
pub fn patchify(volume: &Volume, norm: &Normalization) -> Result<Patches> {
    let dims = volume.grid.dims;
    let grid = patch_grid(dims)?;
    let coords = patch_coords(grid);
    let f: fn(&Normalization, f64) -> f64 = match volume.modality {
        Modality::Ct => Normalization::ct,
        Modality::Pet => Normalization::pet,
    };
    let mut data = Vec::with_capacity(coords.len() * PATCH.pow(3));
    for &c in &coords {
        for_each_voxel(dims, c, |i| data.push(f(norm, volume.values[i] as f64)));
    }
    Ok(Patches {
        vectors: Array::new(vec![coords.len(), PATCH.pow(3)], data)?,
        coords,
        grid,
    })
}

/// Majority label per patch. Background wins only with a strict majority;
/// otherwise the most frequent foreground label, ties to the lowest id.
pub fn dominant_classes(mask: &MaskVolume) -> Result<Vec<ClassId>> {
    let dims = mask.grid.dims;
    let grid = patch_grid(dims)?;
    let voxels = PATCH.pow(3);
    let mut counts = std::collections::BTreeMap::new();
    Ok(patch_coords(grid)
        .into_iter()
        .map(|c| {
            counts.clear();
            let mut background = 0;
            for_each_voxel(dims, c, |i| match mask.labels[i] {
                BACKGROUND => background += 1,
                l => *counts.entry(l).or_insert(0usize) += 1,
            });
            if 2 * background > voxels {
                return BACKGROUND;
            }
            // BTreeMap iterates ascending, and max_by_key keeps the last
            // maximum, so scan in reverse to favour the lowest id.
            counts
                .iter()
                .rev()
                .max_by_key(|(_, &n)| n)
                .map(|(&l, _)| l)
                .unwrap_or(BACKGROUND)
        })
        .collect())
}

/// Visible / masked patch indices shared by both modalities of a region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSample {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

impl MaskSample {
    pub fn total(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    /// Nothing masked.
    pub fn all_visible(n: usize) -> Self {
        Self {
            visible: (0..n).collect(),
            masked: vec![],
        }
    }

    /// Checks that `visible` and `masked` partition `0..n`.
    pub fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.visible.iter().chain(&self.masked) {
            if i >= n || seen[i] {
                return Err(Error::Contract(format!("mask index {i} out of range or repeated (N = {n})")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract(format!("mask does not cover all {n} patches")));
        }
        Ok(())
    }
}

/// Uniformly random `round(p N)`-subset to mask; both index lists ascending.
pub fn sample_mask(n: usize, p: f64, seed: u64) -> Result<MaskSample> {
    if n < 2 {
        return Err(Error::DegenerateMask { n, masked: n });
    }
    let k = (p * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::DegenerateMask { n, masked: k });
    }
    let mut masked = SeedStream::new(seed).sample_indices(n, k);
    masked.sort_unstable();
    let mut is_masked = vec![false; n];
    masked.iter().for_each(|&i| is_masked[i] = true);
    let visible = (0..n).filter(|&i| !is_masked[i]).collect();
    Ok(MaskSample { visible, masked })
}

/// Frequencies `10000^(-k/m)` for `k < m`.
fn frequencies(m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |k| 10000f64.powf(-(k as f64) / m as f64))
}

/// Fixed 3D sinusoidal code: each axis gets `2 floor(d/6)` channels
/// (sin/cos pairs), remaining channels are zero.
pub fn sinusoidal_3d(coords: &[[usize; 3]], d: usize) -> Array {
    let m = d / 6;
    let mut data = vec![0.0; coords.len() * d];
    for (row, c) in coords.iter().enumerate() {
        let out = &mut data[row * d..(row + 1) * d];
        for axis in 0..3 {
            for (k, w) in frequencies(m).enumerate() {
                let a = c[axis] as f64 * w;
                out[axis * 2 * m + 2 * k] = a.sin();
                out[axis * 2 * m + 2 * k + 1] = a.cos();
            }
        }
    }
    Array::from_parts(vec![coords.len(), d], data)
}

/// Standard 1D sinusoidal code for sequence positions `0..len`.
pub fn sinusoidal_1d(len: usize, d: usize) -> Array {
    let m = d / 2;
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for (k, w) in frequencies(m).enumerate() {
            data[t * d + 2 * k] = (t as f64 * w).sin();
            data[t * d + 2 * k + 1] = (t as f64 * w).cos();
        }
    }
    Array::from_parts(vec![len, d], data)
}
