//! Sliding-window whole-volume inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{BinaryMask, Grid, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Gaussian importance centred on each window, `sigma = scale * window`.
    Gaussian { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindow {
    pub window: [usize; 3],
    pub overlap: f64,
    #[serde(default)]
    pub weighting: Weighting,
    pub threshold: f64,
    /// Values used to pad volumes smaller than the window.
    pub pad_ct: f32,
    pub pad_pet: f32,
}

impl Default for SlidingWindow {
    fn default() -> Self {
        Self {
            window: [128; 3],
            overlap: 0.5,
            weighting: Weighting::Uniform,
            threshold: 0.5,
            pad_ct: -1000.0,
            pad_pet: 0.0,
        }
    }
}

/// One window handed to the predictor.
#[derive(Clone, Debug)]
pub struct Window {
    pub origin: [usize; 3],
    pub grid: Grid,
    pub ct: Vec<f32>,
    pub pet: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub windows: usize,
}

impl ProbabilityMap {
    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            voxels: self.values.iter().map(|&p| p >= t).collect(),
        }
    }
}

/// Window start offsets along one axis: multiples of the stride, with the
/// last window clamped to end at the volume edge.
pub fn window_starts(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + window < extent).collect();
    starts.push(extent - window);
    starts.dedup();
    starts
}

impl SlidingWindow {
    pub fn validate(&self) -> Result<()> {
        if self.window.contains(&0) {
            return Err(Error::Config(format!("window {:?} has a zero edge", self.window)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if let Weighting::Gaussian { scale } = self.weighting {
            if !(scale > 0.0) {
                return Err(Error::Config(format!("gaussian scale {scale} must be positive")));
            }
        }
        Ok(())
    }

    pub fn stride(&self) -> [usize; 3] {
        self.window.map(|w| ((w as f64 * (1.0 - self.overlap)).floor() as usize).max(1))
    }

    fn importance(&self) -> Vec<f64> {
        let [wx, wy, wz] = self.window;
        match self.weighting {
            Weighting::Uniform => vec![1.0; wx * wy * wz],
            Weighting::Gaussian { scale } => {
                let axis = |w: usize| -> Vec<f64> {
                    let c = (w as f64 - 1.0) / 2.0;
                    let s = scale * w as f64;
                    (0..w).map(|i| (-(i as f64 - c).powi(2) / (2.0 * s * s)).exp()).collect()
                };
                let (ax, ay, az) = (axis(wx), axis(wy), axis(wz));
                let mut out = Vec::with_capacity(wx * wy * wz);
                for z in &az {
                    for y in &ay {
                        for x in &ax {
                            // Floor keeps window corners from vanishing entirely.
                            out.push((x * y * z).max(1e-6));
                        }
                    }
                }
                out
            }
        }
    }

    /// Stitched per-voxel probabilities. `predict` receives window-sized
    /// CT/PET crops and must return one probability per window voxel.
    pub fn infer<F>(&self, ct: &Volume, pet: &Volume, mut predict: F) -> Result<ProbabilityMap>
    where
        F: FnMut(&Window) -> Result<Vec<f64>>,
    {
        self.validate()?;
        if ct.grid != pet.grid {
            return Err(Error::Consistency("CT and PET grids differ".into()));
        }
        let grid = ct.grid;
        let dims = grid.dims;
        // Axes shorter than the window are padded up to it.
        let padded = [0, 1, 2].map(|a| dims[a].max(self.window[a]));
        let stride = self.stride();
        let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(padded[a], self.window[a], stride[a])).collect();
        let weights = self.importance();
        let wgrid = Grid::new(self.window, grid.spacing)?;
        let mut acc = vec![0.0; grid.len()];
        let mut norm = vec![0.0; grid.len()];
        let mut windows = 0;
        for &z0 in &starts[2] {
            for &y0 in &starts[1] {
                for &x0 in &starts[0] {
                    let origin = [x0, y0, z0];
                    let mut w = Window {
                        origin,
                        grid: wgrid,
                        ct: Vec::with_capacity(wgrid.len()),
                        pet: Vec::with_capacity(wgrid.len()),
                    };
                    for i in 0..wgrid.len() {
                        let [x, y, z] = wgrid.coords(i);
                        let p = [x + x0, y + y0, z + z0];
                        if p[0] < dims[0] && p[1] < dims[1] && p[2] < dims[2] {
                            let j = grid.index(p[0], p[1], p[2]);
                            w.ct.push(ct.values[j]);
                            w.pet.push(pet.values[j]);
                        } else {
                            w.ct.push(self.pad_ct);
                            w.pet.push(self.pad_pet);
                        }
                    }
                    let probs = predict(&w)?;
                    if probs.len() != wgrid.len() {
                        return Err(Error::Contract(format!(
                            "predictor returned {} values for a window of {}",
                            probs.len(),
                            wgrid.len()
                        )));
                    }
                    windows += 1;
                    for (i, (&p, &k)) in probs.iter().zip(&weights).enumerate() {
                        let [x, y, z] = wgrid.coords(i);
                        let q = [x + x0, y + y0, z + z0];
                        if q[0] < dims[0] && q[1] < dims[1] && q[2] < dims[2] {
                            let j = grid.index(q[0], q[1], q[2]);
                            acc[j] += k * p;
                            norm[j] += k;
                        }
                    }
                }
            }
        }
        if let Some(i) = norm.iter().position(|&n| n == 0.0) {
            return Err(Error::Consistency(format!("voxel {:?} not covered by any window", grid.coords(i))));
        }
        let values = acc.iter().zip(&norm).map(|(a, n)| a / n).collect();
        Ok(ProbabilityMap { grid, values, windows })
    }

    /// `infer` followed by thresholding.
    pub fn segment<F>(&self, ct: &Volume, pet: &Volume, predict: F) -> Result<BinaryMask>
    where
        F: FnMut(&Window) -> Result<Vec<f64>>,
    {
        Ok(self.infer(ct, pet, predict)?.threshold(self.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Modality;

    fn pair(dims: [usize; 3]) -> (Volume, Volume) {
        let g = Grid::new(dims, [1.0; 3]).unwrap();
        let ct = (0..g.len()).map(|i| i as f32).collect();
        (
            Volume::new(g, Modality::Ct, ct).unwrap(),
            Volume::filled(g, Modality::Pet, 1.0),
        )
    }

    #[test]
    fn starts_cover_and_clamp() {
        assert_eq!(window_starts(10, 4, 2), vec![0, 2, 4, 6]);
        assert_eq!(window_starts(11, 4, 2), vec![0, 2, 4, 6, 7]);
        assert_eq!(window_starts(4, 4, 2), vec![0]);
        assert_eq!(window_starts(3, 4, 2), vec![0]);
    }

    #[test]
    fn single_window_passes_through() {
        let (ct, pet) = pair([4, 4, 4]);
        let sw = SlidingWindow {
            window: [4; 3],
            ..Default::default()
        };
        let map = sw.infer(&ct, &pet, |w| Ok(w.ct.iter().map(|&v| v as f64 / 64.0).collect())).unwrap();
        assert_eq!(map.windows, 1);
        for (i, &v) in map.values.iter().enumerate() {
            assert_eq!(v, i as f64 / 64.0);
        }
    }

    #[test]
    fn constant_predictor_is_seam_free() {
        let (ct, pet) = pair([9, 7, 5]);
        for weighting in [Weighting::Uniform, Weighting::Gaussian { scale: 0.125 }] {
            let sw = SlidingWindow {
                window: [4, 4, 4],
                weighting,
                ..Default::default()
            };
            let map = sw.infer(&ct, &pet, |w| Ok(vec![0.3; w.grid.len()])).unwrap();
            assert!(map.values.iter().all(|v| (v - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn wrong_output_size_is_a_contract_error() {
        let (ct, pet) = pair([4, 4, 4]);
        let sw = SlidingWindow {
            window: [2; 3],
            ..Default::default()
        };
        assert!(matches!(sw.infer(&ct, &pet, |_| Ok(vec![0.0; 3])), Err(Error::Contract(_))));
    }

    #[test]
    fn small_volumes_are_padded() {
        let (ct, pet) = pair([3, 3, 3]);
        let sw = SlidingWindow {
            window: [4; 3],
            ..Default::default()
        };
        let m = sw
            .segment(&ct, &pet, |w| Ok(w.pet.iter().map(|&v| v as f64).collect()))
            .unwrap();
        assert_eq!(m.count(), 27);
    }
}
