//! Lesion-level segmentation scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{label_components, Connectivity};
use crate::synth::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dsc: f64,
    /// Missed ground-truth volume, ml.
    pub fnv: f64,
    /// Spurious predicted volume, ml.
    pub fpv: f64,
    /// Both masks were empty and `dsc` is 1 by convention.
    pub dsc_both_empty: bool,
}

fn same_grid(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.grid != gt.grid {
        return Err(Error::Consistency(format!(
            "prediction grid {:?}/{:?} differs from ground truth {:?}/{:?}",
            pred.grid.dims, pred.grid.spacing, gt.grid.dims, gt.grid.spacing
        )));
    }
    Ok(())
}

/// Dice coefficient and whether both masks were empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, bool)> {
    same_grid(pred, gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.voxels.iter().zip(&gt.voxels) {
        inter += usize::from(a && b);
        p += usize::from(a);
        g += usize::from(b);
    }
    if p + g == 0 {
        return Ok((1.0, true));
    }
    Ok((2.0 * inter as f64 / (p + g) as f64, false))
}

pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(dice(pred, gt)?.0)
}

/// Volume (ml) of the components of `a` that share no voxel with `b`.
fn untouched_volume(a: &BinaryMask, b: &BinaryMask, conn: Connectivity) -> f64 {
    let comps = label_components(a.grid.dims, &a.voxels, conn);
    let mut touched = vec![false; comps.count()];
    for (i, &l) in comps.labels.iter().enumerate() {
        if l != 0 && b.voxels[i] {
            touched[l as usize - 1] = true;
        }
    }
    let voxels: usize = comps
        .sizes
        .iter()
        .zip(&touched)
        .filter(|(_, &t)| !t)
        .map(|(s, _)| s)
        .sum();
    voxels as f64 * a.grid.voxel_ml()
}

/// False-negative volume: ground-truth components the prediction misses entirely.
pub fn fnv_with(pred: &BinaryMask, gt: &BinaryMask, conn: Connectivity) -> Result<f64> {
    same_grid(pred, gt)?;
    Ok(untouched_volume(gt, pred, conn))
}

/// False-positive volume: predicted components disjoint from the ground truth.
pub fn fpv_with(pred: &BinaryMask, gt: &BinaryMask, conn: Connectivity) -> Result<f64> {
    same_grid(pred, gt)?;
    Ok(untouched_volume(pred, gt, conn))
}

pub fn fnv(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    fnv_with(pred, gt, Connectivity::TwentySix)
}

pub fn fpv(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    fpv_with(pred, gt, Connectivity::TwentySix)
}

pub fn score(pred: &BinaryMask, gt: &BinaryMask, conn: Connectivity) -> Result<SegScores> {
    let (dsc, dsc_both_empty) = dice(pred, gt)?;
    Ok(SegScores {
        dsc,
        fnv: fnv_with(pred, gt, conn)?,
        fpv: fpv_with(pred, gt, conn)?,
        dsc_both_empty,
    })
}
