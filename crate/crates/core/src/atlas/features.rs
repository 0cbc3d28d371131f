//! Per-subject organ features.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::anatomy::ClassId;
use crate::error::{Error, Result};
use crate::model::{Model, RegionInput};
use crate::partition::{compute_landmarks, partition, PartitionConfig};
use crate::synth::{MaskVolume, Study, Volume};

/// Mean PET value over the voxels labelled `class`; `None` when the organ
/// has no voxels.
pub fn organ_suv_mean(pet: &Volume, mask: &MaskVolume, class: ClassId) -> Result<Option<f64>> {
    if pet.grid != mask.grid {
        return Err(Error::Consistency("PET and mask grids differ".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (&v, &l) in pet.values.iter().zip(&mask.labels) {
        if l == class {
            sum += v as f64;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Subjects x organs scalar features; `None` marks an absent organ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganFeatureMatrix {
    pub organs: Vec<ClassId>,
    pub subjects: Vec<String>,
    pub ages: Vec<f64>,
    /// `values[s][o]`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Organs dropped by [`OrganFeatureMatrix::exclude_organs`], in order.
    #[serde(default)]
    pub excluded: Vec<ClassId>,
}

impl OrganFeatureMatrix {
    pub fn new(organs: Vec<ClassId>, subjects: Vec<String>, ages: Vec<f64>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if subjects.len() != ages.len() || subjects.len() != values.len() {
            return Err(Error::Consistency(format!(
                "{} subjects, {} ages, {} feature rows",
                subjects.len(),
                ages.len(),
                values.len()
            )));
        }
        if let Some(row) = values.iter().find(|r| r.len() != organs.len()) {
            return Err(Error::Consistency(format!(
                "feature row of {} values for {} organs",
                row.len(),
                organs.len()
            )));
        }
        Ok(Self {
            organs,
            subjects,
            ages,
            values,
            excluded: vec![],
        })
    }

    /// SUVmean of every organ in every study.
    pub fn suv_means(studies: &[Study], organs: &[ClassId]) -> Result<Self> {
        let values = studies
            .iter()
            .map(|s| organs.iter().map(|&c| organ_suv_mean(&s.pet, &s.mask, c)).collect())
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            organs.to_vec(),
            studies.iter().map(|s| s.id.clone()).collect(),
            studies.iter().map(|s| s.subject_age).collect(),
            values,
        )
    }

    pub fn column(&self, organ: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|r| r[organ]).collect()
    }

    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.organs.iter().position(|&c| c == class)
    }

    /// Rows `idx`, in that order.
    pub fn select_subjects(&self, idx: &[usize]) -> Self {
        Self {
            organs: self.organs.clone(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            ages: idx.iter().map(|&i| self.ages[i]).collect(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
            excluded: self.excluded.clone(),
        }
    }

    /// Drops the columns of `classes`, recording them in `excluded`.
    pub fn exclude_organs(&self, classes: &[ClassId]) -> Result<Self> {
        let drop = exclusion_mask(&self.organs, classes)?;
        let keep: Vec<usize> = (0..self.organs.len()).filter(|&i| !drop[i]).collect();
        let mut excluded = self.excluded.clone();
        excluded.extend_from_slice(classes);
        Ok(Self {
            organs: keep.iter().map(|&i| self.organs[i]).collect(),
            subjects: self.subjects.clone(),
            ages: self.ages.clone(),
            values: self.values.iter().map(|r| keep.iter().map(|&i| r[i]).collect()).collect(),
            excluded,
        })
    }

    /// CSV with one row per subject; absent organs are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,age");
        for c in &self.organs {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for ((s, a), row) in self.subjects.iter().zip(&self.ages).zip(&self.values) {
            out.push_str(&format!("{s},{a}"));
            for v in row {
                match v {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `true` for every organ listed in `classes`; errors on unknown classes or
/// when nothing would remain.
pub(crate) fn exclusion_mask(organs: &[ClassId], classes: &[ClassId]) -> Result<Vec<bool>> {
    if let Some(&c) = classes.iter().find(|c| !organs.contains(c)) {
        return Err(Error::UnknownClass(c));
    }
    let drop: Vec<bool> = organs.iter().map(|c| classes.contains(c)).collect();
    if drop.iter().all(|&d| d) {
        return Err(Error::Domain("excluding every organ leaves nothing to analyse".into()));
    }
    Ok(drop)
}

/// Subjects x organs embedding features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganEmbeddings {
    pub organs: Vec<ClassId>,
    pub subjects: Vec<String>,
    pub ages: Vec<f64>,
    /// `values[s][o]` is the organ embedding, if the organ was seen.
    pub values: Vec<Vec<Option<Vec<f64>>>>,
}

impl OrganEmbeddings {
    /// Embeddings of `organs` in every study, from the unmasked encoder.
    pub fn extract(model: &Model, studies: &[Study], organs: &[ClassId], partition_cfg: &PartitionConfig) -> Result<Self> {
        let mut values = Vec::with_capacity(studies.len());
        for s in studies {
            let set = partition(s, &compute_landmarks(&s.mask), partition_cfg)?;
            let regions = set
                .regions
                .iter()
                .map(|r| RegionInput::from_region(r, &model.config))
                .collect::<Result<Vec<_>>>()?;
            values.push(model.organ_embeddings(&regions, organs)?);
        }
        Ok(Self {
            organs: organs.to_vec(),
            subjects: studies.iter().map(|s| s.id.clone()).collect(),
            ages: studies.iter().map(|s| s.subject_age).collect(),
            values,
        })
    }

    /// Reduces each organ to its projection on the first principal
    /// component of that organ's embeddings across subjects. The sign is
    /// fixed so that the component's coordinates sum to a non-negative value.
    pub fn first_component(&self) -> Result<OrganFeatureMatrix> {
        let mut columns = Vec::with_capacity(self.organs.len());
        for o in 0..self.organs.len() {
            let present: Vec<(usize, &Vec<f64>)> = self
                .values
                .iter()
                .enumerate()
                .filter_map(|(s, r)| r[o].as_ref().map(|v| (s, v)))
                .collect();
            let mut col = vec![None; self.subjects.len()];
            if present.len() >= 2 {
                let dim = present[0].1.len();
                if present.iter().any(|(_, v)| v.len() != dim) {
                    return Err(Error::Consistency(format!("organ {} has mixed embedding widths", self.organs[o])));
                }
                let n = present.len();
                let mut mean = vec![0.0; dim];
                for (_, v) in &present {
                    for (m, x) in mean.iter_mut().zip(v.iter()) {
                        *m += x / n as f64;
                    }
                }
                let centered = DMatrix::from_fn(n, dim, |i, j| present[i].1[j] - mean[j]);
                let cov = centered.transpose() * &centered / (n as f64 - 1.0);
                let eig = SymmetricEigen::new(cov);
                let top = eig.eigenvalues.imax();
                let mut axis = eig.eigenvectors.column(top).into_owned();
                if axis.sum() < 0.0 {
                    axis = -axis;
                }
                let scores = centered * axis;
                for (k, (s, _)) in present.iter().enumerate() {
                    col[*s] = Some(scores[k]);
                }
            }
            columns.push(col);
        }
        let values = (0..self.subjects.len())
            .map(|s| columns.iter().map(|c| c[s]).collect())
            .collect();
        OrganFeatureMatrix::new(self.organs.clone(), self.subjects.clone(), self.ages.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Grid, Modality};

    #[test]
    fn suv_mean_cases() {
        let g = Grid::new([4, 1, 1], [1.0; 3]).unwrap();
        let pet = Volume::new(g, Modality::Pet, vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let mask = MaskVolume::new(g, vec![5, 5, 7, 7]).unwrap();
        assert_eq!(organ_suv_mean(&pet, &mask, 5).unwrap(), Some(2.0));
        assert_eq!(organ_suv_mean(&pet, &mask, 7).unwrap(), Some(2.0));
        assert_eq!(organ_suv_mean(&pet, &mask, 9).unwrap(), None);
        let other = MaskVolume::background(Grid::new([2, 2, 1], [1.0; 3]).unwrap());
        assert!(organ_suv_mean(&pet, &other, 5).is_err());
    }

    #[test]
    fn exclusion() {
        let m = OrganFeatureMatrix::new(
            vec![1, 2, 3],
            vec!["a".into()],
            vec![30.0],
            vec![vec![Some(1.0), None, Some(3.0)]],
        )
        .unwrap();
        let r = m.exclude_organs(&[2]).unwrap();
        assert_eq!(r.organs, vec![1, 3]);
        assert_eq!(r.values, vec![vec![Some(1.0), Some(3.0)]]);
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(m.exclude_organs(&[]).unwrap().organs, m.organs);
        assert!(matches!(m.exclude_organs(&[9]), Err(Error::UnknownClass(9))));
        assert!(m.exclude_organs(&[1, 2, 3]).is_err());
    }

    #[test]
    fn first_component_of_a_line() {
        // Embeddings on the line t * (1, 2): the component recovers t up to scale.
        let ts = [-1.0, 0.0, 2.0, 3.0];
        let e = OrganEmbeddings {
            organs: vec![4],
            subjects: (0..4).map(|i| i.to_string()).collect(),
            ages: vec![20.0; 4],
            values: ts.iter().map(|&t| vec![Some(vec![t, 2.0 * t])]).collect(),
        };
        let m = e.first_component().unwrap();
        let s: Vec<f64> = m.column(0).into_iter().map(Option::unwrap).collect();
        let mean_t = ts.iter().sum::<f64>() / 4.0;
        for (x, t) in s.iter().zip(ts) {
            assert!((x - (t - mean_t) * 5f64.sqrt()).abs() < 1e-9);
        }
    }
}
