//! Synthetic healthy cohorts with a known organ-uptake covariance.
//!
//! Organ `i` of a subject aged `a` receives uptake
//!
//! ```text
//! u_i = base_i + slope_i * (a - reference_age) + sum_k L[k][i] * f_k + sd_i * e_i
//! ```
//!
//! with `f_k, e_i ~ N(0, 1)`, so the uptake covariance is
//! `Var(a) slope slope^T + L^T L + diag(sd^2)`; voxel noise adds
//! `pet_noise^2 / n_voxels_i` to the SUVmean variance of organ `i`.

use serde::{Deserialize, Serialize};

use super::phantom::{generate_with_uptakes, PhantomConfig};
use super::volume::Study;
use crate::anatomy::ClassId;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectModel {
    /// Uptake change per year of age, per organ (phantom listing order).
    pub age_slopes: Vec<f64>,
    /// Shared latent factors: `loadings[k][i]` couples factor `k` to organ `i`.
    pub loadings: Vec<Vec<f64>>,
    /// Idiosyncratic standard deviation per organ.
    pub noise_sd: Vec<f64>,
    pub reference_age: f64,
}

impl EffectModel {
    /// No age effect, no shared factors, no idiosyncratic noise.
    pub fn null(organs: usize) -> Self {
        Self {
            age_slopes: vec![0.0; organs],
            loadings: vec![],
            noise_sd: vec![0.0; organs],
            reference_age: 47.0,
        }
    }

    /// Independent organs with unit-free spread `sd`.
    pub fn independent(organs: usize, sd: f64) -> Self {
        Self {
            noise_sd: vec![sd; organs],
            ..Self::null(organs)
        }
    }

    fn validate(&self, organs: usize) -> Result<()> {
        let bad = self.age_slopes.len() != organs
            || self.noise_sd.len() != organs
            || self.loadings.iter().any(|l| l.len() != organs);
        if bad {
            return Err(Error::Config(format!("effect model does not cover {organs} organs")));
        }
        if self.noise_sd.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("negative noise sd".into()));
        }
        Ok(())
    }

    /// Analytic covariance of organ uptakes for ages uniform on the integers in `age_range`.
    pub fn uptake_covariance(&self, age_range: (u32, u32)) -> Vec<Vec<f64>> {
        let n = self.age_slopes.len();
        let span = (age_range.1 - age_range.0 + 1) as f64;
        let age_var = (span * span - 1.0) / 12.0;
        let mut cov = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut c = age_var * self.age_slopes[i] * self.age_slopes[j];
                c += self.loadings.iter().map(|l| l[i] * l[j]).sum::<f64>();
                if i == j {
                    c += self.noise_sd[i] * self.noise_sd[i];
                }
                cov[i][j] = c;
            }
        }
        cov
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    /// Inclusive integer age range.
    pub age_range: (u32, u32),
    pub phantom: PhantomConfig,
    pub effect: EffectModel,
}

impl CohortConfig {
    pub fn organs(&self) -> Vec<ClassId> {
        self.phantom.organs.iter().map(|o| o.class).collect()
    }

    /// Analytic covariance of organ SUVmeans, including voxel-noise averaging.
    pub fn suv_covariance(&self) -> Result<Vec<Vec<f64>>> {
        let mut cov = self.effect.uptake_covariance(self.age_range);
        let labels = self.phantom.labels()?;
        for (i, o) in self.phantom.organs.iter().enumerate() {
            let count = labels.labels.iter().filter(|&&l| l == o.class).count();
            if count > 0 {
                cov[i][i] += self.phantom.pet_noise.powi(2) / count as f64;
            }
        }
        Ok(cov)
    }
}

/// Studies plus the realized implant, for oracle comparison.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub studies: Vec<Study>,
    pub config: CohortConfig,
    /// Realized organ uptakes per subject, before voxel noise.
    pub uptakes: Vec<Vec<f64>>,
}

pub fn make_cohort(seed: u64, config: &CohortConfig) -> Result<Cohort> {
    if config.n < 2 {
        return Err(Error::Config(format!("cohort needs n >= 2, got {}", config.n)));
    }
    let (lo, hi) = config.age_range;
    if lo > hi {
        return Err(Error::Config(format!("empty age range [{lo}, {hi}]")));
    }
    config.phantom.validate()?;
    let organs = config.phantom.organs.len();
    config.effect.validate(organs)?;

    let root = SeedStream::new(seed);
    let mut studies = Vec::with_capacity(config.n);
    let mut realized = Vec::with_capacity(config.n);
    for s in 0..config.n {
        let mut r = root.split(s as u64);
        let age = r.int_inclusive(lo as i64, hi as i64) as f64;
        let factors: Vec<f64> = config.effect.loadings.iter().map(|_| r.normal()).collect();
        let uptakes: Vec<f64> = (0..organs)
            .map(|i| {
                let e = &config.effect;
                config.phantom.organs[i].uptake
                    + e.age_slopes[i] * (age - e.reference_age)
                    + e.loadings.iter().zip(&factors).map(|(l, f)| l[i] * f).sum::<f64>()
                    + e.noise_sd[i] * r.normal()
            })
            .collect();
        let mut study = generate_with_uptakes(r.next_u64(), &config.phantom, Some(&uptakes), age)?;
        study.id = format!("subject-{s:04}");
        studies.push(study);
        realized.push(uptakes);
    }
    Ok(Cohort {
        studies,
        config: config.clone(),
        uptakes: realized,
    })
}

/// Age strata sizes of the reference healthy cohort: young, middle, old.
pub const REFERENCE_STRATA: [((u32, u32), usize); 3] = [((12, 45), 30), ((46, 65), 105), ((66, 82), 46)];

/// One cohort per reference stratum, each with its own effect model.
pub fn make_stratified_cohort(
    seed: u64,
    phantom: &PhantomConfig,
    effects: [&EffectModel; 3],
) -> Result<Vec<Cohort>> {
    let root = SeedStream::new(seed);
    REFERENCE_STRATA
        .iter()
        .zip(effects)
        .enumerate()
        .map(|(k, ((range, n), effect))| {
            let cfg = CohortConfig {
                n: *n,
                age_range: *range,
                phantom: phantom.clone(),
                effect: effect.clone(),
            };
            let mut c = make_cohort(root.split(k as u64).seed(), &cfg)?;
            for s in &mut c.studies {
                s.id = format!("stratum{k}-{}", s.id);
            }
            Ok(c)
        })
        .collect()
}
