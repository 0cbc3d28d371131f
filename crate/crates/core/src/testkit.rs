//! Small deterministic fixtures shared by tests, benchmarks and the
//! acceptance suite.

use std::collections::BTreeMap;

use crate::anatomy::{well_known, ClassId};
use crate::error::Result;
use crate::losses::{batch_objective, LossWeights};
use crate::model::{sample_mask, MaskSample, Model, ModelConfig, RegionInput, StudyInput, TextInput};
use crate::rng::SeedStream;
use crate::synth::tokenizer::{BOS, EOS};
use crate::synth::{Grid, MaskVolume, Modality, Volume};
use crate::tensor::{grad_check_with, Array, GradCheckOptions, GradCheckReport};

pub const MICRO_VOCAB: usize = 32;

/// Dims of each micro region: two patches along x.
pub const MICRO_REGION_DIMS: [usize; 3] = [32, 16, 16];

pub fn micro_config() -> ModelConfig {
    ModelConfig::micro(MICRO_VOCAB)
}

/// A region of random CT/PET intensities whose voxels all carry `class`.
pub fn random_region(index: usize, dims: [usize; 3], class: ClassId, cfg: &ModelConfig, seed: u64) -> Result<RegionInput> {
    let grid = Grid::new(dims, [1.0; 3])?;
    let mut r = SeedStream::new(seed);
    let ct = (0..grid.len()).map(|_| r.uniform_range(-900.0, 900.0) as f32).collect();
    let pet = (0..grid.len()).map(|_| r.uniform_range(0.0, 8.0) as f32).collect();
    RegionInput::from_volumes(
        index,
        &Volume::new(grid, Modality::Ct, ct)?,
        &Volume::new(grid, Modality::Pet, pet)?,
        &MaskVolume::new(grid, vec![class; grid.len()])?,
        cfg,
    )
}

/// One micro study: region `k` is dominated by `classes[k]`; the report
/// has random tokens with spans naming the liver, the spleen and the heart.
pub fn micro_study(id: &str, cfg: &ModelConfig, seed: u64) -> Result<StudyInput> {
    let root = SeedStream::new(seed);
    let classes = [well_known::liver(), well_known::spleen()];
    let regions = (0..cfg.regions)
        .map(|k| random_region(k, MICRO_REGION_DIMS, classes[k % 2], cfg, root.split(k as u64).seed()))
        .collect::<Result<Vec<_>>>()?;
    let mut words = root.split_str("text");
    let mut tokens = vec![BOS as usize];
    tokens.extend((0..10).map(|_| words.int_inclusive(4, cfg.vocab_size as i64 - 1) as usize));
    tokens.push(EOS as usize);
    let spans = BTreeMap::from([
        (well_known::liver(), vec![(2, 4)]),
        (well_known::spleen(), vec![(5, 6)]),
        (well_known::heart(), vec![(8, 10)]),
    ]);
    Ok(StudyInput {
        id: id.to_string(),
        regions,
        text: TextInput { tokens, spans },
    })
}

/// Adds `N(0, scale)` noise to every parameter so that zero-initialized
/// gates and layer scales do not hide any path from a gradient check.
pub fn perturb(model: &mut Model, scale: f64, seed: u64) {
    let mut r = SeedStream::new(seed);
    for v in model.params.values_mut() {
        for x in v.data_mut() {
            *x += scale * r.normal();
        }
    }
}

/// A perturbed micro model, two micro studies and their masks.
pub fn micro_batch(seed: u64) -> Result<(Model, Vec<StudyInput>, Vec<Vec<MaskSample>>)> {
    let cfg = micro_config();
    let mut model = Model::new(cfg.clone(), seed)?;
    perturb(&mut model, 0.1, seed + 1);
    let inputs = vec![micro_study("a", &cfg, seed + 2)?, micro_study("b", &cfg, seed + 3)?];
    let masks = inputs
        .iter()
        .enumerate()
        .map(|(s, input)| {
            input
                .regions
                .iter()
                .map(|r| sample_mask(r.len(), cfg.mask_ratio, seed + 10 * s as u64 + r.index as u64))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, inputs, masks))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Mim,
    Lm,
    Gac,
    Anchor,
    Total,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Mim, Term::Lm, Term::Gac, Term::Anchor, Term::Total];

    pub fn name(self) -> &'static str {
        match self {
            Term::Mim => "L_MIM",
            Term::Lm => "L_LM",
            Term::Gac => "L_GAC",
            Term::Anchor => "L_A",
            Term::Total => "L_total",
        }
    }
}

/// Finite-difference check of one objective term with respect to every
/// model parameter.
pub fn objective_grad_check(
    model: &Model,
    inputs: &[StudyInput],
    masks: &[Vec<MaskSample>],
    term: Term,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let weights = LossWeights::default();
    let point: Vec<Array> = model.params.values().to_vec();
    grad_check_with(
        |t, vars| {
            let net = model.bind_vars(vars)?;
            let obj = batch_objective(&net, t, inputs, masks, &weights, false)?;
            Ok(match term {
                Term::Mim => obj.terms[0],
                Term::Lm => obj.terms[1],
                Term::Gac => obj.terms[2],
                Term::Anchor => obj.terms[3],
                Term::Total => obj.total,
            })
        },
        &point,
        opts,
    )
}
