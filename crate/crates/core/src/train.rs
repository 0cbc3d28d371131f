//! Optimizers, the training loop and training-set diagnostics.

use serde::{Deserialize, Serialize};

use crate::anatomy::{Lexicon, BACKGROUND};
use crate::error::{Error, Result};
use crate::losses::{batch_objective, LossReport, LossWeights};
use crate::model::forward::{text_anchors, visual_anchors, ForwardOptions};
use crate::model::network::{Model, RegionInput, StudyInput, TextInput};
use crate::model::{sample_mask, MaskSample, ParamStore};
use crate::partition::{compute_landmarks, partition, PartitionConfig};
use crate::rng::SeedStream;
use crate::synth::Study;
use crate::tensor::{Array, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        momentum: f64,
    },
    /// Adam with decoupled weight decay.
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            lr: 1e-3,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Array>,
    second: Vec<Array>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Array> = params.values().iter().map(|v| Array::zeros(v.shape())).collect();
        let second = match config {
            OptimizerConfig::AdamW { .. } => zeros.clone(),
            OptimizerConfig::Sgd { .. } => vec![],
        };
        Ok(Self {
            config,
            first: zeros,
            second,
            steps: 0,
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Array]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                for ((p, g), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.first) {
                    for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((p, g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((p, &g), m), v) in it {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (weight_decay * *p + (*m / c1) / ((*v / c2).sqrt() + eps));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Partitions a study and converts it into model inputs.
pub fn prepare_study(
    study: &Study,
    model: &crate::model::ModelConfig,
    partition_cfg: &PartitionConfig,
    lexicon: &Lexicon,
) -> Result<StudyInput> {
    let set = partition(study, &compute_landmarks(&study.mask), partition_cfg)?;
    if set.regions.len() != model.regions {
        return Err(Error::Config(format!(
            "partition yields {} regions, model expects {}",
            set.regions.len(),
            model.regions
        )));
    }
    let regions = set
        .regions
        .iter()
        .map(|r| RegionInput::from_region(r, model))
        .collect::<Result<Vec<_>>>()?;
    let text = TextInput::from_report(&study.report, lexicon)?;
    if let Some(bad) = text.tokens.iter().find(|&&k| k >= model.vocab_size) {
        return Err(Error::Config(format!(
            "report token {bad} exceeds model vocabulary of {}",
            model.vocab_size
        )));
    }
    Ok(StudyInput {
        id: study.id.clone(),
        regions,
        text,
    })
}

/// Masks for every region of every study at one step; each region draws
/// from its own stream so the sample does not depend on batch order.
pub fn masks_for_step(seed: u64, step: usize, inputs: &[StudyInput], ratio: f64) -> Result<Vec<Vec<MaskSample>>> {
    let root = SeedStream::new(seed).split_str("mask").split(step as u64);
    inputs
        .iter()
        .map(|s| {
            let study = root.split_str(&s.id);
            s.regions
                .iter()
                .map(|r| sample_mask(r.len(), ratio, study.split(r.index as u64).seed()))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    /// Use unnormalized sums instead of per-unit means.
    #[serde(default)]
    pub raw_sum: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            raw_sum: false,
        }
    }
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    optimizer: Optimizer,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.weights.validate()?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &model.params)?;
        Ok(Self {
            model,
            config,
            optimizer,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Loss report at the current parameters without updating them.
    pub fn evaluate(&self, inputs: &[StudyInput]) -> Result<LossReport> {
        let masks = masks_for_step(self.config.seed, self.step, inputs, self.model.config.mask_ratio)?;
        let mut t = Tape::new();
        let net = self.model.bind_frozen(&mut t);
        let mut r = batch_objective(&net, &mut t, inputs, &masks, &self.config.weights, self.config.raw_sum)?.report;
        r.step = self.step;
        Ok(r)
    }

    /// One gradient step on the whole batch. A non-finite loss or gradient
    /// aborts without touching the parameters.
    pub fn train_step(&mut self, inputs: &[StudyInput]) -> Result<LossReport> {
        let masks = masks_for_step(self.config.seed, self.step, inputs, self.model.config.mask_ratio)?;
        let mut t = Tape::new();
        let (report, grads) = {
            let net = self.model.bind(&mut t);
            let obj = batch_objective(&net, &mut t, inputs, &masks, &self.config.weights, self.config.raw_sum)?;
            let mut report = obj.report;
            report.step = self.step;
            if !report.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {}: {report:?}", self.step)));
            }
            let g = t.backward(obj.total)?;
            let grads: Vec<Array> = net.p.vars().iter().map(|&v| g.get_or_zeros(v, &t)).collect();
            (report, grads)
        };
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {} at step {}",
                self.model.params.names()[i],
                self.step
            )));
        }
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(report)
    }
}

/// Fraction of regions whose classifier argmax equals the region id, using
/// the masks of `step`.
pub fn region_accuracy(model: &Model, inputs: &[StudyInput], seed: u64, step: usize) -> Result<f64> {
    let masks = masks_for_step(seed, step, inputs, model.config.mask_ratio)?;
    let mut t = Tape::new();
    let net = model.bind_frozen(&mut t);
    let opts = ForwardOptions {
        decode_mim: false,
        decode_lm: false,
        ..Default::default()
    };
    let (mut hits, mut total) = (0, 0);
    for (input, m) in inputs.iter().zip(&masks) {
        let fwd = net.forward_study(&mut t, input, m, opts)?;
        for (rf, region) in fwd.regions.iter().zip(&input.regions) {
            let logits = t.value(rf.logits).row(0);
            let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
            hits += usize::from(best == region.index);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Mean cosine similarity of matched and mismatched visual/text anchor pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSimilarity {
    pub matched: f64,
    pub mismatched: f64,
    pub matched_pairs: usize,
    pub mismatched_pairs: usize,
}

impl AnchorSimilarity {
    pub fn separation(&self) -> f64 {
        self.matched - self.mismatched
    }
}

/// Anchor similarities on each study, with every patch visible.
pub fn anchor_similarity(model: &Model, inputs: &[StudyInput]) -> Result<AnchorSimilarity> {
    let mut t = Tape::new();
    let net = model.bind_frozen(&mut t);
    let opts = ForwardOptions {
        decode_mim: false,
        decode_lm: false,
        ..Default::default()
    };
    let (mut m_sum, mut m_n, mut x_sum, mut x_n) = (0.0, 0, 0.0, 0);
    for input in inputs {
        let masks: Vec<MaskSample> = input.regions.iter().map(|r| MaskSample::all_visible(r.len())).collect();
        let fwd = net.forward_study(&mut t, input, &masks, opts)?;
        let Some(e_text) = fwd.text else { continue };
        let vis = visual_anchors(&mut t, &fwd, input, &masks)?;
        let txt = text_anchors(&mut t, e_text, &input.text)?;
        for (c, &v) in &vis {
            if *c == BACKGROUND || !txt.contains_key(c) {
                continue;
            }
            for (c2, &k) in &txt {
                let dot: f64 = t.value(v).data().iter().zip(t.value(k).data()).map(|(a, b)| a * b).sum();
                if c == c2 {
                    m_sum += dot;
                    m_n += 1;
                } else if vis.contains_key(c2) {
                    x_sum += dot;
                    x_n += 1;
                }
            }
        }
    }
    if m_n == 0 || x_n == 0 {
        return Err(Error::Domain("not enough anchored classes to compare".into()));
    }
    Ok(AnchorSimilarity {
        matched: m_sum / m_n as f64,
        mismatched: x_sum / x_n as f64,
        matched_pairs: m_n,
        mismatched_pairs: x_n,
    })
}
