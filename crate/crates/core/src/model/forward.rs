//! Whole-study forward pass and inference helpers.

use std::collections::BTreeMap;

use super::network::{pool_anchor, pool_text_anchor, Global, Model, Net, RegionInput, StudyInput, TextInput};
use super::patch::MaskSample;
use crate::anatomy::{ClassId, BACKGROUND};
use crate::error::{Error, Result};
use crate::synth::tokenizer::{BOS, EOS};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct RegionForward {
    pub f_vis: Var,
    pub f_local: Var,
    /// Full-order reconstructions `[N, 4096]` (CT, PET) when decoding ran.
    pub recon: Option<(Var, Var)>,
    /// Region logits `[1, R]`.
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct StudyForward {
    pub regions: Vec<RegionForward>,
    pub text: Option<Var>,
    pub global: Global,
    /// Teacher-forced next-token logits `[L - 1, V]`.
    pub lm_logits: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Inject the report text into the visual stream.
    pub use_text: bool,
    pub decode_mim: bool,
    pub decode_lm: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            use_text: true,
            decode_mim: true,
            decode_lm: true,
        }
    }
}

impl Net<'_> {
    /// Runs every stage on one study. `masks[i]` applies to `input.regions[i]`.
    pub fn forward_study(
        &self,
        t: &mut Tape,
        input: &StudyInput,
        masks: &[MaskSample],
        opts: ForwardOptions,
    ) -> Result<StudyForward> {
        if masks.len() != input.regions.len() {
            return Err(Error::Contract(format!(
                "{} masks for {} regions",
                masks.len(),
                input.regions.len()
            )));
        }
        for (k, r) in input.regions.iter().enumerate() {
            if r.index != k {
                return Err(Error::Contract(format!("region {k} carries index {}", r.index)));
            }
        }
        let text = if opts.use_text && !input.text.is_empty() {
            Some(self.encode_text(t, &input.text.tokens)?)
        } else {
            None
        };
        let mut regions = Vec::with_capacity(input.regions.len());
        for (region, mask) in input.regions.iter().zip(masks) {
            let f_vis = self.encode_region(t, region, mask)?;
            let f_local = self.inject_text(t, f_vis, text)?;
            let recon = if opts.decode_mim {
                Some(self.decode_mim(t, f_vis, mask, &region.ct.coords)?)
            } else {
                None
            };
            let logits = self.classify_region(t, f_local)?;
            regions.push(RegionForward {
                f_vis,
                f_local,
                recon,
                logits,
            });
        }
        let locals: Vec<Var> = regions.iter().map(|r| r.f_local).collect();
        let global = self.aggregate_global(t, &locals)?;
        let lm_logits = if opts.decode_lm && input.text.tokens.len() >= 2 {
            let prefix = &input.text.tokens[..input.text.tokens.len() - 1];
            Some(self.lm_logits(t, global.sequence, prefix)?)
        } else {
            None
        };
        Ok(StudyForward {
            regions,
            text,
            global,
            lm_logits,
        })
    }
}

/// Per-class visual anchors of a study: regional anchors (mean of visible
/// tokens of that dominant class, normalized) averaged over regions and
/// normalized again. Background is never anchored.
pub fn visual_anchors(
    t: &mut Tape,
    fwd: &StudyForward,
    input: &StudyInput,
    masks: &[MaskSample],
) -> Result<BTreeMap<ClassId, Var>> {
    let mut per_class: BTreeMap<ClassId, Vec<Var>> = BTreeMap::new();
    for ((rf, region), mask) in fwd.regions.iter().zip(&input.regions).zip(masks) {
        let mut rows: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (row, &i) in mask.visible.iter().enumerate() {
            let c = region.classes[i];
            if c != BACKGROUND {
                rows.entry(c).or_default().push(row);
            }
        }
        for (c, rows) in rows {
            if let Some(a) = pool_anchor(t, rf.f_vis, &rows)? {
                per_class.entry(c).or_default().push(a);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (c, parts) in per_class {
        let v = if parts.len() == 1 {
            parts[0]
        } else {
            let stacked = t.concat_rows(&parts)?;
            let m = t.mean_rows(stacked)?;
            t.l2_normalize_rows(m)?
        };
        out.insert(c, v);
    }
    Ok(out)
}

/// Per-class text anchors over all mention spans.
pub fn text_anchors(t: &mut Tape, e_text: Var, text: &TextInput) -> Result<BTreeMap<ClassId, Var>> {
    let mut out = BTreeMap::new();
    for &c in text.spans.keys() {
        if let Some(a) = pool_text_anchor(t, e_text, text, c)? {
            out.insert(c, a);
        }
    }
    Ok(out)
}

impl Model {
    /// Greedy report decoding conditioned on the study's images only.
    pub fn generate(&self, input: &StudyInput, max_len: usize) -> Result<Vec<usize>> {
        let masks: Vec<MaskSample> = input.regions.iter().map(|r| MaskSample::all_visible(r.len())).collect();
        let mut t = Tape::new();
        let net = self.bind_frozen(&mut t);
        let opts = ForwardOptions {
            use_text: false,
            decode_mim: false,
            decode_lm: false,
        };
        let fwd = net.forward_study(&mut t, input, &masks, opts)?;
        let memory = fwd.global.sequence;
        let mut tokens = vec![BOS as usize];
        let base = t.len();
        while tokens.len() < max_len + 1 {
            let logits = net.lm_logits(&mut t, memory, &tokens)?;
            let v = t.value(logits);
            let last = v.row(v.shape()[0] - 1);
            let next = argmax(last);
            t.truncate(base);
            tokens.push(next);
            if next == EOS as usize {
                break;
            }
        }
        Ok(tokens)
    }

    /// Next-token distributions `[L, V]` for `prefix` given a study.
    pub fn next_token_probs(&self, input: &StudyInput, prefix: &[usize]) -> Result<crate::tensor::Array> {
        let masks: Vec<MaskSample> = input.regions.iter().map(|r| MaskSample::all_visible(r.len())).collect();
        let mut t = Tape::new();
        let net = self.bind_frozen(&mut t);
        let opts = ForwardOptions {
            use_text: false,
            decode_mim: false,
            decode_lm: false,
        };
        let fwd = net.forward_study(&mut t, input, &masks, opts)?;
        let logits = net.lm_logits(&mut t, fwd.global.sequence, prefix)?;
        t.value(logits).softmax(1)
    }

    /// Unmasked, text-free encoding of every region; returns the fused
    /// tokens per region as plain arrays.
    pub fn encode_unmasked(&self, regions: &[RegionInput]) -> Result<Vec<crate::tensor::Array>> {
        let mut t = Tape::new();
        let net = self.bind_frozen(&mut t);
        regions
            .iter()
            .map(|r| {
                let f = net.encode_region(&mut t, r, &MaskSample::all_visible(r.len()))?;
                Ok(t.value(f).clone())
            })
            .collect()
    }

    /// Atlas embedding of `class`: mean of the unmasked fused tokens whose
    /// dominant class is `class`, through the organ head. `None` when no
    /// patch is dominated by the class.
    pub fn organ_embedding(&self, regions: &[RegionInput], class: ClassId) -> Result<Option<Vec<f64>>> {
        Ok(self.organ_embeddings(regions, &[class])?.pop().flatten())
    }

    /// [`Model::organ_embedding`] for several classes, encoding once.
    pub fn organ_embeddings(&self, regions: &[RegionInput], classes: &[ClassId]) -> Result<Vec<Option<Vec<f64>>>> {
        let fused = self.encode_unmasked(regions)?;
        let mut t = Tape::new();
        let net = self.bind_frozen(&mut t);
        let mut out = Vec::with_capacity(classes.len());
        for &class in classes {
            let mut rows = Vec::new();
            for (region, f) in regions.iter().zip(&fused) {
                for (i, &c) in region.classes.iter().enumerate() {
                    if c == class {
                        rows.push(f.row(i).to_vec());
                    }
                }
            }
            if rows.is_empty() {
                out.push(None);
                continue;
            }
            let x = t.constant(crate::tensor::Array::from_rows(&rows)?);
            let pooled = t.mean_rows(x)?;
            let e = net.organ_head(&mut t, pooled)?;
            out.push(Some(t.value(e).data().to_vec()));
        }
        Ok(out)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
