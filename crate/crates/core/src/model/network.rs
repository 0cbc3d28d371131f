//! Parameter layout and forward passes of the network.
//!
//! Per region, CT and PET patches are embedded by modality-specific
//! projections and run through two encoder streams that exchange
//! information through gated cross-attention (CMIM) at fixed depths. The
//! streams are fused by a learned gate, enriched with report text through
//! cross-attention, tagged with a region embedding and aggregated across
//! regions (GAA). Two decoders read the result: a masked-patch
//! reconstruction decoder and a causal report decoder.

use std::collections::BTreeMap;

use super::config::ModelConfig;
use super::layers::{self, attention, attention_with_weights, block, init_block, layer_norm, linear, BlockSpec};
use super::params::{Bound, Init, ParamStore};
use super::patch::{dominant_classes, patchify, sinusoidal_1d, sinusoidal_3d, MaskSample, Patches};
use crate::anatomy::{ClassId, Lexicon};
use crate::error::{Error, Result};
use crate::partition::Region;
use crate::rng::SeedStream;
use crate::synth::tokenizer::{split_words, BOS, EOS};
use crate::synth::{MaskVolume, Modality, Report, Volume};
use crate::tensor::{Array, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn stream(m: Modality) -> &'static str {
    match m {
        Modality::Ct => "ct",
        Modality::Pet => "pet",
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = SeedStream::new(seed);
        let s = &mut ParamStore::new();
        let c = &config;
        let d = c.embed_dim;
        let plain = block_spec(c, false, false);

        for m in [Modality::Ct, Modality::Pet] {
            let name = stream(m);
            layers::init_linear(s, &r, &format!("embed.{name}"), c.patch_voxels(), d)?;
            for i in 0..c.encoder_depth {
                init_block(s, &r, &format!("enc.{name}.{i}"), plain)?;
            }
            layers::init_layer_norm(s, &r, &format!("enc.{name}.norm"), d)?;
        }
        for k in 0..c.cmim_blocks().len() {
            for name in ["ct", "pet"] {
                let prefix = format!("cmim.{k}.{name}");
                layers::init_layer_norm(s, &r, &format!("{prefix}.ln_q"), d)?;
                layers::init_layer_norm(s, &r, &format!("{prefix}.ln_kv"), d)?;
                layers::init_attention(s, &r, &format!("{prefix}.attn"), d)?;
                s.init(&r, &format!("{prefix}.gate"), &[1], Init::Zeros)?;
            }
        }
        s.init(&r, "fuse.w", &[1], Init::Zeros)?;

        s.init(&r, "text.embed", &[c.vocab_size, d], Init::FanIn)?;
        for i in 0..c.text_depth {
            init_block(s, &r, &format!("text.{i}"), plain)?;
        }
        layers::init_layer_norm(s, &r, "text.norm", d)?;
        layers::init_attention(s, &r, "inject.attn", d)?;

        s.init(&r, "gaa.region_embed", &[c.regions, d], Init::FanIn)?;
        for i in 0..c.gaa_depth {
            init_block(s, &r, &format!("gaa.{i}"), block_spec(c, false, true))?;
        }

        layers::init_linear(s, &r, "dec.embed", d, d)?;
        s.init(&r, "dec.mask_token", &[1, d], Init::FanIn)?;
        for i in 0..c.decoder_depth {
            init_block(s, &r, &format!("dec.{i}"), plain)?;
        }
        layers::init_layer_norm(s, &r, "dec.norm", d)?;
        layers::init_linear(s, &r, "dec.head.ct", d, c.patch_voxels())?;
        layers::init_linear(s, &r, "dec.head.pet", d, c.patch_voxels())?;

        s.init(&r, "lm.embed", &[c.vocab_size, d], Init::FanIn)?;
        for i in 0..c.lm_depth {
            init_block(s, &r, &format!("lm.{i}"), block_spec(c, true, false))?;
        }
        layers::init_layer_norm(s, &r, "lm.norm", d)?;
        layers::init_linear(s, &r, "lm.head", d, c.vocab_size)?;

        layers::init_linear(s, &r, "cls.head", d, c.regions)?;
        layers::init_linear(s, &r, "atlas.head", d, c.organ_embedding_dim)?;

        Ok(Self {
            params: std::mem::take(s),
            config,
        })
    }

    /// Parameters as differentiable leaves.
    pub fn bind<'a>(&'a self, t: &mut Tape) -> Net<'a> {
        Net {
            cfg: &self.config,
            p: self.params.bind(t),
        }
    }

    /// Parameters as constants, for inference.
    pub fn bind_frozen<'a>(&'a self, t: &mut Tape) -> Net<'a> {
        Net {
            cfg: &self.config,
            p: self.params.bind_frozen(t),
        }
    }

    pub fn bind_vars<'a>(&'a self, vars: &[Var]) -> Result<Net<'a>> {
        Ok(Net {
            cfg: &self.config,
            p: self.params.bind_vars(vars)?,
        })
    }
}

fn block_spec(c: &ModelConfig, cross: bool, layer_scale: bool) -> BlockSpec {
    BlockSpec {
        d: c.embed_dim,
        heads: c.heads,
        mlp_ratio: c.mlp_ratio,
        eps: c.layer_norm_eps,
        cross,
        layer_scale,
    }
}

/// Patches of one region for both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionInput {
    pub index: usize,
    pub ct: Patches,
    pub pet: Patches,
    /// Dominant mask class per patch.
    pub classes: Vec<ClassId>,
}

impl RegionInput {
    pub fn from_volumes(
        index: usize,
        ct: &Volume,
        pet: &Volume,
        mask: &MaskVolume,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        if ct.grid != pet.grid || ct.grid != mask.grid {
            return Err(Error::Consistency(format!("region {index}: component grids differ")));
        }
        if ct.modality != Modality::Ct || pet.modality != Modality::Pet {
            return Err(Error::Contract("region volumes must be CT then PET".into()));
        }
        Ok(Self {
            index,
            ct: patchify(ct, &cfg.normalization)?,
            pet: patchify(pet, &cfg.normalization)?,
            classes: dominant_classes(mask)?,
        })
    }

    pub fn from_region(region: &Region, cfg: &ModelConfig) -> Result<Self> {
        Self::from_volumes(region.index, &region.ct, &region.pet, &region.mask, cfg)
    }

    pub fn len(&self) -> usize {
        self.ct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ct.is_empty()
    }
}

/// Report tokens and the token ranges naming each class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextInput {
    /// `[BOS, .., EOS]`.
    pub tokens: Vec<usize>,
    /// Half-open token ranges per mentioned class.
    pub spans: BTreeMap<ClassId, Vec<(usize, usize)>>,
}

impl TextInput {
    pub fn from_report(report: &Report, lexicon: &Lexicon) -> Result<Self> {
        let words = split_words(&report.text);
        if report.tokens.len() != words.len() + 2 {
            return Err(Error::Consistency(format!(
                "report has {} words but {} tokens",
                words.len(),
                report.tokens.len()
            )));
        }
        let mut spans: BTreeMap<ClassId, Vec<(usize, usize)>> = BTreeMap::new();
        for (class, a, b) in lexicon.scan(&words) {
            // Word i is token i + 1 because of the leading BOS.
            spans.entry(class).or_default().push((a + 1, b + 1));
        }
        Ok(Self {
            tokens: report.tokens.iter().map(|&t| t as usize).collect(),
            spans,
        })
    }

    /// True when the report holds no words.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// The empty report `[BOS, EOS]`.
    pub fn empty() -> Self {
        Self {
            tokens: vec![BOS as usize, EOS as usize],
            spans: BTreeMap::new(),
        }
    }
}

/// Model-ready form of one study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyInput {
    pub id: String,
    pub regions: Vec<RegionInput>,
    pub text: TextInput,
}

/// Outputs of the global aggregation.
#[derive(Clone, Copy, Debug)]
pub struct Global {
    /// Contextualized concatenation of all regional tokens.
    pub sequence: Var,
    /// Mean-pooled whole-body feature, `[1, d]`.
    pub whole: Var,
}

/// A model bound to one tape.
pub struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub p: Bound<'a>,
}

impl Net<'_> {
    fn eps(&self) -> f64 {
        self.cfg.layer_norm_eps
    }

    /// Projection of the visible patches plus their positional code.
    pub fn embed_tokens(&self, t: &mut Tape, modality: Modality, patches: &Patches, visible: &[usize]) -> Result<Var> {
        if visible.is_empty() {
            return Err(Error::Contract("no visible tokens to embed".into()));
        }
        let width = patches.vectors.shape()[1];
        let mut rows = Vec::with_capacity(visible.len() * width);
        let mut coords = Vec::with_capacity(visible.len());
        for &i in visible {
            if i >= patches.len() {
                return Err(Error::Contract(format!("visible index {i} out of {} patches", patches.len())));
            }
            rows.extend_from_slice(patches.vectors.row(i));
            coords.push(patches.coords[i]);
        }
        let x = t.constant(Array::new(vec![visible.len(), width], rows)?);
        let z = linear(t, &self.p, &format!("embed.{}", stream(modality)), x)?;
        t.add_const(z, &sinusoidal_3d(&coords, self.cfg.embed_dim))
    }

    fn encoder_block(&self, t: &mut Tape, modality: Modality, i: usize, x: Var) -> Result<Var> {
        let spec = block_spec(self.cfg, false, false);
        block(t, &self.p, &format!("enc.{}.{i}", stream(modality)), spec, x, false, None)
    }

    fn encoder_norm(&self, t: &mut Tape, modality: Modality, x: Var) -> Result<Var> {
        layer_norm(t, &self.p, &format!("enc.{}.norm", stream(modality)), x, self.eps())
    }

    /// One encoder stream without cross-modal interaction.
    pub fn encode_stream(&self, t: &mut Tape, modality: Modality, z: Var) -> Result<Var> {
        let mut x = z;
        for i in 0..self.cfg.encoder_depth {
            x = self.encoder_block(t, modality, i, x)?;
        }
        self.encoder_norm(t, modality, x)
    }

    /// `x + tanh(g) * Attn(Q = x, K = V = other)` for the stream named `name`.
    fn cmim(&self, t: &mut Tape, k: usize, name: &str, x: Var, other: Var) -> Result<Var> {
        let prefix = format!("cmim.{k}.{name}");
        let q = layer_norm(t, &self.p, &format!("{prefix}.ln_q"), x, self.eps())?;
        let kv = layer_norm(t, &self.p, &format!("{prefix}.ln_kv"), other, self.eps())?;
        let a = attention(t, &self.p, &format!("{prefix}.attn"), q, kv, self.cfg.heads, false)?;
        let g = t.tanh(self.p.var(&format!("{prefix}.gate"))?);
        let a = t.scale_by(a, g)?;
        t.add(x, a)
    }

    /// Both encoder streams with CMIM after the configured blocks.
    pub fn encode_dual(&self, t: &mut Tape, z_ct: Var, z_pet: Var) -> Result<(Var, Var)> {
        if t.shape(z_ct) != t.shape(z_pet) {
            return Err(Error::Contract(format!(
                "stream token shapes differ: {:?} vs {:?}",
                t.shape(z_ct),
                t.shape(z_pet)
            )));
        }
        let cmim = self.cfg.cmim_blocks();
        let (mut ct, mut pet) = (z_ct, z_pet);
        for i in 0..self.cfg.encoder_depth {
            ct = self.encoder_block(t, Modality::Ct, i, ct)?;
            pet = self.encoder_block(t, Modality::Pet, i, pet)?;
            if let Some(k) = cmim.iter().position(|&b| b == i + 1) {
                let new_ct = self.cmim(t, k, "ct", ct, pet)?;
                let new_pet = self.cmim(t, k, "pet", pet, ct)?;
                (ct, pet) = (new_ct, new_pet);
            }
        }
        Ok((self.encoder_norm(t, Modality::Ct, ct)?, self.encoder_norm(t, Modality::Pet, pet)?))
    }

    /// `F_CT + sigmoid(w) F_PET`.
    pub fn fuse_streams(&self, t: &mut Tape, f_ct: Var, f_pet: Var) -> Result<Var> {
        let w = t.sigmoid(self.p.var("fuse.w")?);
        let pet = t.scale_by(f_pet, w)?;
        t.add(f_ct, pet)
    }

    /// Fused visual tokens of the visible patches of one region.
    pub fn encode_region(&self, t: &mut Tape, region: &RegionInput, mask: &MaskSample) -> Result<Var> {
        mask.check(region.len())?;
        let z_ct = self.embed_tokens(t, Modality::Ct, &region.ct, &mask.visible)?;
        let z_pet = self.embed_tokens(t, Modality::Pet, &region.pet, &mask.visible)?;
        let (f_ct, f_pet) = self.encode_dual(t, z_ct, z_pet)?;
        self.fuse_streams(t, f_ct, f_pet)
    }

    /// Bidirectional encoder over the report tokens, `[L, d]`.
    pub fn encode_text(&self, t: &mut Tape, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if let Some(bad) = tokens.iter().find(|&&k| k >= self.cfg.vocab_size) {
            return Err(Error::Contract(format!("token {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        let e = t.gather_rows(self.p.var("text.embed")?, tokens)?;
        let mut x = t.add_const(e, &sinusoidal_1d(tokens.len(), self.cfg.embed_dim))?;
        let spec = block_spec(self.cfg, false, false);
        for i in 0..self.cfg.text_depth {
            x = block(t, &self.p, &format!("text.{i}"), spec, x, false, None)?;
        }
        layer_norm(t, &self.p, "text.norm", x, self.eps())
    }

    /// `F_local = MHA(F_vis, E_text, E_text) + F_vis`; no text means `F_local = F_vis`.
    pub fn inject_text(&self, t: &mut Tape, f_vis: Var, e_text: Option<Var>) -> Result<Var> {
        Ok(self.inject_text_with_weights(t, f_vis, e_text)?.0)
    }

    pub fn inject_text_with_weights(&self, t: &mut Tape, f_vis: Var, e_text: Option<Var>) -> Result<(Var, Vec<Var>)> {
        match e_text {
            None => Ok((f_vis, vec![])),
            Some(e) => {
                let (a, w) = attention_with_weights(t, &self.p, "inject.attn", f_vis, e, self.cfg.heads, false)?;
                Ok((t.add(a, f_vis)?, w))
            }
        }
    }

    /// Concatenates regional features in canonical order, tags each token
    /// with its region embedding and runs the aggregation stack.
    pub fn aggregate_global(&self, t: &mut Tape, locals: &[Var]) -> Result<Global> {
        if locals.len() != self.cfg.regions {
            return Err(Error::Contract(format!(
                "expected {} regional feature sets, got {}",
                self.cfg.regions,
                locals.len()
            )));
        }
        let table = self.p.var("gaa.region_embed")?;
        let mut tagged = Vec::with_capacity(locals.len());
        for (r, &f) in locals.iter().enumerate() {
            let e = t.gather_rows(table, &[r])?;
            tagged.push(t.add_row(f, e)?);
        }
        let mut x = t.concat_rows(&tagged)?;
        let spec = block_spec(self.cfg, false, true);
        for i in 0..self.cfg.gaa_depth {
            x = block(t, &self.p, &format!("gaa.{i}"), spec, x, false, None)?;
        }
        let whole = t.mean_rows(x)?;
        Ok(Global { sequence: x, whole })
    }

    /// Reconstructs every patch of a region from its visible fused tokens.
    /// Returns `([N, 4096], [N, 4096])` for CT and PET.
    pub fn decode_mim(&self, t: &mut Tape, f_vis: Var, mask: &MaskSample, coords: &[[usize; 3]]) -> Result<(Var, Var)> {
        let n = coords.len();
        mask.check(n)?;
        if t.shape(f_vis)[0] != mask.visible.len() {
            return Err(Error::Contract(format!(
                "{} visual tokens for {} visible patches",
                t.shape(f_vis)[0],
                mask.visible.len()
            )));
        }
        let h = linear(t, &self.p, "dec.embed", f_vis)?;
        let seq = if mask.masked.is_empty() {
            h
        } else {
            let fill = t.gather_rows(self.p.var("dec.mask_token")?, &vec![0; mask.masked.len()])?;
            t.concat_rows(&[h, fill])?
        };
        // Row j of `seq` holds patch order[j]; invert to restore patch order.
        let mut inverse = vec![0; n];
        for (j, &i) in mask.visible.iter().chain(&mask.masked).enumerate() {
            inverse[i] = j;
        }
        let restored = t.gather_rows(seq, &inverse)?;
        let mut x = t.add_const(restored, &sinusoidal_3d(coords, self.cfg.embed_dim))?;
        let spec = block_spec(self.cfg, false, false);
        for i in 0..self.cfg.decoder_depth {
            x = block(t, &self.p, &format!("dec.{i}"), spec, x, false, None)?;
        }
        let x = layer_norm(t, &self.p, "dec.norm", x, self.eps())?;
        Ok((linear(t, &self.p, "dec.head.ct", x)?, linear(t, &self.p, "dec.head.pet", x)?))
    }

    /// Next-token logits `[L, V]` for a prefix starting with BOS, attending
    /// causally to the prefix and freely to `memory`.
    pub fn lm_logits(&self, t: &mut Tape, memory: Var, prefix: &[usize]) -> Result<Var> {
        if prefix.is_empty() {
            return Err(Error::Contract("empty decoder prefix".into()));
        }
        if let Some(bad) = prefix.iter().find(|&&k| k >= self.cfg.vocab_size) {
            return Err(Error::Contract(format!("token {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        let e = t.gather_rows(self.p.var("lm.embed")?, prefix)?;
        let mut x = t.add_const(e, &sinusoidal_1d(prefix.len(), self.cfg.embed_dim))?;
        let spec = block_spec(self.cfg, true, false);
        for i in 0..self.cfg.lm_depth {
            x = block(t, &self.p, &format!("lm.{i}"), spec, x, true, Some(memory))?;
        }
        let x = layer_norm(t, &self.p, "lm.norm", x, self.eps())?;
        linear(t, &self.p, "lm.head", x)
    }

    /// Region logits `[1, R]` from mean-pooled regional tokens.
    pub fn classify_region(&self, t: &mut Tape, f_local: Var) -> Result<Var> {
        let pooled = t.mean_rows(f_local)?;
        linear(t, &self.p, "cls.head", pooled)
    }

    /// Projects a pooled `[1, d]` organ feature to the atlas embedding.
    pub fn organ_head(&self, t: &mut Tape, pooled: Var) -> Result<Var> {
        linear(t, &self.p, "atlas.head", pooled)
    }
}

/// Rows of `f` selected by `rows`, mean-pooled and L2-normalized; `None`
/// when `rows` is empty.
pub fn pool_anchor(t: &mut Tape, f: Var, rows: &[usize]) -> Result<Option<Var>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let g = t.gather_rows(f, rows)?;
    let m = t.mean_rows(g)?;
    Ok(Some(t.l2_normalize_rows(m)?))
}

/// Visual anchor of class `c`: visible tokens whose dominant class is `c`.
pub fn pool_visual_anchor(
    t: &mut Tape,
    f_vis: Var,
    region: &RegionInput,
    mask: &MaskSample,
    class: ClassId,
) -> Result<Option<Var>> {
    let rows: Vec<usize> = mask
        .visible
        .iter()
        .enumerate()
        .filter(|(_, &i)| region.classes[i] == class)
        .map(|(row, _)| row)
        .collect();
    pool_anchor(t, f_vis, &rows)
}

/// Text anchor of class `c`: every token inside its mention spans.
pub fn pool_text_anchor(t: &mut Tape, e_text: Var, text: &TextInput, class: ClassId) -> Result<Option<Var>> {
    let rows: Vec<usize> = text
        .spans
        .get(&class)
        .map(|s| s.iter().flat_map(|&(a, b)| a..b).collect())
        .unwrap_or_default();
    pool_anchor(t, e_text, &rows)
}
