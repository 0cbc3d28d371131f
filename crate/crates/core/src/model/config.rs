use serde::{Deserialize, Serialize};

use super::PATCH;
use crate::error::{Error, Result};

/// Intensity windows mapping raw CT (HU) and PET (SUV) to network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// HU window mapped affinely onto [-1, 1].
    pub ct_window: [f64; 2],
    /// PET divisor; the result is clamped to `[0, pet_clamp]`.
    pub pet_scale: f64,
    pub pet_clamp: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            ct_window: [-1000.0, 1000.0],
            pet_scale: 5.0,
            pet_clamp: 2.0,
        }
    }
}

impl Normalization {
    pub fn ct(&self, hu: f64) -> f64 {
        let [lo, hi] = self.ct_window;
        (2.0 * (hu - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn pet(&self, suv: f64) -> f64 {
        (suv / self.pet_scale).clamp(0.0, self.pet_clamp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub text_depth: usize,
    pub gaa_depth: usize,
    pub lm_depth: usize,
    pub mlp_ratio: usize,
    /// Edge length of cubic patches; fixed.
    pub patch: usize,
    pub mask_ratio: f64,
    /// CMIM insertion depths as fractions of `encoder_depth`.
    pub cmim_depths: Vec<f64>,
    pub temperature: f64,
    pub vocab_size: usize,
    pub regions: usize,
    /// Width of the organ-embedding head used by the atlas.
    pub organ_embedding_dim: usize,
    pub normalization: Normalization,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        Self {
            embed_dim: 64,
            heads: 4,
            encoder_depth: 6,
            decoder_depth: 2,
            text_depth: 2,
            gaa_depth: 2,
            lm_depth: 2,
            mlp_ratio: 4,
            patch: PATCH,
            mask_ratio: 0.90,
            cmim_depths: vec![1.0 / 3.0, 2.0 / 3.0],
            temperature: 0.1,
            vocab_size: 256,
            regions: 6,
            organ_embedding_dim: 16,
            normalization: Normalization::default(),
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every component; used
    /// for finite-difference checks. Two patches per region cannot be
    /// masked at 0.9 without masking everything, hence the lower ratio.
    pub fn micro(vocab_size: usize) -> Self {
        Self {
            embed_dim: 16,
            heads: 2,
            encoder_depth: 2,
            decoder_depth: 1,
            text_depth: 1,
            gaa_depth: 1,
            lm_depth: 1,
            mlp_ratio: 2,
            mask_ratio: 0.5,
            vocab_size,
            regions: 2,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn patch_voxels(&self) -> usize {
        self.patch.pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch != PATCH {
            return fail(format!("patch size is fixed at {PATCH}, got {}", self.patch));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask ratio {} outside (0, 1)", self.mask_ratio));
        }
        if self.cmim_depths.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return fail(format!("CMIM depths {:?} must lie in (0, 1)", self.cmim_depths));
        }
        for (i, a) in self.cmim_depths.iter().enumerate() {
            if self.cmim_depths[..i].contains(a) {
                return fail(format!("duplicate CMIM depth {a}"));
            }
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature {} must be positive", self.temperature));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 || self.lm_depth == 0 {
            return fail("encoder, decoder and LM depth must be positive".into());
        }
        if self.vocab_size < 4 {
            return fail(format!("vocabulary of {} tokens is too small", self.vocab_size));
        }
        if self.regions == 0 || self.mlp_ratio == 0 || self.organ_embedding_dim == 0 {
            return fail("regions, mlp_ratio and organ_embedding_dim must be positive".into());
        }
        let n = &self.normalization;
        if !(n.ct_window[1] > n.ct_window[0] && n.pet_scale > 0.0 && n.pet_clamp > 0.0) {
            return fail("invalid normalization bounds".into());
        }
        Ok(())
    }

    /// 1-indexed encoder blocks after which a CMIM runs: `max(1, floor(f * L))`, deduplicated.
    pub fn cmim_blocks(&self) -> Vec<usize> {
        let mut blocks: Vec<usize> = self
            .cmim_depths
            .iter()
            .map(|f| ((f * self.encoder_depth as f64).floor() as usize).max(1))
            .collect();
        blocks.sort_unstable();
        blocks.dedup();
        blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.cmim_blocks(), vec![2, 4]);
        assert_eq!(c.head_dim(), 16);
        ModelConfig::micro(32).validate().unwrap();
        assert_eq!(ModelConfig::micro(32).cmim_blocks(), vec![1]);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ModelConfig { heads: 3, ..Default::default() },
            ModelConfig { mask_ratio: 1.0, ..Default::default() },
            ModelConfig { temperature: 0.0, ..Default::default() },
            ModelConfig { cmim_depths: vec![0.5, 0.5], ..Default::default() },
            ModelConfig { cmim_depths: vec![1.0], ..Default::default() },
            ModelConfig { patch: 8, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn normalization_windows() {
        let n = Normalization::default();
        assert_eq!(n.ct(-1000.0), -1.0);
        assert_eq!(n.ct(0.0), 0.0);
        assert_eq!(n.ct(3000.0), 1.0);
        assert_eq!(n.pet(5.0), 1.0);
        assert_eq!(n.pet(50.0), 2.0);
    }
}
