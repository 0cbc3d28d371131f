//! Training objectives: masked reconstruction, report likelihood, region
//! classification and anatomical anchor alignment, plus their weighted sum.
//!
//! Every term is a per-unit mean (per masked voxel, per token, per region,
//! per anchored class) unless `raw_sum` is requested, in which case the
//! corresponding sums are returned instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::forward::{text_anchors, visual_anchors, ForwardOptions};
use crate::model::network::{Net, StudyInput};
use crate::model::MaskSample;
use crate::tensor::{Array, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mim: f64,
    pub lm: f64,
    pub gac: f64,
    pub anchor: f64,
    /// Relative weight of PET reconstruction error.
    pub omega_pet: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mim: 1.0,
            lm: 1.0,
            gac: 0.1,
            anchor: 0.5,
            omega_pet: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mim, self.lm, self.gac, self.anchor, self.omega_pet];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// One training step's scalar losses and the counts they were normalized by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub mim: f64,
    pub lm: f64,
    pub gac: f64,
    pub anchor: f64,
    pub total: f64,
    pub masked_voxels: usize,
    pub lm_tokens: usize,
    pub regions: usize,
    pub anchor_pairs: usize,
    /// Studies whose anchor term was skipped for lack of matched pairs.
    pub anchor_skipped: usize,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.mim, self.lm, self.gac, self.anchor, self.total].iter().all(|v| v.is_finite())
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `λ₁ L_MIM + λ₂ L_LM + λ₃ L_GAC + λ₄ L_A`.
pub fn loss_total(terms: [f64; 4], w: &LossWeights) -> f64 {
    w.mim * terms[0] + w.lm * terms[1] + w.gac * terms[2] + w.anchor * terms[3]
}

/// Reconstructions and targets of the masked patches of one region.
#[derive(Clone, Debug)]
pub struct MimTerm {
    /// `[|M|, 4096]` predictions.
    pub pred_ct: Var,
    pub pred_pet: Var,
    pub target_ct: Array,
    pub target_pet: Array,
}

/// Squared error over all masked voxels, CT plus `omega_pet` times PET,
/// divided by the masked-voxel count. Returns the loss and that count.
pub fn loss_mim(t: &mut Tape, terms: &[MimTerm], omega_pet: f64, raw_sum: bool) -> Result<(Var, usize)> {
    let mut parts = Vec::with_capacity(terms.len());
    let mut voxels = 0;
    for term in terms {
        if t.shape(term.pred_ct) != term.target_ct.shape() || t.shape(term.pred_pet) != term.target_pet.shape() {
            return Err(Error::Dimension {
                op: "loss_mim",
                lhs: t.shape(term.pred_ct).to_vec(),
                rhs: term.target_ct.shape().to_vec(),
            });
        }
        voxels += term.target_ct.len();
        let tc = t.constant(term.target_ct.clone());
        let tp = t.constant(term.target_pet.clone());
        let ec = t.sq_err_sum(term.pred_ct, tc)?;
        let ep = t.sq_err_sum(term.pred_pet, tp)?;
        let ep = t.scale(ep, omega_pet);
        parts.push(t.add(ec, ep)?);
    }
    if voxels == 0 {
        return Err(Error::Contract("reconstruction loss needs at least one masked patch".into()));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = t.add(total, p)?;
    }
    let out = if raw_sum { total } else { t.scale(total, 1.0 / voxels as f64) };
    Ok((out, voxels))
}

/// Mean negative log-likelihood of `targets` under `logits` (`[L, V]`).
pub fn loss_lm(t: &mut Tape, logits: Var, targets: &[usize], raw_sum: bool) -> Result<Var> {
    let rows = t.shape(logits)[0];
    if rows != targets.len() {
        return Err(Error::Contract(format!("{rows} logit rows for {} targets", targets.len())));
    }
    let nll = t.cross_entropy(logits, targets)?;
    Ok(if raw_sum { t.scale(nll, rows as f64) } else { nll })
}

/// Mean cross-entropy of region logits (`[n, R]`) against true region ids.
pub fn loss_gac(t: &mut Tape, logits: Var, regions: &[usize], raw_sum: bool) -> Result<Var> {
    loss_lm(t, logits, regions, raw_sum)
}

/// InfoNCE with visual anchors as queries and every text anchor of the
/// batch as keys: row `i` of `visual` matches row `targets[i]` of `text`.
pub fn loss_anchor(
    t: &mut Tape,
    visual: Var,
    text: Var,
    targets: &[usize],
    temperature: f64,
    raw_sum: bool,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Contract("anchor loss needs at least one matched pair".into()));
    }
    let kt = t.transpose(text)?;
    let sim = t.matmul(visual, kt)?;
    let logits = t.scale(sim, 1.0 / temperature);
    loss_lm(t, logits, targets, raw_sum)
}

/// The four terms and their weighted sum, as tape nodes.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    /// MIM, LM, GAC, anchor.
    pub terms: [Var; 4],
    pub report: LossReport,
}

fn weighted_total(t: &mut Tape, terms: [Var; 4], w: &LossWeights) -> Result<Var> {
    let weights = [w.mim, w.lm, w.gac, w.anchor];
    let mut total = t.scale(terms[0], weights[0]);
    for k in 1..4 {
        let s = t.scale(terms[k], weights[k]);
        total = t.add(total, s)?;
    }
    Ok(total)
}

struct StudyTerms {
    mim: Var,
    lm: Var,
    gac: Var,
    anchor: Option<Var>,
    masked_voxels: usize,
    lm_tokens: usize,
    regions: usize,
    anchor_pairs: usize,
}

fn study_terms(
    net: &Net,
    t: &mut Tape,
    input: &StudyInput,
    masks: &[MaskSample],
    w: &LossWeights,
    raw_sum: bool,
) -> Result<StudyTerms> {
    let fwd = net.forward_study(t, input, masks, ForwardOptions::default())?;

    let mut mim = Vec::new();
    for ((rf, region), mask) in fwd.regions.iter().zip(&input.regions).zip(masks) {
        if mask.masked.is_empty() {
            continue;
        }
        let (ct, pet) = rf.recon.expect("decoding requested");
        let gather = |a: &Array| -> Result<Array> {
            let rows: Vec<Vec<f64>> = mask.masked.iter().map(|&i| a.row(i).to_vec()).collect();
            Array::from_rows(&rows)
        };
        mim.push(MimTerm {
            pred_ct: t.gather_rows(ct, &mask.masked)?,
            pred_pet: t.gather_rows(pet, &mask.masked)?,
            target_ct: gather(&region.ct.vectors)?,
            target_pet: gather(&region.pet.vectors)?,
        });
    }
    let (mim, masked_voxels) = loss_mim(t, &mim, w.omega_pet, raw_sum)?;

    let targets = &input.text.tokens[1..];
    let logits = fwd
        .lm_logits
        .ok_or_else(|| Error::Contract(format!("study {} has no report tokens", input.id)))?;
    let lm = loss_lm(t, logits, targets, raw_sum)?;

    let region_logits: Vec<Var> = fwd.regions.iter().map(|r| r.logits).collect();
    let stacked = t.concat_rows(&region_logits)?;
    let ids: Vec<usize> = input.regions.iter().map(|r| r.index).collect();
    let gac = loss_gac(t, stacked, &ids, raw_sum)?;

    let mut anchor = None;
    let mut anchor_pairs = 0;
    if let Some(e_text) = fwd.text {
        let vis = visual_anchors(t, &fwd, input, masks)?;
        let txt = text_anchors(t, e_text, &input.text)?;
        let keys: Vec<_> = txt.keys().copied().collect();
        let matched: Vec<_> = vis.keys().filter(|c| txt.contains_key(c)).copied().collect();
        if !matched.is_empty() {
            let v_rows: Vec<Var> = matched.iter().map(|c| vis[c]).collect();
            let t_rows: Vec<Var> = keys.iter().map(|c| txt[c]).collect();
            let targets: Vec<usize> = matched
                .iter()
                .map(|c| keys.iter().position(|k| k == c).expect("matched key"))
                .collect();
            let v = t.concat_rows(&v_rows)?;
            let k = t.concat_rows(&t_rows)?;
            anchor = Some(loss_anchor(t, v, k, &targets, net.cfg.temperature, raw_sum)?);
            anchor_pairs = matched.len();
        }
    }
    Ok(StudyTerms {
        mim,
        lm,
        gac,
        anchor,
        masked_voxels,
        lm_tokens: targets.len(),
        regions: ids.len(),
        anchor_pairs,
    })
}

fn mean_of(t: &mut Tape, vars: &[Var]) -> Result<Var> {
    match vars {
        [] => Ok(t.constant(Array::scalar(0.0))),
        [v] => Ok(*v),
        _ => {
            let mut s = vars[0];
            for &v in &vars[1..] {
                s = t.add(s, v)?;
            }
            Ok(t.scale(s, 1.0 / vars.len() as f64))
        }
    }
}

/// Objective over a batch of studies: each term averaged over studies
/// (anchor term over the studies that have matched pairs).
pub fn batch_objective(
    net: &Net,
    t: &mut Tape,
    inputs: &[StudyInput],
    masks: &[Vec<MaskSample>],
    w: &LossWeights,
    raw_sum: bool,
) -> Result<Objective> {
    w.validate()?;
    if inputs.is_empty() || inputs.len() != masks.len() {
        return Err(Error::Contract(format!("{} studies with {} mask sets", inputs.len(), masks.len())));
    }
    let mut per = Vec::with_capacity(inputs.len());
    for (input, m) in inputs.iter().zip(masks) {
        per.push(study_terms(net, t, input, m, w, raw_sum)?);
    }
    let mim = mean_of(t, &per.iter().map(|s| s.mim).collect::<Vec<_>>())?;
    let lm = mean_of(t, &per.iter().map(|s| s.lm).collect::<Vec<_>>())?;
    let gac = mean_of(t, &per.iter().map(|s| s.gac).collect::<Vec<_>>())?;
    let anchors: Vec<Var> = per.iter().filter_map(|s| s.anchor).collect();
    let skipped = per.len() - anchors.len();
    if skipped > 0 {
        log::warn!("anchor loss skipped for {skipped} of {} studies (no matched anchor pairs)", per.len());
    }
    let anchor = mean_of(t, &anchors)?;
    let terms = [mim, lm, gac, anchor];
    let total = weighted_total(t, terms, w)?;
    let values = terms.map(|v| t.value(v).item());
    let report = LossReport {
        step: 0,
        mim: values[0],
        lm: values[1],
        gac: values[2],
        anchor: values[3],
        total: loss_total(values, w),
        masked_voxels: per.iter().map(|s| s.masked_voxels).sum(),
        lm_tokens: per.iter().map(|s| s.lm_tokens).sum(),
        regions: per.iter().map(|s| s.regions).sum(),
        anchor_pairs: per.iter().map(|s| s.anchor_pairs).sum(),
        anchor_skipped: skipped,
    };
    Ok(Objective { total, terms, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use crate::tensor::grad_check;

    fn random(rows: usize, cols: usize, seed: u64) -> Array {
        let mut r = SeedStream::new(seed);
        Array::new(vec![rows, cols], (0..rows * cols).map(|_| r.normal()).collect()).unwrap()
    }

    fn normalized(a: &Array) -> Array {
        let (r, c) = a.dims2().unwrap();
        let mut out = a.clone();
        for i in 0..r {
            let n = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..c {
                out.data_mut()[i * c + j] /= n;
            }
        }
        out
    }

    fn mim_value(pred_ct: &Array, pred_pet: &Array, tc: &Array, tp: &Array) -> f64 {
        let mut t = Tape::new();
        let term = MimTerm {
            pred_ct: t.leaf(pred_ct.clone()),
            pred_pet: t.leaf(pred_pet.clone()),
            target_ct: tc.clone(),
            target_pet: tp.clone(),
        };
        let (l, _) = loss_mim(&mut t, &[term], 3.0, false).unwrap();
        t.value(l).item()
    }

    #[test]
    fn mim_unit_errors() {
        let zero = Array::zeros(&[2, 8]);
        let one = Array::filled(&[2, 8], 1.0);
        assert_eq!(mim_value(&zero, &zero, &zero, &zero), 0.0);
        assert_eq!(mim_value(&one, &zero, &zero, &zero), 1.0);
        assert_eq!(mim_value(&zero, &one, &zero, &zero), 3.0);
    }

    #[test]
    fn mim_is_invariant_to_masked_patch_order() {
        let (a, b, c, d) = (random(4, 6, 1), random(4, 6, 2), random(4, 6, 3), random(4, 6, 4));
        let perm = [2, 0, 3, 1];
        let permute = |x: &Array| Array::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let base = mim_value(&a, &b, &c, &d);
        let shuffled = mim_value(&permute(&a), &permute(&b), &permute(&c), &permute(&d));
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn lm_reference_values() {
        let mut t = Tape::new();
        let uniform = t.leaf(Array::zeros(&[3, 4]));
        let l = loss_lm(&mut t, uniform, &[0, 1, 2], false).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let peaked = t.leaf(Array::from_rows(&[vec![1000.0, 0.0, 0.0]]).unwrap());
        let l = loss_lm(&mut t, peaked, &[0], false).unwrap();
        assert!(t.value(l).item() < 1e-12);
        assert!(loss_lm(&mut t, peaked, &[0, 1], false).is_err());
    }

    #[test]
    fn gac_uniform_over_six_regions() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[6, 6]));
        let l = loss_gac(&mut t, x, &[0, 1, 2, 3, 4, 5], false).unwrap();
        assert!((t.value(l).item() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn anchor_closed_forms() {
        let mut t = Tape::new();
        let v = t.leaf(Array::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let k = t.leaf(Array::from_rows(&[vec![0.0, 1.0]]).unwrap());
        let l = loss_anchor(&mut t, v, k, &[0], 0.1, false).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let e = Array::eye(2);
        let v = t.leaf(e.clone());
        let k = t.leaf(e);
        let l = loss_anchor(&mut t, v, k, &[0, 1], 1.0, false).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((t.value(l).item() - expected).abs() < 1e-12);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn anchor_is_rotation_invariant() {
        let v = normalized(&random(3, 4, 7));
        let k = normalized(&random(3, 4, 8));
        // Orthogonal matrix from Gram-Schmidt on a random basis.
        let basis = random(4, 4, 9);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..4 {
            let mut u = basis.row(i).to_vec();
            for prev in &q {
                let dot: f64 = u.iter().zip(prev).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
            }
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(u.into_iter().map(|x| x / n).collect());
        }
        let rot = Array::from_rows(&q).unwrap();
        let value = |v: &Array, k: &Array| {
            let mut t = Tape::new();
            let (v, k) = (t.leaf(v.clone()), t.leaf(k.clone()));
            let l = loss_anchor(&mut t, v, k, &[0, 1, 2], 0.1, false).unwrap();
            t.value(l).item()
        };
        let a = value(&v, &k);
        let b = value(&v.matmul(&rot).unwrap(), &k.matmul(&rot).unwrap());
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn total_weighting() {
        let w = LossWeights::default();
        assert!((loss_total([2.0, 1.0, 0.5, 0.4], &w) - 3.25).abs() < 1e-12);
        assert_eq!(loss_total([0.0; 4], &w), 0.0);
        let zero = LossWeights {
            mim: 0.0,
            lm: 0.0,
            gac: 0.0,
            anchor: 0.0,
            omega_pet: 3.0,
        };
        assert_eq!(loss_total([5.0, 4.0, 3.0, 2.0], &zero), 0.0);
        assert!(LossWeights { gac: -0.1, ..w }.validate().is_err());
    }

    #[test]
    fn term_gradients_match_finite_differences() {
        let mim = |t: &mut Tape, v: &[Var]| {
            let term = MimTerm {
                pred_ct: v[0],
                pred_pet: v[1],
                target_ct: random(2, 5, 20),
                target_pet: random(2, 5, 21),
            };
            Ok(loss_mim(t, &[term], 3.0, false)?.0)
        };
        assert!(grad_check(mim, &[random(2, 5, 22), random(2, 5, 23)], 1e-5).unwrap() < 1e-4);

        let lm = |t: &mut Tape, v: &[Var]| loss_lm(t, v[0], &[3, 0, 1], false);
        assert!(grad_check(lm, &[random(3, 5, 24)], 1e-5).unwrap() < 1e-4);

        let gac = |t: &mut Tape, v: &[Var]| loss_gac(t, v[0], &[0, 1, 2, 3, 4, 5], false);
        assert!(grad_check(gac, &[random(6, 6, 25)], 1e-5).unwrap() < 1e-4);

        let anchor = |t: &mut Tape, v: &[Var]| {
            let a = t.l2_normalize_rows(v[0])?;
            let b = t.l2_normalize_rows(v[1])?;
            loss_anchor(t, a, b, &[0, 1, 2], 0.1, false)
        };
        assert!(grad_check(anchor, &[random(3, 4, 26), random(3, 4, 27)], 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn report_serializes_as_one_line() {
        let r = LossReport {
            step: 3,
            mim: 1.0,
            lm: 2.0,
            gac: 0.5,
            anchor: 0.25,
            total: 3.175,
            masked_voxels: 10,
            lm_tokens: 4,
            regions: 6,
            anchor_pairs: 2,
            anchor_skipped: 0,
        };
        let line = r.to_json_line().unwrap();
        assert!(!line.contains('\n'));
        let back: LossReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
