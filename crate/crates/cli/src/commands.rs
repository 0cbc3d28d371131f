//! Command implementations. Each takes a resolved [`RunConfig`] that the
//! caller has already echoed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use holo_core::anatomy::{well_known, ClassId, ClassTable, Lexicon, BACKGROUND};
use holo_core::atlas::{
    correlation_network, covariance_difference, covariance_matrix, stratify, system_trends, AgeStrata, OrganEmbeddings,
    OrganFeatureMatrix, OrganMatrix,
};
use holo_core::evalmetrics::{
    score, score_table, seg_csv, text_csv, text_scores, text_table, SegResult, TextResult,
};
use holo_core::model::{checkpoint, Model};
use holo_core::morphology::Connectivity;
use holo_core::rng::SeedStream;
use holo_core::synth::io::{load_binary_mask, save_binary_mask};
use holo_core::synth::tokenizer::split_words;
use holo_core::synth::{generate_phantom, make_cohort, save_study, CohortConfig, EffectModel, Study};
use holo_core::losses::LossReport;
use holo_core::model::StudyInput;
use holo_core::train::{prepare_study, TrainConfig, Trainer};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{FeatureMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{load_dataset, DataManifest, ManifestEntry, MANIFEST_VERSION};

pub const LOSS_LOG: &str = "loss_log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const PRED_STEM: &str = "pred";
pub const META: &str = "meta.json";
pub const REPORTS: &str = "reports.jsonl";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    f.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn class_ids(names: &[String]) -> CliResult<Vec<ClassId>> {
    let table = ClassTable::builtin();
    names.iter().map(|n| Ok(table.id_of(n)?)).collect()
}

/// Loads a checkpoint and reconciles it with the configured model: an
/// explicitly configured model section must match the checkpoint exactly;
/// otherwise the checkpoint's own config is adopted.
pub fn resolve_checkpoint(cfg: &mut RunConfig, model_set: bool, path: &Path) -> CliResult<Model> {
    let model = checkpoint::load(path)?;
    if model_set && model.config != cfg.model {
        return Err(holo_core::Error::Version {
            found: format!("checkpoint {} built for a different model config", path.display()),
            expected: "the model section of the run config".into(),
        }
        .into());
    }
    cfg.model = model.config.clone();
    Ok(model)
}

/// Synthesizes `cfg.synth.n` studies (or a cohort) under `out`.
pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<DataManifest> {
    let s = &cfg.synth;
    if s.n == 0 {
        return Err(CliError::Usage("synth.n must be at least 1".into()));
    }
    s.phantom.validate()?;
    let studies: Vec<Study> = match &s.cohort {
        Some(c) => {
            let k = s.phantom.organs.len();
            let effect = c.effect.clone().unwrap_or_else(|| EffectModel {
                noise_sd: s.phantom.organs.iter().map(|o| 0.1 * o.uptake).collect(),
                ..EffectModel::independent(k, 0.0)
            });
            let cohort = make_cohort(
                cfg.seed,
                &CohortConfig {
                    n: s.n,
                    age_range: c.age_range,
                    phantom: s.phantom.clone(),
                    effect,
                },
            )?;
            cohort.studies
        }
        None => {
            let root = SeedStream::new(cfg.seed);
            (0..s.n)
                .map(|i| {
                    let mut st = generate_phantom(root.split(i as u64).seed(), &s.phantom)?;
                    st.id = format!("study-{i:04}");
                    Ok(st)
                })
                .collect::<CliResult<Vec<_>>>()?
        }
    };
    let mut entries = Vec::with_capacity(studies.len());
    for st in &studies {
        let dir = format!("studies/{}", st.id);
        save_study(st, &out.join(&dir))?;
        entries.push(ManifestEntry {
            id: st.id.clone(),
            dir,
            subject_age: st.subject_age,
            lesions: st.lesions.len(),
        });
    }
    let manifest = DataManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        studies: entries,
        vocabulary: s.phantom.vocabulary(),
    };
    manifest.write(out)?;
    // The resolved config next to the data it produced.
    write_json(&out.join(META), cfg)?;
    info!("wrote {} studies to {}", studies.len(), out.display());
    Ok(manifest)
}

fn model_inputs(cfg: &RunConfig, manifest: &DataManifest, studies: &[Study]) -> CliResult<Vec<StudyInput>> {
    if manifest.vocabulary.len() > cfg.model.vocab_size {
        return Err(CliError::Usage(format!(
            "dataset vocabulary has {} words, model.vocab_size is {}",
            manifest.vocabulary.len(),
            cfg.model.vocab_size
        )));
    }
    let lex = Lexicon::builtin();
    studies
        .iter()
        .map(|s| Ok(prepare_study(s, &cfg.model, &cfg.partition, &lex)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub steps: usize,
    pub studies: usize,
    pub initial: LossReport,
    pub last: LossReport,
}

/// Pre-trains from scratch on every study of `data`, logging one JSON line
/// per step and writing the final checkpoint.
pub fn pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<PretrainSummary> {
    if cfg.train.steps == 0 {
        return Err(CliError::Usage("train.steps must be at least 1".into()));
    }
    let (manifest, studies) = load_dataset(data)?;
    let inputs = model_inputs(cfg, &manifest, &studies)?;
    let model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            seed: cfg.seed,
            optimizer: cfg.train.optimizer.clone(),
            weights: cfg.train.weights.clone(),
            raw_sum: cfg.train.raw_sum,
        },
    )?;
    let log_path = out.join(LOSS_LOG);
    let mut log = create(&log_path)?;
    let mut first: Option<LossReport> = None;
    let mut last: Option<LossReport> = None;
    for step in 0..cfg.train.steps {
        let report = match trainer.train_step(&inputs) {
            Ok(r) => r,
            Err(holo_core::Error::Numeric(reason)) => {
                log.flush().map_err(|e| CliError::io(&log_path, e))?;
                return Err(CliError::Diverged {
                    step,
                    reason,
                    last: last
                        .map(|r| r.to_json_line())
                        .transpose()?
                        .unwrap_or_else(|| "none".into()),
                });
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(log, "{}", report.to_json_line()?).map_err(|e| CliError::io(&log_path, e))?;
        info!("step {step}: total {:.6}", report.total);
        first.get_or_insert_with(|| report.clone());
        last = Some(report);
        let every = cfg.train.checkpoint_every;
        if every > 0 && (step + 1) % every == 0 && step + 1 < cfg.train.steps {
            checkpoint::save(&trainer.model, &out.join(format!("checkpoint_step{:06}.bin", step + 1)))?;
        }
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    checkpoint::save(&trainer.model, &out.join(CHECKPOINT))?;
    let (Some(initial), Some(last)) = (first, last) else {
        unreachable!("at least one step ran");
    };
    let summary = PretrainSummary {
        steps: cfg.train.steps,
        studies: studies.len(),
        initial,
        last,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Sliding-window lesion segmentation with the baseline PET predictor:
/// a logistic in SUV, zeroed inside organs with physiological uptake.
pub fn infer_seg(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<usize> {
    let seg = &cfg.segmentation;
    let physiologic = class_ids(&seg.physiologic_organs)?;
    let (manifest, studies) = load_dataset(data)?;
    for (entry, s) in manifest.studies.iter().zip(&studies) {
        let dims = s.pet.grid.dims;
        let mask = seg.window.segment(&s.ct, &s.pet, |w| {
            Ok((0..w.grid.len())
                .map(|i| {
                    let c = w.grid.coords(i);
                    let p = [0, 1, 2].map(|a| c[a] + w.origin[a]);
                    if p.iter().zip(&dims).any(|(x, d)| x >= d) {
                        return 0.0;
                    }
                    if physiologic.contains(&s.mask.labels[s.mask.grid.index(p[0], p[1], p[2])]) {
                        return 0.0;
                    }
                    let z = (w.pet[i] as f64 - seg.pet_threshold) / seg.pet_scale;
                    1.0 / (1.0 + (-z).exp())
                })
                .collect())
        })?;
        let dir = out.join(&entry.id);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        save_binary_mask(&mask, &dir, PRED_STEM)?;
        info!("{}: {} voxels predicted", entry.id, mask.count());
    }
    Ok(studies.len())
}

/// Scores `pred/<id>/pred` against each study's lesion mask.
pub fn eval_seg(cfg: &RunConfig, data: &Path, pred: &Path, out: &Path, method: &str) -> CliResult<String> {
    let (manifest, studies) = load_dataset(data)?;
    let mut results = Vec::with_capacity(studies.len());
    for (entry, s) in manifest.studies.iter().zip(&studies) {
        let p = load_binary_mask(&pred.join(&entry.id), PRED_STEM)?;
        results.push(SegResult {
            method: method.to_string(),
            study: entry.id.clone(),
            scores: score(&p, &s.lesion_mask(), Connectivity::TwentySix)?,
        });
    }
    let csv = seg_csv(&score_table(&results, cfg.segmentation.exclude_both_empty)?);
    write_text(&out.join("seg_scores.csv"), &csv)?;
    write_json(&out.join("seg_per_study.json"), &results)?;
    Ok(csv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedReport {
    pub id: String,
    pub tokens: Vec<usize>,
    pub text: String,
}

/// Greedy image-conditioned report decoding for every study.
pub fn gen_report(cfg: &RunConfig, model: &Model, data: &Path, out: &Path) -> CliResult<Vec<GeneratedReport>> {
    let (manifest, studies) = load_dataset(data)?;
    let inputs = model_inputs(cfg, &manifest, &studies)?;
    let path = out.join(REPORTS);
    let mut f = create(&path)?;
    let mut reports = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let tokens = model.generate(input, cfg.report.max_len)?;
        let ids: Vec<u32> = tokens.iter().map(|&t| t as u32).collect();
        let r = GeneratedReport {
            id: input.id.clone(),
            text: manifest.vocabulary.detokenize(&ids),
            tokens,
        };
        writeln!(f, "{}", serde_json::to_string(&r).expect("serializable")).map_err(|e| CliError::io(&path, e))?;
        reports.push(r);
    }
    f.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(reports)
}

pub fn read_reports(path: &Path) -> CliResult<Vec<GeneratedReport>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// BLEU-1..4 / ROUGE-L of generated reports against the dataset reports.
pub fn eval_report(data: &Path, reports: &Path, out: &Path, method: &str) -> CliResult<String> {
    let (_, studies) = load_dataset(data)?;
    let generated = read_reports(reports)?;
    let mut results = Vec::with_capacity(generated.len());
    for g in &generated {
        let s = studies
            .iter()
            .find(|s| s.id == g.id)
            .ok_or_else(|| CliError::Data(format!("report for unknown study {}", g.id)))?;
        results.push(TextResult {
            method: method.to_string(),
            study: g.id.clone(),
            scores: text_scores(&split_words(&g.text), &split_words(&s.report.text))?,
        });
    }
    let csv = text_csv(&text_table(&results)?);
    write_text(&out.join("report_scores.csv"), &csv)?;
    write_json(&out.join("report_per_study.json"), &results)?;
    Ok(csv)
}

fn present_organs(studies: &[Study]) -> Vec<ClassId> {
    let set: BTreeSet<ClassId> = studies
        .iter()
        .flat_map(|s| s.mask.labels.iter().copied())
        .filter(|&l| l != BACKGROUND)
        .collect();
    set.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSummary {
    pub subjects: usize,
    pub organs: Vec<ClassId>,
    pub excluded: Vec<ClassId>,
    pub rejected_subjects: Vec<String>,
    pub strata: Vec<(String, usize)>,
    pub edges: usize,
    pub notes: Vec<String>,
}

fn write_differences(
    out: &Path,
    covs: &[(String, OrganMatrix)],
    top_k: usize,
    suffix: &str,
    notes: &mut Vec<String>,
) -> CliResult<()> {
    for i in 0..covs.len() {
        for j in i + 1..covs.len() {
            let (a, b) = (&covs[i], &covs[j]);
            let d = covariance_difference(&a.1, &b.1, top_k)?;
            let stem = format!("cov_diff_{}_{}{suffix}", a.0, b.0);
            write_text(&out.join(format!("{stem}.csv")), &d.matrix.to_csv())?;
            write_text(&out.join(format!("{stem}_top.csv")), &d.ranking_csv())?;
            write_json(&out.join(format!("{stem}.json")), &d)?;
            if let Some(top) = d.ranking.first() {
                notes.push(format!("{stem}: largest |delta| {:.4} at {}-{}", top.delta.abs(), top.a, top.b));
            }
        }
    }
    Ok(())
}

/// Covariance, covariance-difference, network and system-trend files.
pub fn atlas(cfg: &RunConfig, data: &Path, out: &Path, model: Option<&Model>) -> CliResult<AtlasSummary> {
    let a = &cfg.atlas;
    let (_, studies) = load_dataset(data)?;
    let organs = present_organs(&studies);
    let features = match a.features {
        FeatureMode::Suv => OrganFeatureMatrix::suv_means(&studies, &organs)?,
        FeatureMode::Embedding => {
            let model =
                model.ok_or_else(|| CliError::Usage("embedding features need --checkpoint".into()))?;
            OrganEmbeddings::extract(model, &studies, &organs, &cfg.partition)?.first_component()?
        }
    };
    let features = features.exclude_organs(&class_ids(&a.exclude_organs)?)?;
    write_text(&out.join("features.csv"), &features.to_csv())?;

    let strata: AgeStrata = stratify(&features.ages, &a.strata);
    write_json(&out.join("strata.json"), &strata)?;
    let mut notes = Vec::new();
    if !strata.rejected.is_empty() {
        warn!("{} subjects outside every age stratum", strata.rejected.len());
    }
    let mut covs = Vec::new();
    for s in &strata.strata {
        let sub = features.select_subjects(&s.members);
        let c = covariance_matrix(&sub, a.standardize);
        write_text(&out.join(format!("cov_{}.csv", s.name)), &c.to_csv())?;
        if s.members.len() < 2 {
            notes.push(format!("stratum {} has {} subjects; covariance absent", s.name, s.members.len()));
        } else {
            covs.push((s.name.clone(), c));
        }
    }
    write_differences(out, &covs, a.top_k, "", &mut notes)?;
    let bladder = well_known::bladder();
    if a.bladder_comparison && features.organs.contains(&bladder) && features.organs.len() > 1 {
        let reduced = covs
            .iter()
            .map(|(n, c)| Ok((n.clone(), c.exclude_organs(&[bladder])?)))
            .collect::<CliResult<Vec<_>>>()?;
        write_differences(out, &reduced, a.top_k, "_no_bladder", &mut notes)?;
    }

    let in_strata: Vec<usize> = {
        let mut v: Vec<usize> = strata.strata.iter().flat_map(|s| s.members.iter().copied()).collect();
        v.sort_unstable();
        v
    };
    let network = correlation_network(&features.select_subjects(&in_strata), a.r_threshold, a.fdr_alpha)?;
    write_json(&out.join("network.json"), &network)?;

    match system_trends(&features, &ClassTable::builtin().system_map(), &strata) {
        Ok(t) => {
            write_text(&out.join("system_trends.csv"), &t.to_csv())?;
            notes.extend(t.notes);
        }
        Err(holo_core::Error::Domain(msg)) => notes.push(format!("system trends skipped: {msg}")),
        Err(e) => return Err(e.into()),
    }

    let summary = AtlasSummary {
        subjects: features.subjects.len(),
        organs: features.organs.clone(),
        excluded: features.excluded.clone(),
        rejected_subjects: strata.rejected.iter().map(|&i| features.subjects[i].clone()).collect(),
        strata: strata.strata.iter().map(|s| (s.name.clone(), s.members.len())).collect(),
        edges: network.edges.len(),
        notes,
    };
    write_json(&out.join("atlas_summary.json"), &summary)?;
    Ok(summary)
}
