//! Ellipsoid phantoms with co-registered CT, PET, labels and a templated report.

use serde::{Deserialize, Serialize};

use super::tokenizer::Vocabulary;
use super::volume::{Grid, Lesion, MaskVolume, Modality, Report, Study, Volume};
use crate::anatomy::{well_known, ClassId, ClassTable, Language, BACKGROUND};
use crate::error::{Error, Result};
use crate::model::PATCH;
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganSpec {
    pub class: ClassId,
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
    /// CT value in HU.
    pub ct: f64,
    /// Baseline PET uptake (SUV).
    pub uptake: f64,
}

impl OrganSpec {
    fn contains(&self, p: [usize; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub organ: ClassId,
    /// Offset from the organ centre, in voxels.
    #[serde(default)]
    pub offset: [f64; 3],
    pub sigma: f64,
    pub amplitude: f64,
}

/// Per-seed random hotspots on top of the fixed ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomLesions {
    pub organs: Vec<ClassId>,
    pub max_count: usize,
    pub sigma: f64,
    pub amplitude: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Listing order is label priority: earlier organs win overlaps.
    pub organs: Vec<OrganSpec>,
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
    #[serde(default)]
    pub random_lesions: Option<RandomLesions>,
    pub air_ct: f64,
    pub body_ct: f64,
    pub body_uptake: f64,
    /// Body cylinder radius as a fraction of the in-plane extent.
    pub body_radius: f64,
    pub ct_noise: f64,
    pub pet_noise: f64,
    /// Relative per-study jitter of organ uptakes.
    #[serde(default)]
    pub uptake_jitter: f64,
    #[serde(default)]
    pub language: Language,
    pub age: f64,
}

fn organ(class: ClassId, center: [f64; 3], radii: [f64; 3], ct: f64, uptake: f64) -> OrganSpec {
    OrganSpec {
        class,
        center,
        radii,
        ct,
        uptake,
    }
}

fn id(name: &str) -> ClassId {
    ClassTable::builtin().id_of(name).expect("builtin class")
}

impl PhantomConfig {
    /// 48 x 48 x 128 whole-body phantom with organs centred on patch
    /// centres; axial landmarks at slices 16 (lung top), 48 (lung bottom),
    /// 80 (bladder top) and 96 (femur top).
    pub fn whole_body() -> Self {
        Self {
            dims: [48, 48, 128],
            spacing: [4.0, 4.0, 4.0],
            organs: vec![
                organ(id("brain"), [24.0, 24.0, 8.0], [10.0, 10.0, 8.0], 35.0, 7.0),
                organ(id("parotid_gland_left"), [8.0, 24.0, 8.0], [9.0, 9.0, 7.0], 40.0, 1.6),
                organ(id("parotid_gland_right"), [40.0, 24.0, 8.0], [9.0, 9.0, 7.0], 40.0, 1.6),
                organ(id("nasal_cavity"), [24.0, 8.0, 8.0], [9.0, 9.0, 7.0], -600.0, 0.6),
                organ(id("cerebellum"), [24.0, 40.0, 8.0], [9.0, 9.0, 7.0], 35.0, 5.5),
                organ(id("left_lung_upper_lobe"), [8.0, 24.0, 25.0], [9.0, 11.0, 9.0], -800.0, 0.5),
                organ(id("right_lung_upper_lobe"), [40.0, 24.0, 25.0], [9.0, 11.0, 9.0], -800.0, 0.5),
                organ(id("left_lung_lower_lobe"), [8.0, 24.0, 39.0], [9.0, 11.0, 9.0], -780.0, 0.55),
                organ(id("right_lung_lower_lobe"), [40.0, 24.0, 39.0], [9.0, 11.0, 9.0], -780.0, 0.55),
                organ(id("left_humerus"), [1.0, 24.0, 32.0], [2.0, 4.0, 14.0], 700.0, 0.7),
                organ(id("right_humerus"), [46.0, 24.0, 32.0], [2.0, 4.0, 14.0], 700.0, 0.7),
                organ(id("thymus"), [24.0, 8.0, 24.0], [9.0, 8.0, 8.0], 30.0, 1.2),
                organ(id("aorta"), [24.0, 24.0, 24.0], [9.0, 9.0, 8.0], 45.0, 1.8),
                organ(id("vertebra_t4"), [24.0, 40.0, 24.0], [9.0, 8.0, 8.0], 450.0, 0.9),
                organ(id("heart"), [24.0, 12.0, 40.0], [10.0, 12.0, 8.0], 40.0, 2.5),
                organ(id("esophagus"), [24.0, 26.0, 40.0], [8.0, 6.0, 8.0], 35.0, 1.4),
                organ(id("vertebra_t8"), [24.0, 40.0, 40.0], [9.0, 8.0, 8.0], 450.0, 0.9),
                organ(id("liver"), [8.0, 24.0, 56.0], [10.0, 11.0, 8.0], 60.0, 2.4),
                organ(id("spleen"), [40.0, 24.0, 56.0], [10.0, 11.0, 8.0], 45.0, 2.1),
                organ(id("stomach"), [24.0, 8.0, 56.0], [9.0, 8.0, 8.0], 25.0, 1.9),
                organ(id("pancreas"), [24.0, 24.0, 56.0], [9.0, 9.0, 8.0], 40.0, 1.5),
                organ(id("vertebra_l1"), [24.0, 40.0, 56.0], [9.0, 8.0, 8.0], 450.0, 0.9),
                organ(id("left_kidney"), [8.0, 24.0, 72.0], [10.0, 11.0, 8.0], 30.0, 2.6),
                organ(id("right_kidney"), [40.0, 24.0, 72.0], [10.0, 11.0, 8.0], 30.0, 2.6),
                organ(id("small_bowel"), [24.0, 8.0, 72.0], [9.0, 8.0, 8.0], 20.0, 1.7),
                organ(id("duodenum"), [24.0, 24.0, 72.0], [9.0, 9.0, 7.0], 25.0, 1.6),
                organ(id("vertebra_l3"), [24.0, 40.0, 72.0], [9.0, 8.0, 8.0], 450.0, 0.9),
                organ(id("urinary_bladder"), [24.0, 24.0, 88.0], [9.0, 9.0, 8.0], 10.0, 9.0),
                organ(id("left_hip"), [8.0, 24.0, 88.0], [10.0, 11.0, 7.0], 600.0, 0.8),
                organ(id("right_hip"), [40.0, 24.0, 88.0], [10.0, 11.0, 7.0], 600.0, 0.8),
                organ(id("colon"), [24.0, 8.0, 88.0], [9.0, 8.0, 7.0], -50.0, 1.5),
                organ(id("rectum"), [24.0, 40.0, 88.0], [9.0, 8.0, 7.0], 0.0, 1.3),
                organ(id("left_femur"), [8.0, 24.0, 113.0], [10.0, 11.0, 17.0], 700.0, 0.8),
                organ(id("right_femur"), [40.0, 24.0, 113.0], [10.0, 11.0, 17.0], 700.0, 0.8),
            ],
            lesions: vec![],
            random_lesions: Some(RandomLesions {
                organs: ["liver", "spleen", "left_kidney", "right_kidney", "brain"].map(id).to_vec(),
                max_count: 2,
                sigma: 1.5,
                amplitude: [4.0, 8.0],
            }),
            air_ct: -1000.0,
            body_ct: -80.0,
            body_uptake: 0.4,
            body_radius: 0.5,
            ct_noise: 15.0,
            pet_noise: 0.05,
            uptake_jitter: 0.1,
            language: Language::En,
            age: 50.0,
        }
    }

    /// 16 x 16 x 32 phantom with ten well separated organs, for cohorts.
    pub fn compact() -> Self {
        let [lf, rf] = well_known::femurs();
        let [lk, rk] = well_known::kidneys();
        Self {
            dims: [16, 16, 32],
            spacing: [10.0, 10.0, 10.0],
            organs: vec![
                organ(well_known::brain(), [8.0, 8.0, 2.5], [4.0, 4.0, 2.0], 35.0, 7.0),
                organ(well_known::heart(), [8.0, 5.0, 8.0], [2.0, 2.0, 2.0], 40.0, 2.5),
                organ(id("left_lung_upper_lobe"), [4.0, 9.0, 8.0], [2.0, 2.5, 3.0], -800.0, 0.5),
                organ(id("right_lung_upper_lobe"), [12.0, 9.0, 8.0], [2.0, 2.5, 3.0], -800.0, 0.5),
                organ(well_known::liver(), [5.0, 8.0, 14.0], [3.0, 3.0, 2.0], 60.0, 2.4),
                organ(well_known::spleen(), [12.0, 8.0, 14.0], [2.0, 2.0, 2.0], 45.0, 2.1),
                organ(lk, [5.0, 10.0, 18.5], [1.5, 1.5, 1.5], 30.0, 2.6),
                organ(rk, [11.0, 10.0, 18.5], [1.5, 1.5, 1.5], 30.0, 2.6),
                organ(well_known::bladder(), [8.0, 8.0, 22.5], [2.0, 2.0, 1.5], 10.0, 9.0),
                organ(lf, [5.0, 8.0, 28.0], [1.5, 1.5, 3.0], 700.0, 0.8),
                organ(rf, [11.0, 8.0, 28.0], [1.5, 1.5, 3.0], 700.0, 0.8),
            ],
            lesions: vec![],
            random_lesions: None,
            air_ct: -1000.0,
            body_ct: -80.0,
            body_uptake: 0.4,
            body_radius: 0.45,
            ct_noise: 15.0,
            pet_noise: 0.05,
            uptake_jitter: 0.0,
            language: Language::En,
            age: 50.0,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if let Some(d) = self.dims.iter().find(|&&d| d % PATCH != 0) {
            return Err(Error::Config(format!(
                "phantom dims {:?} not divisible by {PATCH} (axis extent {d})",
                self.dims
            )));
        }
        if self.organs.len() < 2 {
            return Err(Error::Config("phantom needs at least two organs".into()));
        }
        let table = ClassTable::builtin();
        for o in &self.organs {
            if table.get(o.class).is_none() {
                return Err(Error::UnknownClass(o.class));
            }
            if o.radii.iter().any(|&r| !(r > 0.0)) || o.uptake < 0.0 {
                return Err(Error::Config(format!("invalid organ spec for class {}", o.class)));
            }
        }
        let known = |c: ClassId| self.organs.iter().any(|o| o.class == c);
        let lesion_organs = self
            .lesions
            .iter()
            .map(|l| l.organ)
            .chain(self.random_lesions.iter().flat_map(|r| r.organs.iter().copied()));
        for c in lesion_organs {
            if !known(c) {
                return Err(Error::Config(format!("lesion organ {c} is not a phantom organ")));
            }
        }
        if !(0.0..=120.0).contains(&self.age) {
            return Err(Error::Config(format!("age {} outside [0, 120]", self.age)));
        }
        Ok(())
    }

    /// Label volume implied by the organ list (no randomness involved).
    pub fn labels(&self) -> Result<MaskVolume> {
        let grid = self.grid()?;
        let labels = (0..grid.len())
            .map(|i| {
                let p = grid.coords(i);
                self.organs
                    .iter()
                    .find(|o| o.contains(p))
                    .map(|o| o.class)
                    .unwrap_or(BACKGROUND)
            })
            .collect();
        MaskVolume::new(grid, labels)
    }

    pub fn all_report_texts(&self) -> Vec<String> {
        let table = ClassTable::builtin();
        let mut texts = Vec::new();
        for o in &self.organs {
            let info = table.get(o.class).expect("validated");
            for lang in [Language::En, Language::Zh] {
                for term in info.terms(lang) {
                    for elevated in [false, true] {
                        texts.push(organ_sentence(term, elevated, lang));
                    }
                    texts.push(lesion_sentence(term, lang));
                }
            }
        }
        texts
    }

    /// Vocabulary covering every sentence this phantom can produce.
    pub fn vocabulary(&self) -> Vocabulary {
        let texts = self.all_report_texts();
        Vocabulary::from_texts(texts.iter().map(String::as_str))
    }
}

pub fn organ_sentence(term: &str, elevated: bool, lang: Language) -> String {
    match lang {
        Language::En => format!(
            "The {term} shows {} uptake.",
            if elevated { "elevated" } else { "normal" }
        ),
        Language::Zh => format!("{term} 摄取 {} 。", if elevated { "增高" } else { "正常" }),
    }
}

pub fn lesion_sentence(term: &str, lang: Language) -> String {
    match lang {
        Language::En => format!("A focal lesion is seen in the {term}."),
        Language::Zh => format!("{term} 可见 局灶性 病灶 。"),
    }
}

/// Generates a phantom study; identical `(seed, config)` gives identical output.
pub fn generate_phantom(seed: u64, config: &PhantomConfig) -> Result<Study> {
    generate_with_uptakes(seed, config, None, config.age)
}

/// As [`generate_phantom`], optionally overriding per-organ uptakes (in
/// organ listing order) and the subject age.
pub fn generate_with_uptakes(
    seed: u64,
    config: &PhantomConfig,
    uptakes: Option<&[f64]>,
    age: f64,
) -> Result<Study> {
    config.validate()?;
    let root = SeedStream::new(seed);
    let grid = config.grid()?;
    let mask = config.labels()?;

    let uptake: Vec<f64> = match uptakes {
        Some(u) if u.len() != config.organs.len() => {
            return Err(Error::Config(format!(
                "{} uptakes for {} organs",
                u.len(),
                config.organs.len()
            )))
        }
        Some(u) => u.iter().map(|v| v.max(0.0)).collect(),
        None => {
            let mut jitter = root.split_str("jitter");
            config
                .organs
                .iter()
                .map(|o| (o.uptake * (1.0 + config.uptake_jitter * jitter.normal())).max(0.0))
                .collect()
        }
    };

    let mut lesions: Vec<Lesion> = config
        .lesions
        .iter()
        .map(|l| {
            let o = config.organs.iter().find(|o| o.class == l.organ).expect("validated");
            Lesion {
                organ: l.organ,
                center: [0, 1, 2].map(|a| o.center[a] + l.offset[a]),
                sigma: l.sigma,
                amplitude: l.amplitude,
            }
        })
        .collect();
    if let Some(rl) = &config.random_lesions {
        let mut r = root.split_str("lesions");
        let count = r.int_inclusive(0, rl.max_count as i64) as usize;
        for _ in 0..count {
            let pick = rl.organs[r.int_inclusive(0, rl.organs.len() as i64 - 1) as usize];
            let o = config.organs.iter().find(|o| o.class == pick).expect("validated");
            // Keep the hotspot inside the inner half of the organ.
            let center = [0, 1, 2].map(|a| o.center[a] + 0.5 * o.radii[a] * r.uniform_range(-1.0, 1.0));
            lesions.push(Lesion {
                organ: pick,
                center,
                sigma: rl.sigma,
                amplitude: r.uniform_range(rl.amplitude[0], rl.amplitude[1]),
            });
        }
    }

    let mut noise = root.split_str("noise");
    let (cx, cy) = (grid.dims[0] as f64 / 2.0, grid.dims[1] as f64 / 2.0);
    let body_r = config.body_radius * grid.dims[0].min(grid.dims[1]) as f64;
    let mut ct = Vec::with_capacity(grid.len());
    let mut pet = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let p = grid.coords(i);
        let label = mask.labels[i];
        let (base_ct, base_pet) = match config.organs.iter().position(|o| o.class == label && label != BACKGROUND) {
            Some(k) => (config.organs[k].ct, uptake[k]),
            None => {
                let dx = p[0] as f64 + 0.5 - cx;
                let dy = p[1] as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= body_r * body_r {
                    (config.body_ct, config.body_uptake)
                } else {
                    (config.air_ct, 0.0)
                }
            }
        };
        let hot: f64 = lesions
            .iter()
            .map(|l| {
                let r2: f64 = (0..3).map(|a| (p[a] as f64 - l.center[a]).powi(2)).sum();
                l.amplitude * (-r2 / (2.0 * l.sigma * l.sigma)).exp()
            })
            .sum();
        ct.push((base_ct + config.ct_noise * noise.normal()) as f32);
        pet.push((base_pet + hot + config.pet_noise * noise.normal()).max(0.0) as f32);
    }

    let report = compose_report(&root, config, &lesions)?;
    Study::new(
        format!("phantom-{seed}"),
        Volume::new(grid, Modality::Ct, ct)?,
        Volume::new(grid, Modality::Pet, pet)?,
        mask,
        report,
        age,
        lesions,
    )
}

fn compose_report(root: &SeedStream, config: &PhantomConfig, lesions: &[Lesion]) -> Result<Report> {
    let table = ClassTable::builtin();
    let lang = config.language;
    let mut pick = root.split_str("terms");
    let mut term_for = |class: ClassId| -> String {
        let terms = table.get(class).expect("validated").terms(lang);
        terms[pick.int_inclusive(0, terms.len() as i64 - 1) as usize].clone()
    };
    let mut sentences = Vec::new();
    for o in &config.organs {
        let elevated = lesions.iter().any(|l| l.organ == o.class && l.amplitude > 0.0);
        sentences.push(organ_sentence(&term_for(o.class), elevated, lang));
    }
    for l in lesions {
        sentences.push(lesion_sentence(&term_for(l.organ), lang));
    }
    let text = sentences.join(" ");
    let vocab = config.vocabulary();
    Ok(Report {
        tokens: vocab.tokenize(&text),
        text,
        language: lang,
    })
}
