//! Canonical anatomical classes, their body systems and lexicon terms.
//!
//! The table ships as `assets/classes.json` and can be replaced at run time
//! with [`ClassTable::from_json`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of non-background classes.
pub const NUM_CLASSES: u16 = 180;

/// Canonical class id; 0 is background.
pub type ClassId = u16;

pub const BACKGROUND: ClassId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodySystem {
    Nervous,
    Circulatory,
    Respiratory,
    Digestive,
    Urinary,
    Reproductive,
    Endocrine,
    Musculoskeletal,
}

impl BodySystem {
    pub const ALL: [BodySystem; 8] = [
        BodySystem::Nervous,
        BodySystem::Circulatory,
        BodySystem::Respiratory,
        BodySystem::Digestive,
        BodySystem::Urinary,
        BodySystem::Reproductive,
        BodySystem::Endocrine,
        BodySystem::Musculoskeletal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodySystem::Nervous => "nervous",
            BodySystem::Circulatory => "circulatory",
            BodySystem::Respiratory => "respiratory",
            BodySystem::Digestive => "digestive",
            BodySystem::Urinary => "urinary",
            BodySystem::Reproductive => "reproductive",
            BodySystem::Endocrine => "endocrine",
            BodySystem::Musculoskeletal => "musculoskeletal",
        }
    }
}

impl fmt::Display for BodySystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub system: BodySystem,
    pub en: Vec<String>,
    #[serde(default)]
    pub zh: Vec<String>,
}

impl ClassInfo {
    /// Terms for `lang`, falling back to English when none are listed.
    pub fn terms(&self, lang: Language) -> &[String] {
        match lang {
            Language::Zh if !self.zh.is_empty() => &self.zh,
            _ => &self.en,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassTable {
    pub version: u32,
    pub classes: Vec<ClassInfo>,
}

static DEFAULT_TABLE: OnceLock<ClassTable> = OnceLock::new();

impl ClassTable {
    pub fn builtin() -> &'static ClassTable {
        DEFAULT_TABLE.get_or_init(|| {
            Self::from_json(include_str!("../assets/classes.json")).expect("bundled class table is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ClassTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.classes.len() != NUM_CLASSES as usize {
            return Err(Error::Config(format!(
                "class table has {} entries, expected {NUM_CLASSES}",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(Error::Config(format!("class table entry {i} has id {}", c.id)));
            }
            if c.en.is_empty() {
                return Err(Error::Config(format!("class {} has no terms", c.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassInfo> {
        if id == BACKGROUND {
            return None;
        }
        self.classes.get(id as usize - 1)
    }

    pub fn name(&self, id: ClassId) -> &str {
        self.get(id).map(|c| c.name.as_str()).unwrap_or("background")
    }

    pub fn id_of(&self, name: &str) -> Result<ClassId> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
            .ok_or_else(|| Error::Config(format!("unknown class name {name}")))
    }

    pub fn system_map(&self) -> SystemMap {
        SystemMap {
            systems: self.classes.iter().map(|c| (c.id, c.system)).collect(),
        }
    }
}

/// Frequently referenced classes, resolved by name from the builtin table.
pub mod well_known {
    use super::{ClassId, ClassTable};

    fn id(name: &str) -> ClassId {
        ClassTable::builtin().id_of(name).expect("builtin class")
    }

    pub fn brain() -> ClassId {
        id("brain")
    }
    pub fn heart() -> ClassId {
        id("heart")
    }
    pub fn liver() -> ClassId {
        id("liver")
    }
    pub fn spleen() -> ClassId {
        id("spleen")
    }
    pub fn bladder() -> ClassId {
        id("urinary_bladder")
    }
    pub fn kidneys() -> [ClassId; 2] {
        [id("left_kidney"), id("right_kidney")]
    }
    pub fn lungs() -> Vec<ClassId> {
        [
            "left_lung_upper_lobe",
            "left_lung_lower_lobe",
            "right_lung_upper_lobe",
            "right_lung_middle_lobe",
            "right_lung_lower_lobe",
        ]
        .iter()
        .map(|n| id(n))
        .collect()
    }
    pub fn femurs() -> [ClassId; 2] {
        [id("left_femur"), id("right_femur")]
    }
    /// Upper-limb bones used to carve the upper-limb region.
    pub fn upper_limbs() -> Vec<ClassId> {
        [
            "left_humerus",
            "right_humerus",
            "left_radius",
            "right_radius",
            "left_ulna",
            "right_ulna",
            "left_hand_bones",
            "right_hand_bones",
        ]
        .iter()
        .map(|n| id(n))
        .collect()
    }
}

/// Organ → body system assignment.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SystemMap {
    pub systems: BTreeMap<ClassId, BodySystem>,
}

impl SystemMap {
    pub fn system_of(&self, class: ClassId) -> Option<BodySystem> {
        self.systems.get(&class).copied()
    }

    pub fn members(&self, system: BodySystem) -> Vec<ClassId> {
        self.systems
            .iter()
            .filter(|(_, s)| **s == system)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// Many-to-one mapping from anatomical terms (synonyms, laterality
/// variants, both languages) to class ids. Terms are stored as normalized
/// word sequences so matching happens on tokenized text.
#[derive(Clone, Debug)]
pub struct Lexicon {
    terms: HashMap<Vec<String>, ClassId>,
    max_words: usize,
}

impl Lexicon {
    pub fn from_table(table: &ClassTable) -> Self {
        let mut lex = Self {
            terms: HashMap::new(),
            max_words: 0,
        };
        for c in &table.classes {
            for t in c.en.iter().chain(&c.zh) {
                lex.insert(t, c.id);
            }
        }
        lex
    }

    pub fn builtin() -> Self {
        Self::from_table(ClassTable::builtin())
    }

    pub fn insert(&mut self, term: &str, class: ClassId) {
        let words = crate::synth::tokenizer::split_words(term);
        if words.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(words.len());
        self.terms.insert(words, class);
    }

    pub fn lookup(&self, term: &str) -> Option<ClassId> {
        self.terms.get(&crate::synth::tokenizer::split_words(term)).copied()
    }

    /// Greedy longest-match scan over a word sequence. Returns
    /// `(class, start, end_exclusive)` spans in word indices.
    pub fn scan(&self, words: &[String]) -> Vec<(ClassId, usize, usize)> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=self.max_words.min(words.len() - i))
                .rev()
                .find_map(|len| self.terms.get(&words[i..i + len]).map(|&c| (c, len)));
            match longest {
                Some((c, len)) => {
                    spans.push((c, i, i + len));
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }
}
