//! Dataset directory layout: `manifest.json` plus one study directory each.

use std::fs;
use std::path::{Path, PathBuf};

use holo_core::synth::{load_study, Study, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub dir: String,
    pub subject_age: f64,
    pub lesions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub version: u32,
    pub seed: u64,
    pub studies: Vec<ManifestEntry>,
    /// Report vocabulary; token ids index into it.
    pub vocabulary: Vocabulary,
}

impl DataManifest {
    pub fn write(&self, root: &Path) -> CliResult<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("corrupt manifest {}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(holo_core::Error::Version {
                found: m.version.to_string(),
                expected: MANIFEST_VERSION.to_string(),
            }
            .into());
        }
        if m.studies.is_empty() {
            return Err(CliError::Data(format!("{} lists no studies", path.display())));
        }
        Ok(m)
    }

    pub fn study_dir(&self, root: &Path, entry: &ManifestEntry) -> PathBuf {
        root.join(&entry.dir)
    }
}

/// The manifest and every study it lists, in manifest order.
pub fn load_dataset(root: &Path) -> CliResult<(DataManifest, Vec<Study>)> {
    let m = DataManifest::read(root)?;
    let studies = m
        .studies
        .iter()
        .map(|e| {
            let s = load_study(&m.study_dir(root, e))?;
            if s.id != e.id {
                return Err(CliError::Data(format!("study directory {} holds study {}", e.dir, s.id)));
            }
            Ok(s)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((m, studies))
}
