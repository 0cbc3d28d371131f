//! Harmonizes two anatomical label sources into the canonical 180-class mask:
//! per-source relabeling, priority fusion, then topology cleanup.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::anatomy::{ClassId, Lexicon, BACKGROUND, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::morphology::{for_each_neighbor, label_components_by, Connectivity};
use crate::synth::MaskVolume;

/// Per-source label tables plus the set of canonical classes that the
/// priority source (A) covers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelLookup {
    pub sources: BTreeMap<String, BTreeMap<u16, ClassId>>,
    pub covered_by_a: BTreeMap<ClassId, bool>,
}

impl LabelLookup {
    pub fn from_json(text: &str) -> Result<Self> {
        let lookup: Self = serde_json::from_str(text)?;
        lookup.validate()?;
        Ok(lookup)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (src, table) in &self.sources {
            if let Some((l, c)) = table.iter().find(|(_, &c)| c == BACKGROUND || c > NUM_CLASSES) {
                return Err(Error::Config(format!("source {src} maps label {l} to invalid class {c}")));
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, source: &str, label: u16, canonical: ClassId) {
        self.sources.entry(source.to_string()).or_default().insert(label, canonical);
    }

    /// Adds a source whose labels are given by name; names are normalized
    /// (underscores, laterality order, synonyms) through the lexicon.
    pub fn insert_named(&mut self, source: &str, names: &[(u16, &str)], lexicon: &Lexicon) -> Result<()> {
        for &(label, name) in names {
            let class = normalize_name(name, lexicon).ok_or_else(|| Error::UnmappedLabel {
                source_id: source.to_string(),
                label,
            })?;
            self.insert(source, label, class);
        }
        Ok(())
    }

    pub fn exists_in_a(&self, class: ClassId) -> bool {
        self.covered_by_a.get(&class).copied().unwrap_or(false)
    }

    /// Marks every class reachable from `source` as covered by source A.
    pub fn mark_covered_from(&mut self, source: &str) {
        if let Some(table) = self.sources.get(source) {
            for &c in table.values() {
                self.covered_by_a.insert(c, true);
            }
        }
    }
}

/// Resolves source label names such as `kidney_left` or `Left Kidney`.
fn normalize_name(name: &str, lexicon: &Lexicon) -> Option<ClassId> {
    let spaced = name.replace(['_', '-'], " ");
    if let Some(c) = lexicon.lookup(&spaced) {
        return Some(c);
    }
    // Trailing laterality: "kidney left" -> "left kidney".
    let words: Vec<&str> = spaced.split_whitespace().collect();
    if let Some((last, rest)) = words.split_last() {
        if matches!(last.to_lowercase().as_str(), "left" | "right") {
            let moved = format!("{last} {}", rest.join(" "));
            return lexicon.lookup(&moved);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanupConfig {
    /// Components smaller than this many voxels are removed.
    pub delta: usize,
    pub fill_holes: bool,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            delta: 10,
            fill_holes: true,
        }
    }
}

/// Relabels a source mask into canonical ids.
pub fn map_labels(source_mask: &MaskVolume, lookup: &LabelLookup, source_id: &str) -> Result<MaskVolume> {
    let empty = BTreeMap::new();
    let table = lookup.sources.get(source_id).unwrap_or(&empty);
    let mut labels = Vec::with_capacity(source_mask.labels.len());
    for &l in &source_mask.labels {
        if l == BACKGROUND {
            labels.push(BACKGROUND);
            continue;
        }
        match table.get(&l) {
            Some(&c) => labels.push(c),
            None => {
                return Err(Error::UnmappedLabel {
                    source_id: source_id.to_string(),
                    label: l,
                })
            }
        }
    }
    MaskVolume::new(source_mask.grid, labels)
}

/// Voxelwise fusion of canonical masks; source A wins conflicts for classes it covers.
pub fn fuse_priority(mask_a: &MaskVolume, mask_b: &MaskVolume, lookup: &LabelLookup) -> Result<MaskVolume> {
    if mask_a.grid != mask_b.grid {
        return Err(Error::Consistency(format!(
            "fusion grids differ: {:?} vs {:?}",
            mask_a.grid, mask_b.grid
        )));
    }
    let labels = mask_a
        .labels
        .iter()
        .zip(&mask_b.labels)
        .map(|(&a, &b)| match (a, b) {
            (BACKGROUND, b) => b,
            (a, BACKGROUND) => a,
            (a, b) if a == b => a,
            (a, b) => {
                if lookup.exists_in_a(a) {
                    a
                } else {
                    b
                }
            }
        })
        .collect();
    MaskVolume::new(mask_a.grid, labels)
}

/// Removes per-class 26-connected islands smaller than `delta`, then fills
/// 6-connected background cavities enclosed by exactly one class.
pub fn topology_cleanup(mask: &MaskVolume, config: &CleanupConfig) -> Result<MaskVolume> {
    if config.delta == 0 {
        return Err(Error::Config("cleanup delta must be at least 1".into()));
    }
    let dims = mask.grid.dims;
    let mut labels = mask.labels.clone();

    let islands = label_components_by(dims, Connectivity::TwentySix, |i| labels[i] != BACKGROUND, |i| labels[i]);
    for (i, l) in labels.iter_mut().enumerate() {
        let comp = islands.labels[i];
        if comp != 0 && islands.size_of(comp) < config.delta {
            *l = BACKGROUND;
        }
    }

    if config.fill_holes {
        let holes = label_components_by(dims, Connectivity::Six, |i| labels[i] == BACKGROUND, |_| ());
        let six = Connectivity::Six.offsets();
        let mut borders: Vec<BTreeSet<ClassId>> = vec![BTreeSet::new(); holes.count()];
        let mut touches_edge = vec![false; holes.count()];
        for i in 0..labels.len() {
            let comp = holes.labels[i];
            if comp == 0 {
                continue;
            }
            let k = comp as usize - 1;
            let [x, y, z] = mask.grid.coords(i);
            if x == 0 || y == 0 || z == 0 || x + 1 == dims[0] || y + 1 == dims[1] || z + 1 == dims[2] {
                touches_edge[k] = true;
            }
            for_each_neighbor(dims, i, &six, |nb| {
                if labels[nb] != BACKGROUND {
                    borders[k].insert(labels[nb]);
                }
            });
        }
        let fill: Vec<Option<ClassId>> = borders
            .iter()
            .zip(&touches_edge)
            .map(|(b, &edge)| if !edge && b.len() == 1 { b.first().copied() } else { None })
            .collect();
        for (i, l) in labels.iter_mut().enumerate() {
            let comp = holes.labels[i];
            if comp != 0 {
                if let Some(c) = fill[comp as usize - 1] {
                    *l = c;
                }
            }
        }
    }
    MaskVolume::new(mask.grid, labels)
}

/// Full pipeline: map both sources, fuse, clean.
pub fn harmonize(
    source_a: &MaskVolume,
    source_b: &MaskVolume,
    lookup: &LabelLookup,
    ids: (&str, &str),
    cleanup: &CleanupConfig,
) -> Result<MaskVolume> {
    let a = map_labels(source_a, lookup, ids.0)?;
    let b = map_labels(source_b, lookup, ids.1)?;
    topology_cleanup(&fuse_priority(&a, &b, lookup)?, cleanup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::well_known;
    use crate::synth::Grid;

    fn grid(d: usize) -> Grid {
        Grid::new([d, d, d], [1.0; 3]).unwrap()
    }

    fn lookup() -> LabelLookup {
        let mut l = LabelLookup::default();
        l.insert("A", 7, 42);
        l.insert("A", 1, 10);
        l.insert("B", 3, 11);
        l.insert("B", 4, 10);
        l.covered_by_a.insert(10, true);
        l.covered_by_a.insert(42, true);
        l
    }

    #[test]
    fn map_background_and_pointwise() {
        let g = grid(4);
        let bg = MaskVolume::background(g);
        assert_eq!(map_labels(&bg, &lookup(), "A").unwrap(), bg);
        let mut m = MaskVolume::background(g);
        m.labels[0] = 7;
        m.labels[5] = 7;
        let out = map_labels(&m, &lookup(), "A").unwrap();
        assert_eq!(out.labels[0], 42);
        assert_eq!(out.labels[5], 42);
        assert_eq!(out.labels.iter().filter(|&&l| l != 0).count(), 2);
    }

    #[test]
    fn unmapped_label_is_reported() {
        let mut m = MaskVolume::background(grid(2));
        m.labels[3] = 99;
        match map_labels(&m, &lookup(), "A") {
            Err(Error::UnmappedLabel { label, source_id }) => {
                assert_eq!(label, 99);
                assert_eq!(source_id, "A");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn priority_rules() {
        let g = grid(2);
        let mut a = MaskVolume::background(g);
        let mut b = MaskVolume::background(g);
        a.labels[0] = 10; // disjoint support
        b.labels[1] = 11;
        a.labels[2] = 10; // conflict, A covers 10
        b.labels[2] = 11;
        b.labels[3] = 11; // A background, class 11 absent from A
        a.labels[4] = 12; // conflict, A does not cover 12
        b.labels[4] = 11;
        let f = fuse_priority(&a, &b, &lookup()).unwrap();
        assert_eq!(&f.labels[..5], &[10, 11, 10, 11, 11]);
    }

    #[test]
    fn fusion_grid_mismatch() {
        let r = fuse_priority(&MaskVolume::background(grid(2)), &MaskVolume::background(grid(3)), &lookup());
        assert!(matches!(r, Err(Error::Consistency(_))));
    }

    #[test]
    fn island_threshold_boundary() {
        let g = Grid::new([12, 3, 3], [1.0; 3]).unwrap();
        let cfg = CleanupConfig {
            delta: 4,
            fill_holes: false,
        };
        let mut m = MaskVolume::background(g);
        for x in 0..3 {
            m.labels[g.index(x, 1, 1)] = 5; // size delta - 1
        }
        for x in 6..10 {
            m.labels[g.index(x, 1, 1)] = 6; // size delta
        }
        let out = topology_cleanup(&m, &cfg).unwrap();
        assert!(out.labels.iter().all(|&l| l != 5));
        assert_eq!(out.labels.iter().filter(|&&l| l == 6).count(), 4);
    }

    #[test]
    fn enclosed_cavity_is_filled() {
        let g = grid(7);
        let mut m = MaskVolume::background(g);
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    m.labels[g.index(x, y, z)] = 3;
                }
            }
        }
        m.labels[g.index(3, 3, 3)] = 0;
        let out = topology_cleanup(&m, &CleanupConfig::default()).unwrap();
        assert_eq!(out.at(3, 3, 3), 3);
        assert_eq!(out.at(0, 0, 0), 0);
    }

    #[test]
    fn cavity_with_two_bordering_classes_is_kept() {
        let g = grid(7);
        let mut m = MaskVolume::background(g);
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    m.labels[g.index(x, y, z)] = if x < 3 { 3 } else { 4 };
                }
            }
        }
        m.labels[g.index(3, 3, 3)] = 0;
        m.labels[g.index(2, 3, 3)] = 0;
        let out = topology_cleanup(&m, &CleanupConfig::default()).unwrap();
        assert_eq!(out.at(3, 3, 3), 0);
    }

    #[test]
    fn lookup_json_round_trip_and_named_sources() {
        let mut l = lookup();
        l.insert_named("B", &[(20, "kidney_left"), (21, "Urinary Bladder")], &Lexicon::builtin())
            .unwrap();
        assert_eq!(l.sources["B"][&20], well_known::kidneys()[0]);
        assert_eq!(l.sources["B"][&21], well_known::bladder());
        let back = LabelLookup::from_json(&l.to_json().unwrap()).unwrap();
        assert_eq!(back, l);
        let err = l.insert_named("B", &[(22, "flux capacitor")], &Lexicon::builtin());
        assert!(matches!(err, Err(Error::UnmappedLabel { label: 22, .. })));
    }
}
