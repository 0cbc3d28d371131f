//! Age strata.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrataConfig {
    /// Closed year intervals.
    pub young: (u32, u32),
    pub middle: (u32, u32),
    pub old: (u32, u32),
    /// Splits the middle stratum into `[lo, split]` and `[split + 1, hi]`.
    #[serde(default)]
    pub middle_split: Option<u32>,
}

impl Default for StrataConfig {
    fn default() -> Self {
        Self {
            young: (12, 45),
            middle: (46, 65),
            old: (66, 82),
            middle_split: None,
        }
    }
}

impl StrataConfig {
    pub fn with_split(split: u32) -> Self {
        Self {
            middle_split: Some(split),
            ..Self::default()
        }
    }

    /// Named closed intervals in age order.
    pub fn intervals(&self) -> Vec<(&'static str, (u32, u32))> {
        let mut out = vec![("young", self.young)];
        match self.middle_split {
            Some(s) => {
                out.push(("middle_lower", (self.middle.0, s)));
                out.push(("middle_upper", (s + 1, self.middle.1)));
            }
            None => out.push(("middle", self.middle)),
        }
        out.push(("old", self.old));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub range: (u32, u32),
    /// Row indices into the feature matrix.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeStrata {
    pub strata: Vec<Stratum>,
    /// Indices of subjects outside every interval.
    pub rejected: Vec<usize>,
}

impl AgeStrata {
    pub fn get(&self, name: &str) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.name == name)
    }

    /// Members of the whole middle interval, split or not.
    pub fn middle(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .strata
            .iter()
            .filter(|s| s.name.starts_with("middle"))
            .flat_map(|s| s.members.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Assigns each age (floored to whole years) to its closed interval.
pub fn stratify(ages: &[f64], config: &StrataConfig) -> AgeStrata {
    let intervals = config.intervals();
    let mut strata: Vec<Stratum> = intervals
        .iter()
        .map(|&(name, range)| Stratum {
            name: name.to_string(),
            range,
            members: vec![],
        })
        .collect();
    let mut rejected = vec![];
    for (i, &a) in ages.iter().enumerate() {
        let y = a.floor();
        match intervals
            .iter()
            .position(|&(_, (lo, hi))| y >= lo as f64 && y <= hi as f64)
        {
            Some(k) => strata[k].members.push(i),
            None => rejected.push(i),
        }
    }
    AgeStrata { strata, rejected }
}
