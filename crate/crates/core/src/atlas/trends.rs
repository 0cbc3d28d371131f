//! Body-system intensity by age stratum.

use serde::{Deserialize, Serialize};

use super::features::OrganFeatureMatrix;
use super::strata::AgeStrata;
use crate::anatomy::{BodySystem, SystemMap};
use crate::error::{Error, Result};

/// `(from - to) / from * 100`; `None` when `from` is zero or either side absent.
pub fn percent_change(from: Option<f64>, to: Option<f64>) -> Option<f64> {
    let (a, b) = (from?, to?);
    (a != 0.0).then(|| (a - b) / a * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemTrend {
    pub system: BodySystem,
    /// Member organs present in the feature matrix.
    pub organs: usize,
    pub young: Option<f64>,
    pub middle: Option<f64>,
    pub old: Option<f64>,
    /// Percent decline, positive when intensity falls.
    pub young_to_middle: Option<f64>,
    pub middle_to_old: Option<f64>,
    pub young_to_old: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemTrends {
    pub rows: Vec<SystemTrend>,
    pub notes: Vec<String>,
}

impl SystemTrends {
    pub fn get(&self, system: BodySystem) -> Option<&SystemTrend> {
        self.rows.iter().find(|r| r.system == system)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        let mut out = String::from("system,organs,young,middle,old,young_to_middle_pct,middle_to_old_pct,young_to_old_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{},{},{},{},{},{},{}\n",
                r.system,
                r.organs,
                f(r.young),
                f(r.middle),
                f(r.old),
                f(r.young_to_middle),
                f(r.middle_to_old),
                f(r.young_to_old)
            ));
        }
        out
    }
}

/// Per subject, the system intensity is the mean of its member organs that
/// are present; each stratum then averages its subjects. A split middle
/// stratum is pooled.
pub fn system_trends(features: &OrganFeatureMatrix, systems: &SystemMap, strata: &AgeStrata) -> Result<SystemTrends> {
    let groups = [
        ("young", strata.get("young").map(|s| s.members.clone()).unwrap_or_default()),
        ("middle", strata.middle()),
        ("old", strata.get("old").map(|s| s.members.clone()).unwrap_or_default()),
    ];
    if let Some((name, _)) = groups.iter().find(|(_, m)| m.is_empty()) {
        return Err(Error::Domain(format!("{name} stratum is empty")));
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for system in BodySystem::ALL {
        let cols: Vec<usize> = (0..features.organs.len())
            .filter(|&o| systems.system_of(features.organs[o]) == Some(system))
            .collect();
        if cols.is_empty() {
            notes.push(format!("{system:?}: no member organs present"));
            continue;
        }
        let subject_value = |s: usize| -> Option<f64> {
            let v: Vec<f64> = cols.iter().filter_map(|&o| features.values[s][o]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let [young, middle, old] = groups.clone().map(|(name, members)| {
            let v: Vec<f64> = members.iter().filter_map(|&s| subject_value(s)).collect();
            if v.is_empty() {
                notes.push(format!("{system:?}: no {name} subject has a member organ"));
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        });
        rows.push(SystemTrend {
            system,
            organs: cols.len(),
            young,
            middle,
            old,
            young_to_middle: percent_change(young, middle),
            middle_to_old: percent_change(middle, old),
            young_to_old: percent_change(young, old),
        });
    }
    Ok(SystemTrends { rows, notes })
}
