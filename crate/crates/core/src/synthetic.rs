//! Planted-group study generator used by the tests and the demo data.
//!
//! Each group gets its own region and design (categorical) and its own
//! centre for participant age and follow-up length (numeric). Group 0 is
//! compact in characteristic space and homogeneous in effect; the other
//! groups are wider and carry between-study variance. Optional design
//! sub-types add structure inside a group.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CharacteristicKind, Dataset, Feature, Schema, Study, Value};
use crate::seed::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub group_sizes: Vec<usize>,
    /// True between-study variance inside each group.
    pub tau2: Vec<f64>,
    pub means: Vec<f64>,
    /// Half-width of the uniform jitter on the numeric characteristics.
    pub spread: Vec<f64>,
    /// Number of design sub-types inside each group.
    pub subtypes: Vec<usize>,
    pub variance_range: (f64, f64),
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            group_sizes: vec![10, 24, 24],
            tau2: vec![0.0, 0.2, 0.2],
            means: vec![0.2, 0.5, 0.8],
            spread: vec![2.0, 8.0, 8.0],
            subtypes: vec![1, 1, 1],
            variance_range: (0.02, 0.1),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: Dataset,
    /// Planted group of every study, in dataset order.
    pub groups: Vec<usize>,
}

const REGIONS: [&str; 6] = ["north", "south", "east", "west", "central", "coastal"];
const DESIGNS: [&str; 6] = ["rct", "cohort", "crossover", "cluster-rct", "case-control", "stepped"];

const GROUP_STEP: f64 = 40.0;
const SUBTYPE_OFFSET: f64 = 12.0;

pub fn planted_groups(spec: &PlantedSpec) -> Result<Planted> {
    let g = spec.group_sizes.len();
    if g == 0 || g > REGIONS.len() {
        return Err(Error::invalid(format!("between 1 and {} groups supported, got {g}", REGIONS.len())));
    }
    if [spec.tau2.len(), spec.means.len(), spec.spread.len(), spec.subtypes.len()]
        .iter()
        .any(|&l| l != g)
    {
        return Err(Error::invalid("tau2, means, spread and subtypes need one entry per group"));
    }
    if spec.subtypes.iter().any(|&s| s == 0 || s * g > DESIGNS.len()) {
        return Err(Error::invalid(format!(
            "subtypes must be positive with at most {} designs in total",
            DESIGNS.len()
        )));
    }
    let (vlo, vhi) = spec.variance_range;
    if !(vlo > 0.0 && vhi >= vlo) {
        return Err(Error::invalid("variance_range must be positive and ordered"));
    }
    if spec.tau2.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::invalid("tau2 must be >= 0"));
    }

    let mut r = rng(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let schema = Schema::new(vec![
        Feature {
            name: "region".into(),
            kind: CharacteristicKind::Categorical,
        },
        Feature {
            name: "design".into(),
            kind: CharacteristicKind::Categorical,
        },
        Feature {
            name: "mean_age".into(),
            kind: CharacteristicKind::Numeric,
        },
        Feature {
            name: "followup_weeks".into(),
            kind: CharacteristicKind::Numeric,
        },
    ]);

    let mut studies = Vec::new();
    let mut groups = Vec::new();
    for (grp, &size) in spec.group_sizes.iter().enumerate() {
        let true_mean = spec.means[grp];
        let half = spec.spread[grp];
        for j in 0..size {
            let design = DESIGNS[grp + g * (j % spec.subtypes[grp])];
            let variance = if vhi > vlo { r.random_range(vlo..vhi) } else { vlo };
            let theta = true_mean + spec.tau2[grp].sqrt() * std.sample(&mut r);
            let effect = theta + variance.sqrt() * std.sample(&mut r);
            let sub = (j % spec.subtypes[grp]) as f64 * SUBTYPE_OFFSET;
            let age = 25.0 + GROUP_STEP * grp as f64 + sub + r.random_range(-half..=half);
            let weeks = 12.0 + GROUP_STEP * grp as f64 + sub + r.random_range(-half..=half);
            let i = studies.len();
            studies.push(Study {
                id: format!("S{:03}", i + 1),
                effect,
                variance,
                values: vec![
                    Some(Value::Categorical(REGIONS[grp].into())),
                    Some(Value::Categorical(design.into())),
                    Some(Value::Numeric((age * 10.0).round() / 10.0)),
                    Some(Value::Numeric((weeks * 10.0).round() / 10.0)),
                ],
            });
            groups.push(grp);
        }
    }
    Ok(Planted {
        dataset: Dataset::new(schema, studies),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_58_studies_in_three_groups() {
        let p = planted_groups(&PlantedSpec::default()).unwrap();
        assert_eq!(p.dataset.len(), 58);
        assert_eq!(p.groups.iter().filter(|&&g| g == 0).count(), 10);
        assert!(crate::dataset::validate_dataset(&p.dataset).is_ok());
    }

    #[test]
    fn seeded() {
        let a = planted_groups(&PlantedSpec::default()).unwrap();
        let b = planted_groups(&PlantedSpec::default()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = planted_groups(&PlantedSpec { seed: 2, ..Default::default() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }
}
