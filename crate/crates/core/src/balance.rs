//! Tiered class-balancing schedule.
//!
//! Each category's instance count selects a tier; every real instance is
//! then replicated `augs_per_instance` times as synthetic objects.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Inclusive upper bound on the instance count and the replication factor
/// applied below it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tier {
    pub max_instances: u64,
    pub augs_per_instance: u64,
}

const fn tier(max_instances: u64, augs_per_instance: u64) -> Tier {
    Tier { max_instances, augs_per_instance }
}

pub const SCHEDULE: [Tier; 12] = [
    tier(5, 335),
    tier(9, 130),
    tier(19, 80),
    tier(29, 45),
    tier(49, 35),
    tier(74, 20),
    tier(99, 15),
    tier(149, 10),
    tier(249, 7),
    tier(499, 3),
    tier(999, 2),
    tier(3000, 1),
];

/// Instance count the schedule balances toward.
pub const BALANCE_TARGET: u64 = 1000;

/// Replication factor for a class with `count` instances. Zero above the
/// last tier and for empty classes.
pub fn augs_per_instance(count: i64) -> Result<u64> {
    if count < 0 {
        return Err(Error::NegativeCount(count));
    }
    if count == 0 {
        log::warn!("class with zero instances has nothing to replicate");
        return Ok(0);
    }
    let count = count as u64;
    Ok(SCHEDULE
        .iter()
        .find(|t| t.max_instances >= count)
        .map_or(0, |t| t.augs_per_instance))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub current: u64,
    pub augs_per_instance: u64,
    pub planned_synthetic: u64,
}

impl PlanEntry {
    pub fn post_balance_total(&self) -> u64 {
        self.current + self.planned_synthetic
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub entries: BTreeMap<u64, PlanEntry>,
}

impl AugmentationPlan {
    pub fn from_counts(counts: &BTreeMap<u64, usize>) -> Self {
        let entries = counts
            .iter()
            .map(|(&cat, &n)| {
                let augs = augs_per_instance(n as i64).expect("counts are non-negative");
                (cat, PlanEntry { current: n as u64, augs_per_instance: augs, planned_synthetic: n as u64 * augs })
            })
            .collect();
        AugmentationPlan { entries }
    }

    pub fn total_planned(&self) -> u64 {
        self.entries.values().map(|e| e.planned_synthetic).sum()
    }

    /// Categories that receive synthetic instances yet still end below
    /// `target`.
    pub fn shortfalls(&self, target: u64) -> Vec<(u64, PlanEntry)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.planned_synthetic > 0 && e.post_balance_total() < target)
            .map(|(&c, &e)| (c, e))
            .collect()
    }

    /// CSV report: `category_id,name,current,augs_per_instance,planned,total`.
    pub fn to_csv(&self, dataset: &Dataset) -> String {
        let mut out = String::from("category_id,name,current,augs_per_instance,planned,total\n");
        for (cat, e) in &self.entries {
            let name = dataset.category(*cat).map_or("", |c| c.name.as_str());
            let _ = writeln!(
                out,
                "{cat},{},{},{},{},{}",
                csv_field(name),
                e.current,
                e.augs_per_instance,
                e.planned_synthetic,
                e.post_balance_total()
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Plan for every category of `dataset` (normally the training split).
pub fn build_plan(dataset: &Dataset) -> AugmentationPlan {
    let plan = AugmentationPlan::from_counts(&dataset.class_stats());
    for (cat, e) in &plan.entries {
        if e.current == 0 {
            log::warn!("category {cat} has no instances; nothing planned");
        }
    }
    log::info!("balance plan: {} synthetic instances across {} categories", plan.total_planned(), plan.entries.len());
    plan
}

/// Every instance count in `1..=max_count` whose post-balance total stays
/// below `target` even though it receives augmentation.
pub fn schedule_shortfalls(target: u64, max_count: u64) -> Vec<(u64, u64)> {
    (1..=max_count)
        .filter_map(|c| {
            let augs = augs_per_instance(c as i64).ok()?;
            let total = c + c * augs;
            (augs > 0 && total < target).then_some((c, total))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, Category, ImageRecord, Provenance};
    use crate::geometry::BBox;

    #[test]
    fn tier_values_and_boundaries() {
        assert_eq!(augs_per_instance(5).unwrap(), 335);
        assert_eq!(augs_per_instance(6).unwrap(), 130);
        assert_eq!(augs_per_instance(9).unwrap(), 130);
        assert_eq!(augs_per_instance(10).unwrap(), 80);
        assert_eq!(augs_per_instance(1500).unwrap(), 1);
        assert_eq!(augs_per_instance(3000).unwrap(), 1);
        assert_eq!(augs_per_instance(3001).unwrap(), 0);
        assert_eq!(augs_per_instance(4000).unwrap(), 0);
        assert_eq!(augs_per_instance(0).unwrap(), 0);
        assert!(matches!(augs_per_instance(-1), Err(Error::NegativeCount(-1))));
    }

    #[test]
    fn schedule_is_well_formed() {
        for pair in SCHEDULE.windows(2) {
            assert!(pair[0].max_instances < pair[1].max_instances);
            assert!(pair[0].augs_per_instance >= pair[1].augs_per_instance);
        }
    }

    fn dataset_with_counts(counts: &[(u64, usize)]) -> Dataset {
        let images = vec![ImageRecord { id: 1, file_name: "x.png".into(), width: 50, height: 50 }];
        let mut annotations = Vec::new();
        let mut id = 0;
        for &(cat, n) in counts {
            for _ in 0..n {
                id += 1;
                annotations.push(Annotation {
                    id,
                    image_id: 1,
                    category_id: cat,
                    bbox: BBox::new(1.0, 1.0, 5.0, 5.0),
                    provenance: Provenance::Real,
                });
            }
        }
        let categories = counts.iter().map(|&(id, _)| Category { id, name: format!("c{id}") }).collect();
        Dataset::new(images, annotations, categories).unwrap()
    }

    #[test]
    fn plan_arithmetic() {
        let ds = dataset_with_counts(&[(1, 3), (2, 2000), (3, 0)]);
        let plan = build_plan(&ds);
        assert_eq!(plan.entries[&1].planned_synthetic, 1005);
        assert_eq!(plan.entries[&1].post_balance_total(), 1008);
        assert_eq!(plan.entries[&2].planned_synthetic, 2000);
        assert_eq!(plan.entries[&3].planned_synthetic, 0);
        assert_eq!(plan.total_planned(), 3005);
        let csv = plan.to_csv(&ds);
        assert!(csv.contains("1,c1,3,335,1005,1008"));
    }

    #[test]
    fn shortfall_report() {
        let short = schedule_shortfalls(BALANCE_TARGET, 3000);
        let counts: Vec<u64> = short.iter().map(|&(c, _)| c).collect();
        assert_eq!(counts, vec![1, 2, 6, 7, 10, 11, 12, 20, 21]);
        assert!(short.contains(&(1, 336)));
        assert!(short.contains(&(2, 672)));
        assert!(short.contains(&(6, 786)));
        assert!(short.contains(&(7, 917)));
    }
}
