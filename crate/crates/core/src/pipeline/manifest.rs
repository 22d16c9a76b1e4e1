//! Training-scheme manifests: which annotation documents a detector run
//! consumes, in which order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, Dataset, SplitSpec};
use crate::error::{Error, Result};

pub const LEARNING_RATE: f64 = 0.001;
pub const FINETUNE_LEARNING_RATE: f64 = 0.0007;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingScheme {
    /// Real and synthetic data in one joint stage.
    Mixed,
    /// Synthetic first, then finetune on real.
    AugThenOrig,
    /// Real first, then finetune on synthetic.
    OrigThenAug,
}

impl TrainingScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingScheme::Mixed => "mixed",
            TrainingScheme::AugThenOrig => "aug-then-orig",
            TrainingScheme::OrigThenAug => "orig-then-aug",
        }
    }
}

impl fmt::Display for TrainingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "mixed" => Ok(TrainingScheme::Mixed),
            "aug-then-orig" => Ok(TrainingScheme::AugThenOrig),
            "orig-then-aug" => Ok(TrainingScheme::OrigThenAug),
            other => Err(Error::param(format!("unknown training scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataOrigin {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDataset {
    pub annotation_path: String,
    pub origin: DataOrigin,
    pub image_count: usize,
    pub annotation_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub datasets: Vec<ManifestDataset>,
    /// Hint for the external detector trainer; not used here.
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: TrainingScheme,
    pub stages: Vec<Stage>,
    pub real_images: usize,
    pub synthetic_images: usize,
    /// Percent of images that are real and synthetic.
    pub real_synthetic_ratio: [f64; 2],
    /// `"real : synthetic"` at one decimal, e.g. `"50.0 : 50.0"`.
    pub ratio_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

/// A dataset together with the document path the manifest should cite.
#[derive(Clone, Copy, Debug)]
pub struct DatasetRef<'a> {
    pub annotation_path: &'a str,
    pub dataset: &'a Dataset,
}

impl<'a> DatasetRef<'a> {
    pub fn new(annotation_path: &'a str, dataset: &'a Dataset) -> Self {
        DatasetRef { annotation_path, dataset }
    }

    fn entry(&self, origin: DataOrigin) -> ManifestDataset {
        ManifestDataset {
            annotation_path: self.annotation_path.to_string(),
            origin,
            image_count: self.dataset.images().len(),
            annotation_count: self.dataset.annotations().len(),
        }
    }
}

pub fn ratio_label(real: usize, synthetic: usize) -> ([f64; 2], String) {
    let total = (real + synthetic) as f64;
    let r = if total > 0.0 { 100.0 * real as f64 / total } else { 0.0 };
    let s = if total > 0.0 { 100.0 - r } else { 0.0 };
    ([r, s], format!("{r:.1} : {s:.1}"))
}

pub fn emit_manifests(
    real: DatasetRef<'_>,
    synthetic: &[DatasetRef<'_>],
    scheme: TrainingScheme,
    split: Option<SplitSpec>,
) -> Result<Manifest> {
    if synthetic.is_empty() {
        return Err(Error::EmptyDatasetList);
    }
    let real_entry = real.entry(DataOrigin::Real);
    let syn_entries: Vec<_> = synthetic.iter().map(|d| d.entry(DataOrigin::Synthetic)).collect();
    let real_images = real_entry.image_count;
    let synthetic_images = syn_entries.iter().map(|e| e.image_count).sum();
    let stages = match scheme {
        TrainingScheme::Mixed => {
            let mut all = vec![real_entry];
            all.extend(syn_entries);
            vec![Stage { name: "mixed".into(), datasets: all, learning_rate: LEARNING_RATE }]
        }
        TrainingScheme::AugThenOrig => vec![
            Stage { name: "synthetic".into(), datasets: syn_entries, learning_rate: LEARNING_RATE },
            Stage { name: "real-finetune".into(), datasets: vec![real_entry], learning_rate: FINETUNE_LEARNING_RATE },
        ],
        TrainingScheme::OrigThenAug => vec![
            Stage { name: "real".into(), datasets: vec![real_entry], learning_rate: LEARNING_RATE },
            Stage { name: "synthetic-finetune".into(), datasets: syn_entries, learning_rate: FINETUNE_LEARNING_RATE },
        ],
    };
    let (ratio, label) = ratio_label(real_images, synthetic_images);
    Ok(Manifest { scheme, stages, real_images, synthetic_images, real_synthetic_ratio: ratio, ratio_label: label, split })
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Reloads every cited document (relative paths resolve against
    /// `base`) and checks the recorded counts.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for stage in &self.stages {
            for d in &stage.datasets {
                let path = base.join(&d.annotation_path);
                let loaded = load_dataset(&path, base, false)?;
                let (imgs, anns) = (loaded.dataset.images().len(), loaded.dataset.annotations().len());
                if imgs != d.image_count || anns != d.annotation_count {
                    return Err(Error::param(format!(
                        "{}: manifest says {} images / {} annotations, document has {imgs} / {anns}",
                        d.annotation_path, d.image_count, d.annotation_count
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageRecord;

    fn images(n: u64) -> Dataset {
        let imgs = (1..=n).map(|id| ImageRecord { id, file_name: format!("{id}.png"), width: 4, height: 4 }).collect();
        Dataset::new(imgs, vec![], vec![]).unwrap()
    }

    #[test]
    fn equal_halves() {
        let real = images(3408);
        let syn = images(3408);
        let m = emit_manifests(DatasetRef::new("r.json", &real), &[DatasetRef::new("s.json", &syn)], TrainingScheme::Mixed, None)
            .unwrap();
        assert_eq!(m.ratio_label, "50.0 : 50.0");
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].datasets.len(), 2);
    }

    #[test]
    fn staged_schemes_order() {
        let real = images(2);
        let syn = images(6);
        let refs = [DatasetRef::new("s.json", &syn)];
        let a = emit_manifests(DatasetRef::new("r.json", &real), &refs, TrainingScheme::AugThenOrig, None).unwrap();
        assert_eq!(a.stages.len(), 2);
        assert_eq!(a.stages[0].datasets[0].origin, DataOrigin::Synthetic);
        assert_eq!(a.stages[1].learning_rate, FINETUNE_LEARNING_RATE);
        let o = emit_manifests(DatasetRef::new("r.json", &real), &refs, TrainingScheme::OrigThenAug, None).unwrap();
        assert_eq!(o.stages[0].datasets[0].origin, DataOrigin::Real);
        assert_eq!(o.ratio_label, "25.0 : 75.0");
    }

    #[test]
    fn empty_synthetic_list() {
        let real = images(2);
        assert!(matches!(
            emit_manifests(DatasetRef::new("r", &real), &[], TrainingScheme::Mixed, None),
            Err(Error::EmptyDatasetList)
        ));
    }

    #[test]
    fn scheme_names() {
        for s in [TrainingScheme::Mixed, TrainingScheme::AugThenOrig, TrainingScheme::OrigThenAug] {
            assert_eq!(s.as_str().parse::<TrainingScheme>().unwrap(), s);
        }
        assert_eq!("aug_then_orig".parse::<TrainingScheme>().unwrap(), TrainingScheme::AugThenOrig);
    }
}
