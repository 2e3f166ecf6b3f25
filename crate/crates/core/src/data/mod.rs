//! Datasets on disk, synthetic generators and evaluation metrics.
//!
//! A dataset directory holds one `XPC1` file per cloud plus `manifest.json`
//! listing each file with its label and split.

pub mod cloud_io;
pub mod metrics;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::network::Task;

pub use cloud_io::{read_cloud, write_cloud};
pub use metrics::{Metrics, ShapeResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled clouds with a train/test assignment.
///
/// For segmentation, `cloud_label` is the shape category and `part_sets[c]`
/// lists the part labels category `c` may carry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub class_names: Vec<String>,
    pub part_sets: Vec<Vec<usize>>,
    pub clouds: Vec<PointSet>,
    pub splits: Vec<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: Task,
    pub seed: u64,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub part_sets: Vec<Vec<usize>>,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn new(
        task: Task,
        class_names: Vec<String>,
        part_sets: Vec<Vec<usize>>,
        clouds: Vec<PointSet>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let d = Dataset {
            task,
            class_names,
            part_sets,
            clouds,
            splits,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clouds.len() != self.splits.len() {
            return Err(Error::validation("every cloud needs exactly one split"));
        }
        let classes = self.class_names.len();
        if self.task == Task::Segmentation && self.part_sets.len() != classes {
            return Err(Error::validation("segmentation datasets need one part set per category"));
        }
        let parts = self.num_labels();
        for (i, c) in self.clouds.iter().enumerate() {
            let label = c.cloud_label.ok_or_else(|| Error::validation(format!("cloud {i} has no label")))?;
            if label >= classes {
                return Err(Error::validation(format!("cloud {i}: label {label} ≥ {classes} classes")));
            }
            if self.task == Task::Segmentation {
                let pl = c
                    .point_labels
                    .as_ref()
                    .ok_or_else(|| Error::validation(format!("cloud {i} has no point labels")))?;
                if let Some(&bad) = pl.iter().find(|&&l| l >= parts || !self.part_sets[label].contains(&l)) {
                    return Err(Error::validation(format!(
                        "cloud {i}: part {bad} not in category {label}'s part set"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of output labels a network predicts: classes or parts.
    pub fn num_labels(&self) -> usize {
        match self.task {
            Task::Classification => self.class_names.len(),
            Task::Segmentation => self.part_sets.iter().flatten().max().map_or(0, |m| m + 1),
        }
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.clouds.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn clouds_in(&self, split: Split) -> Vec<&PointSet> {
        self.split_indices(split).into_iter().map(|i| &self.clouds[i]).collect()
    }

    /// Writes every cloud plus the manifest into `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<Manifest> {
        std::fs::create_dir_all(dir.join("clouds"))?;
        let mut entries = Vec::with_capacity(self.clouds.len());
        for (i, (c, &split)) in self.clouds.iter().zip(&self.splits).enumerate() {
            let rel = format!("clouds/{i:05}.xpc");
            write_cloud(&dir.join(&rel), c)?;
            entries.push(ManifestEntry {
                path: rel,
                label: c.cloud_label.unwrap_or(0),
                split,
            });
        }
        let manifest = Manifest {
            task: self.task,
            seed,
            class_names: self.class_names.clone(),
            part_sets: self.part_sets.clone(),
            entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::State(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST), json + "\n")?;
        Ok(manifest)
    }

    /// Loads a dataset from a directory or a manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, file): (PathBuf, PathBuf) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let text = std::fs::read_to_string(&file)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", file.display()),
        })?;
        let mut clouds = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let mut c = read_cloud(&dir.join(&e.path))?;
            c.cloud_label = Some(e.label);
            clouds.push(c);
        }
        Dataset::new(
            manifest.task,
            manifest.class_names,
            manifest.part_sets,
            clouds,
            manifest.entries.iter().map(|e| e.split).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth::gen_parts(2, 1, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        d.save(dir.path(), 3).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.task, Task::Segmentation);
        assert_eq!(back.splits, d.splits);
        assert_eq!(back.num_labels(), 4);
        for (a, b) in d.clouds.iter().zip(&back.clouds) {
            assert_eq!(a.point_labels, b.point_labels);
            assert_eq!(a.cloud_label, b.cloud_label);
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn labels_outside_part_set_are_rejected() {
        let mut d = synth::gen_parts(1, 0, 8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        d.clouds[0].point_labels.as_mut().unwrap()[0] = 3;
        assert!(d.validate().is_err());
    }
}
