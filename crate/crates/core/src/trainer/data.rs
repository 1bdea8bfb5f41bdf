use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, Target};
use crate::error::{Error, Result};
use crate::model::{read_manifest, FeatureBundle, ManifestRow};

/// A labelled video held in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub row: ManifestRow,
    pub bundle: FeatureBundle,
}

impl Sample {
    /// Ground truth for the first head in target units.
    pub fn target_label(&self, target: Target) -> Option<f64> {
        match target {
            Target::Nawp => self.row.nawp_label,
            Target::Awt => self.row.awt_label,
            Target::Awp => self.row.awp_label,
        }
    }

    pub fn ecr_label(&self) -> Option<f64> {
        self.row.ecr_label
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.row.video_id != s.bundle.video_id {
                return Err(Error::invalid(format!(
                    "manifest row `{}` points at bundle `{}`",
                    s.row.video_id, s.bundle.video_id
                )));
            }
            if !seen.insert(s.row.video_id.as_str()) {
                return Err(Error::invalid(format!("duplicate video `{}`", s.row.video_id)));
            }
        }
        Ok(Dataset { samples })
    }

    /// Reads a manifest and every feature bundle it references. Relative
    /// feature paths are resolved against the manifest's directory.
    pub fn load(manifest: &Path) -> Result<Self> {
        let rows = read_manifest(BufReader::new(File::open(manifest)?))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let samples = rows
            .into_iter()
            .map(|row| {
                let path = base.join(&row.feature_path);
                let bundle = FeatureBundle::load(&path).map_err(|e| {
                    Error::invalid(format!("{}: {}: {e}", row.video_id, path.display()))
                })?;
                Ok(Sample { row, bundle })
            })
            .collect::<Result<_>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.row.video_id.clone()).collect()
    }

    pub fn position(&self, video_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.row.video_id == video_id)
    }

    /// Errors if any sample lacks a finite label the mode needs.
    pub fn check_labels(&self, mode: Mode, target: Target) -> Result<()> {
        let check = |id: &str, what: &str, v: Option<f64>| match v {
            None => Err(Error::invalid(format!("{id}: missing {what} label"))),
            Some(x) if !x.is_finite() => Err(Error::invalid(format!("{id}: non-finite {what} label"))),
            Some(_) => Ok(()),
        };
        for s in &self.samples {
            let id = s.row.video_id.as_str();
            if mode.trains_first_head() {
                check(id, &format!("{target:?}"), s.target_label(target))?;
            }
            if mode.trains_ecr_head() {
                check(id, "ECR", s.ecr_label())?;
            }
        }
        Ok(())
    }
}

/// Seeded train/test partition. Ids are sorted before shuffling so the split
/// does not depend on manifest order; the train side gets
/// `floor(n * split_ratio)` ids, kept within `[1, n - 1]`.
pub fn split_dataset(ids: &[String], split_ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if ids.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 videos to split, got {}", ids.len())));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {split_ratio} outside (0, 1)")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate ids in split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n = sorted.len();
    let n_train = ((n as f64 * split_ratio + 1e-9).floor() as usize).clamp(1, n - 1);
    let test = sorted.split_off(n_train);
    Ok((sorted, test))
}
