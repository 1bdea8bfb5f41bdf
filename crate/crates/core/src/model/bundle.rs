use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, ModelConfig};
use crate::aggregate::parse_jsonl;
use crate::error::{Error, Result};
use crate::numcore::io::{read_arrays, read_f64, read_magic, read_str, read_u32};
use crate::numcore::io::{write_arrays, write_f64, write_magic, write_str, write_u32};
use crate::numcore::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"ENGF";
pub const FEATURE_VERSION: u32 = 1;

/// Number of whole clips in a video; a trailing partial clip is dropped.
pub fn n_clips_for(duration_s: f64, frame_rate: f64, clip_len: usize) -> usize {
    let frames = (duration_s * frame_rate + 1e-9).floor() as usize;
    frames / clip_len
}

/// Precomputed per-video features: one `n_clips x D` matrix per visual kind
/// and a `T x D_text` token matrix shared by all clips.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub video_id: String,
    pub n_clips: usize,
    pub frame_rate: f64,
    pub features: BTreeMap<FeatureKind, Tensor>,
}

impl FeatureBundle {
    pub fn new(
        video_id: impl Into<String>,
        frame_rate: f64,
        features: BTreeMap<FeatureKind, Tensor>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        let n_clips = features
            .iter()
            .find(|(k, _)| k.is_visual())
            .map(|(_, t)| t.rows())
            .ok_or_else(|| Error::invalid(format!("{video_id}: no visual features")))?;
        let bundle = FeatureBundle { video_id, n_clips, frame_rate, features };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::invalid("empty video_id in feature bundle"));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::invalid(format!("{}: frame_rate must be positive", self.video_id)));
        }
        if self.n_clips == 0 {
            return Err(Error::invalid(format!("{}: n_clips must be at least 1", self.video_id)));
        }
        for (kind, t) in &self.features {
            t.dims2()?;
            if kind.is_visual() && t.rows() != self.n_clips {
                return Err(Error::shape(
                    "bundle",
                    format!("{}: `{kind}` has {} rows, expected {}", self.video_id, t.rows(), self.n_clips),
                ));
            }
        }
        Ok(())
    }

    /// Checks that every feature enabled in `config` is present with the
    /// configured width.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        for kind in &config.enabled {
            let t = self.features.get(kind).ok_or_else(|| {
                Error::invalid(format!("{}: missing `{kind}` features", self.video_id))
            })?;
            if t.cols() != config.dim(*kind) {
                return Err(Error::shape(
                    "bundle",
                    format!("{}: `{kind}` width {} != configured {}", self.video_id, t.cols(), config.dim(*kind)),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: FeatureKind) -> Option<&Tensor> {
        self.features.get(&kind)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_magic(w, FEATURE_MAGIC, FEATURE_VERSION)?;
        write_str(w, &self.video_id)?;
        write_u32(w, u32::try_from(self.n_clips).map_err(|_| Error::Format("n_clips".into()))?)?;
        write_f64(w, self.frame_rate)?;
        let arrays: Vec<(&str, &Tensor)> = self.features.iter().map(|(k, t)| (k.name(), t)).collect();
        write_arrays(w, &arrays)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, FEATURE_MAGIC, FEATURE_VERSION)?;
        let video_id = read_str(r)?;
        let n_clips = read_u32(r)? as usize;
        let frame_rate = read_f64(r)?;
        let mut features = BTreeMap::new();
        for (name, t) in read_arrays(r)? {
            let kind: FeatureKind =
                name.parse().map_err(|_| Error::Format(format!("unknown array `{name}`")))?;
            if features.insert(kind, t).is_some() {
                return Err(Error::Format(format!("duplicate array `{name}`")));
            }
        }
        let bundle = FeatureBundle { video_id, n_clips, frame_rate, features };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// One labelled video in a training manifest. `feature_path` is resolved
/// relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub video_id: String,
    pub duration_s: f64,
    pub frame_rate: f64,
    pub feature_path: String,
    pub nawp_label: Option<f64>,
    pub ecr_label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awt_label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awp_label: Option<f64>,
}

impl ManifestRow {
    fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::invalid("empty video_id"));
        }
        if !(self.duration_s > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::invalid(format!("{}: duration and frame rate must be positive", self.video_id)));
        }
        let labels = [self.nawp_label, self.ecr_label, self.awt_label, self.awp_label];
        if labels.into_iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{}: non-finite label", self.video_id)));
        }
        Ok(())
    }
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestRow>> {
    let rows: Vec<ManifestRow> = parse_jsonl(reader).collect::<Result<_>>()?;
    for (i, row) in rows.iter().enumerate() {
        row.validate().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
    }
    Ok(rows)
}

pub fn write_manifest<W: Write>(w: W, rows: &[ManifestRow]) -> Result<()> {
    crate::aggregate::write_jsonl(w, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> FeatureBundle {
        let mut f = BTreeMap::new();
        f.insert(FeatureKind::Action, Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.25, 1e-3, 7.0]).unwrap());
        f.insert(FeatureKind::Text, Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        FeatureBundle::new("vid-1", 30.0, f).unwrap()
    }

    #[test]
    fn clip_count_drops_partial_clip() {
        assert_eq!(n_clips_for(20.0, 30.0, 16), 37);
        assert_eq!(n_clips_for(10.0, 1.6, 16), 1);
        assert_eq!(n_clips_for(5.0, 1.0, 16), 0);
    }

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let b = bundle();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ENGF");
        let back = FeatureBundle::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert!(FeatureBundle::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn ragged_visual_features_rejected() {
        let mut f = bundle().features;
        f.insert(FeatureKind::Semantic, Tensor::zeros(&[2, 2]));
        assert!(FeatureBundle::new("v", 30.0, f).is_err());
    }

    #[test]
    fn manifest_rows_validate() {
        let good = r#"{"video_id":"a","duration_s":12,"frame_rate":8,"feature_path":"a.engf","nawp_label":0.4,"ecr_label":0.8}"#;
        let rows = read_manifest(good.as_bytes()).unwrap();
        assert_eq!(rows[0].awt_label, None);
        let bad = r#"{"video_id":"a","duration_s":0,"frame_rate":8,"feature_path":"a","nawp_label":null,"ecr_label":null}"#;
        assert!(read_manifest(bad.as_bytes()).is_err());
    }
}
