use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::io::{load_checkpoint, save_checkpoint};
use crate::numcore::{AdamState, Tensor};

const PARAM: &str = "param/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";
const STEP: &str = "meta/step";
const HASH: &str = "meta/config_hash";

/// 64-bit digest of the canonical JSON form of a training configuration.
pub fn config_hash(config: &TrainConfig) -> u64 {
    let json = serde_json::to_vec(config).expect("config serialises");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Weights, optimiser moments, step counter and the hash of the
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub step: u64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let names: Vec<&str> = self.params.names().collect();
        let keyed = |prefix: &str| -> Vec<String> { names.iter().map(|n| format!("{prefix}{n}")).collect() };
        let (p_names, m_names, v_names) = (keyed(PARAM), keyed(ADAM_M), keyed(ADAM_V));
        // Both values stay below 2^53 and survive the f64 encoding exactly.
        let step = Tensor::scalar(self.step as f64);
        let hash = Tensor::row(&[(self.config_hash >> 32) as f64, (self.config_hash & 0xffff_ffff) as f64]);

        let mut arrays: Vec<(&str, &Tensor)> = Vec::with_capacity(3 * names.len() + 2);
        arrays.extend(p_names.iter().map(String::as_str).zip(self.params.iter().map(|(_, t)| t)));
        arrays.extend(m_names.iter().map(String::as_str).zip(&self.adam.m));
        arrays.extend(v_names.iter().map(String::as_str).zip(&self.adam.v));
        arrays.push((STEP, &step));
        arrays.push((HASH, &hash));
        save_checkpoint(w, &arrays)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut params = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        let (mut step, mut hash) = (None, None);
        for (name, t) in load_checkpoint(r)? {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(ADAM_M) {
                m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                v.push((n.to_string(), t));
            } else if name == STEP {
                step = Some(t.item());
            } else if name == HASH && t.numel() == 2 {
                hash = Some(((t.data()[0] as u64) << 32) | t.data()[1] as u64);
            } else {
                return Err(Error::Format(format!("unexpected checkpoint array `{name}`")));
            }
        }
        let aligned = |moments: &[(String, Tensor)]| {
            moments.len() == params.len()
                && moments.iter().zip(&params).all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
        };
        if !aligned(&m) || !aligned(&v) {
            return Err(Error::Format("optimiser moments do not match parameters".into()));
        }
        let step = step.ok_or_else(|| Error::Format("missing meta/step".into()))?;
        let config_hash = hash.ok_or_else(|| Error::Format("missing meta/config_hash".into()))?;
        let step = step as u64;
        Ok(Checkpoint {
            params: ModelParams::from_named(params)?,
            adam: AdamState {
                step,
                m: m.into_iter().map(|(_, t)| t).collect(),
                v: v.into_iter().map(|(_, t)| t).collect(),
            },
            step,
            config_hash,
        })
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

    /// Errors unless the checkpoint was produced under `config`.
    pub fn check_config(&self, config: &TrainConfig) -> Result<()> {
        let expected = config_hash(config);
        if self.config_hash != expected {
            return Err(Error::invalid(format!(
                "checkpoint config hash {:016x} does not match {:016x}",
                self.config_hash, expected
            )));
        }
        self.params.check_config(&config.effective_model())
    }
}
