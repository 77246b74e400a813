use std::fs;
use std::path::Path;

use super::ModelKind;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSpec, Normalization};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"CTXGAN\0";
pub const VERSION: u32 = 1;

/// What a checkpoint file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Model(ModelKind),
    /// A trained feature extractor on its own.
    Features,
}

const FEATURES_TAG: u8 = 0xF0;

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Model(m) => m.tag(),
            CheckpointKind::Features => FEATURES_TAG,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        if tag == FEATURES_TAG {
            Some(CheckpointKind::Features)
        } else {
            ModelKind::from_tag(tag).map(CheckpointKind::Model)
        }
    }
}

/// Serialized training state: named tensors plus the bookkeeping needed to
/// resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub spec: FeatureSpec,
    pub tensors: Vec<(String, Tensor)>,
    pub rng: Vec<u8>,
    pub step: u64,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensor(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Every tensor whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    /// Parameters whose name starts with `prefix`, names kept intact.
    pub fn params_with_prefix(&self, prefix: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        for (n, t) in &self.tensors {
            if n.starts_with(prefix) {
                ps.add(n.clone(), t.clone());
            }
        }
        ps
    }

    /// Feature-extractor parameters stored under `feat.`.
    pub fn feature_params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for (n, t) in self.strip_prefix("feat.") {
            ps.add(n, t);
        }
        ps
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.tag());
        out.push(self.spec.kind.tag());
        out.extend_from_slice(&(self.spec.width as u32).to_le_bytes());
        out.push(match self.spec.normalization {
            Normalization::None => 0,
            Normalization::UnitL2 => 1,
        });
        out.extend_from_slice(&(self.spec.extent as u32).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.rng.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.rng);
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::NotACheckpoint);
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind_tag = r.u8()?;
        let kind = CheckpointKind::from_tag(kind_tag)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown kind tag {kind_tag}")))?;
        let feat_tag = r.u8()?;
        let feat_kind = FeatureKind::from_tag(feat_tag)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown feature tag {feat_tag}")))?;
        let width = r.u32()? as usize;
        let normalization = match r.u8()? {
            0 => Normalization::None,
            1 => Normalization::UnitL2,
            n => return Err(Error::CorruptCheckpoint(format!("unknown normalization {n}"))),
        };
        let extent = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor `{name}` payload truncated")))?;
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::CorruptCheckpoint(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        let rng_len = r.u32()? as usize;
        let rng = r.take(rng_len)?.to_vec();
        let step = r.u64()?;
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            kind,
            spec: FeatureSpec {
                kind: feat_kind,
                width,
                normalization,
                extent,
            },
            tensors,
            rng,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!(
                "needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
