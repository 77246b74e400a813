//! Image-to-vector pipelines: raw pixels, HOG, a dense autoencoder, a
//! label-trained shallow CNN and a siamese CNN embedding.
//!
//! Learned extractors are trained once and then frozen; sequence models only
//! ever see the vectors produced here.

mod autoencoder;
mod cnn;
mod hog;

use std::fmt;
use std::str::FromStr;

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig};
pub use cnn::{
    label_error, sample_pairs, train_shallow_cnn, train_siamese, CnnFeatures, CnnTrainConfig, Siamese, SiameseConfig,
};
pub use hog::{cell_histograms, hog_features, HogConfig};

use crate::datagen::Frame;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Raw,
    Hog,
    Autoencoder,
    ShallowCnn,
    Siamese,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Raw,
        FeatureKind::Hog,
        FeatureKind::Autoencoder,
        FeatureKind::ShallowCnn,
        FeatureKind::Siamese,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Raw => "raw",
            FeatureKind::Hog => "hog",
            FeatureKind::Autoencoder => "ae",
            FeatureKind::ShallowCnn => "cnn",
            FeatureKind::Siamese => "siamese",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    /// Whether feature vectors can be turned back into images.
    pub fn renderable(self) -> bool {
        matches!(self, FeatureKind::Raw | FeatureKind::Autoencoder)
    }

    pub fn normalization(self) -> Normalization {
        match self {
            FeatureKind::ShallowCnn | FeatureKind::Siamese => Normalization::UnitL2,
            _ => Normalization::None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(
                "features",
                format!("unknown feature kind `{s}` (raw|hog|ae|cnn|siamese)"),
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Normalization {
    None,
    UnitL2,
}

/// What a feature vector is: its pipeline, width, normalization and the
/// image extent it was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub width: usize,
    pub normalization: Normalization,
    pub extent: usize,
}

/// Row-major pixels of `img`, checked against `extent`.
pub fn raw_features(img: &Frame, extent: usize) -> Result<Vec<f64>> {
    if img.width() != extent || img.height() != extent {
        return Err(Error::shape(
            "raw_features",
            &[img.height(), img.width()],
            &[extent, extent],
        ));
    }
    Ok(img.pixels().to_vec())
}

/// Concatenated pixels of `frames`, each of which must hold `pixels` values.
pub(crate) fn stack_frames<'a>(frames: impl Iterator<Item = &'a Frame>, pixels: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for f in frames {
        if f.pixels().len() != pixels {
            return Err(Error::shape("stack_frames", &[f.pixels().len()], &[pixels]));
        }
        out.extend_from_slice(f.pixels());
    }
    Ok(out)
}

/// A frozen feature pipeline.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureExtractor {
    Raw { extent: usize },
    Hog { extent: usize, cfg: HogConfig },
    Autoencoder(Autoencoder),
    ShallowCnn(CnnFeatures),
    Siamese(Siamese),
}

impl FeatureExtractor {
    pub fn raw(extent: usize) -> Self {
        FeatureExtractor::Raw { extent }
    }

    pub fn hog(extent: usize) -> Self {
        FeatureExtractor::Hog {
            extent,
            cfg: HogConfig::default(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureExtractor::Raw { .. } => FeatureKind::Raw,
            FeatureExtractor::Hog { .. } => FeatureKind::Hog,
            FeatureExtractor::Autoencoder(_) => FeatureKind::Autoencoder,
            FeatureExtractor::ShallowCnn(_) => FeatureKind::ShallowCnn,
            FeatureExtractor::Siamese(_) => FeatureKind::Siamese,
        }
    }

    pub fn extent(&self) -> usize {
        match self {
            FeatureExtractor::Raw { extent } | FeatureExtractor::Hog { extent, .. } => *extent,
            FeatureExtractor::Autoencoder(ae) => (ae.pixels() as f64).sqrt().round() as usize,
            FeatureExtractor::ShallowCnn(c) => c.net.cfg.extent,
            FeatureExtractor::Siamese(s) => s.trunk.cfg.extent,
        }
    }

    pub fn spec(&self) -> FeatureSpec {
        let extent = self.extent();
        let width = match self {
            FeatureExtractor::Raw { .. } => extent * extent,
            FeatureExtractor::Hog { cfg, .. } => cfg.width(extent, extent).unwrap_or(0),
            FeatureExtractor::Autoencoder(ae) => ae.code_width(),
            FeatureExtractor::ShallowCnn(c) => c.width(),
            FeatureExtractor::Siamese(s) => s.width(),
        };
        FeatureSpec {
            kind: self.kind(),
            width,
            normalization: self.kind().normalization(),
            extent,
        }
    }

    /// Learned parameters, if any.
    pub fn params(&self) -> Option<&ParamSet> {
        match self {
            FeatureExtractor::Raw { .. } | FeatureExtractor::Hog { .. } => None,
            FeatureExtractor::Autoencoder(ae) => Some(&ae.params),
            FeatureExtractor::ShallowCnn(c) => Some(&c.params),
            FeatureExtractor::Siamese(s) => Some(&s.params),
        }
    }

    /// Rebuilds a pipeline from its spec and persisted parameters.
    pub fn from_params(spec: &FeatureSpec, params: ParamSet) -> Result<Self> {
        let e = spec.extent;
        let fx = match spec.kind {
            FeatureKind::Raw => Self::raw(e),
            FeatureKind::Hog => Self::hog(e),
            FeatureKind::Autoencoder => FeatureExtractor::Autoencoder(Autoencoder::load(params)?),
            FeatureKind::ShallowCnn => FeatureExtractor::ShallowCnn(CnnFeatures::load(params, e)?),
            FeatureKind::Siamese => FeatureExtractor::Siamese(Siamese::load(params, e)?),
        };
        if fx.spec() != *spec {
            return Err(Error::invalid(
                "features",
                format!("parameters give {:?}, expected {spec:?}", fx.spec()),
            ));
        }
        Ok(fx)
    }

    /// One feature vector per frame.
    pub fn extract(&self, frames: &[&Frame]) -> Result<Vec<Vec<f64>>> {
        let e = self.extent();
        for f in frames {
            if f.width() != e || f.height() != e {
                return Err(Error::shape("features", &[f.height(), f.width()], &[e, e]));
            }
        }
        match self {
            FeatureExtractor::Raw { extent } => frames.iter().map(|f| raw_features(f, *extent)).collect(),
            FeatureExtractor::Hog { cfg, .. } => frames.iter().map(|f| hog_features(f, cfg)).collect(),
            FeatureExtractor::Autoencoder(ae) => {
                let rows = stack_frames(frames.iter().copied(), ae.pixels())?;
                Ok(ae
                    .encode_rows(&rows)?
                    .chunks(ae.code_width())
                    .map(<[f64]>::to_vec)
                    .collect())
            }
            FeatureExtractor::ShallowCnn(c) => c.embed(frames),
            FeatureExtractor::Siamese(s) => s.embed(frames),
        }
    }

    pub fn extract_one(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok(self.extract(&[frame])?.remove(0))
    }

    /// Turns a feature vector back into an image, for renderable kinds.
    pub fn render(&self, features: &[f64]) -> Result<Frame> {
        let e = self.extent();
        let pixels = match self {
            FeatureExtractor::Raw { .. } => features.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            FeatureExtractor::Autoencoder(ae) => ae.decode_rows(features)?,
            _ => {
                return Err(Error::invalid(
                    "render",
                    format!("{} features cannot be rendered as images", self.kind()),
                ))
            }
        };
        Frame::new(e, e, pixels)
    }
}
