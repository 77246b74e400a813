//! Dataset splits, feature extraction, training and evaluation wired
//! together for the commands and the acceptance suite.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use seqadv_core::datagen::io::{detect_kind, read_problems, read_videos, DatasetKind};
use seqadv_core::datagen::{Frame, MovingSpriteVideo, SequenceProblem};
use seqadv_core::eval::{copy_last_baseline, mean_frame_errors, score_problems, EvalReport};
use seqadv_core::features::{
    train_autoencoder, train_shallow_cnn, train_siamese, AutoencoderConfig, CnnTrainConfig, FeatureExtractor,
    FeatureKind, SiameseConfig,
};
use seqadv_core::models::{
    Checkpoint, CheckpointKind, ModelConfig, Predictor, SequenceData, StepLosses, TrainConfig, Trainer,
};
use seqadv_core::rng::SeededRng;

use crate::config::{usage, Split, Task, TrainSettings};

const AE_STREAM: u64 = 10;
const CNN_STREAM: u64 = 11;
const SIAMESE_STREAM: u64 = 12;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Problems(Vec<SequenceProblem>),
    Videos(Vec<MovingSpriteVideo>),
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let data = match detect_kind(dir)? {
            DatasetKind::Problems => Dataset::Problems(read_problems(dir)?),
            DatasetKind::Videos => Dataset::Videos(read_videos(dir)?),
        };
        if data.is_empty() {
            bail!(seqadv_core::Error::EmptySequence("dataset"));
        }
        Ok(data)
    }

    pub fn task(&self) -> Task {
        match self {
            Dataset::Problems(_) => Task::Dar,
            Dataset::Videos(_) => Task::Frames,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Problems(p) => p.len(),
            Dataset::Videos(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ids(&self) -> Vec<u64> {
        match self {
            Dataset::Problems(p) => p.iter().map(|p| p.id).collect(),
            Dataset::Videos(v) => v.iter().map(|v| v.id).collect(),
        }
    }

    /// Augmented copies share a base problem (`id / 8`); they always land
    /// in the same split.
    fn group(&self, id: u64) -> u64 {
        match self {
            Dataset::Problems(_) => id / 8,
            Dataset::Videos(_) => id,
        }
    }

    /// The requested part, in ascending id order. The last `holdout`
    /// fraction of groups is held out; its first half is the tuning split
    /// and its second half the test split.
    pub fn split(&self, split: Split, holdout: f64) -> Dataset {
        let mut groups: Vec<u64> = self.ids().iter().map(|&id| self.group(id)).collect();
        groups.sort_unstable();
        groups.dedup();
        let held = (groups.len() as f64 * holdout).round() as usize;
        let first_held = groups.len() - held;
        let tune_end = first_held + held.div_ceil(2);
        let rank = |g: u64| groups.binary_search(&g).expect("group of an existing id");
        let keep = |id: u64| {
            let r = rank(self.group(id));
            match split {
                Split::All => true,
                Split::Train => r < first_held,
                Split::Heldout => r >= first_held,
                Split::Tune => r >= first_held && r < tune_end,
                Split::Test => r >= tune_end,
            }
        };
        let mut out = match self {
            Dataset::Problems(p) => Dataset::Problems(p.iter().filter(|p| keep(p.id)).cloned().collect()),
            Dataset::Videos(v) => Dataset::Videos(v.iter().filter(|v| keep(v.id)).cloned().collect()),
        };
        match &mut out {
            Dataset::Problems(p) => p.sort_by_key(|p| p.id),
            Dataset::Videos(v) => v.sort_by_key(|v| v.id),
        }
        out
    }

    /// Frames a model observes for each item: question frames of a problem,
    /// or every frame but the last of a video.
    pub fn observed(&self) -> Vec<&[Frame]> {
        match self {
            Dataset::Problems(p) => p.iter().map(|p| p.question.as_slice()).collect(),
            Dataset::Videos(v) => v.iter().map(|v| &v.frames[..v.frames.len() - 1]).collect(),
        }
    }

    /// The frame each observed sequence should be followed by.
    pub fn targets(&self) -> Vec<&Frame> {
        match self {
            Dataset::Problems(p) => p.iter().map(|p| p.answer()).collect(),
            Dataset::Videos(v) => v.iter().map(|v| v.frames.last().expect("non-empty video")).collect(),
        }
    }

    pub fn extent(&self) -> usize {
        self.observed().first().and_then(|f| f.first()).map_or(0, Frame::width)
    }
}

/// Feature vectors for every frame of every sequence, computed in parallel
/// over sequences with results kept in input order.
pub fn extract_sequences(fx: &FeatureExtractor, seqs: &[&[Frame]]) -> Result<SequenceData> {
    let vectors: Vec<Vec<Vec<f64>>> = seqs
        .par_iter()
        .map(|s| fx.extract(&s.iter().collect::<Vec<_>>()))
        .collect::<seqadv_core::Result<_>>()?;
    Ok(SequenceData::from_vectors(&vectors)?)
}

/// Trains the feature extractor `kind` on the training split (a no-op for
/// fixed pipelines).
pub fn build_extractor(kind: FeatureKind, train: &Dataset, s: &TrainSettings) -> Result<FeatureExtractor> {
    let extent = train.extent();
    let frames = || -> Vec<Frame> { train.observed().into_iter().flatten().cloned().collect() };
    let labeled = |problems: &[SequenceProblem]| {
        let mut fs = Vec::new();
        let mut ls = Vec::new();
        for p in problems {
            for (f, l) in p.question.iter().zip(&p.labels) {
                fs.push(f.clone());
                ls.push(*l);
            }
        }
        (fs, ls)
    };
    let cnn = |problems: &[SequenceProblem]| {
        let (fs, ls) = labeled(problems);
        let cfg = CnnTrainConfig {
            steps: s.cnn_steps,
            ..CnnTrainConfig::default()
        };
        train_shallow_cnn(&fs, &ls, &cfg, &mut SeededRng::stream(s.seed, CNN_STREAM)).map(|(m, _)| m)
    };
    Ok(match (kind, train) {
        (FeatureKind::Raw, _) => FeatureExtractor::raw(extent),
        (FeatureKind::Hog, _) => FeatureExtractor::hog(extent),
        (FeatureKind::Autoencoder, _) => {
            let cfg = AutoencoderConfig {
                steps: s.ae_steps,
                ..AutoencoderConfig::default()
            };
            let (ae, _) = train_autoencoder(&frames(), &cfg, &mut SeededRng::stream(s.seed, AE_STREAM))?;
            FeatureExtractor::Autoencoder(ae)
        }
        (FeatureKind::ShallowCnn, Dataset::Problems(p)) => FeatureExtractor::ShallowCnn(cnn(p)?),
        (FeatureKind::Siamese, Dataset::Problems(p)) => {
            let init = cnn(p)?;
            let cfg = SiameseConfig {
                steps: s.siamese_steps,
                ..SiameseConfig::default()
            };
            let (siamese, _) = train_siamese(p, &init, &cfg, &mut SeededRng::stream(s.seed, SIAMESE_STREAM))?;
            FeatureExtractor::Siamese(siamese)
        }
        (k, Dataset::Videos(_)) => {
            return Err(usage(format!(
                "{k} features need labeled diagram problems; use raw, hog or ae for frames"
            )))
        }
    })
}

pub fn train_config(s: &TrainSettings) -> TrainConfig {
    TrainConfig {
        batch: s.batch,
        epochs: s.epochs,
        max_steps: s.max_steps,
        lr: s.lr,
        weights: s.weights,
        seed: s.seed,
        model: ModelConfig::default(),
    }
}

/// A finished (or interrupted) training run.
pub struct TrainRun {
    pub trainer: Trainer,
    pub extractor: FeatureExtractor,
    pub losses: Vec<StepLosses>,
}

/// Builds features from the training split of `data` and trains a model on
/// them. `on_step` sees every optimizer step as it happens.
pub fn train(data: &Dataset, s: &TrainSettings, mut on_step: impl FnMut(&StepLosses)) -> Result<TrainRun> {
    let train_part = data.split(Split::Train, s.holdout);
    if train_part.is_empty() {
        return Err(usage(
            "the training split is empty; lower --holdout or generate more data",
        ));
    }
    let extractor = build_extractor(s.features, &train_part, s)?;
    let seqs = extract_sequences(&extractor, &train_part.observed())?;
    let mut trainer = Trainer::new(
        s.model,
        extractor.spec(),
        train_config(s),
        extractor.params().cloned().unwrap_or_default(),
    )?;
    let mut losses = Vec::new();
    let result = trainer.train(&seqs, |l| {
        losses.push(*l);
        on_step(l);
    });
    result.map_err(anyhow::Error::from)?;
    Ok(TrainRun {
        trainer,
        extractor,
        losses,
    })
}

/// Loss trace as CSV: `step,d_loss,g_loss` for adversarial models,
/// `step,g_loss` otherwise.
pub fn loss_csv(losses: &[StepLosses], adversarial: bool) -> String {
    let mut out = String::from(if adversarial {
        "step,d_loss,g_loss\n"
    } else {
        "step,g_loss\n"
    });
    for l in losses {
        match (adversarial, l.d) {
            (true, Some(d)) => out.push_str(&format!("{},{d:.9},{:.9}\n", l.step, l.g)),
            _ => out.push_str(&format!("{},{:.9}\n", l.step, l.g)),
        }
    }
    out
}

/// The frozen feature pipeline stored in a model checkpoint.
pub fn checkpoint_extractor(ckpt: &Checkpoint) -> Result<FeatureExtractor> {
    FeatureExtractor::from_params(&ckpt.spec, ckpt.feature_params()).context("restoring the feature pipeline")
}

/// Generated next-frame features for every item of `data`.
pub struct Predictions {
    pub extractor: FeatureExtractor,
    pub vectors: Vec<Vec<f64>>,
}

pub fn predict(ckpt: &Checkpoint, data: &Dataset) -> Result<Predictions> {
    if !matches!(ckpt.kind, CheckpointKind::Model(_)) {
        return Err(usage("checkpoint holds a feature extractor, not a model"));
    }
    let extractor = checkpoint_extractor(ckpt)?;
    if data.extent() != extractor.extent() {
        bail!(seqadv_core::Error::InvalidArgument {
            op: "features",
            msg: format!(
                "dataset frames are {0}x{0}, checkpoint expects {1}x{1}",
                data.extent(),
                extractor.extent()
            ),
        });
    }
    let predictor = Predictor::from_checkpoint(ckpt)?;
    let seqs = extract_sequences(&extractor, &data.observed())?;
    let vectors = predictor.predict_next(&seqs)?;
    Ok(Predictions { extractor, vectors })
}

/// Rendered predictions, for renderable feature kinds.
pub fn render_all(p: &Predictions) -> Result<Option<Vec<Frame>>> {
    if !p.extractor.kind().renderable() {
        return Ok(None);
    }
    Ok(Some(
        p.vectors
            .iter()
            .map(|v| p.extractor.render(v))
            .collect::<seqadv_core::Result<_>>()?,
    ))
}

pub struct Evaluation {
    pub report: EvalReport,
    /// Copy-last-frame `(ce, se)` on the same items.
    pub baseline: Option<(f64, f64)>,
}

/// Scores a checkpoint on `data`: multiple-choice accuracy for problems,
/// next-frame CE/SE (and the copy-last baseline) for videos.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, seed: u64, config_hash: u64) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    let preds = predict(ckpt, data)?;
    let rendered = render_all(&preds)?;
    let targets: Vec<Frame> = data.targets().into_iter().cloned().collect();
    let errors = match &rendered {
        Some(frames) => Some(mean_frame_errors(frames, &targets)?),
        None => None,
    };
    let (rows, baseline) = match data {
        Dataset::Problems(problems) => {
            let ids: Vec<u64> = problems.iter().map(|p| p.id).collect();
            let cands: Vec<&[Frame]> = problems.iter().map(|p| p.candidates.as_slice()).collect();
            let cand_feats = extract_sequences(&preds.extractor, &cands)?;
            let candidates: Vec<Vec<Vec<f64>>> = (0..problems.len())
                .map(|i| {
                    (0..cand_feats.frames())
                        .map(|k| cand_feats.frame(i, k).iter().map(|&v| f64::from(v)).collect())
                        .collect()
                })
                .collect();
            let answers: Vec<usize> = problems.iter().map(|p| p.answer_index).collect();
            (score_problems(&ids, &preds.vectors, &candidates, &answers)?, None)
        }
        Dataset::Videos(_) => {
            if rendered.is_none() {
                return Err(usage(format!(
                    "next-frame metrics need renderable features (raw|ae), checkpoint uses {}",
                    preds.extractor.kind()
                )));
            }
            let copies: Vec<Frame> = data
                .observed()
                .iter()
                .map(|o| copy_last_baseline(o))
                .collect::<seqadv_core::Result<_>>()?;
            (Vec::new(), Some(mean_frame_errors(&copies, &targets)?))
        }
    };
    let mut report = EvalReport::new(rows, seed, config_hash);
    if let Some((ce, se)) = errors {
        report.mean_ce = Some(ce);
        report.mean_se = Some(se);
    }
    Ok(Evaluation { report, baseline })
}

/// Grid of frames: one row per entry, `gutter` white pixels after every
/// frame horizontally and vertically.
pub fn montage(rows: &[Vec<Frame>], extent: usize, gutter: usize) -> Result<Frame> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(usage("nothing to draw"));
    }
    let cell = extent + gutter;
    let mut out = Frame::new(
        cols * cell,
        rows.len() * cell,
        vec![1.0; cols * cell * rows.len() * cell],
    )?;
    for (r, row) in rows.iter().enumerate() {
        for (c, f) in row.iter().enumerate() {
            if f.width() != extent || f.height() != extent {
                bail!(seqadv_core::Error::ShapeMismatch {
                    op: "montage",
                    lhs: vec![f.height(), f.width()],
                    rhs: vec![extent, extent],
                });
            }
            for y in 0..extent {
                for x in 0..extent {
                    out.set(c * cell + x, r * cell + y, f.get(x, y));
                }
            }
        }
    }
    Ok(out)
}
