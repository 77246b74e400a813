//! Run settings resolved from command-line flags, an optional `key = value`
//! config file and built-in defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use seqadv_core::features::FeatureKind;
use seqadv_core::models::ModelKind;
use seqadv_core::objectives::{GanLossWeights, LpNorm};

/// A problem with the flags or config file, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Dar,
    Frames,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dar" => Ok(Task::Dar),
            "frames" => Ok(Task::Frames),
            _ => Err(format!("unknown task `{s}` (dar|frames)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Dar => "dar",
            Task::Frames => "frames",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    L1,
    L2,
    Adv,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "adv" => Ok(LossKind::Adv),
            _ => Err(format!("unknown loss `{s}` (l1|l2|adv)")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Adv => "adv",
        })
    }
}

/// Which problems a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    /// First half of the held-out problems.
    Tune,
    /// Second half of the held-out problems.
    Test,
    /// All held-out problems.
    Heldout,
    All,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "tune" => Ok(Split::Tune),
            "test" => Ok(Split::Test),
            "heldout" => Ok(Split::Heldout),
            "all" => Ok(Split::All),
            _ => Err(format!("unknown split `{s}` (train|tune|test|heldout|all)")),
        }
    }
}

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "task",
    "count",
    "difficulty",
    "model",
    "features",
    "loss",
    "lambda_adv",
    "lambda_p",
    "p",
    "lr",
    "batch",
    "epochs",
    "max_steps",
    "seed",
    "holdout",
    "split",
    "rows",
    "ae_steps",
    "cnn_steps",
    "siamese_steps",
    "data",
    "ckpt",
    "out",
];

/// Parsed `key = value` lines. Blank lines and `#` comments are skipped;
/// keys may use `-` or `_`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{}:{}: expected `key = value`", origin.display(), i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(usage(format!(
                    "{}:{}: unknown key `{}`",
                    origin.display(),
                    i + 1,
                    k.trim()
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }

    /// The file's value for `key`, parsed.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key `{key}`: {e}"))),
        }
    }
}

/// Flag value if given, else the config file's, else nothing.
pub fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Everything `train` needs once flags, file and defaults are merged.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub model: ModelKind,
    pub features: FeatureKind,
    pub loss: LossKind,
    pub weights: GanLossWeights,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub holdout: f64,
    pub ae_steps: usize,
    pub cnn_steps: usize,
    pub siamese_steps: usize,
}

impl TrainSettings {
    pub fn defaults(task: Task) -> Self {
        let p = default_p(task);
        Self {
            model: ModelKind::ContextRnnGan,
            features: FeatureKind::Raw,
            loss: LossKind::Adv,
            weights: GanLossWeights {
                lambda_adv: 0.05,
                lambda_p: 1.0,
                norm: p,
            },
            lr: 2e-4,
            batch: 16,
            epochs: 10,
            max_steps: None,
            seed: 0,
            holdout: DEFAULT_HOLDOUT,
            ae_steps: 3000,
            cnn_steps: 600,
            siamese_steps: 300,
        }
    }

    /// Stable digest of the settings, recorded in evaluation reports.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        format!("{self:?}").hash(&mut h);
        h.finish()
    }
}

pub const DEFAULT_HOLDOUT: f64 = 0.2;

pub fn default_p(task: Task) -> LpNorm {
    match task {
        Task::Dar => LpNorm::L1,
        Task::Frames => LpNorm::L2,
    }
}

/// Raw, unmerged training options as they arrive from flags.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub model: Option<ModelKind>,
    pub features: Option<FeatureKind>,
    pub loss: Option<LossKind>,
    pub lambda_adv: Option<f64>,
    pub lambda_p: Option<f64>,
    pub p: Option<u32>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub max_steps: Option<u64>,
    pub seed: Option<u64>,
    pub holdout: Option<f64>,
    pub ae_steps: Option<usize>,
    pub cnn_steps: Option<usize>,
    pub siamese_steps: Option<usize>,
}

pub fn check_holdout(h: f64) -> Result<f64> {
    if (0.0..1.0).contains(&h) {
        Ok(h)
    } else {
        Err(usage(format!("holdout must lie in [0, 1), got {h}")))
    }
}

impl TrainOverrides {
    pub fn resolve(self, file: &ConfigFile, task: Task) -> Result<TrainSettings> {
        let d = TrainSettings::defaults(task);
        let model = pick(self.model, file, "model")?.unwrap_or(d.model);
        let features = pick(self.features, file, "features")?.unwrap_or(d.features);
        let p = pick(self.p, file, "p")?;
        let loss = pick(self.loss, file, "loss")?.unwrap_or(match (model.is_gan(), p) {
            (true, _) => LossKind::Adv,
            (false, Some(2)) => LossKind::L2,
            (false, Some(_)) => LossKind::L1,
            (false, None) => match default_p(task) {
                LpNorm::L1 => LossKind::L1,
                LpNorm::L2 => LossKind::L2,
            },
        });
        if loss == LossKind::Adv && !model.is_gan() {
            return Err(usage(format!(
                "--loss adv needs an adversarial model (rnn-gan|ctx-rnn-gan), got {model}"
            )));
        }
        let norm = match (loss, p) {
            (_, Some(p)) if p != 1 && p != 2 => return Err(usage(format!("p must be 1 or 2, got {p}"))),
            (LossKind::L1, Some(2)) | (LossKind::L2, Some(1)) => {
                return Err(usage(format!("--loss {loss} conflicts with --p {}", p.unwrap_or(0))))
            }
            (LossKind::L1, _) => LpNorm::L1,
            (LossKind::L2, _) => LpNorm::L2,
            (LossKind::Adv, Some(p)) => LpNorm::from_p(p)?,
            (LossKind::Adv, None) => default_p(task),
        };
        let lambda_adv = match loss {
            LossKind::Adv => pick(self.lambda_adv, file, "lambda_adv")?.unwrap_or(d.weights.lambda_adv),
            _ => 0.0,
        };
        let lambda_p = pick(self.lambda_p, file, "lambda_p")?.unwrap_or(d.weights.lambda_p);
        let weights = GanLossWeights::new(lambda_adv, lambda_p, norm).map_err(|e| usage(e.to_string()))?;
        let lr = pick(self.lr, file, "lr")?.unwrap_or(d.lr);
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(usage(format!("lr must be positive, got {lr}")));
        }
        let batch = pick(self.batch, file, "batch")?.unwrap_or(d.batch);
        if batch == 0 {
            return Err(usage("batch must be positive"));
        }
        Ok(TrainSettings {
            model,
            features,
            loss,
            weights,
            lr,
            batch,
            epochs: pick(self.epochs, file, "epochs")?.unwrap_or(d.epochs),
            max_steps: pick(self.max_steps, file, "max_steps")?,
            seed: pick(self.seed, file, "seed")?.unwrap_or(d.seed),
            holdout: check_holdout(pick(self.holdout, file, "holdout")?.unwrap_or(d.holdout))?,
            ae_steps: pick(self.ae_steps, file, "ae_steps")?.unwrap_or(d.ae_steps),
            cnn_steps: pick(self.cnn_steps, file, "cnn_steps")?.unwrap_or(d.cnn_steps),
            siamese_steps: pick(self.siamese_steps, file, "siamese_steps")?.unwrap_or(d.siamese_steps),
        })
    }
}

/// A required path from flag or config file.
pub fn require_path(flag: Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<PathBuf> {
    pick(flag, file, key)?.ok_or_else(|| usage(format!("missing --{key}")))
}
