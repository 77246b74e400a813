//! `seqadv` command-line harness: dataset generation, training, evaluation,
//! prediction and montage rendering.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use seqadv_core::datagen::io::{write_pgm, write_problems, write_videos};
use seqadv_core::datagen::{augment_all, gen_moving_sprites, generate_problem, Frame, SpriteConfig};
use seqadv_core::eval::mc_answer;
use seqadv_core::features::FeatureKind;
use seqadv_core::models::{Checkpoint, ModelKind};
use seqadv_core::objectives::LpNorm;
use seqadv_core::rng::SeededRng;

use config::{
    check_holdout, pick, require_path, usage, ConfigFile, LossKind, Split, Task, TrainOverrides, UsageError,
    DEFAULT_HOLDOUT,
};
use pipeline::Dataset;

/// Environment variable capping data-parallel workers.
pub const THREADS_VAR: &str = "SEQADV_THREADS";

/// Published next-frame errors for a different video corpus; printed next to
/// our numbers for orientation only.
pub const REFERENCE_CE: f64 = 241.8;
pub const REFERENCE_SE: f64 = 167.9;

/// Pixels of white between montage frames.
pub const GUTTER: usize = 2;

#[derive(Debug, Parser)]
#[command(name = "seqadv", version, about = "Recurrent adversarial sequence prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset directory (manifest plus PGM frames).
    GenData(GenDataArgs),
    /// Train a sequence model and write a checkpoint and loss trace.
    Train(TrainArgs),
    /// Score a checkpoint on a held-out split and write a CSV report.
    Eval(EvalArgs),
    /// Write the model's predicted next frames and chosen answers.
    Predict(EvalArgs),
    /// Draw question, ground truth and prediction side by side.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(p) => ConfigFile::load(p),
            None => Ok(ConfigFile::default()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// dar (diagram problems, ×8 augmented) or frames (moving sprites).
    #[arg(long)]
    pub task: Option<Task>,
    /// Base problems (dar) or videos (frames).
    #[arg(long)]
    pub count: Option<usize>,
    /// Varying components per problem (1–3); 0 mixes difficulties.
    #[arg(long)]
    pub difficulty: Option<u8>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub features: Option<FeatureKind>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long)]
    pub p: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Fraction of base problems held out from training.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub ae_steps: Option<usize>,
    #[arg(long)]
    pub cnn_steps: Option<usize>,
    #[arg(long)]
    pub siamese_steps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// tune, test, heldout, train or all.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub holdout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Number of problems (rows) to draw.
    #[arg(long)]
    pub rows: Option<usize>,
}

/// Process exit status for an error: 1 usage, 3 numeric failure, 2 any
/// other data or I/O problem.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<seqadv_core::Error>() {
        Some(seqadv_core::Error::NonFinite { .. }) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker threads")
}

fn dispatch(cmd: Command, stdout: &mut impl Write) -> Result<()> {
    let pool = thread_pool()?;
    let mut buf = Vec::new();
    let res = pool.install(|| match cmd {
        Command::GenData(a) => gen_data(a, &mut buf),
        Command::Train(a) => train(a, &mut buf),
        Command::Eval(a) => eval(a, &mut buf),
        Command::Predict(a) => predict(a, &mut buf),
        Command::Grid(a) => grid(a, &mut buf),
    });
    stdout.write_all(&buf)?;
    res
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: GenDataArgs, stdout: &mut impl Write) -> Result<()> {
    let file = a.common.file()?;
    let task = pick(a.task, &file, "task")?.unwrap_or(Task::Dar);
    let count = pick(a.count, &file, "count")?.unwrap_or(2000);
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let seed = pick(a.common.seed, &file, "seed")?.unwrap_or(0);
    let difficulty = pick(a.difficulty, &file, "difficulty")?.unwrap_or(2);
    if difficulty > 3 {
        return Err(usage(format!("--difficulty must be 0..=3, got {difficulty}")));
    }
    let out = require_path(a.common.out, &file, "out")?;
    match task {
        Task::Dar => {
            let base: Vec<_> = (0..count as u64)
                .into_par_iter()
                .map(|id| {
                    let d = match difficulty {
                        0 => seqadv_core::datagen::mixed_difficulty(seed, id),
                        d => d,
                    };
                    generate_problem(seed, id, d)
                })
                .collect::<seqadv_core::Result<_>>()?;
            let problems: Vec<_> = base.iter().flat_map(augment_all).collect();
            write_problems(&out, &problems)?;
            writeln!(
                stdout,
                "wrote {} problems ({count} base x 8) to {}",
                problems.len(),
                out.display()
            )?;
        }
        Task::Frames => {
            let cfg = SpriteConfig::default();
            let videos: Vec<_> = (0..count as u64)
                .into_par_iter()
                .map(|id| gen_moving_sprites(id, &mut SeededRng::stream(seed, id), &cfg))
                .collect();
            write_videos(&out, &videos)?;
            writeln!(
                stdout,
                "wrote {count} videos of {} frames to {}",
                cfg.frames,
                out.display()
            )?;
        }
    }
    Ok(())
}

fn train(a: TrainArgs, stdout: &mut impl Write) -> Result<()> {
    let file = a.common.file()?;
    let data_dir = require_path(a.common.data, &file, "data")?;
    let ckpt_path = require_path(a.common.ckpt, &file, "ckpt")?;
    let loss_path = pick(a.common.out, &file, "out")?;
    let task = pick(a.task, &file, "task")?;
    let overrides = TrainOverrides {
        model: a.model,
        features: a.features,
        loss: a.loss,
        lambda_adv: a.lambda_adv,
        lambda_p: a.lambda_p,
        p: a.p,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        max_steps: a.max_steps,
        seed: a.common.seed,
        holdout: a.holdout,
        ae_steps: a.ae_steps,
        cnn_steps: a.cnn_steps,
        siamese_steps: a.siamese_steps,
    };
    // flags are validated before touching the data
    let settings = overrides.clone().resolve(&file, task.unwrap_or(Task::Dar))?;
    let data = Dataset::load(&data_dir)?;
    if let Some(t) = task.filter(|&t| t != data.task()) {
        return Err(usage(format!(
            "--task {t} but {} holds {} data",
            data_dir.display(),
            data.task()
        )));
    }
    let settings = match data.task() {
        Task::Dar => settings,
        t => overrides.resolve(&file, t)?,
    };
    let started = Instant::now();
    let run = match pipeline::train(&data, &settings, |_| {}) {
        Ok(run) => run,
        Err(e) => {
            if let Some(seqadv_core::Error::NonFinite { last_good, .. }) = e.downcast_ref() {
                last_good.save(&ckpt_path)?;
            }
            return Err(e);
        }
    };
    let ckpt = run.trainer.checkpoint();
    write_file(&ckpt_path, &ckpt.to_bytes())?;
    let csv = pipeline::loss_csv(&run.losses, settings.model.is_gan());
    if let Some(p) = &loss_path {
        write_file(p, csv.as_bytes())?;
    }
    let last = run.losses.last();
    writeln!(
        stdout,
        "trained {} on {} features: {} steps in {:.1}s, final g_loss {}{}",
        settings.model,
        settings.features,
        run.losses.len(),
        started.elapsed().as_secs_f64(),
        last.map_or("na".into(), |l| format!("{:.6}", l.g)),
        last.and_then(|l| l.d)
            .map_or(String::new(), |d| format!(", d_loss {d:.6}")),
    )?;
    Ok(())
}

struct EvalInputs {
    ckpt: Checkpoint,
    data: Dataset,
    seed: u64,
    out: Option<PathBuf>,
    file: ConfigFile,
}

fn eval_inputs(a: EvalArgs) -> Result<EvalInputs> {
    let file = a.common.file()?;
    let split = pick(a.split, &file, "split")?.unwrap_or(Split::Test);
    let holdout = check_holdout(pick(a.holdout, &file, "holdout")?.unwrap_or(DEFAULT_HOLDOUT))?;
    let seed = pick(a.common.seed, &file, "seed")?.unwrap_or(0);
    let data_dir = require_path(a.common.data, &file, "data")?;
    let ckpt_path = require_path(a.common.ckpt, &file, "ckpt")?;
    let out = pick(a.common.out, &file, "out")?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let data = Dataset::load(&data_dir)?.split(split, holdout);
    if data.is_empty() {
        return Err(usage(format!("split has no problems at holdout {holdout}")));
    }
    Ok(EvalInputs {
        ckpt,
        data,
        seed,
        out,
        file,
    })
}

fn config_hash(inputs: &EvalInputs) -> u64 {
    use std::hash::{DefaultHasher, Hash, Hasher};
    let mut h = DefaultHasher::new();
    format!("{:?}", inputs.file).hash(&mut h);
    inputs.ckpt.to_bytes().hash(&mut h);
    h.finish()
}

fn eval(a: EvalArgs, stdout: &mut impl Write) -> Result<()> {
    let inputs = eval_inputs(a)?;
    let started = Instant::now();
    let mut ev = pipeline::evaluate(&inputs.ckpt, &inputs.data, inputs.seed, config_hash(&inputs))?;
    ev.report.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(p) = &inputs.out {
        write_file(p, ev.report.to_csv().as_bytes())?;
    }
    writeln!(stdout, "{}", ev.report.aggregate_line())?;
    if let Some((ce, se)) = ev.baseline {
        writeln!(stdout, "# copy-last baseline: ce={ce:.6},se={se:.6}")?;
        writeln!(
            stdout,
            "# published reference (different data and protocol, not comparable): ce={REFERENCE_CE},se={REFERENCE_SE}"
        )?;
    }
    writeln!(stdout, "# wall-clock: {:.2}s", ev.report.wall_clock_secs)?;
    Ok(())
}

fn predict(a: EvalArgs, stdout: &mut impl Write) -> Result<()> {
    let inputs = eval_inputs(a)?;
    let out = inputs.out.clone().ok_or_else(|| usage("missing --out"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let preds = pipeline::predict(&inputs.ckpt, &inputs.data)?;
    let rendered = pipeline::render_all(&preds)?;
    let mut csv = String::from("id,chosen\n");
    let ids: Vec<u64> = match &inputs.data {
        Dataset::Problems(p) => p.iter().map(|p| p.id).collect(),
        Dataset::Videos(v) => v.iter().map(|v| v.id).collect(),
    };
    if let Dataset::Problems(problems) = &inputs.data {
        for (p, v) in problems.iter().zip(&preds.vectors) {
            let cands = preds.extractor.extract(&p.candidates.iter().collect::<Vec<_>>())?;
            csv.push_str(&format!("{},{}\n", p.id, mc_answer(v, &cands)?));
        }
        write_file(&out.join("predictions.csv"), csv.as_bytes())?;
    }
    if let Some(frames) = &rendered {
        for (id, f) in ids.iter().zip(frames) {
            write_pgm(&out.join(format!("{id}_pred.pgm")), f)?;
        }
    }
    writeln!(
        stdout,
        "predicted {} items into {}{}",
        ids.len(),
        out.display(),
        if rendered.is_some() {
            ""
        } else {
            " (features are not renderable; no images)"
        }
    )?;
    Ok(())
}

fn grid(a: GridArgs, stdout: &mut impl Write) -> Result<()> {
    let file = a.eval.common.file()?;
    let rows = pick(a.rows, &file, "rows")?.unwrap_or(8);
    if rows == 0 {
        return Err(usage("--rows must be at least 1"));
    }
    let inputs = eval_inputs(a.eval)?;
    let out = inputs.out.clone().ok_or_else(|| usage("missing --out"))?;
    if !inputs.ckpt.spec.kind.renderable() {
        return Err(usage(format!(
            "{} features cannot be drawn; use a raw or ae checkpoint",
            inputs.ckpt.spec.kind
        )));
    }
    let n = inputs.data.len();
    let mut picks: Vec<usize> = (0..n).collect();
    picks.shuffle(&mut SeededRng::new(inputs.seed));
    picks.truncate(rows.min(n));
    picks.sort_unstable();
    let chosen = match &inputs.data {
        Dataset::Problems(p) => Dataset::Problems(picks.iter().map(|&i| p[i].clone()).collect()),
        Dataset::Videos(v) => Dataset::Videos(picks.iter().map(|&i| v[i].clone()).collect()),
    };
    let preds = pipeline::predict(&inputs.ckpt, &chosen)?;
    let generated = pipeline::render_all(&preds)?.expect("renderable kind");
    let grid_rows: Vec<Vec<Frame>> = chosen
        .observed()
        .iter()
        .zip(chosen.targets())
        .zip(generated)
        .map(|((obs, truth), gen)| {
            let mut row: Vec<Frame> = obs[obs.len().saturating_sub(5)..].to_vec();
            row.push(truth.clone());
            row.push(gen);
            row
        })
        .collect();
    let image = pipeline::montage(&grid_rows, chosen.extent(), GUTTER)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_pgm(&out, &image)?;
    writeln!(
        stdout,
        "wrote {}x{} montage of {} rows to {}",
        image.width(),
        image.height(),
        grid_rows.len(),
        out.display()
    )?;
    Ok(())
}

/// Default regression exponent for `task`, as a number.
pub fn default_p(task: Task) -> u32 {
    match config::default_p(task) {
        LpNorm::L1 => 1,
        LpNorm::L2 => 2,
    }
}
