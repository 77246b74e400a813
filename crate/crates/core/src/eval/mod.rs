//! Multiple-choice matching, next-frame error metrics and the copy-last
//! baseline.

use std::fmt::Write as _;

use crate::datagen::Frame;
use crate::error::{Error, Result};

/// Probability clamp used by [`frame_ce`].
pub const CE_EPS: f64 = 1e-5;

fn same_width(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    Ok(())
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    same_width("cosine_sim", a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine score of `generated` against each candidate.
pub fn candidate_scores(generated: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
    candidates.iter().map(|c| cosine_sim(generated, c)).collect()
}

/// Index of the first maximum.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// The candidate closest to `generated` in cosine similarity; ties go to the
/// lowest index.
pub fn mc_answer(generated: &[f64], candidates: &[Vec<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::EmptySequence("mc_answer"));
    }
    Ok(argmax(&candidate_scores(generated, candidates)?))
}

/// Outcome of one multiple-choice problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemResult {
    pub id: u64,
    pub chosen: usize,
    pub correct: bool,
    pub scores: Vec<f64>,
    /// Whether the generated vector or some candidate was all zeros.
    pub zero_vector: bool,
}

/// Per-problem results plus aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ProblemResult>,
    pub mean_ce: Option<f64>,
    pub mean_se: Option<f64>,
    pub seed: u64,
    /// Digest of the run configuration.
    pub config_hash: u64,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn new(rows: Vec<ProblemResult>, seed: u64, config_hash: u64) -> Self {
        Self {
            rows,
            mean_ce: None,
            mean_se: None,
            seed,
            config_hash,
            wall_clock_secs: 0.0,
        }
    }

    pub fn correct(&self) -> usize {
        self.rows.iter().filter(|r| r.correct).count()
    }

    /// Fraction of problems answered correctly (0 for an empty report).
    pub fn accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.correct() as f64 / self.rows.len() as f64
        }
    }

    pub fn zero_vector_count(&self) -> usize {
        self.rows.iter().filter(|r| r.zero_vector).count()
    }

    /// The `# aggregate:` trailer. Wall-clock time is left out so reports
    /// are reproducible byte for byte.
    pub fn aggregate_line(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |v| format!("{v:.6}"));
        format!(
            "# aggregate: accuracy={:.6},correct={},problems={},ce={},se={},seed={},config={:016x},zero_vectors={}",
            self.accuracy(),
            self.correct(),
            self.rows.len(),
            fmt_opt(self.mean_ce),
            fmt_opt(self.mean_se),
            self.seed,
            self.config_hash,
            self.zero_vector_count(),
        )
    }

    pub fn to_csv(&self) -> String {
        let k = self.rows.iter().map(|r| r.scores.len()).max().unwrap_or(0);
        let mut out = String::from("id,chosen,correct");
        for i in 0..k {
            write!(out, ",score_{i}").expect("string write");
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{}", r.id, r.chosen, u8::from(r.correct)).expect("string write");
            for s in &r.scores {
                write!(out, ",{s:.9}").expect("string write");
            }
            out.push('\n');
        }
        out.push_str(&self.aggregate_line());
        out.push('\n');
        out
    }
}

/// Scores every problem: `generated[i]` against `candidates[i]` with the
/// true answer at `answers[i]`.
pub fn score_problems(
    ids: &[u64],
    generated: &[Vec<f64>],
    candidates: &[Vec<Vec<f64>>],
    answers: &[usize],
) -> Result<Vec<ProblemResult>> {
    let n = ids.len();
    if generated.len() != n || candidates.len() != n || answers.len() != n {
        return Err(Error::invalid(
            "accuracy",
            format!(
                "{n} ids, {} predictions, {} candidate sets, {} answers",
                generated.len(),
                candidates.len(),
                answers.len()
            ),
        ));
    }
    (0..n)
        .map(|i| {
            let chosen = mc_answer(&generated[i], &candidates[i])?;
            let is_zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
            Ok(ProblemResult {
                id: ids[i],
                chosen,
                correct: chosen == answers[i],
                scores: candidate_scores(&generated[i], &candidates[i])?,
                zero_vector: is_zero(&generated[i]) || candidates[i].iter().any(|c| is_zero(c)),
            })
        })
        .collect()
}

fn same_extent(op: &'static str, a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(op, &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    Ok(())
}

/// Summed per-pixel binary cross-entropy of `pred` (clamped to
/// `[CE_EPS, 1 − CE_EPS]`) against `target`.
pub fn frame_ce(pred: &Frame, target: &Frame) -> Result<f64> {
    same_extent("frame_ce", pred, target)?;
    Ok(pred
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(&p, &x)| {
            let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
            -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
        })
        .sum())
}

/// Summed per-pixel squared error.
pub fn frame_se(pred: &Frame, target: &Frame) -> Result<f64> {
    same_extent("frame_se", pred, target)?;
    Ok(pred
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(p, x)| (p - x) * (p - x))
        .sum())
}

/// Predicts that the next frame repeats the last observed one.
pub fn copy_last_baseline(observed: &[Frame]) -> Result<Frame> {
    observed
        .last()
        .cloned()
        .ok_or(Error::EmptySequence("copy_last_baseline"))
}

/// Mean CE and SE of `preds` against `targets`.
pub fn mean_frame_errors(preds: &[Frame], targets: &[Frame]) -> Result<(f64, f64)> {
    if preds.len() != targets.len() {
        return Err(Error::shape("frame errors", &[preds.len()], &[targets.len()]));
    }
    if preds.is_empty() {
        return Err(Error::EmptySequence("frame errors"));
    }
    let mut ce = 0.0;
    let mut se = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        ce += frame_ce(p, t)?;
        se += frame_se(p, t)?;
    }
    let n = preds.len() as f64;
    Ok((ce / n, se / n))
}
