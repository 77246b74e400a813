use rand::seq::SliceRandom;
use rand::Rng;

use super::program::{perturb, sample_program, TransformProgram};
use super::render::{labels, render, Labels};
use super::{Dihedral, Frame, CANDIDATES, QUESTION_LEN};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const DISTRACTOR_RETRIES: usize = 10;

/// A multiple-choice sequence-completion problem.
///
/// `labels` holds the quadrant counts of the question frames followed by
/// the correct answer, `QUESTION_LEN + 1` entries in all.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceProblem {
    pub id: u64,
    pub question: Vec<Frame>,
    pub candidates: Vec<Frame>,
    pub answer_index: usize,
    pub labels: Vec<Labels>,
    pub program: TransformProgram,
}

impl SequenceProblem {
    pub fn answer(&self) -> &Frame {
        &self.candidates[self.answer_index]
    }

    /// Question frames followed by the correct answer.
    pub fn full_sequence(&self) -> impl Iterator<Item = &Frame> {
        self.question.iter().chain(std::iter::once(self.answer()))
    }
}

pub fn sequence_labels(program: &TransformProgram) -> Vec<Labels> {
    (1..=QUESTION_LEN + 1).map(|t| labels(program, t)).collect()
}

fn draw_distractor(
    slot: &'static str,
    taken: &[Frame],
    rng: &mut SeededRng,
    mut candidate: impl FnMut(&mut SeededRng) -> Option<Frame>,
) -> Result<Frame> {
    for _ in 0..=DISTRACTOR_RETRIES {
        if let Some(f) = candidate(rng) {
            if !taken.contains(&f) {
                return Ok(f);
            }
        }
    }
    Err(Error::DistractorCollision {
        slot,
        retries: DISTRACTOR_RETRIES,
    })
}

/// Renders the question, the answer and four distractors: the last question
/// frame, the answer of a perturbed program, the frame after the answer, and
/// the answer of an unrelated program seen through the same view.
pub fn render_problem(id: u64, program: &TransformProgram, rng: &mut SeededRng) -> Result<SequenceProblem> {
    let t = QUESTION_LEN;
    let question: Vec<Frame> = (1..=t).map(|s| render(program, s)).collect();
    let answer = render(program, t + 1);
    let mut pool = vec![answer, question[t - 1].clone(), render(program, t + 2)];
    let perturbed = draw_distractor("perturbed-rule", &pool, rng, |rng| {
        let p = perturb(program, rng);
        p.is_renderable_at(t + 1).then(|| render(&p, t + 1))
    })?;
    pool.push(perturbed);
    let difficulty = program.varying_count().clamp(1, 3) as u8;
    let foreign = draw_distractor("foreign", &pool, rng, |rng| {
        let p = sample_program(rng, difficulty).with_view(program.view);
        Some(render(&p, t + 1))
    })?;
    pool.push(foreign);
    debug_assert_eq!(pool.len(), CANDIDATES);

    let mut order: Vec<usize> = (0..CANDIDATES).collect();
    order.shuffle(rng);
    let answer_index = order.iter().position(|&i| i == 0).expect("answer is a candidate");
    let mut slots: Vec<Option<Frame>> = pool.into_iter().map(Some).collect();
    let candidates = order
        .iter()
        .map(|&i| slots[i].take().expect("each used once"))
        .collect();
    Ok(SequenceProblem {
        id,
        question,
        candidates,
        answer_index,
        labels: sequence_labels(program),
        program: program.clone(),
    })
}

/// Problem `id` of the dataset generated from `seed`. Each id owns its own
/// random stream, so problems can be generated in any order. Programs whose
/// distractors cannot be made distinct are replaced by a fresh draw.
pub fn generate_problem(seed: u64, id: u64, difficulty: u8) -> Result<SequenceProblem> {
    let mut rng = SeededRng::stream(seed, id);
    loop {
        let program = sample_program(&mut rng, difficulty);
        match render_problem(id, &program, &mut rng) {
            Err(Error::DistractorCollision { .. }) => continue,
            other => return other,
        }
    }
}

/// Applies a symmetry of the square to every frame; labels follow the
/// transformed geometry.
pub fn augment(problem: &SequenceProblem, g: Dihedral) -> SequenceProblem {
    let program = problem.program.with_view(g.after(problem.program.view));
    SequenceProblem {
        id: problem.id,
        question: problem.question.iter().map(|f| f.transformed(g)).collect(),
        candidates: problem.candidates.iter().map(|f| f.transformed(g)).collect(),
        answer_index: problem.answer_index,
        labels: sequence_labels(&program),
        program,
    }
}

/// All eight symmetric copies of `problem`, with ids `8 * id + g.index()`.
pub fn augment_all(problem: &SequenceProblem) -> Vec<SequenceProblem> {
    Dihedral::all()
        .into_iter()
        .map(|g| {
            let mut p = augment(problem, g);
            p.id = problem.id * 8 + g.index() as u64;
            p
        })
        .collect()
}

/// Difficulty in 1..=3 for problem `id`, drawn from a stream separate from
/// the one that generates the problem.
pub fn mixed_difficulty(seed: u64, id: u64) -> u8 {
    let mut rng = SeededRng::stream(seed ^ 0x5eed_d1ff, id);
    rng.gen_range(1..=3)
}
