use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::render::{render, render_component};
use super::{Dihedral, QUESTION_LEN};
use crate::error::{Error, Result};

/// Frames a program must keep valid: the question, the answer and one more
/// (the over-applied distractor).
pub const HORIZON: usize = QUESTION_LEN + 2;

/// Slots of the 3×3 layout in clockwise perimeter order.
pub const PERIMETER: [u8; 8] = [0, 1, 2, 5, 8, 7, 6, 3];
pub const CENTER: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Tick,
    Arrow,
    Polygon,
    Dash,
}

impl Shape {
    const ALL: [Shape; 4] = [Shape::Tick, Shape::Arrow, Shape::Polygon, Shape::Dash];

    fn name(self) -> &'static str {
        match self {
            Shape::Tick => "tick",
            Shape::Arrow => "arrow",
            Shape::Polygon => "poly",
            Shape::Dash => "dash",
        }
    }

    /// Number of distinct `count` values.
    pub fn count_modulus(self) -> u8 {
        match self {
            Shape::Tick | Shape::Dash => 4,
            Shape::Polygon => 3,
            Shape::Arrow => 1,
        }
    }

    fn count_steps(self) -> &'static [u8] {
        match self {
            Shape::Tick | Shape::Dash => &[1, 2, 3],
            Shape::Polygon => &[1, 2],
            Shape::Arrow => &[],
        }
    }

    fn rotations(self) -> &'static [u8] {
        match self {
            Shape::Tick | Shape::Dash => &[1, 3],
            Shape::Arrow | Shape::Polygon => &[1, 2, 3],
        }
    }
}

/// Mutable appearance of one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ComponentState {
    pub slot: u8,
    /// Tick/dash multiplicity minus one, or polygon variant
    /// (0 circle, 1 triangle, 2 square). Always 0 for arrows.
    pub count: u8,
    /// Clockwise quarter turns.
    pub orientation: u8,
    pub filled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleOp {
    Rotate(u8),
    Count(u8),
    ToggleFill,
    AlternateSide,
    Path(i8),
}

/// A rule fires on transitions whose 1-based index is a multiple of `every`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rule {
    pub op: RuleOp,
    pub every: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Component {
    pub shape: Shape,
    pub start: ComponentState,
    pub rules: Vec<Rule>,
}

/// Symbolic description of a diagram sequence. Frame `t` (1-based) shows
/// every component after `t - 1` transitions, viewed through `view`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransformProgram {
    pub components: Vec<Component>,
    pub view: Dihedral,
}

fn partner(slot: u8) -> u8 {
    let (row, col) = (slot / 3, slot % 3);
    if col != 1 {
        row * 3 + (2 - col)
    } else {
        (2 - row) * 3 + col
    }
}

impl RuleOp {
    fn apply(self, shape: Shape, s: &mut ComponentState) {
        match self {
            RuleOp::Rotate(k) => s.orientation = (s.orientation + k) % 4,
            RuleOp::Count(step) => {
                let m = shape.count_modulus();
                s.count = (s.count + step) % m;
            }
            RuleOp::ToggleFill => s.filled = !s.filled,
            RuleOp::AlternateSide => s.slot = partner(s.slot),
            RuleOp::Path(step) => {
                if let Some(i) = PERIMETER.iter().position(|&p| p == s.slot) {
                    let j = (i as i32 + step as i32).rem_euclid(8) as usize;
                    s.slot = PERIMETER[j];
                }
            }
        }
    }

    /// Rules of the same kind never share a component; both movement rules
    /// count as one kind.
    fn kind(self) -> u8 {
        match self {
            RuleOp::Rotate(_) => 0,
            RuleOp::Count(_) => 1,
            RuleOp::ToggleFill => 2,
            RuleOp::AlternateSide | RuleOp::Path(_) => 3,
        }
    }
}

impl Component {
    /// State shown in frame `t` (1-based).
    pub fn state_at(&self, t: usize) -> ComponentState {
        let mut s = self.start;
        for step in 1..t {
            for r in &self.rules {
                if step % r.every as usize == 0 {
                    r.op.apply(self.shape, &mut s);
                }
            }
        }
        s
    }

    pub fn varies(&self) -> bool {
        !self.rules.is_empty()
    }
}

impl TransformProgram {
    pub fn varying_count(&self) -> usize {
        self.components.iter().filter(|c| c.varies()).count()
    }

    fn slots_disjoint_at(&self, t: usize) -> bool {
        let mut used = [false; 9];
        for c in &self.components {
            let s = c.state_at(t).slot as usize;
            if used[s] {
                return false;
            }
            used[s] = true;
        }
        true
    }

    /// Structural validity over frames `1..=HORIZON`: no two components
    /// share a slot, frames are pairwise distinct, and every varying
    /// component visibly changes.
    pub fn is_valid(&self) -> bool {
        if !(1..=HORIZON).all(|t| self.slots_disjoint_at(t)) {
            return false;
        }
        let frames: Vec<_> = (1..=HORIZON).map(|t| render(self, t)).collect();
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                if frames[i] == frames[j] {
                    return false;
                }
            }
        }
        self.components.iter().filter(|c| c.varies()).all(|c| {
            let first = render_component(c.shape, &c.state_at(1));
            (2..=HORIZON).any(|t| render_component(c.shape, &c.state_at(t)) != first)
        })
    }

    /// Valid only at frame `t`; used for distractor programs.
    pub fn is_renderable_at(&self, t: usize) -> bool {
        self.slots_disjoint_at(t)
    }

    pub fn with_view(&self, view: Dihedral) -> Self {
        Self {
            components: self.components.clone(),
            view,
        }
    }
}

// ---- sampling ---------------------------------------------------------------

fn sample_state(shape: Shape, slot: u8, rng: &mut impl Rng) -> ComponentState {
    ComponentState {
        slot,
        count: rng.gen_range(0..shape.count_modulus()),
        orientation: rng.gen_range(0..4),
        filled: shape == Shape::Polygon && rng.gen_bool(0.5),
    }
}

fn candidate_ops(shape: Shape, slot: u8) -> Vec<RuleOp> {
    let mut ops: Vec<RuleOp> = shape.rotations().iter().map(|&k| RuleOp::Rotate(k)).collect();
    ops.extend(shape.count_steps().iter().map(|&s| RuleOp::Count(s)));
    if shape == Shape::Polygon {
        ops.push(RuleOp::ToggleFill);
    }
    if slot != CENTER {
        ops.push(RuleOp::AlternateSide);
        for s in [-3, -1, 1, 3] {
            ops.push(RuleOp::Path(s));
        }
    }
    ops
}

fn sample_rules(shape: Shape, slot: u8, rng: &mut impl Rng) -> Vec<Rule> {
    let ops = candidate_ops(shape, slot);
    let mut kinds: Vec<_> = ops.iter().map(|op| op.kind()).collect();
    kinds.dedup();
    let n = if rng.gen_bool(0.5) { 1 } else { 2 }.min(kinds.len());
    let mut rules: Vec<Rule> = Vec::with_capacity(n);
    while rules.len() < n {
        let op = *ops.choose(rng).expect("every shape has a rule");
        let clash = rules.iter().any(|r| r.op.kind() == op.kind());
        if clash {
            continue;
        }
        let every = if rng.gen_bool(0.3) { 2 } else { 1 };
        rules.push(Rule { op, every });
    }
    rules
}

/// Draws a valid program whose number of varying components equals
/// `difficulty` (clamped to 1..=3), plus up to one static component.
pub fn sample_program(rng: &mut impl Rng, difficulty: u8) -> TransformProgram {
    let varying = difficulty.clamp(1, 3) as usize;
    loop {
        let statics = rng.gen_range(0..=1);
        let mut slots: Vec<u8> = (0..9).collect();
        slots.shuffle(rng);
        let components = slots[..varying + statics]
            .iter()
            .enumerate()
            .map(|(i, &slot)| {
                let shape = *Shape::ALL.choose(rng).unwrap();
                let start = sample_state(shape, slot, rng);
                let rules = if i < varying {
                    sample_rules(shape, slot, rng)
                } else {
                    Vec::new()
                };
                Component { shape, start, rules }
            })
            .collect();
        let p = TransformProgram {
            components,
            view: Dihedral::IDENTITY,
        };
        if p.is_valid() {
            return p;
        }
    }
}

/// Copy of `p` with one parameter of one rule changed.
pub fn perturb(p: &TransformProgram, rng: &mut impl Rng) -> TransformProgram {
    let mut out = p.clone();
    let varying: Vec<usize> = (0..p.components.len()).filter(|&i| p.components[i].varies()).collect();
    let ci = *varying.choose(rng).expect("program has a varying component");
    let comp = &mut out.components[ci];
    let shape = comp.shape;
    let ri = rng.gen_range(0..comp.rules.len());
    let rule = &mut comp.rules[ri];
    let other = |opts: &[i32], cur: i32, rng: &mut dyn rand::RngCore| -> Option<i32> {
        let rest: Vec<i32> = opts.iter().copied().filter(|&v| v != cur).collect();
        rest.choose(rng).copied()
    };
    let new_op = match rule.op {
        RuleOp::Rotate(k) => {
            let opts: Vec<i32> = shape.rotations().iter().map(|&v| v as i32).collect();
            other(&opts, k as i32, rng).map(|v| RuleOp::Rotate(v as u8))
        }
        RuleOp::Count(s) => {
            let opts: Vec<i32> = shape.count_steps().iter().map(|&v| v as i32).collect();
            other(&opts, s as i32, rng).map(|v| RuleOp::Count(v as u8))
        }
        RuleOp::Path(s) => other(&[-3, -1, 1, 3], s as i32, rng).map(|v| RuleOp::Path(v as i8)),
        RuleOp::ToggleFill | RuleOp::AlternateSide => None,
    };
    match new_op {
        Some(op) if rng.gen_bool(0.7) => rule.op = op,
        _ => rule.every = if rule.every == 1 { 2 } else { 1 },
    }
    out
}

// ---- canonical text form ----------------------------------------------------

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            RuleOp::Rotate(k) => write!(f, "rot{k}")?,
            RuleOp::Count(s) => write!(f, "cnt{s}")?,
            RuleOp::ToggleFill => write!(f, "fill")?,
            RuleOp::AlternateSide => write!(f, "alt")?,
            RuleOp::Path(s) => write!(f, "path{s:+}")?,
        }
        write!(f, "/{}", self.every)
    }
}

impl fmt::Display for TransformProgram {
    /// `v=r0m0|dash@3:2,1,0;rot1/1;path-1/2|tick@5:1,0,0`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v={}", self.view)?;
        for c in &self.components {
            let s = c.start;
            write!(
                f,
                "|{}@{}:{},{},{}",
                c.shape.name(),
                s.slot,
                s.count,
                s.orientation,
                u8::from(s.filled)
            )?;
            for r in &c.rules {
                write!(f, ";{r}")?;
            }
        }
        Ok(())
    }
}

fn parse_rule(text: &str) -> std::result::Result<Rule, String> {
    let (op, every) = text.split_once('/').ok_or("rule lacks /every")?;
    let every: u8 = every.parse().map_err(|_| format!("bad every `{every}`"))?;
    if every == 0 {
        return Err("every must be positive".into());
    }
    let num = |s: &str| s.parse::<i32>().map_err(|_| format!("bad rule parameter `{s}`"));
    let op = if let Some(k) = op.strip_prefix("rot") {
        RuleOp::Rotate(num(k)?.rem_euclid(4) as u8)
    } else if let Some(s) = op.strip_prefix("cnt") {
        RuleOp::Count(num(s)?.clamp(0, 255) as u8)
    } else if let Some(s) = op.strip_prefix("path") {
        RuleOp::Path(num(s)?.clamp(-8, 8) as i8)
    } else if op == "fill" {
        RuleOp::ToggleFill
    } else if op == "alt" {
        RuleOp::AlternateSide
    } else {
        return Err(format!("unknown rule `{op}`"));
    };
    Ok(Rule { op, every })
}

fn parse_component(text: &str) -> std::result::Result<Component, String> {
    let mut parts = text.split(';');
    let head = parts.next().ok_or("empty component")?;
    let (shape, rest) = head.split_once('@').ok_or("component lacks @slot")?;
    let shape = Shape::ALL
        .into_iter()
        .find(|s| s.name() == shape)
        .ok_or_else(|| format!("unknown shape `{shape}`"))?;
    let (slot, state) = rest.split_once(':').ok_or("component lacks :state")?;
    let fields: Vec<&str> = state.split(',').collect();
    if fields.len() != 3 {
        return Err(format!("state `{state}` needs three fields"));
    }
    let byte = |s: &str| s.parse::<u8>().map_err(|_| format!("bad number `{s}`"));
    let slot = byte(slot)?;
    if slot > 8 {
        return Err(format!("slot {slot} out of range"));
    }
    let count = byte(fields[0])?;
    if count >= shape.count_modulus() {
        return Err(format!("count {count} out of range for {}", shape.name()));
    }
    let start = ComponentState {
        slot,
        count,
        orientation: byte(fields[1])? % 4,
        filled: byte(fields[2])? != 0,
    };
    let rules = parts.map(parse_rule).collect::<std::result::Result<_, _>>()?;
    Ok(Component { shape, start, rules })
}

impl FromStr for TransformProgram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |msg: String| Error::Descriptor {
            text: s.to_string(),
            msg,
        };
        let mut parts = s.split('|');
        let view = parts
            .next()
            .and_then(|v| v.strip_prefix("v="))
            .ok_or_else(|| err("missing v=<view>".into()))?
            .parse::<Dihedral>()
            .map_err(|e| err(e.to_string()))?;
        let components = parts
            .map(parse_component)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        if components.is_empty() {
            return Err(err("no components".into()));
        }
        Ok(Self { components, view })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn sampling_is_deterministic() {
        for d in 1..=3 {
            let a = sample_program(&mut SeededRng::stream(3, d as u64), d);
            let b = sample_program(&mut SeededRng::stream(3, d as u64), d);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn difficulty_sets_varying_components() {
        let mut rng = SeededRng::new(8);
        for d in 1..=3u8 {
            for _ in 0..50 {
                assert_eq!(sample_program(&mut rng, d).varying_count(), d as usize);
            }
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let mut rng = SeededRng::new(21);
        for i in 0..200 {
            let p = sample_program(&mut rng, 1 + (i % 3) as u8).with_view(Dihedral::from_index(i % 8));
            let text = p.to_string();
            assert!(!text.contains('\t') && !text.contains('\n'));
            assert_eq!(text.parse::<TransformProgram>().unwrap(), p);
        }
    }

    #[test]
    fn descriptor_errors() {
        for bad in [
            "",
            "v=r0m0",
            "v=r9m0|dash@1:0,0,0",
            "v=r0m0|hex@1:0,0,0",
            "v=r0m0|dash@1:0,0",
            "v=r0m0|dash@1:0,0,0;spin/1",
        ] {
            assert!(bad.parse::<TransformProgram>().is_err(), "{bad}");
        }
    }

    #[test]
    fn every_n_delays_changes() {
        let c = Component {
            shape: Shape::Tick,
            start: ComponentState {
                slot: 0,
                count: 0,
                orientation: 0,
                filled: false,
            },
            rules: vec![Rule {
                op: RuleOp::Count(1),
                every: 2,
            }],
        };
        let counts: Vec<u8> = (1..=6).map(|t| c.state_at(t).count).collect();
        assert_eq!(counts, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn path_walks_the_perimeter() {
        let c = Component {
            shape: Shape::Arrow,
            start: ComponentState {
                slot: 0,
                count: 0,
                orientation: 0,
                filled: false,
            },
            rules: vec![Rule {
                op: RuleOp::Path(1),
                every: 1,
            }],
        };
        let slots: Vec<u8> = (1..=9).map(|t| c.state_at(t).slot).collect();
        assert_eq!(slots, vec![0, 1, 2, 5, 8, 7, 6, 3, 0]);
        assert_eq!(partner(0), 2);
        assert_eq!(partner(1), 7);
        assert_eq!(partner(3), 5);
    }
}
