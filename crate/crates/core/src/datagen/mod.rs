//! Procedural diagram-sequence problems, bouncing-sprite videos and the
//! on-disk dataset format.
//!
//! A [`TransformProgram`] places up to four components on a 3×3 slot grid of
//! a 32×32 canvas and evolves them with per-step rules. Rendering is a pure
//! function of program and time step, and every frame is binary.

mod dihedral;
mod frame;
pub mod io;
mod problem;
pub mod program;
pub mod render;
mod sprites;

pub use dihedral::Dihedral;
pub use frame::Frame;
pub use problem::{
    augment, augment_all, generate_problem, mixed_difficulty, render_problem, sequence_labels, SequenceProblem,
};
pub use program::{sample_program, TransformProgram};
pub use render::{labels, render, Labels};
pub use sprites::{gen_moving_sprites, trajectories as sprites_trajectories, MovingSpriteVideo, Sprite, SpriteConfig};

/// Canvas width and height.
pub const EXTENT: usize = 32;
/// Question frames per problem.
pub const QUESTION_LEN: usize = 5;
/// Answer candidates per problem.
pub const CANDIDATES: usize = 5;
/// Number of label values per frame.
pub const LABELS: usize = 16;
