//! Neural layers composed from tape primitives.

mod cnn;
mod dense;
mod dropout;
mod gru;
mod init;
mod params;

pub use cnn::{CnnConfig, ShallowCnn};
pub use dense::{Activation, Dense};
pub use dropout::{dropout, Mode};
pub use gru::{Gru, GruLayer};
pub use init::uniform_fan;
pub use params::{Bound, ParamId, ParamSet};
