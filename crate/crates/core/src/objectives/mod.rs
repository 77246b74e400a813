//! Adversarial and regression losses, the contrastive loss, and Adam.

mod adam;
mod losses;

pub use adam::{Adam, AdamConfig};
pub use losses::{
    bce, bce_sum, contrastive, contrastive_tape, d_loss_context, d_loss_context_tape, d_loss_context_terms, g_loss,
    g_loss_tape, lp_loss, lp_loss_tape, BceTerm, GanLossWeights, LpNorm, BCE_EPS,
};
