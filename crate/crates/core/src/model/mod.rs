//! The DEAL network: backbone, hybrid feature enhancement, point-guided
//! density activation, density-guided query assignment and the decoder.

mod deal;
mod layers;
mod loss;
mod matcher;

pub use loss::{build_density_target, compute_losses, giou_loss, matching_cost, LossValues, Losses};
pub use matcher::hungarian_match;
pub use deal::{allocate_queries, Deal, Decoded, DensityMap, Enhanced, Features, HeadOutput, Inference, PromptEmbedding, Pyramid};

use serde::{Deserialize, Serialize};

use crate::error::{DealError, Result};
use crate::geometry::NormBox;
use crate::scene::CategoryId;

/// Stride of the enhanced feature and density map.
pub const DENSITY_STRIDE: usize = 8;
/// Input sides must be multiples of the coarsest backbone stride.
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Unified backbone / feature channel width `C`.
    pub channels: usize,
    /// Prompt-embedding and decoder width `d`.
    pub hidden: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    /// Weight of the density loss.
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub score_threshold: f64,
    pub cost_class: f64,
    pub cost_l1: f64,
    pub cost_giou: f64,
    pub loss_l1: f64,
    pub loss_giou: f64,
    /// Initial probability of the density map and score heads.
    pub prior_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            hidden: 64,
            heads: 4,
            decoder_layers: 2,
            lambda: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            n_min: 1,
            n_max: 300,
            score_threshold: 0.2,
            cost_class: 2.0,
            cost_l1: 5.0,
            cost_giou: 2.0,
            loss_l1: 5.0,
            loss_giou: 2.0,
            prior_prob: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DealError::Config(m));
        if self.channels < 2 || self.channels % 2 != 0 {
            return bad(format!("channels must be even and at least 2, got {}", self.channels));
        }
        if self.heads == 0 || self.channels % self.heads != 0 || self.hidden % self.heads != 0 {
            return bad(format!(
                "channels {} and hidden {} must both be divisible by {} heads",
                self.channels, self.hidden, self.heads
            ));
        }
        if self.hidden % 4 != 0 || self.channels % 4 != 0 {
            return bad("channels and hidden must be multiples of 4 for the sine position code".into());
        }
        if self.decoder_layers == 0 {
            return bad("decoder_layers must be at least 1".into());
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad(format!("need 1 <= n_min <= n_max, got {} and {}", self.n_min, self.n_max));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..1.0).contains(&self.focal_alpha) {
            return bad("score_threshold and focal_alpha must lie in [0, 1]".into());
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return bad("prior_prob must lie in (0, 1)".into());
        }
        let weights = [self.lambda, self.focal_gamma, self.cost_class, self.cost_l1, self.cost_giou, self.loss_l1, self.loss_giou];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("loss and cost weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// One predicted box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: NormBox,
    pub score: f64,
    pub prompt_group: CategoryId,
}
