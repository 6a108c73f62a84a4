//! Desk-scale training: denoise a synthetic scene through one attention
//! block by plain gradient descent.
//!
//! The objective is fixed up front: one noise draw corrupts the clean video
//! once, and every step minimizes the mean squared error of the block's
//! reconstruction against the clean frames. Holding the noise fixed keeps
//! the loss surface static, so a zero learning rate provably yields a flat
//! loss curve and any improvement is attributable to the parameter updates.

use serde::{Deserialize, Serialize};

use crate::attention::{stsa_block, stsa_block_backward, AttentionParams, StsaOptions};
use crate::error::{Error, Result};
use crate::flow::FlowSet;
use crate::rng::derive_seed;
use crate::subspace::SubspaceSpec;
use crate::tensor::{forward_noise_step, independent_noise, LatentVideo};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Noising variance in `[0, 1]` applied once to the clean video.
    pub beta: f64,
    pub spec: SubspaceSpec,
    pub shifted: bool,
    /// Add each window's input back onto its attention output. Without it
    /// the block must reconstruct frames from window content alone.
    pub residual: bool,
    /// When false the block runs on all-zero flows, turning alignment off;
    /// this is the unaligned windowed-attention control arm.
    pub use_flows: bool,
    pub d_model: usize,
    pub heads: usize,
    /// Seeds the parameter init and the noise draw.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50,
            lr: 0.05,
            beta: 0.25,
            spec: SubspaceSpec::new(4, 4, 4).expect("static spec"),
            shifted: false,
            residual: true,
            use_flows: true,
            d_model: 8,
            heads: 2,
            seed: 0,
        }
    }
}

/// Loss trajectory and the parameters it ends at.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// `steps + 1` entries: the loss before each update, then the loss
    /// after the final one.
    pub losses: Vec<f64>,
    pub params: AttentionParams<f64>,
    /// The corrupted input the run reconstructed from.
    pub noised: LatentVideo<f64>,
}

impl TrainResult {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("losses never empty")
    }
}

fn mse(y: &LatentVideo<f64>, target: &LatentVideo<f64>) -> f64 {
    let n = y.data().len() as f64;
    y.data()
        .iter()
        .zip(target.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Gradient-descend one attention block to reconstruct `clean` from its
/// noised copy. Double precision throughout; a non-finite loss aborts with
/// the offending step.
pub fn toy_train(
    clean: &LatentVideo<f64>,
    flows: &FlowSet,
    config: &TrainConfig,
) -> Result<TrainResult> {
    let (f, h, w, c) = clean.shape();
    config.spec.check_divides(f, h, w)?;
    let flows_used = if config.use_flows {
        flows.clone()
    } else {
        FlowSet::zero(f, h, w)?
    };
    let options = StsaOptions {
        shifted: config.shifted,
        residual: config.residual,
    };
    let noise = independent_noise::<f64>(f, h, w, c, derive_seed(config.seed, "train-noise"))?;
    let noised = forward_noise_step(clean, config.beta, &noise)?;
    let mut params =
        AttentionParams::<f64>::seeded(c, config.d_model, config.heads, derive_seed(config.seed, "train-params"))?;

    let count = (f * h * w * c) as f64;
    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        // A non-finite block output is divergence too; report it as such
        // rather than as a tensor validation failure.
        let y = match stsa_block(&noised, &flows_used, config.spec, &params, options) {
            Ok(y) => y,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    step,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        let loss = mse(&y, clean);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        if step == config.steps {
            break;
        }
        // d(mse)/dy = 2 (y - clean) / count
        let upstream = LatentVideo::new(
            (y.data() - clean.data()).mapv(|v| 2.0 * v / count),
        )?;
        let (_, grads) =
            stsa_block_backward(&noised, &flows_used, config.spec, &params, options, &upstream)?;
        params.apply_gradients(&grads, config.lr)?;
    }
    Ok(TrainResult {
        losses,
        params,
        noised,
    })
}
