//! Vector-quantized convolutional autoencoder and its reconstruction training.

mod model;
mod quantizer;
mod train;

pub use model::{VqAutoencoder, VqConfig};
pub use quantizer::{quantize, quantizer_backward, Codebook, LatentCode, Quantized};
pub use train::{
    evaluate_batch, loss_history_csv, pretrain, run_epoch, train_step, AuxiliaryObjective,
    LossBreakdown, TrainConfig,
};

use crate::error::Result;
use crate::nn::{mse, Array};

/// Mean squared error over every pixel and channel.
pub fn reconstruction_loss(x: &Array<f32>, x_hat: &Array<f32>) -> Result<f64> {
    Ok(mse(x, x_hat)?.0)
}
