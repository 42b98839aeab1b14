//! Minimal dense array engine: a fixed layer set with explicit forward tapes,
//! reverse-mode gradients, Adam and a binary checkpoint format.

mod array;
pub mod gradcheck;
mod checkpoint;
mod conv;
mod layers;
mod optim;
mod param;

pub use array::{Array, Scalar};
pub use checkpoint::{
    encode_checkpoint, Checkpoint, CheckpointHeader, ParamEntry, SectionHeader, SectionRef,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use conv::{Conv2d, ConvCache};
pub use layers::{Layer, LayerSpec, Linear, ResidualBlock, Sequential, Tape};
pub use optim::{Adam, AdamConfig};
pub use param::Parameter;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse<T: Scalar>(target: &Array<T>, pred: &Array<T>) -> crate::error::Result<(f64, Array<T>)> {
    if target.shape() != pred.shape() {
        return Err(crate::error::MarlError::dimension(
            "mse",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = target.len() as f64;
    let diffs: Vec<f64> = target
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&t, &p)| p.to_f64().unwrap() - t.to_f64().unwrap())
        .collect();
    let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    let loss = crate::exec::pairwise_sum(&sq) / n;
    let grad = Array::new(
        pred.shape().to_vec(),
        diffs.iter().map(|d| T::from_f64_lossy(2.0 * d / n)).collect(),
    )?;
    Ok((loss, grad))
}
