//! Downstream task pool: supervised heads on the latent that constrain the
//! encoder during a one-epoch fine-tune.

mod head;
mod labels;
mod pool;
mod probe;

pub use head::{dtp_loss, head_forward, head_specs, DtpLoss, TaskHead, TaskKind, TaskWeights, HEAD_CHANNELS};
pub use labels::{bin_vintage, LabelMap, TaskLabels, VINTAGE_BINS};
pub use pool::{finetune, joint_checkpoint, TaskPool};
pub use probe::{probe_accuracy, probe_accuracy_cv, ProbeConfig};
