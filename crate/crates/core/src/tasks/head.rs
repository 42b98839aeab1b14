use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::TaskLabels;
use crate::error::{MarlError, Result};
use crate::nn::{Array, LayerSpec, Scalar, Sequential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ProgramClass,
    VintageClass,
    HeightReg,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ProgramClass, TaskKind::VintageClass, TaskKind::HeightReg];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ProgramClass => "program_class",
            TaskKind::VintageClass => "vintage_class",
            TaskKind::HeightReg => "height_reg",
        }
    }
}

/// One convolution and one fully-connected layer reading the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead<T: Scalar = f32> {
    pub task: TaskKind,
    pub net: Sequential<T>,
    pub output_dim: usize,
    pub latent_dim: usize,
    pub latent_side: usize,
}

pub const HEAD_CHANNELS: usize = 8;

pub fn head_specs(latent_dim: usize, latent_side: usize, output_dim: usize) -> Vec<LayerSpec> {
    let pooled = latent_side.div_ceil(2);
    vec![
        LayerSpec::Conv2d { in_channels: latent_dim, out_channels: HEAD_CHANNELS, kernel: 3, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Linear { in_features: HEAD_CHANNELS * pooled * pooled, out_features: output_dim },
    ]
}

impl<T: Scalar> TaskHead<T> {
    pub fn new<R: Rng>(task: TaskKind, latent_dim: usize, latent_side: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        if output_dim == 0 {
            return Err(MarlError::Config(format!("{} head needs output_dim ≥ 1", task.as_str())));
        }
        let net = Sequential::from_specs(
            &format!("head.{}", task.as_str()),
            &head_specs(latent_dim, latent_side, output_dim),
            rng,
        )?;
        Ok(TaskHead { task, net, output_dim, latent_dim, latent_side })
    }

    fn check(&self, z_e: &Array<T>) -> Result<()> {
        let (_, d, h, w) = z_e.dims4("head input")?;
        if d != self.latent_dim || h != self.latent_side || w != self.latent_side {
            return Err(MarlError::dimension(
                format!("{} head input", self.task.as_str()),
                format!("[n, {}, {}, {}]", self.latent_dim, self.latent_side, self.latent_side),
                format!("{:?}", z_e.shape()),
            ));
        }
        Ok(())
    }

    /// Raw logits (classification) or one value (regression) per sample.
    pub fn forward(&self, z_e: &Array<T>) -> Result<Array<T>> {
        self.check(z_e)?;
        self.net.infer(z_e)
    }

    pub fn cast<U: Scalar>(&self) -> TaskHead<U> {
        TaskHead {
            task: self.task,
            net: self.net.cast(),
            output_dim: self.output_dim,
            latent_dim: self.latent_dim,
            latent_side: self.latent_side,
        }
    }

    /// Forward with tape, for training.
    pub fn forward_train(&self, z_e: &Array<T>) -> Result<(Array<T>, crate::nn::Tape<T>)> {
        self.check(z_e)?;
        self.net.forward(z_e)
    }
}

pub fn head_forward<T: Scalar>(z_e: &Array<T>, head: &TaskHead<T>) -> Result<Array<T>> {
    head.forward(z_e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub program: f64,
    pub vintage: f64,
    pub height: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights { program: 1.0, vintage: 1.0, height: 1.0 }
    }
}

impl TaskWeights {
    pub const ZERO: TaskWeights = TaskWeights { program: 0.0, vintage: 0.0, height: 0.0 };

    pub fn get(&self, task: TaskKind) -> f64 {
        match task {
            TaskKind::ProgramClass => self.program,
            TaskKind::VintageClass => self.vintage,
            TaskKind::HeightReg => self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtpLoss<T: Scalar = f32> {
    /// Unweighted mean loss per task, in input order.
    pub per_task: Vec<(TaskKind, f64)>,
    /// `Σ wᵢ·lossᵢ`
    pub total: f64,
    /// Gradient of `total` with respect to each head output.
    pub grads: Vec<Array<T>>,
}

fn target<'a>(labels: &'a [TaskLabels], task: TaskKind) -> impl Iterator<Item = (usize, f64)> + 'a {
    labels.iter().map(move |l| match task {
        TaskKind::ProgramClass => (l.program_index, 0.0),
        TaskKind::VintageClass => (l.vintage_bin, 0.0),
        TaskKind::HeightReg => (0, l.height_gray),
    })
}

/// Softmax cross-entropy for classification heads, squared error for the
/// height head, each averaged over the batch and combined with `weights`.
pub fn dtp_loss<T: Scalar>(
    outputs: &[(TaskKind, &Array<T>)],
    labels: &[TaskLabels],
    weights: &TaskWeights,
) -> Result<DtpLoss<T>> {
    let mut per_task = Vec::with_capacity(outputs.len());
    let mut grads = Vec::with_capacity(outputs.len());
    let mut total = 0.0;
    for &(task, out) in outputs {
        let n = out.batch();
        if n != labels.len() {
            return Err(MarlError::dimension(format!("{} labels", task.as_str()), n, labels.len()));
        }
        let dim = out.len() / n;
        let w = weights.get(task);
        let data = out.data();
        let mut grad = vec![T::zero(); data.len()];
        let mut loss = 0.0;
        for (s, (class, value)) in target(labels, task).enumerate() {
            let row = &data[s * dim..(s + 1) * dim];
            let g = &mut grad[s * dim..(s + 1) * dim];
            if task == TaskKind::HeightReg {
                let diff = row[0].to_f64().unwrap() - value;
                loss += diff * diff;
                g[0] = T::from_f64_lossy(w * 2.0 * diff / n as f64);
            } else {
                if class >= dim {
                    return Err(MarlError::Label(format!("{} label {class} ≥ {dim} classes", task.as_str())));
                }
                let logits: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let lse = max + sum_exp.ln();
                loss += lse - logits[class];
                for (j, gj) in g.iter_mut().enumerate() {
                    let p = (logits[j] - lse).exp();
                    let onehot = if j == class { 1.0 } else { 0.0 };
                    *gj = T::from_f64_lossy(w * (p - onehot) / n as f64);
                }
            }
        }
        loss /= n as f64;
        total += w * loss;
        per_task.push((task, loss));
        grads.push(Array::new(out.shape().to_vec(), grad)?);
    }
    Ok(DtpLoss { per_task, total, grads })
}
