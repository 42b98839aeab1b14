use super::head::{dtp_loss, TaskHead, TaskKind, TaskWeights};
use super::labels::{LabelMap, TaskLabels, VINTAGE_BINS};
use crate::error::{MarlError, Result};
use crate::ingest::MultiScaleImage;
use crate::nn::{encode_checkpoint, seeded_rng, Adam, Array, Checkpoint, Parameter, SectionRef};
use crate::vq::{run_epoch, AuxiliaryObjective, LossBreakdown, TrainConfig, VqAutoencoder};

/// The supervised heads plus the labels of the training set they read.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPool {
    pub heads: Vec<TaskHead<f32>>,
    pub weights: TaskWeights,
    pub labels: Vec<TaskLabels>,
    pub label_map: LabelMap,
}

impl TaskPool {
    /// One head per task, initialized from `seed`.
    pub fn new(model: &VqAutoencoder, label_map: LabelMap, labels: Vec<TaskLabels>, weights: TaskWeights, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed, 7);
        let (d, l) = (model.config.latent_dim, model.config.latent_side());
        let program_classes = label_map.len().max(1);
        let heads = TaskKind::ALL
            .iter()
            .map(|&task| {
                let out = match task {
                    TaskKind::ProgramClass => program_classes,
                    TaskKind::VintageClass => VINTAGE_BINS,
                    TaskKind::HeightReg => 1,
                };
                TaskHead::new(task, d, l, out, &mut rng)
            })
            .collect::<Result<_>>()?;
        Ok(TaskPool { heads, weights, labels, label_map })
    }

    pub fn head(&self, task: TaskKind) -> Option<&TaskHead<f32>> {
        self.heads.iter().find(|h| h.task == task)
    }

    pub fn sections(&self) -> Vec<SectionRef<'_>> {
        self.heads
            .iter()
            .map(|h| SectionRef {
                name: match h.task {
                    TaskKind::ProgramClass => "head.program_class",
                    TaskKind::VintageClass => "head.vintage_class",
                    TaskKind::HeightReg => "head.height_reg",
                },
                layers: h.net.specs(),
                params: h.net.params(),
            })
            .collect()
    }

    pub fn load_heads(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for h in &mut self.heads {
            let name = format!("head.{}", h.task.as_str());
            if ckpt.section(&name)?.layers != h.net.specs() {
                return Err(MarlError::Parse(format!("checkpoint {name} layer specs differ")));
            }
            ckpt.load_into(&name, h.net.params_mut())?;
        }
        Ok(())
    }
}

impl AuxiliaryObjective for TaskPool {
    fn loss_and_grad(&mut self, batch: &[usize], z_e: &Array<f32>) -> Result<(f64, Array<f32>)> {
        let labels: Vec<TaskLabels> = batch
            .iter()
            .map(|&i| self.labels.get(i).copied().ok_or_else(|| MarlError::Label(format!("no labels for sample {i}"))))
            .collect::<Result<_>>()?;
        let mut grad = Array::zeros(z_e.shape());
        let mut total = 0.0;
        let weights = self.weights;
        for head in self.heads.iter_mut().filter(|h| weights.get(h.task) != 0.0) {
            let (out, tape) = head.forward_train(z_e)?;
            let loss = dtp_loss(&[(head.task, &out)], &labels, &weights)?;
            total += loss.total;
            let g = head.net.backward(&tape, &loss.grads[0])?;
            for (acc, v) in grad.data_mut().iter_mut().zip(g.data()) {
                *acc += *v;
            }
        }
        Ok((total, grad))
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        self.heads.iter_mut().flat_map(|h| h.net.params_mut()).collect()
    }
}

/// Exactly one epoch of joint optimization of reconstruction, quantization
/// and weighted task losses, with a fresh optimizer.
pub fn finetune(model: &mut VqAutoencoder, pool: &mut TaskPool, images: &[MultiScaleImage], cfg: &TrainConfig) -> Result<LossBreakdown> {
    if images.len() != pool.labels.len() {
        return Err(MarlError::dimension("finetune labels", images.len(), pool.labels.len()));
    }
    let mut adam = Adam::new(cfg.adam());
    run_epoch(model, Some(pool), images, cfg, 0, &mut adam)
}

/// Checkpoint bytes holding the autoencoder and every head.
pub fn joint_checkpoint(model: &VqAutoencoder, pool: Option<&TaskPool>, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let mut sections = model.sections();
    let mut meta = serde_json::json!({ "vq": model.config, "training": metadata });
    if let Some(p) = pool {
        sections.extend(p.sections());
        meta["task_weights"] = serde_json::to_value(p.weights).expect("weights serialize");
        meta["programs"] = serde_json::to_value(&p.label_map.programs).expect("programs serialize");
    }
    encode_checkpoint(model.config.seed, meta, &sections)
}
