use rand::seq::SliceRandom;

use super::model::{predict, Model};
use super::optim::{adam_step, step_lr, AdamState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::top2_margin;
use crate::rng::stream;
use crate::tensor::Graph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    /// Multiplicative decay applied every `step_size` epochs.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            step_size: 10,
            gamma: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.step_size == 0 {
            return Err(Error::Config(
                "epochs, batch size and step size must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} must be in (0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr, epoch, self.step_size, self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean top-2 margin of the training logits seen during the epoch.
    pub mlm: f64,
    pub lr: f64,
}

/// Owns a model and its optimizer state across epochs.
#[derive(Debug)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    loss: LossSpec,
    adam: AdamState,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, loss: LossSpec) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        Ok(Self {
            model,
            cfg,
            loss,
            adam: AdamState::new(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Contract("training on an empty dataset".into()));
        }
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(self.cfg.seed, &[0x5eed, epoch as u64]));

        let (mut loss_sum, mut margin_sum, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            let x = data.gather_inputs(batch);
            let targets: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();

            let mut g = Graph::new();
            let (logits, vars) = self.model.forward_graph(&mut g, &x)?;
            let l = self.loss.apply(&mut g, logits, &targets)?;
            g.backward(l)
                .map_err(|e| e.with_context(format!("epoch {epoch}")))?;

            let lv = g.value(logits);
            for (r, &t) in targets.iter().enumerate() {
                let row = lv.row(r);
                margin_sum += top2_margin(row)?;
                if predict(row) == t {
                    correct += 1;
                }
            }
            loss_sum += g.value(l).data()[0] * batch.len() as f64;

            let grads: Vec<Vec<f64>> = vars
                .iter()
                .map(|&v| {
                    g.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; g.value(v).len()])
                })
                .collect();
            let mut params = self.model.params_mut();
            adam_step(&mut params, &grads, &mut self.adam, lr)
                .map_err(|e| e.with_context(format!("epoch {epoch}")))?;
        }

        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            mlm: margin_sum / n,
            lr,
        })
    }

    /// Runs the configured number of epochs, reporting each one to `on_epoch`.
    pub fn fit(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let mut log = Vec::with_capacity(self.cfg.epochs);
        while self.epoch < self.cfg.epochs {
            let stats = self.train_epoch(data)?;
            on_epoch(&stats);
            log.push(stats);
        }
        Ok(log)
    }
}
