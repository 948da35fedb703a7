//! Output-layer margins and accuracy.
//!
//! Margins are measured on the model's scaled logits, never on clamped or
//! margin-shifted values.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{predict, Model};

/// Batch size used when evaluating a model over a dataset.
pub const EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginRecord {
    pub sample: usize,
    pub predicted: usize,
    pub top2: f64,
    pub per_class: Option<Vec<f64>>,
}

impl MarginRecord {
    pub fn from_logits(sample: usize, logits: &[f64], with_classes: bool) -> Result<Self> {
        Ok(Self {
            sample,
            predicted: predict(logits),
            top2: top2_margin(logits)?,
            per_class: if with_classes {
                Some(class_margins(logits)?)
            } else {
                None
            },
        })
    }
}

fn need_two(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::Dimension(format!(
            "margins need at least 2 logits, got {}",
            logits.len()
        )));
    }
    Ok(())
}

/// Largest logit minus the second largest.
pub fn top2_margin(logits: &[f64]) -> Result<f64> {
    need_two(logits)?;
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in logits {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

/// `logit[argmax] − logit[k]` for every `k ≠ argmax`, in class order.
pub fn class_margins(logits: &[f64]) -> Result<Vec<f64>> {
    need_two(logits)?;
    let best = predict(logits);
    Ok(logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != best)
        .map(|(_, &v)| logits[best] - v)
        .collect())
}

/// Mean logit margin over a set of records.
pub fn mlm(records: &[MarginRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("mean logit margin of no records".into()));
    }
    Ok(records.iter().map(|r| r.top2).sum::<f64>() / records.len() as f64)
}

/// `|s − t|` for a binarized neuron.
pub fn neuron_margin(s: f64, t: f64) -> f64 {
    (s - t).abs()
}

/// Scaled logits of every sample, evaluated in fixed-size batches.
pub fn dataset_logits(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let x = data.batch_inputs(start..end);
        let logits = model.forward(&x)?;
        out.extend((0..end - start).map(|r| logits.row(r).to_vec()));
    }
    Ok(out)
}

/// Accuracy and mean top-2 margin over a dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation on an empty dataset".into()));
    }
    if model.classes() < data.classes() {
        return Err(Error::InvalidTarget {
            target: data.classes() - 1,
            classes: model.classes(),
        });
    }
    let mut correct = 0usize;
    let mut margin = 0.0;
    for (row, &label) in dataset_logits(model, data)?.iter().zip(data.labels()) {
        if predict(row) == label {
            correct += 1;
        }
        margin += top2_margin(row)?;
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, margin / n))
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    evaluate(model, data).map(|(acc, _)| acc)
}

/// Per-sample margin records for a whole dataset.
pub fn margin_records(model: &Model, data: &Dataset) -> Result<Vec<MarginRecord>> {
    dataset_logits(model, data)?
        .iter()
        .enumerate()
        .map(|(i, row)| MarginRecord::from_logits(i, row, false))
        .collect()
}
