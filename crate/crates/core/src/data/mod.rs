//! Datasets, model files, and result tables.

mod blobs;
mod idx;
mod modelfile;
mod results;

use std::ops::Range;

pub use blobs::{synthetic_blobs, BLOB_CENTER_SCALE};
pub use idx::{load_fashion, load_idx, FashionSplit, FASHION_FILES};
pub use modelfile::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use results::{
    emit_plot_script, format_sig, read_sweep_csv, read_train_log_csv, write_sweep_csv,
    write_train_log_csv,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        let (n, _) = inputs.dims2()?;
        if inputs.shape().len() != 2 || n != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidTarget {
                target: bad,
                classes,
            });
        }
        inputs.check_finite("dataset inputs")?;
        Ok(Self {
            inputs,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn batch_inputs(&self, range: Range<usize>) -> Tensor {
        let d = self.dim();
        let rows = range.len();
        let data = self.inputs.data()[range.start * d..range.end * d].to_vec();
        Tensor::matrix(rows, d, data).expect("nonempty batch")
    }

    pub fn gather_inputs(&self, idx: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.input(i));
        }
        Tensor::matrix(idx.len(), d, data).expect("nonempty batch")
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.gather_inputs(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
            self.name.clone(),
        )
    }
}
