use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Distance of every cluster center from the origin.
pub const BLOB_CENTER_SCALE: f64 = 4.0;

/// `classes` isotropic Gaussian clusters in `dim` dimensions.
///
/// Class `k` is centered at `BLOB_CENTER_SCALE · e_k` (vertices of a scaled
/// simplex), which needs `classes <= dim`. Samples are interleaved by class.
pub fn synthetic_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "blobs need >= 2 classes and positive sizes, got {classes}x{per_class} in {dim}d"
        )));
    }
    if classes > dim {
        return Err(Error::Config(format!(
            "{classes} simplex vertices do not fit in {dim} dimensions"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread {spread} must be >= 0")));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(seed, &[0xb10b]);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for k in 0..classes {
            for j in 0..dim {
                let center = if j == k { BLOB_CENTER_SCALE } else { 0.0 };
                data.push(center + noise.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, classes, "blobs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let a = synthetic_blobs(4, 10, 6, 0.5, 9).unwrap();
        let b = synthetic_blobs(4, 10, 6, 0.5, 9).unwrap();
        assert_eq!(a, b);
        let c = synthetic_blobs(4, 10, 6, 0.5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let d = synthetic_blobs(3, 5, 3, 0.0, 1).unwrap();
        for i in 0..d.len() {
            let k = d.labels()[i];
            for (j, &v) in d.input(i).iter().enumerate() {
                assert_eq!(v, if j == k { BLOB_CENTER_SCALE } else { 0.0 });
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(synthetic_blobs(5, 10, 3, 0.5, 0).is_err());
        assert!(synthetic_blobs(1, 10, 3, 0.5, 0).is_err());
        assert!(synthetic_blobs(2, 10, 3, -1.0, 0).is_err());
    }
}
