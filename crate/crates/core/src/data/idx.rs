use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Expected file names and byte sizes of the uncompressed FashionMNIST files:
/// `(train images, train labels, test images, test labels)`.
pub const FASHION_FILES: [(&str, usize); 4] = [
    ("train-images-idx3-ubyte", 16 + 60_000 * 784),
    ("train-labels-idx1-ubyte", 8 + 60_000),
    ("t10k-images-idx3-ubyte", 16 + 10_000 * 784),
    ("t10k-labels-idx1-ubyte", 8 + 10_000),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FashionSplit {
    Train,
    Test,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn be_u32(bytes: &[u8], at: usize, what: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            what: what.display().to_string(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX image file (rank-3, unsigned bytes) and its label file.
/// Pixels are scaled by 1/255 and each image is flattened row-major.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read(images)?;
    let magic = be_u32(&img, 0, images)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            what: "image file",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let d = rows * cols;
    check_len(&img, 16 + n * d, images)?;

    let lab = read(labels)?;
    let magic = be_u32(&lab, 0, labels)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            what: "label file",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let nl = be_u32(&lab, 4, labels)? as usize;
    check_len(&lab, 8 + nl, labels)?;
    if nl != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: nl,
        });
    }
    if n == 0 || d == 0 {
        return Err(Error::Dimension("IDX file holds no samples".into()));
    }

    let pixels = img[16..16 + n * d]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(Tensor::matrix(n, d, pixels)?, labels, classes, name)
}

pub fn fashion_paths(dir: &Path, split: FashionSplit) -> (PathBuf, PathBuf) {
    let (i, l) = match split {
        FashionSplit::Train => (0, 1),
        FashionSplit::Test => (2, 3),
    };
    (dir.join(FASHION_FILES[i].0), dir.join(FASHION_FILES[l].0))
}

pub fn load_fashion(dir: &Path, split: FashionSplit) -> Result<Dataset> {
    let (images, labels) = fashion_paths(dir, split);
    let mut ds = load_idx(&images, &labels)?;
    ds.name = match split {
        FashionSplit::Train => "fashion-train".into(),
        FashionSplit::Test => "fashion-test".into(),
    };
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, img_magic: u32, n_img: u32, n_lab: u32, pixels: &[u8]) -> (PathBuf, PathBuf) {
        let mut img = Vec::new();
        img.extend(img_magic.to_be_bytes());
        img.extend(n_img.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(pixels);
        let mut lab = Vec::new();
        lab.extend(LABEL_MAGIC.to_be_bytes());
        lab.extend(n_lab.to_be_bytes());
        lab.extend((0..n_lab).map(|i| (i % 10) as u8));
        let (ip, lp) = (dir.join("img"), dir.join("lab"));
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn handcrafted_two_image_file() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), IMAGE_MAGIC, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 0]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.input(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.input(1), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.classes(), 10);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 0x0803_0000, 2, 2, &[0; 8]);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::BadMagic { .. })));
        let (ip, lp) = write_pair(dir.path(), IMAGE_MAGIC, 2, 2, &[0; 7]);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));
        let (ip, lp) = write_pair(dir.path(), IMAGE_MAGIC, 2, 3, &[0; 8]);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
        assert!(matches!(
            load_idx(&dir.path().join("nope"), &lp),
            Err(Error::MissingFile(_))
        ));
    }
}
