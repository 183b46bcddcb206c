//! IDX image/label files (the MNIST distribution format).

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::{Activations, Shape};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Ingestion(format!("{what}: header truncated")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an unsigned-byte image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Ingestion(format!(
            "images: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Ingestion(format!(
            "images: header declares {n} images of {rows}x{cols} but the file holds {} pixels",
            body.len()
        )));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Ingestion(format!(
            "labels: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Ingestion(format!(
            "labels: header declares {n} labels but the file holds {}",
            body.len()
        )));
    }
    Ok(body)
}

/// Loads images as `1 x rows x cols` samples standardized with the global
/// pixel mean and standard deviation, and labels as class indices. The class
/// count is the largest label plus one.
pub fn load_idx_dataset(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = read(images_path.as_ref())?;
    let lbl_bytes = read(labels_path.as_ref())?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Ingestion(format!("{n} images but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Ingestion("dataset is empty".into()));
    }
    let count = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / count;
    let var = pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / count;
    if var == 0.0 {
        return Err(Error::Ingestion("all pixels are equal; cannot standardize".into()));
    }
    let std = var.sqrt();
    let data = pixels.iter().map(|&p| (p as f64 - mean) / std).collect();
    let inputs = Activations::new(n, Shape::new(1, rows, cols), data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(inputs, Targets::Classes { labels, classes })
}

/// Encodes images in IDX format.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Encodes labels in IDX format.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, n_images: usize, n_labels: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let pixels: Vec<u8> = (0..n_images * 28 * 28).map(|i| ((i * 37) % 256) as u8).collect();
        let labels: Vec<u8> = (0..n_labels).map(|i| (i % 10) as u8).collect();
        let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
        fs::write(&ip, encode_idx_images(28, 28, &pixels)).unwrap();
        fs::write(&lp, encode_idx_labels(&labels)).unwrap();
        (ip, lp)
    }

    #[test]
    fn loads_and_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 4);
        let ds = load_idx_dataset(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.input_shape(), Shape::new(1, 28, 28));
        let v = &ds.inputs.data;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn count_and_magic_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 3);
        assert!(matches!(load_idx_dataset(&ip, &lp), Err(Error::Ingestion(_))));
        assert!(matches!(load_idx_dataset(&lp, &ip), Err(Error::Ingestion(_))));
        let mut bad = fs::read(&ip).unwrap();
        bad.pop();
        assert!(parse_idx_images(&bad).is_err());
    }
}
