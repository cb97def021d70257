//! IDX containers as used by MNIST and EMNIST.
//!
//! Big-endian header: two zero bytes, a type byte (0x08 = unsigned byte), the
//! number of dimensions, then one `u32` per dimension, then the raw payload.
//! Images are `0x00000803` (count, rows, cols), labels `0x00000801` (count).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images paired with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, k: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[k * n..(k + 1) * n]
    }

    /// Pixel intensities of image `k` divided by 255.
    pub fn probabilities(&self, k: usize) -> Vec<f64> {
        self.image(k).iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.images.truncate(n * self.rows * self.cols);
        }
    }

    /// Swaps rows and columns of every image. EMNIST files store images
    /// transposed relative to MNIST.
    pub fn transpose_images(&mut self) {
        let (r, c) = (self.rows, self.cols);
        let mut out = vec![0u8; self.images.len()];
        for (src, dst) in self.images.chunks(r * c).zip(out.chunks_mut(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        self.images = out;
        std::mem::swap(&mut self.rows, &mut self.cols);
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn parse(bytes: &[u8], path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let found = read_u32(bytes, 0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = (0..ndims).map(|d| read_u32(bytes, 4 + 4 * d) as usize).collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, "IDX dimensions overflow"))?;
    let actual = bytes.len() - header;
    if actual < payload {
        return Err(Error::format(
            path,
            format!("truncated payload: {actual} of {payload} bytes"),
        ));
    }
    if actual > payload {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", actual - payload),
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Parses an image file; returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (dims, data) = parse(bytes, path, IMAGES_MAGIC)?;
    Ok((dims[0], dims[1], dims[2], data))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    Ok(parse(bytes, path, LABELS_MAGIC)?.1)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<IdxDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (count, rows, cols, images) = parse_idx_images(&read(ip)?, ip)?;
    let labels = parse_idx_labels(&read(lp)?, lp)?;
    if labels.len() != count {
        return Err(Error::format(
            lp,
            format!("{} labels for {count} images in {}", labels.len(), ip.display()),
        ));
    }
    Ok(IdxDataset {
        rows,
        cols,
        images,
        labels,
    })
}

pub fn encode_idx_images(rows: usize, cols: usize, images: &[u8]) -> Vec<u8> {
    let count = images.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(images);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes a dataset as an image/label file pair.
pub fn write_idx(dataset: &IdxDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(
        images_path,
        encode_idx_images(dataset.rows, dataset.cols, &dataset.images),
    )
    .map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_idx_labels(&dataset.labels)).map_err(|e| Error::io(labels_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxDataset {
        IdxDataset {
            rows: 3,
            cols: 2,
            images: (0..12).map(|v| (v * 21) as u8).collect(),
            labels: vec![7, 2],
        }
    }

    #[test]
    fn fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&fixture(), &ip, &lp).unwrap();
        assert_eq!(fs::read(&ip).unwrap().len(), 16 + 12);
        assert_eq!(fs::read(&lp).unwrap().len(), 8 + 2);
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back, fixture());
        assert_eq!(back.image(1), &[126, 147, 168, 189, 210, 231]);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let mut d = fixture();
        write_idx(&d, &ip, &lp).unwrap();
        d.labels.push(1);
        fs::write(&lp, encode_idx_labels(&d.labels)).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("3 labels for 2 images"), "{err}");
    }

    #[test]
    fn truncated_and_swapped_files_fail() {
        let p = Path::new("fixture");
        let bytes = encode_idx_images(3, 2, &fixture().images);
        assert!(parse_idx_images(&bytes[..bytes.len() - 1], p).is_err());
        assert!(parse_idx_images(&bytes[..10], p).is_err());
        assert!(parse_idx_labels(&bytes, p).is_err());
        assert!(parse_idx_images(&encode_idx_labels(&[1, 2]), p).is_err());
    }

    #[test]
    fn every_header_byte_mutation_is_rejected() {
        let p = Path::new("fixture");
        let bytes = encode_idx_images(3, 2, &fixture().images);
        for at in 0..16 {
            for delta in 1..=255u8 {
                let mut bad = bytes.clone();
                bad[at] = bad[at].wrapping_add(delta);
                assert!(parse_idx_images(&bad, p).is_err(), "byte {at} += {delta} accepted");
            }
        }
        let labels = encode_idx_labels(&[1, 2, 3]);
        for at in 0..8 {
            for delta in 1..=255u8 {
                let mut bad = labels.clone();
                bad[at] = bad[at].wrapping_add(delta);
                assert!(parse_idx_labels(&bad, p).is_err());
            }
        }
    }

    #[test]
    fn transpose_swaps_axes() {
        let mut d = fixture();
        d.transpose_images();
        assert_eq!((d.rows, d.cols), (2, 3));
        assert_eq!(d.image(0), &[0, 42, 84, 21, 63, 105]);
        d.transpose_images();
        assert_eq!(d, fixture());
    }
}
