//! Big-endian IDX files (the MNIST distribution format), optionally gzip'd.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

/// Magic number and dimension sizes of an IDX file.
pub fn read_idx_header(path: &Path) -> Result<(u32, Vec<u32>)> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path))
        .collect::<Result<_>>()?;
    Ok((magic, dims))
}

fn expect_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let actual = be_u32(bytes, 0, path)?;
    if actual != expected {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        detail: format!("need {} data bytes, have {}", len, bytes.len().saturating_sub(header)),
    })
}

/// Loads an image/label IDX pair. Pixels are scaled from bytes to `[0, 1]`.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_bytes(images)?;
    expect_magic(&img, IMAGE_MAGIC, images)?;
    let count = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let pixels = body(&img, 16, count * rows * cols, images)?
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();

    let lab = read_bytes(labels)?;
    expect_magic(&lab, LABEL_MAGIC, labels)?;
    let label_count = be_u32(&lab, 4, labels)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let label_bytes = body(&lab, 8, label_count, labels)?.to_vec();
    let split = match images.file_name().and_then(|n| n.to_str()) {
        Some(n) if n.starts_with("t10k") || n.contains("test") => Split::Test,
        _ => Split::Train,
    };
    Dataset::new(pixels, label_bytes, 10, (1, rows, cols), split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    fn images(magic: u32, n: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [magic, n, 2, 2] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn labels(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&magic.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn parses_small_pair() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "train-images", &images(2051, 2, &[0, 255, 51, 102, 0, 0, 0, 255]));
        let l = write(dir.path(), "train-labels", &labels(2049, &[7, 1]));
        let ds = load_mnist_idx(&i, &l).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), (1, 2, 2));
        assert_eq!(ds.image(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.label(0), 7);
    }

    #[test]
    fn wrong_magic_names_both_values() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &images(2052, 1, &[0; 4]));
        let l = write(dir.path(), "l", &labels(2049, &[0]));
        let err = load_mnist_idx(&i, &l).unwrap_err();
        match &err {
            Error::Magic { expected, actual, .. } => assert_eq!((*expected, *actual), (2051, 2052)),
            other => panic!("unexpected {other:?}"),
        }
        let msg = err.to_string();
        assert!(msg.contains("2051") && msg.contains("2052"), "{msg}");
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &images(2051, 2, &[0; 5]));
        let l = write(dir.path(), "l", &labels(2049, &[0, 1]));
        assert!(matches!(load_mnist_idx(&i, &l), Err(Error::Truncated { .. })));
        let i = write(dir.path(), "i2", &images(2051, 2, &[0; 8]));
        let l = write(dir.path(), "l2", &labels(2049, &[0, 1, 2]));
        assert!(matches!(load_mnist_idx(&i, &l), Err(Error::CountMismatch { images: 2, labels: 3 })));
    }
}
