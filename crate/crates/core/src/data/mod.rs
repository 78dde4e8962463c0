//! Datasets, task losses, and quality metrics.

mod idx;
mod metrics;
mod synth;

pub use idx::{load_mnist_idx, read_idx_header};
pub use metrics::{
    ce_loss, ce_loss_grad, mse_loss, mse_loss_grad, psnr, ssim, task_metric, ClassReward, PSNR_CAP_DB,
};
pub use synth::{synth_dataset, synth_dataset_with_noise, synth_prototypes, SYNTH_NOISE};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Reconstruction,
    Classification,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Reconstruction => "reconstruction",
            TaskKind::Classification => "classification",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reconstruction" | "rec" => Ok(TaskKind::Reconstruction),
            "classification" | "cls" => Ok(TaskKind::Classification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub image: &'a [f64],
    pub label: usize,
}

/// Immutable image/label collection; pixels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<f64>,
    labels: Vec<u8>,
    classes: usize,
    dims: (usize, usize, usize),
    split: Split,
}

impl Dataset {
    pub fn new(
        pixels: Vec<f64>,
        labels: Vec<u8>,
        classes: usize,
        dims: (usize, usize, usize),
        split: Split,
    ) -> Result<Self> {
        let dim = dims.0 * dims.1 * dims.2;
        if labels.is_empty() || dim == 0 {
            return Err(Error::Config("dataset must be nonempty".into()));
        }
        if pixels.len() != labels.len() * dim {
            return Err(Error::dim("dataset pixels", labels.len() * dim, pixels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("pixel outside [0, 1]".into()));
        }
        Ok(Dataset {
            pixels,
            labels,
            classes,
            dims,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// (channels, height, width)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn image_dim(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            image: self.image(i),
            label: self.label(i),
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.image_dim()].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            dims: self.dims,
            split: self.split,
        }
    }

    /// Stacks the given samples into a `(len, image_dim)` matrix.
    pub fn batch(&self, indices: &[usize]) -> Array2<f64> {
        let d = self.image_dim();
        let mut out = Array2::zeros((indices.len(), d));
        for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
            row.as_slice_mut().expect("contiguous").copy_from_slice(self.image(i));
        }
        out
    }

    /// Like [`batch`](Self::batch), mirroring each square image left-right
    /// with probability 1/2.
    pub fn batch_flipped<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Array2<f64> {
        let mut out = self.batch(indices);
        let (c, h, w) = self.dims;
        if h != w {
            return out;
        }
        for mut row in out.rows_mut() {
            if rng.random_bool(0.5) {
                let px = row.as_slice_mut().expect("contiguous");
                for plane in px.chunks_mut(h * w).take(c) {
                    for line in plane.chunks_mut(w) {
                        line.reverse();
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par;

    #[test]
    fn rejects_out_of_range_pixels_and_labels() {
        assert!(Dataset::new(vec![1.5], vec![0], 2, (1, 1, 1), Split::Train).is_err());
        assert!(Dataset::new(vec![0.5], vec![3], 2, (1, 1, 1), Split::Train).is_err());
        assert!(Dataset::new(vec![], vec![], 2, (1, 1, 1), Split::Train).is_err());
    }

    #[test]
    fn flip_mirrors_rows() {
        let ds = Dataset::new(vec![0.0, 1.0, 0.2, 0.3], vec![0], 1, (1, 2, 2), Split::Train).unwrap();
        let mut rng = par::stream(0, &[]);
        let mut seen_flip = false;
        for _ in 0..20 {
            let b = ds.batch_flipped(&[0], &mut rng);
            let v = b.row(0).to_vec();
            if v != ds.image(0) {
                assert_eq!(v, vec![1.0, 0.0, 0.3, 0.2]);
                seen_flip = true;
            }
        }
        assert!(seen_flip);
    }
}
