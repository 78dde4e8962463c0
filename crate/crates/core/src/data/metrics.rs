//! Task losses and per-sample quality metrics.

use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use super::{Sample, TaskKind};
use crate::error::{Error, Result};

/// PSNR reported for (numerically) identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
const PROB_FLOOR: f64 = 1e-12;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim("loss operands", a.len(), b.len()));
    }
    Ok(())
}

/// Mean over pixels, then over the batch, of the squared error.
pub fn mse_loss(m: ArrayView2<'_, f64>, m_hat: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(m, m_hat)?;
    let sum: f64 = m.iter().zip(m_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / m.len() as f64)
}

/// d mse_loss / d m_hat.
pub fn mse_loss_grad(m: ArrayView2<'_, f64>, m_hat: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    same_shape(m, m_hat)?;
    let scale = 2.0 / m.len() as f64;
    Ok((&m_hat - &m) * scale)
}

fn check_distributions(q: ArrayView2<'_, f64>) -> Result<()> {
    for row in q.rows() {
        let sum = row.sum();
        if !((sum - 1.0).abs() <= 1e-6) {
            return Err(Error::NotADistribution { sum });
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy against one-hot targets given as class indices.
pub fn ce_loss(labels: &[usize], q: ArrayView2<'_, f64>) -> Result<f64> {
    if labels.len() != q.nrows() {
        return Err(Error::dim("ce_loss batch", q.nrows(), labels.len()));
    }
    check_distributions(q)?;
    let mut total = 0.0;
    for (row, &label) in q.rows().into_iter().zip(labels) {
        let p = *row.get(label).ok_or_else(|| Error::dim("class index", q.ncols(), label + 1))?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// d ce_loss / d q. Zero below the clamp floor.
pub fn ce_loss_grad(labels: &[usize], q: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if labels.len() != q.nrows() {
        return Err(Error::dim("ce_loss batch", q.nrows(), labels.len()));
    }
    let t = labels.len() as f64;
    let mut g = Array2::zeros(q.dim());
    for (i, &label) in labels.iter().enumerate() {
        let p = q[[i, label]];
        if p > PROB_FLOOR {
            g[[i, label]] = -1.0 / (t * p);
        }
    }
    Ok(g)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("image pair", a.len(), b.len()));
    }
    Ok(())
}

/// `10 log10(max^2 / MSE)`, capped at [`PSNR_CAP_DB`] when MSE < 1e-12.
pub fn psnr(m: &[f64], m_hat: &[f64], max_val: f64) -> Result<f64> {
    same_len(m, m_hat)?;
    let mse = m.iter().zip(m_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m.len() as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// SSIM over one global window, dynamic range 1, unit exponents, clamped to
/// `[0, 1]`.
pub fn ssim(m: &[f64], m_hat: &[f64]) -> Result<f64> {
    same_len(m, m_hat)?;
    let n = m.len() as f64;
    let mx = m.iter().sum::<f64>() / n;
    let my = m_hat.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in m.iter().zip(m_hat) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
    Ok((num / den).clamp(0.0, 1.0))
}

/// How a classification receiver scores one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassReward {
    /// Probability assigned to the true class.
    #[default]
    Probability,
    /// 1 if the arg-max is the true class, else 0.
    Indicator,
}

impl FromStr for ClassReward {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probability" | "prob" => Ok(ClassReward::Probability),
            "indicator" | "accuracy" => Ok(ClassReward::Indicator),
            other => Err(Error::Config(format!("unknown classification reward `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClassReward {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassReward::Probability => "probability",
            ClassReward::Indicator => "indicator",
        })
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Per-sample task score in `[0, 1]`: SSIM for reconstruction, true-class
/// probability (or indicator) for classification.
pub fn task_metric(kind: TaskKind, sample: Sample<'_>, output: &[f64], reward: ClassReward) -> Result<f64> {
    match kind {
        TaskKind::Reconstruction => ssim(sample.image, output),
        TaskKind::Classification => {
            let p = *output
                .get(sample.label)
                .ok_or_else(|| Error::dim("classifier output", sample.label + 1, output.len()))?;
            Ok(match reward {
                ClassReward::Probability => p.clamp(0.0, 1.0),
                ClassReward::Indicator => f64::from(argmax(output) == sample.label),
            })
        }
    }
}
