//! Trace and evaluation CSV schemas.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::TaskKind;
use crate::error::Result;

/// One row per update cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub iter: usize,
    pub reward: f64,
    pub w: Vec<f64>,
    pub loss: Vec<f64>,
    pub metric: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub psi: f64,
    pub g_tilde: f64,
    pub g_dot_d: f64,
    pub fallback: bool,
}

impl TraceRecord {
    pub fn is_finite(&self) -> bool {
        [self.reward, self.lambda, self.rho, self.psi, self.g_tilde, self.g_dot_d]
            .iter()
            .chain(&self.w)
            .chain(&self.loss)
            .chain(&self.metric)
            .all(|v| v.is_finite())
    }

    pub fn to_csv_row(&self) -> String {
        let mut f: Vec<String> = vec![self.epoch.to_string(), self.iter.to_string(), self.reward.to_string()];
        f.extend(self.w.iter().map(|v| v.to_string()));
        f.extend(self.loss.iter().map(|v| v.to_string()));
        f.extend(self.metric.iter().map(|v| v.to_string()));
        for v in [self.lambda, self.rho, self.psi, self.g_tilde, self.g_dot_d] {
            f.push(v.to_string());
        }
        f.push(if self.fallback { "1" } else { "0" }.into());
        f.join(",")
    }
}

/// `epoch,iter,reward,w_1..w_N,loss_1..loss_N,metric_1..metric_N,lambda,rho,psi,g_tilde,g_dot_d,fallback`
pub fn trace_header(n: usize) -> String {
    let mut h: Vec<String> = vec!["epoch".into(), "iter".into(), "reward".into()];
    for prefix in ["w", "loss", "metric"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["lambda", "rho", "psi", "g_tilde", "g_dot_d", "fallback"].map(String::from));
    h.join(",")
}

/// Append-only trace file; each row goes out in a single write.
#[derive(Debug)]
pub struct TraceWriter {
    file: File,
}

impl TraceWriter {
    pub fn create(path: &Path, receivers: usize) -> Result<Self> {
        let mut file = File::create(path)?;
        file.write_all(format!("{}\n", trace_header(receivers)).as_bytes())?;
        file.flush()?;
        Ok(TraceWriter { file })
    }

    pub fn append(&mut self, r: &TraceRecord) -> Result<()> {
        self.file.write_all(format!("{}\n", r.to_csv_row()).as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// One (SNR, receiver) cell of an evaluation sweep. Metrics that do not
/// apply to the receiver's task are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub snr_db: f64,
    pub receiver: usize,
    pub task: TaskKind,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn eval_header() -> &'static str {
    "snr_db,receiver,task,ssim,psnr,accuracy"
}

impl EvalRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let snr = if self.snr_db == f64::INFINITY {
            "inf".to_string()
        } else {
            self.snr_db.to_string()
        };
        format!(
            "{snr},{},{},{},{},{}",
            self.receiver,
            self.task,
            opt(self.ssim),
            opt(self.psnr),
            opt(self.accuracy)
        )
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut text = format!("{}\n", eval_header());
    for r in rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trace_header(2),
            "epoch,iter,reward,w_1,w_2,loss_1,loss_2,metric_1,metric_2,lambda,rho,psi,g_tilde,g_dot_d,fallback"
        );
    }

    #[test]
    fn row_has_header_width() {
        let r = TraceRecord {
            epoch: 1,
            iter: 2,
            reward: 0.5,
            w: vec![0.25, 0.75],
            loss: vec![0.1, 2.0],
            metric: vec![0.3, 0.9],
            lambda: 0.0,
            rho: 1e-3,
            psi: 4.0,
            g_tilde: 0.01,
            g_dot_d: -1e-3,
            fallback: false,
        };
        assert_eq!(r.to_csv_row().split(',').count(), trace_header(2).split(',').count());
    }

    #[test]
    fn eval_row_blanks_inapplicable_metrics() {
        let r = EvalRow {
            snr_db: f64::INFINITY,
            receiver: 2,
            task: TaskKind::Classification,
            ssim: None,
            psnr: None,
            accuracy: Some(0.5),
        };
        assert_eq!(r.to_csv_row(), "inf,2,classification,,,0.5");
    }
}
