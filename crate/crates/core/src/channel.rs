//! Binary quantization, BPSK mapping, and fading-channel simulation.
//!
//! Symbols are real-valued BPSK (`0 -> -1`, `1 -> +1`, unit power). SNR is
//! measured against that unit power, so the per-symbol noise variance is
//! `10^(-snr_db / 10)`. Fading is drawn independently per symbol.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Rician,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Rician => "rician",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            "rician" | "rice" => Ok(ChannelKind::Rician),
            other => Err(Error::Config(format!("unknown channel kind `{other}`"))),
        }
    }
}

pub const DEFAULT_RICIAN_K: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// SNR in dB; `+inf` means a noiseless link.
    pub snr_db: f64,
    /// Linear K-factor, only used by [`ChannelKind::Rician`].
    pub rician_k: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, snr_db: f64) -> Result<Self> {
        let cfg = ChannelConfig {
            kind,
            snr_db,
            rician_k: DEFAULT_RICIAN_K,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        if self.kind == ChannelKind::Rician && !(self.rician_k > 0.0 && self.rician_k.is_finite()) {
            return Err(Error::Config(format!("rician K must be > 0, got {}", self.rician_k)));
        }
        Ok(())
    }

    pub fn sigma2(&self) -> f64 {
        snr_to_sigma2(self.snr_db)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector(pub Vec<u8>);

impl BitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal(pub Vec<f64>);

/// Channel bandwidth ratio `B / (8 C H W)`.
pub fn compute_cbr(bits: u64, channels: u64, height: u64, width: u64) -> f64 {
    bits as f64 / (8 * channels * height * width) as f64
}

/// Sign threshold at zero; ties map to 1.
pub fn quantize(x: &[f64]) -> BitVector {
    BitVector(x.iter().map(|&v| u8::from(v >= 0.0)).collect())
}

pub fn modulate(bits: &BitVector) -> Vec<f64> {
    bits.0.iter().map(|&b| if b == 0 { -1.0 } else { 1.0 }).collect()
}

/// Hard decision on received symbols.
pub fn demap(symbols: &[f64]) -> BitVector {
    quantize(symbols)
}

pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One realization of the per-symbol fading amplitudes and additive noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub gains: Vec<f64>,
    pub noise: Vec<f64>,
}

impl ChannelDraw {
    /// Draws `len` gains, then `len` noise samples.
    pub fn sample<R: Rng + ?Sized>(len: usize, cfg: &ChannelConfig, rng: &mut R) -> Self {
        let gains = match cfg.kind {
            ChannelKind::Awgn => vec![1.0; len],
            ChannelKind::Rayleigh => (0..len)
                .map(|_| {
                    let (re, im) = complex_normal_parts(rng);
                    re.hypot(im)
                })
                .collect(),
            ChannelKind::Rician => {
                let los = (cfg.rician_k / (cfg.rician_k + 1.0)).sqrt();
                let scatter = (1.0 / (cfg.rician_k + 1.0)).sqrt();
                (0..len)
                    .map(|_| {
                        let (re, im) = complex_normal_parts(rng);
                        (los + scatter * re).hypot(scatter * im)
                    })
                    .collect()
            }
        };
        let sigma = cfg.sigma2().sqrt();
        let noise = (0..len)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            })
            .collect();
        ChannelDraw { gains, noise }
    }

    /// `y = gain * s + noise`.
    pub fn apply(&self, symbols: &[f64]) -> ReceivedSignal {
        ReceivedSignal(
            symbols
                .iter()
                .zip(&self.gains)
                .zip(&self.noise)
                .map(|((s, g), n)| g * s + n)
                .collect(),
        )
    }
}

/// Unit-power circular complex Gaussian as (re, im).
fn complex_normal_parts<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Passes symbols through the configured channel.
pub fn transmit<R: Rng + ?Sized>(symbols: &[f64], cfg: &ChannelConfig, rng: &mut R) -> ReceivedSignal {
    ChannelDraw::sample(symbols.len(), cfg, rng).apply(symbols)
}
