//! The transmitter loss: clipped actor term plus weighted auxiliary decoder
//! losses through a straight-through surrogate of the channel.

use ndarray::{s, Array2};

use super::rollout::{ChannelDraws, Link, TransitionBatch};
use super::{clipped_objective, encoder_backward, encoder_forward, EncoderPass, DEFAULT_CLIP_EPS};
use crate::error::{Error, Result};
use crate::net::{dense, GradVector, ParamVector};
use crate::par::Exec;
use crate::receiver;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxMode {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    /// PPO clipped surrogate.
    Clipped,
    /// Plain ratio-weighted advantage.
    Unclipped,
}

/// Forward rule of the auxiliary path's quantizer. Both use the identity as
/// backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantizer {
    /// Hard sign bits.
    Hard,
    /// `quantize(a_ref) + (a - a_ref)` with `a_ref` the recorded action;
    /// equal to `Hard` at the recorded action and smooth around it.
    FrozenOffset,
}

/// Frozen inputs of one transmitter-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TxContext<'a> {
    pub link: Link<'a>,
    pub batch: &'a TransitionBatch,
    pub eps: f64,
    pub aux: AuxMode,
    pub quantizer: Quantizer,
}

impl<'a> TxContext<'a> {
    pub fn new(link: Link<'a>, batch: &'a TransitionBatch) -> Self {
        TxContext {
            link,
            batch,
            eps: DEFAULT_CLIP_EPS,
            aux: AuxMode::On,
            quantizer: Quantizer::Hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxLoss {
    pub total: f64,
    pub actor: f64,
    /// Unweighted auxiliary loss per receiver (zeros when aux is off).
    pub aux: Vec<f64>,
    pub grad_theta: GradVector,
    pub grad_w: Vec<f64>,
    pub mean_ratio: f64,
}

struct Part {
    actor: f64,
    aux: Vec<f64>,
    grad_theta: Vec<f64>,
    grad_w: Vec<f64>,
    ratio_sum: f64,
}

fn symbols(actions: &Array2<f64>, reference: ndarray::ArrayView2<'_, f64>, q: Quantizer) -> Array2<f64> {
    let bit = |a: f64| if a >= 0.0 { 1.0 } else { -1.0 };
    match q {
        Quantizer::Hard => actions.mapv(bit),
        Quantizer::FrozenOffset => {
            let mut out = actions.clone();
            out.zip_mut_with(&reference, |a, &r| *a = bit(r) + 2.0 * (*a - r));
            out
        }
    }
}

fn part(ctx: &TxContext<'_>, theta: &ParamVector, w: &[f64], clip: ClipMode, r: std::ops::Range<usize>) -> Result<Part> {
    let b = ctx.batch;
    let rows = b.len() as f64;
    let enc = ctx.link.encoder;
    let pass: EncoderPass = encoder_forward(enc, theta, b.images.slice(s![r.clone(), ..]).to_owned())?;
    let mean = pass.means();
    let log_std = pass.log_stds();
    let bits = enc.bits();
    let m = r.len();
    let mut d_mean = Array2::<f64>::zeros((m, bits));
    let mut d_log_std = Array2::<f64>::zeros((m, bits));
    let mut grad_w = vec![0.0; w.len()];
    let mut actor = 0.0;
    let mut ratio_sum = 0.0;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();

    for (i, t) in r.clone().enumerate() {
        let mut logp = 0.0;
        for j in 0..bits {
            let z = (b.actions[[t, j]] - mean[[i, j]]) / log_std[[i, j]].exp();
            logp += -0.5 * z * z - log_std[[i, j]] - half_log_2pi;
        }
        let ratio = (logp - b.log_prob_old[t]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                what: "policy ratio".into(),
                step: t,
            });
        }
        ratio_sum += ratio;
        let metrics = b.metrics.row(t);
        let adv = super::reward(w, metrics.as_slice().expect("row")) - b.values[t];
        let (obj, coef) = match clip {
            ClipMode::Clipped => clipped_objective(ratio, adv, ctx.eps),
            ClipMode::Unclipped => (ratio * adv, ratio),
        };
        actor -= obj / rows;
        for (g, th) in grad_w.iter_mut().zip(metrics) {
            *g -= coef * th / rows;
        }
        // Only the unclipped branch depends on θ.
        if coef == ratio {
            let d_logp = -adv * ratio / rows;
            for j in 0..bits {
                let sd = log_std[[i, j]].exp();
                let z = (b.actions[[t, j]] - mean[[i, j]]) / sd;
                d_mean[[i, j]] += d_logp * z / sd;
                d_log_std[[i, j]] += d_logp * (z * z - 1.0);
            }
        }
    }

    let mut aux = vec![0.0; w.len()];
    if ctx.aux == AuxMode::On {
        let noise = b.noise.slice(s![r.clone(), ..]);
        let mut actions = mean.to_owned();
        ndarray::Zip::from(&mut actions)
            .and(log_std)
            .and(noise)
            .for_each(|a, &ls, &z| *a += ls.exp() * z);
        let sym = symbols(&actions, b.actions.slice(s![r.clone(), ..]), ctx.quantizer);
        let mut d_action = Array2::<f64>::zeros((m, bits));
        let images = b.images.slice(s![r.clone(), ..]);
        let labels = &b.labels[r.clone()];
        for (n, (spec, phi)) in ctx.link.receivers.iter().zip(ctx.link.decoders).enumerate() {
            let ChannelDraws { gains, noise } = &b.draws[n];
            let g = gains.slice(s![r.clone(), ..]);
            let mut y = sym.clone();
            ndarray::Zip::from(&mut y)
                .and(g)
                .and(noise.slice(s![r.clone(), ..]))
                .for_each(|y, &g, &e| *y = g * *y + e);
            let out = dense::forward_slice(&spec.net, phi.values(), y)?;
            let (loss, up) = receiver::task_loss(spec.task, out.output(), images, labels, b.len())?;
            aux[n] = loss;
            grad_w[n] += loss;
            let (_, dy) = dense::backward_slice(&spec.net, phi.values(), &out, up.view())?;
            ndarray::Zip::from(&mut d_action)
                .and(&dy)
                .and(g)
                .for_each(|d, &dy, &g| *d += w[n] * 2.0 * g * dy);
        }
        d_mean += &d_action;
        ndarray::Zip::from(&mut d_log_std)
            .and(&d_action)
            .and(log_std)
            .and(noise)
            .for_each(|d, &da, &ls, &z| *d += da * ls.exp() * z);
    }

    let grad_theta = encoder_backward(enc, theta, &pass, d_mean.view(), d_log_std.view())?;
    Ok(Part {
        actor,
        aux,
        grad_theta,
        grad_w,
        ratio_sum,
    })
}

/// `L_TX(θ; w) = actor(θ; w) + Σ_n w_n L_RX_n(θ)` on a recorded batch, with
/// gradients w.r.t. `θ` and `w`. Advantages and metrics are constants.
pub fn tx_loss(ctx: &TxContext<'_>, theta: &ParamVector, w: &[f64], clip: ClipMode, exec: &Exec) -> Result<TxLoss> {
    ctx.link.check()?;
    ctx.link.encoder.check(theta)?;
    let b = ctx.batch;
    if w.len() != ctx.link.receivers.len() || b.receivers() != w.len() || b.draws.len() != w.len() {
        return Err(Error::dim("task weights", ctx.link.receivers.len(), w.len()));
    }
    if b.log_prob_old.len() != b.len() || b.values.len() != b.len() {
        return Err(Error::InvalidSpec("transition batch is missing recorded quantities".into()));
    }
    let parts = exec.map_chunks(b.len(), |r| part(ctx, theta, w, clip, r));
    let mut actor = 0.0;
    let mut aux = vec![0.0; w.len()];
    let mut grad_w = vec![0.0; w.len()];
    let mut grad = vec![0.0; theta.len()];
    let mut ratio_sum = 0.0;
    for p in parts {
        let p = p?;
        actor += p.actor;
        ratio_sum += p.ratio_sum;
        aux.iter_mut().zip(&p.aux).for_each(|(a, b)| *a += b);
        grad_w.iter_mut().zip(&p.grad_w).for_each(|(a, b)| *a += b);
        grad.iter_mut().zip(&p.grad_theta).for_each(|(a, b)| *a += b);
    }
    let total = actor + super::reward(w, &aux);
    Ok(TxLoss {
        total,
        actor,
        aux,
        grad_theta: GradVector::from_parts(grad, theta.layout().to_vec())?,
        grad_w,
        mean_ratio: ratio_sum / b.len() as f64,
    })
}

/// The actor term alone.
pub fn actor_loss(ctx: &TxContext<'_>, theta: &ParamVector, w: &[f64], clip: ClipMode, exec: &Exec) -> Result<TxLoss> {
    let ctx = TxContext { aux: AuxMode::Off, ..*ctx };
    tx_loss(&ctx, theta, w, clip, exec)
}
