//! Policy rollouts through the broadcast link.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{critic_values, encoder_forward, gaussian_log_prob, EncoderSpec};
use crate::channel::{ChannelConfig, ChannelDraw};
use crate::data::ClassReward;
use crate::error::{Error, Result};
use crate::net::{dense, NetworkSpec, ParamVector};
use crate::par::{self, Exec};
use crate::receiver::{self, ReceiverSpec};

/// Encoder spec, receivers and their (frozen) decoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct Link<'a> {
    pub encoder: &'a EncoderSpec,
    pub receivers: &'a [ReceiverSpec],
    pub decoders: &'a [ParamVector],
}

impl Link<'_> {
    pub fn check(&self) -> Result<()> {
        if self.receivers.len() != self.decoders.len() {
            return Err(Error::dim("decoder parameter sets", self.receivers.len(), self.decoders.len()));
        }
        for (spec, phi) in self.receivers.iter().zip(self.decoders) {
            phi.check(&spec.net)?;
            if spec.net.input_dim() != self.encoder.bits() {
                return Err(Error::dim("decoder input", self.encoder.bits(), spec.net.input_dim()));
            }
        }
        Ok(())
    }
}

/// How the transmitted latent is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy.
    Sample,
    /// Transmit the policy mean.
    Mean,
}

/// Per-sample fading gains and noise of one receiver's channel, `T x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraws {
    pub gains: Array2<f64>,
    pub noise: Array2<f64>,
}

/// Everything recorded while rolling out the old policy on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub noise: Array2<f64>,
    pub log_prob_old: Vec<f64>,
    pub draws: Vec<ChannelDraws>,
    /// `T x N` task metrics of the decoded outputs.
    pub metrics: Array2<f64>,
    /// Batch-mean supervised loss per receiver.
    pub decoder_loss: Vec<f64>,
    pub values: Vec<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn receivers(&self) -> usize {
        self.metrics.ncols()
    }

    pub fn rewards(&self, weights: &[f64]) -> Vec<f64> {
        self.metrics.rows().into_iter().map(|m| super::reward(weights, m.as_slice().expect("row"))).collect()
    }
}

/// Random stream for sample `t`: slot 0 is the policy noise, slot `n + 1`
/// the channel of receiver `n`.
fn sample_stream(seed: u64, tag: &[u64], t: usize, slot: u64) -> rand_chacha::ChaCha8Rng {
    let mut tags = tag.to_vec();
    tags.push(t as u64);
    tags.push(slot);
    par::stream(seed, &tags)
}

fn draw_noise(seed: u64, tag: &[u64], rows: std::ops::Range<usize>, bits: usize) -> Array2<f64> {
    let mut xi = Array2::zeros((rows.len(), bits));
    for (i, t) in rows.enumerate() {
        let mut rng = sample_stream(seed, tag, t, 0);
        for v in xi.row_mut(i) {
            *v = rng.sample(StandardNormal);
        }
    }
    xi
}

fn draw_channel(cfg: &ChannelConfig, slot: u64, seed: u64, tag: &[u64], rows: std::ops::Range<usize>, bits: usize) -> ChannelDraws {
    let mut gains = Array2::zeros((rows.len(), bits));
    let mut noise = Array2::zeros((rows.len(), bits));
    for (i, t) in rows.enumerate() {
        let d = ChannelDraw::sample(bits, cfg, &mut sample_stream(seed, tag, t, slot));
        gains.row_mut(i).assign(&ndarray::ArrayView1::from(&d.gains));
        noise.row_mut(i).assign(&ndarray::ArrayView1::from(&d.noise));
    }
    ChannelDraws { gains, noise }
}

/// `g ⊙ (2·quantize(a) - 1) + n`.
pub(crate) fn hard_received(actions: ArrayView2<'_, f64>, draws: &ChannelDraws) -> Array2<f64> {
    let mut y = actions.mapv(|a| if a >= 0.0 { 1.0 } else { -1.0 });
    ndarray::Zip::from(&mut y)
        .and(&draws.gains)
        .and(&draws.noise)
        .for_each(|y, &g, &n| *y = g * *y + n);
    y
}

fn actions_of(mean: ArrayView2<'_, f64>, log_std: ArrayView2<'_, f64>, xi: &Array2<f64>) -> Array2<f64> {
    let mut a = mean.to_owned();
    ndarray::Zip::from(&mut a)
        .and(log_std)
        .and(xi)
        .for_each(|a, &s, &z| *a += s.exp() * z);
    a
}

/// Received signals at receiver `n` for a batch of images, with hard bits.
#[allow(clippy::too_many_arguments)]
pub fn received_batch(
    encoder: &EncoderSpec,
    theta: &ParamVector,
    channel: &ChannelConfig,
    receiver: usize,
    images: ArrayView2<'_, f64>,
    mode: ActionMode,
    seed: u64,
    tag: &[u64],
    exec: &Exec,
) -> Result<Array2<f64>> {
    let mut out = broadcast_impl(encoder, theta, &[(receiver, *channel)], images, mode, seed, tag, exec)?;
    Ok(out.pop().expect("one receiver"))
}

/// One transmission of a batch heard by every receiver: the same bits go
/// through each receiver's own channel.
#[allow(clippy::too_many_arguments)]
pub fn broadcast_batch(
    encoder: &EncoderSpec,
    theta: &ParamVector,
    channels: &[ChannelConfig],
    images: ArrayView2<'_, f64>,
    mode: ActionMode,
    seed: u64,
    tag: &[u64],
    exec: &Exec,
) -> Result<Vec<Array2<f64>>> {
    let list: Vec<(usize, ChannelConfig)> = channels.iter().copied().enumerate().collect();
    broadcast_impl(encoder, theta, &list, images, mode, seed, tag, exec)
}

#[allow(clippy::too_many_arguments)]
fn broadcast_impl(
    encoder: &EncoderSpec,
    theta: &ParamVector,
    channels: &[(usize, ChannelConfig)],
    images: ArrayView2<'_, f64>,
    mode: ActionMode,
    seed: u64,
    tag: &[u64],
    exec: &Exec,
) -> Result<Vec<Array2<f64>>> {
    let bits = encoder.bits();
    let parts = exec.map_chunks(images.nrows(), |r| -> Result<Vec<Array2<f64>>> {
        let pass = encoder_forward(encoder, theta, images.slice(s![r.clone(), ..]).to_owned())?;
        let actions = match mode {
            ActionMode::Mean => pass.means().to_owned(),
            ActionMode::Sample => actions_of(pass.means(), pass.log_stds(), &draw_noise(seed, tag, r.clone(), bits)),
        };
        Ok(channels
            .iter()
            .map(|(n, cfg)| hard_received(actions.view(), &draw_channel(cfg, *n as u64 + 1, seed, tag, r.clone(), bits)))
            .collect())
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..channels.len())
        .map(|k| {
            let views: Vec<_> = parts.iter().map(|p| p[k].view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("same width")
        })
        .collect())
}

struct Chunk {
    states: Array2<f64>,
    actions: Array2<f64>,
    noise: Array2<f64>,
    log_prob: Vec<f64>,
    draws: Vec<ChannelDraws>,
    metrics: Array2<f64>,
    loss: Vec<f64>,
}

/// Rolls out the policy `theta_old` on one batch and records everything the
/// encoder losses need.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    link: Link<'_>,
    theta_old: &ParamVector,
    critic: (&NetworkSpec, &ParamVector),
    images: Array2<f64>,
    labels: Vec<usize>,
    class_reward: ClassReward,
    seed: u64,
    tag: &[u64],
    exec: &Exec,
) -> Result<TransitionBatch> {
    link.check()?;
    let rows = images.nrows();
    if labels.len() != rows {
        return Err(Error::dim("batch labels", rows, labels.len()));
    }
    let bits = link.encoder.bits();
    let n = link.receivers.len();
    let parts = exec.map_chunks(rows, |r| -> Result<Chunk> {
        let imgs = images.slice(s![r.clone(), ..]);
        let pass = encoder_forward(link.encoder, theta_old, imgs.to_owned())?;
        let noise = draw_noise(seed, tag, r.clone(), bits);
        let actions = actions_of(pass.means(), pass.log_stds(), &noise);
        let log_prob = (0..r.len())
            .map(|i| {
                gaussian_log_prob(
                    actions.row(i).as_slice().expect("row"),
                    pass.means().row(i).to_slice().expect("row"),
                    pass.log_stds().row(i).to_slice().expect("row"),
                )
            })
            .collect();
        let mut metrics = Array2::zeros((r.len(), n));
        let mut draws = Vec::with_capacity(n);
        let mut loss = Vec::with_capacity(n);
        for (k, (spec, phi)) in link.receivers.iter().zip(link.decoders).enumerate() {
            let d = draw_channel(&spec.channel, k as u64 + 1, seed, tag, r.clone(), bits);
            let y = hard_received(actions.view(), &d);
            let out = dense::forward_slice(&spec.net, phi.values(), y)?;
            let lab = &labels[r.clone()];
            let (l, _) = receiver::task_loss(spec.task, out.output(), imgs, lab, rows)?;
            let m = receiver::task_metrics(spec.task, out.output(), imgs, lab, class_reward)?;
            metrics.column_mut(k).assign(&ndarray::ArrayView1::from(&m));
            draws.push(d);
            loss.push(l);
        }
        Ok(Chunk {
            states: pass.states().to_owned(),
            actions,
            noise,
            log_prob,
            draws,
            metrics,
            loss,
        })
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let cat = |f: &dyn Fn(&Chunk) -> ArrayView2<'_, f64>| {
        let views: Vec<_> = parts.iter().map(f).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("same width")
    };
    let states = cat(&|c| c.states.view());
    let draws = (0..n)
        .map(|k| ChannelDraws {
            gains: cat(&|c| c.draws[k].gains.view()),
            noise: cat(&|c| c.draws[k].noise.view()),
        })
        .collect();
    let mut decoder_loss = vec![0.0; n];
    for p in &parts {
        decoder_loss.iter_mut().zip(&p.loss).for_each(|(a, b)| *a += b);
    }
    let values = critic_values(critic.0, critic.1, states.view(), exec)?;
    Ok(TransitionBatch {
        actions: cat(&|c| c.actions.view()),
        noise: cat(&|c| c.noise.view()),
        metrics: cat(&|c| c.metrics.view()),
        log_prob_old: parts.iter().flat_map(|c| c.log_prob.iter().copied()).collect(),
        images,
        labels,
        states,
        draws,
        decoder_loss,
        values,
    })
}
