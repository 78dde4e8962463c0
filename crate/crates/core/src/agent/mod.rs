//! The shared stochastic encoder as a one-step PPO agent.
//!
//! Encoder parameters `θ` are the concatenation of a trunk (image to semantic
//! state), a mean head and a log-std head. The policy is a diagonal Gaussian
//! over the pre-quantization latent `a`; the bits on the air are
//! `quantize(a)`.

mod rollout;
mod tx;

pub use rollout::{
    broadcast_batch, received_batch, rollout, ActionMode, ChannelDraws, Link, TransitionBatch,
};
pub use tx::{actor_loss, tx_loss, AuxMode, ClipMode, Quantizer, TxContext, TxLoss};

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::{self, dense, glorot_init, Activation, Activations, GradVector, LayerShape, NetworkSpec, ParamVector};
use crate::par::{self, Exec};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_CLIP_EPS: f64 = 0.2;

/// Output of the encoder trunk for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticState(pub Vec<f64>);

/// One draw from the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub noise: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub trunk: NetworkSpec,
    pub mean: NetworkSpec,
    pub log_std: NetworkSpec,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl EncoderSpec {
    pub fn new(trunk: NetworkSpec, mean: NetworkSpec, log_std: NetworkSpec) -> Result<Self> {
        let latent = trunk.output_dim();
        for (name, head) in [("mean head", &mean), ("log-std head", &log_std)] {
            if head.input_dim() != latent {
                return Err(Error::dim(name, latent, head.input_dim()));
            }
        }
        if mean.output_dim() != log_std.output_dim() {
            return Err(Error::dim("log-std head output", mean.output_dim(), log_std.output_dim()));
        }
        Ok(EncoderSpec {
            trunk,
            mean,
            log_std,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        })
    }

    /// `image -> hidden (relu) -> latent (linear)` with linear `latent -> bits`
    /// heads.
    pub fn dense(image_dim: usize, hidden: usize, latent: usize, bits: usize) -> Result<Self> {
        let trunk = NetworkSpec::mlp(&[image_dim, hidden, latent], Activation::Relu, Activation::Linear)?;
        let head = NetworkSpec::mlp(&[latent, bits], Activation::Linear, Activation::Linear)?;
        Self::new(trunk, head.clone(), head)
    }

    pub fn with_log_std_bounds(mut self, min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidSpec(format!("log-std bounds [{min}, {max}] are not an interval")));
        }
        self.log_std_min = min;
        self.log_std_max = max;
        Ok(self)
    }

    pub fn image_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn bits(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.mean.param_count() + self.log_std.param_count()
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let mut l = self.trunk.layout();
        l.extend(self.mean.layout());
        l.extend(self.log_std.layout());
        l
    }

    /// Glorot weights; every log-std bias set to `log_std_bias`.
    pub fn init(&self, seed: u64, log_std_bias: f64) -> ParamVector {
        let trunk = glorot_init(&self.trunk, par::derive_seed(seed, &[1]));
        let mean = glorot_init(&self.mean, par::derive_seed(seed, &[2]));
        let mut log_std = glorot_init(&self.log_std, par::derive_seed(seed, &[3]));
        let n = log_std.len();
        let bits = self.bits();
        log_std.values_mut()[n - bits..].iter_mut().for_each(|b| *b = log_std_bias);
        ParamVector::concat(&[&trunk, &mean, &log_std])
    }

    pub fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.layout() != self.layout().as_slice() {
            return Err(Error::Layout(format!(
                "encoder needs {} values, got {}",
                self.param_count(),
                theta.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn split<'a>(&self, values: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (trunk, rest) = values.split_at(self.trunk.param_count());
        let (mean, log_std) = rest.split_at(self.mean.param_count());
        (trunk, mean, log_std)
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.log_std_min, self.log_std_max)
    }
}

/// Cached forward pass of the encoder over a batch.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    trunk: Activations,
    mean: Activations,
    log_std: Activations,
    clamped: Array2<f64>,
}

impl EncoderPass {
    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.trunk.output()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.mean.output()
    }

    /// Clamped log-std.
    pub fn log_stds(&self) -> ArrayView2<'_, f64> {
        self.clamped.view()
    }
}

pub(crate) fn encoder_forward(spec: &EncoderSpec, theta: &ParamVector, images: Array2<f64>) -> Result<EncoderPass> {
    spec.check(theta)?;
    let (pt, pm, ps) = spec.split(theta.values());
    let trunk = dense::forward_slice(&spec.trunk, pt, images)?;
    let state = trunk.output().to_owned();
    let mean = dense::forward_slice(&spec.mean, pm, state.clone())?;
    let log_std = dense::forward_slice(&spec.log_std, ps, state)?;
    let clamped = log_std.output().mapv(|v| spec.clamp(v));
    Ok(EncoderPass {
        trunk,
        mean,
        log_std,
        clamped,
    })
}

/// Gradient w.r.t. `θ` given upstream gradients on the mean and on the
/// clamped log-std. Entries pinned by the clamp pass no gradient.
pub(crate) fn encoder_backward(
    spec: &EncoderSpec,
    theta: &ParamVector,
    pass: &EncoderPass,
    d_mean: ArrayView2<'_, f64>,
    d_log_std: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    let (pt, pm, ps) = spec.split(theta.values());
    let mut d_raw = d_log_std.to_owned();
    d_raw.zip_mut_with(&pass.log_std.output(), |g, &raw| {
        if raw < spec.log_std_min || raw > spec.log_std_max {
            *g = 0.0;
        }
    });
    let (gm, dsm) = dense::backward_slice(&spec.mean, pm, &pass.mean, d_mean)?;
    let (gs, dss) = dense::backward_slice(&spec.log_std, ps, &pass.log_std, d_raw.view())?;
    let d_state = dsm + dss;
    let gt = dense::param_grad_slice(&spec.trunk, pt, &pass.trunk, d_state.view())?;
    let mut out = gt;
    out.extend(gm);
    out.extend(gs);
    Ok(out)
}

/// Deterministic trunk forward pass.
pub fn encode(image: &[f64], spec: &EncoderSpec, theta: &ParamVector) -> Result<SemanticState> {
    spec.check(theta)?;
    let (pt, _, _) = spec.split(theta.values());
    let x = Array2::from_shape_vec((1, image.len()), image.to_vec()).expect("row vector");
    let acts = dense::forward_slice(&spec.trunk, pt, x)?;
    Ok(SemanticState(acts.output().row(0).to_vec()))
}

/// Policy mean and clamped log-std for one state.
pub fn policy_params(state: &SemanticState, spec: &EncoderSpec, theta: &ParamVector) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.check(theta)?;
    let (_, pm, ps) = spec.split(theta.values());
    let x = Array2::from_shape_vec((1, state.0.len()), state.0.clone()).expect("row vector");
    let mean = dense::forward_slice(&spec.mean, pm, x.clone())?;
    let log_std = dense::forward_slice(&spec.log_std, ps, x)?;
    Ok((
        mean.output().row(0).to_vec(),
        log_std.output().row(0).iter().map(|&v| spec.clamp(v)).collect(),
    ))
}

/// `a = μ(s) + σ(s) ξ` with `ξ ~ N(0, I)` drawn from `rng`.
pub fn sample_action<R: Rng + ?Sized>(
    state: &SemanticState,
    spec: &EncoderSpec,
    theta: &ParamVector,
    rng: &mut R,
) -> Result<PolicySample> {
    let noise: Vec<f64> = (0..spec.bits()).map(|_| rng.sample(StandardNormal)).collect();
    sample_action_with_noise(state, spec, theta, noise)
}

/// As [`sample_action`] with an injected noise draw.
pub fn sample_action_with_noise(
    state: &SemanticState,
    spec: &EncoderSpec,
    theta: &ParamVector,
    noise: Vec<f64>,
) -> Result<PolicySample> {
    if noise.len() != spec.bits() {
        return Err(Error::dim("policy noise", spec.bits(), noise.len()));
    }
    let (mean, log_std) = policy_params(state, spec, theta)?;
    let action: Vec<f64> = mean
        .iter()
        .zip(&log_std)
        .zip(&noise)
        .map(|((m, s), z)| m + s.exp() * z)
        .collect();
    let log_prob = gaussian_log_prob(&action, &mean, &log_std);
    Ok(PolicySample {
        action,
        noise,
        log_prob,
    })
}

/// Diagonal Gaussian log-density.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - half_log_2pi
        })
        .sum()
}

/// `Σ_n w_n Θ_n`.
pub fn reward(weights: &[f64], metrics: &[f64]) -> f64 {
    weights.iter().zip(metrics).map(|(w, m)| w * m).sum()
}

/// PPO clipped surrogate `min(μA, clip(μ, 1-ε, 1+ε)A)` and the coefficient
/// that multiplies `A` in the selected branch.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    let plain = ratio * advantage;
    let capped = clipped * advantage;
    if plain <= capped {
        (plain, ratio)
    } else {
        (capped, clipped)
    }
}

/// `state -> hidden (relu) -> 1`.
pub fn critic_spec(latent: usize, hidden: usize) -> Result<NetworkSpec> {
    NetworkSpec::mlp(&[latent, hidden, 1], Activation::Relu, Activation::Linear)
}

pub fn critic_value(state: &SemanticState, spec: &NetworkSpec, chi: &ParamVector) -> Result<f64> {
    Ok(net::forward(spec, chi, &state.0)?.output()[[0, 0]])
}

/// Critic values for a batch of states.
pub fn critic_values(spec: &NetworkSpec, chi: &ParamVector, states: ArrayView2<'_, f64>, exec: &Exec) -> Result<Vec<f64>> {
    chi.check(spec)?;
    let parts = exec.map_chunks(states.nrows(), |r| {
        dense::forward_slice(spec, chi.values(), states.slice(ndarray::s![r, ..]).to_owned())
            .map(|a| a.output().column(0).to_vec())
    });
    let mut out = Vec::with_capacity(states.nrows());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `E_t[(V(s_t) - r_t)^2]` and its gradient w.r.t. `χ`.
pub fn value_loss(
    spec: &NetworkSpec,
    chi: &ParamVector,
    states: ArrayView2<'_, f64>,
    rewards: &[f64],
    exec: &Exec,
) -> Result<(f64, GradVector)> {
    chi.check(spec)?;
    let rows = states.nrows();
    if rewards.len() != rows {
        return Err(Error::dim("rewards", rows, rewards.len()));
    }
    let parts = exec.map_chunks(rows, |r| -> Result<(f64, Vec<f64>)> {
        let acts = dense::forward_slice(spec, chi.values(), states.slice(ndarray::s![r.clone(), ..]).to_owned())?;
        let v = acts.output();
        let mut up = Array2::zeros((r.len(), 1));
        let mut loss = 0.0;
        for (i, t) in r.clone().enumerate() {
            let e = v[[i, 0]] - rewards[t];
            loss += e * e / rows as f64;
            up[[i, 0]] = 2.0 * e / rows as f64;
        }
        let g = dense::param_grad_slice(spec, chi.values(), &acts, up.view())?;
        Ok((loss, g))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; chi.len()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, GradVector::from_parts(grad, chi.layout().to_vec())?))
}

/// `steps` gradient-descent steps on a copy of `theta`.
///
/// `loss_grad(h, θ̃)` returns the loss and gradient at inner step `h`. Fails
/// on a non-finite loss, or when the loss rises more than tenfold over the
/// first evaluated one.
pub fn inner_descent<F>(theta: &ParamVector, steps: usize, lr: f64, mut loss_grad: F) -> Result<ParamVector>
where
    F: FnMut(usize, &ParamVector) -> Result<(f64, GradVector)>,
{
    let mut current = theta.clone();
    let mut initial = None;
    for h in 0..steps {
        let (loss, grad) = loss_grad(h, &current)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "inner encoder loss".into(),
                step: h,
            });
        }
        let init = *initial.get_or_insert(loss);
        if loss - init > 10.0 * f64::max(init.abs(), 1e-6) {
            return Err(Error::Divergence {
                step: h,
                loss,
                initial: init,
            });
        }
        current = net::sgd_step(&current, &grad, lr, h)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderSpec {
        EncoderSpec::dense(6, 5, 4, 3).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_zero_at_zero() {
        let spec = small();
        let theta = spec.init(4, 0.0);
        let m = [0.1, 0.5, 0.9, 0.0, 1.0, 0.3];
        assert_eq!(encode(&m, &spec, &theta).unwrap(), encode(&m, &spec, &theta).unwrap());
        let zero = ParamVector::from_parts(vec![0.0; spec.param_count()], spec.layout()).unwrap();
        assert!(encode(&m, &spec, &zero).unwrap().0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_mnist_state_dim() {
        let spec = EncoderSpec::dense(784, 256, 128, 128).unwrap();
        let theta = spec.init(0, 0.0);
        assert_eq!(encode(&[0.5; 784], &spec, &theta).unwrap().0.len(), 128);
    }

    #[test]
    fn zero_noise_at_min_std_returns_mean() {
        let spec = small();
        let theta = spec.init(2, -50.0);
        let s = encode(&[0.2; 6], &spec, &theta).unwrap();
        let (mean, log_std) = policy_params(&s, &spec, &theta).unwrap();
        assert!(log_std.iter().all(|&v| v == LOG_STD_MIN));
        let p = sample_action_with_noise(&s, &spec, &theta, vec![0.0; 3]).unwrap();
        assert_eq!(p.action, mean);
        assert_eq!(p.action.len(), spec.bits());
    }

    #[test]
    fn log_prob_matches_density_product() {
        let spec = small();
        let theta = spec.init(9, -0.3);
        let s = encode(&[0.7; 6], &spec, &theta).unwrap();
        let p = sample_action(&s, &spec, &theta, &mut par::stream(1, &[1])).unwrap();
        let (mean, log_std) = policy_params(&s, &spec, &theta).unwrap();
        let density: f64 = (0..3)
            .map(|i| {
                let sd = log_std[i].exp();
                let x = (p.action[i] - mean[i]) / sd;
                (-0.5 * x * x).exp() / (sd * (2.0 * PI).sqrt())
            })
            .product();
        assert!((p.log_prob - density.ln()).abs() < 1e-10);
    }

    #[test]
    fn reward_examples() {
        assert!((reward(&[0.5, 0.5], &[0.8, 0.6]) - 0.7).abs() < 1e-15);
        assert_eq!(reward(&[1.0, 0.0], &[0.3, 0.9]), 0.3);
        assert_eq!(reward(&[0.2, 0.8], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn clip_arithmetic() {
        assert_eq!(clipped_objective(2.0, 1.0, 0.2).0, 1.2);
        assert_eq!(clipped_objective(0.5, -1.0, 0.2).0, -0.8);
        assert_eq!(clipped_objective(1.0, 3.0, 0.2), (3.0, 1.0));
    }

    #[test]
    fn value_loss_cases() {
        let spec = critic_spec(3, 4).unwrap();
        let chi = ParamVector::zeros(&spec);
        let states = Array2::from_elem((5, 3), 0.4);
        let (l, _) = value_loss(&spec, &chi, states.view(), &[1.0; 5], &Exec::sequential()).unwrap();
        assert_eq!(l, 1.0);
        let (l, _) = value_loss(&spec, &chi, states.view(), &[0.0; 5], &Exec::sequential()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn inner_descent_quadratic_step() {
        let layout = vec![LayerShape { rows: 1, cols: 0, bias: true }];
        let theta = ParamVector::from_parts(vec![1.0], layout.clone()).unwrap();
        let f = |_: usize, p: &ParamVector| {
            let x = p.values()[0];
            Ok((x * x, GradVector::from_parts(vec![2.0 * x], layout.clone()).unwrap()))
        };
        let one = inner_descent(&theta, 1, 0.1, f).unwrap();
        assert!((one.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(inner_descent(&theta, 5, 0.0, f).unwrap(), theta);
        assert_eq!(theta.values(), &[1.0]);
    }

    #[test]
    fn inner_descent_flags_divergence() {
        let layout = vec![LayerShape { rows: 1, cols: 0, bias: true }];
        let theta = ParamVector::from_parts(vec![1.0], layout.clone()).unwrap();
        let f = |_: usize, p: &ParamVector| {
            let x = p.values()[0];
            Ok((x * x, GradVector::from_parts(vec![2.0 * x], layout.clone()).unwrap()))
        };
        let err = inner_descent(&theta, 10, 3.0, f).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
