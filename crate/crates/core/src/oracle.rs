//! Independent reference computations used to check the optimized code:
//! brute-force QP and simplex searches and finite-difference gradient suites.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::agent::{
    self, rollout, AuxMode, ClipMode, EncoderSpec, Link, Quantizer, TransitionBatch, TxContext,
};
use crate::channel::{ChannelConfig, ChannelKind};
use crate::data::{ClassReward, TaskKind};
use crate::error::Result;
use crate::net::{self, finite_diff_grad, glorot_init, Activation, NetworkSpec, ParamVector};
use crate::par::{self, Exec};
use crate::receiver::ReceiverSpec;
use crate::trilevel::{self, JointVector};

/// Dual function of the direction QP: `-½‖∇F + λ∇g‖² + λρ`.
fn dual(f: &JointVector, g: &JointVector, rho: f64, lambda: f64) -> f64 {
    -0.5 * f.plus_scaled(lambda, g).norm_sq() + lambda * rho
}

/// Maximizes the dual over a `1e-4` grid on `[0, U]`, then refines by
/// golden-section search around the best grid point. Returns `(λ, d)`.
pub fn brute_force_direction(f: &JointVector, g: &JointVector, beta: f64) -> (f64, JointVector) {
    let gg = g.norm_sq();
    let rho = beta * gg;
    let upper = 2.0 * (beta + f.norm_sq().sqrt() / gg.sqrt()) + 1.0;
    let step = 1e-4;
    let n = (upper / step).ceil() as usize;
    let mut best = (0.0, dual(f, g, rho, 0.0));
    for i in 1..=n {
        let l = i as f64 * step;
        let q = dual(f, g, rho, l);
        if q > best.1 {
            best = (l, q);
        }
    }
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), best.0 + step);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if dual(f, g, rho, a) >= dual(f, g, rho, b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let s = f.plus_scaled(lambda, g);
    let d = JointVector::new(s.w.iter().map(|v| -v).collect(), s.theta.iter().map(|v| -v).collect());
    (lambda, d)
}

fn normal_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_qp(rng: &mut impl Rng) -> (JointVector, JointVector, f64) {
    let n = rng.random_range(1..=4);
    let p = rng.random_range(1..=6);
    let f = JointVector::new(normal_vec(n, rng), normal_vec(p, rng));
    let mut g = JointVector::new(normal_vec(n, rng), normal_vec(p, rng));
    // Keep ‖∇g‖ away from the fallback regime so the dual grid stays finite.
    if g.norm_sq() < 1e-2 {
        g = g.plus_scaled(1.0, &JointVector::new(vec![0.2; n], vec![0.2; p]));
    }
    let beta = rng.sample(Uniform::new(0.0, 1.0).expect("interval"));
    (f, g, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSelftest {
    pub instances: usize,
    pub matches: usize,
    pub worst_l2: f64,
    pub kkt_instances: usize,
    pub kkt_ok: usize,
    pub worst_kkt_residual: f64,
}

impl QpSelftest {
    pub fn passed(&self) -> bool {
        self.matches == self.instances && self.kkt_ok == self.kkt_instances
    }
}

/// Closed form vs brute-force dual on `instances` random QPs (L2 tolerance
/// `1e-3`), and KKT checks on `kkt_instances` more.
pub fn qp_selftest(instances: usize, kkt_instances: usize, seed: u64) -> Result<QpSelftest> {
    let mut rng = par::stream(seed, &[0x5150]);
    let mut matches = 0;
    let mut worst_l2: f64 = 0.0;
    for _ in 0..instances {
        let (f, g, beta) = random_qp(&mut rng);
        let dd = trilevel::lambda_and_direction(&f, &g, beta, trilevel::DEFAULT_FALLBACK_NORM)?;
        let (_, d) = brute_force_direction(&f, &g, beta);
        let err = dd.d.plus_scaled(-1.0, &d).norm_sq().sqrt();
        worst_l2 = worst_l2.max(err);
        if err <= 1e-3 {
            matches += 1;
        }
    }
    let mut kkt_ok = 0;
    let mut worst_kkt_residual: f64 = 0.0;
    for _ in 0..kkt_instances {
        let (f, g, beta) = random_qp(&mut rng);
        let dd = trilevel::lambda_and_direction(&f, &g, beta, trilevel::DEFAULT_FALLBACK_NORM)?;
        if let Ok(r) = trilevel::kkt_report(&dd, 0.0) {
            kkt_ok += 1;
            let residual = if r.lambda > 0.0 {
                (r.g_dot_d + r.rho).abs()
            } else {
                (r.g_dot_d + r.rho).max(0.0)
            };
            worst_kkt_residual = worst_kkt_residual.max(residual);
        }
    }
    Ok(QpSelftest {
        instances,
        matches,
        worst_l2,
        kkt_instances,
        kkt_ok,
        worst_kkt_residual,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest simplex point to `raw` (2 or 3 coordinates) by exhaustive search
/// on a `1e-3` grid, refined on a `1e-5` grid around the winner.
pub fn brute_force_simplex(raw: &[f64]) -> Vec<f64> {
    assert!(raw.len() == 2 || raw.len() == 3, "grid search supports 2 or 3 coordinates");
    let search = |lo: [f64; 2], hi: [f64; 2], step: f64| -> Vec<f64> {
        let mut best = (f64::INFINITY, vec![]);
        let steps = |l: f64, h: f64| ((h - l) / step).round() as i64;
        let (n0, n1) = (steps(lo[0], hi[0]), steps(lo[1], hi[1]));
        for i in 0..=n0 {
            let x = (lo[0] + i as f64 * step).clamp(0.0, 1.0);
            if raw.len() == 2 {
                let p = vec![x, 1.0 - x];
                let d = sq_dist(raw, &p);
                if d < best.0 {
                    best = (d, p);
                }
                continue;
            }
            for j in 0..=n1 {
                let y = (lo[1] + j as f64 * step).clamp(0.0, 1.0);
                if x + y > 1.0 {
                    break;
                }
                let p = vec![x, y, 1.0 - x - y];
                let d = sq_dist(raw, &p);
                if d < best.0 {
                    best = (d, p);
                }
            }
        }
        best.1
    };
    let coarse = search([0.0, 0.0], [1.0, 1.0], 1e-3);
    let lo = [(coarse[0] - 2e-3).max(0.0), (coarse[1] - 2e-3).max(0.0)];
    let hi = [(coarse[0] + 2e-3).min(1.0), (coarse[1] + 2e-3).min(1.0)];
    search(lo, hi, 1e-5)
}

/// Result of one finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    /// Worst `‖analytic - fd‖ / max(‖fd‖, 1e-8)` over instances.
    pub worst_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = sq_dist(a, b).sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

const FD_STEP: f64 = 1e-6;

fn check_nets(instances: usize, seed: u64) -> Result<GradCheck> {
    let mut worst: f64 = 0.0;
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Linear];
    for k in 0..instances {
        let mut rng = par::stream(seed, &[1, k as u64]);
        let hidden = acts[k % acts.len()];
        let head = if k % 2 == 0 { Activation::Softmax } else { acts[(k / 2) % acts.len()] };
        let dims = [rng.random_range(2..6), rng.random_range(2..7), rng.random_range(2..5)];
        let spec = NetworkSpec::mlp(&dims, hidden, head)?;
        let mut p = glorot_init(&spec, par::derive_seed(seed, &[2, k as u64]));
        jitter(&mut p, 0.1, &mut rng);
        let rows = 3;
        let x = Array2::from_shape_fn((rows, dims[0]), |_| rng.sample::<f64, _>(StandardNormal));
        let c = Array2::from_shape_fn((rows, dims[2]), |_| rng.sample::<f64, _>(StandardNormal));
        let loss = |p: &ParamVector| {
            let y = net::forward_batch(&spec, p, x.view()).expect("forward");
            (&y.output() * &c).sum()
        };
        let a = net::forward_batch(&spec, &p, x.view())?;
        let (g, _) = net::backward_batch(&spec, &p, &a, c.view())?;
        let fd = finite_diff_grad(loss, &p, FD_STEP);
        worst = worst.max(rel_err(g.values(), fd.values()));
    }
    Ok(GradCheck {
        name: "net-core backward",
        instances,
        worst_rel_err: worst,
        tolerance: 1e-5,
    })
}

/// Adds `N(0, scale²)` noise to every entry so no unit sits on a kink.
fn jitter(p: &mut ParamVector, scale: f64, rng: &mut impl Rng) {
    for v in p.values_mut() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// A tiny broadcast system with one receiver per task.
struct Toy {
    encoder: EncoderSpec,
    receivers: Vec<ReceiverSpec>,
    decoders: Vec<ParamVector>,
    critic: NetworkSpec,
    chi: ParamVector,
    theta: ParamVector,
    batch: TransitionBatch,
}

fn toy(seed: u64, kind: ChannelKind) -> Result<Toy> {
    let (image_dim, bits, classes) = (6, 4, 3);
    let encoder = EncoderSpec::dense(image_dim, 5, 4, bits)?;
    let channel = ChannelConfig::new(kind, 6.0)?;
    let receivers = vec![
        ReceiverSpec::dense(TaskKind::Reconstruction, bits, 5, image_dim, classes, channel)?,
        ReceiverSpec::dense(TaskKind::Classification, bits, 5, image_dim, classes, channel)?,
    ];
    let mut rng = par::stream(seed, &[13]);
    let mut decoders: Vec<ParamVector> = receivers
        .iter()
        .enumerate()
        .map(|(i, r)| glorot_init(&r.net, par::derive_seed(seed, &[10, i as u64])))
        .collect();
    decoders.iter_mut().for_each(|p| jitter(p, 0.1, &mut rng));
    let critic = agent::critic_spec(4, 3)?;
    let mut chi = glorot_init(&critic, par::derive_seed(seed, &[11]));
    jitter(&mut chi, 0.1, &mut rng);
    let mut theta_old = encoder.init(par::derive_seed(seed, &[12]), -0.5);
    jitter(&mut theta_old, 0.1, &mut rng);
    let rows = 5;
    let images = Array2::from_shape_fn((rows, image_dim), |_| rng.random::<f64>());
    let labels = (0..rows).map(|t| t % classes).collect();
    let exec = Exec::sequential();
    let link = Link {
        encoder: &encoder,
        receivers: &receivers,
        decoders: &decoders,
    };
    let batch = rollout(link, &theta_old, (&critic, &chi), images, labels, ClassReward::Probability, seed, &[14], &exec)?;
    // Evaluate away from θ_old so ratios differ from one.
    let mut theta = theta_old.clone();
    jitter(&mut theta, 0.02, &mut rng);
    Ok(Toy {
        encoder,
        receivers,
        decoders,
        critic,
        chi,
        theta,
        batch,
    })
}

fn check_tx(instances: usize, seed: u64, aux: AuxMode, name: &'static str) -> Result<GradCheck> {
    let mut worst: f64 = 0.0;
    let kinds = [ChannelKind::Awgn, ChannelKind::Rayleigh, ChannelKind::Rician];
    let exec = Exec::sequential();
    for k in 0..instances {
        let t = toy(par::derive_seed(seed, &[3, k as u64]), kinds[k % 3])?;
        let link = Link {
            encoder: &t.encoder,
            receivers: &t.receivers,
            decoders: &t.decoders,
        };
        let ctx = TxContext {
            aux,
            quantizer: Quantizer::FrozenOffset,
            ..TxContext::new(link, &t.batch)
        };
        let clip = if k % 2 == 0 { ClipMode::Clipped } else { ClipMode::Unclipped };
        let w = [0.3 + 0.4 * (k as f64 / instances as f64), 0.7 - 0.4 * (k as f64 / instances as f64)];
        let out = agent::tx_loss(&ctx, &t.theta, &w, clip, &exec)?;
        let loss = |p: &ParamVector| agent::tx_loss(&ctx, p, &w, clip, &exec).expect("tx loss").total;
        let fd = finite_diff_grad(loss, &t.theta, FD_STEP);
        let mut analytic = out.grad_theta.values().to_vec();
        let mut numeric = fd.values().to_vec();
        for i in 0..w.len() {
            let mut hi = w;
            let mut lo = w;
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            let f = |w: &[f64]| agent::tx_loss(&ctx, &t.theta, w, clip, &exec).expect("tx loss").total;
            numeric.push((f(&hi) - f(&lo)) / (2.0 * FD_STEP));
            analytic.push(out.grad_w[i]);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(GradCheck {
        name,
        instances,
        worst_rel_err: worst,
        tolerance: 1e-4,
    })
}

fn check_value(instances: usize, seed: u64) -> Result<GradCheck> {
    let mut worst: f64 = 0.0;
    let exec = Exec::sequential();
    for k in 0..instances {
        let t = toy(par::derive_seed(seed, &[4, k as u64]), ChannelKind::Awgn)?;
        let rewards = t.batch.rewards(&[0.5, 0.5]);
        let (_, g) = agent::value_loss(&t.critic, &t.chi, t.batch.states.view(), &rewards, &exec)?;
        let loss = |p: &ParamVector| agent::value_loss(&t.critic, p, t.batch.states.view(), &rewards, &exec).expect("value loss").0;
        let fd = finite_diff_grad(loss, &t.chi, FD_STEP);
        worst = worst.max(rel_err(g.values(), fd.values()));
    }
    Ok(GradCheck {
        name: "value loss",
        instances,
        worst_rel_err: worst,
        tolerance: 1e-4,
    })
}

/// All finite-difference suites with `instances` seeded cases each.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<GradCheck>> {
    Ok(vec![
        check_nets(instances, seed)?,
        check_tx(instances, seed, AuxMode::Off, "actor loss")?,
        check_tx(instances, seed, AuxMode::On, "tx loss surrogate path")?,
        check_value(instances, seed)?,
    ])
}
