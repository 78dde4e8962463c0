//! The update cycle, the epoch loop, trace/checkpoint output and SNR sweeps.

mod config;
mod trace;

pub use config::{parse_receivers, parse_snr, DatasetKind, ExperimentConfig, Profile, ReceiverConfig, KEYS};
pub use trace::{eval_header, trace_header, write_eval_csv, EvalRow, TraceRecord, TraceWriter};

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index;

use crate::agent::{self, rollout, ActionMode, AuxMode, ClipMode, EncoderSpec, Link, Quantizer, TxContext};
use crate::data::{self, Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::net::{self, glorot_init, read_checkpoint_file, write_checkpoint_file, NetworkSpec, ParamVector};
use crate::par::{self, Exec};
use crate::receiver::{self, ReceiverBatch, ReceiverSpec};
use crate::trilevel::{self, JointVariable, JointVector, TaskWeightVector};

// Stream tags.
const T_INIT: u64 = 1;
const T_DECODER: u64 = 2;
const T_INNER: u64 = 3;
const T_FINAL: u64 = 4;
const T_METRIC: u64 = 5;
const T_EVAL: u64 = 6;
const T_INDEX: u64 = 0;
const T_FLIP: u64 = 1;
const T_DRAW: u64 = 2;

/// Trainable state carried between cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: ParamVector,
    pub theta_old: ParamVector,
    pub decoders: Vec<ParamVector>,
    pub w: TaskWeightVector,
    pub chi: ParamVector,
}

/// Network specs and data of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub encoder: EncoderSpec,
    pub receivers: Vec<ReceiverSpec>,
    pub critic: NetworkSpec,
    pub train: Dataset,
    pub test: Dataset,
}

fn idx_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!("missing {stem}[.gz] in {}", dir.display())))
}

/// Loads the configured train/test sets.
pub fn load_datasets(c: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match c.dataset {
        DatasetKind::Mnist => {
            let d = &c.data_dir;
            let train = data::load_mnist_idx(
                &idx_path(d, "train-images-idx3-ubyte")?,
                &idx_path(d, "train-labels-idx1-ubyte")?,
            )?;
            let test = data::load_mnist_idx(
                &idx_path(d, "t10k-images-idx3-ubyte")?,
                &idx_path(d, "t10k-labels-idx1-ubyte")?,
            )?;
            (train, test)
        }
        DatasetKind::Synthetic => {
            let all = data::synth_dataset(c.synth_train + c.synth_test, c.synth_dim, c.synth_classes, c.seed);
            let idx: Vec<usize> = (0..all.len()).collect();
            let (a, b) = idx.split_at(c.synth_train);
            (subset(&all, a, data::Split::Train)?, subset(&all, b, data::Split::Test)?)
        }
    };
    let limit = |d: Dataset, n: usize| if n == 0 { d } else { d.head(n) };
    Ok((limit(train, c.train_limit), limit(test, c.test_limit)))
}

fn subset(d: &Dataset, idx: &[usize], split: data::Split) -> Result<Dataset> {
    let pixels = d.batch(idx).into_raw_vec_and_offset().0;
    let labels = idx.iter().map(|&i| d.labels()[i]).collect();
    Dataset::new(pixels, labels, d.classes(), d.dims(), split)
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = load_datasets(&config)?;
        Self::with_data(config, train, test)
    }

    pub fn with_data(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let image_dim = train.image_dim();
        let encoder = EncoderSpec::dense(image_dim, c.encoder_hidden, c.latent, c.bits)?
            .with_log_std_bounds(c.log_std_min, c.log_std_max)?;
        let receivers = c
            .receivers
            .iter()
            .map(|r| {
                let hidden = match r.task {
                    TaskKind::Reconstruction => c.rec_hidden,
                    TaskKind::Classification => c.cls_hidden,
                };
                ReceiverSpec::dense(r.task, c.bits, hidden, image_dim, train.classes(), r.channel(c.rician_k)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let critic = agent::critic_spec(c.latent, c.critic_hidden)?;
        Ok(Setup {
            config,
            encoder,
            receivers,
            critic,
            train,
            test,
        })
    }

    pub fn exec(&self) -> Exec {
        Exec::new(self.config.threads)
    }

    pub fn iters_per_epoch(&self) -> usize {
        match self.config.iters_per_epoch {
            0 => self.train.len().div_ceil(self.config.batch_size),
            n => n,
        }
    }

    /// Seeded initial parameters; uniform weights.
    pub fn init_state(&self) -> TrainState {
        let seed = self.config.seed;
        let theta = self
            .encoder
            .init(par::derive_seed(seed, &[T_INIT, 0]), self.config.log_std_init);
        let decoders = self
            .receivers
            .iter()
            .enumerate()
            .map(|(n, r)| glorot_init(&r.net, par::derive_seed(seed, &[T_INIT, 1, n as u64])))
            .collect();
        let chi = glorot_init(&self.critic, par::derive_seed(seed, &[T_INIT, 2]));
        TrainState {
            theta_old: theta.clone(),
            theta,
            decoders,
            w: TaskWeightVector::uniform(self.receivers.len()),
            chi,
        }
    }

    /// Training images and labels for the draw identified by `tag`.
    fn sample_batch(&self, tag: &[u64]) -> (Array2<f64>, Vec<usize>) {
        let n = self.train.len();
        let t = self.config.batch_size.min(n);
        let seed = self.config.seed;
        let with = |k: u64| {
            let mut v = tag.to_vec();
            v.push(k);
            v
        };
        let idx = index::sample(&mut par::stream(seed, &with(T_INDEX)), n, t).into_vec();
        let images = if self.config.flip {
            self.train.batch_flipped(&idx, &mut par::stream(seed, &with(T_FLIP)))
        } else {
            self.train.batch(&idx)
        };
        let labels = idx.iter().map(|&i| self.train.label(i)).collect();
        (images, labels)
    }

    fn link<'a>(&'a self, decoders: &'a [ParamVector]) -> Link<'a> {
        Link {
            encoder: &self.encoder,
            receivers: &self.receivers,
            decoders,
        }
    }
}

/// Runs one update cycle; `cycle` numbers cycles across epochs from 0.
pub fn run_update_cycle(
    setup: &Setup,
    state: &TrainState,
    epoch: usize,
    iter: usize,
    cycle: u64,
    exec: &Exec,
) -> Result<(TrainState, TraceRecord)> {
    let c = &setup.config;
    let seed = c.seed;
    let n = setup.receivers.len();

    // Level 1: decoders on a frozen encoder. Step k of every receiver hears
    // the same transmission.
    let channels: Vec<_> = setup.receivers.iter().map(|r| r.channel).collect();
    let mut heard: Vec<Vec<ReceiverBatch>> = vec![Vec::with_capacity(c.kappa); n];
    for k in 0..c.kappa {
        let tag = [cycle, T_DECODER, k as u64];
        let (images, labels) = setup.sample_batch(&tag);
        let draw = [cycle, T_DECODER, k as u64, T_DRAW];
        let received = agent::broadcast_batch(
            &setup.encoder,
            &state.theta,
            &channels,
            images.view(),
            ActionMode::Sample,
            seed,
            &draw,
            exec,
        )?;
        for (r, y) in received.into_iter().enumerate() {
            heard[r].push(ReceiverBatch {
                received: y,
                images: images.clone(),
                labels: labels.clone(),
            });
        }
    }
    let decoders = exec
        .map(n, |r| {
            let source = |k: usize| -> Result<ReceiverBatch> { Ok(heard[r][k].clone()) };
            receiver::local_update(&setup.receivers[r], &state.decoders[r], &source, c.kappa, c.lr_decoder, exec)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let link = setup.link(&decoders);
    let critic = (&setup.critic, &state.chi);
    let w = state.w.as_slice().to_vec();
    let aux = if c.aux { AuxMode::On } else { AuxMode::Off };
    let batch_for = |kind: u64, h: u64| -> Result<agent::TransitionBatch> {
        let tag = [cycle, kind, h];
        let (images, labels) = setup.sample_batch(&tag);
        let draw = [cycle, kind, h, T_DRAW];
        rollout(link, &state.theta_old, critic, images, labels, c.class_reward, seed, &draw, exec)
    };
    fn context<'a>(link: Link<'a>, b: &'a agent::TransitionBatch, eps: f64, aux: AuxMode) -> TxContext<'a> {
        TxContext {
            eps,
            aux,
            quantizer: Quantizer::Hard,
            ..TxContext::new(link, b)
        }
    }

    let final_batch;
    let record_scalars;
    let next_w;
    let next_theta;
    if c.ew {
        final_batch = batch_for(T_FINAL, 0)?;
        let cur = agent::tx_loss(&context(link, &final_batch, c.clip_eps, aux), &state.theta, &w, ClipMode::Unclipped, exec)?;
        let psi = cur.grad_theta.values().iter().map(|v| v * v).sum::<f64>();
        let mut theta = state.theta.clone();
        theta.axpy(-c.eta, cur.grad_theta.values())?;
        next_theta = theta;
        next_w = state.w.clone();
        record_scalars = (0.0, 0.0, psi, 0.0, 0.0, false);
    } else {
        // Level 2: H-step descent on a working copy.
        let descended = agent::inner_descent(&state.theta, c.inner_steps, c.lr_inner, |h, theta| {
            let b = batch_for(T_INNER, h as u64)?;
            let out = agent::tx_loss(&context(link, &b, c.clip_eps, aux), theta, &w, ClipMode::Clipped, exec)?;
            Ok((out.total, out.grad_theta))
        })?;
        // Level 3: joint step on (w, θ) from one fresh batch.
        final_batch = batch_for(T_FINAL, 0)?;
        let ctx = context(link, &final_batch, c.clip_eps, aux);
        // θ = θ_old here, so every ratio is 1 and the clipped and unclipped
        // losses coincide in value and gradient.
        let cur = agent::tx_loss(&ctx, &state.theta, &w, ClipMode::Unclipped, exec)?;
        let desc = agent::tx_loss(&ctx, &descended, &w, ClipMode::Clipped, exec)?;
        let g = trilevel::g_tilde(cur.total, desc.total);
        let grad_f = JointVector::new(cur.grad_w.clone(), cur.grad_theta.values().to_vec());
        let grad_g = trilevel::grad_g_tilde(&grad_f, &desc.grad_w)?;
        let dd = trilevel::lambda_and_direction(&grad_f, &grad_g, c.beta, c.fallback_norm)?;
        let report = trilevel::kkt_report(&dd, g)?;
        let v = JointVariable {
            w: state.w.clone(),
            theta: state.theta.clone(),
        };
        let next = trilevel::apply_direction(&v, &dd.d, c.eta)?;
        next_w = next.w;
        next_theta = next.theta;
        record_scalars = (report.lambda, report.rho, report.psi, report.g_tilde, report.g_dot_d, report.fallback);
    }

    let rewards = final_batch.rewards(&w);
    let (_, grad_chi) = agent::value_loss(&setup.critic, &state.chi, final_batch.states.view(), &rewards, exec)?;
    let chi = net::sgd_step(&state.chi, &grad_chi, c.lr_critic, 0)?;

    let next = TrainState {
        theta_old: next_theta.clone(),
        theta: next_theta,
        decoders,
        w: next_w,
        chi,
    };
    let metrics = heldout_metrics(setup, &next, cycle, exec)?;
    let (lambda, rho, psi, g_tilde, g_dot_d, fallback) = record_scalars;
    let record = TraceRecord {
        epoch,
        iter,
        reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        w: next.w.as_slice().to_vec(),
        loss: final_batch.decoder_loss.clone(),
        metric: metrics,
        lambda,
        rho,
        psi,
        g_tilde,
        g_dot_d,
        fallback,
    };
    if !record.is_finite() {
        return Err(Error::NonFinite {
            what: "trace record".into(),
            step: iter,
        });
    }
    Ok((next, record))
}

/// Mean SSIM (reconstruction) or accuracy (classification) per receiver on a
/// held-out test batch, transmitting the policy mean.
fn heldout_metrics(setup: &Setup, state: &TrainState, cycle: u64, exec: &Exec) -> Result<Vec<f64>> {
    let n = setup.test.len();
    let t = setup.config.batch_size.min(n);
    let seed = setup.config.seed;
    let idx = index::sample(&mut par::stream(seed, &[cycle, T_METRIC, T_INDEX]), n, t).into_vec();
    let images = setup.test.batch(&idx);
    let labels: Vec<usize> = idx.iter().map(|&i| setup.test.label(i)).collect();
    setup
        .receivers
        .iter()
        .enumerate()
        .map(|(r, spec)| {
            let m = decode_metrics(setup, state, r, &spec.channel, images.view(), &labels, seed, &[cycle, T_METRIC, T_DRAW], exec)?;
            Ok(match spec.task {
                TaskKind::Reconstruction => mean(&m.ssim),
                TaskKind::Classification => mean(&m.correct),
            })
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Default)]
struct SampleMetrics {
    ssim: Vec<f64>,
    psnr: Vec<f64>,
    correct: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn decode_metrics(
    setup: &Setup,
    state: &TrainState,
    r: usize,
    channel: &crate::channel::ChannelConfig,
    images: ndarray::ArrayView2<'_, f64>,
    labels: &[usize],
    seed: u64,
    tag: &[u64],
    exec: &Exec,
) -> Result<SampleMetrics> {
    let spec = &setup.receivers[r];
    let received = agent::received_batch(&setup.encoder, &state.theta, channel, r, images, ActionMode::Mean, seed, tag, exec)?;
    let phi = &state.decoders[r];
    let parts = exec.map_chunks(images.nrows(), |rows| -> Result<SampleMetrics> {
        let out = net::forward_batch(&spec.net, phi, received.slice(ndarray::s![rows.clone(), ..]))?;
        let mut m = SampleMetrics::default();
        for (i, t) in rows.enumerate() {
            let y = out.output().row(i).to_vec();
            let x = images.row(t).to_vec();
            match spec.task {
                TaskKind::Reconstruction => {
                    m.ssim.push(data::ssim(&x, &y)?);
                    m.psnr.push(data::psnr(&x, &y, 1.0)?);
                }
                TaskKind::Classification => {
                    let best = y
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                        .0;
                    m.correct.push(if best == labels[t] { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(m)
    });
    let mut all = SampleMetrics::default();
    for p in parts {
        let p = p?;
        all.ssim.extend(p.ssim);
        all.psnr.extend(p.psnr);
        all.correct.extend(p.correct);
    }
    Ok(all)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub records: Vec<TraceRecord>,
    pub trace_path: PathBuf,
}

/// File names inside an output directory.
pub const TRACE_FILE: &str = "trace.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.csv";

fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch-{epoch:03}"))
}

/// Writes every parameter set of `state` into `dir`.
pub fn save_state(dir: &Path, state: &TrainState) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_checkpoint_file(&dir.join("encoder.bin"), &state.theta)?;
    for (n, phi) in state.decoders.iter().enumerate() {
        write_checkpoint_file(&dir.join(format!("decoder-{}.bin", n + 1)), phi)?;
    }
    write_checkpoint_file(&dir.join("critic.bin"), &state.chi)?;
    let w: Vec<String> = state.w.as_slice().iter().map(|v| v.to_string()).collect();
    let tmp = dir.join("weights.txt.tmp");
    fs::write(&tmp, w.join(",") + "\n")?;
    fs::rename(tmp, dir.join("weights.txt"))?;
    Ok(())
}

/// Reads a state written by [`save_state`] and checks it against `setup`.
pub fn load_state(dir: &Path, setup: &Setup) -> Result<TrainState> {
    let theta = read_checkpoint_file(&dir.join("encoder.bin"))?;
    setup.encoder.check(&theta)?;
    let decoders = setup
        .receivers
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let p = read_checkpoint_file(&dir.join(format!("decoder-{}.bin", n + 1)))?;
            p.check(&r.net)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let chi = read_checkpoint_file(&dir.join("critic.bin"))?;
    chi.check(&setup.critic)?;
    let text = fs::read_to_string(dir.join("weights.txt"))?;
    let w = text
        .trim()
        .split(',')
        .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("bad weight `{v}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainState {
        theta_old: theta.clone(),
        theta,
        decoders,
        w: TaskWeightVector::new(w)?,
        chi,
    })
}

/// Latest per-epoch checkpoint directory under `out`, if any.
pub fn latest_checkpoint(out: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("weights.txt").exists())
        .collect();
    dirs.sort();
    dirs.pop()
}

/// Full training run writing `config.toml`, `trace.csv` and checkpoints
/// into `out`.
pub fn train(setup: &Setup, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), setup.config.to_toml())?;
    let exec = setup.exec();
    let trace_path = out.join(TRACE_FILE);
    let mut writer = TraceWriter::create(&trace_path, setup.receivers.len())?;
    let mut state = setup.init_state();
    let mut records = Vec::new();
    let per_epoch = setup.iters_per_epoch();
    let mut cycle = 0u64;
    for epoch in 1..=setup.config.epochs {
        for iter in 1..=per_epoch {
            let (next, record) = run_update_cycle(setup, &state, epoch, iter, cycle, &exec).map_err(|e| Error::Iteration {
                iteration: cycle as usize,
                source: Box::new(e),
            })?;
            writer.append(&record)?;
            log::debug!("epoch {epoch} iter {iter} reward {:.4} w {:?}", record.reward, record.w);
            records.push(record);
            state = next;
            cycle += 1;
        }
        if setup.config.checkpoints {
            save_state(&checkpoint_dir(out, epoch), &state)?;
        }
        log::info!("epoch {epoch}/{} done", setup.config.epochs);
    }
    Ok(TrainOutcome {
        state,
        records,
        trace_path,
    })
}

/// Per-receiver test-set SSIM / PSNR / accuracy for every SNR in the grid,
/// with fresh channel draws and the policy mean transmitted.
pub fn evaluate(setup: &Setup, state: &TrainState, exec: &Exec) -> Result<Vec<EvalRow>> {
    let images = setup.test.batch(&(0..setup.test.len()).collect::<Vec<_>>());
    let labels: Vec<usize> = (0..setup.test.len()).map(|i| setup.test.label(i)).collect();
    let mut rows = Vec::new();
    for (s, &snr) in setup.config.eval_snrs.iter().enumerate() {
        for (r, spec) in setup.receivers.iter().enumerate() {
            let mut channel = spec.channel;
            channel.snr_db = snr;
            let m = decode_metrics(setup, state, r, &channel, images.view(), &labels, setup.config.seed, &[T_EVAL, s as u64], exec)?;
            let some = |v: &[f64]| if v.is_empty() { None } else { Some(mean(v)) };
            rows.push(EvalRow {
                snr_db: snr,
                receiver: r + 1,
                task: spec.task,
                ssim: some(&m.ssim),
                psnr: some(&m.psnr),
                accuracy: some(&m.correct),
            });
        }
    }
    Ok(rows)
}
