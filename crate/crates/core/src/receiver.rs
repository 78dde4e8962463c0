//! Task-specific decoders and their supervised local update.

use ndarray::{Array2, ArrayView2};

use crate::channel::{ChannelConfig, ReceivedSignal};
use crate::data::{self, ClassReward, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::net::{self, dense, Activation, GradVector, NetworkSpec, ParamVector};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSpec {
    pub task: TaskKind,
    pub net: NetworkSpec,
    pub channel: ChannelConfig,
}

impl ReceiverSpec {
    /// Checks the decoder's input/output dims against the link and the task.
    pub fn new(task: TaskKind, net: NetworkSpec, channel: ChannelConfig, bits: usize, image_dim: usize, classes: usize) -> Result<Self> {
        channel.validate()?;
        if net.input_dim() != bits {
            return Err(Error::dim("decoder input", bits, net.input_dim()));
        }
        let head = net.layers().last().expect("nonempty").activation;
        match task {
            TaskKind::Reconstruction => {
                if net.output_dim() != image_dim {
                    return Err(Error::dim("reconstruction head", image_dim, net.output_dim()));
                }
                if head != Activation::Sigmoid {
                    return Err(Error::InvalidSpec("reconstruction head must be sigmoid".into()));
                }
            }
            TaskKind::Classification => {
                if net.output_dim() != classes {
                    return Err(Error::dim("classification head", classes, net.output_dim()));
                }
                if head != Activation::Softmax {
                    return Err(Error::InvalidSpec("classification head must be softmax".into()));
                }
            }
        }
        Ok(ReceiverSpec { task, net, channel })
    }

    /// `bits -> hidden (relu) -> out` with the task's head activation.
    pub fn dense(task: TaskKind, bits: usize, hidden: usize, image_dim: usize, classes: usize, channel: ChannelConfig) -> Result<Self> {
        let (out, head) = match task {
            TaskKind::Reconstruction => (image_dim, Activation::Sigmoid),
            TaskKind::Classification => (classes, Activation::Softmax),
        };
        let net = NetworkSpec::mlp(&[bits, hidden, out], Activation::Relu, head)?;
        Self::new(task, net, channel, bits, image_dim, classes)
    }
}

/// Decodes one received signal.
pub fn decode(received: &ReceivedSignal, spec: &ReceiverSpec, params: &ParamVector) -> Result<Vec<f64>> {
    if received.0.len() != spec.net.input_dim() {
        return Err(Error::dim("received signal", spec.net.input_dim(), received.0.len()));
    }
    let acts = net::forward(&spec.net, params, &received.0)?;
    Ok(acts.output().row(0).to_vec())
}

/// Supervised loss of decoder outputs and its gradient w.r.t. those outputs.
///
/// `rows` is the full batch size, so chunk-wise calls sum to the batch mean.
pub fn task_loss(
    task: TaskKind,
    outputs: ArrayView2<'_, f64>,
    images: ArrayView2<'_, f64>,
    labels: &[usize],
    rows: usize,
) -> Result<(f64, Array2<f64>)> {
    let scale = outputs.nrows() as f64 / rows as f64;
    let (loss, mut grad) = match task {
        TaskKind::Reconstruction => (data::mse_loss(images, outputs)?, data::mse_loss_grad(images, outputs)?),
        TaskKind::Classification => (data::ce_loss(labels, outputs)?, data::ce_loss_grad(labels, outputs)?),
    };
    grad *= scale;
    Ok((loss * scale, grad))
}

/// Per-sample task metrics of decoder outputs.
pub fn task_metrics(
    task: TaskKind,
    outputs: ArrayView2<'_, f64>,
    images: ArrayView2<'_, f64>,
    labels: &[usize],
    reward: ClassReward,
) -> Result<Vec<f64>> {
    outputs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(t, out)| {
            let sample = Sample {
                image: images.row(t).to_slice().expect("contiguous"),
                label: labels[t],
            };
            data::task_metric(task, sample, out.as_slice().expect("contiguous"), reward)
        })
        .collect()
}

/// One supervised batch as seen by a receiver.
#[derive(Debug, Clone)]
pub struct ReceiverBatch {
    pub received: Array2<f64>,
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Produces decoder training batches from a frozen encoder and channel.
pub trait BatchSource {
    fn batch(&self, step: usize) -> Result<ReceiverBatch>;
}

impl<F> BatchSource for F
where
    F: Fn(usize) -> Result<ReceiverBatch>,
{
    fn batch(&self, step: usize) -> Result<ReceiverBatch> {
        self(step)
    }
}

/// Batch loss and parameter gradient, computed chunk-wise.
pub fn loss_and_grad(spec: &ReceiverSpec, params: &ParamVector, batch: &ReceiverBatch, exec: &Exec) -> Result<(f64, GradVector)> {
    params.check(&spec.net)?;
    let rows = batch.received.nrows();
    let parts = exec.map_chunks(rows, |r| -> Result<(f64, Vec<f64>)> {
        let acts = dense::forward_slice(&spec.net, params.values(), batch.received.slice(ndarray::s![r.clone(), ..]).to_owned())?;
        let (loss, up) = task_loss(
            spec.task,
            acts.output(),
            batch.images.slice(ndarray::s![r.clone(), ..]),
            &batch.labels[r.clone()],
            rows,
        )?;
        Ok((loss, dense::param_grad_slice(&spec.net, params.values(), &acts, up.view())?))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, GradVector::from_parts(grad, params.layout().to_vec())?))
}

/// `kappa` SGD steps, each on a fresh batch from `source`.
pub fn local_update<S: BatchSource + ?Sized>(
    spec: &ReceiverSpec,
    params: &ParamVector,
    source: &S,
    kappa: usize,
    lr: f64,
    exec: &Exec,
) -> Result<ParamVector> {
    let mut phi = params.clone();
    for k in 0..kappa {
        let batch = source.batch(k)?;
        let (loss, grad) = loss_and_grad(spec, &phi, &batch, exec)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{} decoder loss", spec.task),
                step: k,
            });
        }
        phi = net::sgd_step(&phi, &grad, lr, k)?;
    }
    Ok(phi)
}
