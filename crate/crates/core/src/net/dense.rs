use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::matmul::matmul;
use super::{checksum, Activation, GradVector, NetworkSpec, ParamVector};
use crate::error::{Error, Result};

/// Inputs and post-activation outputs of every layer for one batch.
#[derive(Debug, Clone)]
pub struct Activations {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
    fingerprint: u64,
    layers: Vec<(usize, usize, Activation)>,
}

impl Activations {
    /// Final-layer output, one row per sample.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.outputs[self.outputs.len() - 1].view()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.outputs.pop().expect("at least one layer")
    }

    /// Post-activation output of layer `i`.
    pub fn layer(&self, i: usize) -> ArrayView2<'_, f64> {
        self.outputs[i].view()
    }

    pub fn input(&self) -> ArrayView2<'_, f64> {
        self.input.view()
    }

    pub fn rows(&self) -> usize {
        self.input.nrows()
    }
}

fn weights<'a>(params: &'a [f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols]).expect("layout checked")
}

fn apply_activation(z: &mut Array2<f64>, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Converts dL/dy into dL/dz for one layer, in place.
fn activation_backward(grad: &mut Array2<f64>, y: &Array2<f64>, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => grad.zip_mut_with(y, |g, &y| {
            if y <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Sigmoid => grad.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y)),
        Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
        Activation::Softmax => {
            for (mut g, y) in grad.rows_mut().into_iter().zip(y.rows()) {
                let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                g.zip_mut_with(&y, |g, &y| *g = y * (*g - dot));
            }
        }
    }
}

pub(crate) fn forward_slice(spec: &NetworkSpec, params: &[f64], input: Array2<f64>) -> Result<Activations> {
    if params.len() != spec.param_count() {
        return Err(Error::dim("network parameters", spec.param_count(), params.len()));
    }
    if input.ncols() != spec.input_dim() {
        return Err(Error::dim("layer 0 input", spec.input_dim(), input.ncols()));
    }
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(spec.layers().len());
    let mut offset = 0;
    for l in spec.layers() {
        let w = weights(params, offset, l.output, l.input);
        offset += l.output * l.input;
        let b = &params[offset..offset + l.output];
        offset += l.output;
        let x = outputs.last().unwrap_or(&input);
        let mut z = Array2::from_shape_fn((x.nrows(), l.output), |(_, j)| b[j]);
        matmul(x.view(), w.t(), &mut z.view_mut(), true);
        apply_activation(&mut z, l.activation);
        outputs.push(z);
    }
    Ok(Activations {
        input,
        outputs,
        fingerprint: checksum(params),
        layers: spec.layers().iter().map(|l| (l.input, l.output, l.activation)).collect(),
    })
}

/// Returns (dL/dparams, dL/dinput) given dL/doutput.
pub(crate) fn backward_slice(
    spec: &NetworkSpec,
    params: &[f64],
    acts: &Activations,
    upstream: ArrayView2<'_, f64>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    backward_impl(spec, params, acts, upstream, true)
}

/// dL/dparams only; skips the input-gradient product of the first layer.
pub(crate) fn param_grad_slice(
    spec: &NetworkSpec,
    params: &[f64],
    acts: &Activations,
    upstream: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    Ok(backward_impl(spec, params, acts, upstream, false)?.0)
}

fn backward_impl(
    spec: &NetworkSpec,
    params: &[f64],
    acts: &Activations,
    upstream: ArrayView2<'_, f64>,
    input_grad: bool,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let same_net = acts.layers.len() == spec.layers().len()
        && acts
            .layers
            .iter()
            .zip(spec.layers())
            .all(|(a, l)| *a == (l.input, l.output, l.activation));
    if !same_net || params.len() != spec.param_count() || acts.fingerprint != checksum(params) {
        return Err(Error::StaleCache);
    }
    if upstream.dim() != acts.output().dim() {
        return Err(Error::dim(
            "upstream gradient",
            acts.output().len(),
            upstream.len(),
        ));
    }
    let mut grads = vec![0.0; params.len()];
    let mut offsets = Vec::with_capacity(spec.layers().len());
    let mut offset = 0;
    for l in spec.layers() {
        offsets.push(offset);
        offset += l.output * l.input + l.output;
    }

    let mut grad = upstream.to_owned();
    for (i, l) in spec.layers().iter().enumerate().rev() {
        let y = &acts.outputs[i];
        activation_backward(&mut grad, y, l.activation);
        let x = if i == 0 { &acts.input } else { &acts.outputs[i - 1] };
        let off = offsets[i];
        let nw = l.output * l.input;
        {
            let (gw, gb) = grads[off..off + nw + l.output].split_at_mut(nw);
            let mut gw = ArrayViewMut2::from_shape((l.output, l.input), gw).expect("layout");
            matmul(grad.t(), x.view(), &mut gw, false);
            let bsum: Array1<f64> = grad.sum_axis(Axis(0));
            gb.copy_from_slice(bsum.as_slice().expect("contiguous"));
        }
        if i == 0 && !input_grad {
            return Ok((grads, Array2::zeros((grad.nrows(), 0))));
        }
        let w = weights(params, off, l.output, l.input);
        let mut next = Array2::zeros((grad.nrows(), l.input));
        matmul(grad.view(), w, &mut next.view_mut(), false);
        grad = next;
    }
    Ok((grads, grad))
}

/// Forward pass for a single input vector.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, input: &[f64]) -> Result<Activations> {
    params.check(spec)?;
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
    forward_slice(spec, params.values(), x)
}

/// Forward pass for a batch (one sample per row).
pub fn forward_batch(spec: &NetworkSpec, params: &ParamVector, input: ArrayView2<'_, f64>) -> Result<Activations> {
    params.check(spec)?;
    forward_slice(spec, params.values(), input.to_owned())
}

/// Backward pass for a single-sample [`forward`] call.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamVector,
    acts: &Activations,
    upstream: &[f64],
) -> Result<(GradVector, Vec<f64>)> {
    let up = ArrayView2::from_shape((1, upstream.len()), upstream)
        .map_err(|_| Error::dim("upstream gradient", spec.output_dim(), upstream.len()))?;
    let (g, dx) = backward_batch(spec, params, acts, up)?;
    Ok((g, dx.into_raw_vec_and_offset().0))
}

/// Backward pass for a batch; parameter gradients are summed over rows.
pub fn backward_batch(
    spec: &NetworkSpec,
    params: &ParamVector,
    acts: &Activations,
    upstream: ArrayView2<'_, f64>,
) -> Result<(GradVector, Array2<f64>)> {
    params.check(spec)?;
    let (g, dx) = backward_slice(spec, params.values(), acts, upstream)?;
    Ok((GradVector::from_parts(g, params.layout().to_vec())?, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{finite_diff_grad, glorot_init, Dense};

    #[test]
    fn identity_linear_layer() {
        let spec = NetworkSpec::new(vec![Dense::new(3, 3, Activation::Linear)]).unwrap();
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let p = ParamVector::from_parts(values, spec.layout()).unwrap();
        let out = forward(&spec, &p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.output().row(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_params_relu_is_zero() {
        let spec = NetworkSpec::mlp(&[4, 6, 3], Activation::Relu, Activation::Relu).unwrap();
        let p = ParamVector::zeros(&spec);
        let out = forward(&spec, &p, &[0.3, -2.0, 5.0, 1.0]).unwrap();
        assert!(out.output().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_dim_mismatch_names_layer() {
        let spec = NetworkSpec::mlp(&[4, 2], Activation::Relu, Activation::Linear).unwrap();
        let p = ParamVector::zeros(&spec);
        let err = forward(&spec, &p, &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], Activation::Tanh, Activation::Sigmoid).unwrap();
        let p = glorot_init(&spec, 1);
        let acts = forward(&spec, &p, &[0.1, 0.2, 0.3]).unwrap();
        let (g, dx) = backward(&spec, &p, &acts, &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_weight_gradient_is_input() {
        let spec = NetworkSpec::new(vec![Dense::new(1, 1, Activation::Linear)]).unwrap();
        let p = ParamVector::from_parts(vec![0.7, 0.1], spec.layout()).unwrap();
        let acts = forward(&spec, &p, &[2.5]).unwrap();
        let (g, _) = backward(&spec, &p, &acts, &[1.0]).unwrap();
        assert_eq!(g.values(), &[2.5, 1.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = NetworkSpec::mlp(&[3, 2], Activation::Relu, Activation::Linear).unwrap();
        let p = glorot_init(&spec, 3);
        let acts = forward(&spec, &p, &[1.0, 0.0, -1.0]).unwrap();
        let mut q = p.clone();
        q.values_mut()[0] += 1.0;
        assert!(matches!(backward(&spec, &q, &acts, &[1.0, 1.0]), Err(Error::StaleCache)));
        let other = NetworkSpec::mlp(&[3, 2], Activation::Relu, Activation::Sigmoid).unwrap();
        assert!(matches!(backward(&other, &p, &acts, &[1.0, 1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let spec = NetworkSpec::mlp(&[6, 5, 10], Activation::Relu, Activation::Softmax).unwrap();
        let p = glorot_init(&spec, 9);
        let x = Array2::from_shape_fn((7, 6), |(i, j)| ((i * 6 + j) as f64).sin() * 4.0);
        let out = forward_batch(&spec, &p, x.view()).unwrap();
        for row in out.output().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn batched_backward_matches_finite_differences() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], Activation::Sigmoid, Activation::Softmax).unwrap();
        let p = glorot_init(&spec, 5);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.4);
        let target = [0.2, -0.7];
        let loss = |p: &ParamVector| {
            let y = forward_batch(&spec, p, x.view()).unwrap();
            y.output().rows().into_iter().map(|r| r[0] * target[0] + r[1] * target[1]).sum::<f64>()
        };
        let acts = forward_batch(&spec, &p, x.view()).unwrap();
        let up = Array2::from_shape_fn((4, 2), |(_, j)| target[j]);
        let (g, _) = backward_batch(&spec, &p, &acts, up.view()).unwrap();
        let fd = finite_diff_grad(loss, &p, 1e-6);
        for (a, b) in g.values().iter().zip(fd.values()) {
            assert!((a - b).abs() <= 1e-7 + 1e-5 * b.abs(), "{a} vs {b}");
        }
    }
}
