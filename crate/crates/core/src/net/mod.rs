//! Minimal dense feed-forward networks over flat parameter vectors.
//!
//! A [`NetworkSpec`] describes a stack of dense layers; its trainable scalars
//! live in a [`ParamVector`], laid out layer by layer as a row-major
//! `(out, in)` weight matrix followed by the `out` biases. Gradients use the
//! same layout in a [`GradVector`].

mod checkpoint;
pub(crate) mod dense;
mod fd;
mod init;
mod matmul;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file};
pub use dense::{backward, backward_batch, forward, forward_batch, Activations};
pub use fd::finite_diff_grad;
pub use init::glorot_init;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        }
    }
}

/// One dense layer: `y = act(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            input,
            output,
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<Dense>,
}

impl NetworkSpec {
    /// Validates adjacent dimensions and softmax placement.
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::InvalidSpec(format!("layer {i} has a zero dimension")));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::InvalidSpec(format!(
                    "softmax is only allowed on the final layer (found on layer {i})"
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output != w[1].input {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].output,
                    i + 1,
                    w[1].input
                )));
            }
        }
        Ok(NetworkSpec { layers })
    }

    /// Builds `dims[0] -> dims[1] -> ...` with `hidden` on every layer but the
    /// last, which uses `head`.
    pub fn mlp(dims: &[usize], hidden: Activation, head: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidSpec("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::new(dims[i], dims[i + 1], if i + 1 == n { head } else { hidden }))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                rows: l.output as u32,
                cols: l.input as u32,
                bias: true,
            })
            .collect()
    }
}

/// Layout descriptor of one layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: u32,
    pub cols: u32,
    pub bias: bool,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        let (r, c) = (self.rows as usize, self.cols as usize);
        r * c + if self.bias { r } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn layout_len(layout: &[LayerShape]) -> usize {
    layout.iter().map(LayerShape::len).sum()
}

/// Flat trainable parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl ParamVector {
    pub fn from_parts(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let expected = layout_len(&layout);
        if values.len() != expected {
            return Err(Error::dim("parameter vector", expected, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("parameter {i}"),
                step: 0,
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that these parameters fit `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(Error::Layout(format!(
                "parameters have {} layers / {} values, network needs {} layers / {} values",
                self.layout.len(),
                self.values.len(),
                spec.layers().len(),
                spec.param_count()
            )));
        }
        Ok(())
    }

    /// Concatenates several parameter vectors (layouts appended in order).
    pub fn concat(parts: &[&ParamVector]) -> Self {
        let mut values = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut layout = Vec::new();
        for p in parts {
            values.extend_from_slice(&p.values);
            layout.extend_from_slice(&p.layout);
        }
        ParamVector { values, layout }
    }

    /// Order-sensitive 64-bit fingerprint of the values (FNV-1a over bits).
    pub fn checksum(&self) -> u64 {
        checksum(&self.values)
    }

    /// `p - lr * g`, refusing non-finite gradients.
    pub fn sgd_step(&self, grads: &GradVector, lr: f64) -> Result<ParamVector> {
        sgd_step(self, grads, lr, 0)
    }

    /// In-place `p += scale * dir`.
    pub fn axpy(&mut self, scale: f64, dir: &[f64]) -> Result<()> {
        if dir.len() != self.values.len() {
            return Err(Error::dim("update direction", self.values.len(), dir.len()));
        }
        for (p, d) in self.values.iter_mut().zip(dir) {
            *p += scale * d;
        }
        Ok(())
    }
}

pub(crate) fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Gradient of a scalar loss with respect to a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl GradVector {
    pub fn zeros_like(params: &ParamVector) -> Self {
        GradVector {
            values: vec![0.0; params.len()],
            layout: params.layout.clone(),
        }
    }

    pub fn from_parts(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let expected = layout_len(&layout);
        if values.len() != expected {
            return Err(Error::dim("gradient vector", expected, values.len()));
        }
        Ok(GradVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &GradVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout("gradient layouts differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn concat(parts: &[&GradVector]) -> Self {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for p in parts {
            values.extend_from_slice(&p.values);
            layout.extend_from_slice(&p.layout);
        }
        GradVector { values, layout }
    }
}

/// One plain SGD step. `step` is only used to label errors.
pub fn sgd_step(params: &ParamVector, grads: &GradVector, lr: f64, step: usize) -> Result<ParamVector> {
    if params.layout != grads.layout {
        return Err(Error::Layout("gradient layout differs from parameters".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            step,
        });
    }
    let values = params
        .values
        .iter()
        .zip(&grads.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParamVector {
        values,
        layout: params.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec::mlp(&[3, 2], Activation::Linear, Activation::Linear).unwrap()
    }

    #[test]
    fn spec_rejects_mismatched_dims() {
        let err = NetworkSpec::new(vec![
            Dense::new(4, 3, Activation::Relu),
            Dense::new(2, 1, Activation::Linear),
        ]);
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_rejects_inner_softmax() {
        let err = NetworkSpec::new(vec![
            Dense::new(4, 3, Activation::Softmax),
            Dense::new(3, 1, Activation::Linear),
        ]);
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn layout_length_matches_param_count() {
        let spec = NetworkSpec::mlp(&[5, 4, 3], Activation::Relu, Activation::Softmax).unwrap();
        assert_eq!(spec.param_count(), 5 * 4 + 4 + 4 * 3 + 3);
        assert_eq!(layout_len(&spec.layout()), spec.param_count());
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let p = ParamVector::from_parts(vec![1.0; 8], tiny().layout()).unwrap();
        let g = GradVector::from_parts(vec![3.0; 8], tiny().layout()).unwrap();
        assert_eq!(p.sgd_step(&g, 0.0).unwrap(), p);
    }

    #[test]
    fn sgd_arithmetic() {
        let p = ParamVector::from_parts(vec![1.0; 8], tiny().layout()).unwrap();
        let g = GradVector::from_parts(vec![2.0; 8], tiny().layout()).unwrap();
        let next = p.sgd_step(&g, 0.1).unwrap();
        assert!(next.values().iter().all(|v| (v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn sgd_rejects_nan_gradient_with_step() {
        let p = ParamVector::zeros(&tiny());
        let mut g = GradVector::zeros_like(&p);
        g.values_mut()[2] = f64::NAN;
        match sgd_step(&p, &g, 0.1, 17) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 17),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn from_parts_rejects_non_finite() {
        assert!(ParamVector::from_parts(vec![f64::INFINITY; 8], tiny().layout()).is_err());
    }
}
