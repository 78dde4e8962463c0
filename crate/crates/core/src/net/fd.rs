use super::{GradVector, ParamVector};

/// Central-difference gradient of `loss` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(loss: F, params: &ParamVector, step: f64) -> GradVector
where
    F: Fn(&ParamVector) -> f64,
{
    let mut probe = params.clone();
    let mut grad = GradVector::zeros_like(params);
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = loss(&probe);
        probe.values_mut()[i] = orig - step;
        let down = loss(&probe);
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetworkSpec};

    fn scalar(v: f64) -> ParamVector {
        let spec = NetworkSpec::mlp(&[1, 1], Activation::Linear, Activation::Linear).unwrap();
        ParamVector::from_parts(vec![v, 0.0], spec.layout()).unwrap()
    }

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|p| 0.5 * p.values()[0].powi(2), &scalar(3.0), 1e-6);
        assert!((g.values()[0] - 3.0).abs() < 1e-6);
        assert_eq!(g.values()[1], 0.0);
    }

    #[test]
    fn constant_loss() {
        let g = finite_diff_grad(|_| 4.2, &scalar(-1.0), 1e-6);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }
}
