use rand::Rng;
use rand_distr::Uniform;

use super::{NetworkSpec, ParamVector};
use crate::par;

/// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`) and zero biases.
pub fn glorot_init(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = par::stream(seed, &[0x6c6f_726f_74]);
    let mut params = ParamVector::zeros(spec);
    let values = params.values_mut();
    let mut offset = 0;
    for l in spec.layers() {
        let limit = (6.0 / (l.input + l.output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
        let n = l.input * l.output;
        for v in &mut values[offset..offset + n] {
            *v = rng.sample(dist);
        }
        offset += n + l.output;
    }
    params
}
