use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Split};
use crate::par;

/// Default per-pixel noise of [`synth_dataset`].
pub const SYNTH_NOISE: f64 = 0.05;

/// Gaussian class prototypes plus noise, clipped to `[0, 1]`. Labels cycle
/// through the classes so counts differ by at most one.
pub fn synth_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    synth_dataset_with_noise(n, dim, classes, SYNTH_NOISE, seed)
}

pub fn synth_dataset_with_noise(n: usize, dim: usize, classes: usize, noise: f64, seed: u64) -> Dataset {
    assert!(n > 0 && dim > 0 && classes > 0 && classes <= 256);
    let prototypes = synth_prototypes(dim, classes, seed);
    let mut rng = par::stream(seed, &[0x73616d70]);
    let mut pixels = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c as u8);
        for &p in &prototypes[c * dim..(c + 1) * dim] {
            let z: f64 = rng.sample(StandardNormal);
            pixels.push((p + noise * z).clamp(0.0, 1.0));
        }
    }
    let side = (dim as f64).sqrt().round() as usize;
    let dims = if side * side == dim { (1, side, side) } else { (1, 1, dim) };
    Dataset::new(pixels, labels, classes, dims, Split::Train).expect("valid by construction")
}

/// The class prototypes used by [`synth_dataset`] for the same seed.
pub fn synth_prototypes(dim: usize, classes: usize, seed: u64) -> Vec<f64> {
    let mut rng = par::stream(seed, &[0x70726f74]);
    (0..dim * classes)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (0.5 + 0.25 * z).clamp(0.0, 1.0)
        })
        .collect()
}
