use proptest::prelude::*;
use semcast::channel::{demap, modulate, quantize, BitVector};
use semcast::data::ssim;
use semcast::trilevel::project_simplex;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn projection_lands_on_simplex(raw in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let p = project_simplex(&raw).unwrap();
        prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent(raw in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let p = project_simplex(&raw).unwrap();
        let q = project_simplex(p.as_slice()).unwrap();
        prop_assert_eq!(p.as_slice(), q.as_slice());
    }

    #[test]
    fn projection_is_non_expansive(
        pair in (1usize..8).prop_flat_map(|n| (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        ))
    ) {
        let (a, b) = pair;
        let (pa, pb) = (project_simplex(&a).unwrap(), project_simplex(&b).unwrap());
        prop_assert!(dist(pa.as_slice(), pb.as_slice()) <= dist(&a, &b) + 1e-12);
    }

    #[test]
    fn bits_survive_modulation(bits in prop::collection::vec(0u8..2, 0..256)) {
        let bits = BitVector(bits);
        prop_assert_eq!(demap(&modulate(&bits)), bits.clone());
        prop_assert_eq!(quantize(&modulate(&bits)), bits);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(
        pair in (2usize..64).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        ))
    ) {
        let (a, b) = pair;
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}
