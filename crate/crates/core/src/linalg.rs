use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 10_000;
const START_SEED: u64 = 0x5eed_c0fa;

/// Spectral norm of a square symmetric matrix by power iteration from a fixed
/// pseudo-random start vector. Stops when successive estimates agree to 1e-8
/// relative.
pub fn spectral_norm_sym(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = a.dot(&v);
        let next = w.dot(&w).sqrt();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        if (next - estimate).abs() <= POWER_TOL * next {
            return next;
        }
        estimate = next;
    }
    estimate
}
