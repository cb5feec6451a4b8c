#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vmcr2::MembershipMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.sample(StandardNormal))
}

pub fn unit_columns(r: &mut ChaCha8Rng, d: usize, m: usize) -> Array2<f64> {
    let mut z = gaussian(r, d, m);
    for mut c in z.columns_mut() {
        let n = c.dot(&c).sqrt();
        c.mapv_inplace(|x| x / n);
    }
    z
}

/// Labels with every class present.
pub fn labels(r: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    (0..m).map(|i| if i < k { i } else { r.random_range(0..k) }).collect()
}

pub fn one_hot(r: &mut ChaCha8Rng, m: usize, k: usize) -> MembershipMatrix {
    MembershipMatrix::one_hot(&labels(r, m, k), k).unwrap()
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(a).max(frobenius(b)).max(1e-300)
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn central_diff(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let fp = f(&xp);
        xp[idx] = orig - h;
        let fm = f(&xp);
        xp[idx] = orig;
        g[idx] = (fp - fm) / (2.0 * h);
    }
    g
}
