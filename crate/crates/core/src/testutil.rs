use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coding_rate::MembershipMatrix;
use crate::rng::gaussian_matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    gaussian_matrix(rng, rows, cols)
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let b = gaussian(rng, n, n);
    let mut m = b.dot(&b.t());
    crate::numerics::symmetrize_inplace(&mut m);
    m
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let b = gaussian(rng, n, n);
    (&b + &b.t()) * 0.5
}

pub fn unit_columns(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Array2<f64> {
    let mut z = gaussian(rng, d, m);
    for mut c in z.columns_mut() {
        let n = c.dot(&c).sqrt();
        c.mapv_inplace(|x| x / n);
    }
    z
}

/// One-hot membership with every class represented.
pub fn random_one_hot(rng: &mut ChaCha8Rng, m: usize, k: usize) -> MembershipMatrix<f64> {
    let labels: Vec<usize> = (0..m)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    MembershipMatrix::one_hot(&labels, k).unwrap()
}

/// Soft membership: random row-stochastic weights.
pub fn random_soft(rng: &mut ChaCha8Rng, m: usize, k: usize) -> MembershipMatrix<f64> {
    let mut p = Array2::zeros((m, k));
    for i in 0..m {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        for j in 0..k {
            p[[i, j]] = row[j] / s;
        }
    }
    MembershipMatrix::new(p).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Max relative error between two gradients, normalized by the larger norm.
pub fn grad_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).iter().map(|x| x * x).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central finite differences of `f` at `x`.
pub fn finite_diff(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
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
