//! Seeded random streams. Every random draw in a run derives from one
//! top-level seed through a named substream, so the streams never interfere.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Data,
    Project,
    Split,
    Export,
    Head,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Data => 3,
            Stream::Project => 4,
            Stream::Split => 5,
            Stream::Export => 6,
            Stream::Head => 7,
        }
    }
}

pub fn substream(seed: u64, stream: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

pub fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<T> {
    // column-major draw order
    let mut m = Array2::zeros((rows, cols));
    for j in 0..cols {
        for i in 0..rows {
            let x: f64 = rng.sample(StandardNormal);
            m[[i, j]] = T::lit(x);
        }
    }
    m
}

/// Uniformly random unit vector.
pub fn unit_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| T::lit(x / norm)).collect();
        }
    }
}
