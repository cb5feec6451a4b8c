//! Multilayer perceptron featurizer `f_θ` with hand-written forward and
//! reverse passes.
//!
//! Layers are affine maps with a rectifier on every hidden layer; the last
//! affine output is normalized column-wise onto the unit sphere, so features
//! always satisfy the unit-norm constraint.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::coding_rate::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{gaussian_matrix, substream, Stream};
use crate::scalar::Scalar;

/// Columns with a smaller pre-normalization norm are nudged along `e₁`.
pub const NORM_SAFEGUARD: f64 = 1e-12;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCRK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// out × in
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// Layer widths `(D, h₁, …, d)`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weight.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len());
        if same {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.sizes(),
                other.sizes()
            )))
        }
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes need at least two positive entries, got {sizes:?}"
        )));
    }
    Ok(())
}

/// Gaussian weights scaled by `1/√fan_in`, zero biases.
pub fn init<T: Scalar>(sizes: &[usize], seed: u64) -> Result<MlpParams<T>> {
    validate_sizes(sizes)?;
    let mut rng = substream(seed, Stream::Init);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = T::one() / T::from_usize(fan_in).expect("fan-in").sqrt();
            Layer {
                weight: gaussian_matrix::<T, _>(&mut rng, fan_out, fan_in).mapv(|x| x * scale),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each layer (the batch itself for layer 0).
    pub inputs: Vec<Array2<T>>,
    /// Affine output of each layer before the rectifier / normalization.
    pub pre: Vec<Array2<T>>,
    /// Norm of each (safeguarded) output column before normalization.
    pub norms: Vec<T>,
    /// Columns whose pre-normalization norm fell below the safeguard.
    pub safeguarded: Vec<bool>,
    pub output: Array2<T>,
}

fn affine<T: Scalar>(layer: &Layer<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut out = layer.weight.dot(&x);
    out += &layer.bias.view().insert_axis(Axis(1));
    out
}

/// Maps a D×m batch to unit-norm d×m features.
pub fn forward<T: Scalar>(params: &MlpParams<T>, x: ArrayView2<T>) -> Result<(FeatureMatrix<T>, ForwardCache<T>)> {
    if x.nrows() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} rows, network expects {}",
            x.nrows(),
            params.input_dim()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut h = x.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let a = affine(layer, h.view());
        inputs.push(h);
        h = if i == last {
            a.clone()
        } else {
            a.mapv(|v| v.max(T::zero()))
        };
        pre.push(a);
    }
    let mut out = h;
    let mut norms = Vec::with_capacity(out.ncols());
    let mut safeguarded = Vec::with_capacity(out.ncols());
    let safeguard = T::lit(NORM_SAFEGUARD);
    for mut col in out.columns_mut() {
        let mut n = col.dot(&col).sqrt();
        let tiny = n < safeguard;
        if tiny {
            col[0] += safeguard;
            n = col.dot(&col).sqrt();
        }
        col.mapv_inplace(|v| v / n);
        norms.push(n);
        safeguarded.push(tiny);
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite features in forward pass".into()));
    }
    let cache = ForwardCache {
        inputs,
        pre,
        norms,
        safeguarded,
        output: out.clone(),
    };
    Ok((FeatureMatrix::new_unchecked(out), cache))
}

/// Forward pass without keeping intermediates.
pub fn features<T: Scalar>(params: &MlpParams<T>, x: ArrayView2<T>) -> Result<FeatureMatrix<T>> {
    Ok(forward(params, x)?.0)
}

/// Gradient of a loss with respect to every parameter, given `∂L/∂Z`.
pub fn backward<T: Scalar>(params: &MlpParams<T>, cache: &ForwardCache<T>, dl_dz: ArrayView2<T>) -> Result<MlpParams<T>> {
    if dl_dz.dim() != cache.output.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, features are {:?}",
            dl_dz.dim(),
            cache.output.dim()
        )));
    }
    if cache.pre.len() != params.layers.len() {
        return Err(Error::Shape("cache does not match the network depth".into()));
    }
    // normalization: (I − zzᵀ)/‖u‖ per column; a safeguarded column sits at
    // the singular point u = 0 and passes no gradient
    let mut delta = dl_dz.to_owned();
    for (((mut g, z), &n), &tiny) in delta
        .columns_mut()
        .into_iter()
        .zip(cache.output.columns())
        .zip(&cache.norms)
        .zip(&cache.safeguarded)
    {
        if tiny {
            g.fill(T::zero());
            continue;
        }
        let radial = z.dot(&g);
        g.zip_mut_with(&z, |gi, &zi| *gi = (*gi - radial * zi) / n);
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let input = &cache.inputs[i];
        let weight_grad = delta.dot(&input.t());
        let bias_grad = delta.sum_axis(Axis(1));
        if i > 0 {
            let mut upstream = params.layers[i].weight.t().dot(&delta);
            upstream.zip_mut_with(&cache.pre[i - 1], |g, &a| {
                if a <= T::zero() {
                    *g = T::zero();
                }
            });
            delta = upstream;
        }
        grads.push(Layer {
            weight: weight_grad,
            bias: bias_grad,
        });
    }
    grads.reverse();
    Ok(MlpParams { layers: grads })
}

/// `θ − ν θ'`.
pub fn sgd_step<T: Scalar>(params: &MlpParams<T>, grads: &MlpParams<T>, nu_theta: T) -> Result<MlpParams<T>> {
    params.check_same_shape(grads)?;
    let mut out = params.clone();
    for (layer, g) in out.layers.iter_mut().zip(&grads.layers) {
        layer.weight.scaled_add(-nu_theta, &g.weight);
        layer.bias.scaled_add(-nu_theta, &g.bias);
    }
    Ok(out)
}

/// Writes the `MCRK` container: magic, version, layer count and sizes as
/// little-endian `u32`, then each layer's row-major weight followed by its
/// bias as little-endian `f64`.
pub fn write_checkpoint<T: Scalar, W: Write>(params: &MlpParams<T>, mut out: W) -> Result<()> {
    let sizes = params.sizes();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for s in &sizes {
        out.write_all(&(*s as u32).to_le_bytes())?;
    }
    for layer in &params.layers {
        for row in layer.weight.rows() {
            for v in row {
                out.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        for v in &layer.bias {
            out.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::TruncatedPayload(format!("checkpoint ends inside {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<MlpParams<T>> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::TruncatedPayload("checkpoint shorter than its header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::WrongMagic {
            expected: u32::from_be_bytes(*CHECKPOINT_MAGIC),
            found: u32::from_be_bytes(magic),
        });
    }
    let version = read_u32(&mut input, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut input, "layer count")? as usize;
    let sizes = (0..count)
        .map(|_| read_u32(&mut input, "layer sizes").map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    validate_sizes(&sizes)?;
    let read_f64 = |input: &mut R| -> Result<T> {
        let mut buf = [0u8; 8];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::TruncatedPayload("checkpoint ends inside a weight block".into()))?;
        Ok(T::lit(f64::from_le_bytes(buf)))
    };
    let mut layers = Vec::with_capacity(count - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut weight = Array2::zeros((fan_out, fan_in));
        for r in 0..fan_out {
            for c in 0..fan_in {
                weight[[r, c]] = read_f64(&mut input)?;
            }
        }
        let mut bias = Array1::zeros(fan_out);
        for b in bias.iter_mut() {
            *b = read_f64(&mut input)?;
        }
        layers.push(Layer { weight, bias });
    }
    Ok(MlpParams { layers })
}

pub fn save_checkpoint<T: Scalar>(params: &MlpParams<T>, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &std::path::Path) -> Result<MlpParams<T>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use ndarray::array;

    fn flat(params: &MlpParams<f64>) -> Vec<f64> {
        params
            .layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    fn with_flat(params: &MlpParams<f64>, values: &[f64]) -> MlpParams<f64> {
        let mut out = params.clone();
        let mut it = values.iter();
        for l in &mut out.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        out
    }

    fn randomize_biases(params: &mut MlpParams<f64>, seed: u64) {
        let mut r = rng(seed);
        for l in &mut params.layers {
            let n = l.bias.len();
            l.bias = gaussian(&mut r, n, 1).column(0).to_owned() * 0.1;
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init::<f64>(&[4, 8, 3], 7).unwrap();
        let b = init::<f64>(&[4, 8, 3], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers[0].weight.dim(), (8, 4));
        assert_eq!(a.layers[1].weight.dim(), (3, 8));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&x| x == 0.0)));
        assert_ne!(a, init::<f64>(&[4, 8, 3], 8).unwrap());
        assert!(init::<f64>(&[4], 1).is_err());
        assert!(init::<f64>(&[4, 0, 2], 1).is_err());
    }

    #[test]
    fn outputs_are_unit_norm() {
        let p = init::<f64>(&[5, 7, 4], 1).unwrap();
        let mut r = rng(2);
        let x = gaussian(&mut r, 5, 11);
        let (z, cache) = forward(&p, x.view()).unwrap();
        for c in z.view().columns() {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-10);
        }
        assert_eq!(cache.output, features(&p, x.view()).unwrap().into_inner());
    }

    #[test]
    fn identity_network() {
        let p = MlpParams {
            layers: vec![Layer { weight: Array2::<f64>::eye(3), bias: Array1::zeros(3) }],
        };
        let x = array![[1.0], [0.0], [0.0]];
        let (z, _) = forward(&p, x.view()).unwrap();
        assert_eq!(z.into_inner(), x);
    }

    #[test]
    fn zero_output_is_safeguarded() {
        let p = MlpParams {
            layers: vec![Layer { weight: Array2::<f64>::zeros((3, 2)), bias: Array1::zeros(3) }],
        };
        let (z, cache) = forward(&p, array![[1.0], [2.0]].view()).unwrap();
        assert_eq!(z.view().column(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(cache.safeguarded, vec![true]);
        let g = backward(&p, &cache, array![[0.0], [1.0], [0.0]].view()).unwrap();
        assert!(flat(&g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init::<f64>(&[3, 5, 2], 4).unwrap();
        let mut r = rng(3);
        let x = gaussian(&mut r, 3, 6);
        let (_, cache) = forward(&p, x.view()).unwrap();
        let g = backward(&p, &cache, Array2::zeros((2, 6)).view()).unwrap();
        assert!(flat(&g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_net_hand_gradient() {
        // one sample, z = u/‖u‖ with u = W x, L = ½‖z − t‖²
        let w: Array2<f64> = array![[1.0, 2.0], [0.5, -1.0]];
        let p = MlpParams { layers: vec![Layer { weight: w.clone(), bias: Array1::zeros(2) }] };
        let x = array![[0.3], [0.7]];
        let t = array![[1.0], [0.0]];
        let (z, cache) = forward(&p, x.view()).unwrap();
        let z = z.into_inner();
        let dz = &z - &t;
        let g = backward(&p, &cache, dz.view()).unwrap();
        let u = w.dot(&x);
        let n: f64 = u.column(0).dot(&u.column(0)).sqrt();
        let zc = z.column(0);
        let dzc = dz.column(0);
        let radial = zc.dot(&dzc);
        let du: Vec<f64> = (0..2).map(|i| (dzc[i] - radial * zc[i]) / n).collect();
        for r in 0..2 {
            for c in 0..2 {
                assert!((g.layers[0].weight[[r, c]] - du[r] * x[[c, 0]]).abs() < 1e-14);
            }
            assert!((g.layers[0].bias[r] - du[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10 {
            let mut p = init::<f64>(&[4, 6, 5, 3], seed).unwrap();
            randomize_biases(&mut p, 100 + seed);
            let mut r = rng(200 + seed);
            let x = gaussian(&mut r, 4, 7);
            let target = gaussian(&mut r, 3, 7);
            // smooth test loss: Σ zᵢⱼ + ½‖z ∘ t‖²
            let loss = |params: &MlpParams<f64>| {
                let z = features(params, x.view()).unwrap().into_inner();
                z.sum() + 0.5 * (&z * &target).mapv(|v| v * v).sum()
            };
            let (z, cache) = forward(&p, x.view()).unwrap();
            let z = z.into_inner();
            let dz = z.mapv(|_| 1.0) + &(&z * &target * &target);
            let g = flat(&backward(&p, &cache, dz.view()).unwrap());
            let theta = flat(&p);
            let mut fd = vec![0.0; theta.len()];
            let h = 1e-5;
            for i in 0..theta.len() {
                let mut tp = theta.clone();
                tp[i] += h;
                let mut tm = theta.clone();
                tm[i] -= h;
                fd[i] = (loss(&with_flat(&p, &tp)) - loss(&with_flat(&p, &tm))) / (2.0 * h);
            }
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-5, "seed {seed}: {:e}", diff / norm);
        }
    }

    #[test]
    fn sgd_step_cases() {
        let p = init::<f64>(&[2, 3], 1).unwrap();
        let zero = p.zeros_like();
        assert_eq!(sgd_step(&p, &zero, 0.5).unwrap(), p);
        let g = init::<f64>(&[2, 3], 2).unwrap();
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);

        let one = MlpParams { layers: vec![Layer { weight: array![[1.0f64]], bias: array![0.0] }] };
        let grad = MlpParams { layers: vec![Layer { weight: array![[2.0]], bias: array![0.0] }] };
        let stepped = sgd_step(&one, &grad, 0.1).unwrap();
        assert!((stepped.layers[0].weight[[0, 0]] - 0.8).abs() < 1e-15);
        assert!(sgd_step(&p, &one, 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let mut p = init::<f64>(&[3, 4, 2], 9).unwrap();
        randomize_biases(&mut p, 10);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MCRK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 12 + 3 * 4 + 8 * (12 + 4 + 8 + 2));
        // first weight, row-major
        let w00 = f64::from_le_bytes(buf[24..32].try_into().unwrap());
        let w01 = f64::from_le_bytes(buf[32..40].try_into().unwrap());
        assert_eq!(w00, p.layers[0].weight[[0, 0]]);
        assert_eq!(w01, p.layers[0].weight[[0, 1]]);
        assert_eq!(read_checkpoint::<f64, _>(buf.as_slice()).unwrap(), p);

        assert!(matches!(read_checkpoint::<f64, _>(&buf[..buf.len() - 3]), Err(Error::TruncatedPayload(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint::<f64, _>(bad.as_slice()), Err(Error::WrongMagic { .. })));
    }
}
