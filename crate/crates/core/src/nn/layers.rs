//! Layer primitives: 3x3 convolution, affine (dense) layer, activations and
//! inverted dropout. Activations are stored channel-last (`H x W x C`), with
//! an optional leading batch axis.

use rand::Rng;

use super::tensor::{gemm, Real, Tensor};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

fn batch_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::Shape(format!(
            "convolution expects H x W x C or N x H x W x C input, got {shape:?}"
        ))),
    }
}

fn output_extent(extent: usize, padding: usize) -> Result<usize> {
    (extent + 2 * padding)
        .checked_sub(KERNEL - 1)
        .filter(|&e| e > 0)
        .ok_or_else(|| Error::Shape(format!("extent {extent} too small for padding {padding}")))
}

/// Unfolds one `h x w x c` sample into a `(ho*wo) x (9*c)` patch matrix.
fn im2col<T: Real>(src: &[T], h: usize, w: usize, c: usize, padding: usize, cols: &mut [T]) {
    let ho = h + 2 * padding - (KERNEL - 1);
    let wo = w + 2 * padding - (KERNEL - 1);
    let row_len = KERNEL * KERNEL * c;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * row_len..][..row_len];
            for ky in 0..KERNEL {
                let iy = (oy + ky) as isize - padding as isize;
                for kx in 0..KERNEL {
                    let ix = (ox + kx) as isize - padding as isize;
                    let dst = &mut row[(ky * KERNEL + kx) * c..][..c];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let off = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&src[off..off + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
fn col2im<T: Real>(cols: &[T], h: usize, w: usize, c: usize, padding: usize, dst: &mut [T]) {
    let ho = h + 2 * padding - (KERNEL - 1);
    let wo = w + 2 * padding - (KERNEL - 1);
    let row_len = KERNEL * KERNEL * c;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * row_len..][..row_len];
            for ky in 0..KERNEL {
                let iy = (oy + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let off = (iy as usize * w + ix as usize) * c;
                    let src = &row[(ky * KERNEL + kx) * c..][..c];
                    for (d, &s) in dst[off..off + c].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn check_kernels<T: Real>(
    channels: usize,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<usize> {
    let [k, kh, kw, kc] = kernels.shape() else {
        return Err(Error::Shape(format!(
            "kernel bank must be K x 3 x 3 x C, got {:?}",
            kernels.shape()
        )));
    };
    if *kh != KERNEL || *kw != KERNEL {
        return Err(Error::Shape(format!("kernels must be 3x3, got {kh}x{kw}")));
    }
    if *kc != channels {
        return Err(Error::Shape(format!(
            "input has {channels} channels but kernels expect {kc}"
        )));
    }
    if bias.shape() != [*k] {
        return Err(Error::Shape(format!(
            "bias must have shape [{k}], got {:?}",
            bias.shape()
        )));
    }
    Ok(*k)
}

/// Convolution that also returns the unfolded patch matrix for backprop.
pub(crate) fn conv2d_forward_with_cols<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, h, w, c) = batch_dims(input.shape())?;
    let k = check_kernels(c, kernels, bias)?;
    let ho = output_extent(h, padding)?;
    let wo = output_extent(w, padding)?;
    let row_len = KERNEL * KERNEL * c;
    let rows = n * ho * wo;

    let mut cols = vec![T::zero(); rows * row_len];
    let sample_in = h * w * c;
    let sample_cols = ho * wo * row_len;
    for (src, dst) in input
        .data()
        .chunks_exact(sample_in)
        .zip(cols.chunks_exact_mut(sample_cols))
    {
        im2col(src, h, w, c, padding, dst);
    }

    let mut out = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(false, true, rows, k, row_len, &cols, kernels.data(), T::one(), &mut out);

    let shape: Vec<usize> = if input.shape().len() == 3 {
        vec![ho, wo, k]
    } else {
        vec![n, ho, wo, k]
    };
    Ok((Tensor::from_vec(&shape, out)?, cols))
}

/// 3x3, stride-1 convolution with zero padding.
///
/// `output[h, w, k] = bias[k] + sum over the 3x3xC window of input * kernels[k]`.
/// Accepts `H x W x C` or batched `N x H x W x C` input.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_forward_with_cols(input, kernels, bias, padding).map(|(out, _)| out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass of [`conv2d_forward`], given the cached patch matrix.
pub(crate) fn conv2d_backward<T: Real>(
    input_shape: &[usize],
    cols: &[T],
    kernels: &Tensor<T>,
    padding: usize,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (n, h, w, c) = batch_dims(input_shape)?;
    let k = kernels.shape()[0];
    let ho = output_extent(h, padding)?;
    let wo = output_extent(w, padding)?;
    let row_len = KERNEL * KERNEL * c;
    let rows = n * ho * wo;
    if grad_out.len() != rows * k || cols.len() != rows * row_len {
        return Err(Error::Shape("convolution gradient does not match cache".into()));
    }
    let g = grad_out.data();

    let mut d_kernels = vec![T::zero(); k * row_len];
    gemm(true, false, k, row_len, rows, g, cols, T::zero(), &mut d_kernels);

    let mut d_bias = vec![T::zero(); k];
    for row in g.chunks_exact(k) {
        for (b, &v) in d_bias.iter_mut().zip(row) {
            *b = *b + v;
        }
    }

    let d_input = if want_input_grad {
        let mut d_cols = vec![T::zero(); rows * row_len];
        gemm(false, false, rows, row_len, k, g, kernels.data(), T::zero(), &mut d_cols);
        let mut d_in = vec![T::zero(); n * h * w * c];
        for (src, dst) in d_cols
            .chunks_exact(ho * wo * row_len)
            .zip(d_in.chunks_exact_mut(h * w * c))
        {
            col2im(src, h, w, c, padding, dst);
        }
        Some(Tensor::from_vec(input_shape, d_in)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: d_input,
        kernels: Tensor::from_vec(kernels.shape(), d_kernels)?,
        bias: Tensor::from_vec(&[k], d_bias)?,
    })
}

fn check_dense<T: Real>(weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    let [d, o] = weights.shape() else {
        return Err(Error::Shape(format!(
            "dense weights must be a matrix, got {:?}",
            weights.shape()
        )));
    };
    if bias.shape() != [*o] {
        return Err(Error::Shape(format!(
            "dense bias must have shape [{o}], got {:?}",
            bias.shape()
        )));
    }
    Ok((*d, *o))
}

/// Affine layer on a batch of row vectors: `N x D` times `D x O` plus bias.
pub(crate) fn dense_forward_batch<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (d, o) = check_dense(weights, bias)?;
    let [n, di] = input.shape() else {
        return Err(Error::Shape(format!(
            "dense batch input must be N x D, got {:?}",
            input.shape()
        )));
    };
    if *di != d {
        return Err(Error::Shape(format!(
            "dense input width {di} does not match weight rows {d}"
        )));
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..*n {
        out.extend_from_slice(bias.data());
    }
    gemm(false, false, *n, o, d, input.data(), weights.data(), T::one(), &mut out);
    Tensor::from_vec(&[*n, o], out)
}

/// `flatten(input) * weights + bias` for a single sample.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (d, o) = check_dense(weights, bias)?;
    if input.len() != d {
        return Err(Error::Shape(format!(
            "flattened input has {} values but weights have {d} rows",
            input.len()
        )));
    }
    let row = input.clone().reshape(&[1, d])?;
    dense_forward_batch(&row, weights, bias)?.reshape(&[o])
}

pub(crate) struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<DenseGrads<T>> {
    let (d, o) = (weights.shape()[0], weights.shape()[1]);
    let n = input.len() / d;
    if grad_out.len() != n * o {
        return Err(Error::Shape("dense gradient does not match cache".into()));
    }
    let mut d_w = vec![T::zero(); d * o];
    gemm(true, false, d, o, n, input.data(), grad_out.data(), T::zero(), &mut d_w);
    let mut d_b = vec![T::zero(); o];
    for row in grad_out.data().chunks_exact(o) {
        for (b, &v) in d_b.iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    let d_in = if want_input_grad {
        let mut d_x = vec![T::zero(); n * d];
        gemm(false, true, n, d, o, grad_out.data(), weights.data(), T::zero(), &mut d_x);
        Some(Tensor::from_vec(input.shape(), d_x)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input: d_in,
        weights: Tensor::from_vec(&[d, o], d_w)?,
        bias: Tensor::from_vec(&[o], d_b)?,
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Branches keep exp() from overflowing for large |v|.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Inverted dropout. Returns the output and, in training mode, the mask of
/// per-element multipliers (`0` or `1 / (1 - rate)`).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Inference || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask_data: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data)?;
    let out: Vec<T> = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| v * m)
        .collect();
    Ok((Tensor::from_vec(x.shape(), out)?, Some(mask)))
}
