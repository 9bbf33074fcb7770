use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Mode};
use super::loss::{bce_unchecked, OUTPUT_UNITS};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Weights and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Learned parameters keyed by layer index (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    layers: Vec<Option<LayerParams<T>>>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = NetworkParams<T>;

/// `(weight shape, bias shape)` of a parameterized layer.
type ParamShape = (Vec<usize>, Vec<usize>);

fn param_shapes(spec: &NetworkSpec) -> Result<Vec<Option<ParamShape>>> {
    let shapes = spec.validate()?;
    let mut prev = spec.input_shape.to_vec();
    let mut out = Vec::with_capacity(spec.layers.len());
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        out.push(match *layer {
            LayerSpec::Convolution { feature_maps, .. } => {
                Some((vec![feature_maps, 3, 3, prev[2]], vec![feature_maps]))
            }
            LayerSpec::Dense { units } => Some((vec![prev[0], units], vec![units])),
            _ => None,
        });
        prev = shape.clone();
    }
    Ok(out)
}

impl<T: Real> NetworkParams<T> {
    /// All-zero parameters for `spec`.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let layers = param_shapes(spec)?
            .into_iter()
            .map(|s| {
                s.map(|(w, b)| LayerParams {
                    weights: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
            })
            .collect();
        Ok(Self { layers })
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn he_uniform(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec)?;
        for lp in params.layers.iter_mut().flatten() {
            let shape = lp.weights.shape();
            let fan_in: usize = match shape.len() {
                4 => shape[1] * shape[2] * shape[3],
                _ => shape[0],
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in lp.weights.data_mut() {
                *w = T::from_f64(rng.gen_range(-limit..limit));
            }
        }
        Ok(params)
    }

    pub fn from_layers(layers: Vec<Option<LayerParams<T>>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Option<LayerParams<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams<T>> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|lp| lp.weights.len() + lp.bias.len())
            .sum()
    }

    /// `sum(W^2)` over weight tensors; biases are not included.
    pub fn weight_sum_squares(&self) -> T {
        self.layers
            .iter()
            .flatten()
            .map(|lp| lp.weights.sum_squares())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|lp| lp.weights.all_finite() && lp.bias.all_finite())
    }

    /// Checks tensor shapes against the layout of `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = param_shapes(spec)?;
        if expected.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "parameters cover {} layers but the layout has {}",
                self.layers.len(),
                expected.len()
            )));
        }
        for (i, (exp, got)) in expected.iter().zip(&self.layers).enumerate() {
            match (exp, got) {
                (None, None) => {}
                (Some((w, b)), Some(lp))
                    if lp.weights.shape() == w.as_slice() && lp.bias.shape() == b.as_slice() => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "layer {i}: parameter shapes do not match the layout"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Flat view over every scalar, weights before bias, in layer order.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|lp| lp.weights.data().iter().chain(lp.bias.data()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flatten().flat_map(|lp| {
            let LayerParams { weights, bias } = lp;
            weights.data_mut().iter_mut().chain(bias.data_mut().iter_mut())
        })
    }

    /// Mutable access to one scalar by its flat index in [`NetworkParams::values`] order.
    pub fn value_mut(&mut self, mut index: usize) -> Option<&mut T> {
        for lp in self.layers.iter_mut().flatten() {
            for t in [&mut lp.weights, &mut lp.bias] {
                if index < t.len() {
                    return Some(&mut t.data_mut()[index]);
                }
                index -= t.len();
            }
        }
        None
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a = *a + b;
        }
    }

    /// `self += scale * other`.
    pub fn accumulate_scaled(&mut self, other: &Self, scale: T) {
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a = *a + scale * b;
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|lp| LayerParams {
                        weights: lp.weights.cast(),
                        bias: lp.bias.cast(),
                    })
                })
                .collect(),
        }
    }
}

enum Record<T> {
    Conv { input_shape: Vec<usize>, cols: Vec<T> },
    Dense { input: Tensor<T> },
    Relu { output: Tensor<T> },
    Sigmoid { output: Tensor<T> },
    Dropout { mask: Option<Tensor<T>> },
    Flatten { input_shape: Vec<usize> },
}

/// Activations retained by one training-mode forward pass.
///
/// Consumed by [`Network::backward`]; a cache is only valid for the network
/// instance and parameter generation that produced it.
pub struct ForwardCache<T> {
    network_id: u64,
    generation: u64,
    records: Vec<Record<T>>,
    output: Tensor<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Network output, `N x 25`.
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

/// A validated layout together with its parameters.
#[derive(Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: NetworkParams<T>,
    id: u64,
    generation: u64,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, params: NetworkParams<T>) -> Result<Self> {
        params.check_against(&spec)?;
        Ok(Self {
            spec,
            params,
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        self.generation += 1;
        &mut self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, NetworkParams<T>) {
        (self.spec, self.params)
    }

    fn batched_input(&self, input: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
        let sample = self.spec.input_shape;
        let shape = input.shape();
        if shape == sample {
            let mut s = vec![1];
            s.extend_from_slice(&sample);
            Ok((input.clone().reshape(&s)?, true))
        } else if shape.len() == 4 && shape[1..] == sample {
            Ok((input.clone(), false))
        } else {
            Err(Error::Shape(format!(
                "network expects input {:?} (optionally batched), got {shape:?}",
                sample
            )))
        }
    }

    fn run<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        keep: bool,
    ) -> Result<(Tensor<T>, Vec<Record<T>>, bool)> {
        let (mut x, single) = self.batched_input(input)?;
        let n = x.shape()[0];
        let mut records = Vec::with_capacity(if keep { self.spec.layers.len() } else { 0 });
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let params = self.params.layer(i);
            let (next, record) = match layer {
                LayerSpec::Convolution { padding, .. } => {
                    let lp = params.expect("validated layout");
                    let (y, cols) =
                        layers::conv2d_forward_with_cols(&x, &lp.weights, &lp.bias, *padding)?;
                    let rec = keep.then(|| Record::Conv {
                        input_shape: x.shape().to_vec(),
                        cols,
                    });
                    (y, rec)
                }
                LayerSpec::Dense { .. } => {
                    let lp = params.expect("validated layout");
                    let y = layers::dense_forward_batch(&x, &lp.weights, &lp.bias)?;
                    (y, keep.then_some(Record::Dense { input: x }))
                }
                LayerSpec::Relu => {
                    let y = layers::relu(&x);
                    let rec = keep.then(|| Record::Relu { output: y.clone() });
                    (y, rec)
                }
                LayerSpec::Sigmoid => {
                    let y = layers::sigmoid(&x);
                    let rec = keep.then(|| Record::Sigmoid { output: y.clone() });
                    (y, rec)
                }
                LayerSpec::Dropout { rate } => {
                    let (y, mask) = layers::dropout(&x, *rate, mode, rng)?;
                    (y, keep.then_some(Record::Dropout { mask }))
                }
                LayerSpec::Flatten => {
                    let input_shape = x.shape().to_vec();
                    let width = x.len() / n;
                    let y = x.reshape(&[n, width])?;
                    (y, keep.then_some(Record::Flatten { input_shape }))
                }
                LayerSpec::Pooling { .. } => unreachable!("rejected by validation"),
            };
            if let Some(r) = record {
                records.push(r);
            }
            x = next;
        }
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok((x, records, single))
    }

    /// Training-mode forward pass that keeps the activations needed by
    /// [`Network::backward`]. Output is `N x 25` (or `25` for an unbatched input).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (out, records, single) = self.run(input, mode, rng, true)?;
        let cache = ForwardCache {
            network_id: self.id,
            generation: self.generation,
            records,
            output: out.clone(),
        };
        let out = if single { out.reshape(&[OUTPUT_UNITS])? } else { out };
        Ok((out, cache))
    }

    /// Inference-mode output without retaining activations. Safe to call
    /// concurrently.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (out, _, single) = self.run(input, Mode::Inference, &mut rng, false)?;
        if single {
            out.reshape(&[OUTPUT_UNITS])
        } else {
            Ok(out)
        }
    }

    /// Sign pattern (`> 0`) of every ReLU input for an inference-mode pass.
    pub(crate) fn relu_pattern(&self, input: &Tensor<T>) -> Result<Vec<bool>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (_, records, _) = self.run(input, Mode::Inference, &mut rng, true)?;
        Ok(records
            .iter()
            .filter_map(|r| match r {
                Record::Relu { output } => Some(output.data()),
                _ => None,
            })
            .flat_map(|d| d.iter().map(|&v| v > T::zero()))
            .collect())
    }

    /// Analytic gradient of
    /// `mean_n(BCE(output_n, target_n)) + beta * 1/2 * sum(W^2)`.
    ///
    /// `target` is `N x 25` (or `25`) in the same order as the forward batch.
    pub fn backward(
        &self,
        cache: ForwardCache<T>,
        target: &Tensor<T>,
        beta: f64,
    ) -> Result<Gradients<T>> {
        if cache.network_id != self.id || cache.generation != self.generation {
            return Err(Error::State(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        if cache.records.len() != self.spec.layers.len() {
            return Err(Error::State("forward cache is incomplete".into()));
        }
        let out = &cache.output;
        if target.len() != out.len() {
            return Err(Error::Shape(format!(
                "target has {} values, output has {}",
                target.len(),
                out.len()
            )));
        }
        let n = out.shape()[0];
        let scale = T::one() / T::from_f64(n as f64);

        // Sigmoid followed by cross-entropy: d/dz = y_hat - y.
        let delta: Vec<T> = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| (p - y) * scale)
            .collect();
        let mut grad = Tensor::from_vec(out.shape(), delta)?;

        let mut grads = NetworkParams::zeros(&self.spec)?;
        let last = self.spec.layers.len() - 1;
        let mut records = cache.records;
        records.pop();
        for i in (0..last).rev() {
            let record = records.pop().expect("one record per layer");
            let want_input = i > 0;
            grad = match record {
                Record::Conv { input_shape, cols } => {
                    let lp = self.params.layer(i).expect("validated layout");
                    let padding = match self.spec.layers[i] {
                        LayerSpec::Convolution { padding, .. } => padding,
                        _ => unreachable!(),
                    };
                    let g = layers::conv2d_backward(
                        &input_shape,
                        &cols,
                        &lp.weights,
                        padding,
                        &grad,
                        want_input,
                    )?;
                    grads.layers[i] = Some(LayerParams {
                        weights: g.kernels,
                        bias: g.bias,
                    });
                    match g.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                Record::Dense { input } => {
                    let lp = self.params.layer(i).expect("validated layout");
                    let g = layers::dense_backward(&input, &lp.weights, &grad, want_input)?;
                    grads.layers[i] = Some(LayerParams {
                        weights: g.weights,
                        bias: g.bias,
                    });
                    match g.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                Record::Relu { output } => {
                    let d: Vec<T> = grad
                        .data()
                        .iter()
                        .zip(output.data())
                        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                        .collect();
                    Tensor::from_vec(grad.shape(), d)?
                }
                Record::Sigmoid { output } => {
                    let d: Vec<T> = grad
                        .data()
                        .iter()
                        .zip(output.data())
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect();
                    Tensor::from_vec(grad.shape(), d)?
                }
                Record::Dropout { mask } => match mask {
                    Some(m) => {
                        let d: Vec<T> = grad
                            .data()
                            .iter()
                            .zip(m.data())
                            .map(|(&g, &k)| g * k)
                            .collect();
                        Tensor::from_vec(grad.shape(), d)?
                    }
                    None => grad,
                },
                Record::Flatten { input_shape } => grad.reshape(&input_shape)?,
            };
        }

        if beta != 0.0 {
            let b = T::from_f64(beta);
            for (g, p) in grads.layers.iter_mut().zip(&self.params.layers) {
                if let (Some(g), Some(p)) = (g, p) {
                    for (gw, &w) in g.weights.data_mut().iter_mut().zip(p.weights.data()) {
                        *gw = *gw + b * w;
                    }
                }
            }
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(grads)
    }
}

/// Mean summed-BCE over a batch of `N x 25` outputs.
pub fn batch_loss<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if output.len() != target.len() || !output.len().is_multiple_of(OUTPUT_UNITS) {
        return Err(Error::Shape("batch loss needs matching N x 25 tensors".into()));
    }
    let n = output.len() / OUTPUT_UNITS;
    let sum: T = output
        .data()
        .chunks_exact(OUTPUT_UNITS)
        .zip(target.data().chunks_exact(OUTPUT_UNITS))
        .map(|(p, y)| bce_unchecked(p, y))
        .sum();
    Ok(sum / T::from_f64(n as f64))
}
