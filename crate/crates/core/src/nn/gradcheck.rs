//! Finite-difference audit of the analytic backward pass.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::loss::total_loss;
use super::network::{batch_loss, Network, NetworkParams};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are zero up to
/// round-off do not blow the ratio up.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Central-difference step.
    pub epsilon: f64,
    pub l2_beta: f64,
    pub batch: usize,
    /// Test hook: perturbs one analytic gradient entry before comparison.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            epsilon: 1e-3,
            l2_beta: 5e-4,
            batch: 2,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params_checked: usize,
    pub max_rel_error: f64,
    /// Flat index (layer order, weights before bias) of the worst parameter.
    pub worst_index: usize,
    /// Parameters whose central difference straddles a ReLU kink (some ReLU
    /// input changes sign between `theta - eps` and `theta + eps`). The
    /// objective is not differentiable along that step, so they are left out
    /// of `max_rel_error`.
    pub kink_skipped: usize,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// 9x9x3 input, two 3x3 convolutions, dense(25), sigmoid.
pub fn mini_network_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [9, 9, 3],
        layers: vec![
            LayerSpec::conv(4),
            LayerSpec::Relu,
            LayerSpec::conv(4),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(25),
            LayerSpec::Sigmoid,
        ],
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn objective(net: &Network<f64>, input: &Tensor<f64>, target: &Tensor<f64>, beta: f64) -> Result<f64> {
    let out = net.predict(input)?;
    Ok(total_loss(batch_loss(&out, target)?, net.params(), beta))
}

fn slot(net: &mut Network<f64>, index: usize) -> &mut f64 {
    net.params_mut().value_mut(index).expect("index in range")
}

/// Compares analytic gradients of `spec` against central differences in f64.
pub fn check_network(spec: &NetworkSpec, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = NetworkParams::<f64>::he_uniform(spec, opts.seed)?;
    // Zero biases put pre-activations of all-dead windows exactly on the ReLU
    // kink, where central differences are meaningless.
    for lp in params.layers_mut().iter_mut().flatten() {
        for b in lp.bias.data_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let mut net = Network::new(spec.clone(), params)?;

    let mut shape = vec![opts.batch];
    shape.extend_from_slice(&spec.input_shape);
    let input_len = opts.batch * spec.input_len();
    let input = Tensor::from_vec(
        &shape,
        (0..input_len).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let target = Tensor::from_vec(
        &[opts.batch, 25],
        (0..opts.batch * 25)
            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect(),
    )?;

    let (_, cache) = net.forward(&input, Mode::Inference, &mut rng)?;
    let grads = net.backward(cache, &target, opts.l2_beta)?;
    let mut analytic: Vec<f64> = grads.values().copied().collect();
    if opts.corrupt_gradient {
        let i = analytic.len() / 2;
        analytic[i] += 1.0;
    }

    let base_pattern = net.relu_pattern(&input)?;
    let mut max_rel = 0.0f64;
    let mut worst = 0;
    let mut kink_skipped = 0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *slot(&mut net, i);
        *slot(&mut net, i) = original + opts.epsilon;
        let plus = objective(&net, &input, &target, opts.l2_beta)?;
        let plus_pattern = net.relu_pattern(&input)?;
        *slot(&mut net, i) = original - opts.epsilon;
        let minus = objective(&net, &input, &target, opts.l2_beta)?;
        let minus_pattern = net.relu_pattern(&input)?;
        *slot(&mut net, i) = original;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            kink_skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let rel = relative_error(a, numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }

    Ok(GradcheckReport {
        params_checked: analytic.len(),
        max_rel_error: max_rel,
        worst_index: worst,
        kink_skipped,
        elapsed: start.elapsed(),
    })
}

/// Audit on the standard mini-network.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    check_network(&mini_network_spec(), opts)
}
