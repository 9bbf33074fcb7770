//! Mini-batch training of a single network on patch samples.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryImage;
use crate::nn::{
    batch_loss, total_loss, Mode, Network, NetworkParams, NetworkSpec, Sgd, Tensor, TrainConfig,
    OUTPUT_UNITS, PATCH_CHANNELS, PATCH_SIZE,
};
use crate::patch::{select_centers, PatchSource, Raster, SamplingPolicy, PATCH_LEN};

/// Largest slice of a batch that goes through forward/backward at once.
/// Gradients of the slices are combined, so the update equals a full-batch one.
pub const MICRO_BATCH: usize = 32;

/// Training patches addressed lazily as (image, centre) so memory stays at
/// one padded copy per image.
#[derive(Debug, Clone)]
pub struct PatchDataset {
    sources: Vec<PatchSource>,
    index: Vec<(usize, (usize, usize))>,
    images_without_cracks: usize,
}

impl PatchDataset {
    /// Draws centres from every `(image, mask)` pair. Image `i` uses stream `i`
    /// of a ChaCha generator seeded with `policy.rng_seed`.
    pub fn build(pairs: &[(Raster, BinaryImage)], policy: &SamplingPolicy) -> Result<Self> {
        policy.validate()?;
        let mut sources = Vec::with_capacity(pairs.len());
        let mut index = Vec::new();
        let mut images_without_cracks = 0;
        for (i, (image, mask)) in pairs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
            rng.set_stream(i as u64);
            let centers = select_centers(mask, policy, &mut rng)?;
            if centers.no_crack_warning {
                images_without_cracks += 1;
            }
            index.extend(centers.iter().map(|c| (i, c)));
            sources.push(PatchSource::new(image, mask)?);
        }
        if index.is_empty() {
            return Err(Error::Dataset("no training patches could be drawn".into()));
        }
        Ok(Self {
            sources,
            index,
            images_without_cracks,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn images_without_cracks(&self) -> usize {
        self.images_without_cracks
    }

    /// Writes inputs (`n x 27 x 27 x 3`) and targets (`n x 25`) for the given sample ids.
    pub fn fill(&self, ids: &[usize], inputs: &mut Vec<f32>, targets: &mut Vec<f32>) {
        inputs.clear();
        targets.clear();
        for &id in ids {
            let (img, center) = self.index[id];
            let src = &self.sources[img];
            src.write_input(center, inputs);
            targets.extend(src.label(center).iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-patch cross-entropy over the epoch.
    pub loss: f64,
    /// `loss` plus the weight penalty at the end of the epoch.
    pub total_loss: f64,
    pub samples: usize,
}

fn batch_tensors(inputs: &[f32], targets: &[f32]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let n = targets.len() / OUTPUT_UNITS;
    Ok((
        Tensor::from_vec(&[n, PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS], inputs.to_vec())?,
        Tensor::from_vec(&[n, OUTPUT_UNITS], targets.to_vec())?,
    ))
}

/// One optimizer step on a batch given as flat inputs and targets.
/// Returns the mean data loss of the batch before the update.
pub fn train_step(
    net: &mut Network<f32>,
    sgd: &mut Sgd<f32>,
    inputs: &[f32],
    targets: &[f32],
    l2_beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = targets.len() / OUTPUT_UNITS;
    if n == 0 || inputs.len() != n * PATCH_LEN || targets.len() != n * OUTPUT_UNITS {
        return Err(Error::Shape("batch inputs and targets disagree".into()));
    }
    let mut grads: Option<NetworkParams<f32>> = None;
    let mut loss_sum = 0.0f64;
    for start in (0..n).step_by(MICRO_BATCH) {
        let end = (start + MICRO_BATCH).min(n);
        let (x, y) = batch_tensors(
            &inputs[start * PATCH_LEN..end * PATCH_LEN],
            &targets[start * OUTPUT_UNITS..end * OUTPUT_UNITS],
        )?;
        let (out, cache) = net.forward(&x, Mode::Training, rng)?;
        loss_sum += batch_loss(&out, &y)? as f64 * (end - start) as f64;
        let g = net.backward(cache, &y, l2_beta)?;
        let share = (end - start) as f32 / n as f32;
        match grads.as_mut() {
            None => {
                let mut first = g;
                first.values_mut().for_each(|v| *v *= share);
                grads = Some(first);
            }
            Some(acc) => acc.accumulate_scaled(&g, share),
        }
    }
    let loss = loss_sum / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss diverged to {loss}")));
    }
    sgd.step_network(net, grads.as_ref().expect("n > 0"))?;
    Ok(loss)
}

/// Trains a freshly initialized network. The seed drives initialization,
/// shuffling and dropout, so equal inputs give bit-identical parameters.
pub fn train_network(
    spec: &NetworkSpec,
    config: &TrainConfig,
    data: &PatchDataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Network<f32>, Vec<EpochLog>)> {
    config.validate()?;
    let spec = spec.clone().with_dropout(config.dropout_rate);
    let params = NetworkParams::<f32>::he_uniform(&spec, config.rng_seed)?;
    let mut net = Network::new(spec, params)?;
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, ids) in order.chunks(config.batch_size).enumerate() {
            data.fill(ids, &mut inputs, &mut targets);
            let loss = train_step(&mut net, &mut sgd, &inputs, &targets, config.l2_beta, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            weighted += loss * ids.len() as f64;
        }
        let loss = weighted / data.len() as f64;
        let log = EpochLog {
            epoch,
            loss,
            total_loss: total_loss(loss, &net.params().cast::<f64>(), config.l2_beta),
            samples: data.len(),
        };
        debug!("epoch {epoch}: loss {loss:.5}");
        on_epoch(&log);
        logs.push(log);
    }
    info!(
        "trained {} epochs on {} patches, final loss {:.5}",
        config.epochs,
        data.len(),
        logs.last().map_or(f64::NAN, |l| l.loss)
    );
    Ok((net, logs))
}

/// Per-epoch losses of several members as `member,epoch,loss,total_loss,samples`.
pub fn write_loss_csv(logs: &[(usize, Vec<EpochLog>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["member", "epoch", "loss", "total_loss", "samples"])?;
    for (member, epochs) in logs {
        for e in epochs {
            w.write_record([
                member.to_string(),
                e.epoch.to_string(),
                format!("{:.8}", e.loss),
                format!("{:.8}", e.total_loss),
                e.samples.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
