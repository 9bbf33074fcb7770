use serde::{Deserialize, Serialize};

use super::layers::KERNEL;
use super::loss::OUTPUT_UNITS;
use crate::error::{Error, Result};

/// Side length of the square input patch.
pub const PATCH_SIZE: usize = 27;
/// Side length of the structured output block.
pub const OUTPUT_SIZE: usize = 5;
pub const PATCH_CHANNELS: usize = 3;

/// One layer of a network layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Convolution {
        feature_maps: usize,
        #[serde(default = "default_kernel")]
        kernel_size: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Parsed only so layouts that ask for pooling fail validation with a
    /// clear message; the engine has no pooling layer.
    Pooling {
        window: usize,
    },
}

fn default_kernel() -> usize {
    KERNEL
}
fn default_stride() -> usize {
    1
}
fn default_padding() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(feature_maps: usize) -> Self {
        LayerSpec::Convolution {
            feature_maps,
            kernel_size: KERNEL,
            stride: 1,
            padding: 1,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Convolution { .. } | LayerSpec::Dense { .. })
    }
}

/// Ordered layer layout of one structured-prediction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[height, width, channels]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSpec {
    /// conv16-conv16-conv32-conv32 (each followed by ReLU), dense 64 with
    /// dropout, then 25 sigmoid outputs, on 27x27x3 patches.
    fn default() -> Self {
        use LayerSpec::*;
        Self {
            input_shape: [PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
            layers: vec![
                LayerSpec::conv(16),
                Relu,
                LayerSpec::conv(16),
                Relu,
                LayerSpec::conv(32),
                Relu,
                LayerSpec::conv(32),
                Relu,
                Flatten,
                LayerSpec::dense(64),
                Relu,
                Dropout { rate: 0.5 },
                LayerSpec::dense(OUTPUT_UNITS),
                Sigmoid,
            ],
        }
    }
}

impl NetworkSpec {
    /// Checks the layout and returns the activation shape after every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Pooling { .. } => {
                    return Err(Error::Config(format!(
                        "layer {i}: pooling layers are not supported"
                    )))
                }
                LayerSpec::Convolution {
                    feature_maps,
                    kernel_size,
                    stride,
                    padding,
                } => {
                    if kernel_size != KERNEL || stride != 1 || padding != 1 {
                        return Err(Error::Config(format!(
                            "layer {i}: convolutions must be 3x3, stride 1, padding 1"
                        )));
                    }
                    if feature_maps == 0 {
                        return Err(Error::Config(format!("layer {i}: zero feature maps")));
                    }
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: convolution needs a spatial input, got {shape:?}"
                        )));
                    }
                    vec![shape[0], shape[1], feature_maps]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(Error::Config(format!(
                            "layer {i}: dense layer needs a flattened input, got {shape:?}"
                        )));
                    }
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: zero dense units")));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => shape,
            };
            shapes.push(shape.clone());
        }
        match (self.layers.last(), shapes.last()) {
            (Some(LayerSpec::Sigmoid), Some(s)) if s == &[OUTPUT_UNITS] => Ok(shapes),
            _ => Err(Error::Config(format!(
                "network must end in a sigmoid over exactly {OUTPUT_UNITS} units"
            ))),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Same layout with every dropout rate replaced.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
        self
    }
}

/// Optimizer and regularization settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_beta: f64,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 256,
            epochs: 20,
            l2_beta: 5e-4,
            dropout_rate: 0.5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.l2_beta >= 0.0 && self.l2_beta.is_finite()) {
            return bad(format!("l2_beta {} must be >= 0", self.l2_beta));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_chains_to_25_outputs() {
        let shapes = NetworkSpec::default().validate().unwrap();
        assert_eq!(shapes[0], vec![27, 27, 16]);
        assert_eq!(shapes[8], vec![27 * 27 * 32]);
        assert_eq!(shapes.last().unwrap(), &vec![25]);
    }

    #[test]
    fn convolutions_preserve_spatial_size() {
        let spec = NetworkSpec::default();
        let shapes = spec.validate().unwrap();
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            if matches!(layer, LayerSpec::Convolution { .. }) {
                assert_eq!(&shape[..2], &[27, 27]);
            }
        }
    }

    #[test]
    fn pooling_rejected() {
        let mut spec = NetworkSpec::default();
        spec.layers.insert(2, LayerSpec::Pooling { window: 2 });
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("pooling"));

        let json = r#"{"input_shape":[27,27,3],"layers":[{"kind":"pooling","window":2}]}"#;
        let parsed: NetworkSpec = serde_json::from_str(json).unwrap();
        assert!(parsed.validate().is_err());
    }

    #[test]
    fn bad_conv_geometry_rejected() {
        let mut spec = NetworkSpec::default();
        spec.layers[0] = LayerSpec::Convolution {
            feature_maps: 8,
            kernel_size: 5,
            stride: 1,
            padding: 2,
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn final_layer_must_be_25_sigmoids() {
        let mut spec = NetworkSpec::default();
        spec.layers.pop();
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::default();
        let n = spec.layers.len();
        spec.layers[n - 2] = LayerSpec::dense(24);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn train_config_ranges() {
        assert!(TrainConfig::default().validate().is_ok());
        let cfg = TrainConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
