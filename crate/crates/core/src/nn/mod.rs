//! Minimal convolutional network engine: 3x3 convolutions, dense layers,
//! ReLU/sigmoid, inverted dropout, summed binary cross-entropy with an L2
//! weight penalty, momentum SGD and a binary model container.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model_file;
pub mod network;
pub mod optim;
pub mod spec;
pub mod tensor;

pub use layers::{conv2d_forward, dense_forward, dropout, relu, sigmoid, Mode};
pub use loss::{bce_loss, total_loss, OUTPUT_UNITS};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
pub use model_file::{load_params, save_params};
pub use network::{batch_loss, ForwardCache, Gradients, LayerParams, Network, NetworkParams};
pub use optim::Sgd;
pub use spec::{LayerSpec, NetworkSpec, TrainConfig, OUTPUT_SIZE, PATCH_CHANNELS, PATCH_SIZE};
pub use tensor::{Real, Tensor};
