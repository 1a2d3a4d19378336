//! Weight-shared convolutional encoder, projection head and classifier head.
//!
//! The encoder is a stack of 3x3, stride-2, padding-1 convolutions with ReLU,
//! followed by global average pooling. Both temporal views of a video pass
//! through the same [`ModelParams`]. Gradients are computed by a hand-written
//! reverse pass over cached activations ([`Model::backward`]).

mod checkpoint;
mod conv;
mod model;
mod params;

pub use checkpoint::{
    load_tensors, read_tensors, save_tensors, write_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use conv::{conv_output_size, global_average_pool};
pub use model::{images_to_tensor, softmax_cross_entropy, ForwardPass, Model, Preprocess};
pub use params::{EncoderConfig, ModelParams, Tensor};
