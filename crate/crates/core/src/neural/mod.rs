//! Dual-encoder transformer that predicts one joint's spline coefficients and
//! the shared knot vector from the waypoint values of all joints.
//!
//! The context encoder reads the other joints' values; the source encoder
//! reads the current joint's values and attends to the context memory. Both
//! inputs are padded to `L = (K − 1)·I_max` tokens and masked. Mean pooling
//! over the real source tokens feeds two regression heads.

mod config;
mod io;
mod layers;
mod loss;
mod model;
mod params;
mod train;


pub use config::ModelConfig;
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use layers::{
    attention, attention_backward, feed_forward, feed_forward_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, AttentionCache, Dropout, FfnCache, NormCache, LAYER_NORM_EPS,
};
pub use loss::{composite_loss, composite_loss_grad, l1, l1_grad, smooth_l1, smooth_l1_grad, LossWeights};
pub use model::{
    backward, context_encoder, embed_and_encode, embed_padded, forward, forward_cached, output_heads, predict,
    source_encoder, EncodedInput, ForwardCache, ModelOutput,
};
pub use params::{
    positional_encoding, Attention, ContextLayer, Embedding, FeedForward, LayerNorm, Linear, ModelParams, SourceLayer,
    Tensor, Tensors,
};
pub use train::{
    batch_gradient, context_values, evaluate, sample_gradient, samples_from_solution, train, train_from, EpochRecord,
    Sample, TrainConfig, Trained, TrainingHistory, DIVERGENCE_LOSS,
};
