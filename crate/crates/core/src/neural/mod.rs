mod adam;
mod gradcheck;
mod graph;
mod layers;
mod loss;
mod models;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GRAD_CHECK_SAMPLE};
pub use graph::{ForwardTrace, ModelGraph, MODEL_VERSION};
pub use layers::{Activation, Cache, Layer, LayerSpec, Mode, Param, Value};
pub use loss::{softmax, softmax_xent_grad, weighted_cross_entropy};
pub use models::{
    build_hybrid, build_sequence_model, hybrid_forward, softmax_head, ContextualEncoder, EncoderConfig, HybridConfig,
    SequenceArch, SequenceInput, TokenIndex, CLS_ID, PAD_ID, UNK_ID,
};
pub use tensor::Mat;
pub use train::{
    evaluate_loss, predict_proba, train_supervised, EarlyStopping, EpochRecord, Example, StopDecision, TrainConfig,
    TrainResult,
};
