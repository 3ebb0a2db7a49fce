//! Bidirectional LSTM encoder, LSTM decoder with input feeding and general
//! (bilinear) attention, teacher-forced training and greedy decoding.

mod forward;
mod params;
mod trace;
mod train;

pub use forward::{batch_loss, evaluate, loss_and_gradients, EncodedPair, EvalStats};
pub use params::{parameter_shapes, Model, ModelDims, ModelParams, INIT_RANGE};
pub use trace::{
    attend, context_from_weights, default_max_steps, greedy_translate, greedy_translate_ids,
    output_logits, Attention, TraceStep, TranslationTrace,
};
pub use train::{train, CurvePoint, HeldoutSummary, TrainConfig, TrainReport};
