//! Attention encoder-decoder with an intent head, trained on vocabulary,
//! intent and entity losses with hand-written backpropagation.

mod checkpoint;
mod model;
mod params;
pub mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Manifest, TensorEntry, MAGIC};
pub use model::{
    attend, backward, batch_stats, decode_step, encode, entity_loss, entity_loss_argmax, generate, generate_with, predict_intent,
    predict_intent_with, teacher_forced_accuracy, teacher_forced_steps, total_loss, Attention, BatchStats, DecoderState, DecoderStep,
    EncoderTrace, EntityIndex, IntentMode, LossBreakdown, LossConfig, BATCH_SHARDS,
};
pub use params::{group_of, ModelParams, ParamGroup, Weights, INIT_SCALE, TENSOR_NAMES};
pub use train::{clip_global_norm, train, train_with, write_train_log, Adam, EpochRecord, TrainConfig, TrainOutcome, TRAIN_LOG_HEADER};
