//! The micro video-language model: a frozen deterministic vision encoder, a
//! trainable projector, and a small causal-attention readout stack over a
//! compact token vocabulary.

pub mod encoder;
pub mod model;
pub mod train;
pub mod vocab;

pub use encoder::{
    encode_frames, frame_channel_means, lift_descriptors, patch_descriptors, pool_frame_mean,
    EncoderConfig, EncoderLift, LiftProfile, DESCRIPTOR_DIM,
};
pub use model::{
    backward_blocks, backward_lm, backward_projector, forward, forward_traced, pool_visual,
    project, text_tail, tokenize_record, ActivationTrace, BlockParams, MicroVlmError, ModelConfig,
    ModelParams, SampleTokens, Workspace, NORM_EPS,
};
pub use train::{
    evaluate, init_mvp, predict_slot, prepare_record, prepare_records, tap_stage_dims, train,
    validate_tap, Adam, EvalReport, LossRow, MvpRun, PreparedSample, TrainConfig, TrainReport,
};
pub use vocab::{Vocab, MAX_OPTIONS, READOUT_TOKEN, SEPARATOR_TOKEN};
