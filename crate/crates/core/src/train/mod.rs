//! Training stages for the sequence model and their data plumbing.

mod corpus;
mod penalty;
mod prompt;
mod stages;

pub use corpus::text_corpus;
pub use penalty::{off_example_penalty, off_example_penalty_grad, Penalty};
pub use prompt::{
    build_prompt, dedup_drop_shuffle, deinterleave, interleave, part_at, ExamplePrompt, Prompt, WINDOW_STEPS,
    WINDOW_UNITS,
};
pub use stages::{
    audio_stream, example_mass, motion_loss, motion_stream, split_corpus, stage0_pretrain, stage1_embed_init,
    stage2_s2g, stage3_example_train, stream_loss, supervised_loss, token_windows, training_example, PairedTokens,
    SampleLoss, Stage0Config, StageConfig, StageReport, StepRecord, TokenWindow, WINDOW_STRIDE_STEPS,
    WINDOW_STRIDE_UNITS,
};
