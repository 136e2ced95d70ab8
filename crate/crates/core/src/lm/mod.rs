//! Miniature autoregressive token model over text, audio and motion tokens.

mod checkpoint;
mod model;
mod vocab;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, LM_MAGIC, LM_VERSION};
pub use model::{cross_entropy, ForwardCache, KvCache, ModelConfig, ParamGroup, SeqModel, INIT_STD};
pub use vocab::{check_disjoint, Special, VocabLayout, TEXT_VOCAB};
