use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::SeqModel;
use crate::nn::log_softmax_row;

/// Chunk length used when scoring held-out text.
pub const PERPLEXITY_CHUNK: usize = 128;

/// Byte-level perplexity with the softmax restricted to the text range, so
/// models with extended vocabularies are scored on the same support.
pub fn text_perplexity(model: &SeqModel, text: &[u8], chunk: usize) -> Result<f64> {
    if text.len() < 2 {
        return Err(Error::Config("held-out text needs at least two bytes".into()));
    }
    let chunk = chunk.clamp(2, model.config.context);
    let (v, nt) = (model.vocab_size(), model.vocab.text);
    let mut nll = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + 1 < text.len() {
        let end = (start + chunk).min(text.len());
        let tokens: Vec<u32> = text[start..end].iter().map(|&b| b as u32).collect();
        let logits = model.forward(&tokens)?;
        for t in 0..tokens.len() - 1 {
            let ls = log_softmax_row(&logits[t * v..t * v + nt]);
            nll -= ls[tokens[t + 1] as usize];
            count += 1;
        }
        start = end - 1;
        if end == text.len() {
            break;
        }
    }
    Ok((nll / count as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub ppl_base: f64,
    pub ppl_tuned: f64,
    /// `(ppl_tuned - ppl_base) / ppl_base`.
    pub degradation: f64,
}

pub fn text_retention(base: &SeqModel, tuned: &SeqModel, heldout: &[u8]) -> Result<Retention> {
    if heldout.is_empty() {
        return Err(Error::Config("held-out corpus is empty".into()));
    }
    if base.vocab.text != tuned.vocab.text {
        return Err(Error::Layout("models disagree on the text range".into()));
    }
    let ppl_base = text_perplexity(base, heldout, PERPLEXITY_CHUNK)?;
    let ppl_tuned = text_perplexity(tuned, heldout, PERPLEXITY_CHUNK)?;
    Ok(Retention { ppl_base, ppl_tuned, degradation: (ppl_tuned - ppl_base) / ppl_base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelConfig, VocabLayout};

    fn small(seed: u64) -> SeqModel {
        let cfg = ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 32, context: 64 };
        SeqModel::new(cfg, VocabLayout::text_only(), seed).unwrap()
    }

    #[test]
    fn uniform_predictor_scores_256() {
        let mut m = small(1);
        let head = m.params.params.len() - 1;
        m.params.params[head].data.iter_mut().for_each(|v| *v = 0.0);
        let ppl = text_perplexity(&m, b"the quick brown fox jumps over the lazy dog", 16).unwrap();
        assert!((ppl - 256.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn identical_models_do_not_degrade() {
        let m = small(2);
        let r = text_retention(&m, &m, b"some held out text for scoring").unwrap();
        assert_eq!(r.degradation, 0.0);
        assert!(text_retention(&m, &m, b"").is_err());
    }

    #[test]
    fn extension_keeps_text_perplexity() {
        let m = small(3);
        let ext = m.extend_vocab(VocabLayout::extended(5, 4), 9).unwrap();
        let text = b"rows for old tokens are untouched";
        let a = text_perplexity(&m, text, 16).unwrap();
        let b = text_perplexity(&ext, text, 16).unwrap();
        assert!((a - b).abs() < 1e-9);
    }
}
