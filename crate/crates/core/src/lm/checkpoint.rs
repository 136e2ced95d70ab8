use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{ModelConfig, SeqModel};
use super::vocab::VocabLayout;
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::motion::write_atomic;

pub const LM_MAGIC: &[u8; 4] = b"MECL";
pub const LM_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Magic, version, vocab layout, architecture, tensors, then a SHA-256 of everything before it.
pub fn model_to_bytes(model: &SeqModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(LM_MAGIC);
    w.u32(LM_VERSION);
    let v = model.vocab;
    w.u32(v.text as u32);
    w.u32(v.audio as u32);
    w.u32(v.motion as u32);
    w.u8(v.specials as u8);
    let c = model.config;
    for x in [c.d_model, c.layers, c.heads, c.d_ff, c.context] {
        w.u32(x as u32);
    }
    w.u32(model.params.params.len() as u32);
    for p in &model.params.params {
        w.tensor(&p.shape, &p.data);
    }
    let digest = Sha256::digest(&w.buf);
    w.bytes(&digest);
    w.buf
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<SeqModel> {
    if bytes.len() < 4 + CHECKSUM_LEN {
        return Err(Error::format(bytes.len() as u64, "checkpoint too short"));
    }
    if &bytes[..4] != LM_MAGIC {
        return Err(Error::format(0, "bad magic, expected MECL"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Checksum("model checkpoint checksum mismatch".into()));
    }
    let mut r = Reader::new(body);
    r.magic(LM_MAGIC)?;
    let version = r.u32("version")?;
    if version != LM_VERSION {
        return Err(Error::format(4, format!("unsupported model version {version}")));
    }
    let vocab = VocabLayout {
        text: r.u32("text vocab")? as usize,
        audio: r.u32("audio vocab")? as usize,
        motion: r.u32("motion vocab")? as usize,
        specials: r.u8("specials flag")? != 0,
    };
    let config = ModelConfig {
        d_model: r.u32("d_model")? as usize,
        layers: r.u32("layers")? as usize,
        heads: r.u32("heads")? as usize,
        d_ff: r.u32("d_ff")? as usize,
        context: r.u32("context")? as usize,
    };
    config.validate()?;
    let mut model = SeqModel::new(config, vocab, 0)?;
    let at = r.pos;
    let count = r.u32("tensor count")? as usize;
    if count != model.params.params.len() {
        return Err(Error::format(at as u64, format!("{count} tensors, expected {}", model.params.params.len())));
    }
    for p in &mut model.params.params {
        r.param_into(p)?;
    }
    r.finish()?;
    Ok(SeqModel::from_parts(config, vocab, model.params))
}

pub fn save_model(model: &SeqModel, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<SeqModel> {
    model_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = ModelConfig { d_model: 8, layers: 1, heads: 2, d_ff: 8, context: 8 };
        let mut m = SeqModel::new(cfg, VocabLayout::extended(3, 2), 5).unwrap();
        m.round_to_f32();
        let bytes = model_to_bytes(&m);
        assert_eq!(model_from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[60] ^= 1;
        assert!(matches!(model_from_bytes(&bad), Err(Error::Checksum(_))));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checksum(_))));
    }
}
