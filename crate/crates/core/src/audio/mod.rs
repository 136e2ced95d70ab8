//! Audio I/O and the discrete unit tokenizer (50 units per second).

mod features;
mod units;
mod wav;

pub use features::{
    extract_features, frame_count, AudioFeatureFrames, ENERGY_FLOOR, FEATURE_DIM, FRAMES_PER_SECOND, MIN_SAMPLE_RATE,
};
pub use units::{fit_units, tokenize_audio, KMeansReport, UnitCodebook, DEFAULT_UNITS, UNITS_MAGIC, UNITS_VERSION};
pub use wav::{read_wav, write_wav, Waveform};
