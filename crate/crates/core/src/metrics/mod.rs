//! Evaluation metrics: FGD, beat constancy, L1 diversity, text retention.

pub mod beats;
mod diversity;
mod features;
mod fgd;
mod retention;

pub use beats::{angular_speed, beat_constancy, extract_gesture_beats, gaussian_smooth, BeatExtraction};
pub use diversity::{l1_diversity, l1_diversity_positions};
pub use features::{
    raw_window_features, train_feature_autoencoder, FeatureAeConfig, FeatureAutoencoder, FEATURE_AE_MAGIC, RAW_WINDOW,
};
pub use fgd::{fgd, frechet_distance, GaussianMoments, NEGATIVE_EIGEN_TOL};
pub use retention::{text_perplexity, text_retention, Retention, PERPLEXITY_CHUNK};
