//! 3D discriminative autoencoder: masked patch-token encoding, dual
//! Gaussian plausibility heads, restoration decoding, and training.

mod model;
mod train;

pub use model::{
    mask_tokens, tokenize, DaeConfig, DaeModel, DecodeCache, EncodeCache, EncodeOutput,
    LatentStats, TokenizedCloud,
};
pub use train::{
    gaussian_kl_per_dim_mean, loss_terms, plausibility, plausibility_from_stats,
    prepare_samples, select_and_restore, train_dae, BatchItem, DaeTrainConfig, EpochMetrics,
    LossTerms, PreparedSample, SelectionResult,
};
