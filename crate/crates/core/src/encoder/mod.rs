//! Per-feature contrastive representation learning.

mod extractor;
mod loss;
mod slicing;

pub use extractor::{
    embed_corpus, load_extractors, train_autoencoding_extractors, train_extractors, EmbeddingSequence,
    EncoderTrainConfig, ExtractorConfig, FeatureExtractor, InstanceEmbeddings, LossCurve,
};
pub use loss::{
    combined_loss, combined_loss_grad, instance_contrastive_loss, instance_term,
    temporal_contrastive_loss, temporal_term, EmbeddingPair,
};
pub use slicing::{default_min_len, sample_slice_pair, SlicePair};
