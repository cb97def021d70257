//! Dataset loaders and input encoders.

pub mod embed;
pub mod features;
pub mod idx;
pub mod spikes;
pub mod text;
pub mod toy;

pub use embed::{train_word_embeddings, EmbeddingConfig, EmbeddingTable};
pub use features::{chunk_features, load_feature_csv, FeatureSet};
pub use idx::{load_idx, IdxDataset};
pub use spikes::{bernoulli_encode_rows, bernoulli_spike_encode, one_hot_encode, SpikeTrain};
pub use text::{char_corpus, word_corpus, Vocab};
pub use toy::sinusoid_dataset;
