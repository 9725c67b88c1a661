//! Neural sense classifiers: CNN, LSTM variants with soft and self
//! attention, and self attention extended with attention over topic
//! vectors.

mod classifier;
mod layers;
mod train;

pub use classifier::{
    build_classifier, Assets, Classifier, ClassifierConfig, EncodedSample, Forward, Session, Variant,
};
pub use layers::{soft_attention, AttentionMode, SelfAttention, TopicAttention, TopicAttentionOutput};
pub use train::{train_classifier, TrainLog};
