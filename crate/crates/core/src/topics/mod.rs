//! Topic modeling and convolutional topic vectors.

mod lda;
mod matrix;

pub use lda::{drop_frequent_words, train_lda, LdaConfig, LdaModel};
pub use matrix::{
    build_topic_matrix, build_topic_vector, stack_embeddings, topic_vector_graph, Activation, ConvConfig,
    TopicMatrix,
};
