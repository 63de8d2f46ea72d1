//! On-disk formats: trajectory corpora, embedding caches, run
//! configuration, and dataset splitting.

mod cache;
mod config;
mod corpus;
mod split;

pub use cache::{read_embedding_cache, write_embedding_cache, EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub use config::{DecodeMode, LossToggles, ReconNorm, RunConfig};
pub use corpus::{read_corpus, read_corpus_str, write_corpus, write_corpus_string};
pub use split::split_corpus;
