//! Corpus, feature-grid and embedding files, plus the synthetic toy corpus.

mod corpus;
mod embedding;
mod features;
mod toy;

pub use corpus::{
    build_record, clean_tokens, load_corpus, read_corpus_entries, sentence_key, sentence_vector_of,
    write_corpus_entries, CorpusEntry, CorpusShape, StoryRecord,
};
pub use embedding::{EmbeddingTable, NULL_TOKEN, SOS_TOKEN};
pub use features::{decode_features, encode_features, read_features, write_features, FeatureGrid};
pub use toy::{gen_toy_corpus, ToyConfig, ToyCorpus, CORPUS_FILE, FEATURES_DIR, SENT_EMB_FILE, WORD_EMB_FILE};
