//! Embedding spaces, seed dictionaries and orthogonal cross-lingual mapping.

pub mod dictionary;
pub mod procrustes;
pub mod space;

pub use dictionary::{
    build_seed_dictionary, load_lexicon, DictionaryReport, Lexicon, SeedDictionary,
    DOMAIN_SEED_WORDS,
};
pub use procrustes::{
    map_space, procrustes_objective, refine, seed_distance, solve_procrustes, MappingMatrix,
    RefineConfig, RefineReport, StopReason,
};
pub use space::{
    load_embeddings, preprocess, write_embeddings, EmbeddingSpace, LoadReport, PreprocessReport,
};
