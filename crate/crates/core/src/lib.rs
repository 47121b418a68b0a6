pub mod chunker;
pub mod config;
pub mod corpus_io;
pub mod eval;
pub mod gen;
pub mod lexicon;
pub mod matcher;
pub mod mixer;
pub mod pipeline;
