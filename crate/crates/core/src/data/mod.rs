//! Knowledge graphs, alignment corpora, dataset IO and the synthetic
//! two-KG generator.

mod corpus;
mod io;
mod kg;
mod synthetic;

pub use corpus::{AlignmentCorpus, DanglingLabels, Direction, EntityPair, TrainingData};
pub use io::{load_corpus, write_corpus};
pub use kg::{degree_histogram, KnowledgeGraph, Triple};
pub use synthetic::{generate_synthetic, SyntheticSpec};
