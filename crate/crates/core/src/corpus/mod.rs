//! Synthetic planted-motif API-sequence corpora, the stratified five-way
//! split, and their on-disk formats.

mod generate;
mod io;
mod split;

pub use generate::{
    contains_motif, generate_corpus, motif_scan_score, truncate_examples, CorpusSpec,
    LabeledExample, Provenance, BENIGN, MALWARE,
};
pub use io::{load_corpus, load_splits, save_corpus, save_splits};
pub use split::{split, SplitSpec, Splits, Subset};
