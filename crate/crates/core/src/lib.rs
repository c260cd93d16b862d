//! graphcap turns image-caption corpora into unlocalized scene-graph
//! triplet datasets.
//!
//! The pipeline extracts ⟨subject, predicate, object⟩ triplets from each
//! caption (and a paraphrase of it) through an LLM, aligns the free-text
//! lexemes onto target entity/predicate lexicons in a second LLM pass,
//! discards triplets with unalignable components, and keeps the most
//! fine-grained predicate per subject–object pair. A rule-based parser
//! with one-hop knowledge-base alignment provides the conventional
//! baseline, and the stats tooling quantifies the density and
//! predicate-distribution gap between the two.

pub mod align;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod llm;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod stats;
pub mod types;

pub use align::{align_hierarchical, align_lexeme, align_triplets, AlignmentTable};
pub use corpus::Corpus;
pub use llm::{estimate_cost, CompletionClient, CostModel};
pub use parse::{parse_alignment, parse_triplets, AlignmentAnswer};
pub use pipeline::{filter_none, run, select_predicates};
pub use prompt::{render_alignment_prompt, render_extraction_prompt, PromptTemplate, TemplateSet};
pub use stats::{compare_stats, compute_stats, CorpusStats};
pub use types::{
    normalize_lexeme, AlignedTriplet, CaptionRecord, Lexicon, LexiconKind, RawTriplet,
    TripletDataset, TripletSource,
};
