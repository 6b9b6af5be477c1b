//! First-stage BM25 retrieval and re-ranking depth control.

pub mod depth;
pub mod index;

pub use depth::{
    rerank_at_depth, rerank_run, tune_rerank_depth, DepthTuning, DOCUMENT_DEPTH_PRESETS,
    PASSAGE_DEPTH,
};
pub use index::{compare_doc_ids, Bm25Params, InvertedIndex};
