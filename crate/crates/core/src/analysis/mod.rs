//! Evaluation metrics, analysis exports and ablation drivers.

mod ablation;
mod alignment;
mod bleu;
mod export;
mod metrics;
mod pca;

pub use ablation::{run_ablation, AblationRow, AblationSetup, AblationSuite, MT_FRACTIONS};
pub use alignment::{sample_alignment, sample_similarity, slot_alignment, summarize, AlignmentReport};
pub use bleu::{bleu, BleuReport};
pub use export::{
    attention_products, diagonal_band_fraction, export_attention, export_memories, AttentionDump, MemoryDump,
    MemoryRecord, MAX_EXPORT_SAMPLES,
};
pub use metrics::{exact_match, memories_chunked, teacher_forced_accuracy, translate_greedy};
pub use pca::{jacobi_eigen, Pca};
