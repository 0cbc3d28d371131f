//! Segmentation and report-generation metrics.

pub mod seg;
pub mod table;
pub mod text;
pub mod window;

pub use seg::{dice, dsc, fnv, fnv_with, fpv, fpv_with, score, SegScores};
pub use table::{score_table, seg_csv, text_csv, text_table, SegResult, SegRow, TextResult, TextRow};
pub use text::{bleu, bleu_text, lcs_len, rouge_l, rouge_l_text, text_scores, BleuScore, TextScores};
pub use window::{window_starts, ProbabilityMap, SlidingWindow, Weighting, Window};
