//! Metrics and reports: mel-cepstral distortion with DTW alignment, cosine
//! speaker similarity, symbol-level content-error rate, per-task run
//! evaluation and the codec round-trip comparison.
//!
//! DNSMOS and PESQ have no counterpart here; reports list them as out of
//! scope instead of substituting a different quantity.

mod cepstra;
mod plots;
mod run;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::TaskSpec;

pub use cepstra::{cepstra, mcd, CepstraSeq, CEPSTRA_FRAME, CEPSTRA_HOP, CEPSTRA_ORDER, MEL_FILTERS};
pub use plots::{plot_loss_curves, plot_metric_vs_snr};
pub use run::{
    codec_impact, evaluate_run, impact_items, read_eval_manifest, score_output, write_eval_set, EvalItem,
    ImpactItem, SystemOutputs, EVAL_MANIFEST, NO_PROCESSING,
};

/// Bumped whenever a metric definition changes.
pub const METRIC_VERSION: &str = "1";
pub const OUT_OF_SCOPE: [&str; 2] = ["DNSMOS", "PESQ"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("cepstral orders differ: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("zero-norm embedding")]
    DegenerateEmbedding,
    #[error("empty reference sequence")]
    EmptyReference,
    #[error("outputs do not cover the manifest: {0}")]
    CoverageError(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error(transparent)]
    Synth(#[from] crate::synthworld::SynthError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Cosine similarity.
pub fn sim(e1: &[f64], e2: &[f64]) -> Result<f64> {
    let n1 = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 || e1.len() != e2.len() {
        return Err(EvalError::DegenerateEmbedding);
    }
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `levenshtein(hyp, reference) / |reference|`.
pub fn content_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

/// Metrics of one scored signal; absent entries do not apply to the task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub cer: Option<f64>,
    pub sim: Option<f64>,
    pub sim_interferer: Option<f64>,
    pub mcd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    /// Absent for codec round-trip items, which belong to no task.
    pub task: Option<TaskSpec>,
    pub system: String,
    pub snr_db: Option<f64>,
    pub scores: Scores,
}

/// Mean metrics of one system on one task (or subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub system: String,
    pub n: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub metric_version: String,
    pub dataset_id: String,
    pub checkpoint_id: Option<String>,
    pub rows: Vec<ReportRow>,
    pub items: Vec<ItemScore>,
    pub out_of_scope: Vec<String>,
}

impl Report {
    pub fn row(&self, group: &str, system: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.group == group && r.system == system)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table, one line per row.
    pub fn render_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{} (metric version {}, dataset {})", self.kind, self.metric_version, short(&self.dataset_id));
        if let Some(c) = &self.checkpoint_id {
            let _ = writeln!(out, "checkpoint {}", short(c));
        }
        let _ = writeln!(
            out,
            "{:<8} {:<24} {:>5} {:>8} {:>8} {:>8} {:>8}",
            "group", "system", "n", "CER", "SIM", "SIM-int", "MCD"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<24} {:>5} {:>8} {:>8} {:>8} {:>8}",
                r.group,
                r.system,
                r.n,
                fmt(r.scores.cer),
                fmt(r.scores.sim),
                fmt(r.scores.sim_interferer),
                fmt(r.scores.mcd)
            );
        }
        let _ = writeln!(out, "out of scope: {}", self.out_of_scope.join(", "));
        out
    }
}

fn short(id: &str) -> &str {
    &id[..id.len().min(12)]
}

/// Mean of each metric over the items that have it.
pub fn mean_scores<'a>(scores: impl Iterator<Item = &'a Scores>) -> (usize, Scores) {
    let mut n = 0;
    let mut sums = [(0.0, 0usize); 4];
    for s in scores {
        n += 1;
        for (k, v) in [s.cer, s.sim, s.sim_interferer, s.mcd].into_iter().enumerate() {
            if let Some(v) = v {
                sums[k].0 += v;
                sums[k].1 += 1;
            }
        }
    }
    let mean = |k: usize| (sums[k].1 > 0).then(|| sums[k].0 / sums[k].1 as f64);
    (
        n,
        Scores {
            cer: mean(0),
            sim: mean(1),
            sim_interferer: mean(2),
            mcd: mean(3),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sim_cases() {
        assert!((sim(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.70711).abs() < 1e-5);
        assert!(matches!(sim(&[0.0, 0.0], &[1.0, 1.0]), Err(EvalError::DegenerateEmbedding)));
    }

    #[test]
    fn cer_cases() {
        let r = [1u8, 2, 3, 4];
        assert_eq!(content_error_rate(&r, &r).unwrap(), 0.0);
        assert_eq!(content_error_rate(&[], &r).unwrap(), 1.0);
        assert_eq!(content_error_rate(&[1u8, 9, 3, 4], &r).unwrap(), 0.25);
        assert!(matches!(content_error_rate::<u8>(&r, &[]), Err(EvalError::EmptyReference)));
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn mean_skips_missing_metrics() {
        let a = Scores {
            cer: Some(0.5),
            ..Scores::default()
        };
        let b = Scores {
            cer: Some(1.0),
            mcd: Some(2.0),
            ..Scores::default()
        };
        let (n, m) = mean_scores([a, b].iter());
        assert_eq!(n, 2);
        assert_eq!(m.cer, Some(0.75));
        assert_eq!(m.mcd, Some(2.0));
        assert_eq!(m.sim, None);
    }

    proptest! {
        #[test]
        fn levenshtein_triangle(
            a in prop::collection::vec(0u8..4, 0..10),
            b in prop::collection::vec(0u8..4, 0..10),
            c in prop::collection::vec(0u8..4, 0..10),
        ) {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        }

        #[test]
        fn sim_scale_invariant(
            v in prop::collection::vec(0.1f64..5.0, 8),
            w in prop::collection::vec(-5.0f64..5.0, 8),
            k in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            if let Ok(base) = sim(&v, &w) {
                prop_assert!((sim(&scaled, &w).unwrap() - base).abs() < 1e-12);
            }
        }
    }
}
