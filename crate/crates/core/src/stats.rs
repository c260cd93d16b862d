//! Dataset diagnostics: scene-graph density, predicate histograms,
//! zero-frequency counts, and long-tail summaries.
//!
//! The accumulator merges associatively and commutatively over
//! disjoint-image datasets, so partial aggregation parallelizes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Lexicon, TripletDataset};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("image count must be positive")]
    NoImages,
    #[error("predicate index {index} outside lexicon of {len} classes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("lexicon mismatch: `{left}` vs `{right}`")]
    LexiconMismatch { left: String, right: String },
}

/// Per-corpus diagnostics over one predicate lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub lexicon_name: String,
    pub triplet_count: u64,
    pub image_count: u64,
    /// Triplets per image.
    pub density: f64,
    /// Counts per predicate class in lexicon order (index 1 first).
    pub predicate_histogram: Vec<u64>,
    pub zero_frequency_count: usize,
    pub zero_frequency_classes: Vec<String>,
    /// Most frequent class count over the median class count; absent when
    /// the median is zero.
    pub head_tail_ratio: Option<f64>,
}

/// Rounds to one decimal for display, matching the conventional "2.4
/// triplets per image" presentation. Full precision stays in `density`.
pub fn display_density(density: f64) -> f64 {
    (density * 10.0).round() / 10.0
}

/// Computes diagnostics for a dataset against a predicate lexicon.
/// The histogram covers every lexicon class, including zeros.
pub fn compute_stats(
    dataset: &TripletDataset,
    predicates: &Lexicon,
) -> Result<CorpusStats, StatsError> {
    if dataset.image_count == 0 {
        return Err(StatsError::NoImages);
    }
    let mut histogram = vec![0u64; predicates.len()];
    for triplet in &dataset.triplets {
        let index = triplet.predicate_class.ok_or(StatsError::IndexOutOfRange {
            index: 0,
            len: predicates.len(),
        })?;
        if index == 0 || index > predicates.len() {
            return Err(StatsError::IndexOutOfRange {
                index,
                len: predicates.len(),
            });
        }
        histogram[index - 1] += 1;
    }
    Ok(assemble(
        predicates,
        histogram,
        dataset.triplets.len() as u64,
        dataset.image_count as u64,
    ))
}

fn assemble(
    predicates: &Lexicon,
    histogram: Vec<u64>,
    triplet_count: u64,
    image_count: u64,
) -> CorpusStats {
    let zero_frequency_classes: Vec<String> = histogram
        .iter()
        .enumerate()
        .filter(|(_, &count)| count == 0)
        .map(|(i, _)| predicates.class(i + 1).unwrap_or_default().to_string())
        .collect();
    let head = histogram.iter().copied().max().unwrap_or(0);
    let median = median_count(&histogram);
    let head_tail_ratio = if median > 0.0 {
        Some(head as f64 / median)
    } else {
        None
    };
    CorpusStats {
        lexicon_name: predicates.name().to_string(),
        triplet_count,
        image_count,
        density: triplet_count as f64 / image_count as f64,
        zero_frequency_count: zero_frequency_classes.len(),
        zero_frequency_classes,
        predicate_histogram: histogram,
        head_tail_ratio,
    }
}

fn median_count(histogram: &[u64]) -> f64 {
    if histogram.is_empty() {
        return 0.0;
    }
    let mut sorted = histogram.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    }
}

impl CorpusStats {
    /// Merges two disjoint-image corpora: counts and histograms add, and
    /// density becomes the ratio of merged totals.
    pub fn merge(
        &self,
        other: &CorpusStats,
        predicates: &Lexicon,
    ) -> Result<CorpusStats, StatsError> {
        if self.lexicon_name != other.lexicon_name
            || self.predicate_histogram.len() != other.predicate_histogram.len()
        {
            return Err(StatsError::LexiconMismatch {
                left: self.lexicon_name.clone(),
                right: other.lexicon_name.clone(),
            });
        }
        let histogram: Vec<u64> = self
            .predicate_histogram
            .iter()
            .zip(&other.predicate_histogram)
            .map(|(a, b)| a + b)
            .collect();
        Ok(assemble(
            predicates,
            histogram,
            self.triplet_count + other.triplet_count,
            self.image_count + other.image_count,
        ))
    }

    /// `class,count` CSV in lexicon order.
    pub fn histogram_csv(&self, predicates: &Lexicon) -> String {
        let mut out = String::from("class,count\n");
        for (i, count) in self.predicate_histogram.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{}",
                predicates.class(i + 1).unwrap_or_default(),
                count
            );
        }
        out
    }

    /// `class,count` CSV sorted by frequency descending; ties stay in
    /// lexicon order.
    pub fn frequency_sorted_csv(&self, predicates: &Lexicon) -> String {
        let mut rows: Vec<(usize, u64)> = self
            .predicate_histogram
            .iter()
            .copied()
            .enumerate()
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out = String::from("class,count\n");
        for (i, count) in rows {
            let _ = writeln!(
                out,
                "{},{}",
                predicates.class(i + 1).unwrap_or_default(),
                count
            );
        }
        out
    }
}

/// Per-class deltas between two corpora over the same lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsComparison {
    pub density_delta: f64,
    pub zero_frequency_delta: i64,
    /// (class, count_a, count_b, delta b−a) rows.
    pub per_class: Vec<(String, u64, u64, i64)>,
}

/// Compares two corpora; `b − a` deltas throughout.
pub fn compare_stats(
    a: &CorpusStats,
    b: &CorpusStats,
    predicates: &Lexicon,
) -> Result<StatsComparison, StatsError> {
    if a.lexicon_name != b.lexicon_name
        || a.predicate_histogram.len() != b.predicate_histogram.len()
        || a.predicate_histogram.len() != predicates.len()
    {
        return Err(StatsError::LexiconMismatch {
            left: a.lexicon_name.clone(),
            right: b.lexicon_name.clone(),
        });
    }
    let per_class = a
        .predicate_histogram
        .iter()
        .zip(&b.predicate_histogram)
        .enumerate()
        .map(|(i, (&ca, &cb))| {
            (
                predicates.class(i + 1).unwrap_or_default().to_string(),
                ca,
                cb,
                cb as i64 - ca as i64,
            )
        })
        .collect();
    Ok(StatsComparison {
        density_delta: b.density - a.density,
        zero_frequency_delta: b.zero_frequency_count as i64 - a.zero_frequency_count as i64,
        per_class,
    })
}

impl StatsComparison {
    /// Plot-ready CSV sorted by the first operand's frequency descending.
    pub fn to_csv(&self) -> String {
        let mut rows = self.per_class.clone();
        rows.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut out = String::from("class,count_a,count_b,delta\n");
        for (class, ca, cb, delta) in rows {
            let _ = writeln!(out, "{class},{ca},{cb},{delta}");
        }
        out
    }
}
