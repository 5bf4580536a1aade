//! Benchmark harness: datasets, seeded subsetting, accuracy and calibration
//! metrics, and differential-diagnosis set metrics.

mod bench;
mod datasets;
mod judge;
mod report;

pub use bench::{run_ddx_bench, run_mcq_bench, BenchOptions, DdxBenchOptions};
pub use datasets::{load_ddx_dataset, load_mcq_dataset, DdxCase, Demographics, McqItem};
pub use judge::{judge_standardize, JudgeBinding, JudgeOutcome};
pub use report::{DdxReport, ItemFailure, McqReport, StratumStats, TopKPoint};

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AnswerDistribution;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    ParseAtLine { line: usize, message: String },
    #[error("requested subset of {n} from only {available} items")]
    SubsetTooLarge { n: usize, available: usize },
}

/// One evaluated item: what the pipeline predicted against the gold answer,
/// with the item's metadata carried along for stratification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub predicted: AnswerDistribution,
    pub final_answer: String,
    pub gold: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl EvalRecord {
    pub fn is_correct(&self) -> bool {
        self.final_answer == self.gold
    }

    /// Probability the pipeline assigned to its own chosen answer.
    pub fn confidence(&self) -> f64 {
        self.predicted.get(&self.final_answer).unwrap_or(0.0)
    }
}

/// One reliability-diagram bin over `[lo, hi)` (the last bin includes 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Reliability bins plus the expected calibration error:
/// `ece = sum_bins (count / N) * |accuracy - mean_confidence|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Deterministic seeded subsetting: a Fisher-Yates shuffle driven by
/// ChaCha8 keyed with `seed`, then the first `n` items.
///
/// The PRNG and the shuffle are pinned here (ChaCha8, `seed_from_u64`,
/// swap index `j = next_u64() % (i + 1)`) so the same seed selects the same
/// subset across versions and platforms. Sampling `m < n` items with the
/// same seed yields a prefix of the same permutation.
pub fn sample_subset<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, EvalError> {
    if n > items.len() {
        return Err(EvalError::SubsetTooLarge {
            n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<T> = items.to_vec();
    for i in (1..shuffled.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        shuffled.swap(i, j);
    }
    shuffled.truncate(n);
    Ok(shuffled)
}

/// Fraction of records whose gold label sits among the `k` highest-probability
/// predictions (ties by ascending label order).
pub fn top_k_accuracy(records: &[EvalRecord], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| r.predicted.top_k(k).iter().any(|l| *l == r.gold))
        .count();
    hits as f64 / records.len() as f64
}

/// Bucket used for records that lack the stratification key.
pub const MISSING_STRATUM: &str = "other/NA";

/// Accuracy and count per value of a metadata key; records missing the key
/// fall under [`MISSING_STRATUM`].
pub fn stratified_accuracy(
    records: &[EvalRecord],
    key: &str,
) -> BTreeMap<String, (f64, usize)> {
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for record in records {
        let value = record
            .metadata
            .get(key)
            .cloned()
            .unwrap_or_else(|| MISSING_STRATUM.to_string());
        let entry = groups.entry(value).or_insert((0, 0));
        entry.1 += 1;
        if record.is_correct() {
            entry.0 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(value, (correct, count))| (value, (correct as f64 / count as f64, count)))
        .collect()
}

/// Reliability analysis over equal-width confidence bins. Confidence is the
/// probability of the chosen answer; bin `i` covers `[i/n, (i+1)/n)` with the
/// final bin right-inclusive. Empty bins are kept (count 0) so the bins
/// always partition `[0, 1]`.
pub fn reliability(records: &[EvalRecord], n_bins: usize) -> CalibrationReport {
    assert!(n_bins >= 2, "n_bins must be >= 2");
    let mut sums = vec![(0.0f64, 0usize, 0usize); n_bins]; // (conf sum, correct, count)
    for record in records {
        let confidence = record.confidence();
        let index = ((confidence * n_bins as f64) as usize).min(n_bins - 1);
        let slot = &mut sums[index];
        slot.0 += confidence;
        slot.2 += 1;
        if record.is_correct() {
            slot.1 += 1;
        }
    }
    let total: usize = sums.iter().map(|s| s.2).sum();
    let mut bins = Vec::with_capacity(n_bins);
    let mut ece = 0.0;
    for (i, (conf_sum, correct, count)) in sums.into_iter().enumerate() {
        let lo = i as f64 / n_bins as f64;
        let hi = (i + 1) as f64 / n_bins as f64;
        let (mean_confidence, accuracy) = if count > 0 {
            (conf_sum / count as f64, correct as f64 / count as f64)
        } else {
            (0.0, 0.0)
        };
        if count > 0 && total > 0 {
            ece += (count as f64 / total as f64) * (accuracy - mean_confidence).abs();
        }
        bins.push(CalibrationBin {
            lo,
            hi,
            mean_confidence,
            accuracy,
            count,
        });
    }
    CalibrationReport { bins, ece }
}

/// Set metrics for one differential-diagnosis case at cutoff `k`: the
/// prediction set is the top-`k` names of the (standardized) distribution,
/// the gold set is every gold name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn case_set_metrics(
    gold: &AnswerDistribution,
    predicted: &AnswerDistribution,
    k: usize,
) -> SetMetrics {
    let predicted_set = predicted.top_k(k);
    let hits = predicted_set
        .iter()
        .filter(|name| gold.contains(name))
        .count() as f64;
    let precision = if predicted_set.is_empty() {
        0.0
    } else {
        hits / predicted_set.len() as f64
    };
    let recall = hits / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SetMetrics {
        precision,
        recall,
        f1,
    }
}

/// Differential-diagnosis metrics over `(gold, standardized prediction)`
/// pairs: a top-k accuracy curve for `k = 1..=k_max` (does the gold argmax
/// appear in the top-k prediction?) and macro-averaged precision / recall /
/// F1 at `headline_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdxMetrics {
    pub top_k_accuracy: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub headline_k: usize,
    pub per_case: Vec<SetMetrics>,
}

pub fn ddx_metrics(
    cases: &[(AnswerDistribution, AnswerDistribution)],
    k_max: usize,
    headline_k: usize,
) -> DdxMetrics {
    assert!(!cases.is_empty(), "ddx_metrics needs at least one case");
    assert!(k_max >= 1 && headline_k >= 1);

    let mut top_k_accuracy = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let hits = cases
            .iter()
            .filter(|(gold, predicted)| {
                let target = gold.argmax();
                predicted.top_k(k).iter().any(|name| *name == target)
            })
            .count();
        top_k_accuracy.push(hits as f64 / cases.len() as f64);
    }

    let per_case: Vec<SetMetrics> = cases
        .iter()
        .map(|(gold, predicted)| case_set_metrics(gold, predicted, headline_k))
        .collect();
    let n = per_case.len() as f64;
    DdxMetrics {
        top_k_accuracy,
        precision: per_case.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_case.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_case.iter().map(|m| m.f1).sum::<f64>() / n,
        headline_k,
        per_case,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn dist(pairs: &[(&str, f64)]) -> AnswerDistribution {
        AnswerDistribution::new(pairs.iter().map(|(l, p)| (l.to_string(), *p)).collect())
            .unwrap()
    }

    fn record(id: &str, pairs: &[(&str, f64)], final_answer: &str, gold: &str) -> EvalRecord {
        EvalRecord {
            id: id.to_string(),
            predicted: dist(pairs),
            final_answer: final_answer.to_string(),
            gold: gold.to_string(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn subset_is_deterministic_and_seed_sensitive() {
        let items: Vec<u32> = (0..200).collect();
        let a = sample_subset(&items, 50, 5).unwrap();
        let b = sample_subset(&items, 50, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_subset(&items, 50, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn subset_of_full_length_is_a_permutation() {
        let items: Vec<u32> = (0..50).collect();
        let mut shuffled = sample_subset(&items, 50, 5).unwrap();
        assert_ne!(shuffled, items); // astronomically unlikely to be identity
        shuffled.sort_unstable();
        assert_eq!(shuffled, items);
    }

    #[test]
    fn subset_prefix_property() {
        let items: Vec<u32> = (0..120).collect();
        let long = sample_subset(&items, 40, 5).unwrap();
        let short = sample_subset(&items, 10, 5).unwrap();
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn subset_too_large_is_rejected() {
        let items = vec![1, 2, 3];
        assert!(matches!(
            sample_subset(&items, 4, 5),
            Err(EvalError::SubsetTooLarge { n: 4, available: 3 })
        ));
    }

    #[test]
    fn top_k_counts_gold_rank() {
        // Gold ranked third: counted at k = 3, not k = 2.
        let records = vec![record(
            "r1",
            &[("A", 0.5), ("B", 0.3), ("C", 0.2)],
            "A",
            "C",
        )];
        assert_eq!(top_k_accuracy(&records, 1), 0.0);
        assert_eq!(top_k_accuracy(&records, 2), 0.0);
        assert_eq!(top_k_accuracy(&records, 3), 1.0);
    }

    #[test]
    fn top_k_perfect_at_one_when_gold_is_argmax() {
        let records = vec![
            record("r1", &[("A", 0.9), ("B", 0.1)], "A", "A"),
            record("r2", &[("B", 0.8), ("A", 0.2)], "B", "B"),
        ];
        assert_eq!(top_k_accuracy(&records, 1), 1.0);
    }

    #[test]
    fn stratified_buckets_missing_metadata() {
        let mut tagged = record("r1", &[("A", 1.0), ("B", 0.0)], "A", "A");
        tagged
            .metadata
            .insert("body_system".to_string(), "integumentary".to_string());
        let untagged = record("r2", &[("A", 1.0), ("B", 0.0)], "A", "B");
        let strata = stratified_accuracy(&[tagged, untagged], "body_system");
        assert_eq!(strata["integumentary"], (1.0, 1));
        assert_eq!(strata[MISSING_STRATUM], (0.0, 1));
    }

    #[test]
    fn stratified_single_group() {
        let mut records = Vec::new();
        for i in 0..8 {
            let mut r = record(
                &format!("r{i}"),
                &[("A", 0.9), ("B", 0.1)],
                "A",
                if i < 6 { "A" } else { "B" },
            );
            r.metadata
                .insert("body_system".to_string(), "integumentary".to_string());
            records.push(r);
        }
        let strata = stratified_accuracy(&records, "body_system");
        assert_eq!(strata.len(), 1);
        assert_eq!(strata["integumentary"], (0.75, 8));
    }

    #[test]
    fn reliability_all_confident_and_correct() {
        let records: Vec<EvalRecord> = (0..10)
            .map(|i| record(&format!("r{i}"), &[("A", 1.0), ("B", 0.0)], "A", "A"))
            .collect();
        let report = reliability(&records, 10);
        assert_eq!(report.ece, 0.0);
        let populated: Vec<&CalibrationBin> =
            report.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].count, 10);
        // Confidence 1.0 lands in the right-inclusive final bin.
        assert_eq!(populated[0].hi, 1.0);
    }

    #[test]
    fn reliability_half_correct_at_half_confidence() {
        let records: Vec<EvalRecord> = (0..10)
            .map(|i| {
                record(
                    &format!("r{i}"),
                    &[("A", 0.5), ("B", 0.5)],
                    "A",
                    if i % 2 == 0 { "A" } else { "B" },
                )
            })
            .collect();
        let report = reliability(&records, 10);
        assert!(report.ece.abs() < 1e-12);
    }

    #[test]
    fn reliability_bin_counts_sum_to_total() {
        let records: Vec<EvalRecord> = (0..25)
            .map(|i| {
                let p = (i as f64 + 0.5) / 25.0;
                record(&format!("r{i}"), &[("A", p), ("B", 1.0 - p)], "A", "A")
            })
            .collect();
        let report = reliability(&records, 10);
        let total: usize = report.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 25);
        assert_eq!(report.bins.len(), 10);
    }

    #[test]
    fn ddx_identical_prediction_is_perfect() {
        let gold = dist(&[("pulmonary embolism", 0.6), ("pneumonia", 0.4)]);
        let metrics = ddx_metrics(&[(gold.clone(), gold.clone())], 3, 5);
        assert_eq!(metrics.precision, 1.0);
        assert_eq!(metrics.recall, 1.0);
        assert_eq!(metrics.f1, 1.0);
        assert_eq!(metrics.top_k_accuracy, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ddx_disjoint_prediction_is_zero() {
        let gold = dist(&[("anemia", 1.0)]);
        let predicted = dist(&[("cluster headache", 1.0)]);
        let metrics = ddx_metrics(&[(gold, predicted)], 2, 5);
        assert_eq!(metrics.precision, 0.0);
        assert_eq!(metrics.recall, 0.0);
        assert_eq!(metrics.f1, 0.0);
        assert_eq!(metrics.top_k_accuracy, vec![0.0, 0.0]);
    }

    #[test]
    fn ddx_metrics_match_hand_computation() {
        // Gold has 4 names; prediction's top-5 hits 2 of them.
        let gold = dist(&[
            ("anemia", 0.4),
            ("iron deficiency", 0.3),
            ("thalassemia", 0.2),
            ("lead poisoning", 0.1),
        ]);
        let predicted = dist(&[
            ("anemia", 0.5),
            ("migraine", 0.2),
            ("thalassemia", 0.15),
            ("tension headache", 0.1),
            ("cluster headache", 0.05),
        ]);
        let metrics = ddx_metrics(&[(gold, predicted)], 3, 5);
        // precision = 2/5, recall = 2/4, f1 = 2 * 0.4 * 0.5 / 0.9
        assert!((metrics.precision - 0.4).abs() < 1e-12);
        assert!((metrics.recall - 0.5).abs() < 1e-12);
        assert!((metrics.f1 - (2.0 * 0.4 * 0.5 / 0.9)).abs() < 1e-12);
        // Gold argmax "anemia" is the prediction's rank 1.
        assert_eq!(metrics.top_k_accuracy, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn eval_record_confidence_reads_chosen_label() {
        let r = record("r", &[("A", 0.7), ("B", 0.3)], "B", "A");
        assert_eq!(r.confidence(), 0.3);
        assert!(!r.is_correct());
    }
}
