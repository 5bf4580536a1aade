//! Batch benchmark runners: pipeline execution over a dataset with bounded
//! concurrency, feeding the metric and report types.

use std::collections::{BTreeMap, BTreeSet};

use futures::stream::{self, StreamExt};

use super::datasets::{DdxCase, McqItem};
use super::report::{CaseSummary, DdxReport, ItemFailure, McqReport, RecordSummary, TopKPoint};
use super::{
    ddx_metrics, judge_standardize, reliability, sample_subset, stratified_accuracy,
    top_k_accuracy, EvalError, EvalRecord, JudgeBinding, StratumStats,
};
use crate::consensus::Engine;
use crate::domain::AnswerDistribution;

/// Knobs shared by the batch commands. `n = None` evaluates the whole
/// dataset in file order; otherwise a seeded subset is drawn first.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n: Option<usize>,
    pub seed: u64,
    pub k_max: usize,
    pub n_bins: usize,
    pub parallel: usize,
    /// Unix-epoch timestamp string for the report; `None` keeps reports
    /// byte-reproducible.
    pub timestamp: Option<String>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n: None,
            seed: 5,
            k_max: 4,
            n_bins: 10,
            parallel: 4,
            timestamp: None,
        }
    }
}

fn take_subset<T: Clone>(items: Vec<T>, n: Option<usize>, seed: u64) -> Result<Vec<T>, EvalError> {
    match n {
        Some(n) => sample_subset(&items, n, seed),
        None => Ok(items),
    }
}

/// Runs the pipeline over a multiple-choice dataset and assembles the full
/// report: overall accuracy, the top-k curve, per-stratum accuracy over
/// every metadata key present, and the calibration analysis. Items whose
/// pipeline run fails are recorded and skipped, never fatal.
pub async fn run_mcq_bench(
    engine: &Engine,
    dataset_name: &str,
    items: Vec<McqItem>,
    opts: &BenchOptions,
) -> Result<McqReport, EvalError> {
    let subset = take_subset(items, opts.n, opts.seed)?;
    let total_items = subset.len();

    let runs = stream::iter(subset.into_iter().map(|item| async move {
        let outcome = engine.run(&item.to_query()).await;
        (item, outcome)
    }))
    .buffered(opts.parallel.max(1))
    .collect::<Vec<_>>()
    .await;

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (item, outcome) in runs {
        match outcome {
            Ok(result) => records.push(EvalRecord {
                id: item.id,
                predicted: result.final_distribution().clone(),
                final_answer: result.final_answer().to_string(),
                gold: item.gold_label,
                metadata: item.metadata,
            }),
            Err(error) => errors.push(ItemFailure {
                id: item.id,
                error: error.to_string(),
            }),
        }
    }

    let evaluated = records.len();
    let overall_accuracy = if evaluated == 0 {
        0.0
    } else {
        records.iter().filter(|r| r.is_correct()).count() as f64 / evaluated as f64
    };
    let top_k = (1..=opts.k_max)
        .map(|k| TopKPoint {
            k,
            accuracy: top_k_accuracy(&records, k),
        })
        .collect();

    let keys: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.metadata.keys().cloned())
        .collect();
    let strata: BTreeMap<String, BTreeMap<String, StratumStats>> = keys
        .into_iter()
        .map(|key| {
            let groups = stratified_accuracy(&records, &key)
                .into_iter()
                .map(|(value, (accuracy, count))| (value, StratumStats { accuracy, count }))
                .collect();
            (key, groups)
        })
        .collect();

    let calibration = reliability(&records, opts.n_bins);

    Ok(McqReport {
        dataset: dataset_name.to_string(),
        requested_n: opts.n,
        seed: opts.seed,
        total_items,
        evaluated,
        errored: errors.len(),
        overall_accuracy,
        top_k,
        strata,
        calibration,
        records: records
            .iter()
            .map(|r| RecordSummary {
                id: r.id.clone(),
                final_answer: r.final_answer.clone(),
                gold: r.gold.clone(),
                correct: r.is_correct(),
                confidence: r.confidence(),
            })
            .collect(),
        errors,
        generated_at: opts.timestamp.clone(),
    })
}

/// Differential-diagnosis bench options: the MCQ knobs plus the headline
/// metric cutoff and an optional judge binding (`None` scores raw names).
#[derive(Debug, Clone)]
pub struct DdxBenchOptions {
    pub bench: BenchOptions,
    pub headline_k: usize,
    pub judge: Option<JudgeBinding>,
}

impl Default for DdxBenchOptions {
    fn default() -> Self {
        Self {
            bench: BenchOptions {
                k_max: 10,
                ..BenchOptions::default()
            },
            headline_k: 5,
            judge: None,
        }
    }
}

/// Runs the pipeline in open-differential mode over a case set, applies
/// judge standardization when configured, and computes the DDx metrics.
pub async fn run_ddx_bench(
    engine: &Engine,
    dataset_name: &str,
    cases: Vec<DdxCase>,
    opts: &DdxBenchOptions,
) -> Result<DdxReport, EvalError> {
    let subset = take_subset(cases, opts.bench.n, opts.bench.seed)?;
    let total_cases = subset.len();

    let runs = stream::iter(subset.into_iter().map(|case| async move {
        let outcome = engine.run(&case.to_query()).await;
        (case, outcome)
    }))
    .buffered(opts.bench.parallel.max(1))
    .collect::<Vec<_>>()
    .await;

    let mut scored: Vec<(String, AnswerDistribution, AnswerDistribution)> = Vec::new();
    let mut errors = Vec::new();
    let mut judge_fallbacks = 0usize;
    for (case, outcome) in runs {
        match outcome {
            Ok(result) => {
                let predicted = result.final_distribution().clone();
                let standardized = match &opts.judge {
                    Some(binding) => {
                        let outcome = judge_standardize(
                            &case.gold_differential,
                            &predicted,
                            engine.pool(),
                            binding,
                        )
                        .await;
                        if outcome.fallback {
                            judge_fallbacks += 1;
                        }
                        outcome.distribution
                    }
                    None => predicted,
                };
                scored.push((case.id, case.gold_differential, standardized));
            }
            Err(error) => errors.push(ItemFailure {
                id: case.id,
                error: error.to_string(),
            }),
        }
    }

    let (top_k, precision, recall, f1, per_case) = if scored.is_empty() {
        (Vec::new(), 0.0, 0.0, 0.0, Vec::new())
    } else {
        let pairs: Vec<(AnswerDistribution, AnswerDistribution)> = scored
            .iter()
            .map(|(_, gold, predicted)| (gold.clone(), predicted.clone()))
            .collect();
        let metrics = ddx_metrics(&pairs, opts.bench.k_max, opts.headline_k);
        let per_case = scored
            .iter()
            .zip(&metrics.per_case)
            .map(|((id, _, _), m)| CaseSummary {
                id: id.clone(),
                metrics: *m,
            })
            .collect();
        let top_k = metrics
            .top_k_accuracy
            .iter()
            .enumerate()
            .map(|(i, &accuracy)| TopKPoint {
                k: i + 1,
                accuracy,
            })
            .collect();
        (top_k, metrics.precision, metrics.recall, metrics.f1, per_case)
    };

    Ok(DdxReport {
        dataset: dataset_name.to_string(),
        requested_n: opts.bench.n,
        seed: opts.bench.seed,
        total_cases,
        evaluated: scored.len(),
        errored: errors.len(),
        judge: match &opts.judge {
            Some(binding) => binding.stage.backend_id.clone(),
            None => "none".to_string(),
        },
        judge_fallbacks,
        headline_k: opts.headline_k,
        precision,
        recall,
        f1,
        top_k,
        per_case,
        errors,
        generated_at: opts.bench.timestamp.clone(),
    })
}
