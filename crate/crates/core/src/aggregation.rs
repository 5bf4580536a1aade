//! Pooling and boosting of expert answer distributions.
//!
//! Two stages, both pure and deterministic:
//!
//! 1. Weighted log opinion pool: a weighted sum of log-probabilities per
//!    label (equivalently a weighted geometric mean), normalized with a
//!    softmax over labels.
//! 2. Cascade boosting: each label's normalized probability is bumped by
//!    `boost_scale * sum_r(count[label, r] * theta[r])`, where the rank
//!    weights `theta` halve at every level, then the boosted scores are
//!    softmax-normalized into the final distribution.
//!
//! Natural log throughout; softmax is temperature-sensitive, so the base is
//! normative, not a free choice.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AnswerDistribution, ExpertResponse, ExpertWeights};

/// Probability floor applied before the log transform, which is undefined
/// at zero. Far below any meaningful model confidence.
pub const PROB_FLOOR: f64 = 1e-9;

/// Default number of rank levels (length of the theta sequence).
pub const DEFAULT_RANK_LEVELS: usize = 6;

/// Default boost scale: a unanimous rank-1 boost is then comparable in
/// magnitude to the normalized pooled probability.
pub const DEFAULT_BOOST_SCALE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("{dists} distributions but {weights} weights")]
    LengthMismatch { dists: usize, weights: usize },
    #[error("probability for label {0:?} still non-positive after flooring")]
    ZeroProbabilityAfterFloor(String),
    #[error("boost scale {0} must be >= 0")]
    NegativeBoostScale(f64),
}

/// Softmax with max-subtraction so large scores cannot overflow.
fn softmax(scores: &IndexMap<String, f64>) -> IndexMap<String, f64> {
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: IndexMap<String, f64> = scores
        .iter()
        .map(|(l, &s)| (l.clone(), (s - max).exp()))
        .collect();
    let total: f64 = exps.values().sum();
    exps.into_iter().map(|(l, e)| (l, e / total)).collect()
}

fn check_softmax_of(
    scores: &IndexMap<String, f64>,
    claimed: &AnswerDistribution,
) -> Result<(), String> {
    if scores.len() != claimed.len() {
        return Err(format!(
            "{} scores vs {} probabilities",
            scores.len(),
            claimed.len()
        ));
    }
    let recomputed = softmax(scores);
    for (label, &p) in &recomputed {
        match claimed.get(label) {
            Some(q) if (q - p).abs() <= crate::domain::PROB_TOLERANCE => {}
            Some(q) => {
                return Err(format!(
                    "label {label:?}: claimed {q}, softmax gives {p}"
                ))
            }
            None => return Err(format!("label {label:?} missing")),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PooledDistribution

/// Output of the log opinion pool: per-label log scores and their softmax
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledDistribution {
    log_scores: IndexMap<String, f64>,
    normalized: AnswerDistribution,
}

impl PooledDistribution {
    /// Wraps an existing distribution as a pool result (log scores are the
    /// floored log-probabilities, whose softmax reproduces the input).
    pub fn from_normalized(normalized: AnswerDistribution) -> Self {
        let log_scores = normalized
            .probs()
            .iter()
            .map(|(l, &p)| (l.clone(), p.max(PROB_FLOOR).ln()))
            .collect();
        Self {
            log_scores,
            normalized,
        }
    }

    pub fn log_scores(&self) -> &IndexMap<String, f64> {
        &self.log_scores
    }

    pub fn normalized(&self) -> &AnswerDistribution {
        &self.normalized
    }
}

#[derive(Deserialize)]
struct RawPooled {
    log_scores: IndexMap<String, f64>,
    normalized: AnswerDistribution,
}

impl<'de> Deserialize<'de> for PooledDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawPooled::deserialize(deserializer)?;
        check_softmax_of(&raw.log_scores, &raw.normalized)
            .map_err(|e| serde::de::Error::custom(format!("pooled distribution: {e}")))?;
        Ok(Self {
            log_scores: raw.log_scores,
            normalized: raw.normalized,
        })
    }
}

// ---------------------------------------------------------------------------
// RankFrequencyTable

/// How often each label appeared at each rank across the experts' ranked
/// distributions. Rank 1 is each expert's top answer; an expert with a
/// support smaller than `max_rank` contributes counts only down to its
/// support size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankFrequencyTable {
    counts: BTreeMap<String, Vec<u32>>,
    max_rank: usize,
}

impl RankFrequencyTable {
    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// Count for (label, rank); rank is 1-based.
    pub fn count(&self, label: &str, rank: usize) -> u32 {
        if rank == 0 || rank > self.max_rank {
            return 0;
        }
        self.counts
            .get(label)
            .map(|row| row[rank - 1])
            .unwrap_or(0)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// `sum_r(count[label, r] * theta[r])` over the ranks both sides cover.
    pub fn boost_sum(&self, label: &str, theta: &[f64]) -> f64 {
        match self.counts.get(label) {
            None => 0.0,
            Some(row) => row
                .iter()
                .zip(theta)
                .map(|(&count, &weight)| count as f64 * weight)
                .sum(),
        }
    }

    /// Test/offline constructor from explicit (label, rank, count) triples.
    pub fn from_counts(
        entries: &[(&str, usize, u32)],
        max_rank: usize,
    ) -> Self {
        let mut counts: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for &(label, rank, count) in entries {
            assert!(rank >= 1 && rank <= max_rank, "rank {rank} out of range");
            counts.entry(label.to_string()).or_insert_with(|| vec![0; max_rank])[rank - 1] +=
                count;
        }
        Self { counts, max_rank }
    }
}

/// Tallies label frequencies per ranked position across experts. Each
/// expert's own distribution is ranked by descending probability (ties by
/// ascending label) and the labels at ranks `1..=min(max_rank, support)`
/// are counted.
pub fn rank_frequencies(responses: &[ExpertResponse], max_rank: usize) -> RankFrequencyTable {
    assert!(max_rank >= 1, "max_rank must be >= 1");
    let mut counts: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for response in responses {
        for (i, (label, _)) in response
            .distribution()
            .ranked()
            .into_iter()
            .take(max_rank)
            .enumerate()
        {
            counts
                .entry(label.to_string())
                .or_insert_with(|| vec![0; max_rank])[i] += 1;
        }
    }
    RankFrequencyTable { counts, max_rank }
}

// ---------------------------------------------------------------------------
// CascadeConfig

/// Rank weights and boost scale for cascade boosting. The weight at rank 1
/// is 1.0 and every later rank carries exactly half the previous weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeConfig {
    theta: Vec<f64>,
    boost_scale: f64,
}

/// The halving rank-weight sequence: `theta[0] = 1.0`, `theta[r+1] = theta[r] / 2`.
pub fn theta_sequence(levels: usize) -> Vec<f64> {
    let mut theta = Vec::with_capacity(levels);
    let mut w = 1.0;
    for _ in 0..levels {
        theta.push(w);
        w /= 2.0;
    }
    theta
}

impl CascadeConfig {
    pub fn new(rank_levels: usize, boost_scale: f64) -> Result<Self, AggregationError> {
        if !(boost_scale >= 0.0) || !boost_scale.is_finite() {
            return Err(AggregationError::NegativeBoostScale(boost_scale));
        }
        assert!(rank_levels >= 1, "rank_levels must be >= 1");
        Ok(Self {
            theta: theta_sequence(rank_levels),
            boost_scale,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn boost_scale(&self) -> f64 {
        self.boost_scale
    }

    /// Ranks beyond this level contribute no boost.
    pub fn rank_levels(&self) -> usize {
        self.theta.len()
    }
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self::new(DEFAULT_RANK_LEVELS, DEFAULT_BOOST_SCALE).expect("default config is valid")
    }
}

// ---------------------------------------------------------------------------
// BoostedDistribution

/// Output of cascade boosting: per-label boosted scores and their softmax
/// normalization, the pipeline's final aggregated distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoostedDistribution {
    boosted_scores: IndexMap<String, f64>,
    #[serde(rename = "final")]
    final_distribution: AnswerDistribution,
}

impl BoostedDistribution {
    pub fn boosted_scores(&self) -> &IndexMap<String, f64> {
        &self.boosted_scores
    }

    pub fn final_distribution(&self) -> &AnswerDistribution {
        &self.final_distribution
    }
}

#[derive(Deserialize)]
struct RawBoosted {
    boosted_scores: IndexMap<String, f64>,
    #[serde(rename = "final")]
    final_distribution: AnswerDistribution,
}

impl<'de> Deserialize<'de> for BoostedDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawBoosted::deserialize(deserializer)?;
        check_softmax_of(&raw.boosted_scores, &raw.final_distribution)
            .map_err(|e| serde::de::Error::custom(format!("boosted distribution: {e}")))?;
        Ok(Self {
            boosted_scores: raw.boosted_scores,
            final_distribution: raw.final_distribution,
        })
    }
}

// ---------------------------------------------------------------------------
// Operations

/// Extends every distribution to the union of all input labels (first-seen
/// order). Labels absent from an input receive the [`PROB_FLOOR`] before
/// that distribution is renormalized, so downstream logs stay defined.
///
/// An empty input list yields an empty output.
pub fn align_support(dists: &[AnswerDistribution]) -> Vec<AnswerDistribution> {
    let mut union: Vec<String> = Vec::new();
    for dist in dists {
        for label in dist.labels() {
            if !union.iter().any(|l| l == label) {
                union.push(label.to_string());
            }
        }
    }
    dists
        .iter()
        .map(|dist| {
            let filled: IndexMap<String, f64> = union
                .iter()
                .map(|label| (label.clone(), dist.get(label).unwrap_or(PROB_FLOOR)))
                .collect();
            let total: f64 = filled.values().sum();
            let probs = filled.into_iter().map(|(l, p)| (l, p / total)).collect();
            AnswerDistribution::new(probs).expect("renormalized alignment is a valid distribution")
        })
        .collect()
}

/// Weighted log opinion pool over aligned distributions:
/// `log_scores[x] = sum_i(w[i] * ln(max(p_i[x], PROB_FLOOR)))`, normalized
/// with an overflow-safe softmax. Equivalent to the normalized weighted
/// geometric mean of the inputs.
pub fn wlop_pool(
    dists: &[AnswerDistribution],
    weights: &ExpertWeights,
) -> Result<PooledDistribution, AggregationError> {
    if dists.len() != weights.len() || dists.is_empty() {
        return Err(AggregationError::LengthMismatch {
            dists: dists.len(),
            weights: weights.len(),
        });
    }
    let mut log_scores: IndexMap<String, f64> = IndexMap::new();
    for label in dists[0].labels() {
        let mut score = 0.0;
        for (dist, &w) in dists.iter().zip(weights.as_slice()) {
            let p = dist.get(label).unwrap_or(PROB_FLOOR).max(PROB_FLOOR);
            if !(p > 0.0) {
                return Err(AggregationError::ZeroProbabilityAfterFloor(
                    label.to_string(),
                ));
            }
            score += w * p.ln();
        }
        log_scores.insert(label.to_string(), score);
    }
    let normalized = AnswerDistribution::new(softmax(&log_scores))
        .expect("softmax output is a valid distribution");
    Ok(PooledDistribution {
        log_scores,
        normalized,
    })
}

/// Applies the rank-frequency boost to the pooled probabilities and
/// softmax-normalizes the result:
/// `boosted[x] = normalized[x] + boost_scale * sum_r(count[x, r] * theta[r])`.
///
/// Labels absent from the table contribute zero boost; table labels outside
/// the pooled universe are ignored. A negative boost scale is rejected at
/// [`CascadeConfig::new`], so this composition is total.
pub fn cascade_boost(
    pooled: &PooledDistribution,
    table: &RankFrequencyTable,
    cfg: &CascadeConfig,
) -> BoostedDistribution {
    let boosted_scores: IndexMap<String, f64> = pooled
        .normalized
        .probs()
        .iter()
        .map(|(label, &p)| {
            let boost = cfg.boost_scale * table.boost_sum(label, &cfg.theta);
            (label.clone(), p + boost)
        })
        .collect();
    let final_distribution = AnswerDistribution::new(softmax(&boosted_scores))
        .expect("softmax output is a valid distribution");
    BoostedDistribution {
        boosted_scores,
        final_distribution,
    }
}

/// Full aggregation of an expert panel: align supports, pool in log space,
/// tally rank frequencies over the experts' own (unaligned) distributions,
/// and cascade-boost. Deterministic for fixed inputs.
pub fn aggregate(
    responses: &[ExpertResponse],
    weights: &ExpertWeights,
    cfg: &CascadeConfig,
) -> Result<(PooledDistribution, BoostedDistribution), AggregationError> {
    let dists: Vec<AnswerDistribution> = responses
        .iter()
        .map(|r| r.distribution().clone())
        .collect();
    let aligned = align_support(&dists);
    let pooled = wlop_pool(&aligned, weights)?;
    // Ranks come from what each expert actually emitted; floor-padded
    // alignment labels must not masquerade as ranked answers.
    let table = rank_frequencies(responses, cfg.rank_levels());
    let boosted = cascade_boost(&pooled, &table, cfg);
    Ok((pooled, boosted))
}

// ---------------------------------------------------------------------------
