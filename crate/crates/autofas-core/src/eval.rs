//! AUC, teacher-alignment recall, and single-feature ablation importance.

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Per-query scores from both models, for the alignment metric.
#[derive(Clone, Debug)]
pub struct QueryGroup {
    pub query_id: usize,
    pub pre_scores: Vec<f64>,
    pub teacher_scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Probability that a random positive outranks a random negative; ties count
/// half. Computed from average ranks (Mann-Whitney U).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidParameter(
            "auc undefined for single-class labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie runs (1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j) as f64) / 2.0;
        for &ix in &order[i..j] {
            if labels[ix] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Indices of the top-k scores, ties broken by lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Mean over queries of |top-m(pre) ∩ top-k(teacher)| / k.
pub fn recall_alignment(groups: &[QueryGroup], k: usize, m: usize) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter("no query groups".into()));
    }
    let mut total = 0.0;
    for g in groups {
        let n = g.pre_scores.len();
        if g.teacher_scores.len() != n || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "query {}: score lists must be equal non-empty length",
                g.query_id
            )));
        }
        if k > n || m > n || k > m {
            return Err(Error::InvalidParameter(format!(
                "require k <= m <= group size, got k={k} m={m} size={n}"
            )));
        }
        let teacher_top = top_k_indices(&g.teacher_scores, k);
        let pre_top = top_k_indices(&g.pre_scores, m);
        let hit = teacher_top
            .iter()
            .filter(|ix| pre_top.contains(ix))
            .count();
        total += hit as f64 / k as f64;
    }
    Ok(total / groups.len() as f64)
}

/// A trained model that can score a dataset with one feature's embedding
/// zeroed at inference.
pub trait AblatableScorer {
    fn scores_with_ablated(&self, dataset: &Dataset, ablated: Option<usize>) -> Result<Vec<f64>>;
}

/// AUC decrease when a single feature is zeroed at inference. May be negative.
/// Non-additive across features: summing per-feature decreases need not equal
/// total AUC minus 0.5.
pub fn statistics_auc<S: AblatableScorer>(
    model: &S,
    dataset: &Dataset,
    feature_id: usize,
) -> Result<f64> {
    if feature_id >= dataset.num_features() {
        return Err(Error::InvalidParameter(format!(
            "feature id {feature_id} out of range"
        )));
    }
    let labels: Vec<u8> = dataset.examples.iter().map(|e| e.label).collect();
    let full = auc(&model.scores_with_ablated(dataset, None)?, &labels)?;
    let ablated = auc(
        &model.scores_with_ablated(dataset, Some(feature_id))?,
        &labels,
    )?;
    Ok(full - ablated)
}

/// Top-n features by statistics_auc descending, ties broken by lower id.
pub fn select_by_statistics_auc<S: AblatableScorer>(
    model: &S,
    dataset: &Dataset,
    n: usize,
) -> Result<Vec<usize>> {
    let m = dataset.num_features();
    let mut deltas = Vec::with_capacity(m);
    for f in 0..m {
        deltas.push(statistics_auc(model, dataset, f)?);
    }
    let mut ids = top_k_indices(&deltas, n);
    ids.sort_unstable();
    Ok(ids)
}
