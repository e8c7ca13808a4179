//! Dot-product similarity, ranking metrics and late fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::dot;

/// Query-by-corpus score matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::param(format!(
                "{rows}x{cols} similarity matrix with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite similarity"));
        }
        Ok(SimilarityMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SimilarityMatrix {
        SimilarityMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Entry `(i, j)` is `queries[i] . corpus[j]`.
pub fn similarity_matrix<Q: AsRef<[f64]>, C: AsRef<[f64]>>(
    queries: &[Q],
    corpus: &[C],
) -> Result<SimilarityMatrix> {
    let dim = queries
        .first()
        .map(|q| q.as_ref().len())
        .or_else(|| corpus.first().map(|c| c.as_ref().len()))
        .unwrap_or(0);
    let bad_q = queries.iter().any(|q| q.as_ref().len() != dim);
    let bad_c = corpus.iter().any(|c| c.as_ref().len() != dim);
    if bad_q || bad_c {
        return Err(Error::param("similarity inputs of mixed dimension"));
    }
    let mut values = Vec::with_capacity(queries.len() * corpus.len());
    for q in queries {
        for c in corpus {
            values.push(dot(q.as_ref(), c.as_ref()));
        }
    }
    SimilarityMatrix::new(queries.len(), corpus.len(), values)
}

/// Retrieval metrics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean average precision over queries with at least one relevant item.
    pub map: f64,
    /// `(k, precision at k)` averaged over all queries.
    pub p_at: Vec<(usize, f64)>,
    /// Average precision per query; `None` when nothing is relevant.
    pub per_query_ap: Vec<Option<f64>>,
    /// Queries left out of the MAP for lack of relevant items.
    pub excluded_queries: usize,
    pub config: String,
}

impl EvalReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.p_at.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Corpus indices by descending score; equal scores keep corpus order.
pub fn rank_row(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// MAP and P@k of a score matrix, where corpus item `j` is relevant to query
/// `i` when their labels agree.
pub fn evaluate_ranking<L: PartialEq>(
    sim: &SimilarityMatrix,
    query_labels: &[L],
    corpus_labels: &[L],
    ks: &[usize],
) -> Result<EvalReport> {
    if query_labels.len() != sim.rows() || corpus_labels.len() != sim.cols() {
        return Err(Error::param(format!(
            "{} query and {} corpus labels for a {}x{} matrix",
            query_labels.len(),
            corpus_labels.len(),
            sim.rows(),
            sim.cols()
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::param(format!("precision at {k} is undefined")));
    }
    let mut per_query_ap = Vec::with_capacity(sim.rows());
    let mut hits_at = vec![0.0; ks.len()];
    for (i, ql) in query_labels.iter().enumerate() {
        let order = rank_row(sim.row(i));
        let relevant: Vec<bool> = order.iter().map(|&j| corpus_labels[j] == *ql).collect();
        for (slot, &k) in hits_at.iter_mut().zip(ks) {
            *slot += precision_at_k(&relevant, k);
        }
        per_query_ap.push(average_precision(&relevant));
    }
    let aps: Vec<f64> = per_query_ap.iter().flatten().copied().collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    let nq = sim.rows().max(1) as f64;
    Ok(EvalReport {
        map,
        p_at: ks.iter().copied().zip(hits_at.iter().map(|h| h / nq)).collect(),
        excluded_queries: per_query_ap.iter().filter(|a| a.is_none()).count(),
        per_query_ap,
        config: String::new(),
    })
}

/// Average precision of a ranked relevance list; `None` when nothing in it is
/// relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, &r) in relevant.iter().enumerate() {
        if r {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    (found > 0).then(|| sum / found as f64)
}

/// Fraction of relevant items among the first `k` of a ranked list. Lists
/// shorter than `k` count the missing ranks as misses.
pub fn precision_at_k(relevant: &[bool], k: usize) -> f64 {
    relevant.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// Weighted elementwise sum; `None` weights every matrix by 1.
pub fn fuse_scores(sims: &[SimilarityMatrix], weights: Option<&[f64]>) -> Result<SimilarityMatrix> {
    let first = sims
        .first()
        .ok_or_else(|| Error::param("nothing to fuse"))?;
    if sims.iter().any(|s| s.rows != first.rows || s.cols != first.cols) {
        return Err(Error::param("similarity matrices of different shapes"));
    }
    let ones;
    let weights = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; sims.len()];
            &ones
        }
    };
    if weights.len() != sims.len() {
        return Err(Error::param(format!(
            "{} weights for {} matrices",
            weights.len(),
            sims.len()
        )));
    }
    let mut values = vec![0.0; first.values.len()];
    for (s, &w) in sims.iter().zip(weights) {
        values.iter_mut().zip(&s.values).for_each(|(v, x)| *v += w * x);
    }
    SimilarityMatrix::new(first.rows, first.cols, values)
}

/// Unweighted mean of per-class decision scores produced by classifiers
/// trained on different signature kinds.
pub fn fuse_class_scores(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = scores.first().ok_or_else(|| Error::param("nothing to fuse"))?;
    if scores.iter().any(|s| s.len() != first.len()) {
        return Err(Error::param("score vectors of different lengths"));
    }
    let n = scores.len() as f64;
    Ok((0..first.len())
        .map(|c| scores.iter().map(|s| s[c]).sum::<f64>() / n)
        .collect())
}
