//! Classifiers over image signatures.
//!
//! All of them compare signatures with dot products or squared Euclidean
//! distances and break ties towards the smaller class index so that runs are
//! reproducible.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{dot, FeatureVector};
use crate::models::fit_pca;

pub const DEFAULT_K: usize = 4;
pub const RL_LEARNING_RATE: f64 = 1e-5;
pub const FV_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_POSITIVE_WEIGHT: f64 = 5.0;
pub const DEFAULT_PASSES: usize = 100;
pub const NCM_ML_LEARNING_RATE: f64 = 1.0;
pub const NCM_ML_BATCHES: usize = 200;
pub const NCM_ML_TARGET_DIMS: [usize; 4] = [16, 32, 64, 128];

/// Training half of a split: features with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledFeatureSet {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::param("empty labeled set"));
        }
        if features.len() != labels.len() {
            return Err(Error::param(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].dim();
        if features.iter().any(|f| f.dim() != dim) {
            return Err(Error::param("features of mixed dimension"));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::param(format!(
                "label {l} outside 0..{class_count}"
            )));
        }
        Ok(LabeledFeatureSet {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i].values
    }
}

fn check_query(expected: usize, query: &[f64]) -> Result<()> {
    if query.len() != expected {
        return Err(Error::param(format!(
            "query of dimension {} against features of dimension {expected}",
            query.len()
        )));
    }
    Ok(())
}

/// Majority vote among the `k` items most similar (dot product) to `query`.
/// Vote ties go to the larger summed similarity, then to the smaller class.
pub fn knn_predict(train: &LabeledFeatureSet, query: &[f64], k: usize) -> Result<usize> {
    check_query(train.dim(), query)?;
    if k == 0 || k > train.len() {
        return Err(Error::param(format!(
            "k = {k} outside 1..={}",
            train.len()
        )));
    }
    let sims: Vec<f64> = (0..train.len()).map(|i| dot(train.row(i), query)).collect();
    Ok(knn_vote(&sims, train.labels(), train.class_count(), k))
}

/// The vote of [`knn_predict`] given precomputed similarities.
pub fn knn_vote(sims: &[f64], labels: &[usize], class_count: usize, k: usize) -> usize {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut votes = vec![0usize; class_count];
    let mut mass = vec![0.0f64; class_count];
    for &i in order.iter().take(k) {
        votes[labels[i]] += 1;
        mass[labels[i]] += sims[i];
    }
    let mut best = 0;
    for c in 1..class_count {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    best
}

/// Per-class mean vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub means: Vec<Vec<f64>>,
}

impl ClassMeans {
    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

pub fn ncm_fit(train: &LabeledFeatureSet) -> Result<ClassMeans> {
    let dim = train.dim();
    let mut sums = vec![vec![0.0; dim]; train.class_count()];
    let mut counts = vec![0usize; train.class_count()];
    for (f, &l) in train.features().iter().zip(train.labels()) {
        counts[l] += 1;
        sums[l].iter_mut().zip(&f.values).for_each(|(s, v)| *s += v);
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::param(format!("class {c} has no training example")));
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= *n as f64);
    }
    Ok(ClassMeans { means: sums })
}

/// Learned linear metric for NCM: `K x dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows > cols || data.len() != rows * cols {
            return Err(Error::param(format!(
                "projection of {rows}x{cols} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("projection has non-finite entries"));
        }
        Ok(ProjectionMatrix { rows, cols, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        ProjectionMatrix {
            rows: dim,
            cols: dim,
            data,
        }
    }

    pub fn target_dim(&self) -> usize {
        self.rows
    }

    pub fn input_dim(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> ProjectionMatrix {
        ProjectionMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|r| dot(r, x)).collect()
    }
}

/// Nearest class mean under `||P (query - mean)||^2` (plain squared
/// Euclidean distance without a metric).
pub fn ncm_predict(
    means: &ClassMeans,
    query: &[f64],
    metric: Option<&ProjectionMatrix>,
) -> Result<usize> {
    Ok(argmin(&ncm_distances(means, query, metric)?))
}

/// Distance of `query` to every class mean.
pub fn ncm_distances(
    means: &ClassMeans,
    query: &[f64],
    metric: Option<&ProjectionMatrix>,
) -> Result<Vec<f64>> {
    check_query(means.dim(), query)?;
    if let Some(p) = metric {
        if p.input_dim() != query.len() {
            return Err(Error::param(format!(
                "metric expects dimension {}, got {}",
                p.input_dim(),
                query.len()
            )));
        }
        let pq = p.apply(query);
        Ok(means
            .means
            .iter()
            .map(|m| {
                let pm = p.apply(m);
                pq.iter().zip(&pm).map(|(a, b)| (a - b) * (a - b)).sum()
            })
            .collect())
    } else {
        Ok(means
            .means
            .iter()
            .map(|m| query.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect())
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Mean log-probability of the correct class under the softmax NCM model
/// `p(c|x) ~ exp(-0.5 ||P (x - mu_c)||^2)`.
pub fn ncm_ml_objective(
    projection: &ProjectionMatrix,
    train: &LabeledFeatureSet,
    means: &ClassMeans,
) -> f64 {
    let projected_means: Vec<Vec<f64>> = means.means.iter().map(|m| projection.apply(m)).collect();
    let mut total = 0.0;
    for i in 0..train.len() {
        let px = projection.apply(train.row(i));
        let logits = softmax_logits(&px, &projected_means);
        let lse = log_sum_exp(&logits);
        total += logits[train.labels()[i]] - lse;
    }
    total / train.len() as f64
}

fn softmax_logits(px: &[f64], projected_means: &[Vec<f64>]) -> Vec<f64> {
    projected_means
        .iter()
        .map(|pm| -0.5 * px.iter().zip(pm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gradient of the mean log-likelihood over `batch` with respect to `P`:
/// `mean_i sum_c (p_ic - [c = y_i]) P z_ic z_ic^T` with `z_ic = x_i - mu_c`.
pub fn ncm_ml_gradient(
    projection: &ProjectionMatrix,
    train: &LabeledFeatureSet,
    means: &ClassMeans,
    batch: &[usize],
) -> Vec<f64> {
    let (k, dim) = (projection.rows, projection.cols);
    let projected_means: Vec<Vec<f64>> = means.means.iter().map(|m| projection.apply(m)).collect();
    let mut grad = vec![0.0; k * dim];
    // coefficients of the mean terms, accumulated across the batch
    let mut mean_coef = vec![vec![0.0; k]; means.class_count()];
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = train.row(i);
        let px = projection.apply(x);
        let logits = softmax_logits(&px, &projected_means);
        let lse = log_sum_exp(&logits);
        let mut x_coef = vec![0.0; k];
        for (c, pm) in projected_means.iter().enumerate() {
            let p = (logits[c] - lse).exp();
            let a = scale * (p - if c == train.labels()[i] { 1.0 } else { 0.0 });
            if a == 0.0 {
                continue;
            }
            for r in 0..k {
                let v = a * (px[r] - pm[r]);
                x_coef[r] += v;
                mean_coef[c][r] += v;
            }
        }
        for r in 0..k {
            let row = &mut grad[r * dim..(r + 1) * dim];
            row.iter_mut().zip(x).for_each(|(g, xv)| *g += x_coef[r] * xv);
        }
    }
    for (c, coef) in mean_coef.iter().enumerate() {
        let m = &means.means[c];
        for r in 0..k {
            let row = &mut grad[r * dim..(r + 1) * dim];
            row.iter_mut().zip(m).for_each(|(g, mv)| *g -= coef[r] * mv);
        }
    }
    grad
}

/// Metric-learning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcmMlParams {
    pub target_dim: usize,
    pub learning_rate: f64,
    pub batches: usize,
    pub seed: u64,
}

impl NcmMlParams {
    pub fn new(target_dim: usize, seed: u64) -> Self {
        NcmMlParams {
            target_dim,
            learning_rate: NCM_ML_LEARNING_RATE,
            batches: NCM_ML_BATCHES,
            seed,
        }
    }
}

/// Learned metric with the training objective at each checkpoint.
#[derive(Debug, Clone)]
pub struct NcmMlFit {
    pub projection: ProjectionMatrix,
    /// `(batches done, mean training log-likelihood)`; the first entry is
    /// the PCA initialization and the last the returned metric.
    pub objective_trace: Vec<(usize, f64)>,
}

pub fn ncm_ml_fit(
    train: &LabeledFeatureSet,
    target_dim: usize,
    learning_rate: f64,
    batches: usize,
    seed: u64,
) -> Result<ProjectionMatrix> {
    let params = NcmMlParams {
        target_dim,
        learning_rate,
        batches,
        seed,
    };
    ncm_ml_fit_traced(train, &params, 50).map(|f| f.projection)
}

/// Learns `P` by mini-batch gradient ascent on the NCM log-likelihood.
/// `P` starts from the top principal directions of the training features;
/// class means stay fixed at their input-space values. Each batch holds as
/// many items as there are classes. The objective is logged every
/// `checkpoint_every` batches (0 logs only start and end).
pub fn ncm_ml_fit_traced(
    train: &LabeledFeatureSet,
    params: &NcmMlParams,
    checkpoint_every: usize,
) -> Result<NcmMlFit> {
    let dim = train.dim();
    if params.target_dim == 0 || params.target_dim > dim {
        return Err(Error::param(format!(
            "target dimension {} outside 1..={dim}",
            params.target_dim
        )));
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::param("learning rate must be positive"));
    }
    let means = ncm_fit(train)?;
    let rows: Vec<&[f64]> = train.features().iter().map(|f| f.values.as_slice()).collect();
    let pca = fit_pca(&rows, params.target_dim)?;
    let mut projection = ProjectionMatrix::new(params.target_dim, dim, pca.basis().to_vec())?;

    let mut trace = vec![(0, ncm_ml_objective(&projection, train, &means))];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = train.class_count().min(train.len()).max(1);
    for b in 1..=params.batches {
        order.shuffle(&mut rng);
        let batch = &order[..batch_size];
        let grad = ncm_ml_gradient(&projection, train, &means, batch);
        for (p, g) in projection.data.iter_mut().zip(&grad) {
            *p += params.learning_rate * g;
        }
        if projection.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite projection after batch {b}"
            )));
        }
        if b == params.batches || (checkpoint_every > 0 && b % checkpoint_every == 0) {
            let obj = ncm_ml_objective(&projection, train, &means);
            if !obj.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "objective {obj} after batch {b}"
                )));
            }
            trace.push((b, obj));
        }
    }
    Ok(NcmMlFit {
        projection,
        objective_trace: trace,
    })
}

/// One-vs-all SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub learning_rate: f64,
    pub positive_weight: f64,
    pub passes: usize,
    pub seed: u64,
}

impl SvmParams {
    pub fn for_rl(seed: u64) -> Self {
        SvmParams {
            learning_rate: RL_LEARNING_RATE,
            positive_weight: DEFAULT_POSITIVE_WEIGHT,
            passes: DEFAULT_PASSES,
            seed,
        }
    }

    pub fn for_fv(seed: u64) -> Self {
        SvmParams {
            learning_rate: FV_LEARNING_RATE,
            ..SvmParams::for_rl(seed)
        }
    }
}

/// One hyperplane per class; the last coefficient of each is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Vec<Vec<f64>>,
    params: SvmParams,
}

impl LinearModel {
    pub fn new(weights: Vec<Vec<f64>>, params: SvmParams) -> Result<Self> {
        let Some(first) = weights.first() else {
            return Err(Error::param("linear model without classes"));
        };
        let len = first.len();
        if len < 2 || weights.iter().any(|w| w.len() != len) {
            return Err(Error::param("linear model weights of inconsistent length"));
        }
        if weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("linear model has non-finite weights"));
        }
        Ok(LinearModel { weights, params })
    }

    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    /// Feature dimension, excluding the bias.
    pub fn dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn params(&self) -> &SvmParams {
        &self.params
    }

    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        check_query(self.dim(), query)?;
        let d = self.dim();
        Ok(self
            .weights
            .iter()
            .map(|w| dot(&w[..d], query) + w[d])
            .collect())
    }
}

/// Trains one hinge-loss classifier per class by plain SGD: `passes` epochs,
/// each visiting the training set in a fresh seeded permutation. On a margin
/// violation `w += lr * m * y * x` with `m = positive_weight` for positives
/// and 1 for negatives; the bias moves by `lr * y`. There is no weight decay.
pub fn svm_fit_ovr(train: &LabeledFeatureSet, params: &SvmParams) -> Result<LinearModel> {
    let c = train.class_count();
    if c < 2 {
        return Err(Error::param("one-vs-all training needs at least two classes"));
    }
    if !(params.learning_rate > 0.0) || !(params.positive_weight > 0.0) {
        return Err(Error::param("learning rate and positive weight must be positive"));
    }
    let d = train.dim();
    let mut weights = vec![vec![0.0; d + 1]; c];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..params.passes {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = train.row(i);
            let label = train.labels()[i];
            for (class, w) in weights.iter_mut().enumerate() {
                let (y, m) = if class == label {
                    (1.0, params.positive_weight)
                } else {
                    (-1.0, 1.0)
                };
                let score = dot(&w[..d], x) + w[d];
                if y * score < 1.0 {
                    let step = params.learning_rate * m * y;
                    w[..d].iter_mut().zip(x).for_each(|(wi, xi)| *wi += step * xi);
                    w[d] += params.learning_rate * y;
                }
            }
        }
    }
    LinearModel::new(weights, *params)
}

/// Per-class scores and the winning class (ties to the smaller index).
pub fn svm_predict(model: &LinearModel, query: &[f64]) -> Result<(Vec<f64>, usize)> {
    let scores = model.scores(query)?;
    let label = argmax(&scores);
    Ok((scores, label))
}

/// Index of the largest score, ties to the smaller index.
pub fn argmax_label(scores: &[f64]) -> usize {
    argmax(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureKind;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec(), FeatureKind::Rl, "")
    }

    fn set(rows: &[(&[f64], usize)], classes: usize) -> LabeledFeatureSet {
        LabeledFeatureSet::new(
            rows.iter().map(|(v, _)| fv(v)).collect(),
            rows.iter().map(|(_, l)| *l).collect(),
            classes,
        )
        .unwrap()
    }

    fn blobs(centers: &[[f64; 2]], per_class: usize, spread: f64, seed: u64) -> LabeledFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                feats.push(fv(&[center[0] + spread * dx, center[1] + spread * dy]));
                labels.push(c);
            }
        }
        LabeledFeatureSet::new(feats, labels, centers.len()).unwrap()
    }

    #[test]
    fn labeled_set_validation() {
        assert!(LabeledFeatureSet::new(vec![], vec![], 2).is_err());
        assert!(LabeledFeatureSet::new(vec![fv(&[1.0])], vec![2], 2).is_err());
        assert!(LabeledFeatureSet::new(vec![fv(&[1.0]), fv(&[1.0, 2.0])], vec![0, 1], 2).is_err());
    }

    #[test]
    fn knn_cases() {
        let train = set(&[(&[1.0, 0.0], 0), (&[0.0, 1.0], 1), (&[0.7, 0.7], 1)], 2);
        assert_eq!(knn_predict(&train, &[1.0, 0.0], 1).unwrap(), 0);
        assert_eq!(knn_predict(&train, &[0.0, 1.0], 1).unwrap(), 1);
        assert!(knn_predict(&train, &[1.0], 1).is_err());
        assert!(knn_predict(&train, &[1.0, 0.0], 0).is_err());
        assert!(knn_predict(&train, &[1.0, 0.0], 4).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_similarity_mass() {
        // top-4 = {A: 1.0 + 0.9, B: 0.95 + 0.75}
        let sims = [1.0, 0.95, 0.9, 0.75, 0.1];
        let labels = [0, 1, 0, 1, 1];
        assert_eq!(knn_vote(&sims, &labels, 2, 4), 0);
        let labels = [1, 0, 1, 0, 0];
        assert_eq!(knn_vote(&sims, &labels, 2, 4), 1);
        // full tie falls to the smaller class
        assert_eq!(knn_vote(&[0.5, 0.5], &[1, 0], 2, 2), 0);
    }

    #[test]
    fn ncm_cases() {
        let train = set(&[(&[0.0, 0.0], 0), (&[2.0, 2.0], 0), (&[5.0, 5.0], 1)], 2);
        let means = ncm_fit(&train).unwrap();
        assert_eq!(means.means[0], vec![1.0, 1.0]);
        assert_eq!(means.means[1], vec![5.0, 5.0]);

        let one_d = ClassMeans {
            means: vec![vec![0.0], vec![10.0]],
        };
        assert_eq!(ncm_predict(&one_d, &[2.0], None).unwrap(), 0);
        assert_eq!(ncm_predict(&one_d, &[10.0], None).unwrap(), 1);
        assert_eq!(ncm_predict(&one_d, &[5.0], None).unwrap(), 0);
        let p = ProjectionMatrix::new(1, 1, vec![-3.0]).unwrap();
        assert_eq!(ncm_predict(&one_d, &[6.0], Some(&p)).unwrap(), 1);
        assert!(ncm_predict(&one_d, &[1.0, 2.0], None).is_err());

        let missing = set(&[(&[0.0], 0), (&[1.0], 2)], 3);
        assert!(ncm_fit(&missing).is_err());
    }

    #[test]
    fn ncm_invariant_under_global_metric_scale() {
        let data = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 10, 1.0, 3);
        let means = ncm_fit(&data).unwrap();
        let p = ProjectionMatrix::new(2, 2, vec![1.0, 0.5, -0.3, 2.0]).unwrap();
        for f in data.features() {
            let a = ncm_predict(&means, &f.values, Some(&p)).unwrap();
            let b = ncm_predict(&means, &f.values, Some(&p.scaled(-2.5))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ncm_ml_gradient_matches_finite_differences() {
        let data = blobs(&[[0.0, 0.0], [1.5, 0.5]], 8, 1.0, 4);
        let means = ncm_fit(&data).unwrap();
        let p = ProjectionMatrix::new(2, 2, vec![0.8, -0.2, 0.3, 1.1]).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let grad = ncm_ml_gradient(&p, &data, &means, &all);
        let h = 1e-6;
        for i in 0..4 {
            let mut plus = p.data.clone();
            plus[i] += h;
            let mut minus = p.data.clone();
            minus[i] -= h;
            let fp = ncm_ml_objective(&ProjectionMatrix::new(2, 2, plus).unwrap(), &data, &means);
            let fm = ncm_ml_objective(&ProjectionMatrix::new(2, 2, minus).unwrap(), &data, &means);
            let fd = (fp - fm) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6 * fd.abs().max(1.0), "entry {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn ncm_ml_improves_objective_and_is_deterministic() {
        let data = blobs(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], 20, 0.5, 5);
        let params = NcmMlParams::new(2, 11);
        let fit = ncm_ml_fit_traced(&data, &params, 20).unwrap();
        let first = fit.objective_trace.first().unwrap().1;
        let last = fit.objective_trace.last().unwrap().1;
        assert!(last >= first, "{first} -> {last}");
        assert!(fit.objective_trace.iter().all(|(_, v)| v.is_finite()));
        assert_eq!(fit.projection.target_dim(), 2);

        let again = ncm_ml_fit(&data, 2, 1.0, 200, 11).unwrap();
        assert_eq!(again, fit.projection);
        assert!(ncm_ml_fit(&data, 3, 1.0, 10, 0).is_err());
    }

    #[test]
    fn ncm_ml_reports_divergence() {
        let data = blobs(&[[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]], 10, 10.0, 6);
        let r = ncm_ml_fit(&data, 2, 1e300, 200, 1);
        assert!(matches!(r, Err(Error::TrainingDiverged(_))), "{r:?}");
    }

    #[test]
    fn svm_separates_blobs() {
        let data = blobs(&[[3.0, 0.0], [-3.0, 0.0]], 30, 0.7, 7);
        let params = SvmParams {
            learning_rate: 0.01,
            ..SvmParams::for_rl(1)
        };
        let model = svm_fit_ovr(&data, &params).unwrap();
        for (f, &l) in data.features().iter().zip(data.labels()) {
            assert_eq!(svm_predict(&model, &f.values).unwrap().1, l);
        }
        let again = svm_fit_ovr(&data, &params).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn svm_with_default_params_on_separable_blobs() {
        let data = blobs(&[[3.0, 0.0], [-3.0, 0.0]], 30, 0.7, 8);
        let model = svm_fit_ovr(&data, &SvmParams::for_rl(2)).unwrap();
        let correct = data
            .features()
            .iter()
            .zip(data.labels())
            .filter(|(f, &l)| svm_predict(&model, &f.values).unwrap().1 == l)
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn svm_on_identical_features_is_constant() {
        let data = set(&[(&[1.0, 2.0], 0), (&[1.0, 2.0], 1), (&[1.0, 2.0], 1)], 2);
        let model = svm_fit_ovr(&data, &SvmParams::for_rl(3)).unwrap();
        // every hyperplane is a multiple of the single input plus a bias
        for w in model.weights() {
            assert!((w[1] - 2.0 * w[0]).abs() < 1e-15);
        }
        let labels: Vec<usize> = data
            .features()
            .iter()
            .map(|f| svm_predict(&model, &f.values).unwrap().1)
            .collect();
        assert!(labels.iter().all(|&l| l == labels[0]));

        let single = set(&[(&[1.0], 0)], 1);
        assert!(svm_fit_ovr(&single, &SvmParams::for_rl(0)).is_err());
    }

    #[test]
    fn svm_predict_properties() {
        let model = LinearModel::new(
            vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]],
            SvmParams::for_rl(0),
        )
        .unwrap();
        assert_eq!(svm_predict(&model, &[1.0, 0.0]).unwrap().1, 0);
        assert!(svm_predict(&model, &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let model = LinearModel::new(w.clone(), SvmParams::for_rl(0)).unwrap();
        let shifted: Vec<Vec<f64>> = w.iter().map(|r| { let mut r = r.clone(); r[3] += 7.0; r }).collect();
        let shifted = LinearModel::new(shifted, SvmParams::for_rl(0)).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (s, l) = svm_predict(&model, &q).unwrap();
            assert_eq!(l, svm_predict(&shifted, &q).unwrap().1);
            let q2: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
            let (s2, _) = svm_predict(&model, &q2).unwrap();
            for c in 0..3 {
                let bias = w[c][3];
                assert!(((s2[c] - bias) - 3.0 * (s[c] - bias)).abs() < 1e-12);
            }
        }
    }
}
