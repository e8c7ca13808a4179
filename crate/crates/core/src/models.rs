//! PCA and diagonal-covariance Gaussian mixtures.
//!
//! Both are trained once on a sample of local descriptors and then applied to
//! every image: PCA reduces SIFT to a few dozen dimensions and the mixture is
//! the visual vocabulary against which Fisher vectors are computed.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densefeat::DescriptorSet;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-4;
pub const WEIGHT_FLOOR: f64 = 1e-6;

// Floor for dimensions with no variance at all in the training sample.
const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-12;

fn check_rows<R: AsRef<[f64]>>(samples: &[R]) -> Result<usize> {
    let dim = samples
        .first()
        .map(|s| s.as_ref().len())
        .ok_or_else(|| Error::param("no samples"))?;
    if dim == 0 {
        return Err(Error::param("zero-dimensional samples"));
    }
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != dim) {
        return Err(Error::param(format!(
            "sample of dimension {} among samples of dimension {dim}",
            bad.as_ref().len()
        )));
    }
    Ok(dim)
}

fn mean_of<R: AsRef<[f64]>>(samples: &[R], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `output_dim x input_dim`, row-major; rows are orthonormal.
    basis: Vec<f64>,
    /// Sample-covariance eigenvalue of each basis row.
    eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn from_parts(mean: Vec<f64>, basis: Vec<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let k = eigenvalues.len();
        if d == 0 || k == 0 || k > d || basis.len() != k * d {
            return Err(Error::param(format!(
                "inconsistent PCA parts: mean {d}, basis {}, eigenvalues {k}",
                basis.len()
            )));
        }
        Ok(PcaModel {
            mean,
            basis,
            eigenvalues,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_row(&self, k: usize) -> &[f64] {
        let d = self.input_dim();
        &self.basis[k * d..(k + 1) * d]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `basis * (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::param(format!(
                "PCA expects dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .basis
            .chunks_exact(self.input_dim())
            .map(|row| crate::feature::dot(row, &centered))
            .collect())
    }

    /// Projects every descriptor, keeping the patch centers.
    pub fn project_set(&self, set: &DescriptorSet) -> Result<DescriptorSet> {
        let mut out = DescriptorSet::new(self.output_dim());
        for (row, center) in set.rows().zip(set.centers()) {
            out.push(&self.project(row)?, *center)?;
        }
        Ok(out)
    }

    /// Maps a projected vector back to the input space.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (k, &c) in y.iter().enumerate() {
            for (xi, b) in x.iter_mut().zip(self.basis_row(k)) {
                *xi += c * b;
            }
        }
        x
    }
}

/// See [`fit_pca`]. Free-function alias of [`PcaModel::project`].
pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.project(x)
}

/// Principal component analysis keeping `target_dim` directions.
///
/// When there are fewer samples than dimensions the eigenproblem is solved
/// on the Gram matrix instead of the covariance, which gives the same
/// leading directions at a fraction of the cost. Each direction is signed so
/// that its largest-magnitude coordinate is positive.
pub fn fit_pca<R: AsRef<[f64]>>(samples: &[R], target_dim: usize) -> Result<PcaModel> {
    let dim = check_rows(samples)?;
    let n = samples.len();
    if target_dim == 0 || target_dim > dim {
        return Err(Error::param(format!(
            "PCA target dimension {target_dim} outside 1..={dim}"
        )));
    }
    if n <= target_dim {
        return Err(Error::param(format!(
            "PCA to {target_dim} dimensions needs more than {target_dim} samples, got {n}"
        )));
    }
    let mean = mean_of(samples, dim);
    let centered = DMatrix::from_fn(n, dim, |i, j| samples[i].as_ref()[j] - mean[j]);
    let scale = 1.0 / (n - 1) as f64;

    let mut directions: Vec<(f64, Vec<f64>)> = if dim <= n {
        let cov = centered.transpose() * &centered * scale;
        let eig = SymmetricEigen::new(cov);
        sorted_eigenpairs(&eig)
            .into_iter()
            .take(target_dim)
            .map(|(val, i)| (val.max(0.0), eig.eigenvectors.column(i).iter().copied().collect()))
            .collect()
    } else {
        let gram = &centered * centered.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        let mut dirs = Vec::with_capacity(target_dim);
        for (val, i) in sorted_eigenpairs(&eig).into_iter().take(target_dim) {
            // u = X^T v / sqrt((n - 1) lambda)
            let v = eig.eigenvectors.column(i);
            let u = centered.transpose() * v;
            let norm = u.norm();
            if val <= 0.0 || norm < 1e-12 {
                break;
            }
            dirs.push((val, u.iter().map(|x| x / norm).collect()));
        }
        dirs
    };

    // rank-deficient data: complete with orthonormal directions
    let mut e = 0;
    while directions.len() < target_dim {
        let mut cand = vec![0.0; dim];
        cand[e % dim] = 1.0;
        e += 1;
        for (_, d) in &directions {
            let p = crate::feature::dot(&cand, d);
            cand.iter_mut().zip(d).for_each(|(c, x)| *c -= p * x);
        }
        let norm = crate::feature::l2_norm(&cand);
        if norm > 1e-6 {
            cand.iter_mut().for_each(|c| *c /= norm);
            directions.push((0.0, cand));
        }
    }

    let mut basis = Vec::with_capacity(target_dim * dim);
    let mut eigenvalues = Vec::with_capacity(target_dim);
    for (val, mut dir) in directions {
        let lead = dir
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if dir[lead] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        basis.extend(dir);
        eigenvalues.push(val);
    }
    PcaModel::from_parts(mean, basis, eigenvalues)
}

/// Eigenvalue/column pairs by descending eigenvalue (ties by column).
fn sorted_eigenpairs(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<(f64, usize)> {
    let mut pairs: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    pairs
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParts", into = "GmmParts")]
pub struct GmmModel {
    weights: Vec<f64>,
    /// `components x dim`, row-major.
    means: Vec<f64>,
    /// Diagonal variances, laid out like `means`.
    variances: Vec<f64>,
    // cached: log w_n - 0.5 * sum_d log(2 pi var_nd)
    log_norm: Vec<f64>,
    inv_variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmParts {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TryFrom<GmmParts> for GmmModel {
    type Error = Error;
    fn try_from(p: GmmParts) -> Result<Self> {
        GmmModel::new(p.weights, p.means, p.variances)
    }
}

impl From<GmmModel> for GmmParts {
    fn from(m: GmmModel) -> Self {
        GmmParts {
            weights: m.weights,
            means: m.means,
            variances: m.variances,
        }
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || means.len() % n != 0 || means.is_empty() || variances.len() != means.len() {
            return Err(Error::param(format!(
                "inconsistent GMM parts: {n} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::param("GMM weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("GMM weights sum to {total}")));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::param("GMM variances must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("GMM means must be finite"));
        }
        let dim = means.len() / n;
        let log_norm = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, var)| {
                w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>()
            })
            .collect();
        let inv_variances = variances.iter().map(|v| 1.0 / v).collect();
        Ok(GmmModel {
            weights,
            means,
            variances,
            log_norm,
            inv_variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.len() / self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.means[n * d..(n + 1) * d]
    }

    pub fn variance(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.variances[n * d..(n + 1) * d]
    }

    /// Writes the per-component joint log densities `log w_n N(x | n)` into
    /// `out` and returns the log-likelihood of `x`. `out` becomes the
    /// posterior after [`normalize_log_posterior`].
    fn joint_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (n, slot) in out.iter_mut().enumerate() {
            let mu = &self.means[n * d..(n + 1) * d];
            let iv = &self.inv_variances[n * d..(n + 1) * d];
            let mut q = 0.0;
            for ((xi, m), v) in x.iter().zip(mu).zip(iv) {
                let r = xi - m;
                q += r * r * v;
            }
            *slot = self.log_norm[n] - 0.5 * q;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::param(format!(
                "GMM expects dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Log-likelihood of a single sample.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.components()];
        self.joint_log_densities(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Mean log-likelihood over a sample set.
    pub fn average_log_likelihood<R: AsRef<[f64]>>(&self, samples: &[R]) -> Result<f64> {
        let mut buf = vec![0.0; self.components()];
        let mut total = 0.0;
        for s in samples {
            self.check_dim(s.as_ref())?;
            self.joint_log_densities(s.as_ref(), &mut buf);
            total += log_sum_exp(&buf);
        }
        Ok(total / samples.len().max(1) as f64)
    }

    /// Responsibilities of every component for `x`, written into `out`;
    /// returns the sample log-likelihood.
    pub fn posterior_into(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        self.check_dim(x)?;
        if out.len() != self.components() {
            return Err(Error::param("posterior buffer length mismatch"));
        }
        self.joint_log_densities(x, out);
        Ok(normalize_log_posterior(out))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Turns joint log densities into posteriors in place; returns their
/// log-sum-exp.
fn normalize_log_posterior(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

/// Responsibilities `gamma_n(x)`, computed in log space.
pub fn gmm_posterior(model: &GmmModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.components()];
    model.posterior_into(x, &mut out)?;
    Ok(out)
}

/// EM training options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop when the relative improvement of the average log-likelihood
    /// drops below this.
    pub tol: f64,
}

impl EmOptions {
    pub fn new(components: usize, seed: u64) -> Self {
        EmOptions {
            components,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// A trained mixture with its optimization trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Average log-likelihood of the training samples under each successive
    /// parameter set, starting with the initialization. The last entry is
    /// the returned model's.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// Trains a diagonal GMM by EM. See [`fit_gmm_traced`].
pub fn fit_gmm<R: AsRef<[f64]>>(
    samples: &[R],
    components: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<GmmModel> {
    let opts = EmOptions {
        components,
        seed,
        max_iters,
        tol,
    };
    fit_gmm_traced(samples, &opts).map(|f| f.model)
}

/// Trains a diagonal GMM by EM, starting from k-means++ seeds followed by one
/// hard-assignment pass for weights and variances. Variances are floored at
/// `1e-4` times the global per-dimension variance and weights at `1e-6`.
pub fn fit_gmm_traced<R: AsRef<[f64]>>(samples: &[R], opts: &EmOptions) -> Result<GmmFit> {
    let dim = check_rows(samples)?;
    let n = samples.len();
    let k = opts.components;
    if k == 0 {
        return Err(Error::param("a GMM needs at least one component"));
    }
    if n < 10 * k {
        return Err(Error::param(format!(
            "{k} components need at least {} samples, got {n}",
            10 * k
        )));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::param("EM tolerance must be non-negative"));
    }
    if samples.iter().any(|s| s.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::param("non-finite sample"));
    }

    let global_mean = mean_of(samples, dim);
    let mut global_var = vec![0.0; dim];
    for s in samples {
        for ((g, v), m) in global_var.iter_mut().zip(s.as_ref()).zip(&global_mean) {
            *g += (v - m) * (v - m);
        }
    }
    global_var.iter_mut().for_each(|g| *g /= n as f64);
    if global_var.iter().all(|&g| g == 0.0) {
        return Err(Error::DegenerateData(
            "all training samples are identical".into(),
        ));
    }
    let floor: Vec<f64> = global_var
        .iter()
        .map(|g| (VARIANCE_FLOOR_RATIO * g).max(ABSOLUTE_VARIANCE_FLOOR))
        .collect();

    // Work on centered data so that the E[x^2] - mu^2 variance update does
    // not lose precision on offset inputs.
    let data: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.as_ref().iter().zip(&global_mean).map(|(v, m)| v - m))
        .collect();
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds = kmeans_plus_plus(&data, dim, k, &mut rng);
    let mut model = initial_model(&data, dim, &seeds, &global_var, &floor)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut resp = vec![0.0; k];
    let mut acc_w = vec![0.0; k];
    let mut acc_x = vec![0.0; k * dim];
    let mut acc_xx = vec![0.0; k * dim];
    for iter in 0..=opts.max_iters {
        acc_w.iter_mut().for_each(|v| *v = 0.0);
        acc_x.iter_mut().for_each(|v| *v = 0.0);
        acc_xx.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for i in 0..n {
            let x = row(i);
            model.joint_log_densities(x, &mut resp);
            total += normalize_log_posterior(&mut resp);
            for (c, &g) in resp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                acc_w[c] += g;
                let sx = &mut acc_x[c * dim..(c + 1) * dim];
                let sxx = &mut acc_xx[c * dim..(c + 1) * dim];
                for ((a, b), &v) in sx.iter_mut().zip(sxx.iter_mut()).zip(x) {
                    *a += g * v;
                    *b += g * v * v;
                }
            }
        }
        let avg = total / n as f64;
        if !avg.is_finite() {
            return Err(Error::DegenerateData(format!(
                "log-likelihood became {avg} at iteration {iter}"
            )));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (avg - prev) <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
                trace.push(avg);
                converged = true;
                break;
            }
        }
        trace.push(avg);
        if iter == opts.max_iters {
            break;
        }

        // M-step
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k * dim);
        let mut variances = Vec::with_capacity(k * dim);
        for c in 0..k {
            let nk = acc_w[c];
            if nk < 1e-10 {
                // starved component: keep its parameters
                weights.push(WEIGHT_FLOOR);
                means.extend_from_slice(model.mean(c));
                variances.extend_from_slice(model.variance(c));
                continue;
            }
            weights.push(nk / n as f64);
            for d in 0..dim {
                let mu = acc_x[c * dim + d] / nk;
                let var = acc_xx[c * dim + d] / nk - mu * mu;
                means.push(mu);
                variances.push(var.max(floor[d]));
            }
        }
        model = GmmModel::new(floor_weights(weights), means, variances)?;
    }

    // back to the caller's coordinates
    let means: Vec<f64> = model
        .means
        .chunks_exact(dim)
        .flat_map(|m| m.iter().zip(&global_mean).map(|(a, b)| a + b))
        .collect();
    let model = GmmModel::new(model.weights, means, model.variances)?;
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        converged,
    })
}

fn floor_weights(mut w: Vec<f64>) -> Vec<f64> {
    w.iter_mut().for_each(|v| *v = v.max(WEIGHT_FLOOR));
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding; returns the indices of the chosen samples.
fn kmeans_plus_plus(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                if v > 0.0 && target < v {
                    pick = i;
                    break;
                }
                target -= v;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(row(i), row(next)));
        }
    }
    chosen
}

fn initial_model(
    data: &[f64],
    dim: usize,
    seeds: &[usize],
    global_var: &[f64],
    floor: &[f64],
) -> Result<GmmModel> {
    let n = data.len() / dim;
    let k = seeds.len();
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut counts = vec![0usize; k];
    let mut sq = vec![0.0; k * dim];
    for i in 0..n {
        let x = row(i);
        let (best, _) = seeds
            .iter()
            .enumerate()
            .map(|(c, &s)| (c, sq_dist(x, row(s))))
            .fold((0, f64::INFINITY), |b, (c, d)| if d < b.1 { (c, d) } else { b });
        counts[best] += 1;
        let mu = row(seeds[best]);
        for d in 0..dim {
            sq[best * dim + d] += (x[d] - mu[d]) * (x[d] - mu[d]);
        }
    }
    let mut means = Vec::with_capacity(k * dim);
    let mut variances = Vec::with_capacity(k * dim);
    for c in 0..k {
        means.extend_from_slice(row(seeds[c]));
        for d in 0..dim {
            let v = if counts[c] > 1 {
                sq[c * dim + d] / counts[c] as f64
            } else {
                global_var[d]
            };
            variances.push(v.max(floor[d]));
        }
    }
    let weights = floor_weights(counts.iter().map(|&c| c as f64 / n as f64).collect());
    GmmModel::new(weights, means, variances)
}
