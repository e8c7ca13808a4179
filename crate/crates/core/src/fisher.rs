//! Fisher vectors over a diagonal GMM vocabulary.
//!
//! For descriptors `x_1..x_T`, component `n` and dimension `d`, with
//! standardized residual `r = (x_t^d - mu_n^d) / sigma_n^d` and posterior
//! `gamma_n(x_t)`:
//!
//! ```text
//! G_mu    = 1 / (T sqrt(w_n))    * sum_t gamma_n(x_t) * r
//! G_sigma = 1 / (T sqrt(2 w_n))  * sum_t gamma_n(x_t) * (r^2 - 1)
//! ```
//!
//! The raw vector is `[G_mu(1..N), G_sigma(1..N)]`, each block `D` long, so
//! `2ND` values in total. Gradients with respect to the mixture weights are
//! not used. The raw vector is power-normalized (`sign(z)|z|^alpha`) and
//! L2-normalized. With a spatial pyramid each region gets its own normalized
//! vector, computed from the descriptors whose patch center falls inside it,
//! and the concatenation is L2-normalized once more.

use serde::{Deserialize, Serialize};

use crate::densefeat::{multi_scale_descriptors, DescriptorSet, PatchGridSpec};
use crate::error::{Error, Result};
use crate::feature::{l2_normalize, power_normalize, FeatureKind, FeatureVector};
use crate::imgproc::GrayImage;
use crate::models::{GmmModel, PcaModel};
use crate::runlength::PyramidSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvConfig {
    pub alpha: f64,
    pub pyramid: PyramidSpec,
}

impl Default for FvConfig {
    fn default() -> Self {
        FvConfig {
            alpha: 0.5,
            pyramid: PyramidSpec::single(),
        }
    }
}

impl FvConfig {
    pub fn new(alpha: f64, pyramid: PyramidSpec) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::param(format!("power exponent {alpha} outside (0, 1]")));
        }
        Ok(FvConfig { alpha, pyramid })
    }
}

/// Descriptor projection plus mixture: everything needed to turn dense SIFT
/// into a Fisher vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub pca: Option<PcaModel>,
    pub gmm: GmmModel,
}

impl Vocabulary {
    pub fn new(pca: Option<PcaModel>, gmm: GmmModel) -> Result<Self> {
        if let Some(p) = &pca {
            if p.output_dim() != gmm.dim() {
                return Err(Error::param(format!(
                    "PCA outputs {} dimensions but the GMM expects {}",
                    p.output_dim(),
                    gmm.dim()
                )));
            }
        }
        Ok(Vocabulary { pca, gmm })
    }

    /// Raw Fisher vector length, `2 N D`.
    pub fn fv_dim(&self) -> usize {
        2 * self.gmm.components() * self.gmm.dim()
    }
}

/// Signature length for a vocabulary of `components` Gaussians over
/// `dim`-dimensional descriptors pooled on `pyramid`.
pub fn fv_signature_dim(components: usize, dim: usize, pyramid: PyramidSpec) -> usize {
    pyramid.region_count() * 2 * components * dim
}

/// Config tag carried by FV signatures.
pub fn fv_config_tag(grid: PatchGridSpec, vocab: &Vocabulary, config: &FvConfig) -> String {
    format!(
        "fv:W{}:T{}:M{}:N{}:D{}:L{}:a{}",
        grid.window,
        grid.stride,
        grid.scales,
        vocab.gmm.components(),
        vocab.gmm.dim(),
        config.pyramid.levels(),
        config.alpha
    )
}

/// Per-region sufficient statistics: sums of `gamma * r` and
/// `gamma * (r^2 - 1)`, plus the descriptor count.
struct FvAccumulator {
    first: Vec<f64>,
    second: Vec<f64>,
    count: usize,
}

impl FvAccumulator {
    fn new(len: usize) -> Self {
        FvAccumulator {
            first: vec![0.0; len],
            second: vec![0.0; len],
            count: 0,
        }
    }

    fn add(&mut self, model: &GmmModel, inv_sigma: &[f64], x: &[f64], gamma: &[f64]) {
        let d = model.dim();
        self.count += 1;
        for (n, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mu = model.mean(n);
            let is = &inv_sigma[n * d..(n + 1) * d];
            let f = &mut self.first[n * d..(n + 1) * d];
            let s = &mut self.second[n * d..(n + 1) * d];
            for i in 0..d {
                let r = (x[i] - mu[i]) * is[i];
                f[i] += g * r;
                s[i] += g * (r * r - 1.0);
            }
        }
    }

    fn finish(&self, model: &GmmModel) -> Vec<f64> {
        let (n_comp, d) = (model.components(), model.dim());
        let mut out = vec![0.0; 2 * n_comp * d];
        if self.count == 0 {
            return out;
        }
        let t = self.count as f64;
        let (mu_block, sigma_block) = out.split_at_mut(n_comp * d);
        for (n, &w) in model.weights().iter().enumerate() {
            let a = 1.0 / (t * w.sqrt());
            let b = 1.0 / (t * (2.0 * w).sqrt());
            for i in 0..d {
                mu_block[n * d + i] = a * self.first[n * d + i];
                sigma_block[n * d + i] = b * self.second[n * d + i];
            }
        }
        out
    }
}

fn inverse_sigmas(model: &GmmModel) -> Vec<f64> {
    model.variances().iter().map(|v| 1.0 / v.sqrt()).collect()
}

/// Raw (unnormalized) Fisher vector of a descriptor set; all zeros when the
/// set is empty.
pub fn fisher_vector(model: &GmmModel, descriptors: &DescriptorSet) -> Result<Vec<f64>> {
    if !descriptors.is_empty() && descriptors.dim() != model.dim() {
        return Err(Error::param(format!(
            "descriptors of dimension {} against a GMM of dimension {}",
            descriptors.dim(),
            model.dim()
        )));
    }
    let inv_sigma = inverse_sigmas(model);
    let mut acc = FvAccumulator::new(model.components() * model.dim());
    let mut gamma = vec![0.0; model.components()];
    for x in descriptors.rows() {
        model.posterior_into(x, &mut gamma)?;
        acc.add(model, &inv_sigma, x, &gamma);
    }
    Ok(acc.finish(model))
}

/// Power normalization followed by L2 normalization.
pub fn normalize_fv(raw: &[f64], alpha: f64) -> FeatureVector {
    let mut values = raw.to_vec();
    power_normalize(&mut values, alpha);
    l2_normalize(&mut values);
    FeatureVector::new(values, FeatureKind::Fv, "")
}

/// Pyramid Fisher vector from descriptors that are already projected into
/// the vocabulary's space and carry centers in a `width x height` frame.
pub fn pyramid_fisher_from_descriptors(
    descriptors: &DescriptorSet,
    width: usize,
    height: usize,
    model: &GmmModel,
    config: &FvConfig,
) -> Result<Vec<f64>> {
    if !descriptors.is_empty() && descriptors.dim() != model.dim() {
        return Err(Error::param(format!(
            "descriptors of dimension {} against a GMM of dimension {}",
            descriptors.dim(),
            model.dim()
        )));
    }
    let regions = config.pyramid.regions(width, height);
    let block = model.components() * model.dim();
    let inv_sigma = inverse_sigmas(model);
    let mut accs: Vec<FvAccumulator> = regions.iter().map(|_| FvAccumulator::new(block)).collect();
    let mut gamma = vec![0.0; model.components()];
    for (x, c) in descriptors.rows().zip(descriptors.centers()) {
        model.posterior_into(x, &mut gamma)?;
        for (region, acc) in regions.iter().zip(accs.iter_mut()) {
            if region.contains(c[0], c[1]) {
                acc.add(model, &inv_sigma, x, &gamma);
            }
        }
    }
    let mut out = Vec::with_capacity(regions.len() * 2 * block);
    for acc in &accs {
        let mut raw = acc.finish(model);
        power_normalize(&mut raw, config.alpha);
        l2_normalize(&mut raw);
        out.extend(raw);
    }
    l2_normalize(&mut out);
    Ok(out)
}

/// Full FV pipeline on a grayscale page: dense multi-scale SIFT, optional
/// PCA, then pyramid pooling against the mixture.
pub fn pyramid_fisher(
    gray: &GrayImage,
    vocab: &Vocabulary,
    grid: PatchGridSpec,
    config: &FvConfig,
) -> Result<FeatureVector> {
    grid.validate()?;
    let sift = multi_scale_descriptors(gray, grid);
    let descriptors = match &vocab.pca {
        Some(p) => p.project_set(&sift)?,
        None => sift,
    };
    let values = pyramid_fisher_from_descriptors(
        &descriptors,
        gray.width(),
        gray.height(),
        &vocab.gmm,
        config,
    )?;
    Ok(FeatureVector::new(
        values,
        FeatureKind::Fv,
        fv_config_tag(grid, vocab, config),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, d: usize, seed: u64) -> GmmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let means = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let vars = (0..n * d).map(|_| rng.random_range(0.3..2.0)).collect();
        GmmModel::new(w, means, vars).unwrap()
    }

    fn random_set(t: usize, d: usize, seed: u64) -> DescriptorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        DescriptorSet::from_rows(d, &rows).unwrap()
    }

    #[test]
    fn descriptors_at_the_mean() {
        let model = GmmModel::new(vec![1.0], vec![0.5, -1.0, 2.0], vec![1.0, 4.0, 0.25]).unwrap();
        let rows = vec![vec![0.5, -1.0, 2.0]; 7];
        let fv = fisher_vector(&model, &DescriptorSet::from_rows(3, &rows).unwrap()).unwrap();
        assert_eq!(fv.len(), 6);
        for v in &fv[..3] {
            assert_eq!(*v, 0.0);
        }
        for v in &fv[3..] {
            assert!((v + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_set_gives_zero_vector() {
        let model = random_model(4, 3, 1);
        let fv = fisher_vector(&model, &DescriptorSet::new(3)).unwrap();
        assert_eq!(fv, vec![0.0; 24]);
        let n = normalize_fv(&fv, 0.5);
        assert!(n.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = random_model(2, 3, 1);
        assert!(fisher_vector(&model, &random_set(4, 2, 1)).is_err());
    }

    #[test]
    fn raw_length_matches_table() {
        let model = random_model(16, 48, 2);
        let fv = fisher_vector(&model, &random_set(5, 48, 2)).unwrap();
        assert_eq!(fv.len(), 1536);
        assert_eq!(fv_signature_dim(16, 48, PyramidSpec::new(5).unwrap()), 185856);
    }

    #[test]
    fn normalization_examples() {
        let v = normalize_fv(&[-4.0, 0.0, 4.0], 0.5);
        let s = 8f64.sqrt();
        assert!((v.values[0] + 2.0 / s).abs() < 1e-15);
        assert!((v.values[2] - 2.0 / s).abs() < 1e-15);

        let raw = [3.0, -1.0, 0.5, 2.0];
        let v = normalize_fv(&raw, 1.0);
        let n = crate::feature::l2_norm(&raw);
        for (a, b) in v.values.iter().zip(raw) {
            assert!((a - b / n).abs() < 1e-15);
        }
        assert!(FvConfig::new(0.0, PyramidSpec::single()).is_err());
        assert!(FvConfig::new(1.5, PyramidSpec::single()).is_err());
    }

    #[test]
    fn order_and_duplication_invariance() {
        let model = random_model(3, 4, 3);
        let set = random_set(30, 4, 4);
        let base = fisher_vector(&model, &set).unwrap();
        let rev: Vec<usize> = (0..30).rev().collect();
        let permuted = fisher_vector(&model, &set.select(&rev)).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }
        let doubled: Vec<usize> = (0..30).chain(0..30).collect();
        let dup = fisher_vector(&model, &set.select(&doubled)).unwrap();
        for (a, b) in base.iter().zip(&dup) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Average log-likelihood with one mean or standard deviation perturbed.
    fn avg_ll(model: &GmmModel, set: &DescriptorSet, n: usize, d: usize, dmu: f64, dsigma: f64) -> f64 {
        let dim = model.dim();
        let mut means = model.means().to_vec();
        let mut vars = model.variances().to_vec();
        means[n * dim + d] += dmu;
        let sigma = vars[n * dim + d].sqrt() + dsigma;
        vars[n * dim + d] = sigma * sigma;
        let m = GmmModel::new(model.weights().to_vec(), means, vars).unwrap();
        let rows: Vec<&[f64]> = set.rows().collect();
        m.average_log_likelihood(&rows).unwrap()
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        let (n_comp, dim, t) = (3, 2, 50);
        let model = random_model(n_comp, dim, 5);
        let set = random_set(t, dim, 6);
        let fv = fisher_vector(&model, &set).unwrap();
        let h = 1e-5;
        for n in 0..n_comp {
            let w = model.weights()[n];
            for d in 0..dim {
                let sigma = model.variance(n)[d].sqrt();
                // T sqrt(w) G_mu = sigma * T * dL/dmu
                let g_mu = (avg_ll(&model, &set, n, d, h, 0.0) - avg_ll(&model, &set, n, d, -h, 0.0)) / (2.0 * h);
                let closed = t as f64 * w.sqrt() * fv[n * dim + d];
                let fd = sigma * t as f64 * g_mu;
                assert!((closed - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "mu n={n} d={d}: {closed} vs {fd}");

                let g_s = (avg_ll(&model, &set, n, d, 0.0, h) - avg_ll(&model, &set, n, d, 0.0, -h)) / (2.0 * h);
                let closed = t as f64 * (2.0 * w).sqrt() * fv[n_comp * dim + n * dim + d];
                let fd = sigma * t as f64 * g_s;
                assert!((closed - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "sigma n={n} d={d}: {closed} vs {fd}");
            }
        }
    }

    #[test]
    fn single_region_pyramid_equals_plain_fv() {
        let model = random_model(4, 3, 7);
        let mut set = random_set(25, 3, 8);
        let mut positioned = DescriptorSet::new(3);
        for (i, row) in set.rows().enumerate() {
            positioned.push(row, [(i % 5) as f64 * 10.0 + 1.0, (i / 5) as f64 * 10.0 + 1.0]).unwrap();
        }
        set = positioned;
        let cfg = FvConfig::default();
        let pyr = pyramid_fisher_from_descriptors(&set, 50, 50, &model, &cfg).unwrap();
        let plain = normalize_fv(&fisher_vector(&model, &set).unwrap(), 0.5);
        for (a, b) in pyr.iter().zip(&plain.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_with_empty_regions() {
        let model = random_model(2, 3, 9);
        let set = random_set(10, 3, 10); // every center at the origin
        let cfg = FvConfig::new(0.5, PyramidSpec::new(2).unwrap()).unwrap();
        let v = pyramid_fisher_from_descriptors(&set, 40, 40, &model, &cfg).unwrap();
        assert_eq!(v.len(), 5 * 12);
        assert!(v.iter().all(|x| x.is_finite()));
        // only the whole-image block and the top-left quadrant are populated
        assert!(v[24..].iter().all(|x| *x == 0.0));
        assert!((crate::feature::l2_norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_dimensions() {
        let cases = [(16, 5, 185856), (32, 5, 371712), (64, 4, 350208), (128, 3, 258048),
                     (256, 3, 516096), (512, 2, 245760), (1024, 2, 491520)];
        for (n, l, want) in cases {
            assert_eq!(fv_signature_dim(n, 48, PyramidSpec::new(l).unwrap()), want);
        }
    }
}
