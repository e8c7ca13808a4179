//! Signature extraction and vocabulary training over a manifest.

use std::fs;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docsig::densefeat::{multi_scale_descriptors, DescriptorSet};
use docsig::fisher::{pyramid_fisher, Vocabulary};
use docsig::models::{fit_gmm_traced, fit_pca, EmOptions, GmmModel, PcaModel};
use docsig::runlength::rl_signature_from_gray;
use docsig::store::{
    config_digest, digest_hex, load_model, read_features, save_model, split_dataset,
    write_features, DatasetManifest, FeatureStore, StoreExpectation,
};
use docsig::{FeatureKind, FeatureVector, GrayImage};

use crate::config::{ExperimentConfig, FvParams, RlParams, Signature, WINDOW_GUARD_PIXELS};
use crate::decode::load_page;
use crate::error::{CliError, Result};
use crate::report::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractOutcome {
    pub signature: Signature,
    pub tag: String,
    pub path: PathBuf,
    pub digest: String,
    pub dim: usize,
    pub rows: usize,
    /// The store already matched the configuration and was left alone.
    pub reused: bool,
    pub failures: Vec<ItemFailure>,
}

/// Hash of the ids and paths of `indices` (all items when `None`).
pub fn manifest_fingerprint(manifest: &DatasetManifest, indices: Option<&[usize]>) -> String {
    let mut text = String::new();
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..manifest.len()).collect();
            &all
        }
    };
    for &i in indices {
        let it = &manifest.items()[i];
        text.push_str(&it.id);
        text.push('\t');
        text.push_str(&it.path.to_string_lossy());
        text.push('\n');
    }
    digest_hex(&config_digest(&text))
}

pub fn rl_digest(rl: &RlParams, manifest: &DatasetManifest) -> [u8; 32] {
    config_digest(&format!("{}|{}", rl.tag(), manifest_fingerprint(manifest, None)))
}

pub fn fv_digest(fv: &FvParams, vocab_digest: &[u8; 32], manifest: &DatasetManifest) -> [u8; 32] {
    config_digest(&format!(
        "{}|vocab:{}|{}",
        fv.tag(),
        digest_hex(vocab_digest),
        manifest_fingerprint(manifest, None)
    ))
}

pub fn store_path(cfg: &ExperimentConfig, tag: &str) -> PathBuf {
    cfg.features_dir().join(format!("{tag}.difs"))
}

fn failures_path(store: &std::path::Path) -> PathBuf {
    store.with_extension("failures.json")
}

fn check_guard(fv: &FvParams, gray: &GrayImage) -> Result<()> {
    if fv.guarded() && gray.pixel_count() > WINDOW_GUARD_PIXELS {
        return Err(CliError::config(format!(
            "FV at size S{} keeps a {}x{} page, too large for {}-pixel windows; \
             pick another size or set fv.allow_small_windows",
            fv.size,
            gray.width(),
            gray.height(),
            fv.window
        )));
    }
    Ok(())
}

/// Runs `f` on every manifest item in parallel, in manifest order.
fn map_items<T: Send>(
    manifest: &DatasetManifest,
    f: impl Fn(&std::path::Path) -> Result<T> + Sync,
) -> Vec<Result<T>> {
    manifest
        .items()
        .par_iter()
        .map(|it| f(&manifest.resolve(it)))
        .collect()
}

/// Writes a store of the successful items, or reuses the existing one when
/// its digest matches.
fn build_store(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    signature: Signature,
    tag: String,
    digest: [u8; 32],
    kind: FeatureKind,
    compute: impl Fn(&std::path::Path) -> Result<FeatureVector> + Sync,
) -> Result<ExtractOutcome> {
    let path = store_path(cfg, &tag);
    let expect = StoreExpectation {
        kind: Some(kind),
        dim: None,
        digest: Some(digest),
    };
    if let Ok(existing) = read_features(&path, &expect) {
        let failures = read_json(failures_path(&path)).unwrap_or_default();
        return Ok(ExtractOutcome {
            signature,
            tag,
            digest: digest_hex(&digest),
            dim: existing.dim(),
            rows: existing.len(),
            path,
            reused: true,
            failures,
        });
    }
    let results = map_items(manifest, compute);
    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut failures = Vec::new();
    for (it, r) in manifest.items().iter().zip(results) {
        match r {
            Ok(f) => {
                ids.push(it.id.clone());
                feats.push(f);
            }
            // a guard violation is a configuration problem, not a bad image
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => failures.push(ItemFailure {
                id: it.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if feats.is_empty() {
        return Err(CliError::config(format!(
            "no image of the manifest could be processed for {tag}"
        )));
    }
    let store = FeatureStore::from_features(ids, &feats, digest)?;
    fs::create_dir_all(cfg.features_dir()).map_err(|e| CliError::io(cfg.features_dir(), e))?;
    write_features(&path, &store)?;
    write_json(failures_path(&path), &failures)?;
    Ok(ExtractOutcome {
        signature,
        tag,
        digest: digest_hex(&digest),
        dim: store.dim(),
        rows: store.len(),
        path,
        reused: false,
        failures,
    })
}

pub fn extract_rl(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    rl: &RlParams,
) -> Result<ExtractOutcome> {
    rl.validate()?;
    let (pyramid, quant) = (rl.pyramid(), rl.quantizer());
    build_store(
        cfg,
        manifest,
        Signature::Rl,
        rl.tag(),
        rl_digest(rl, manifest),
        FeatureKind::Rl,
        |path| {
            let gray = load_page(path, rl.max_pixels())?;
            Ok(rl_signature_from_gray(&gray, None, pyramid, quant)?)
        },
    )
}

pub fn extract_fv(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    fv: &FvParams,
) -> Result<ExtractOutcome> {
    fv.validate()?;
    let vocab = train_vocab(cfg, manifest, fv)?;
    let model = vocab.load()?;
    let grid = fv.grid()?;
    let fv_cfg = fv.fv_config();
    build_store(
        cfg,
        manifest,
        Signature::Fv,
        fv.tag(),
        fv_digest(fv, &vocab.digest_bytes()?, manifest),
        FeatureKind::Fv,
        |path| {
            let gray = load_page(path, fv.max_pixels())?;
            check_guard(fv, &gray)?;
            Ok(pyramid_fisher(&gray, &model, grid, &fv_cfg)?)
        },
    )
}

/// Extracts every store the configured signatures need.
pub fn run_extract(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<ExtractOutcome>> {
    let mut out = Vec::new();
    if cfg.needs_rl() {
        out.push(extract_rl(cfg, manifest, &cfg.rl)?);
    }
    if cfg.needs_fv() {
        out.push(extract_fv(cfg, manifest, &cfg.fv)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabOutcome {
    pub pca_path: PathBuf,
    pub gmm_path: PathBuf,
    pub digest: String,
    pub images: usize,
    pub descriptors: usize,
    pub em_iterations: usize,
    pub converged: bool,
    pub reused: bool,
}

impl VocabOutcome {
    pub fn load(&self) -> Result<Vocabulary> {
        let (pca, _): (PcaModel, _) = load_model(&self.pca_path)?;
        let (gmm, _): (GmmModel, _) = load_model(&self.gmm_path)?;
        Ok(Vocabulary::new(Some(pca), gmm)?)
    }

    fn digest_bytes(&self) -> Result<[u8; 32]> {
        let (_, d): (GmmModel, _) = load_model(&self.gmm_path)?;
        Ok(d)
    }
}

/// Items the vocabulary is learned from: the training half of the first
/// split for labeled corpora, everything otherwise.
pub fn vocab_items(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<usize>> {
    if manifest.label_indices().iter().all(Option::is_none) {
        return Ok((0..manifest.len()).collect());
    }
    let plan = split_dataset(manifest, cfg.splits.ratio, 1, cfg.split_seed())?;
    Ok(plan.splits[0].train.clone())
}

/// Fits PCA and the GMM on dense descriptors sampled from the vocabulary
/// items, unless models with a matching digest already exist.
pub fn train_vocab(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    fv: &FvParams,
) -> Result<VocabOutcome> {
    fv.validate()?;
    let items = vocab_items(cfg, manifest)?;
    let v = &cfg.vocab;
    let digest = config_digest(&format!(
        "vocab|{}|n{}|it{}|tol{}|seed{}|{}",
        fv.vocab_tag(),
        v.max_descriptors,
        v.em_iters,
        v.em_tol,
        cfg.vocab_seed(),
        manifest_fingerprint(manifest, Some(&items))
    ));
    let dir = cfg.models_dir();
    let pca_path = dir.join(format!("pca-{}.difm", fv.vocab_tag()));
    let gmm_path = dir.join(format!("gmm-{}.difm", fv.vocab_tag()));
    let info_path = dir.join(format!("vocab-{}.json", fv.vocab_tag()));
    if let (Ok((_, d1)), Ok((_, d2))) = (
        load_model::<PcaModel>(&pca_path),
        load_model::<GmmModel>(&gmm_path),
    ) {
        if d1 == digest && d2 == digest {
            let mut info: VocabOutcome = read_json(&info_path)?;
            info.reused = true;
            return Ok(info);
        }
    }

    let grid = fv.grid()?;
    let per_image = v.max_descriptors.div_ceil(items.len().max(1));
    let seed = cfg.vocab_seed();
    let sampled: Vec<Result<DescriptorSet>> = items
        .par_iter()
        .map(|&i| {
            let gray = load_page(&manifest.resolve(&manifest.items()[i]), fv.max_pixels())?;
            check_guard(fv, &gray)?;
            let all = multi_scale_descriptors(&gray, grid);
            if all.len() <= per_image {
                return Ok(all);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut pick = sample(&mut rng, all.len(), per_image).into_vec();
            pick.sort_unstable();
            Ok(all.select(&pick))
        })
        .collect();
    let mut pool = DescriptorSet::new(docsig::densefeat::SIFT_DIM);
    let mut images = 0;
    for (r, &i) in sampled.into_iter().zip(&items) {
        match r {
            Ok(d) => {
                pool.extend(&d)?;
                images += 1;
            }
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => eprintln!("skipping {} for the vocabulary: {e}", manifest.items()[i].id),
        }
    }
    let needed = fv.components().max(fv.descriptor_dim + 1);
    if pool.len() < needed {
        return Err(CliError::config(format!(
            "only {} descriptors for a vocabulary of {} Gaussians over {} dimensions",
            pool.len(),
            fv.components(),
            fv.descriptor_dim
        )));
    }
    let rows: Vec<&[f64]> = pool.rows().collect();
    let pca = fit_pca(&rows, fv.descriptor_dim)?;
    let projected = pca.project_set(&pool)?;
    let prow: Vec<&[f64]> = projected.rows().collect();
    let opts = EmOptions {
        max_iters: v.em_iters,
        tol: v.em_tol,
        ..EmOptions::new(fv.components(), seed)
    };
    let fit = fit_gmm_traced(&prow, &opts)?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    save_model(&pca_path, &pca, digest)?;
    save_model(&gmm_path, &fit.model, digest)?;
    let info = VocabOutcome {
        pca_path,
        gmm_path,
        digest: digest_hex(&digest),
        images,
        descriptors: pool.len(),
        em_iterations: fit.log_likelihood_trace.len(),
        converged: fit.converged,
        reused: false,
    };
    write_json(&info_path, &info)?;
    Ok(info)
}

/// Loads a store written by [`run_extract`], checking it still matches the
/// configuration.
pub fn open_store(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    signature: Signature,
) -> Result<FeatureStore> {
    let (tag, kind, digest) = match signature {
        Signature::Rl => (cfg.rl.tag(), FeatureKind::Rl, rl_digest(&cfg.rl, manifest)),
        Signature::Fv => {
            let (_, vd): (GmmModel, _) = load_model(
                cfg.models_dir()
                    .join(format!("gmm-{}.difm", cfg.fv.vocab_tag())),
            )
            .map_err(|e| missing(&cfg.fv.tag(), e))?;
            (cfg.fv.tag(), FeatureKind::Fv, fv_digest(&cfg.fv, &vd, manifest))
        }
        Signature::Fused => {
            return Err(CliError::config("fused signatures are built from rl and fv stores"))
        }
    };
    let path = store_path(cfg, &tag);
    if !path.exists() {
        return Err(CliError::config(format!(
            "missing feature store {}; run `extract` first",
            path.display()
        )));
    }
    let expect = StoreExpectation {
        kind: Some(kind),
        dim: None,
        digest: Some(digest),
    };
    read_features(&path, &expect).map_err(|e| missing(&tag, e))
}

fn missing(tag: &str, e: impl std::fmt::Display) -> CliError {
    CliError::config(format!(
        "feature store for {tag} is missing or stale ({e}); run `extract` first"
    ))
}
