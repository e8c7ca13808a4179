//! Classifier training on a whole labeled store (for instance an image-type
//! classifier used by the patent strategies).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use docsig::classifiers::{svm_fit_ovr, LabeledFeatureSet, LinearModel};
use docsig::store::{config_digest, load_model, save_model, DatasetManifest};

use crate::config::{ExperimentConfig, Signature};
use crate::error::{CliError, Result};
use crate::evaluate::align;
use crate::extract::open_store;
use crate::report::{read_json, write_json};

/// Written next to a classifier as `<model>.classes.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierInfo {
    pub classes: Vec<String>,
    pub signature: Signature,
    pub feature_config: String,
    pub training_items: usize,
}

pub fn info_path(model: &Path) -> PathBuf {
    model.with_extension("classes.json")
}

/// Trains one-vs-all SVMs on every labeled item of the signature's store.
pub fn run_train_clf(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    signature: Signature,
) -> Result<PathBuf> {
    let (store, feature_config) = match signature {
        Signature::Rl => (open_store(cfg, manifest, signature)?, cfg.rl.tag()),
        Signature::Fv => (open_store(cfg, manifest, signature)?, cfg.fv.tag()),
        Signature::Fused => {
            return Err(CliError::config("train-clf takes rl or fv signatures"));
        }
    };
    let all = docsig::store::SplitPlan {
        ratio: 1.0,
        seed: 0,
        splits: Vec::new(),
        warnings: Vec::new(),
    };
    let aligned = align(manifest, &[&store], &all)?;
    if aligned.features.is_empty() {
        return Err(CliError::config("no labeled item to train on"));
    }
    let n = aligned.features.len();
    let train = LabeledFeatureSet::new(aligned.features, aligned.labels, manifest.classes().len())?;
    let model = svm_fit_ovr(&train, &cfg.classifiers.svm(signature, cfg.svm_seed()))?;
    let path = cfg.models_dir().join(format!("clf-{feature_config}.difm"));
    std::fs::create_dir_all(cfg.models_dir()).map_err(|e| CliError::io(cfg.models_dir(), e))?;
    save_model(&path, &model, config_digest(&feature_config))?;
    write_json(
        info_path(&path),
        &ClassifierInfo {
            classes: manifest.classes().to_vec(),
            signature,
            feature_config,
            training_items: n,
        },
    )?;
    Ok(path)
}

pub fn load_classifier(path: &Path) -> Result<(LinearModel, ClassifierInfo)> {
    let (model, _) = load_model::<LinearModel>(path)?;
    let info: ClassifierInfo = read_json(info_path(path))?;
    if info.classes.len() != model.class_count() {
        return Err(CliError::config(format!(
            "{} lists {} classes for a {}-class model",
            info_path(path).display(),
            info.classes.len(),
            model.class_count()
        )));
    }
    Ok((model, info))
}
