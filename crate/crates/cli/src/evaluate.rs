//! Classification and retrieval protocol over train/test splits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docsig::classifiers::{
    knn_vote, ncm_fit, ncm_ml_fit, ncm_predict, svm_fit_ovr, svm_predict, LabeledFeatureSet,
};
use docsig::retrieval::{evaluate_ranking, similarity_matrix};
use docsig::store::{split_dataset, DatasetManifest, FeatureStore, SplitAssignment, SplitPlan};
use docsig::FeatureVector;

use crate::config::{ClassifierParams, ExperimentConfig, Signature};
use crate::error::{CliError, Result};
use crate::extract::{manifest_fingerprint, open_store};
use crate::report::{read_json, write_csv, write_json};

pub const METRIC_NAMES: [&str; 7] = ["map", "p_at_1", "p_at_5", "knn", "ncm", "ncm_ml", "svm"];

/// Retrieval scores of test queries against the training items, and overall
/// accuracies of the four classifiers, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub knn: f64,
    pub ncm: f64,
    pub ncm_ml: f64,
    pub svm: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 7] {
        [
            self.map,
            self.p_at_1,
            self.p_at_5,
            self.knn,
            self.ncm,
            self.ncm_ml,
            self.svm,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Metrics {
            map: v[0],
            p_at_1: v[1],
            p_at_5: v[2],
            knn: v[3],
            ncm: v[4],
            ncm_ml: v[5],
            svm: v[6],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }
}

/// Mean and sample standard deviation, metric by metric.
pub fn mean_std(per_split: &[Metrics]) -> (Metrics, Metrics) {
    let n = per_split.len() as f64;
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    for m in per_split {
        mean.iter_mut().zip(m.values()).for_each(|(a, v)| *a += v / n);
    }
    if per_split.len() > 1 {
        for m in per_split {
            std.iter_mut()
                .zip(m.values().iter().zip(&mean))
                .for_each(|(s, (v, mu))| *s += (v - mu) * (v - mu));
        }
        std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    }
    (Metrics::from_values(mean), Metrics::from_values(std))
}

#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub svm: u64,
    pub ml: u64,
}

/// Runs the whole protocol on one split. `features[i]` belongs to item `i`.
pub fn evaluate_split(
    features: &[FeatureVector],
    labels: &[usize],
    class_count: usize,
    split: &SplitAssignment,
    params: &ClassifierParams,
    signature: Signature,
    seeds: Seeds,
) -> Result<Metrics> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(CliError::config("split with an empty train or test side"));
    }
    let pick = |idx: &[usize]| -> (Vec<FeatureVector>, Vec<usize>) {
        idx.iter().map(|&i| (features[i].clone(), labels[i])).unzip()
    };
    let (train_f, train_l) = pick(&split.train);
    let (test_f, test_l) = pick(&split.test);
    let train = LabeledFeatureSet::new(train_f, train_l, class_count)?;

    let q: Vec<&[f64]> = test_f.iter().map(|f| f.values.as_slice()).collect();
    let c: Vec<&[f64]> = train.features().iter().map(|f| f.values.as_slice()).collect();
    let sim = similarity_matrix(&q, &c)?;
    let ranking = evaluate_ranking(&sim, &test_l, train.labels(), &[1, 5])?;

    let k = params.k.min(train.len());
    let means = ncm_fit(&train)?;
    // the projection starts from PCA, which needs more samples than dimensions
    let ml_dim = params.ml_dim.min(train.dim()).min(train.len().saturating_sub(1)).max(1);
    let metric = ncm_ml_fit(&train, ml_dim, params.ml_learning_rate, params.ml_batches, seeds.ml)?;
    let svm = svm_fit_ovr(&train, &params.svm(signature, seeds.svm))?;

    let mut hits = [0usize; 4];
    for (i, (f, &y)) in test_f.iter().zip(&test_l).enumerate() {
        let preds = [
            knn_vote(sim.row(i), train.labels(), class_count, k),
            ncm_predict(&means, &f.values, None)?,
            ncm_predict(&means, &f.values, Some(&metric))?,
            svm_predict(&svm, &f.values)?.1,
        ];
        for (h, p) in hits.iter_mut().zip(preds) {
            *h += usize::from(p == y);
        }
    }
    let acc = |h: usize| h as f64 / test_l.len() as f64;
    Ok(Metrics {
        map: ranking.map,
        p_at_1: ranking.precision_at(1).unwrap_or(0.0),
        p_at_5: ranking.precision_at(5).unwrap_or(0.0),
        knn: acc(hits[0]),
        ncm: acc(hits[1]),
        ncm_ml: acc(hits[2]),
        svm: acc(hits[3]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub name: String,
    pub signature: Signature,
    pub dim: usize,
    /// Sweep axis values; empty outside sweeps.
    pub axes: BTreeMap<String, usize>,
    pub per_split: Vec<Metrics>,
    pub mean: Metrics,
    /// Sample standard deviation over splits (0 for a single split).
    pub std: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub items: usize,
    pub classes: Vec<String>,
    pub splits: usize,
    pub configs: Vec<ConfigResult>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsFile {
    pub manifest: String,
    pub plan: SplitPlan,
}

/// The manifest's own split when every item has one; otherwise the
/// `splits.json` in the output directory, generated on first use.
pub fn load_or_make_splits(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<SplitPlan> {
    if let Some(fixed) = manifest.fixed_split() {
        return Ok(SplitPlan {
            ratio: fixed.train.len() as f64 / manifest.len() as f64,
            seed: 0,
            splits: vec![fixed],
            warnings: Vec::new(),
        });
    }
    let path = cfg.out.join("splits.json");
    let fp = manifest_fingerprint(manifest, None);
    if path.exists() {
        let file: SplitsFile = read_json(&path)?;
        if file.manifest != fp {
            return Err(CliError::config(format!(
                "{} was made for another manifest; delete it or run `splits`",
                path.display()
            )));
        }
        return Ok(file.plan);
    }
    make_splits(cfg, manifest)
}

/// Generates and writes `splits.json`.
pub fn make_splits(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<SplitPlan> {
    let plan = split_dataset(manifest, cfg.splits.ratio, cfg.splits.count, cfg.split_seed())?;
    let file = SplitsFile {
        manifest: manifest_fingerprint(manifest, None),
        plan,
    };
    write_json(cfg.out.join("splits.json"), &file)?;
    Ok(file.plan)
}

/// Features and labels of the labeled manifest items found in every store,
/// with the split plan restricted to them.
pub struct Aligned {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub splits: Vec<SplitAssignment>,
    pub warnings: Vec<String>,
}

/// Aligns stores (concatenated when several) to manifest order.
pub fn align(
    manifest: &DatasetManifest,
    stores: &[&FeatureStore],
    plan: &SplitPlan,
) -> Result<Aligned> {
    let labels = manifest.label_indices();
    let positions: Vec<BTreeMap<&str, usize>> = stores
        .iter()
        .map(|s| s.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect())
        .collect();
    // manifest index -> aligned index
    let mut remap = vec![None; manifest.len()];
    let mut features = Vec::new();
    let mut out_labels = Vec::new();
    let mut warnings = plan.warnings.clone();
    let (mut unlabeled, mut missing) = (0, 0);
    for (i, it) in manifest.items().iter().enumerate() {
        let Some(label) = labels[i] else {
            unlabeled += 1;
            continue;
        };
        let rows: Option<Vec<usize>> = positions.iter().map(|p| p.get(it.id.as_str()).copied()).collect();
        let Some(rows) = rows else {
            missing += 1;
            continue;
        };
        let parts: Vec<FeatureVector> = stores
            .iter()
            .zip(&rows)
            .map(|(s, &r)| FeatureVector::new(s.row_f64(r), s.kind, ""))
            .collect();
        let f = if parts.len() == 1 {
            parts.into_iter().next().unwrap()
        } else {
            FeatureVector::concat(&parts.iter().collect::<Vec<_>>())
        };
        remap[i] = Some(features.len());
        features.push(f);
        out_labels.push(label);
    }
    if unlabeled > 0 {
        warnings.push(format!("{unlabeled} unlabeled item(s) left out of evaluation"));
    }
    if missing > 0 {
        warnings.push(format!("{missing} item(s) without signatures left out of evaluation"));
    }
    let splits = plan
        .splits
        .iter()
        .map(|s| SplitAssignment {
            train: s.train.iter().filter_map(|&i| remap[i]).collect(),
            test: s.test.iter().filter_map(|&i| remap[i]).collect(),
        })
        .collect();
    Ok(Aligned {
        features,
        labels: out_labels,
        splits,
        warnings,
    })
}

/// All splits of one configuration, in parallel.
pub fn evaluate_config(
    cfg: &ExperimentConfig,
    class_count: usize,
    aligned: &Aligned,
    signature: Signature,
) -> Result<Vec<Metrics>> {
    aligned
        .splits
        .par_iter()
        .enumerate()
        .map(|(s, split)| {
            let seeds = Seeds {
                svm: cfg.svm_seed().wrapping_add(s as u64),
                ml: cfg.ml_seed().wrapping_add(s as u64),
            };
            evaluate_split(
                &aligned.features,
                &aligned.labels,
                class_count,
                split,
                &cfg.classifiers,
                signature,
                seeds,
            )
        })
        .collect()
}

pub fn config_result(
    name: String,
    signature: Signature,
    dim: usize,
    axes: BTreeMap<String, usize>,
    per_split: Vec<Metrics>,
) -> ConfigResult {
    let (mean, std) = mean_std(&per_split);
    ConfigResult {
        name,
        signature,
        dim,
        axes,
        per_split,
        mean,
        std,
    }
}

/// Evaluates every configured signature on stores written by `extract`.
pub fn run_eval(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<EvalSummary> {
    let plan = load_or_make_splits(cfg, manifest)?;
    let mut configs = Vec::new();
    let mut warnings = Vec::new();
    for &sig in &cfg.signatures {
        let stores = match sig {
            Signature::Fused => vec![
                open_store(cfg, manifest, Signature::Rl)?,
                open_store(cfg, manifest, Signature::Fv)?,
            ],
            s => vec![open_store(cfg, manifest, s)?],
        };
        let refs: Vec<&FeatureStore> = stores.iter().collect();
        let aligned = align(manifest, &refs, &plan)?;
        for w in &aligned.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        let per_split = evaluate_config(cfg, manifest.classes().len(), &aligned, sig)?;
        let name = match sig {
            Signature::Rl => cfg.rl.tag(),
            Signature::Fv => cfg.fv.tag(),
            Signature::Fused => format!("{}+{}", cfg.rl.tag(), cfg.fv.tag()),
        };
        let dim = aligned.features.first().map_or(0, FeatureVector::dim);
        configs.push(config_result(name, sig, dim, BTreeMap::new(), per_split));
    }
    let summary = EvalSummary {
        items: manifest.len(),
        classes: manifest.classes().to_vec(),
        splits: plan.splits.len(),
        configs,
        warnings,
    };
    write_eval_reports(cfg, "eval", &summary)?;
    Ok(summary)
}

/// One CSV row per configuration, split and metric; splits `mean` and `std`
/// carry the aggregates.
pub fn eval_rows(configs: &[ConfigResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in configs {
        let mut emit = |split: String, m: &Metrics| {
            for (name, v) in METRIC_NAMES.iter().zip(m.values()) {
                rows.push(vec![c.name.clone(), split.clone(), name.to_string(), v.to_string()]);
            }
        };
        for (s, m) in c.per_split.iter().enumerate() {
            emit(s.to_string(), m);
        }
        emit("mean".into(), &c.mean);
        emit("std".into(), &c.std);
    }
    rows
}

pub fn write_eval_reports(cfg: &ExperimentConfig, stem: &str, summary: &EvalSummary) -> Result<()> {
    let dir = cfg.reports_dir();
    write_json(dir.join(format!("{stem}.json")), summary)?;
    write_csv(
        dir.join(format!("{stem}.csv")),
        &["config", "split", "metric", "value"],
        &eval_rows(&summary.configs),
    )
}
