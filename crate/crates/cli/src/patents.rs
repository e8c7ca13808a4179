//! Patent ranking runs over the strategy grid `I1..I6`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docsig::patent::{classify_image_types, rank_patents, AggregationStrategy, PatentDoc, RankedPatent};
use docsig::retrieval::{average_precision, precision_at_k};
use docsig::store::{DatasetManifest, FeatureStore};
use docsig::FeatureVector;

use crate::config::{ExperimentConfig, PatentParams};
use crate::error::{CliError, Result};
use crate::extract::open_store;
use crate::report::{write_csv, write_json};
use crate::train::load_classifier;

pub const PATENT_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: String,
    pub ranking: Vec<RankedPatent>,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub strategy: AggregationStrategy,
    /// Over queries with at least one relevant patent.
    pub map: f64,
    /// Over all queries.
    pub p_at_10: f64,
    pub queries: Vec<QueryRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatentSummary {
    pub patents: usize,
    /// Share of images whose predicted type matches their manifest label,
    /// when a type classifier ran on labeled images.
    pub type_accuracy: Option<f64>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub map: f64,
    pub p_at_10: f64,
}

/// Groups store rows into patents by the manifest `group` field; groups are
/// sorted by id and images keep manifest order.
pub fn build_patents(manifest: &DatasetManifest, store: &FeatureStore) -> Result<Vec<PatentDoc>> {
    let rows: BTreeMap<&str, usize> = store
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let labels = manifest.label_indices();
    let mut groups: BTreeMap<&str, (Vec<FeatureVector>, Vec<Option<usize>>)> = BTreeMap::new();
    for (i, it) in manifest.items().iter().enumerate() {
        let Some(g) = it.group.as_deref() else {
            continue;
        };
        let entry = groups.entry(g).or_default();
        if let Some(&r) = rows.get(it.id.as_str()) {
            entry.0.push(FeatureVector::new(store.row_f64(r), store.kind, ""));
            entry.1.push(labels[i]);
        }
    }
    if groups.is_empty() {
        return Err(CliError::config("no manifest item has a group id"));
    }
    groups
        .into_iter()
        .map(|(id, (features, truth))| {
            let p = PatentDoc::new(id, features)?;
            Ok(match truth.iter().copied().collect::<Option<Vec<usize>>>() {
                Some(t) if !t.is_empty() => p.with_true_types(t)?,
                _ => p,
            })
        })
        .collect()
}

fn strategies(params: &PatentParams, drawing: Option<usize>) -> Result<Vec<(String, AggregationStrategy)>> {
    let grid = AggregationStrategy::grid(drawing.unwrap_or(0));
    params
        .cells
        .iter()
        .map(|cell| {
            let (name, s) = grid
                .iter()
                .find(|(n, _)| *n == cell.as_str())
                .ok_or_else(|| CliError::config(format!("unknown strategy cell {cell:?}")))?;
            if matches!(s.grouping, docsig::patent::Grouping::SingleType(_)) && drawing.is_none() {
                return Err(CliError::config(format!(
                    "cell {name} needs patent.drawing_type"
                )));
            }
            Ok((name.to_string(), *s))
        })
        .collect()
}

/// Ranks, for every cell and query, all other patents of the collection.
pub fn rank_cells(
    patents: &[PatentDoc],
    params: &PatentParams,
    cells: &[(String, AggregationStrategy)],
) -> Result<Vec<CellResult>> {
    let queries: Vec<String> = if params.queries.is_empty() {
        params.qrels.keys().cloned().collect()
    } else {
        params.queries.clone()
    };
    if queries.is_empty() {
        return Err(CliError::config("no query patents: set patent.queries or patent.qrels"));
    }
    for q in &queries {
        if !patents.iter().any(|p| &p.id == q) {
            return Err(CliError::config(format!("query patent {q:?} not in the manifest")));
        }
    }
    cells
        .iter()
        .map(|(cell, strategy)| {
            let per_query = queries
                .par_iter()
                .map(|q| {
                    let query = patents.iter().find(|p| &p.id == q).unwrap();
                    let collection: Vec<PatentDoc> =
                        patents.iter().filter(|p| &p.id != q).cloned().collect();
                    let ranking = rank_patents(query, &collection, *strategy)?;
                    let relevant = params.qrels.get(q).cloned().unwrap_or_default();
                    let rel: Vec<bool> = ranking.iter().map(|r| relevant.contains(&r.id)).collect();
                    Ok((
                        QueryRanking {
                            query: q.clone(),
                            average_precision: average_precision(&rel),
                            ranking,
                        },
                        precision_at_k(&rel, PATENT_CUTOFF),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let aps: Vec<f64> = per_query.iter().filter_map(|(q, _)| q.average_precision).collect();
            let map = if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            };
            let p10 = per_query.iter().map(|(_, p)| p).sum::<f64>() / per_query.len() as f64;
            Ok(CellResult {
                cell: cell.clone(),
                strategy: *strategy,
                map,
                p_at_10: p10,
                queries: per_query.into_iter().map(|(q, _)| q).collect(),
            })
        })
        .collect()
}

/// Fraction of typed images whose prediction equals their true type.
pub fn type_accuracy(patents: &[PatentDoc]) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for p in patents {
        if let Some(truth) = p.true_types() {
            for (t, q) in truth.iter().zip(p.predicted_types()) {
                total += 1;
                hit += usize::from(t == q);
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

pub fn run_patent(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<PatentSummary> {
    let params = cfg
        .patent
        .as_ref()
        .ok_or_else(|| CliError::config("no patent section in the configuration"))?;
    let store = open_store(cfg, manifest, params.signature)?;
    let mut patents = build_patents(manifest, &store)?;
    let needs_types = params.cells.iter().any(|c| !matches!(c.as_str(), "I1" | "I2"));
    let mut drawing = None;
    if needs_types {
        let path = params.type_model.as_ref().ok_or_else(|| {
            CliError::config("class-mean and single-type cells need patent.type_model")
        })?;
        let (model, info) = load_classifier(path)?;
        if let Some(name) = &params.drawing_type {
            drawing = Some(info.classes.iter().position(|c| c == name).ok_or_else(|| {
                CliError::config(format!("type {name:?} unknown to the classifier"))
            })?);
        }
        patents = patents
            .par_iter()
            .map(|p| classify_image_types(&model, p).map_err(CliError::from))
            .collect::<Result<_>>()?;
    }
    let type_accuracy = type_accuracy(&patents);
    let cells = strategies(params, drawing)?;
    let results = rank_cells(&patents, params, &cells)?;
    let dir = cfg.reports_dir();
    for r in &results {
        write_json(dir.join("patent").join(format!("{}.json", r.cell)), r)?;
    }
    let summary = PatentSummary {
        patents: patents.len(),
        type_accuracy,
        cells: results
            .iter()
            .map(|r| CellSummary {
                cell: r.cell.clone(),
                map: r.map,
                p_at_10: r.p_at_10,
            })
            .collect(),
    };
    write_json(dir.join("patent.json"), &summary)?;
    let rows: Vec<Vec<String>> = summary
        .cells
        .iter()
        .flat_map(|c| {
            [
                vec![c.cell.clone(), "map".into(), c.map.to_string()],
                vec![c.cell.clone(), "p_at_10".into(), c.p_at_10.to_string()],
            ]
        })
        .collect();
    write_csv(dir.join("patent.csv"), &["cell", "metric", "value"], &rows)?;
    Ok(summary)
}
