//! Parameter sweeps and their per-axis statistics.
//!
//! For an axis `a` and a metric, the configurations are grouped by the values
//! of all other axes. The winning frequency of a value of `a` is the share of
//! groups in which it scores best (ties go to the value listed first). The
//! mean variance of `a` is the population variance of the metric inside a
//! group, averaged over groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use docsig::store::DatasetManifest;

use crate::config::{ExperimentConfig, Signature, SweepSpec};
use crate::error::{CliError, Result};
use crate::evaluate::{
    align, config_result, eval_rows, evaluate_config, load_or_make_splits, ConfigResult,
    METRIC_NAMES,
};
use crate::extract::{extract_fv, extract_rl};
use crate::report::{write_csv, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    /// Percentage of groups won by each value, in sweep order.
    pub winning_frequency: Vec<(usize, f64)>,
    pub mean_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub signature: Signature,
    pub axes: BTreeMap<String, Vec<usize>>,
    pub configs: Vec<ConfigResult>,
    /// metric -> axis -> statistics, computed on split means.
    pub stats: BTreeMap<String, BTreeMap<String, AxisStats>>,
}

/// Statistics of one axis for `(axis values, score)` pairs.
pub fn axis_stats(
    points: &[(BTreeMap<String, usize>, f64)],
    axis: &str,
    values: &[usize],
) -> AxisStats {
    let mut groups: BTreeMap<Vec<(String, usize)>, Vec<(usize, f64)>> = BTreeMap::new();
    for (axes, score) in points {
        let key = axes
            .iter()
            .filter(|(k, _)| k.as_str() != axis)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        groups.entry(key).or_default().push((axes[axis], *score));
    }
    let mut wins = vec![0usize; values.len()];
    let mut var_sum = 0.0;
    for members in groups.values() {
        let rank = |v: usize| values.iter().position(|&x| x == v).unwrap_or(usize::MAX);
        let best = members
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(rank(b.0).cmp(&rank(a.0))))
            .expect("groups are never empty");
        if let Some(i) = values.iter().position(|&x| x == best.0) {
            wins[i] += 1;
        }
        let n = members.len() as f64;
        let mean = members.iter().map(|m| m.1).sum::<f64>() / n;
        var_sum += members.iter().map(|m| (m.1 - mean) * (m.1 - mean)).sum::<f64>() / n;
    }
    let g = groups.len().max(1) as f64;
    AxisStats {
        winning_frequency: values
            .iter()
            .zip(&wins)
            .map(|(&v, &w)| (v, 100.0 * w as f64 / g))
            .collect(),
        mean_variance: var_sum / g,
    }
}

pub fn summarize(
    signature: Signature,
    axes: &BTreeMap<String, Vec<usize>>,
    configs: Vec<ConfigResult>,
) -> SweepSummary {
    let mut stats = BTreeMap::new();
    for metric in METRIC_NAMES {
        let points: Vec<(BTreeMap<String, usize>, f64)> = configs
            .iter()
            .map(|c| (c.axes.clone(), c.mean.get(metric).unwrap()))
            .collect();
        let per_axis = axes
            .iter()
            .map(|(a, values)| (a.clone(), axis_stats(&points, a, values)))
            .collect();
        stats.insert(metric.to_string(), per_axis);
    }
    SweepSummary {
        signature,
        axes: axes.clone(),
        configs,
        stats,
    }
}

/// Extracts and evaluates every point of the configured sweep.
pub fn run_sweep(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<SweepSummary> {
    let spec: &SweepSpec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("no sweep configured"))?;
    let points = spec.points(cfg.rl, cfg.fv)?;
    let plan = load_or_make_splits(cfg, manifest)?;
    let mut configs = Vec::with_capacity(points.len());
    for p in &points {
        let outcome = match spec.signature {
            Signature::Rl => extract_rl(cfg, manifest, &p.rl)?,
            _ => extract_fv(cfg, manifest, &p.fv)?,
        };
        let store = docsig::store::read_features(&outcome.path, &Default::default())?;
        let aligned = align(manifest, &[&store], &plan)?;
        let per_split = evaluate_config(cfg, manifest.classes().len(), &aligned, spec.signature)?;
        eprintln!("sweep {}: done", outcome.tag);
        configs.push(config_result(
            outcome.tag,
            spec.signature,
            outcome.dim,
            p.axes.clone(),
            per_split,
        ));
    }
    let summary = summarize(spec.signature, &spec.axes, configs);
    write_sweep_reports(cfg, &summary)?;
    Ok(summary)
}

fn write_sweep_reports(
    cfg: &ExperimentConfig,
    summary: &SweepSummary,
) -> Result<()> {
    let dir = cfg.reports_dir();
    write_json(dir.join("sweep.json"), summary)?;
    write_csv(
        dir.join("sweep.csv"),
        &["config", "split", "metric", "value"],
        &eval_rows(&summary.configs),
    )?;
    let mut rows = Vec::new();
    for (metric, axes) in &summary.stats {
        for (axis, s) in axes {
            for (v, f) in &s.winning_frequency {
                rows.push(vec![
                    metric.clone(),
                    axis.clone(),
                    v.to_string(),
                    f.to_string(),
                    s.mean_variance.to_string(),
                ]);
            }
        }
    }
    write_csv(
        dir.join("sweep-stats.csv"),
        &["metric", "axis", "value", "winning_frequency", "mean_variance"],
        &rows,
    )
}
