//! Ranking of patents, each represented by the set of its images.
//!
//! Two patents are compared through the dot products of their image
//! signatures, aggregated by mean or max. The images can first be grouped by
//! predicted type (one mean signature per type, compared only with the same
//! type) or restricted to a single type such as drawings.

use serde::{Deserialize, Serialize};

use crate::classifiers::{svm_predict, LinearModel};
use crate::error::{Error, Result};
use crate::feature::{dot, FeatureVector};

/// Score of a patent pair that has nothing left to compare. Such pairs rank
/// after every scored one.
pub const SENTINEL_SCORE: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct PatentDoc {
    pub id: String,
    features: Vec<FeatureVector>,
    predicted_types: Vec<usize>,
    true_types: Option<Vec<usize>>,
}

impl PatentDoc {
    /// A patent whose image types are not known yet.
    pub fn new(id: impl Into<String>, features: Vec<FeatureVector>) -> Result<Self> {
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.dim() != first.dim()) {
                return Err(Error::param("patent images of mixed dimension"));
            }
        }
        Ok(PatentDoc {
            id: id.into(),
            features,
            predicted_types: Vec::new(),
            true_types: None,
        })
    }

    pub fn with_predicted_types(mut self, types: Vec<usize>) -> Result<Self> {
        if !types.is_empty() && types.len() != self.features.len() {
            return Err(Error::param(format!(
                "{} types for {} images",
                types.len(),
                self.features.len()
            )));
        }
        self.predicted_types = types;
        Ok(self)
    }

    pub fn with_true_types(mut self, types: Vec<usize>) -> Result<Self> {
        if types.len() != self.features.len() {
            return Err(Error::param(format!(
                "{} types for {} images",
                types.len(),
                self.features.len()
            )));
        }
        self.true_types = Some(types);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    /// Empty until the images have been typed.
    pub fn predicted_types(&self) -> &[usize] {
        &self.predicted_types
    }

    pub fn true_types(&self) -> Option<&[usize]> {
        self.true_types.as_deref()
    }

    fn has_types(&self) -> bool {
        self.features.is_empty() || !self.predicted_types.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    None,
    ClassMeans,
    SingleType(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub mode: AggregationMode,
    pub grouping: Grouping,
}

impl AggregationStrategy {
    pub fn new(mode: AggregationMode, grouping: Grouping) -> Self {
        AggregationStrategy { mode, grouping }
    }

    pub fn needs_types(&self) -> bool {
        self.grouping != Grouping::None
    }

    /// The six strategy cells `I1..I6`: odd cells average, even cells take
    /// the maximum; pairs use all images, class means, then `drawing_type`
    /// images only.
    pub fn grid(drawing_type: usize) -> [(&'static str, AggregationStrategy); 6] {
        use AggregationMode::{Max, Mean};
        let s = AggregationStrategy::new;
        [
            ("I1", s(Mean, Grouping::None)),
            ("I2", s(Max, Grouping::None)),
            ("I3", s(Mean, Grouping::ClassMeans)),
            ("I4", s(Max, Grouping::ClassMeans)),
            ("I5", s(Mean, Grouping::SingleType(drawing_type))),
            ("I6", s(Max, Grouping::SingleType(drawing_type))),
        ]
    }

    /// Checks type indices against the number of image types.
    pub fn validate(&self, type_count: usize) -> Result<()> {
        match self.grouping {
            Grouping::SingleType(t) if t >= type_count => Err(Error::param(format!(
                "image type {t} outside 0..{type_count}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Assigns every image of `patent` the class `model` scores highest.
pub fn classify_image_types(model: &LinearModel, patent: &PatentDoc) -> Result<PatentDoc> {
    let mut types = Vec::with_capacity(patent.len());
    for f in &patent.features {
        if f.dim() != model.dim() {
            return Err(Error::param(format!(
                "patent {} has images of dimension {}, classifier expects {}",
                patent.id,
                f.dim(),
                model.dim()
            )));
        }
        types.push(svm_predict(model, &f.values)?.1);
    }
    let mut out = patent.clone();
    out.predicted_types = types;
    Ok(out)
}

/// Similarity of two patents, or [`SENTINEL_SCORE`] when one of them has no
/// image left to compare (or, with class means, when they share no type).
pub fn patent_similarity(
    a: &PatentDoc,
    b: &PatentDoc,
    strategy: AggregationStrategy,
) -> Result<f64> {
    if strategy.needs_types() && !(a.has_types() && b.has_types()) {
        return Err(Error::param(format!(
            "strategy {strategy:?} needs predicted image types"
        )));
    }
    if let (Some(fa), Some(fb)) = (a.features.first(), b.features.first()) {
        if fa.dim() != fb.dim() {
            return Err(Error::param(format!(
                "patents {} and {} have images of different dimension",
                a.id, b.id
            )));
        }
    }
    let sims: Vec<f64> = match strategy.grouping {
        Grouping::None => cross_sims(&rows(a, None), &rows(b, None)),
        Grouping::SingleType(t) => cross_sims(&rows(a, Some(t)), &rows(b, Some(t))),
        Grouping::ClassMeans => {
            let (ma, mb) = (type_means(a), type_means(b));
            ma.iter()
                .filter_map(|(t, m)| {
                    mb.iter()
                        .find(|(u, _)| u == t)
                        .map(|(_, n)| dot(m, n))
                })
                .collect()
        }
    };
    Ok(aggregate(&sims, strategy.mode))
}

fn rows(p: &PatentDoc, only: Option<usize>) -> Vec<&[f64]> {
    p.features
        .iter()
        .enumerate()
        .filter(|(i, _)| only.map_or(true, |t| p.predicted_types[*i] == t))
        .map(|(_, f)| f.values.as_slice())
        .collect()
}

fn cross_sims(a: &[&[f64]], b: &[&[f64]]) -> Vec<f64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| dot(x, y)))
        .collect()
}

/// Mean signature per predicted type, in increasing type order.
fn type_means(p: &PatentDoc) -> Vec<(usize, Vec<f64>)> {
    let mut types: Vec<usize> = p.predicted_types.clone();
    types.sort_unstable();
    types.dedup();
    types
        .into_iter()
        .map(|t| {
            let members = rows(p, Some(t));
            let mut mean = vec![0.0; members[0].len()];
            for m in &members {
                mean.iter_mut().zip(m.iter()).for_each(|(s, v)| *s += v);
            }
            mean.iter_mut().for_each(|v| *v /= members.len() as f64);
            (t, mean)
        })
        .collect()
}

fn aggregate(sims: &[f64], mode: AggregationMode) -> f64 {
    if sims.is_empty() {
        return SENTINEL_SCORE;
    }
    match mode {
        AggregationMode::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        AggregationMode::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPatent {
    pub id: String,
    /// `None` stands for [`SENTINEL_SCORE`], which JSON cannot hold.
    pub score: Option<f64>,
}

/// The collection sorted by descending similarity to `query`, ties and
/// sentinel-scored patents ordered by id.
pub fn rank_patents(
    query: &PatentDoc,
    collection: &[PatentDoc],
    strategy: AggregationStrategy,
) -> Result<Vec<RankedPatent>> {
    if collection.is_empty() {
        return Err(Error::param("empty patent collection"));
    }
    let mut scored = Vec::with_capacity(collection.len());
    for p in collection {
        scored.push((patent_similarity(query, p, strategy)?, p.id.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored
        .into_iter()
        .map(|(s, id)| RankedPatent {
            id: id.to_string(),
            score: (s != SENTINEL_SCORE).then_some(s),
        })
        .collect())
}
