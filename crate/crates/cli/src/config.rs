//! Experiment configuration: a JSON file whose fields all have defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use docsig::classifiers::{
    SvmParams, DEFAULT_K, DEFAULT_PASSES, DEFAULT_POSITIVE_WEIGHT, FV_LEARNING_RATE,
    NCM_ML_BATCHES, NCM_ML_LEARNING_RATE, RL_LEARNING_RATE,
};
use docsig::densefeat::PatchGridSpec;
use docsig::fisher::FvConfig;
use docsig::models::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use docsig::runlength::{PyramidSpec, QuantizerSpec, MAX_BINS, MIN_BINS};
use docsig::store::{DEFAULT_SPLITS, DEFAULT_TRAIN_RATIO};

use crate::error::{CliError, Result};

/// Pixel budget per size index; `S0` keeps the original resolution.
pub const SIZE_LIMITS: [Option<usize>; 6] = [
    None,
    Some(50_000),
    Some(100_000),
    Some(250_000),
    Some(500_000),
    Some(1_000_000),
];
pub const FV_WINDOWS: [usize; 4] = [24, 32, 48, 64];
pub const FV_DIMS: [usize; 3] = [48, 64, 96];
pub const FV_SCALES: [usize; 4] = [1, 3, 5, 7];
pub const FV_MAX_G: usize = 7;

/// Above this many pixels, unresized pages are too sparse for the default
/// windows.
pub const WINDOW_GUARD_PIXELS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signature {
    Rl,
    Fv,
    /// Concatenated RL and FV signatures.
    Fused,
}

impl Signature {
    pub fn name(self) -> &'static str {
        match self {
            Signature::Rl => "rl",
            Signature::Fv => "fv",
            Signature::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlParams {
    /// Size index into [`SIZE_LIMITS`].
    pub size: usize,
    pub levels: usize,
    pub bins: usize,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            size: 0,
            levels: 5,
            bins: 11,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<()> {
        check_size(self.size)?;
        PyramidSpec::new(self.levels).map_err(|e| CliError::config(e.to_string()))?;
        if !(MIN_BINS..=MAX_BINS).contains(&self.bins) {
            return Err(CliError::config(format!(
                "RL bins {} outside {MIN_BINS}..={MAX_BINS}",
                self.bins
            )));
        }
        Ok(())
    }

    pub fn max_pixels(&self) -> Option<usize> {
        SIZE_LIMITS[self.size]
    }

    pub fn quantizer(&self) -> QuantizerSpec {
        QuantizerSpec::new(self.bins).expect("validated")
    }

    pub fn pyramid(&self) -> PyramidSpec {
        PyramidSpec::new(self.levels).expect("validated")
    }

    pub fn tag(&self) -> String {
        format!("rl-S{}-L{}-Q{}", self.size, self.levels, self.bins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FvParams {
    pub size: usize,
    /// Patch side in pixels.
    pub window: usize,
    /// Patch step; half the window when absent.
    pub stride: Option<usize>,
    /// Number of `sqrt(2)` scales.
    pub scales: usize,
    /// PCA output dimension of the descriptors.
    pub descriptor_dim: usize,
    /// `g`; the vocabulary has `2^(g+3)` Gaussians.
    pub gaussians: usize,
    pub levels: usize,
    pub alpha: f64,
    /// Lifts the window guard on unresized large pages.
    pub allow_small_windows: bool,
}

impl Default for FvParams {
    fn default() -> Self {
        FvParams {
            size: 3,
            window: 32,
            stride: None,
            scales: 5,
            descriptor_dim: 64,
            gaussians: 3,
            levels: 1,
            alpha: 0.5,
            allow_small_windows: false,
        }
    }
}

impl FvParams {
    pub fn validate(&self) -> Result<()> {
        check_size(self.size)?;
        check_domain("FV window", self.window, &FV_WINDOWS)?;
        check_domain("FV descriptor dimension", self.descriptor_dim, &FV_DIMS)?;
        check_domain("FV scales", self.scales, &FV_SCALES)?;
        if !(1..=FV_MAX_G).contains(&self.gaussians) {
            return Err(CliError::config(format!(
                "FV Gaussian exponent {} outside 1..={FV_MAX_G}",
                self.gaussians
            )));
        }
        self.grid()?;
        FvConfig::new(self.alpha, PyramidSpec::new(self.levels)?)?;
        Ok(())
    }

    pub fn max_pixels(&self) -> Option<usize> {
        SIZE_LIMITS[self.size]
    }

    pub fn components(&self) -> usize {
        1 << (self.gaussians + 3)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window / 2)
    }

    pub fn grid(&self) -> Result<PatchGridSpec> {
        Ok(PatchGridSpec::new(self.window, self.stride(), self.scales)?)
    }

    pub fn fv_config(&self) -> FvConfig {
        FvConfig::new(self.alpha, PyramidSpec::new(self.levels).expect("validated"))
            .expect("validated")
    }

    /// The guard applies to unresized (`S0`) and 1M-pixel (`S5`) pages.
    pub fn guarded(&self) -> bool {
        !self.allow_small_windows && (self.size == 0 || self.size == 5)
    }

    /// Identifies the descriptor pipeline and vocabulary shape.
    pub fn vocab_tag(&self) -> String {
        format!(
            "S{}-W{}-T{}-M{}-F{}-G{}",
            self.size,
            self.window,
            self.stride(),
            self.scales,
            self.descriptor_dim,
            self.gaussians
        )
    }

    pub fn tag(&self) -> String {
        format!("fv-{}-L{}-a{}", self.vocab_tag(), self.levels, self.alpha)
    }
}

fn check_size(size: usize) -> Result<()> {
    if size >= SIZE_LIMITS.len() {
        return Err(CliError::config(format!(
            "size index {size} outside 0..{}",
            SIZE_LIMITS.len()
        )));
    }
    Ok(())
}

fn check_domain(what: &str, v: usize, domain: &[usize]) -> Result<()> {
    if !domain.contains(&v) {
        return Err(CliError::config(format!("{what} {v} not in {domain:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabParams {
    /// Descriptors sampled for PCA and EM.
    pub max_descriptors: usize,
    pub em_iters: usize,
    pub em_tol: f64,
}

impl Default for VocabParams {
    fn default() -> Self {
        VocabParams {
            max_descriptors: 50_000,
            em_iters: DEFAULT_MAX_ITERS,
            em_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub k: usize,
    pub rl_learning_rate: f64,
    pub fv_learning_rate: f64,
    pub positive_weight: f64,
    pub passes: usize,
    /// Target dimension of the learned NCM metric, capped at the feature
    /// dimension.
    pub ml_dim: usize,
    pub ml_batches: usize,
    pub ml_learning_rate: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            k: DEFAULT_K,
            rl_learning_rate: RL_LEARNING_RATE,
            fv_learning_rate: FV_LEARNING_RATE,
            positive_weight: DEFAULT_POSITIVE_WEIGHT,
            passes: DEFAULT_PASSES,
            ml_dim: 64,
            ml_batches: NCM_ML_BATCHES,
            ml_learning_rate: NCM_ML_LEARNING_RATE,
        }
    }
}

impl ClassifierParams {
    /// SVM settings for a signature; fused signatures use the FV rate.
    pub fn svm(&self, signature: Signature, seed: u64) -> SvmParams {
        SvmParams {
            learning_rate: match signature {
                Signature::Rl => self.rl_learning_rate,
                _ => self.fv_learning_rate,
            },
            positive_weight: self.positive_weight,
            passes: self.passes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.ml_dim == 0 {
            return Err(CliError::config("k and ml_dim must be positive"));
        }
        let rates = [
            self.rl_learning_rate,
            self.fv_learning_rate,
            self.positive_weight,
            self.ml_learning_rate,
        ];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(CliError::config("learning rates and weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub count: usize,
    /// Train fraction.
    pub ratio: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            count: DEFAULT_SPLITS,
            ratio: DEFAULT_TRAIN_RATIO,
        }
    }
}

/// Grid of parameter values to evaluate. Axis names are `S`, `L`, `Q` for
/// RL and `S`, `W`, `F`, `G`, `M`, `L` for FV; missing axes keep the base
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub signature: Signature,
    pub axes: BTreeMap<String, Vec<usize>>,
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axes: BTreeMap<String, usize>,
    pub rl: RlParams,
    pub fv: FvParams,
}

impl SweepSpec {
    pub fn axis_names(signature: Signature) -> &'static [&'static str] {
        match signature {
            Signature::Rl => &["S", "L", "Q"],
            _ => &["S", "W", "F", "G", "M", "L"],
        }
    }

    /// Every combination of axis values, last axis varying fastest.
    pub fn points(&self, base_rl: RlParams, base_fv: FvParams) -> Result<Vec<SweepPoint>> {
        if self.signature == Signature::Fused {
            return Err(CliError::config("sweeps run over rl or fv, not fused"));
        }
        let names = Self::axis_names(self.signature);
        for (name, values) in &self.axes {
            if !names.contains(&name.as_str()) {
                return Err(CliError::config(format!(
                    "unknown {} sweep axis {name:?}; expected one of {names:?}",
                    self.signature.name()
                )));
            }
            if values.is_empty() {
                return Err(CliError::config(format!("sweep axis {name} has no values")));
            }
        }
        let axes: Vec<(&String, &Vec<usize>)> = self.axes.iter().collect();
        let mut points = Vec::new();
        let mut idx = vec![0usize; axes.len()];
        loop {
            let mut rl = base_rl;
            let mut fv = base_fv;
            let mut chosen = BTreeMap::new();
            for ((name, values), &i) in axes.iter().zip(&idx) {
                let v = values[i];
                chosen.insert((*name).clone(), v);
                match (self.signature, name.as_str()) {
                    (Signature::Rl, "S") => rl.size = v,
                    (Signature::Rl, "L") => rl.levels = v,
                    (Signature::Rl, "Q") => rl.bins = v,
                    (_, "S") => fv.size = v,
                    (_, "W") => fv.window = v,
                    (_, "F") => fv.descriptor_dim = v,
                    (_, "G") => fv.gaussians = v,
                    (_, "M") => fv.scales = v,
                    (_, "L") => fv.levels = v,
                    _ => unreachable!("axis names checked above"),
                }
            }
            match self.signature {
                Signature::Rl => rl.validate()?,
                _ => fv.validate()?,
            }
            points.push(SweepPoint {
                axes: chosen,
                rl,
                fv,
            });
            // odometer increment
            let mut a = axes.len();
            loop {
                if a == 0 {
                    return Ok(points);
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < axes[a].1.len() {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatentParams {
    pub signature: Signature,
    /// Query patents (manifest group ids); every other group is a candidate.
    pub queries: Vec<String>,
    /// Relevant candidate groups per query.
    pub qrels: BTreeMap<String, Vec<String>>,
    /// Image-type classifier written by `train-clf`.
    pub type_model: Option<PathBuf>,
    /// Type kept by the single-type cells.
    pub drawing_type: Option<String>,
    /// Strategy cells to run, out of `I1`..`I6`.
    pub cells: Vec<String>,
}

impl Default for PatentParams {
    fn default() -> Self {
        PatentParams {
            signature: Signature::Fv,
            queries: Vec::new(),
            qrels: BTreeMap::new(),
            type_model: None,
            drawing_type: None,
            cells: ["I1", "I2", "I3", "I4", "I5", "I6"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub signatures: Vec<Signature>,
    pub rl: RlParams,
    pub fv: FvParams,
    pub vocab: VocabParams,
    pub classifiers: ClassifierParams,
    pub splits: SplitParams,
    pub sweep: Option<SweepSpec>,
    pub patent: Option<PatentParams>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("manifest.jsonl"),
            out: PathBuf::from("out"),
            seed: 0,
            signatures: vec![Signature::Rl],
            rl: RlParams::default(),
            fv: FvParams::default(),
            vocab: VocabParams::default(),
            classifiers: ClassifierParams::default(),
            splits: SplitParams::default(),
            sweep: None,
            patent: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths in it are taken from the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| CliError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        rebase(&mut cfg.manifest);
        rebase(&mut cfg.out);
        if let Some(p) = cfg.patent.as_mut() {
            if let Some(m) = p.type_model.as_mut() {
                rebase(m);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signatures.is_empty() {
            return Err(CliError::config("no signature kind selected"));
        }
        self.rl.validate()?;
        self.fv.validate()?;
        self.classifiers.validate()?;
        if self.splits.count == 0 || !(self.splits.ratio > 0.0 && self.splits.ratio < 1.0) {
            return Err(CliError::config(format!(
                "splits need count >= 1 and a ratio in (0, 1), got {} and {}",
                self.splits.count, self.splits.ratio
            )));
        }
        if self.vocab.max_descriptors == 0 {
            return Err(CliError::config("vocab.max_descriptors must be positive"));
        }
        Ok(())
    }

    pub fn needs_fv(&self) -> bool {
        self.signatures
            .iter()
            .any(|s| matches!(s, Signature::Fv | Signature::Fused))
    }

    pub fn needs_rl(&self) -> bool {
        self.signatures
            .iter()
            .any(|s| matches!(s, Signature::Rl | Signature::Fused))
    }

    pub fn split_seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn svm_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn ml_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn features_dir(&self) -> PathBuf {
        self.out.join("features")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    /// Writes `config.resolved.json` into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join("config.resolved.json");
        crate::report::write_json(&path, self)?;
        Ok(path)
    }
}
