//! Dense image signatures and the small vector kernels shared by every
//! signature kind.

use serde::{Deserialize, Serialize};

/// Which pipeline produced a signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Rl,
    Fv,
    Fused,
    Descriptor,
}

impl FeatureKind {
    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::Rl => 1,
            FeatureKind::Fv => 2,
            FeatureKind::Fused => 3,
            FeatureKind::Descriptor => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(FeatureKind::Rl),
            2 => Some(FeatureKind::Fv),
            3 => Some(FeatureKind::Fused),
            4 => Some(FeatureKind::Descriptor),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Rl => "rl",
            FeatureKind::Fv => "fv",
            FeatureKind::Fused => "fused",
            FeatureKind::Descriptor => "descriptor",
        }
    }
}

/// A final image signature.
///
/// `config` is a free-form description of the parameters that produced the
/// vector (for example `"rl:L3:Q9"`); it travels with the values so that
/// signatures of different configurations are never silently mixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
    pub config: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, kind: FeatureKind, config: impl Into<String>) -> Self {
        FeatureVector {
            values,
            kind,
            config: config.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Concatenates signatures of different kinds (early fusion).
    pub fn concat(parts: &[&FeatureVector]) -> FeatureVector {
        let values = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
        let config = parts
            .iter()
            .map(|p| p.config.as_str())
            .collect::<Vec<_>>()
            .join("+");
        FeatureVector::new(values, FeatureKind::Fused, config)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Divides by the L1 norm; the zero vector is left untouched.
pub fn l1_normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Divides by the L2 norm; the zero vector is left untouched.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Component-wise `x -> sign(x) |x|^alpha`.
pub fn power_normalize(v: &mut [f64], alpha: f64) {
    if alpha == 1.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().powf(alpha);
        if *x == 0.0 {
            // signum(0.0) is 1.0 and signum(-0.0) is -1.0; keep a clean zero
            *x = 0.0;
        }
    }
}
