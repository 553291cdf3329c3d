use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A learnable fusion weight: one scalar, or one entry per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeight(Vec<f64>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightShape {
    #[default]
    Scalar,
    Diagonal,
}

impl FusionWeight {
    pub fn scalar(w: f64) -> Self {
        FusionWeight(vec![w])
    }

    pub fn ones(shape: WeightShape, dim: usize) -> Self {
        match shape {
            WeightShape::Scalar => FusionWeight(vec![1.0]),
            WeightShape::Diagonal => FusionWeight(vec![1.0; dim]),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_scalar(&self) -> bool {
        self.0.len() == 1
    }

    /// Entry multiplying dimension `k`.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        if self.is_scalar() {
            self.0[0]
        } else {
            self.0[k]
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.is_scalar() || self.0.len() == dim {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: dim,
                actual: self.0.len(),
            })
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| self.at(k) * x).collect()
    }

    /// `out += alpha · (W v)`
    pub fn apply_add(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        for (k, (o, x)) in out.iter_mut().zip(v).enumerate() {
            *o += alpha * self.at(k) * x;
        }
    }

    /// Accumulates ∂(upstreamᵀ · W v)/∂W into `grad`.
    pub fn accumulate_grad(&self, upstream: &[f64], v: &[f64], alpha: f64, grad: &mut [f64]) {
        if self.is_scalar() {
            grad[0] += alpha * crate::vector::dot(upstream, v);
        } else {
            for (g, (u, x)) in grad.iter_mut().zip(upstream.iter().zip(v)) {
                *g += alpha * u * x;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Serialize for FusionWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_scalar() {
            s.serialize_f64(self.0[0])
        } else {
            self.0.serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for FusionWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Scalar(f64),
            Diagonal(Vec<f64>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Scalar(w) => FusionWeight(vec![w]),
            Repr::Diagonal(v) if !v.is_empty() => FusionWeight(v),
            Repr::Diagonal(_) => {
                return Err(serde::de::Error::custom("empty fusion weight"));
            }
        })
    }
}

/// `W_Q` (query), `W_t` (feedback tag) and `W_p` (question, tag alignment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableWeights {
    #[serde(rename = "W_Q")]
    pub w_q: FusionWeight,
    #[serde(rename = "W_t")]
    pub w_t: FusionWeight,
    #[serde(rename = "W_p")]
    pub w_p: FusionWeight,
}

impl TrainableWeights {
    pub fn init(shape: WeightShape, dim: usize) -> Self {
        TrainableWeights {
            w_q: FusionWeight::ones(shape, dim),
            w_t: FusionWeight::ones(shape, dim),
            w_p: FusionWeight::ones(shape, dim),
        }
    }

    pub fn scalars(w_q: f64, w_t: f64, w_p: f64) -> Self {
        TrainableWeights {
            w_q: FusionWeight::scalar(w_q),
            w_t: FusionWeight::scalar(w_t),
            w_p: FusionWeight::scalar(w_p),
        }
    }
}

impl Default for TrainableWeights {
    fn default() -> Self {
        TrainableWeights::scalars(1.0, 1.0, 1.0)
    }
}
