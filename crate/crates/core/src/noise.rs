//! Global depolarizing channel `p -> f p + (1 - f)/D` and the rank densities
//! it deforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orderstat::{digamma_mean, Dims, RankPdf};

/// Depolarizing channel with fidelity `f ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    fidelity: f64,
}

impl NoiseModel {
    pub fn new(fidelity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(Error::domain(format!("fidelity {fidelity} outside [0, 1]")));
        }
        Ok(Self { fidelity })
    }

    pub fn identity() -> Self {
        Self { fidelity: 1.0 }
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    /// Uniform floor `(1 - f)/D` every probability is lifted by.
    pub fn offset(&self, dims: Dims) -> f64 {
        (1.0 - self.fidelity) / dims.dim_f64()
    }
}

/// Whether the deformed density carries the 1/f Jacobian of the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    WithJacobian,
    PaperLiteral,
}

/// f·p + (1−f)/D, evaluated as `1/D + f·(p − 1/D)`.
///
/// Every step of that form is a monotone rounding, so sorted inputs stay
/// sorted, and `p = 1/D` maps to itself exactly.
pub fn apply_noise(p: f64, noise: NoiseModel, dims: Dims) -> f64 {
    let f = noise.fidelity();
    if f == 1.0 {
        return p;
    }
    let uniform = 1.0 / dims.dim_f64();
    uniform + f * (p - uniform)
}

/// f·⟨p_k⟩ + (1−f)/D.
pub fn noisy_mean(dims: Dims, k: u64, noise: NoiseModel) -> Result<f64> {
    Ok(apply_noise(digamma_mean(dims, k)?, noise, dims))
}

/// Rank density pushed through the depolarizing channel.
#[derive(Debug, Clone)]
pub struct DeformedRankPdf {
    base: RankPdf,
    noise: NoiseModel,
    jacobian: JacobianMode,
}

impl DeformedRankPdf {
    pub fn new(base: RankPdf, noise: NoiseModel, jacobian: JacobianMode) -> Self {
        Self {
            base,
            noise,
            jacobian,
        }
    }

    pub fn base(&self) -> &RankPdf {
        &self.base
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn jacobian(&self) -> JacobianMode {
        self.jacobian
    }

    /// `[(1-f)/D, f·x_max + (1-f)/D]`.
    pub fn support(&self) -> (f64, f64) {
        let dims = self.base.dims();
        let lo = self.noise.offset(dims);
        (lo, self.noise.fidelity() * self.base.support_max() + lo)
    }

    /// Preimage `x_f = (x - (1-f)/D)/f` of an observed probability.
    pub fn preimage(&self, x: f64) -> f64 {
        (x - self.noise.offset(self.base.dims())) / self.noise.fidelity()
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.ln_pdf(x)?.exp())
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        let f = self.noise.fidelity();
        if f == 0.0 {
            return Err(Error::DegenerateChannel);
        }
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return Ok(f64::NEG_INFINITY);
        }
        let base = self.base.ln_pdf(self.preimage(x).clamp(0.0, 1.0))?;
        Ok(match self.jacobian {
            JacobianMode::WithJacobian => base - f.ln(),
            JacobianMode::PaperLiteral => base,
        })
    }
}

/// Deformed density at `x` for a prebuilt base density.
pub fn deformed_pdf(d: &DeformedRankPdf, x: f64) -> Result<f64> {
    d.pdf(x)
}
