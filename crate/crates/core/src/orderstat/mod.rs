//! Distributions of the k-th largest output probability of a Haar-random
//! N-qubit state.
//!
//! Two forms are provided. The exact form is the alternating binomial series
//! over `j = k..min(D, ⌊1/x⌋)`, valid up to [`EXACT_CEILING`]. The large-D
//! form `N e^{-k(D-2)x} (1 - e^{-(D-2)x})^{D-k}` is cheap at any size and is
//! normalized numerically once per (D, k) at construction.

mod series;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use crate::special::{digamma, trigamma};

use series::SeriesTables;

/// Largest Hilbert dimension accepted by the exact series.
pub const EXACT_CEILING: u64 = 1 << 14;

/// Largest qubit count representable with `D = 2^N` in a `u64`.
pub const MAX_QUBITS: u32 = 63;

/// System size: `n_qubits` and `dim = 2^n_qubits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DimsRepr", into = "DimsRepr")]
pub struct Dims {
    n_qubits: u32,
    dim: u64,
}

#[derive(Serialize, Deserialize)]
struct DimsRepr {
    n_qubits: u32,
}

impl TryFrom<DimsRepr> for Dims {
    type Error = Error;
    fn try_from(r: DimsRepr) -> Result<Self> {
        Dims::new(r.n_qubits)
    }
}

impl From<Dims> for DimsRepr {
    fn from(d: Dims) -> Self {
        DimsRepr {
            n_qubits: d.n_qubits,
        }
    }
}

impl Dims {
    pub fn new(n_qubits: u32) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::domain(format!(
                "n_qubits must lie in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        Ok(Self {
            n_qubits,
            dim: 1u64 << n_qubits,
        })
    }

    pub fn n_qubits(&self) -> u32 {
        self.n_qubits
    }

    pub fn dim(&self) -> u64 {
        self.dim
    }

    pub fn dim_f64(&self) -> f64 {
        self.dim as f64
    }

    pub(crate) fn check_rank(&self, k: u64) -> Result<()> {
        if k == 0 || k > self.dim {
            return Err(Error::domain(format!(
                "rank {k} outside 1..={} for N = {}",
                self.dim, self.n_qubits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdfForm {
    ExactSeries,
    LargeDApprox,
}

impl PdfForm {
    /// Dimension up to which [`FormPolicy::Auto`] picks the exact series.
    pub const AUTO_EXACT_MAX_DIM: u64 = 1 << 10;
}

/// How likelihood code chooses a [`PdfForm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormPolicy {
    #[default]
    Auto,
    Exact,
    Approx,
}

impl FormPolicy {
    pub fn resolve(self, dims: Dims) -> PdfForm {
        match self {
            Self::Exact => PdfForm::ExactSeries,
            Self::Approx => PdfForm::LargeDApprox,
            Self::Auto if dims.dim() <= PdfForm::AUTO_EXACT_MAX_DIM => PdfForm::ExactSeries,
            Self::Auto => PdfForm::LargeDApprox,
        }
    }
}

/// Default rank ceiling of the large-D form: `k <= 4N`.
pub fn default_approx_rank_limit(dims: Dims) -> u64 {
    4 * dims.n_qubits() as u64
}

/// Density of the k-th largest probability, exact or large-D.
///
/// Immutable after construction; cloning shares the exact-series tables.
#[derive(Debug, Clone)]
pub struct RankPdf {
    dims: Dims,
    rank: u64,
    form: PdfForm,
    log_norm: f64,
    tables: Option<Arc<SeriesTables>>,
}

impl RankPdf {
    pub fn new(dims: Dims, rank: u64, form: PdfForm) -> Result<Self> {
        match form {
            PdfForm::ExactSeries => Self::exact(dims, rank),
            PdfForm::LargeDApprox => Self::approx(dims, rank),
        }
    }

    pub fn exact(dims: Dims, rank: u64) -> Result<Self> {
        Self::exact_with_tables(dims, rank, Arc::new(Self::tables_for(dims)?))
    }

    pub(crate) fn tables_for(dims: Dims) -> Result<SeriesTables> {
        if dims.dim() > EXACT_CEILING {
            return Err(Error::ExactCeiling {
                dim: dims.dim(),
                ceiling: EXACT_CEILING,
            });
        }
        Ok(SeriesTables::new(dims.dim()))
    }

    pub(crate) fn exact_with_tables(dims: Dims, rank: u64, tables: Arc<SeriesTables>) -> Result<Self> {
        dims.check_rank(rank)?;
        if dims.dim() > EXACT_CEILING {
            return Err(Error::ExactCeiling {
                dim: dims.dim(),
                ceiling: EXACT_CEILING,
            });
        }
        Ok(Self {
            dims,
            rank,
            form: PdfForm::ExactSeries,
            log_norm: tables.ln_norm(rank),
            tables: Some(tables),
        })
    }

    pub fn approx(dims: Dims, rank: u64) -> Result<Self> {
        Self::approx_with_limit(dims, rank, default_approx_rank_limit(dims))
    }

    pub fn approx_with_limit(dims: Dims, rank: u64, rank_limit: u64) -> Result<Self> {
        dims.check_rank(rank)?;
        if dims.dim() < 4 {
            return Err(Error::domain("the large-D form needs D >= 4"));
        }
        if rank > rank_limit {
            return Err(Error::domain(format!(
                "rank {rank} exceeds the large-D rank limit {rank_limit}"
            )));
        }
        let log_norm = approx_log_norm(dims, rank)?;
        Ok(Self {
            dims,
            rank,
            form: PdfForm::LargeDApprox,
            log_norm,
            tables: None,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rank(&self) -> u64 {
        self.rank
    }

    pub fn form(&self) -> PdfForm {
        self.form
    }

    /// Natural log of |normalization constant|.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Right end of the support: `1/k` for the exact form, 1 otherwise.
    pub fn support_max(&self) -> f64 {
        match self.form {
            PdfForm::ExactSeries => (1.0 / self.rank as f64).min(1.0),
            PdfForm::LargeDApprox => 1.0,
        }
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Ok(0.0);
        }
        match self.form {
            PdfForm::ExactSeries => {
                if (self.rank as f64) * x > 1.0 {
                    return Ok(0.0);
                }
                self.tables
                    .as_ref()
                    .expect("exact form carries tables")
                    .density(self.rank, x)
            }
            PdfForm::LargeDApprox => Ok(self.approx_ln_pdf(x).exp()),
        }
    }

    /// ln pdf(x); −∞ outside the support or where the density vanishes.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        match self.form {
            PdfForm::ExactSeries => Ok(self.pdf(x)?.ln()),
            PdfForm::LargeDApprox => Ok(self.approx_ln_pdf(x)),
        }
    }

    fn approx_ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x <= 1.0) {
            return f64::NEG_INFINITY;
        }
        let d = self.dims.dim_f64();
        let k = self.rank as f64;
        self.log_norm + approx_log_kernel(d, k, (d - 2.0) * x)
    }

    /// Closed-form mean and second moment (exact Haar values).
    pub fn moments(&self) -> MomentSet {
        moments_unchecked(self.dims, self.rank)
    }
}

/// -k t + (D-k) ln(1 - e^{-t}), the log of the large-D kernel in t = (D-2)x.
fn approx_log_kernel(d: f64, k: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -k * t + (d - k) * ln_one_minus_exp_neg(t)
}

/// ln(1 − e^{−t}) for t > 0, accurate at both ends.
fn ln_one_minus_exp_neg(t: f64) -> f64 {
    if t > std::f64::consts::LN_2 {
        (-(-t).exp()).ln_1p()
    } else {
        (-(-t).exp_m1()).ln()
    }
}

/// ln of the normalization constant of the large-D form, by adaptive
/// quadrature of the kernel in the scaled variable t = (D-2)x.
fn approx_log_norm(dims: Dims, rank: u64) -> Result<f64> {
    let d = dims.dim_f64();
    let k = rank as f64;
    let t_max = d - 2.0;
    let mode = (d / k).ln();
    let offset = approx_log_kernel(d, k, mode);
    let hi = t_max.min(mode + 80.0);
    let breaks: Vec<f64> = [mode - 12.0, mode - 4.0, mode - 1.0, mode, mode + 2.0, mode + 8.0, mode + 30.0]
        .into_iter()
        .filter(|&b| b > 0.0 && b < hi)
        .collect();
    let integral = quad::integrate(
        |t| (approx_log_kernel(d, k, t) - offset).exp(),
        0.0,
        hi,
        &breaks,
        Tolerance::new(1e-14, 1e-12),
    );
    let mass = integral.value();
    if !integral.converged || !mass.is_finite() || mass <= 0.0 {
        return Err(Error::Numeric(format!(
            "large-D normalization failed for D = {d}, k = {rank}"
        )));
    }
    // ∫_0^1 kernel dx = e^{offset} · mass / (D-2)
    Ok(-(offset + mass.ln() - t_max.ln()))
}

/// Closed-form first and second moments of the k-th largest probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
}

/// ⟨p_k⟩ = (ψ(D+1) − ψ(k)) / D.
pub fn digamma_mean(dims: Dims, k: u64) -> Result<f64> {
    dims.check_rank(k)?;
    Ok(mean_unchecked(dims, k))
}

fn mean_unchecked(dims: Dims, k: u64) -> f64 {
    let d = dims.dim_f64();
    (digamma(d + 1.0) - digamma(k as f64)) / d
}

/// ⟨p_k²⟩ = D⟨p_k⟩²/(D+1) + (ψ⁽¹⁾(k) − ψ⁽¹⁾(D+1)) / (D(D+1)).
pub fn second_moment(dims: Dims, k: u64) -> Result<MomentSet> {
    dims.check_rank(k)?;
    Ok(moments_unchecked(dims, k))
}

fn moments_unchecked(dims: Dims, k: u64) -> MomentSet {
    let d = dims.dim_f64();
    let mean = mean_unchecked(dims, k);
    let second = d * mean * mean / (d + 1.0) + (trigamma(k as f64) - trigamma(d + 1.0)) / (d * (d + 1.0));
    MomentSet {
        mean,
        second_moment: second,
        variance: second - mean * mean,
    }
}

/// Exact density of the k-th largest probability at `x`.
pub fn exact_pdf(dims: Dims, k: u64, x: f64) -> Result<f64> {
    check_unit(x)?;
    RankPdf::exact(dims, k)?.pdf(x)
}

/// Exact densities of all ranks `1..=D` at `x`; entry `k-1` is rank `k`.
pub fn exact_pdf_all_ranks(dims: Dims, x: f64) -> Result<Vec<f64>> {
    check_unit(x)?;
    RankPdf::tables_for(dims)?.all_ranks(x)
}

/// Large-D approximate density of the k-th largest probability at `x`.
pub fn approx_pdf(dims: Dims, k: u64, x: f64) -> Result<f64> {
    check_unit(x)?;
    RankPdf::approx(dims, k)?.pdf(x)
}

/// Porter–Thomas marginal (D−1)(1−x)^{D−2}, evaluated in log space.
pub fn pt_pdf(dims: Dims, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let d = dims.dim_f64();
    if dims.dim() == 2 {
        return 1.0;
    }
    if x == 1.0 {
        return 0.0;
    }
    ((d - 1.0).ln() + (d - 2.0) * (-x).ln_1p()).exp()
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(())
}
