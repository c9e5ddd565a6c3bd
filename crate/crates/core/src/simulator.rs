//! Synthetic speckle data and the experiment harnesses built on it.
//!
//! Every trial draws from its own ChaCha8 stream, selected by the run seed
//! and a stream counter, so results do not depend on how rayon schedules
//! the work.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_from_probs, maximize, CountLikelihood, EstimatorOptions, MeasurementRecord, RankSelection, RankedProbs,
};
use crate::noise::{apply_noise, NoiseModel};
use crate::orderstat::{digamma_mean, Dims};
use crate::special::{pairwise_sum, Neumaier};

/// Largest dimension for which all `D` probabilities are materialized.
pub const FULL_VECTOR_MAX_DIM: u64 = 1 << 20;
/// Largest dimension for which `D` exponentials are streamed through a heap.
pub const STREAMING_MAX_DIM: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    FullVector,
    StreamingTopK,
    AnalyticRank,
}

impl SampleMode {
    /// The cheapest mode that still samples a genuine Haar vector.
    pub fn auto(dims: Dims) -> Self {
        match dims.dim() {
            d if d <= FULL_VECTOR_MAX_DIM => Self::FullVector,
            d if d <= STREAMING_MAX_DIM => Self::StreamingTopK,
            _ => Self::AnalyticRank,
        }
    }

    fn check(self, dims: Dims) -> Result<()> {
        let limit = match self {
            Self::FullVector => FULL_VECTOR_MAX_DIM,
            Self::StreamingTopK => STREAMING_MAX_DIM,
            Self::AnalyticRank => return Ok(()),
        };
        if dims.dim() > limit {
            return Err(Error::Config(format!(
                "{self:?} sampling supports D <= {limit}, got D = {}",
                dims.dim()
            )));
        }
        Ok(())
    }
}

impl FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-vector" => Ok(Self::FullVector),
            "streaming" | "streaming-top-k" => Ok(Self::StreamingTopK),
            "analytic" | "analytic-rank" => Ok(Self::AnalyticRank),
            other => Err(Error::Config(format!("unknown sample mode `{other}`"))),
        }
    }
}

/// The K largest probabilities of one Haar-random state, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarSample {
    pub dims: Dims,
    pub top_probs: Vec<f64>,
    pub mode: SampleMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotLaw {
    Poisson,
    Binomial,
}

impl FromStr for ShotLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "binomial" => Ok(Self::Binomial),
            other => Err(Error::Config(format!("unknown shot law `{other}` (poisson|binomial)"))),
        }
    }
}

/// How the per-trial relative errors are reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessStatistic {
    #[default]
    Mean,
    Median,
}

impl FromStr for SuccessStatistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::Config(format!("unknown statistic `{other}` (mean|median)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dims: Dims,
    pub true_fidelity: f64,
    pub shots: u64,
    pub top_k: u64,
    pub trials: u64,
    pub seed: u64,
    pub eps_rel: f64,
    pub law: ShotLaw,
    pub statistic: SuccessStatistic,
}

impl SimConfig {
    pub fn new(dims: Dims, true_fidelity: f64, shots: u64, top_k: u64, trials: u64, seed: u64) -> Result<Self> {
        let cfg = Self {
            dims,
            true_fidelity,
            shots,
            top_k,
            trials,
            seed,
            eps_rel: 0.1,
            law: ShotLaw::Poisson,
            statistic: SuccessStatistic::Mean,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.true_fidelity) {
            return Err(Error::Config(format!("fidelity {} outside [0, 1]", self.true_fidelity)));
        }
        if self.shots == 0 || self.top_k == 0 || self.trials == 0 {
            return Err(Error::Config("shots, top_k and trials must be positive".into()));
        }
        if self.top_k > self.dims.dim() {
            return Err(Error::Config(format!("top_k {} exceeds D = {}", self.top_k, self.dims.dim())));
        }
        if !(self.eps_rel > 0.0) {
            return Err(Error::Config("eps_rel must be positive".into()));
        }
        Ok(())
    }
}

/// Random stream `stream` of the run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the top-K probabilities of a flat-Dirichlet vector.
///
/// `FullVector` and `StreamingTopK` consume the same exponential variates in
/// the same order and sum them identically, so for a given stream they
/// return the same probabilities.
pub fn sample_haar<R: Rng + ?Sized>(dims: Dims, k: u64, mode: SampleMode, rng: &mut R) -> Result<HaarSample> {
    dims.check_rank(k)?;
    mode.check(dims)?;
    let d = dims.dim();
    let top_probs = match mode {
        SampleMode::FullVector => {
            let mut values: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = values.iter().copied().collect::<Neumaier>().sum();
            values.sort_unstable_by(|a, b| b.total_cmp(a));
            values.truncate(k as usize);
            values.iter().map(|v| v / total).collect()
        }
        SampleMode::StreamingTopK => {
            let mut heap: BinaryHeap<Reverse<OrdF64>> = BinaryHeap::with_capacity(k as usize + 1);
            let mut total = Neumaier::default();
            for _ in 0..d {
                let v: f64 = rng.sample(Exp1);
                total.add(v);
                if (heap.len() as u64) < k {
                    heap.push(Reverse(OrdF64(v)));
                } else if v > heap.peek().expect("k >= 1").0 .0 {
                    heap.pop();
                    heap.push(Reverse(OrdF64(v)));
                }
            }
            let total = total.sum();
            let mut values: Vec<f64> = heap.into_iter().map(|Reverse(OrdF64(v))| v).collect();
            values.sort_unstable_by(|a, b| b.total_cmp(a));
            values.iter().map(|v| v / total).collect()
        }
        SampleMode::AnalyticRank => (1..=k).map(|r| digamma_mean(dims, r)).collect::<Result<_>>()?,
    };
    Ok(HaarSample { dims, top_probs, mode })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Independent per-rank counts with means `S·(f p_k + (1-f)/D)`.
pub fn sample_counts<R: Rng + ?Sized>(
    dims: Dims,
    probs: &[f64],
    noise: NoiseModel,
    shots: u64,
    law: ShotLaw,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let s = shots as f64;
    probs
        .iter()
        .map(|&p| {
            let q = apply_noise(p, noise, dims).clamp(0.0, 1.0);
            match law {
                ShotLaw::Poisson => {
                    let lambda = s * q;
                    if lambda <= 0.0 {
                        return Ok(0);
                    }
                    let dist = Poisson::new(lambda).map_err(|e| Error::Numeric(format!("poisson({lambda}): {e}")))?;
                    Ok(dist.sample(rng) as u64)
                }
                ShotLaw::Binomial => {
                    let dist = Binomial::new(shots, q).map_err(|e| Error::Numeric(format!("binomial({shots}, {q}): {e}")))?;
                    Ok(dist.sample(rng))
                }
            }
        })
        .collect()
}

/// Sorts descending; equal counts keep their input order.
pub fn rerank(counts: &[u64]) -> Vec<u64> {
    let mut out = counts.to_vec();
    out.sort_by(|a, b| b.cmp(a));
    out
}

/// One count-MLE trial on analytic rank means.
pub fn run_trial<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<f64> {
    let sel = RankSelection::top(cfg.top_k)?;
    let lik = CountLikelihood::new(cfg.dims, &sel)?;
    let means = sample_haar(cfg.dims, cfg.top_k, SampleMode::AnalyticRank, rng)?.top_probs;
    trial_with(cfg, &sel, &lik, &means, rng)
}

fn trial_with<R: Rng + ?Sized>(
    cfg: &SimConfig,
    sel: &RankSelection,
    lik: &CountLikelihood,
    means: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let noise = NoiseModel::new(cfg.true_fidelity)?;
    let counts = rerank(&sample_counts(cfg.dims, means, noise, cfg.shots, cfg.law, rng)?);
    let record = MeasurementRecord::from_counts_unchecked("trial", cfg.shots, counts);
    let curve = maximize(|f| lik.evaluate(&record, sel, f), EstimatorOptions::default().maximize)?;
    Ok(curve.f_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub f_hat: f64,
    pub rel_error: f64,
}

/// Runs `trials` independent trials using streams `base + t`.
fn run_trials(cfg: &SimConfig, stream_base: u64) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    let sel = RankSelection::top(cfg.top_k)?;
    let lik = CountLikelihood::new(cfg.dims, &sel)?;
    let means: Vec<f64> = (1..=cfg.top_k).map(|k| digamma_mean(cfg.dims, k)).collect::<Result<_>>()?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(cfg.seed, stream_base + t);
            let f_hat = trial_with(cfg, &sel, &lik, &means, &mut rng)?;
            Ok(TrialOutcome {
                trial: t,
                f_hat,
                rel_error: relative_error(f_hat, cfg.true_fidelity),
            })
        })
        .collect()
}

fn relative_error(f_hat: f64, f_star: f64) -> f64 {
    if f_star == 0.0 {
        f_hat.abs()
    } else {
        (f_hat - f_star).abs() / f_star
    }
}

/// `cfg.trials` count-MLE trials on streams `0..M`.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<TrialOutcome>> {
    run_trials(cfg, 0)
}

pub fn success_statistic(outcomes: &[TrialOutcome], statistic: SuccessStatistic) -> f64 {
    let mut errs: Vec<f64> = outcomes.iter().map(|o| o.rel_error).collect();
    match statistic {
        SuccessStatistic::Mean => pairwise_sum(&errs) / errs.len() as f64,
        SuccessStatistic::Median => {
            errs.sort_by(f64::total_cmp);
            let n = errs.len();
            if n % 2 == 1 {
                errs[n / 2]
            } else {
                0.5 * (errs[n / 2 - 1] + errs[n / 2])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub shots: u64,
    pub statistic: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinShotsResult {
    pub min_shots: u64,
    pub probes: Vec<Probe>,
}

/// Bracket ratio at which bisection stops.
pub const BISECTION_RATIO: f64 = 1.1;

/// Default `s_hi` ceiling `2^(N+4)`.
pub fn default_shot_ceiling(dims: Dims) -> u64 {
    1u64.checked_shl(dims.n_qubits() + 4).unwrap_or(u64::MAX)
}

/// Smallest shot count meeting `cfg.eps_rel`, bisected geometrically.
///
/// Probe `i` runs its trials on streams `(i << 32) + t`, so successive probes
/// are independent yet reproducible.
pub fn min_shots_bisection(cfg: &SimConfig, s_lo: u64, s_hi: u64, ceiling: u64) -> Result<MinShotsResult> {
    cfg.validate()?;
    if s_lo == 0 || s_lo >= s_hi {
        return Err(Error::Config(format!("need 0 < s_lo < s_hi, got {s_lo}, {s_hi}")));
    }
    if s_hi > ceiling {
        return Err(Error::Config(format!("s_hi {s_hi} exceeds the ceiling {ceiling}")));
    }
    let mut probes = Vec::new();
    let probe = |shots: u64, probes: &mut Vec<Probe>| -> Result<bool> {
        let index = probes.len() as u64 + 1;
        let trial_cfg = SimConfig { shots, ..cfg.clone() };
        let outcomes = run_trials(&trial_cfg, index << 32)?;
        let statistic = success_statistic(&outcomes, cfg.statistic);
        let success = statistic <= cfg.eps_rel;
        log::debug!("probe S={shots}: statistic {statistic:.4} -> {success}");
        probes.push(Probe { shots, statistic, success });
        Ok(success)
    };

    let (mut lo, mut hi) = (s_lo, s_hi);
    while !probe(hi, &mut probes)? {
        if hi >= ceiling {
            return Err(Error::Unattainable { ceiling });
        }
        lo = hi;
        hi = hi.saturating_mul(2).min(ceiling);
    }
    if lo == s_lo && probe(lo, &mut probes)? {
        return Ok(MinShotsResult { min_shots: lo, probes });
    }
    while (hi as f64) / (lo as f64) > BISECTION_RATIO {
        let mid = ((lo as f64) * (hi as f64)).sqrt().round() as u64;
        if mid <= lo || mid >= hi {
            break;
        }
        if probe(mid, &mut probes)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinShotsResult { min_shots: hi, probes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_qubits: u32,
    pub mean_error: f64,
    pub std_error: f64,
    pub errors: Vec<f64>,
}

/// Mean and sample standard deviation of `|f̂ − f*|` over `records` Haar
/// realizations per qubit count, each estimated alone by the probability
/// likelihood over `sel`.
///
/// Records are the exact noisy top-K probabilities, so the spread measures
/// the estimator's intrinsic error rather than shot noise. Realization `m`
/// at `N` qubits uses stream `(N << 32) + m`.
pub fn error_scaling_experiment(
    n_values: &[u32],
    f_star: f64,
    sel: &RankSelection,
    records: u64,
    seed: u64,
    opts: &EstimatorOptions,
) -> Result<Vec<ScalingRow>> {
    let noise = NoiseModel::new(f_star)?;
    if records == 0 {
        return Err(Error::Config("need at least one record".into()));
    }
    n_values
        .iter()
        .map(|&n| {
            let dims = Dims::new(n)?;
            let mode = SampleMode::auto(dims);
            let k = sel.max_rank();
            let errors: Vec<f64> = (0..records)
                .into_par_iter()
                .map(|m| {
                    let mut rng = stream_rng(seed, ((n as u64) << 32) + m);
                    let sample = sample_haar(dims, k, mode, &mut rng)?;
                    let obs = RankedProbs {
                        circuit_id: format!("n{n}-m{m}"),
                        probs: sample.top_probs.iter().map(|&p| apply_noise(p, noise, dims)).collect(),
                    };
                    let (curve, _) = estimate_from_probs(std::slice::from_ref(&obs), sel, dims, opts)?;
                    Ok((curve.f_hat - f_star).abs())
                })
                .collect::<Result<_>>()?;
            let (mean_error, std_error) = mean_std(&errors);
            Ok(ScalingRow {
                n_qubits: n,
                mean_error,
                std_error,
                errors,
            })
        })
        .collect()
}

/// Mean and sample (n−1) standard deviation; zero spread for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0)).sqrt())
}
