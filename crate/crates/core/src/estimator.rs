//! Maximum-likelihood fidelity estimation from ranked probabilities or
//! ranked counts.
//!
//! Two likelihoods are supported:
//!
//! * probability-based: each observed `p_k = n_k / S` is scored against the
//!   noise-deformed density of the k-th largest probability;
//! * count-based: each count `n_k` is treated as Poisson with mean
//!   `S (f ⟨p_k⟩ + (1-f)/D)`, dropping terms that do not depend on `f`.
//!
//! Both are maximized over `f ∈ [0, 1]` by a coarse grid scan followed by a
//! golden-section refinement inside the best grid cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{noisy_mean, JacobianMode, NoiseModel};
use crate::orderstat::{default_approx_rank_limit, Dims, FormPolicy, PdfForm, RankPdf};
use crate::special::pairwise_sum;

/// One circuit realization: shot count and the top-K counts in descending
/// order. Rank `k` is position `k-1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    circuit_id: String,
    shots: u64,
    counts: Vec<u64>,
    /// Set when fewer than the requested number of distinct outcomes were
    /// available.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

impl MeasurementRecord {
    pub fn new(circuit_id: impl Into<String>, shots: u64, counts: Vec<u64>) -> Result<Self> {
        let record = Self {
            circuit_id: circuit_id.into(),
            shots,
            counts,
            truncated: false,
        };
        record.validate()?;
        Ok(record)
    }

    /// Skips validation for counts the caller already knows are sorted.
    pub(crate) fn from_counts_unchecked(circuit_id: &str, shots: u64, counts: Vec<u64>) -> Self {
        Self {
            circuit_id: circuit_id.to_owned(),
            shots,
            counts,
            truncated: false,
        }
    }

    pub(crate) fn with_truncated(mut self, truncated: bool) -> Self {
        self.truncated = truncated;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::domain(format!("record `{}` has zero shots", self.circuit_id)));
        }
        if self.counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::domain(format!(
                "record `{}` counts are not sorted in descending order",
                self.circuit_id
            )));
        }
        let total: u128 = self.counts.iter().map(|&c| c as u128).sum();
        if total > self.shots as u128 {
            return Err(Error::domain(format!(
                "record `{}` retains {total} counts but only {} shots",
                self.circuit_id, self.shots
            )));
        }
        Ok(())
    }

    pub fn circuit_id(&self) -> &str {
        &self.circuit_id
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn top_k(&self) -> usize {
        self.counts.len()
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn count(&self, rank: u64) -> Option<u64> {
        rank.checked_sub(1).and_then(|i| self.counts.get(i as usize)).copied()
    }

    /// Empirical probabilities `n_k / S`, never renormalized over the kept ranks.
    pub fn ranked_probs(&self) -> RankedProbs {
        let s = self.shots as f64;
        RankedProbs {
            circuit_id: self.circuit_id.clone(),
            probs: self.counts.iter().map(|&n| n as f64 / s).collect(),
        }
    }
}

/// Observed probabilities by rank for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedProbs {
    pub circuit_id: String,
    pub probs: Vec<f64>,
}

impl RankedProbs {
    pub fn prob(&self, rank: u64) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.probs.get(i as usize)).copied()
    }
}

/// Subset of ranks entering a likelihood.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSelection {
    ranks: Vec<u64>,
    description: String,
}

impl RankSelection {
    pub fn new(ranks: impl IntoIterator<Item = u64>, description: impl Into<String>) -> Result<Self> {
        let set: BTreeSet<u64> = ranks.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Config("rank selection is empty".into()));
        }
        if set.contains(&0) {
            return Err(Error::Config("ranks start at 1".into()));
        }
        Ok(Self {
            ranks: set.into_iter().collect(),
            description: description.into(),
        })
    }

    /// Ranks `1..=k`.
    pub fn top(k: u64) -> Result<Self> {
        Self::new(1..=k, format!("1..{k}"))
    }

    pub fn single(k: u64) -> Result<Self> {
        Self::new([k], k.to_string())
    }

    /// Every `step`-th rank from `start`, `count` ranks in total. Spacing the
    /// ranks out weakens the within-record correlations the likelihood
    /// ignores.
    pub fn sparse(start: u64, step: u64, count: u64) -> Result<Self> {
        if step == 0 {
            return Err(Error::Config("sparse rank step must be positive".into()));
        }
        Self::new((0..count).map(|i| start + i * step), format!("{start}+{step}i, {count} ranks"))
    }

    pub fn ranks(&self) -> &[u64] {
        &self.ranks
    }

    pub fn max_rank(&self) -> u64 {
        *self.ranks.last().expect("non-empty selection")
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

impl FromStr for RankSelection {
    type Err = Error;

    /// Accepts `a..b` (inclusive) or a comma list such as `1,5,9`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse rank selection `{s}`"));
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a == 0 || b < a {
                return Err(bad());
            }
            return Self::new(a..=b, s);
        }
        let ranks = s
            .split(',')
            .map(|t| t.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranks, s)
    }
}

impl fmt::Display for RankSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProbabilityMle,
    CountMle,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" | "probability" => Ok(Self::ProbabilityMle),
            "count" => Ok(Self::CountMle),
            other => Err(Error::Config(format!("unknown method `{other}` (prob|count)"))),
        }
    }
}

/// Sampled log-likelihood and its located maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCurve {
    pub grid: Vec<(f64, f64)>,
    pub f_hat: f64,
    pub log_likelihood_max: f64,
    /// `1/sqrt(-∂²lnΛ)` at an interior maximum; `None` on the boundary or
    /// when the curvature is not negative.
    pub width: Option<f64>,
    pub boundary: bool,
    /// Set by the estimators; `None` for curves from [`maximize`] directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub f_hat: f64,
    pub width: Option<f64>,
    pub boundary: bool,
    pub method: Method,
    pub ranks_used: RankSelection,
    pub circuits_used: Vec<String>,
    pub jacobian_mode: JacobianMode,
    /// Density form used by the probability likelihood.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<PdfForm>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizeOptions {
    pub grid_points: usize,
    /// Bracket width at which golden-section refinement stops.
    pub tolerance: f64,
    /// Step of the three-point curvature stencil.
    pub curvature_step: f64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            grid_points: 200,
            tolerance: 1e-6,
            curvature_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub jacobian: JacobianMode,
    pub form: FormPolicy,
    /// Rank ceiling for the large-D form; `None` uses `4N`.
    pub approx_rank_limit: Option<u64>,
    pub maximize: MaximizeOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            jacobian: JacobianMode::WithJacobian,
            form: FormPolicy::Auto,
            approx_rank_limit: None,
            maximize: MaximizeOptions::default(),
        }
    }
}

/// Values closer than this are treated as ties on the grid.
const TIE_TOLERANCE: f64 = 1e-12;

/// Grid scan plus golden-section refinement of `curve` over `[0, 1]`.
///
/// Non-finite values other than `+∞` mark infeasible fidelities. A `+∞`
/// value (a point mass) wins outright and is reported without refinement.
pub fn maximize<F>(curve: F, opts: MaximizeOptions) -> Result<LikelihoodCurve>
where
    F: Fn(f64) -> f64 + Sync,
{
    let n = opts.grid_points.max(3);
    let eval = |f: f64| {
        let v = curve(f);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let grid: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            (f, eval(f))
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, &(_, v)) in grid.iter().enumerate() {
        if v == f64::NEG_INFINITY {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let bv = grid[b].1;
                if v > bv && !(bv.is_finite() && v - bv <= TIE_TOLERANCE * bv.abs().max(1.0)) {
                    best = Some(i);
                }
            }
        }
    }
    let best = best.ok_or_else(|| Error::EstimationFailed("log-likelihood is -inf on the whole grid".into()))?;
    let (grid_f, grid_v) = grid[best];

    if grid_v == f64::INFINITY {
        return Ok(LikelihoodCurve {
            boundary: best == 0 || best == n - 1,
            f_hat: grid_f,
            log_likelihood_max: grid_v,
            width: None,
            grid,
            method: None,
        });
    }

    let lo = grid[best.saturating_sub(1)].0;
    let hi = grid[(best + 1).min(n - 1)].0;
    let (mut f_hat, mut v_hat) = golden_section(&eval, lo, hi, opts.tolerance);
    if !(v_hat > grid_v) {
        f_hat = grid_f;
        v_hat = grid_v;
    }

    let at_edge = |edge: f64| (f_hat - edge).abs() <= opts.tolerance.max(1e-4);
    let boundary = (best == 0 && at_edge(0.0)) || (best == n - 1 && at_edge(1.0));
    let width = if boundary {
        None
    } else {
        curvature_width(&eval, f_hat, v_hat, opts.curvature_step)
    };
    Ok(LikelihoodCurve {
        grid,
        f_hat,
        log_likelihood_max: v_hat,
        width,
        boundary,
        method: None,
    })
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn golden_section<F: Fn(f64) -> f64>(eval: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = eval(mid);
    [(c, fc), (d, fd), (mid, fm)]
        .into_iter()
        .fold((mid, fm), |acc, cand| if cand.1 > acc.1 { cand } else { acc })
}

fn curvature_width<F: Fn(f64) -> f64>(eval: &F, f: f64, v: f64, step: f64) -> Option<f64> {
    let h = step.min(0.5 * f).min(0.5 * (1.0 - f));
    if h <= 0.0 {
        return None;
    }
    let second = (eval(f + h) - 2.0 * v + eval(f - h)) / (h * h);
    (second.is_finite() && second < 0.0).then(|| 1.0 / (-second).sqrt())
}

/// Prebuilt per-rank densities for the probability likelihood.
#[derive(Debug, Clone)]
pub struct ProbabilityLikelihood {
    dims: Dims,
    jacobian: JacobianMode,
    form: PdfForm,
    pdfs: BTreeMap<u64, RankPdf>,
}

impl ProbabilityLikelihood {
    pub fn new(dims: Dims, sel: &RankSelection, opts: &EstimatorOptions) -> Result<Self> {
        let form = opts.form.resolve(dims);
        let limit = opts.approx_rank_limit.unwrap_or_else(|| default_approx_rank_limit(dims));
        let pdfs = match form {
            PdfForm::ExactSeries => {
                let tables = std::sync::Arc::new(RankPdf::tables_for(dims)?);
                sel.ranks()
                    .iter()
                    .map(|&k| Ok((k, RankPdf::exact_with_tables(dims, k, tables.clone())?)))
                    .collect::<Result<_>>()?
            }
            PdfForm::LargeDApprox => sel
                .ranks()
                .iter()
                .map(|&k| Ok((k, RankPdf::approx_with_limit(dims, k, limit)?)))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            dims,
            jacobian: opts.jacobian,
            form,
            pdfs,
        })
    }

    pub fn form(&self) -> PdfForm {
        self.form
    }

    /// ln P_k(x; N, f) for one observation.
    pub fn ln_density(&self, k: u64, x: f64, f: f64) -> f64 {
        let pdf = &self.pdfs[&k];
        if f <= 0.0 {
            return if x == 1.0 / self.dims.dim_f64() {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
        }
        let offset = (1.0 - f) / self.dims.dim_f64();
        let upper = f * pdf.support_max() + offset;
        if x < offset || x > upper {
            return f64::NEG_INFINITY;
        }
        let preimage = ((x - offset) / f).clamp(0.0, 1.0);
        let base = pdf.ln_pdf(preimage).unwrap_or(f64::NEG_INFINITY);
        match self.jacobian {
            JacobianMode::WithJacobian => base - f.ln(),
            JacobianMode::PaperLiteral => base,
        }
    }

    /// Σ_m Σ_{k ∈ K*} ln P_k(p_k^m; N, f).
    pub fn evaluate(&self, observations: &[RankedProbs], sel: &RankSelection, f: f64) -> f64 {
        if f <= 0.0 {
            let uniform = 1.0 / self.dims.dim_f64();
            let all_uniform = observations
                .iter()
                .all(|o| sel.ranks().iter().all(|&k| o.prob(k) == Some(uniform)));
            return if all_uniform { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        let terms: Vec<f64> = observations
            .iter()
            .flat_map(|o| {
                sel.ranks()
                    .iter()
                    .map(move |&k| self.ln_density(k, o.prob(k).unwrap_or(f64::NAN), f))
            })
            .collect();
        if terms.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return f64::NEG_INFINITY;
        }
        pairwise_sum(&terms)
    }

    /// Observations outside the deformed support for every grid fidelity.
    fn violations(&self, observations: &[RankedProbs], sel: &RankSelection, grid: &[(f64, f64)]) -> Vec<String> {
        let mut out = Vec::new();
        for o in observations {
            for &k in sel.ranks() {
                let x = o.prob(k).unwrap_or(f64::NAN);
                let never = grid
                    .iter()
                    .all(|&(f, _)| !self.ln_density(k, x, f).is_finite());
                if never {
                    out.push(format!("{}:k={k}:p={x}", o.circuit_id));
                }
            }
        }
        out
    }
}

/// Poisson log-likelihood of ranked counts, f-independent terms dropped.
#[derive(Debug, Clone)]
pub struct CountLikelihood {
    dims: Dims,
    means: BTreeMap<u64, f64>,
}

impl CountLikelihood {
    pub fn new(dims: Dims, sel: &RankSelection) -> Result<Self> {
        let means = sel
            .ranks()
            .iter()
            .map(|&k| Ok((k, noisy_mean(dims, k, NoiseModel::identity())?)))
            .collect::<Result<_>>()?;
        Ok(Self { dims, means })
    }

    /// Σ_k (n_k ln p_k(f) − S p_k(f)).
    pub fn evaluate(&self, record: &MeasurementRecord, sel: &RankSelection, f: f64) -> f64 {
        let uniform = 1.0 / self.dims.dim_f64();
        let s = record.shots() as f64;
        let terms: Vec<f64> = sel
            .ranks()
            .iter()
            .map(|&k| {
                let n = record.count(k).map_or(f64::NAN, |c| c as f64);
                let p = uniform + f * (self.means[&k] - uniform);
                if n == 0.0 {
                    -s * p
                } else if p <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    n * p.ln() - s * p
                }
            })
            .collect();
        pairwise_sum(&terms)
    }
}

fn check_ranks_present(records: &[MeasurementRecord], sel: &RankSelection) -> Result<()> {
    for r in records {
        if (r.top_k() as u64) < sel.max_rank() {
            return Err(Error::Config(format!(
                "record `{}` has {} ranks but rank {} was selected",
                r.circuit_id(),
                r.top_k(),
                sel.max_rank()
            )));
        }
    }
    Ok(())
}

fn check_fidelity(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::domain(format!("fidelity {f} outside [0, 1]")));
    }
    Ok(())
}

/// Probability-based log-likelihood summed over records and selected ranks.
pub fn log_likelihood_prob(
    records: &[MeasurementRecord],
    sel: &RankSelection,
    dims: Dims,
    f: f64,
    opts: &EstimatorOptions,
) -> Result<f64> {
    check_fidelity(f)?;
    check_ranks_present(records, sel)?;
    let lik = ProbabilityLikelihood::new(dims, sel, opts)?;
    let obs: Vec<RankedProbs> = records.iter().map(MeasurementRecord::ranked_probs).collect();
    Ok(lik.evaluate(&obs, sel, f))
}

/// Count-based log-likelihood of one record.
pub fn log_likelihood_count(record: &MeasurementRecord, sel: &RankSelection, dims: Dims, f: f64) -> Result<f64> {
    check_fidelity(f)?;
    check_ranks_present(std::slice::from_ref(record), sel)?;
    Ok(CountLikelihood::new(dims, sel)?.evaluate(record, sel, f))
}

/// Maximizes the probability likelihood of raw ranked probabilities.
pub fn estimate_from_probs(
    observations: &[RankedProbs],
    sel: &RankSelection,
    dims: Dims,
    opts: &EstimatorOptions,
) -> Result<(LikelihoodCurve, PdfForm)> {
    for o in observations {
        if (o.probs.len() as u64) < sel.max_rank() {
            return Err(Error::Config(format!(
                "observation `{}` has {} ranks but rank {} was selected",
                o.circuit_id,
                o.probs.len(),
                sel.max_rank()
            )));
        }
    }
    let lik = ProbabilityLikelihood::new(dims, sel, opts)?;
    match maximize(|f| lik.evaluate(observations, sel, f), opts.maximize) {
        Ok(curve) => Ok((curve, lik.form())),
        Err(Error::EstimationFailed(_)) => {
            let n = opts.maximize.grid_points.max(3);
            let grid: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 / (n - 1) as f64, 0.0)).collect();
            let v = lik.violations(observations, sel, &grid);
            let shown: Vec<&str> = v.iter().take(10).map(String::as_str).collect();
            Err(Error::EstimationFailed(format!(
                "no feasible fidelity; observations outside every deformed support: {}{}",
                shown.join(", "),
                if v.len() > shown.len() { ", ..." } else { "" }
            )))
        }
        Err(e) => Err(e),
    }
}

/// Sums the chosen likelihood over `records` and `sel`, then maximizes.
pub fn estimate(
    records: &[MeasurementRecord],
    sel: &RankSelection,
    dims: Dims,
    method: Method,
    opts: &EstimatorOptions,
) -> Result<(EstimationResult, LikelihoodCurve)> {
    if records.is_empty() {
        return Err(Error::Config("no records supplied".into()));
    }
    check_ranks_present(records, sel)?;
    let (mut curve, form) = match method {
        Method::ProbabilityMle => {
            let obs: Vec<RankedProbs> = records.iter().map(MeasurementRecord::ranked_probs).collect();
            let (curve, form) = estimate_from_probs(&obs, sel, dims, opts)?;
            (curve, Some(form))
        }
        Method::CountMle => {
            let lik = CountLikelihood::new(dims, sel)?;
            let curve = maximize(
                |f| {
                    let per: Vec<f64> = records.iter().map(|r| lik.evaluate(r, sel, f)).collect();
                    pairwise_sum(&per)
                },
                opts.maximize,
            )?;
            (curve, None)
        }
    };
    curve.method = Some(method);
    let result = EstimationResult {
        f_hat: curve.f_hat,
        width: curve.width,
        boundary: curve.boundary,
        method,
        ranks_used: sel.clone(),
        circuits_used: records.iter().map(|r| r.circuit_id().to_owned()).collect(),
        jacobian_mode: opts.jacobian,
        form,
    };
    Ok((result, curve))
}

/// Combines every record at a single rank.
pub fn estimate_fixed_rank(
    records: &[MeasurementRecord],
    k: u64,
    dims: Dims,
    method: Method,
    opts: &EstimatorOptions,
) -> Result<(EstimationResult, LikelihoodCurve)> {
    estimate(records, &RankSelection::single(k)?, dims, method, opts)
}

/// Combines the selected ranks of a single record.
pub fn estimate_single_circuit(
    record: &MeasurementRecord,
    sel: &RankSelection,
    dims: Dims,
    method: Method,
    opts: &EstimatorOptions,
) -> Result<(EstimationResult, LikelihoodCurve)> {
    estimate(std::slice::from_ref(record), sel, dims, method, opts)
}
