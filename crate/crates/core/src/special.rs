//! Special functions and summation helpers.
//!
//! Digamma and trigamma use upward recurrence to an argument of at least 10
//! followed by the Bernoulli asymptotic series, which is accurate to a few
//! ulps there. Everything is plain `f64` so results agree across platforms.

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// B_{2n} / (2n), n = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2n}, n = 1..7.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// Digamma function ψ(x) for x > 0. Returns NaN outside the domain.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    // Horner in 1/x².
    for &c in DIGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv2;
    shift + x.ln() - 0.5 / x - series
}

/// Trigamma function ψ⁽¹⁾(x) for x > 0. Returns NaN outside the domain.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for &c in TRIGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv2 * inv;
    shift + inv + 0.5 * inv2 + series
}

/// Table of ln(n!) for n = 0..=max, built by cumulative summation.
#[derive(Debug, Clone)]
pub struct LnFactorials(Vec<f64>);

impl LnFactorials {
    pub fn new(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        let mut acc = Neumaier::default();
        table.push(0.0);
        for n in 1..=max {
            acc.add((n as f64).ln());
            table.push(acc.sum());
        }
        Self(table)
    }

    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.0[n]
    }

    /// ln C(n, r); −∞ when r > n.
    pub fn ln_binomial(&self, n: usize, r: usize) -> f64 {
        if r > n {
            return f64::NEG_INFINITY;
        }
        self.0[n] - self.0[r] - self.0[n - r]
    }
}

/// Kahan–Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for Neumaier {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

const PAIRWISE_BLOCK: usize = 8;

/// Fixed-shape pairwise reduction. The association order depends only on the
/// slice length, so results are reproducible regardless of how the inputs
/// were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Numerically stable ln(Σ exp(v)).
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let acc: Neumaier = values.into_iter().map(|v| (v - max).exp()).collect();
    max + acc.sum().ln()
}
