//! Evaluation of the alternating binomial series for the exact rank density.
//!
//! The terms `C(D-k, j-k) (1 - j x)^(D-2)` alternate in sign and, for mid
//! ranks or small `x`, exceed the final density by tens of orders of
//! magnitude. Evaluation therefore runs in two tiers: a compensated `f64`
//! sum when the log-magnitude bound shows the cancellation is mild, and
//! otherwise exact fixed-point arithmetic on big integers with a precision
//! derived from the same bound.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::special::{log_sum_exp, LnFactorials, Neumaier};

/// Largest cancellation factor (as a natural log) the `f64` tier accepts.
const F64_TIER_MAX_LOG: f64 = 8.0 * std::f64::consts::LN_2;
const GUARD_BITS: u64 = 64;
const OUTPUT_BITS: u64 = 60;

/// Precomputed tables for one Hilbert dimension.
#[derive(Debug, Clone)]
pub(crate) struct SeriesTables {
    dim: u64,
    ln_fact: LnFactorials,
}

impl SeriesTables {
    pub(crate) fn new(dim: u64) -> Self {
        Self {
            dim,
            ln_fact: LnFactorials::new(dim as usize),
        }
    }

    /// ln |N_k| with N_k = (-1)^k D (D-1) C(D-1, k-1).
    pub(crate) fn ln_norm(&self, k: u64) -> f64 {
        let d = self.dim as f64;
        d.ln() + (d - 1.0).ln() + self.ln_fact.ln_binomial((self.dim - 1) as usize, (k - 1) as usize)
    }

    /// Density of the k-th largest probability at `x`; assumes
    /// `0 <= x <= 1/k` was checked by the caller.
    pub(crate) fn density(&self, k: u64, x: f64) -> Result<f64> {
        let d = self.dim;
        let jmax = last_index(d, x);
        if jmax < k {
            return Ok(0.0);
        }
        let ln_norm = self.ln_norm(k);
        let exponent = (d - 2) as f64;
        let log_terms: Vec<f64> = (k..=jmax)
            .map(|j| {
                let base = (-(j as f64)).mul_add(x, 1.0);
                self.ln_fact.ln_binomial((d - k) as usize, (j - k) as usize)
                    + power_log(base, exponent)
            })
            .collect();
        let bound = ln_norm + log_sum_exp(log_terms.iter().copied());

        let value = if bound <= F64_TIER_MAX_LOG {
            let acc: Neumaier = log_terms
                .iter()
                .zip(k..=jmax)
                .map(|(&lt, j)| {
                    let mag = (ln_norm + lt).exp();
                    // Sign of N_k cancels against (-1)^j: overall (-1)^(j+k).
                    if (j + k) % 2 == 0 {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            acc.sum()
        } else {
            // Fixed-point error is absolute per term, so the precision has to
            // cover the binomial weights even where the powers are tiny.
            let weights = log_sum_exp(
                (k..=jmax).map(|j| self.ln_fact.ln_binomial((d - k) as usize, (j - k) as usize)),
            );
            let precision = precision_bits(ln_norm + weights, d);
            self.density_fixed(k, x, precision)
        };
        clamp_residual(value, d)
    }

    fn density_fixed(&self, k: u64, x: f64, precision: u64) -> f64 {
        let d = self.dim;
        let scaled_x = to_fixed(x, precision);
        let one = BigUint::one() << precision;
        let m = d - k;
        let mut binom = BigUint::one();
        let mut acc = BigInt::zero();
        for j in k..=d {
            let jx = &scaled_x * BigUint::from(j);
            if jx > one {
                break;
            }
            let g = fixed_pow(&(&one - jx), d - 2, precision);
            if !g.is_zero() {
                let term = BigInt::from_biguint(Sign::Plus, &binom * g);
                if (j + k) % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            let i = j - k;
            if i < m {
                binom *= BigUint::from(m - i);
                binom /= BigUint::from(i + 1);
            }
        }
        let norm = exact_norm(d, k);
        fixed_to_f64(&(acc * BigInt::from_biguint(Sign::Plus, norm)), precision)
    }

    /// Densities of every rank `k = 1..=D` at a single `x`, via one
    /// forward-difference table of the truncated powers.
    pub(crate) fn all_ranks(&self, x: f64) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut out = vec![0.0; d as usize];
        if !(0.0..=1.0).contains(&x) {
            return Ok(out);
        }
        let precision = (1..=d)
            .map(|k| {
                self.ln_norm(k) / std::f64::consts::LN_2 + (d - k) as f64
            })
            .fold(0.0, f64::max)
            .ceil() as u64
            + 2 * ceil_log2(d)
            + GUARD_BITS;

        let scaled_x = to_fixed(x, precision);
        let one = BigUint::one() << precision;
        let mut table: Vec<BigInt> = (1..=d)
            .map(|j| {
                let jx = &scaled_x * BigUint::from(j);
                if jx > one {
                    BigInt::zero()
                } else {
                    BigInt::from_biguint(Sign::Plus, fixed_pow(&(&one - jx), d - 2, precision))
                }
            })
            .collect();

        // |N_k| for k = D down to 1, i.e. D (D-1) C(D-1, k-1).
        let base_norm = BigUint::from(d) * BigUint::from(d - 1);
        let mut binom = BigUint::one(); // C(D-1, D-1)
        let n = d as usize;
        for m in 0..n {
            // After m passes, table[i] = Δ^m g(i + 1) for i < n - m.
            if m > 0 {
                for i in 0..(n - m) {
                    let (lo, hi) = table.split_at_mut(i + 1);
                    let cur = &mut lo[i];
                    *cur = -std::mem::take(cur);
                    *cur += &hi[0];
                }
            }
            let k = d - m as u64;
            if (k as f64) * x <= 1.0 {
                let mut v = &table[n - m - 1] * BigInt::from_biguint(Sign::Plus, &base_norm * &binom);
                if m % 2 == 1 {
                    v = -v;
                }
                out[(k - 1) as usize] = clamp_residual(fixed_to_f64(&v, precision), d)?;
            }
            // C(D-1, k-2) from C(D-1, k-1).
            if k >= 2 {
                binom *= BigUint::from(k - 1);
                binom /= BigUint::from(d - k + 1);
            }
        }
        Ok(out)
    }
}

/// Largest j ≤ D with j·x ≤ 1 in floating point (D when x = 0).
fn last_index(d: u64, x: f64) -> u64 {
    if x <= 0.0 {
        return d;
    }
    let guess = (1.0 / x).floor();
    if guess >= d as f64 {
        return d;
    }
    let mut j = guess as u64;
    while j > 0 && (j as f64) * x > 1.0 {
        j -= 1;
    }
    while j < d && ((j + 1) as f64) * x <= 1.0 {
        j += 1;
    }
    j
}

/// ln(base^exponent) with the convention 0^0 = 1.
fn power_log(base: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        0.0
    } else if base <= 0.0 {
        f64::NEG_INFINITY
    } else {
        exponent * base.ln()
    }
}

fn ceil_log2(v: u64) -> u64 {
    64 - (v.max(1) - 1).leading_zeros() as u64
}

fn precision_bits(log_bound: f64, d: u64) -> u64 {
    (log_bound / std::f64::consts::LN_2).ceil().max(0.0) as u64 + 2 * ceil_log2(d) + GUARD_BITS
}

fn exact_norm(d: u64, k: u64) -> BigUint {
    let mut binom = BigUint::one();
    for i in 0..(k - 1) {
        binom *= BigUint::from(d - 1 - i);
        binom /= BigUint::from(i + 1);
    }
    binom * BigUint::from(d) * BigUint::from(d - 1)
}

/// floor(x · 2^precision) for 0 <= x <= 1.
fn to_fixed(x: f64, precision: u64) -> BigUint {
    if x <= 0.0 {
        return BigUint::zero();
    }
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let (mantissa, exp) = if raw_exp == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), raw_exp - 1075)
    };
    let shift = precision as i64 + exp;
    let m = BigUint::from(mantissa);
    if shift >= 0 {
        m << shift as u64
    } else {
        m >> (-shift) as u64
    }
}

/// (base / 2^p)^e in fixed point, truncating after each product.
fn fixed_pow(base: &BigUint, mut e: u64, precision: u64) -> BigUint {
    let mut result = BigUint::one() << precision;
    if e == 0 {
        return result;
    }
    let mut b = base.clone();
    loop {
        if e & 1 == 1 {
            result = (result * &b) >> precision;
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        b = (&b * &b) >> precision;
        if b.is_zero() {
            return BigUint::zero();
        }
    }
    result
}

fn fixed_to_f64(v: &BigInt, precision: u64) -> f64 {
    let shift = precision.saturating_sub(OUTPUT_BITS);
    let top = v >> shift;
    let scale = (precision - shift) as i32;
    top.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-scale)
}

/// Rounding noise below 1e-9 of the density scale is clamped to zero;
/// anything larger signals a genuine failure.
fn clamp_residual(value: f64, d: u64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite exact density {value} at D = {d}")));
    }
    if value >= 0.0 {
        return Ok(value);
    }
    if -value < 1e-9 * d as f64 {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!(
            "exact series returned negative density {value:e} at D = {d}"
        )))
    }
}
