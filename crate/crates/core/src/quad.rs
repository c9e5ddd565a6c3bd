//! Globally adaptive Gauss–Kronrod (7, 15) quadrature.
//!
//! Used for the large-D normalization constants, for cdf tables, and as the
//! independent oracle against which closed-form moments are checked. The
//! vector form integrates several components on shared nodes, which matters
//! when one evaluation yields the density of every rank at once.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-12,
            rel: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub values: Vec<f64>,
    /// Largest per-component error estimate.
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl Integral {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

struct Segment {
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    worst: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.worst == other.worst
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.worst.total_cmp(&other.worst)
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(center, buf);
    for c in 0..dim {
        kronrod[c] += WGK[7] * buf[c];
        gauss[c] += WG[3] * buf[c];
    }
    for (i, (&node, &wk)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * node;
        for x in [center - dx, center + dx] {
            f(x, buf);
            for c in 0..dim {
                kronrod[c] += wk * buf[c];
                if i % 2 == 1 {
                    gauss[c] += WG[i / 2] * buf[c];
                }
            }
        }
    }
    let mut errors = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    for c in 0..dim {
        kronrod[c] *= half;
        gauss[c] *= half;
        errors[c] = (kronrod[c] - gauss[c]).abs();
        worst = worst.max(errors[c]);
    }
    Segment {
        a,
        b,
        values: kronrod,
        errors,
        worst,
    }
}

/// Integrates a `dim`-component integrand over the consecutive intervals
/// defined by `breaks` (sorted, at least two entries).
pub fn integrate_vec<F>(mut f: F, dim: usize, breaks: &[f64], tol: Tolerance) -> Integral
where
    F: FnMut(f64, &mut [f64]),
{
    assert!(breaks.len() >= 2, "need at least one interval");
    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15(&mut f, w[0], w[1], dim, &mut buf));
            evaluations += 15;
        }
    }

    let mut values = vec![0.0; dim];
    let mut errors = vec![0.0; dim];
    for s in heap.iter() {
        accumulate(&mut values, &mut errors, s, 1.0);
    }

    loop {
        let done = (0..dim).all(|c| errors[c] <= tol.abs.max(tol.rel * values[c].abs()));
        if done || heap.len() >= tol.max_intervals || heap.is_empty() {
            let error = errors.iter().copied().fold(0.0, f64::max);
            return Integral {
                values: ordered_totals(heap.into_vec(), dim),
                error,
                evaluations,
                converged: done,
            };
        }
        let worst = heap.pop().expect("non-empty heap");
        accumulate(&mut values, &mut errors, &worst, -1.0);
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point.
            let mut frozen = worst;
            frozen.worst = 0.0;
            frozen.errors.iter_mut().for_each(|e| *e = 0.0);
            accumulate(&mut values, &mut errors, &frozen, 1.0);
            heap.push(frozen);
            continue;
        }
        for half in [
            gk15(&mut f, worst.a, mid, dim, &mut buf),
            gk15(&mut f, mid, worst.b, dim, &mut buf),
        ] {
            accumulate(&mut values, &mut errors, &half, 1.0);
            heap.push(half);
        }
        evaluations += 30;
        // Running error sums drift after many updates; clamp at zero.
        errors.iter_mut().for_each(|e| *e = e.max(0.0));
    }
}

fn accumulate(values: &mut [f64], errors: &mut [f64], s: &Segment, sign: f64) {
    for c in 0..values.len() {
        values[c] += sign * s.values[c];
        errors[c] += sign * s.errors[c];
    }
}

/// Sums segment values left to right so the result does not depend on heap
/// internals.
fn ordered_totals(mut segments: Vec<Segment>, dim: usize) -> Vec<f64> {
    segments.sort_by(|l, r| l.a.total_cmp(&r.a));
    let mut values = vec![0.0; dim];
    for s in &segments {
        for c in 0..dim {
            values[c] += s.values[c];
        }
    }
    values
}

/// Scalar adaptive integral over `[a, b]`, optionally split at interior
/// breakpoints.
pub fn integrate<F>(mut f: F, a: f64, b: f64, interior: &[f64], tol: Tolerance) -> Integral
where
    F: FnMut(f64) -> f64,
{
    let mut breaks = Vec::with_capacity(interior.len() + 2);
    breaks.push(a);
    breaks.extend(interior.iter().copied().filter(|&x| x > a && x < b));
    breaks.push(b);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    integrate_vec(|x, out| out[0] = f(x), 1, &breaks, tol)
}
