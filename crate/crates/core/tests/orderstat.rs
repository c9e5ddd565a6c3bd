use fidsta_core::orderstat::{
    approx_pdf, digamma_mean, exact_pdf, exact_pdf_all_ranks, pt_pdf, second_moment, Dims, RankPdf,
};
use fidsta_core::quad::{integrate, integrate_vec, Tolerance};
use proptest::prelude::*;

fn dims(n: u32) -> Dims {
    Dims::new(n).unwrap()
}

/// Kinks of every exact density sit at 1/j.
fn kinks(d: u64) -> Vec<f64> {
    let mut b: Vec<f64> = (1..=d).rev().map(|j| 1.0 / j as f64).collect();
    b.insert(0, 0.0);
    b
}

/// ∫ x^m P_k(x) dx for m = 0, 1, 2 and every k, on shared nodes.
fn all_rank_moments(n: u32) -> Vec<[f64; 3]> {
    let dm = dims(n);
    let d = dm.dim() as usize;
    let r = integrate_vec(
        |x, out| {
            let p = exact_pdf_all_ranks(dm, x).unwrap();
            for k in 0..d {
                out[3 * k] = p[k];
                out[3 * k + 1] = x * p[k];
                out[3 * k + 2] = x * x * p[k];
            }
        },
        3 * d,
        &kinks(d as u64),
        Tolerance::new(1e-13, 1e-12),
    );
    (0..d)
        .map(|k| [r.values[3 * k], r.values[3 * k + 1], r.values[3 * k + 2]])
        .collect()
}

#[test]
fn every_rank_normalizes_and_matches_closed_form_moments() {
    for n in 1..=6 {
        let dm = dims(n);
        for (i, m) in all_rank_moments(n).iter().enumerate() {
            let k = i as u64 + 1;
            let closed = second_moment(dm, k).unwrap();
            assert!((m[0] - 1.0).abs() < 1e-9, "N={n} k={k} norm {}", m[0]);
            assert!((m[1] - closed.mean).abs() < 1e-8, "N={n} k={k} mean");
            assert!((m[2] - closed.second_moment).abs() < 1e-8, "N={n} k={k} second");
        }
    }
}

#[test]
fn d2_closed_forms() {
    let d = dims(1);
    assert_eq!(exact_pdf(d, 1, 0.75).unwrap(), 2.0);
    assert_eq!(exact_pdf(d, 1, 0.25).unwrap(), 0.0);
    assert!((digamma_mean(d, 1).unwrap() - 0.75).abs() < 1e-15);
    assert!((digamma_mean(d, 2).unwrap() - 0.25).abs() < 1e-15);
    assert!((second_moment(d, 1).unwrap().second_moment - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn sum_over_ranks_is_porter_thomas() {
    for n in [2, 4, 6, 8] {
        let dm = dims(n);
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let total: f64 = exact_pdf_all_ranks(dm, x).unwrap().iter().sum();
            let pt = dm.dim_f64() * pt_pdf(dm, x);
            assert!((total - pt).abs() < 1e-6 * pt.max(1.0), "N={n} x={x}: {total} vs {pt}");
        }
    }
}

#[test]
fn pt_values() {
    assert_eq!(pt_pdf(dims(1), 0.3), 1.0);
    assert!((pt_pdf(dims(6), 0.0) - 63.0).abs() < 1e-12);
}

#[test]
fn approx_form_normalizes_at_4096() {
    let dm = dims(12);
    let p = RankPdf::approx(dm, 1).unwrap();
    let peak = (dm.dim_f64()).ln() / (dm.dim_f64() - 2.0);
    let r = integrate(|x| p.pdf(x).unwrap(), 0.0, 1.0, &[peak / 4.0, peak, 2.0 * peak, 4.0 * peak], Tolerance::default());
    assert!((r.value() - 1.0).abs() < 1e-6, "{}", r.value());
}

#[test]
fn approx_means_track_digamma_at_1024() {
    let dm = dims(10);
    for k in 1..=8 {
        let p = RankPdf::approx(dm, k).unwrap();
        let scale = 1.0 / (dm.dim_f64() - 2.0);
        let breaks: Vec<f64> = (0..=60).map(|i| i as f64 * 0.5 * scale).collect();
        let r = integrate(|x| x * p.pdf(x).unwrap(), 0.0, 1.0, &breaks, Tolerance::default());
        let closed = digamma_mean(dm, k).unwrap();
        assert!((r.value() / closed - 1.0).abs() < 0.02, "k={k}: {} vs {closed}", r.value());
    }
}

/// Largest |exact − approx| over a grid covering the bulk, relative to the
/// exact peak height.
fn approx_discrepancy(n: u32, k: u64, points: usize) -> f64 {
    let dm = dims(n);
    let span = 8.0 * (dm.dim_f64()).ln() / dm.dim_f64();
    let mut peak: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for i in 1..points {
        let x = i as f64 / points as f64 * span;
        let e = exact_pdf(dm, k, x).unwrap();
        let a = approx_pdf(dm, k, x).unwrap();
        peak = peak.max(e);
        worst = worst.max((e - a).abs());
    }
    worst / peak
}

#[test]
fn approx_and_exact_agree_at_256() {
    // A 250-digit evaluation of both forms puts the gap at 13.2% of the peak.
    let gap = approx_discrepancy(8, 3, 2000);
    assert!((0.12..0.14).contains(&gap), "{gap}");
}

#[test]
fn approx_discrepancy_shrinks_with_dimension() {
    let gaps: Vec<f64> = [6, 8, 10].iter().map(|&n| approx_discrepancy(n, 3, 400)).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn regime_shapes_at_1024() {
    let dm = dims(10);
    let top = RankPdf::exact(dm, 1).unwrap();
    let (mode, _) = (1..4000)
        .map(|i| {
            let x = i as f64 * 0.025 / 4000.0;
            (x, top.pdf(x).unwrap())
        })
        .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    assert!(digamma_mean(dm, 1).unwrap() > mode);

    let mid = RankPdf::exact(dm, 512).unwrap();
    let breaks: Vec<f64> = (512..=1024).rev().map(|j| 1.0 / j as f64).collect();
    let mut all = vec![0.0];
    all.extend(breaks);
    let r = integrate_vec(
        |x, out| {
            let p = mid.pdf(x).unwrap();
            out[0] = x * p;
            out[1] = x * x * p;
            out[2] = x * x * x * p;
        },
        3,
        &all,
        Tolerance::new(1e-16, 1e-10),
    );
    let (m1, m2, m3) = (r.values[0], r.values[1], r.values[2]);
    let var = m2 - m1 * m1;
    let skew = (m3 - 3.0 * m1 * var - m1.powi(3)) / var.powf(1.5);
    assert!(skew.abs() < 0.2, "skewness {skew}");
}

#[test]
fn ceiling_and_domain_errors() {
    assert!(RankPdf::exact(dims(15), 1).is_err());
    assert!(RankPdf::exact(dims(4), 0).is_err());
    assert!(RankPdf::exact(dims(4), 17).is_err());
    assert!(exact_pdf(dims(4), 1, 1.5).is_err());
    assert!(RankPdf::approx(dims(10), 41).is_err());
}

proptest! {
    #[test]
    fn support_is_exactly_one_over_k(n in 1u32..=7, k_frac in 0.0f64..1.0, t in 0.0f64..1.0) {
        let dm = dims(n);
        let k = 1 + (k_frac * (dm.dim() - 1) as f64) as u64;
        let lo = 1.0 / k as f64;
        let x = lo + t * (1.0 - lo);
        if x > lo {
            prop_assert_eq!(exact_pdf(dm, k, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn density_is_non_negative(n in 1u32..=8, k_frac in 0.0f64..1.0, x in 0.0f64..1.0) {
        let dm = dims(n);
        let k = 1 + (k_frac * (dm.dim() - 1) as f64) as u64;
        prop_assert!(exact_pdf(dm, k, x).unwrap() >= 0.0);
    }

    #[test]
    fn means_decrease_strictly(n in 1u32..=40) {
        let dm = dims(n);
        let kmax = dm.dim().min(300);
        let means: Vec<f64> = (1..=kmax).map(|k| digamma_mean(dm, k).unwrap()).collect();
        prop_assert!(means.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn variance_is_consistent(n in 1u32..=30, k_frac in 0.0f64..1.0) {
        let dm = dims(n);
        let k = 1 + (k_frac * (dm.dim().min(1 << 20) - 1) as f64) as u64;
        let m = second_moment(dm, k).unwrap();
        prop_assert!(m.variance >= 0.0);
        let diff = m.variance - (m.second_moment - m.mean * m.mean);
        prop_assert!(diff.abs() <= 1e-15 * m.second_moment);
    }
}
