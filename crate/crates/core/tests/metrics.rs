use panoqa_core::metrics::{
    correlation_report, cpp_psnr, fit_logistic, kendall_tau_b, psnr, s_psnr, spearman, ssim, LogisticParams, Psnr,
    ScoreSeries,
};
use panoqa_core::sphere::{cpp_pixel_valid, uniform_sphere_samples};
use panoqa_core::synth::synthetic_erp;
use panoqa_core::{Projection, RasterImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PSNR_ONE_LEVEL: f64 = 48.130_803_608_679_1; // 20·log10(255)

fn shifted(img: &RasterImage, delta: f64) -> RasterImage {
    let data = img.data().iter().map(|v| v + delta).collect();
    RasterImage::new(img.width(), img.height(), img.channels(), data, img.projection()).unwrap()
}

fn noisy(img: &RasterImage, amp: f64, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data().iter().map(|v| v + amp * rng.random_range(-1.0..1.0)).collect();
    RasterImage::new(img.width(), img.height(), img.channels(), data, img.projection()).unwrap()
}

fn gray(w: usize, h: usize, v: f64, p: Projection) -> RasterImage {
    RasterImage::filled(w, h, 3, v, p).unwrap()
}

#[test]
fn psnr_closed_forms() {
    let a = gray(64, 32, 0.4, Projection::Erp);
    assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
    let b = shifted(&a, 1.0 / 255.0);
    assert!((psnr(&a, &b).unwrap().db() - PSNR_ONE_LEVEL).abs() < 1e-9);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert!(psnr(&a, &gray(32, 32, 0.4, Projection::None)).unwrap_err().is_user_error());
}

#[test]
fn s_psnr_closed_forms_and_pole_weighting() {
    let grid = uniform_sphere_samples(20_000).unwrap();
    let a = synthetic_erp(64, 2).unwrap();
    assert!(s_psnr(&a, &a, &grid).unwrap().is_identical());
    let b = shifted(&a, 1.0 / 255.0);
    assert!((s_psnr(&a, &b, &grid).unwrap().db() - PSNR_ONE_LEVEL).abs() < 1e-6);

    // corrupt only the top and bottom rows
    let mut c = a.clone();
    let (w, h) = (c.width(), c.height());
    for ch in 0..3 {
        let plane = c.channel_mut(ch);
        for j in (0..4).chain(h - 4..h) {
            for i in 0..w {
                plane[j * w + i] = 1.0 - plane[j * w + i];
            }
        }
    }
    assert!(s_psnr(&a, &c, &grid).unwrap().db() > psnr(&a, &c).unwrap().db());
    let none = a.clone().with_projection(Projection::None).unwrap();
    assert!(s_psnr(&none, &none, &grid).is_err());
}

#[test]
fn cpp_psnr_closed_forms_and_mask() {
    let a = synthetic_erp(64, 4).unwrap();
    assert!(cpp_psnr(&a, &a, None).unwrap().is_identical());
    let b = shifted(&gray(128, 64, 0.3, Projection::Erp), 1.0 / 255.0);
    let v = cpp_psnr(&gray(128, 64, 0.3, Projection::Erp), &b, None).unwrap().db();
    assert!((v - PSNR_ONE_LEVEL).abs() < 1e-6, "{v}");

    let cref = noisy(&gray(96, 48, 0.5, Projection::Cpp), 0.1, 1);
    let mut cdist = noisy(&cref, 0.05, 2);
    let base = cpp_psnr(&cref, &cdist, None).unwrap();
    let (w, h) = (cdist.width(), cdist.height());
    for ch in 0..3 {
        let plane = cdist.channel_mut(ch);
        for j in 0..h {
            for i in 0..w {
                if !cpp_pixel_valid(i, j, w, h) {
                    plane[j * w + i] = 0.0;
                }
            }
        }
    }
    assert_eq!(cpp_psnr(&cref, &cdist, None).unwrap(), base);
}

#[test]
fn psnr_variants_fall_with_noise() {
    let a = synthetic_erp(64, 6).unwrap();
    let grid = uniform_sphere_samples(20_000).unwrap();
    let (lo, hi) = (noisy(&a, 0.02, 9), noisy(&a, 0.2, 9));
    assert!(psnr(&a, &lo).unwrap().db() > psnr(&a, &hi).unwrap().db());
    assert!(s_psnr(&a, &lo, &grid).unwrap().db() > s_psnr(&a, &hi, &grid).unwrap().db());
    assert!(cpp_psnr(&a, &lo, None).unwrap().db() > cpp_psnr(&a, &hi, None).unwrap().db());
    assert_eq!(s_psnr(&a, &lo, &grid).unwrap(), s_psnr(&lo, &a, &grid).unwrap());
    assert_eq!(cpp_psnr(&a, &lo, None).unwrap(), cpp_psnr(&lo, &a, None).unwrap());
}

#[test]
fn ssim_reference_values() {
    let a = synthetic_erp(32, 1).unwrap();
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let c1: f64 = 1e-4;
    let expect = (2.0 * 0.5 * 0.25 + c1) / (0.25 + 0.0625 + c1);
    let got = ssim(&gray(32, 32, 0.5, Projection::None), &gray(32, 32, 0.25, Projection::None)).unwrap();
    assert!((got - expect).abs() < 1e-9);
    assert!((got - 0.8003).abs() < 5e-4);

    let n1 = noisy(&gray(128, 128, 0.5, Projection::None), 0.5, 11);
    let n2 = noisy(&gray(128, 128, 0.5, Projection::None), 0.5, 12);
    assert!(ssim(&n1, &n2).unwrap().abs() < 0.2);
    assert!(ssim(&gray(10, 10, 0.5, Projection::None), &gray(10, 10, 0.5, Projection::None)).is_err());
}

/// Direct O(n²) SSIM on one window position per pixel, for cross-checking.
fn ssim_oracle(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut win = vec![0.0; 121];
    for y in 0..11 {
        for x in 0..11 {
            win[y * 11 + x] = g[x] * g[y];
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut n = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    let k = win[y * 11 + x];
                    let (p, q) = (a[(y0 + y) * w + x0 + x], b[(y0 + y) * w + x0 + x]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn ssim_matches_direct_window_oracle() {
    let a = synthetic_erp(16, 3).unwrap();
    let b = noisy(&a, 0.08, 5);
    let oracle = ssim_oracle(a.luma().data(), b.luma().data(), a.width(), a.height());
    assert!((ssim(&a, &b).unwrap() - oracle).abs() < 1e-10);
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let c: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    c / (vx * vy).sqrt()
}

fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64);
    let mut pairs = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let dy = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            s += dx * dy;
            pairs += 1.0;
            if dx == 0.0 {
                tx += 1.0;
            }
            if dy == 0.0 {
                ty += 1.0;
            }
        }
    }
    s / ((pairs - tx) * (pairs - ty)).sqrt()
}

#[test]
fn rank_statistics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..5 {
        // later trials are coarsely quantised to force ties
        let q = [0.0, 0.0, 1.0, 5.0, 20.0][trial];
        let round = |v: f64| if q > 0.0 { (v / q).round() * q } else { v };
        let x: Vec<f64> = (0..200).map(|_| round(rng.random_range(0.0..100.0))).collect();
        let y: Vec<f64> = x.iter().map(|v| round(v + rng.random_range(-40.0..40.0))).collect();
        let sr = brute_pearson(&brute_ranks(&x), &brute_ranks(&y));
        assert!((spearman(&x, &y) - sr).abs() < 1e-9);
        assert!((kendall_tau_b(&x, &y) - brute_tau_b(&x, &y)).abs() < 1e-9);
    }
}

#[test]
fn perfect_and_reversed_scorers() {
    let dmos: Vec<f64> = (0..20).map(|i| 10.0 + 4.0 * i as f64).collect();
    let r = correlation_report(&ScoreSeries::from_pairs("oracle", &dmos, &dmos).unwrap()).unwrap();
    assert!((r.plcc - 1.0).abs() < 1e-9 && (r.srocc - 1.0).abs() < 1e-12 && (r.krocc - 1.0).abs() < 1e-12);
    assert!(r.rmse < 1e-3 && r.mae < 1e-3, "{r:?}");

    let reversed: Vec<f64> = (0..20).map(|i| (20 - i) as f64).collect();
    let r = correlation_report(&ScoreSeries::from_pairs("reversed", &reversed, &dmos).unwrap()).unwrap();
    assert_eq!(r.srocc, -1.0);
    assert_eq!(r.krocc, -1.0);
    assert!(r.plcc > 0.999, "{r:?}");
    assert!(r.logistic.beta4 < 0.0);
}

#[test]
fn planted_logistic_is_recovered() {
    let truth = LogisticParams {
        beta1: 90.0,
        beta2: 10.0,
        beta3: 50.0,
        beta4: 8.0,
    };
    let x: Vec<f64> = (0..50).map(|i| 100.0 * i as f64 / 49.0).collect();
    let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
    let fit = fit_logistic(&ScoreSeries::from_pairs("planted", &x, &y).unwrap()).unwrap();
    assert!(fit.converged);
    let p = fit.params;
    for (got, want) in [(p.beta1, 90.0), (p.beta2, 10.0), (p.beta3, 50.0), (p.beta4, 8.0)] {
        assert!(((got - want) / want).abs() < 0.01, "{p:?}");
    }
}

#[test]
fn linear_data_is_fitted_closely() {
    let x: Vec<f64> = (0..=100).map(f64::from).collect();
    let r = correlation_report(&ScoreSeries::from_pairs("linear", &x, &x).unwrap()).unwrap();
    assert!(r.mae < 1.0, "{r:?}");
}

#[test]
fn fitting_preconditions() {
    let e = fit_logistic(&ScoreSeries::from_pairs("tiny", &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap()).unwrap_err();
    assert!(e.is_user_error());
    let e = correlation_report(&ScoreSeries::from_pairs("flat", &[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
        .unwrap_err();
    assert!(e.to_string().contains("flat"));
    assert!(ScoreSeries::from_pairs("nan", &[f64::NAN, 1.0, 2.0, 3.0], &[1.0; 4]).is_err());
}

#[test]
fn identical_psnr_pairs_are_excluded() {
    let entries = vec![
        ("a".to_string(), Psnr::Identical, 0.0),
        ("b".to_string(), Psnr::Db(30.0), 40.0),
        ("c".to_string(), Psnr::Db(35.0), 30.0),
    ];
    let s = ScoreSeries::from_psnr("PSNR", entries).unwrap();
    assert_eq!(s.ids, vec!["b", "c"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_statistics_ignore_monotone_transforms(
        pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 5..60),
        a in 0.1f64..5.0,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let tx: Vec<f64> = x.iter().map(|v| (a * v).exp().ln_1p() + v * v * v).collect();
        prop_assert!((spearman(&x, &y) - spearman(&tx, &y)).abs() < 1e-12);
        prop_assert!((kendall_tau_b(&x, &y) - kendall_tau_b(&tx, &y)).abs() < 1e-12);
    }

    #[test]
    fn plcc_after_fit_is_affine_invariant(seed: u64, n in 12usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..45.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (100.0 - 2.0 * v + rng.random_range(-8.0..8.0)).clamp(0.0, 100.0)).collect();
        let t: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let r1 = correlation_report(&ScoreSeries::from_pairs("x", &x, &y).unwrap()).unwrap();
        let r2 = correlation_report(&ScoreSeries::from_pairs("t", &t, &y).unwrap()).unwrap();
        prop_assert!((r1.plcc - r2.plcc).abs() < 1e-6, "{} vs {}", r1.plcc, r2.plcc);
    }

    #[test]
    fn report_ranges(seed: u64, n in 4usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let r = correlation_report(&ScoreSeries::from_pairs("rand", &x, &y).unwrap()).unwrap();
        for v in [r.plcc, r.srocc, r.krocc] {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        prop_assert!(r.rmse >= 0.0 && r.mae >= 0.0 && r.mae <= r.rmse + 1e-9);
    }
}
