//! Randomized invariants of the objective, compressors, aggregators and
//! workers.

mod common;

use std::sync::Arc;

use proptest::prelude::*;
use robustfl::aggregators::{geometric_median, geometric_median_with, GeomedOptions};
use robustfl::compressors::{ef_step, quantization_mse};
use robustfl::objective::{generate_synthetic, solve_reference, SyntheticSpec};
use robustfl::rng::{stream, Purpose};
use robustfl::{linalg, Compressor, Objective};

fn objective(seed: u64, dim: usize) -> Objective {
    let spec = SyntheticSpec { seed, regular_workers: 3, samples_per_worker: 6, dim, noise: 0.7 };
    Objective::new(Arc::new(generate_synthetic(&spec).unwrap()), 0.01).unwrap()
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim)
}

fn points(max_w: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(point(dim), 1..=max_w)
}

fn rotate(v: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sample_gradient_matches_finite_differences(seed in 0u64..1000, x in point(4), w in 0usize..3, j in 0usize..6) {
        let obj = objective(seed, 4);
        let g = obj.sample_grad(&x, w, j).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (obj.sample_loss(&a, w, j).unwrap() - obj.sample_loss(&b, w, j).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn loss_is_convex_along_segments(seed in 0u64..1000, x in point(3), y in point(3), lam in 0.0f64..1.0) {
        let obj = objective(seed, 3);
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let lhs = obj.loss(&z).unwrap();
        let rhs = lam * obj.loss(&x).unwrap() + (1.0 - lam) * obj.loss(&y).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn loss_is_strongly_convex_with_the_regularization_weight(seed in 0u64..1000, x in point(3), y in point(3)) {
        let obj = objective(seed, 3);
        let g = obj.full_grad(&x).unwrap();
        let d = linalg::sub(&y, &x);
        let bound = obj.loss(&x).unwrap() + linalg::dot(&g, &d) + 0.005 * linalg::norm_sq(&d);
        prop_assert!(obj.loss(&y).unwrap() >= bound - 1e-10);
    }

    #[test]
    fn top_k_and_l1_sign_meet_their_contraction(x in prop::collection::vec(-100f64..100.0, 1..40), kf in 0.0f64..1.0) {
        let p = x.len();
        let k = 1 + ((p - 1) as f64 * kf) as usize;
        let n2 = linalg::norm_sq(&x);
        for c in [Compressor::TopK { k }, Compressor::L1Sign] {
            let q = c.compress(&x, &mut stream(0, 0, Purpose::Compression)).unwrap().decode();
            let kappa = c.stats(&x).kappa.unwrap();
            prop_assert!(linalg::dist_sq(&q, &x) <= (1.0 - kappa) * n2);
        }
    }

    #[test]
    fn compression_replays_from_the_same_stream_position(x in point(12), seed in 0u64..100) {
        for c in [Compressor::RandK { k: 3 }, Compressor::RandQuant { levels: 4 }] {
            let mut a = stream(seed, 1, Purpose::Compression);
            let mut b = stream(seed, 1, Purpose::Compression);
            prop_assert_eq!(c.compress(&x, &mut a).unwrap(), c.compress(&x, &mut b).unwrap());
        }
    }

    #[test]
    fn translation_equivariance(pts in points(9, 3), shift in point(3)) {
        let eps = 1e-7;
        let moved: Vec<Vec<f64>> = pts.iter().map(|v| linalg::add(v, &shift)).collect();
        let a = geometric_median(&pts, eps).unwrap();
        let b = geometric_median(&moved, eps).unwrap();
        prop_assert!(b.certified && a.certified);
        // Both results lie within the eps-sublevel set; compare objectives,
        // which is what the tolerance is stated for.
        let back: Vec<f64> = linalg::sub(&b.point, &shift);
        let fa = robustfl::aggregators::geomed_objective(&pts, &a.point);
        let fb = robustfl::aggregators::geomed_objective(&pts, &back);
        prop_assert!((fa - fb).abs() <= 10.0 * eps);
    }

    #[test]
    fn rotation_equivariance(pts in points(9, 2), angle in 0.0f64..std::f64::consts::TAU) {
        let eps = 1e-7;
        let turned: Vec<Vec<f64>> = pts.iter().map(|v| rotate(v, angle)).collect();
        let a = geometric_median(&pts, eps).unwrap();
        let b = geometric_median(&turned, eps).unwrap();
        let back = rotate(&b.point, -angle);
        let fa = robustfl::aggregators::geomed_objective(&pts, &a.point);
        let fb = robustfl::aggregators::geomed_objective(&pts, &back);
        prop_assert!((fa - fb).abs() <= 10.0 * eps);
    }

    #[test]
    fn one_dimensional_median_matches_sorting(vals in prop::collection::vec(-50.0f64..50.0, 1..16)) {
        let eps = 1e-6;
        let pts: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
        let g = geometric_median(&pts, eps).unwrap();
        let mut s = vals.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let (lo, hi) = if n % 2 == 1 { (s[n / 2], s[n / 2]) } else { (s[n / 2 - 1], s[n / 2]) };
        prop_assert!(g.point[0] >= lo - eps && g.point[0] <= hi + eps, "{} not in [{lo}, {hi}]", g.point[0]);
    }

    #[test]
    fn weiszfeld_objective_never_increases(pts in points(12, 4)) {
        let mut opts = GeomedOptions::new(1e-9);
        opts.record_objective = true;
        let run = geometric_median_with(&pts, &opts).unwrap();
        for w in run.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
    }

    #[test]
    fn median_stays_with_the_majority(cluster in prop::collection::vec(point(2), 3), dir in point(2), far in 1e3f64..1e8) {
        prop_assume!(linalg::norm(&dir) > 1e-3);
        let mut pts: Vec<Vec<f64>> = cluster.iter().map(|c| c.iter().map(|v| v * 0.1).collect()).collect();
        let centre = linalg::mean(&pts);
        let radius = pts.iter().map(|p| linalg::dist(p, &centre)).fold(0.0, f64::max);
        for s in [1.0, 1.5] {
            pts.push(dir.iter().map(|d| d * far * s).collect());
        }
        let g = geometric_median(&pts, 1e-6).unwrap();
        // With 3 of 5 points in a ball of radius r, the median is within
        // (2 - 2a) / (1 - 2a) r of the ball's centre for a = 2/5.
        prop_assert!(linalg::dist(&g.point, &centre) <= 6.0 * radius + 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reference_meets_its_tolerance(seed in 0u64..1000) {
        let obj = objective(seed, 5);
        let r = solve_reference(&obj, 1e-9).unwrap();
        prop_assert!(linalg::norm(&obj.full_grad(&r.x).unwrap()) <= 1e-9);
    }

    #[test]
    fn quantizer_error_matches_its_exact_expectation(x in point(8), levels in 1u32..6) {
        prop_assume!(linalg::norm_inf(&x) > 1e-6);
        let c = Compressor::RandQuant { levels };
        let exact = quantization_mse(&x, levels);
        let mut rng = stream(levels as u64, 0, Purpose::Compression);
        let n = 20_000;
        let mut err = 0.0;
        for _ in 0..n {
            err += linalg::dist_sq(&c.compress(&x, &mut rng).unwrap().decode(), &x);
        }
        err /= n as f64;
        prop_assert!((err - exact).abs() <= 0.05 * exact + 1e-12, "{} vs {}", err, exact);
        prop_assert!(exact <= c.delta(8).unwrap() * linalg::norm_sq(&x));
    }

    #[test]
    fn error_feedback_residual_stays_bounded(seed in 0u64..1000, k in 1usize..5) {
        let p = 10;
        let big_g: f64 = 2.0;
        let c = Compressor::TopK { k };
        let kappa = k as f64 / p as f64;
        let bound = 4.0 * (1.0 - kappa) * big_g * big_g / (kappa * kappa);
        let mut rng = stream(seed, 0, Purpose::Diagnostics);
        let mut e = vec![0.0; p];
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let n = linalg::norm(&raw).max(1e-300);
            let radius = big_g * rand::Rng::random_range(&mut rng, 0.0..1.0);
            let g: Vec<f64> = raw.iter().map(|v| v / n * radius).collect();
            e = ef_step(&e, &g, &c, &mut rng).unwrap().1;
            prop_assert!(linalg::norm_sq(&e) <= bound);
        }
    }
}
