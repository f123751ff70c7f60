use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::rng::{self, Purpose};

fn brute_force(pred: &[usize], truth: &[usize], classes: &[usize]) -> f64 {
    let mut total = 0.0;
    for &c in classes {
        let mut n = 0;
        let mut hit = 0;
        for i in 0..truth.len() {
            if truth[i] == c {
                n += 1;
                if pred[i] == c {
                    hit += 1;
                }
            }
        }
        total += hit as f64 / n as f64;
    }
    total / classes.len() as f64
}

#[test]
fn per_class_mean_is_over_classes() {
    let all = per_class_top1(&[0, 1, 1], &[0, 1, 1], &[0, 1]).unwrap();
    assert_eq!(all.mean, 1.0);
    let r = per_class_top1(&[0, 1, 1], &[0, 0, 1], &[0, 1]).unwrap();
    assert_eq!(r.per_class[&0], 0.5);
    assert_eq!(r.mean, 0.75);
    assert!(per_class_top1(&[0], &[0], &[0, 3]).is_err());
    assert!(per_class_top1(&[0], &[0], &[]).is_err());
    assert!(per_class_top1(&[0, 1], &[0], &[0]).is_err());
}

#[test]
fn per_class_matches_counting_oracle() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, Purpose::Test, 1, 0);
        let truth: Vec<usize> = (0..200).map(|i| if i < 5 { i } else { r.random_range(0..5) }).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| if r.random::<f64>() < 0.6 { t } else { r.random_range(0..5) }).collect();
        let classes = [0, 1, 2, 3, 4];
        assert_eq!(per_class_top1(&pred, &truth, &classes).unwrap().mean, brute_force(&pred, &truth, &classes));
    }
}

#[test]
fn harmonic_anchors() {
    assert!((gzsl_harmonic(60.1, 69.2) - 64.3).abs() <= 0.05);
    assert!((gzsl_harmonic(56.0, 74.6) - 64.0).abs() <= 0.05);
    assert_eq!(gzsl_harmonic(0.0, 73.0), 0.0);
    assert_eq!(gzsl_harmonic(0.0, 0.0), 0.0);
    assert_eq!(gzsl_harmonic(50.0, 50.0), 50.0);
}

proptest! {
    #[test]
    fn harmonic_bounds(u in 0.0f64..100.0, s in 0.0f64..100.0) {
        let h = gzsl_harmonic(u, s);
        prop_assert_eq!(h, gzsl_harmonic(s, u));
        prop_assert!(h <= (u + s) / 2.0 + 1e-12);
        prop_assert!(h <= u.max(s) + 1e-12);
        prop_assert!(h >= 0.0);
    }

    #[test]
    fn per_class_ignores_order(seed in 0u64..1000) {
        let mut r = rng::stream(seed, Purpose::Test, 2, 0);
        let truth: Vec<usize> = (0..40).map(|i| if i < 4 { i } else { r.random_range(0..4) }).collect();
        let pred: Vec<usize> = (0..40).map(|_| r.random_range(0..4)).collect();
        let mut order: Vec<usize> = (0..40).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let a = per_class_top1(&pred, &truth, &[0, 1, 2, 3]).unwrap();
        let b = per_class_top1(&p2, &t2, &[0, 1, 2, 3]).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn random_pool(seed: u64, n: usize, d: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let mut r = rng::stream(seed, Purpose::Test, 3, 0);
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    (rng::normal(&mut r, n, d, 1.0), labels)
}

#[test]
fn ranking_matches_sort_oracle() {
    for seed in 0..10 {
        let (pool, labels) = random_pool(seed, 200, 6, 5);
        let q: Vec<f64> = pool.row(0).iter().map(|v| v + 0.3).collect();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let mut pairs: Vec<(f64, usize)> = (0..200)
                .map(|i| {
                    let row = pool.row(i);
                    let d = match metric {
                        Metric::Euclidean => {
                            let mut s = 0.0;
                            for j in 0..6 {
                                s += (q[j] - row[j]).powi(2);
                            }
                            s.sqrt()
                        }
                        Metric::Cosine => crate::synthesis::quality_score(&q, row),
                    };
                    (if metric == Metric::Cosine { -d } else { d }, i)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let order = rank(&q, &pool, metric);
            for k in [5, 10, 50] {
                let mut mine: Vec<usize> = order[..k].to_vec();
                let mut oracle: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
                mine.sort_unstable();
                oracle.sort_unstable();
                assert_eq!(mine, oracle);
                let hits = pairs[..k].iter().filter(|p| labels[p.1] == 2).count();
                assert_eq!(precision_at_k(&q, &pool, &labels, 2, k, metric).unwrap(), hits as f64 / k as f64);
            }
        }
    }
}

#[test]
fn full_pool_gives_class_prior() {
    let (pool, labels) = random_pool(4, 60, 3, 3);
    let prior = labels.iter().filter(|&&l| l == 1).count() as f64 / 60.0;
    assert_eq!(precision_at_k(&[0.0; 3], &pool, &labels, 1, 60, Metric::Euclidean).unwrap(), prior);
    assert!(precision_at_k(&[0.0; 3], &pool, &labels, 1, 61, Metric::Euclidean).is_err());
    assert!(precision_at_k(&[0.0; 3], &pool, &labels, 1, 0, Metric::Euclidean).is_err());
}

#[test]
fn centroid_query_retrieves_its_class() {
    let centers = [[5.0, 0.0], [0.0, 5.0], [-5.0, -5.0]];
    let mut r = rng::stream(0, Purpose::Test, 4, 0);
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let noise = rng::normal(&mut r, 30, 2, 0.3);
    let pool = Tensor::from_fn(30, 2, |i, j| centers[labels[i]][j] + noise.get(i, j));
    for c in 0..3 {
        assert_eq!(precision_at_k(&centers[c], &pool, &labels, c, 5, Metric::Euclidean).unwrap(), 1.0);
    }
}

#[test]
fn relabeling_other_classes_keeps_precision() {
    let (pool, labels) = random_pool(5, 80, 4, 4);
    let q = pool.row(3).to_vec();
    let swapped: Vec<usize> = labels.iter().map(|&l| match l { 0 => 3, 3 => 0, l => l }).collect();
    for k in [5, 10] {
        assert_eq!(
            precision_at_k(&q, &pool, &labels, 1, k, Metric::Euclidean).unwrap(),
            precision_at_k(&q, &pool, &swapped, 1, k, Metric::Euclidean).unwrap()
        );
    }
}

#[test]
fn summary_round_trips() {
    let mut s = Summary::default();
    s.push("unseen_acc", percent(0.91234)).push("checkpoint", "abc");
    let acc = per_class_top1(&[0, 1], &[0, 1], &[0, 1]).unwrap();
    let text = render_per_class("zsl", &[("unseen", &acc)], &s);
    assert!(text.contains("unseen class 1 100.00\n"));
    assert_eq!(Summary::parse(&text), s);
    assert_eq!(Summary::parse(&text).get("unseen_acc"), Some("91.23"));
}
