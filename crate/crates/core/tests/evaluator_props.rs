//! Independent brute-force re-derivation of the generalized evaluation
//! sweep, compared against the evaluator, plus curve-shape properties.

use cape_core::evaluator::{evaluate, evaluate_with_threads, EvalInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Everything recomputed from scratch: critical biases by direct
/// enumeration, restricted argmax at the infinities, trapezoid last.
struct BruteForce {
    points: Vec<(f64, f64, f64)>, // (bias, seen_acc, unseen_acc)
    auc: f64,
    best_hm: f64,
    best_seen: f64,
    best_unseen: f64,
}

fn brute_force(scores: &[f64], n: usize, c: usize, labels: &[usize], unseen: &[bool]) -> BruteForce {
    let mut criticals = Vec::new();
    for i in 0..n {
        let row = &scores[i * c..(i + 1) * c];
        let max_seen = row
            .iter()
            .zip(unseen)
            .filter(|&(_, &u)| !u)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        for j in 0..c {
            if unseen[j] {
                criticals.push(max_seen - row[j]);
            }
        }
    }
    criticals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    criticals.dedup();
    let mut biases = vec![f64::NEG_INFINITY];
    biases.extend(criticals);
    biases.push(f64::INFINITY);

    let acc_at = |bias: f64| -> (f64, f64) {
        let (mut seen_hit, mut seen_n, mut unseen_hit, mut unseen_n) = (0, 0, 0, 0);
        for i in 0..n {
            let row = &scores[i * c..(i + 1) * c];
            let mut best: Option<(usize, f64)> = None;
            for j in 0..c {
                // The infinities restrict the candidate set outright.
                if bias == f64::NEG_INFINITY && unseen[j] {
                    continue;
                }
                if bias == f64::INFINITY && !unseen[j] {
                    continue;
                }
                let eff = if unseen[j] && bias.is_finite() {
                    row[j] + bias
                } else {
                    row[j]
                };
                if best.map_or(true, |(_, b)| eff > b) {
                    best = Some((j, eff));
                }
            }
            let correct = best.map_or(false, |(j, _)| j == labels[i]);
            if unseen[labels[i]] {
                unseen_n += 1;
                unseen_hit += correct as usize;
            } else {
                seen_n += 1;
                seen_hit += correct as usize;
            }
        }
        (
            seen_hit as f64 / seen_n as f64,
            unseen_hit as f64 / unseen_n as f64,
        )
    };

    let points: Vec<(f64, f64, f64)> = biases
        .iter()
        .map(|&b| {
            let (s, u) = acc_at(b);
            (b, s, u)
        })
        .collect();
    let mut auc = 0.0;
    for w in points.windows(2) {
        let (_, s0, u0) = w[0];
        let (_, s1, u1) = w[1];
        auc += (s0 - s1) * (u0 + u1) / 2.0;
    }
    let hm = |s: f64, u: f64| if s + u > 0.0 { 2.0 * s * u / (s + u) } else { 0.0 };
    BruteForce {
        auc,
        best_hm: points.iter().map(|&(_, s, u)| hm(s, u)).fold(0.0, f64::max),
        best_seen: points.iter().map(|&(_, s, _)| s).fold(0.0, f64::max),
        best_unseen: points.iter().map(|&(_, _, u)| u).fold(0.0, f64::max),
        points,
    }
}

/// Random instance with at least one seen and one unseen column, and
/// labels hitting both groups.
fn random_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_c: usize,
) -> (Vec<f64>, usize, usize, Vec<usize>, Vec<bool>) {
    loop {
        let n = rng.gen_range(2..=max_n);
        let c = rng.gen_range(2..=max_c);
        let unseen: Vec<bool> = (0..c).map(|_| rng.gen_bool(0.5)).collect();
        if unseen.iter().all(|&u| u) || !unseen.iter().any(|&u| u) {
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let has_seen = labels.iter().any(|&l| !unseen[l]);
        let has_unseen = labels.iter().any(|&l| unseen[l]);
        if !has_seen || !has_unseen {
            continue;
        }
        let scores: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        return (scores, n, c, labels, unseen);
    }
}

#[test]
fn evaluator_equals_brute_force_on_fifty_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for round in 0..50 {
        let (scores, n, c, labels, unseen) = random_instance(&mut rng, 20, 10);
        let inst = EvalInstance::new(&scores, n, c, &labels, &unseen).unwrap();
        let curve = evaluate(&inst, None).unwrap();
        let oracle = brute_force(&scores, n, c, &labels, &unseen);

        assert!((curve.auc - oracle.auc).abs() <= 1e-12, "round {round}: auc");
        assert!((curve.best_hm - oracle.best_hm).abs() <= 1e-12, "round {round}: hm");
        assert!((curve.best_seen - oracle.best_seen).abs() <= 1e-12, "round {round}: S");
        assert!(
            (curve.best_unseen - oracle.best_unseen).abs() <= 1e-12,
            "round {round}: U"
        );
        assert_eq!(curve.points.len(), oracle.points.len(), "round {round}: sweep size");
        for (p, &(b, s, u)) in curve.points.iter().zip(&oracle.points) {
            assert_eq!(p.bias.to_bits(), b.to_bits(), "round {round}: bias");
            assert!((p.seen_acc - s).abs() <= 1e-12);
            assert!((p.unseen_acc - u).abs() <= 1e-12);
        }
    }
}

#[test]
fn perfectly_separable_scores_hit_all_ones_exactly() {
    // One-hot score rows: every sample's true column strictly dominates,
    // inside both the seen and unseen restricted sets.
    let c = 6;
    let unseen = [false, false, false, true, true, true];
    let labels = [0usize, 1, 2, 3, 4, 5];
    let mut scores = vec![0.0; labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        scores[i * c + l] = 1.0;
    }
    let inst = EvalInstance::new(&scores, labels.len(), c, &labels, &unseen).unwrap();
    let curve = evaluate(&inst, None).unwrap();
    assert_eq!(curve.auc, 1.0);
    assert_eq!(curve.best_hm, 1.0);
    assert_eq!(curve.best_seen, 1.0);
    assert_eq!(curve.best_unseen, 1.0);
}

#[test]
fn sweep_is_monotone_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let (scores, n, c, labels, unseen) = random_instance(&mut rng, 16, 8);
        let inst = EvalInstance::new(&scores, n, c, &labels, &unseen).unwrap();
        let curve = evaluate(&inst, None).unwrap();
        assert!(curve.auc >= 0.0 && curve.auc <= 1.0);
        for w in curve.points.windows(2) {
            assert!(w[1].unseen_acc >= w[0].unseen_acc - 1e-15, "unseen not monotone");
            assert!(w[1].seen_acc <= w[0].seen_acc + 1e-15, "seen not monotone");
        }
        for p in &curve.points {
            // True pointwise harmonic-mean bounds (for nonzero S, U):
            // min ≤ HM ≤ max, and HM ≤ 2·min.
            let (s, u) = (p.seen_acc, p.unseen_acc);
            if s > 0.0 && u > 0.0 {
                assert!(p.hm >= s.min(u) - 1e-12);
                assert!(p.hm <= s.max(u) + 1e-12);
            }
            assert!(p.hm <= 2.0 * s.min(u) + 1e-12);
        }
        // Endpoint structure: unseen-only at +inf, seen-only at -inf.
        assert_eq!(curve.points.first().unwrap().unseen_acc, 0.0);
        assert_eq!(curve.points.last().unwrap().seen_acc, 0.0);
        assert_eq!(curve.best_seen, curve.points.first().unwrap().seen_acc);
        assert_eq!(curve.best_unseen, curve.points.last().unwrap().unseen_acc);
    }
}

#[test]
fn shifting_every_column_leaves_the_curve_unchanged() {
    // Dyadic scores and shift keep all additions exact, so the curves
    // must agree bitwise.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let n = rng.gen_range(3..12);
        let c = 6;
        let unseen = [false, false, true, false, true, true];
        let labels: Vec<usize> = (0..n)
            .map(|i| if i % 2 == 0 { [0, 1, 3][i % 3] } else { [2, 4, 5][i % 3] })
            .collect();
        let scores: Vec<f64> = (0..n * c)
            .map(|_| rng.gen_range(-128i32..128) as f64 / 64.0)
            .collect();
        let shifted: Vec<f64> = scores.iter().map(|v| v + 0.5).collect();

        let a = evaluate(&EvalInstance::new(&scores, n, c, &labels, &unseen).unwrap(), None)
            .unwrap();
        let b = evaluate(&EvalInstance::new(&shifted, n, c, &labels, &unseen).unwrap(), None)
            .unwrap();
        assert_eq!(a.auc.to_bits(), b.auc.to_bits());
        assert_eq!(a.points.len(), b.points.len());
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.bias.to_bits(), pb.bias.to_bits());
            assert_eq!(pa.seen_acc.to_bits(), pb.seen_acc.to_bits());
            assert_eq!(pa.unseen_acc.to_bits(), pb.unseen_acc.to_bits());
        }
    }
}

#[test]
fn thread_counts_do_not_change_the_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let n = 100;
    let c = 30;
    let unseen: Vec<bool> = (0..c).map(|j| j >= 18).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let scores: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let inst = EvalInstance::new(&scores, n, c, &labels, &unseen).unwrap();
    let single = evaluate_with_threads(&inst, None, 1).unwrap();
    for threads in [2, 4, 7] {
        let multi = evaluate_with_threads(&inst, None, threads).unwrap();
        assert_eq!(single.auc.to_bits(), multi.auc.to_bits());
        assert_eq!(single.points.len(), multi.points.len());
        for (a, b) in single.points.iter().zip(&multi.points) {
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert_eq!(a.seen_acc.to_bits(), b.seen_acc.to_bits());
            assert_eq!(a.unseen_acc.to_bits(), b.unseen_acc.to_bits());
            assert_eq!(a.hm.to_bits(), b.hm.to_bits());
        }
    }
}

#[test]
fn subsampled_sweep_tracks_the_exact_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 200;
    let c = 50;
    let unseen: Vec<bool> = (0..c).map(|j| j >= 30).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let scores: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let inst = EvalInstance::new(&scores, n, c, &labels, &unseen).unwrap();
    let exact = evaluate(&inst, None).unwrap();
    let sub = evaluate(&inst, Some(100)).unwrap();
    assert!(sub.points.len() <= 100 + 2);
    assert!(
        (sub.auc - exact.auc).abs() < 5e-3,
        "subsampled {} vs exact {}",
        sub.auc,
        exact.auc
    );
    // Endpoints survive subsampling.
    assert_eq!(sub.points.first().unwrap().bias, f64::NEG_INFINITY);
    assert_eq!(sub.points.last().unwrap().bias, f64::INFINITY);
}
