//! Metric oracles shared by the metric tests and the acceptance run.

use std::collections::HashSet;

use super::rng;
use hfc_core::evaluation::{confusion, dsc, iou_bg, iou_fg, miou, precision, recall, roc_auc};
use rand::Rng;

pub const SIDE: usize = 16;

pub struct Oracle {
    dsc: f64,
    iou_fg: f64,
    iou_bg: f64,
    recall: f64,
    precision: f64,
}

pub fn set_of(mask: &[bool], want: bool) -> HashSet<(usize, usize)> {
    (0..SIDE * SIDE)
        .filter(|&i| mask[i] == want)
        .map(|i| (i / SIDE, i % SIDE))
        .collect()
}

/// Ratio with the empty-set convention: both sides empty scores 1.
pub fn overlap_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn oracle(pred: &[bool], truth: &[bool]) -> Oracle {
    let (p, t) = (set_of(pred, true), set_of(truth, true));
    let (pb, tb) = (set_of(pred, false), set_of(truth, false));
    let inter = p.intersection(&t).count();
    let union = p.union(&t).count();
    let inter_bg = pb.intersection(&tb).count();
    let union_bg = pb.union(&tb).count();
    // Recall with no positives is 1 only if nothing was predicted either.
    let recall = match t.len() {
        0 if p.is_empty() => 1.0,
        0 => 0.0,
        n => inter as f64 / n as f64,
    };
    let precision = match p.len() {
        0 if t.is_empty() => 1.0,
        0 => 0.0,
        n => inter as f64 / n as f64,
    };
    Oracle {
        dsc: overlap_ratio(2 * inter, p.len() + t.len()),
        iou_fg: overlap_ratio(inter, union),
        iou_bg: overlap_ratio(inter_bg, union_bg),
        recall,
        precision,
    }
}

pub fn random_mask(r: &mut impl Rng) -> Vec<bool> {
    // Vary the density so empty and full masks turn up.
    let density = match r.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => r.gen_range(0.0..1.0),
    };
    (0..SIDE * SIDE).map(|_| r.gen_bool(density)).collect()
}

pub fn metrics_match_brute_force_sets() {
    let mut r = rng(401);
    for case in 0..1000 {
        let pred = random_mask(&mut r);
        let truth = random_mask(&mut r);
        let probs: Vec<f64> = pred.iter().map(|&b| if b { 0.75 } else { 0.25 }).collect();
        let target: Vec<u8> = truth.iter().map(|&b| b as u8).collect();
        let c = confusion(&probs, &target, 0.5).unwrap();
        let o = oracle(&pred, &truth);
        assert_eq!(dsc(&c), o.dsc, "case {case}");
        assert_eq!(iou_fg(&c), o.iou_fg, "case {case}");
        assert_eq!(iou_bg(&c), o.iou_bg, "case {case}");
        assert_eq!(miou(&c), 0.5 * (o.iou_fg + o.iou_bg), "case {case}");
        assert_eq!(recall(&c), o.recall, "case {case}");
        assert_eq!(precision(&c), o.precision, "case {case}");
        let j = iou_fg(&c);
        assert!((dsc(&c) - 2.0 * j / (1.0 + j)).abs() < 1e-12, "case {case}");
        let swapped = confusion(
            &truth.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>(),
            &pred.iter().map(|&b| b as u8).collect::<Vec<_>>(),
            0.5,
        )
        .unwrap();
        assert_eq!(dsc(&swapped), dsc(&c));
        assert_eq!(miou(&swapped), miou(&c));
    }
}

pub fn random_scores_have_chance_auc() {
    let mut r = rng(402);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| r.gen()).collect();
    let targets: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
    let (points, auc) = roc_auc(&scores, &targets).unwrap();
    assert!((auc - 0.5).abs() <= 0.02, "auc {auc}");
    for w in points.windows(2) {
        assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        assert!(w[1].threshold < w[0].threshold);
    }
    let last = points.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    let reversed: Vec<f64> = scores.iter().map(|s| -s).collect();
    let (_, rev) = roc_auc(&reversed, &targets).unwrap();
    assert!((auc + rev - 1.0).abs() < 1e-9);
}

pub fn auc_matches_pair_counting() {
    let mut r = rng(403);
    for _ in 0..50 {
        let n = r.gen_range(2..60);
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64).collect();
        let mut targets: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        targets[0] = true;
        targets[1] = false;
        let (_, auc) = roc_auc(&scores, &targets).unwrap();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if targets[i] && !targets[j] {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        assert!((auc - wins / pairs).abs() < 1e-12);
    }
}
