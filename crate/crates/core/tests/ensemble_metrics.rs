mod common;

use std::collections::HashSet;

use common::{random_probs, rng};
use ncps_core::diffcore::LabelMap;
use ncps_core::ensemble::{decode_single, ensemble_mc, ensemble_sv, ClassMap, EnsembleStack};
use ncps_core::metrics::{format_percent, ConfusionMatrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_stack(r: &mut impl Rng, n: usize, shape: [usize; 4]) -> EnsembleStack {
    let maps: Vec<_> = (0..n).map(|_| random_probs(r, shape)).collect();
    EnsembleStack::from_maps(&maps).unwrap()
}

/// Per pixel, scans (network, class) in order and keeps the first maximum.
fn mc_loop(stack: &EnsembleStack, shape: [usize; 4]) -> Vec<usize> {
    let [b, c, w, h] = shape;
    let plane = w * h;
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        for px in 0..plane {
            let (mut best, mut cls) = (f64::NEG_INFINITY, 0);
            for k in 0..c {
                for j in 0..stack.num_networks() {
                    let v = stack.slice(j)[(bi * c + k) * plane + px];
                    if v > best {
                        (best, cls) = (v, k);
                    }
                }
            }
            out.push(cls);
        }
    }
    out
}

fn sv_loop(stack: &EnsembleStack, shape: [usize; 4]) -> Vec<usize> {
    let [b, c, w, h] = shape;
    let plane = w * h;
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        for px in 0..plane {
            let sums: Vec<f64> = (0..c)
                .map(|k| (0..stack.num_networks()).map(|j| stack.slice(j)[(bi * c + k) * plane + px]).sum())
                .collect();
            let mut cls = 0;
            for k in 1..c {
                if sums[k] > sums[cls] {
                    cls = k;
                }
            }
            out.push(cls);
        }
    }
    out
}

fn brute_force_miou(pred: &[usize], gt: &[usize], c: usize) -> Option<f64> {
    let ious: Vec<f64> = (0..c)
        .filter_map(|k| {
            let p: HashSet<usize> = (0..pred.len()).filter(|&i| pred[i] == k).collect();
            let g: HashSet<usize> = (0..gt.len()).filter(|&i| gt[i] == k).collect();
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

#[test]
fn fusion_matches_loops_on_random_stacks() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = r.random_range(1..=4);
        let shape = [r.random_range(1..=2), r.random_range(2..=5), r.random_range(1..=6), r.random_range(1..=6)];
        let stack = random_stack(&mut r, n, shape);
        assert_eq!(ensemble_mc(&stack).classes(), mc_loop(&stack, shape).as_slice());
        assert_eq!(ensemble_sv(&stack).classes(), sv_loop(&stack, shape).as_slice());
    }
}

#[test]
fn mc_and_sv_diverge_on_documented_case() {
    let stack = EnsembleStack::from_raw(&[1, 2, 1, 1], vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
    assert_eq!(ensemble_mc(&stack).classes(), &[0]);
    assert_eq!(ensemble_sv(&stack).classes(), &[1]);
}

#[test]
fn mc_two_class_example() {
    let stack = EnsembleStack::from_raw(&[1, 2, 1, 1], vec![vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
    assert_eq!(ensemble_mc(&stack).classes(), &[1]);
}

#[test]
fn single_decode_range_checked() {
    let stack = random_stack(&mut rng(2), 2, [1, 3, 2, 2]);
    assert!(decode_single(&stack, 1).is_ok());
    assert!(decode_single(&stack, 2).is_err());
}

#[test]
fn miou_worked_example() {
    let pred = ClassMap::new([1, 2, 2], 2, vec![0, 0, 0, 0]).unwrap();
    let gt = LabelMap::new([1, 2, 2], vec![0, 0, 1, 1]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt, None).unwrap();
    assert_eq!(cm.miou().unwrap(), 0.25);
    assert_eq!(format_percent(cm.miou().unwrap()), "25.00");
}

#[test]
fn miou_matches_set_based_iou() {
    let mut r = rng(3);
    for _ in 0..100 {
        let c = r.random_range(2..=6);
        let (b, w, h) = (r.random_range(1..=3), r.random_range(1..=8), r.random_range(1..=8));
        let len = b * w * h;
        // skew towards a few classes so some have empty unions
        let used = r.random_range(1..=c);
        let pred: Vec<usize> = (0..len).map(|_| r.random_range(0..used)).collect();
        let gt: Vec<usize> = (0..len).map(|_| r.random_range(0..used)).collect();
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&ClassMap::new([b, w, h], c, pred.clone()).unwrap(), &LabelMap::new([b, w, h], gt.clone()).unwrap(), None)
            .unwrap();
        assert_eq!(cm.miou().ok(), brute_force_miou(&pred, &gt, c));
    }
}

#[test]
fn merged_matrices_equal_joint_accumulation() {
    let mut r = rng(4);
    let (pa, ga, pb, gb): (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) = (
        (0..16).map(|_| r.random_range(0..3)).collect(),
        (0..16).map(|_| r.random_range(0..3)).collect(),
        (0..16).map(|_| r.random_range(0..3)).collect(),
        (0..16).map(|_| r.random_range(0..3)).collect(),
    );
    let acc = |cm: &mut ConfusionMatrix, p: &[usize], g: &[usize]| {
        cm.accumulate(&ClassMap::new([1, 4, 4], 3, p.to_vec()).unwrap(), &LabelMap::new([1, 4, 4], g.to_vec()).unwrap(), None)
            .unwrap()
    };
    let (mut a, mut b, mut joint) = (ConfusionMatrix::new(3), ConfusionMatrix::new(3), ConfusionMatrix::new(3));
    acc(&mut a, &pa, &ga);
    acc(&mut b, &pb, &gb);
    acc(&mut joint, &pa, &ga);
    acc(&mut joint, &pb, &gb);
    a.merge(&b).unwrap();
    assert_eq!(a, joint);
    assert!(a.merge(&ConfusionMatrix::new(4)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_invariant_under_network_permutation(n in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = [2, 3, 4, 4];
        let stack = random_stack(&mut r, n, shape);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let permuted = EnsembleStack::from_raw(&shape, order.iter().map(|&j| stack.slice(j).to_vec()).collect()).unwrap();
        prop_assert_eq!(ensemble_mc(&permuted), ensemble_mc(&stack));
        prop_assert_eq!(ensemble_sv(&permuted), ensemble_sv(&stack));
    }

    #[test]
    fn sv_invariant_under_positive_scaling(n in 1usize..=4, k in 0.25f64..8.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = [1, 4, 3, 5];
        let stack = random_stack(&mut r, n, shape);
        let scaled: Vec<Vec<f64>> = (0..n).map(|j| stack.slice(j).iter().map(|v| v * k).collect()).collect();
        let scaled = EnsembleStack::from_raw(&shape, scaled).unwrap();
        prop_assert_eq!(ensemble_sv(&scaled), ensemble_sv(&stack));
    }

    #[test]
    fn single_network_modes_coincide(seed in any::<u64>()) {
        let mut r = rng(seed);
        let stack = random_stack(&mut r, 1, [2, 3, 4, 4]);
        let single = decode_single(&stack, 0).unwrap();
        prop_assert_eq!(&ensemble_mc(&stack), &single);
        prop_assert_eq!(&ensemble_sv(&stack), &single);
        prop_assert!(single.classes().iter().all(|&k| k < 3));
    }

    #[test]
    fn identical_slices_decode_like_single(n in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let one = random_probs(&mut r, [1, 3, 3, 3]);
        let stack = EnsembleStack::from_maps(&vec![one; n]).unwrap();
        let single = decode_single(&stack, 0).unwrap();
        prop_assert_eq!(&ensemble_mc(&stack), &single);
        prop_assert_eq!(&ensemble_sv(&stack), &single);
    }
}
