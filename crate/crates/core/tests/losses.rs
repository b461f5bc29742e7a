mod common;

use common::{random_probs, rel_err, rng, uniform_vec};
use ncps_core::diffcore::{cross_entropy_mean, softmax_channels, CeTargetRef, LabelMap, ProbMap, Tensor};
use ncps_core::losses::{cps_loss, supervised_loss, total_loss};
use ncps_core::pseudo::{pmax, PseudoLabelMap};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn pseudo_of(probs: &[ProbMap]) -> Vec<PseudoLabelMap> {
    probs.iter().map(pmax).collect()
}

fn ce(p: &ProbMap, y: &PseudoLabelMap) -> f64 {
    cross_entropy_mean(p, y.as_target(), None).unwrap().item().unwrap()
}

#[test]
fn supervised_examples() {
    let gt = LabelMap::new([1, 2, 2], vec![0, 1, 3, 2]).unwrap();
    let uniform = ProbMap::from_tensor(Tensor::full(&[1, 4, 2, 2], 0.25).unwrap()).unwrap();
    let three = vec![uniform.clone(); 3];
    let l = supervised_loss(&three, &gt, None).unwrap().item().unwrap();
    assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
    assert!((l - 4.158883).abs() < 1e-6);

    let single = supervised_loss(std::slice::from_ref(&uniform), &gt, None).unwrap().item().unwrap();
    let plain = cross_entropy_mean(&uniform, CeTargetRef::Labels(&gt), None).unwrap().item().unwrap();
    assert_eq!(single, plain);

    let mut v = vec![0.0; 16];
    for (px, &c) in gt.classes().iter().enumerate() {
        v[c * 4 + px] = 1.0;
    }
    let perfect = ProbMap::from_tensor(Tensor::new(&[1, 4, 2, 2], v).unwrap()).unwrap();
    assert_eq!(supervised_loss(&[perfect.clone(), perfect], &gt, None).unwrap().item().unwrap(), 0.0);
}

#[test]
fn cps_two_networks_is_original_cps() {
    let mut r = rng(1);
    let p = [random_probs(&mut r, [2, 3, 4, 4]), random_probs(&mut r, [2, 3, 4, 4])];
    let y = pseudo_of(&p);
    let out = cps_loss(&p, &y).unwrap();
    let want = ce(&p[0], &y[1]) + ce(&p[1], &y[0]);
    assert!(rel_err(out.loss.item().unwrap(), want) <= 1e-15);
    assert_eq!((out.pair_iterations, out.terms), (1, 2));
}

#[test]
fn cps_identical_half_confident_networks() {
    // per pixel max probability 0.5, so each term is ln 2
    let p = ProbMap::from_tensor(Tensor::new(&[1, 3, 1, 2], vec![0.5, 0.2, 0.3, 0.5, 0.2, 0.3]).unwrap()).unwrap();
    let probs = vec![p; 3];
    let l = cps_loss(&probs, &pseudo_of(&probs)).unwrap().loss.item().unwrap();
    assert!((l - 3.0 * 2f64.ln()).abs() < 1e-12);
    assert!((l - 2.079442).abs() < 1e-6);
}

#[test]
fn cps_of_agreeing_one_hot_networks_is_zero() {
    let p = ProbMap::from_tensor(Tensor::new(&[1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let probs = vec![p; 4];
    assert_eq!(cps_loss(&probs, &pseudo_of(&probs)).unwrap().loss.item().unwrap(), 0.0);
}

#[test]
fn cps_rejects_single_network() {
    let p = random_probs(&mut rng(2), [1, 2, 2, 2]);
    assert!(cps_loss(std::slice::from_ref(&p), &[pmax(&p)]).is_err());
}

#[test]
fn total_loss_examples() {
    let t = |v: f64| Tensor::scalar(v);
    let l = total_loss(&t(1.0), &t(0.2), &t(0.4), 1.5).unwrap().item().unwrap();
    assert!((l - 1.9).abs() < 1e-12);
    assert_eq!(total_loss(&t(0.7), &t(5.0), &t(3.0), 0.0).unwrap().item().unwrap(), 0.7);
    assert!(total_loss(&t(1.0), &t(0.2), &t(0.4), -0.5).is_err());
}

#[test]
fn cps_gradient_reaches_predictions_not_targets() {
    let mut r = rng(3);
    let logits: Vec<Tensor> = (0..3)
        .map(|_| Tensor::leaf(&[1, 3, 3, 3], uniform_vec(&mut r, 27, -2.0, 2.0)).unwrap())
        .collect();
    let probs: Vec<ProbMap> = logits.iter().map(|l| softmax_channels(l).unwrap()).collect();
    let pseudo = pseudo_of(&probs);
    cps_loss(&probs, &pseudo).unwrap().loss.backward().unwrap();
    for l in &logits {
        assert!(l.grad().unwrap().iter().any(|&g| g != 0.0));
    }
    for y in &pseudo {
        assert!(!y.tensor().requires_grad());
        assert!(y.tensor().grad_or_zeros().iter().all(|&g| g == 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cps_equals_ordered_pair_sum(n in 2usize..=5, c in 2usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let probs: Vec<ProbMap> = (0..n).map(|_| random_probs(&mut r, [2, c, 3, 3])).collect();
        let pseudo = pseudo_of(&probs);
        let out = cps_loss(&probs, &pseudo).unwrap();
        let mut want = 0.0;
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    want += ce(&probs[j], &pseudo[k]);
                }
            }
        }
        prop_assert!(rel_err(out.loss.item().unwrap(), want / (n - 1) as f64) <= 1e-12);
        prop_assert_eq!(out.pair_iterations, n * (n - 1) / 2);
        prop_assert_eq!(out.terms, n * (n - 1));
    }

    #[test]
    fn cps_permutation_invariant(n in 2usize..=5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let probs: Vec<ProbMap> = (0..n).map(|_| random_probs(&mut r, [1, 3, 4, 4])).collect();
        let base = cps_loss(&probs, &pseudo_of(&probs)).unwrap().loss.item().unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let permuted: Vec<ProbMap> = order.iter().map(|&i| probs[i].clone()).collect();
        let l = cps_loss(&permuted, &pseudo_of(&permuted)).unwrap().loss.item().unwrap();
        prop_assert!(rel_err(l, base) <= 1e-12);
    }

    #[test]
    fn losses_scale_linearly_with_identical_networks(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_probs(&mut r, [2, 4, 4, 4]);
        let gt = LabelMap::new([2, 4, 4], (0..32).map(|_| r.random_range(0..4)).collect()).unwrap();
        let per_net = |n: usize| {
            let probs = vec![p.clone(); n];
            let sup = supervised_loss(&probs, &gt, None).unwrap().item().unwrap();
            let cps = cps_loss(&probs, &pseudo_of(&probs)).unwrap().loss.item().unwrap();
            (sup / n as f64, cps / n as f64)
        };
        let (s2, c2) = per_net(2);
        for n in 3..=4 {
            let (s, c) = per_net(n);
            prop_assert!(rel_err(s, s2) <= 1e-9);
            prop_assert!(rel_err(c, c2) <= 1e-9);
        }
    }
}
