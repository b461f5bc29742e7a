use std::collections::HashSet;

use ncps_core::diffcore::LabelMap;
use ncps_core::ensemble::ClassMap;
use ncps_core::metrics::ConfusionMatrix;
use ncps_core::synthdata::{
    generate_dataset, split_supervision, stack_images, BatchStream, DatasetConfig, ShapeKind, PALETTE, PIXEL_MEAN,
};

fn cfg(num_images: usize, noise_std: f64) -> DatasetConfig {
    DatasetConfig { num_images, noise_std, ..DatasetConfig::default() }
}

#[test]
fn default_sizes() {
    let d = generate_dataset(&DatasetConfig::default()).unwrap();
    assert_eq!((d.train.len(), d.eval.len()), (200, 40));
    let ids: HashSet<usize> = d.train.iter().chain(&d.eval).map(|i| i.id).collect();
    assert_eq!(ids.len(), 240);
    for img in d.train.iter().chain(&d.eval) {
        assert_eq!(img.pixels.shape(), &[3, 32, 32]);
        assert_eq!(img.labels.shape(), [1, 32, 32]);
        assert!(img.pixels.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((1..=3).contains(&img.shapes.len()));
        let classes: HashSet<usize> = img.shapes.iter().map(|s| s.class).collect();
        assert_eq!(classes.len(), img.shapes.len());
    }
}

#[test]
fn labels_follow_analytic_shapes() {
    let d = generate_dataset(&cfg(40, 0.08)).unwrap();
    for img in d.train.iter().chain(&d.eval) {
        let [_, w, h] = img.labels.shape();
        for x in 0..w {
            for y in 0..h {
                let want = img.shapes.iter().rev().find(|s| s.kind.covers(x, y)).map_or(0, |s| s.class);
                assert_eq!(img.labels.classes()[x * h + y], want, "image {} pixel ({x},{y})", img.id);
            }
        }
        for s in &img.shapes {
            let kind_matches = matches!(
                (s.class, s.kind),
                (1, ShapeKind::Rect { .. }) | (2, ShapeKind::Disc { .. }) | (3, ShapeKind::Triangle { .. })
            );
            assert!(kind_matches, "class {} drawn as {:?}", s.class, s.kind);
        }
    }
}

#[test]
fn nearest_colour_classifier_is_exact_without_noise() {
    let d = generate_dataset(&cfg(60, 0.0)).unwrap();
    let mut cm = ConfusionMatrix::new(4);
    for img in d.train.iter().chain(&d.eval) {
        let [_, w, h] = img.labels.shape();
        let plane = w * h;
        let v = img.pixels.values();
        let pred: Vec<usize> = (0..plane)
            .map(|px| {
                let dist = |k: usize| (0..3).map(|ch| (v[ch * plane + px] - PALETTE[k][ch]).powi(2)).sum::<f64>();
                (0..4).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap()
            })
            .collect();
        cm.accumulate(&ClassMap::new([1, w, h], 4, pred).unwrap(), &img.labels, None).unwrap();
    }
    assert_eq!(cm.miou().unwrap(), 1.0);
}

#[test]
fn empty_scenes_are_background() {
    let c = DatasetConfig { num_images: 5, noise_std: 0.0, min_shapes: 0, max_shapes: 0, ..DatasetConfig::default() };
    let d = generate_dataset(&c).unwrap();
    for img in &d.train {
        assert!(img.labels.classes().iter().all(|&k| k == 0));
        assert!(img.shapes.is_empty());
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let a = generate_dataset(&cfg(20, 0.08)).unwrap();
    let b = generate_dataset(&cfg(20, 0.08)).unwrap();
    let c = generate_dataset(&DatasetConfig { seed: 1, ..cfg(20, 0.08) }).unwrap();
    for (x, y) in a.train.iter().zip(&b.train) {
        assert_eq!(x.pixels.values(), y.pixels.values());
        assert_eq!(x.labels, y.labels);
    }
    assert!(a.train.iter().zip(&c.train).any(|(x, y)| x.pixels.values() != y.pixels.values()));
}

#[test]
fn invalid_configs_rejected() {
    assert!(generate_dataset(&DatasetConfig { num_classes: 5, ..cfg(4, 0.0) }).is_err());
    assert!(generate_dataset(&DatasetConfig { num_classes: 1, ..cfg(4, 0.0) }).is_err());
    assert!(generate_dataset(&DatasetConfig { width: 8, ..cfg(4, 0.0) }).is_err());
    assert!(generate_dataset(&DatasetConfig { noise_std: -0.1, ..cfg(4, 0.0) }).is_err());
}

#[test]
fn split_sizes_and_membership() {
    let d = generate_dataset(&cfg(160, 0.08)).unwrap();
    let s = split_supervision(&d.train, 1.0 / 16.0, 3).unwrap();
    assert_eq!((s.labelled.len(), s.unlabelled.len()), (10, 150));
    let again = split_supervision(&d.train, 1.0 / 16.0, 3).unwrap();
    let ids = |v: &[ncps_core::synthdata::SynthImage]| v.iter().map(|i| i.id).collect::<HashSet<_>>();
    assert_eq!(ids(&s.labelled), ids(&again.labelled));
    assert!(ids(&s.labelled).is_disjoint(&ids(&s.unlabelled)));

    let full = split_supervision(&d.train, 1.0, 3).unwrap();
    assert_eq!((full.labelled.len(), full.unlabelled.len()), (160, 0));
    assert_eq!(split_supervision(&d.train[..3], 0.01, 0).unwrap().labelled.len(), 1);
    assert!(split_supervision(&[], 0.5, 0).is_err());
    assert!(split_supervision(&d.train, 0.0, 0).is_err());
}

#[test]
fn unlabelled_epoch_visits_every_image_before_repeats() {
    let d = generate_dataset(&cfg(50, 0.08)).unwrap();
    let s = split_supervision(&d.train, 0.2, 1).unwrap();
    let n_u = s.unlabelled.len();
    let mut stream = BatchStream::new(&s, 2, 3, 2, 9).unwrap();
    let mut seen = Vec::new();
    for _ in 0..20 {
        let step = stream.next_step().unwrap();
        assert_eq!(step.unlabelled.len(), 2);
        let a: HashSet<usize> = step.unlabelled[0].ids.iter().copied().collect();
        let b: HashSet<usize> = step.unlabelled[1].ids.iter().copied().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 6);
        seen.extend(step.unlabelled.iter().flat_map(|u| u.ids.clone()));
    }
    let first_epoch: HashSet<usize> = seen[..n_u].iter().copied().collect();
    assert_eq!(first_epoch.len(), n_u);
}

#[test]
fn labelled_stream_cycles_and_ignores_unlabelled_draws() {
    let d = generate_dataset(&cfg(40, 0.08)).unwrap();
    let s = split_supervision(&d.train, 0.125, 2).unwrap();
    assert_eq!(s.labelled.len(), 5);
    let mut with_u = BatchStream::new(&s, 2, 2, 1, 4).unwrap();
    let mut without_u = BatchStream::new(&s, 2, 2, 0, 4).unwrap();
    for _ in 0..12 {
        let a = with_u.next_step().unwrap();
        let b = without_u.next_step().unwrap();
        assert_eq!(a.labelled.ids, b.labelled.ids);
        assert_eq!(a.labelled.x.values(), b.labelled.x.values());
        assert_eq!(a.unlabelled.len(), 1);
        assert!(b.unlabelled.is_empty());
        assert_eq!(a.labelled.ids.iter().collect::<HashSet<_>>().len(), 2);
    }
}

#[test]
fn batch_stream_rejections() {
    let d = generate_dataset(&cfg(20, 0.08)).unwrap();
    let s = split_supervision(&d.train, 0.25, 0).unwrap();
    assert!(BatchStream::new(&s, 6, 2, 1, 0).is_err());
    assert!(BatchStream::new(&s, 2, 8, 2, 0).is_err());
    assert!(BatchStream::new(&s, 2, 0, 1, 0).is_err());
    assert!(BatchStream::new(&s, 2, 8, 0, 0).is_ok());
}

#[test]
fn stacked_batches_hold_centered_inputs() {
    let d = generate_dataset(&cfg(4, 0.08)).unwrap();
    let (x, gt) = stack_images(&d.train[..2]).unwrap();
    assert_eq!(x.shape(), &[2, 3, 32, 32]);
    let n = 3 * 32 * 32;
    for (i, img) in d.train[..2].iter().enumerate() {
        for (a, p) in x.values()[i * n..(i + 1) * n].iter().zip(img.pixels.values()) {
            assert_eq!(*a, p - PIXEL_MEAN);
        }
    }
    let want = LabelMap::concat(&[&d.train[0].labels, &d.train[1].labels]).unwrap();
    assert_eq!(gt, want);
}
