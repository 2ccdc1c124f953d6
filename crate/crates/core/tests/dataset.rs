use std::collections::BTreeSet;

use dacr_core::augmentor::{generate_extra, inject_noise, train_vae, NoiseSpec, VaeConfig};
use dacr_core::dataset::{
    disjoint_ids, load_corpus_auto, make_ead_split, make_iad_split, save_corpus, save_corpus_csv, unwindow,
    window_starts, Corpus, Dtype, TimeSeriesInstance,
};
use dacr_core::harness::synthetic::{make_synthetic, SyntheticSpec};
use dacr_core::DacrError;
use proptest::prelude::*;

fn small_corpus() -> Corpus {
    make_synthetic(&SyntheticSpec { n_per_class: 10, t_len: 12, ..Default::default() }).unwrap()
}

#[test]
fn manifest_roundtrip_is_exact_in_double() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_corpus();
    let t = c.instances[0].t_len();
    c.instances[3] = c.instances[3].clone().with_point_labels((0..t).map(|k| k % 3 == 0).collect()).unwrap();
    let path = dir.path().join("c.manifest");
    save_corpus(&c, &path, Dtype::Float64).unwrap();
    let back = load_corpus_auto(&path).unwrap();
    assert_eq!(back.len(), c.len());
    for (a, b) in c.instances.iter().zip(&back.instances) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.values(), b.values());
        assert_eq!(a.class_label, b.class_label);
        assert_eq!(a.point_labels, b.point_labels);
    }
}

#[test]
fn single_precision_payload_rounds_once() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus();
    let path = dir.path().join("c.manifest");
    save_corpus(&c, &path, Dtype::Float32).unwrap();
    let back = load_corpus_auto(&path).unwrap();
    for (a, b) in c.instances.iter().zip(&back.instances) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }
}

#[test]
fn csv_roundtrip_keeps_values_and_classes() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus();
    let path = dir.path().join("c.csv");
    save_corpus_csv(&c, &path).unwrap();
    let back = load_corpus_auto(&path).unwrap();
    assert_eq!(back.ids(), c.ids());
    for a in &c.instances {
        let b = back.instances.iter().find(|b| b.id == a.id).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.class_label, b.class_label);
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.manifest");
    save_corpus(&small_corpus(), &path, Dtype::Float64).unwrap();
    let payload = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p != &path && std::fs::metadata(p).unwrap().len() > 1000)
        .unwrap();
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_corpus_auto(&path).is_err());
}

#[test]
fn ead_split_holds_out_anomalous_classes_and_normalizes_on_train() {
    let c = small_corpus();
    let normal: BTreeSet<usize> = [0, 2, 3].into_iter().collect();
    let split = make_ead_split(&c, &normal, 5).unwrap().normalized().unwrap();
    assert!(disjoint_ids(&split.train, &split.test));
    assert!(split.train.instances.iter().all(|i| normal.contains(&i.class_label.unwrap())));
    let anomalous: Vec<_> = split.test.instances.iter().filter(|i| i.class_label == Some(1)).collect();
    assert_eq!(anomalous.len(), 10);
    assert!(anomalous.iter().all(|i| i.is_anomalous()));
    assert_eq!(split.train.len() + split.test.len(), c.len());
    let stats = split.train.feature_stats.as_ref().unwrap();
    assert_eq!(stats.fitted_on, split.train.ids());
    // train features end up centered
    let f = split.train.features().unwrap();
    for j in 0..f {
        let n = split.train.instances.iter().map(|i| i.t_len()).sum::<usize>() as f64;
        let mean: f64 = split.train.instances.iter().flat_map(|i| i.column(j)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
    }
}

#[test]
fn ead_split_is_seeded() {
    let c = small_corpus();
    let normal: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
    let a = make_ead_split(&c, &normal, 1).unwrap();
    let b = make_ead_split(&c, &normal, 1).unwrap();
    assert_eq!(a.test.ids(), b.test.ids());
    assert!(matches!(make_ead_split(&c, &[0].into_iter().collect(), 1), Err(DacrError::Config(_))));
}

#[test]
fn iad_windows_cover_each_test_series() {
    let mk = |id: &str, t: usize, labels: Option<Vec<bool>>| {
        let inst = TimeSeriesInstance::new(id, t, 2, (0..2 * t).map(|k| k as f64).collect()).unwrap();
        match labels {
            Some(l) => inst.with_point_labels(l).unwrap(),
            None => inst,
        }
    };
    let c = Corpus::new(
        vec![mk("train", 40, None), mk("test", 33, Some((0..33).map(|k| k == 20).collect()))],
        "mem",
    )
    .unwrap();
    let split = make_iad_split(&c, 10, 10).unwrap();
    assert_eq!(split.train.len(), 4);
    let starts: Vec<usize> = split.test_windows.iter().map(|w| w.start).collect();
    assert_eq!(starts, vec![0, 10, 20, 23]);
    let stitched = unwindow(
        33,
        &split.test.instances.iter().zip(&starts).map(|(w, &s)| (s, w.column(1))).collect::<Vec<_>>(),
    );
    let full = split.test_series[0].column(1);
    assert!(stitched.iter().zip(&full).all(|(a, b)| *a == Some(*b)));
}

proptest! {
    #[test]
    fn window_starts_tile_the_series(len in 2usize..200, window in 2usize..50, step in 1usize..50) {
        // strides up to the window length leave no gaps
        let stride = step.min(window);
        let starts = window_starts(len, window, stride);
        if window > len {
            prop_assert!(starts.is_empty());
        } else {
            let mut covered = vec![false; len];
            for s in &starts {
                prop_assert!(s + window <= len);
                covered[*s..s + window].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
    }
}

#[test]
fn zero_variance_noise_keeps_the_latent() {
    let z = vec![0.3, -1.2, 2.0];
    let spec = NoiseSpec { alpha_mean: 1.0, alpha_var: 0.0, beta_mean: 0.0, beta_var: 0.0 };
    assert_eq!(inject_noise(&z, &spec, 4), z);
    assert_ne!(inject_noise(&z, &NoiseSpec::with_var(0.5), 4), z);
    assert!(NoiseSpec::with_var(-0.1).validate().is_err());
}

#[test]
fn extra_data_is_seeded_and_shaped() {
    let c = small_corpus();
    let cfg = VaeConfig { hidden: 4, latent_dim: 3, iterations: 5, lr: 1e-3, batch: 4, seed: 2 };
    let (vae, curve) = train_vae(&c, cfg).unwrap();
    assert_eq!(curve.len(), 5);
    let a = generate_extra(&vae, &c, &NoiseSpec::default(), 7, 3).unwrap();
    let b = generate_extra(&vae, &c, &NoiseSpec::default(), 7, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 7);
    assert!(a.instances.iter().all(|i| i.t_len() == 12 && i.features() == 3));
    assert!(disjoint_ids(&a, &c));
}
