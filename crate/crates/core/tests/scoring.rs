mod common;

use common::pairwise_auc;
use dacr_core::dataset::TimeSeriesInstance;
use dacr_core::reconstructor::ReconstructionGrid;
use dacr_core::scorer::{
    calibrate_errors, evaluate_auc, instance_score, score, squared_errors, timestamp_score, CalibrationTable,
    Reconstructs, EPSILON_FLOOR, WARM_UP_SCORE,
};
use dacr_core::{DacrError, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reconstructs every cell as a fixed offset from the truth.
struct Offset {
    features: usize,
    m: usize,
    delta: Vec<f64>,
}

impl Reconstructs for Offset {
    fn features(&self) -> usize {
        self.features
    }

    fn m(&self) -> usize {
        self.m
    }

    fn reconstruct_grid(&self, inst: &TimeSeriesInstance) -> Result<ReconstructionGrid> {
        let f_n = self.features;
        let values = (0..inst.t_len() * f_n)
            .map(|k| {
                let (t, f) = (k / f_n, k % f_n);
                if t < self.m {
                    f64::NAN
                } else {
                    inst.at(t, f) + self.delta[k]
                }
            })
            .collect();
        Ok(ReconstructionGrid { t_len: inst.t_len(), features: f_n, m: self.m, values })
    }
}

fn instance(t_len: usize, f_n: usize, salt: f64) -> TimeSeriesInstance {
    let v = (0..t_len * f_n).map(|k| (k as f64 * 0.7 + salt).sin()).collect();
    TimeSeriesInstance::new(format!("x{salt}"), t_len, f_n, v).unwrap()
}

/// All-zero series, so squared errors are exactly the squared offsets.
fn flat(t_len: usize, f_n: usize) -> TimeSeriesInstance {
    TimeSeriesInstance::new("flat", t_len, f_n, vec![0.0; t_len * f_n]).unwrap()
}

#[test]
fn scores_follow_relative_excess_over_calibration() {
    // F=2, T=5, m=2; training error per feature is 0.04 and 0.09
    let train = Offset { features: 2, m: 2, delta: [0.0, 0.0, 0.0, 0.0, 0.2, 0.1, 0.1, 0.3, 0.0, 0.0].to_vec() };
    let grid = squared_errors(&train, &flat(5, 2)).unwrap();
    let table = calibrate_errors([&grid], EPSILON_FLOOR).unwrap();
    assert!((table.err[0] - 0.04).abs() < 1e-15 && (table.err[1] - 0.09).abs() < 1e-15);

    // t=2 equal errors, t=3 doubled error on feature 0, t=4 error 4x on feature 1
    let test = Offset {
        features: 2,
        m: 2,
        delta: [0.0, 0.0, 0.0, 0.0, 0.2, 0.3, 0.08f64.sqrt(), 0.0, 0.0, 0.6].to_vec(),
    };
    let s = score(&test, &table, &flat(5, 2)).unwrap();
    assert_eq!(&s.scores[..2], &[WARM_UP_SCORE, WARM_UP_SCORE]);
    assert!(s.scores[2].abs() < 1e-9);
    assert!((s.scores[3] - 100.0).abs() < 1e-9);
    assert!((s.scores[4] - 300.0).abs() < 1e-9);
    assert_eq!(s.labels, vec![false, false, false, true, true]);
    assert_eq!(instance_score(&s), s.scores[4]);
}

#[test]
fn below_calibration_is_normal() {
    let table = CalibrationTable::from_raw(&[1.0, 2.0], EPSILON_FLOOR);
    let s = timestamp_score(&[0.5, 1.0], &table);
    assert!((s + 50.0).abs() < 1e-12);
}

#[test]
fn zero_training_error_is_floored() {
    let table = CalibrationTable::from_raw(&[0.0], EPSILON_FLOOR);
    assert_eq!(table.err[0], EPSILON_FLOOR);
    assert!(timestamp_score(&[0.0], &table).is_finite());
}

#[test]
fn feature_count_mismatch_is_a_shape_error() {
    let table = CalibrationTable::from_raw(&[1.0, 1.0, 1.0], EPSILON_FLOOR);
    let model = Offset { features: 2, m: 1, delta: vec![0.0; 8] };
    assert!(matches!(score(&model, &table, &instance(4, 2, 0.0)), Err(DacrError::Shape(_))));
}

proptest! {
    #[test]
    fn timestamp_score_is_max_relative_excess(errs in prop::collection::vec((0.0..5.0f64, 1e-3..5.0f64), 1..6)) {
        let (e, c): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let table = CalibrationTable::from_raw(&c, EPSILON_FLOOR);
        let want = e.iter().zip(&c).map(|(e, c)| 100.0 * (e - c) / c).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((timestamp_score(&e, &table) - want).abs() < 1e-9);
    }
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        // coarse scores force many ties
        let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..40) as f64) * 0.25).collect();
        let mut labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = evaluate_auc(&scores, &labels).unwrap();
        let want = pairwise_auc(&scores, &labels);
        assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn auc_rejects_single_class_and_nan() {
    assert!(matches!(evaluate_auc(&[0.1, 0.2], &[false, false]), Err(DacrError::Evaluation(_))));
    assert!(matches!(evaluate_auc(&[f64::NAN, 0.2], &[true, false]), Err(DacrError::Evaluation(_))));
    assert!(matches!(evaluate_auc(&[0.1], &[true, false]), Err(DacrError::Shape(_))));
}

#[test]
fn training_data_never_scores_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (t_len, f_n, m) = (9, 3, 2);
    let models: Vec<Offset> = (0..6)
        .map(|_| Offset { features: f_n, m, delta: (0..t_len * f_n).map(|_| rng.random_range(-1.0..1.0)).collect() })
        .collect();
    let xs: Vec<_> = (0..6).map(|k| instance(t_len, f_n, k as f64)).collect();
    let grids: Vec<_> = models.iter().zip(&xs).map(|(r, x)| squared_errors(r, x).unwrap()).collect();
    let table = calibrate_errors(&grids, EPSILON_FLOOR).unwrap();
    for (r, x) in models.iter().zip(&xs) {
        let s = score(r, &table, x).unwrap();
        assert!(s.valid().iter().all(|&v| v <= 0.0));
        assert!(s.labels.iter().all(|&l| !l));
    }
}

proptest! {
    #[test]
    fn raising_one_error_never_lowers_the_score(
        errs in prop::collection::vec((0.0..5.0f64, 1e-3..5.0f64), 1..6),
        pick in any::<prop::sample::Index>(),
        bump in 0.0..3.0f64,
    ) {
        let (mut e, c): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let table = CalibrationTable::from_raw(&c, EPSILON_FLOOR);
        let before = timestamp_score(&e, &table);
        e[pick.index(c.len())] += bump;
        prop_assert!(timestamp_score(&e, &table) >= before);
    }
}
