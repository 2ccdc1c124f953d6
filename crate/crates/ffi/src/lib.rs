//! C ABI over `dacr-core`.
//!
//! Every entry point returns a [`DacrStatus`]; on failure the message is kept
//! per thread and read back with [`dacr_last_error_message`]. Objects are
//! handed out as opaque pointers and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dacr_core::dataset::{load_corpus_auto, Corpus, TimeSeriesInstance};
use dacr_core::harness::config::ExperimentConfig;
use dacr_core::harness::pipeline::{run_pipeline, RunOptions};
use dacr_core::scorer::{evaluate_auc, score, CalibrationTable, Detector, Reconstructs};
use dacr_core::DacrError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DacrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Format = 3,
    DataIntegrity = 4,
    Shape = 5,
    Config = 6,
    TrainingDiverged = 7,
    State = 8,
    Range = 9,
    Evaluation = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// A loaded corpus.
pub struct DacrCorpus {
    corpus: Corpus,
}

/// Frozen extractors, reconstructor and calibration table.
pub struct DacrDetector {
    detector: Detector,
    table: CalibrationTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DacrStatus, String);

impl From<DacrError> for Failure {
    fn from(e: DacrError) -> Self {
        let status = match &e {
            DacrError::Format(_) => DacrStatus::Format,
            DacrError::DataIntegrity(_) => DacrStatus::DataIntegrity,
            DacrError::Shape(_) => DacrStatus::Shape,
            DacrError::Config(_) => DacrStatus::Config,
            DacrError::TrainingDiverged { .. } => DacrStatus::TrainingDiverged,
            DacrError::State(_) => DacrStatus::State,
            DacrError::Range(_) => DacrStatus::Range,
            DacrError::Evaluation(_) => DacrStatus::Evaluation,
            DacrError::Io { .. } => DacrStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DacrStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DacrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside dacr".into());
            DacrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DacrStatus::NullArgument, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DacrStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dacr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length including the NUL,
/// or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be NULL or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dacr_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Load a corpus (`.csv` columnar text or a binary manifest).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_load(path: *const c_char, out: *mut *mut DacrCorpus) -> DacrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let corpus = load_corpus_auto(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DacrCorpus { corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle from [`dacr_corpus_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_free(corpus: *mut DacrCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of instances, 0 for a NULL handle.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_len(corpus: *const DacrCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

unsafe fn instance<'a>(corpus: *const DacrCorpus, index: usize) -> Result<&'a TimeSeriesInstance, Failure> {
    let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
    c.corpus.instances.get(index).ok_or_else(|| {
        Failure(
            DacrStatus::Range,
            format!("instance {index} outside [0, {})", c.corpus.len()),
        )
    })
}

/// Length and feature count of instance `index`.
///
/// # Safety
/// `corpus` must be a live handle; `t_len` and `features` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_shape(
    corpus: *const DacrCorpus,
    index: usize,
    t_len: *mut usize,
    features: *mut usize,
) -> DacrStatus {
    guard(|| {
        let inst = instance(corpus, index)?;
        *out_arg(t_len, "t_len")? = inst.t_len();
        *out_arg(features, "features")? = inst.features();
        Ok(())
    })
}

/// Copy instance `index` row-major (`T×F`) into `buf`, which must hold at
/// least `T·F` values.
///
/// # Safety
/// `corpus` must be a live handle; `buf` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_values(
    corpus: *const DacrCorpus,
    index: usize,
    buf: *mut f64,
    cap: usize,
) -> DacrStatus {
    guard(|| {
        let inst = instance(corpus, index)?;
        let v = inst.values();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < v.len() {
            return Err(Failure(
                DacrStatus::BufferTooSmall,
                format!("need {} values, buffer holds {cap}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Class label of instance `index`, or -1 when it has none.
///
/// # Safety
/// `corpus` must be a live handle; `class_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_corpus_class(
    corpus: *const DacrCorpus,
    index: usize,
    class_label: *mut i64,
) -> DacrStatus {
    guard(|| {
        let inst = instance(corpus, index)?;
        *out_arg(class_label, "class_label")? = inst.class_label.map_or(-1, |c| c as i64);
        Ok(())
    })
}

/// Load a detector from a directory of `f<i>.ckpt` extractor checkpoints, a
/// reconstructor checkpoint and a calibration table.
///
/// # Safety
/// The paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_detector_load(
    encoders_dir: *const c_char,
    reconstructor: *const c_char,
    calibration: *const c_char,
    out: *mut *mut DacrDetector,
) -> DacrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let detector = Detector::load(
            &path_arg(encoders_dir, "encoders_dir")?,
            &path_arg(reconstructor, "reconstructor")?,
        )?;
        let table = CalibrationTable::load(&path_arg(calibration, "calibration")?)?;
        if table.features() != detector.features() {
            return Err(Failure(
                DacrStatus::Shape,
                format!(
                    "calibration has F={}, detector has F={}",
                    table.features(),
                    detector.features()
                ),
            ));
        }
        *out = Box::into_raw(Box::new(DacrDetector { detector, table }));
        Ok(())
    })
}

/// # Safety
/// `detector` must be NULL or a handle from [`dacr_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dacr_detector_free(detector: *mut DacrDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Feature count the detector expects, 0 for a NULL handle.
///
/// # Safety
/// `detector` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dacr_detector_features(detector: *const DacrDetector) -> usize {
    detector.as_ref().map_or(0, |d| d.detector.features())
}

/// History length m; timestamps before m get the warm-up score -100.
///
/// # Safety
/// `detector` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dacr_detector_history(detector: *const DacrDetector) -> usize {
    detector.as_ref().map_or(0, |d| d.detector.m())
}

/// Score a row-major `t_len × features` series. Writes `t_len` per-timestamp
/// scores (percent over the calibrated error) into `scores`.
///
/// # Safety
/// `detector` must be a live handle; `values` must point to
/// `t_len·features` doubles and `scores` to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dacr_detector_score(
    detector: *const DacrDetector,
    values: *const f64,
    t_len: usize,
    features: usize,
    scores: *mut f64,
    cap: usize,
) -> DacrStatus {
    guard(|| {
        let d = detector.as_ref().ok_or_else(|| null("detector"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        if cap < t_len {
            return Err(Failure(
                DacrStatus::BufferTooSmall,
                format!("need {t_len} scores, buffer holds {cap}"),
            ));
        }
        let n = t_len
            .checked_mul(features)
            .ok_or_else(|| Failure(DacrStatus::Shape, "t_len·features overflows".into()))?;
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let inst = TimeSeriesInstance::new("ffi", t_len, features, v)?;
        let series = score(&d.detector, &d.table, &inst)?;
        ptr::copy_nonoverlapping(series.scores.as_ptr(), scores, t_len);
        Ok(())
    })
}

/// ROC-AUC of `scores` against 0/1 `labels` (1 = anomalous).
///
/// # Safety
/// `scores` and `labels` must each point to `n` readable values; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> DacrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if scores.is_null() || labels.is_null() {
            return Err(null("scores or labels"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
        *out = evaluate_auc(s, &l)?;
        Ok(())
    })
}

/// Run the full pipeline for an experiment config file and report the AUC
/// mean and sample std over its seeds. `runs_dir` may be NULL to keep
/// everything in memory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `runs_dir` NULL or one;
/// `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dacr_run_experiment(
    config_path: *const c_char,
    runs_dir: *const c_char,
    mean: *mut f64,
    std: *mut f64,
) -> DacrStatus {
    guard(|| {
        let mean = out_arg(mean, "mean")?;
        let std = out_arg(std, "std")?;
        let config = ExperimentConfig::load(&path_arg(config_path, "config_path")?)?;
        let opts = if runs_dir.is_null() {
            RunOptions::default()
        } else {
            RunOptions::persisted(path_arg(runs_dir, "runs_dir")?)
        };
        let report = run_pipeline(&config, &opts)?
            .ok_or_else(|| Failure(DacrStatus::State, "run stopped before completion".into()))?;
        *mean = report.mean;
        *std = report.std;
        Ok(())
    })
}
