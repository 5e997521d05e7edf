//! C ABI over `qda_core`.
//!
//! Every fallible function returns a [`QdaStatus`]; on failure the message is
//! available from [`qda_last_error`] on the same thread. Strings handed out
//! through `char **` parameters are owned by the caller and must be released
//! with [`qda_string_free`]. Handles are released with their `_free`/`_close`
//! function and must not be shared between threads without external locking.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qda_core::corpus::{ContractionTable, Document, SetLabel};
use qda_core::lexicon::{apply_lemmatization, LemmaDictionary};
use qda_core::pipeline::{self, Pipeline, RunSummary, Stage};
use qda_core::review::{ActionKind, ReviewAction};
use qda_core::synth::{write_inputs, SynthOptions};
use qda_core::{stats, Error};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Ingest = 3,
    Conflict = 4,
    Config = 5,
    Validation = 6,
    Empty = 7,
    Undefined = 8,
    NotFound = 9,
    Corrupt = 10,
    Stale = 11,
    Dependency = 12,
    Storage = 13,
    Panic = 14,
}

impl From<&Error> for QdaStatus {
    fn from(e: &Error) -> Self {
        match e.code() {
            "ingest" => QdaStatus::Ingest,
            "conflict" => QdaStatus::Conflict,
            "config" => QdaStatus::Config,
            "validation" => QdaStatus::Validation,
            "empty" => QdaStatus::Empty,
            "undefined" => QdaStatus::Undefined,
            "not_found" => QdaStatus::NotFound,
            "corrupt" => QdaStatus::Corrupt,
            "stale" => QdaStatus::Stale,
            "dependency" => QdaStatus::Dependency,
            _ => QdaStatus::Storage,
        }
    }
}

/// Opened project with its pipeline configuration.
pub struct QdaProject {
    pipeline: Pipeline,
}

/// Lemma dictionary usable without a project.
pub struct QdaLemmatizer {
    dict: LemmaDictionary,
    contractions: ContractionTable,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> QdaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QdaStatus::Ok
        }
        Ok(Err(Failure::Null(arg))) => {
            set_error(&format!("`{arg}` is null"));
            QdaStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(arg))) => {
            set_error(&format!("`{arg}` is not valid UTF-8"));
            QdaStatus::InvalidUtf8
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            QdaStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QdaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(name))
}

unsafe fn out<T>(p: *mut T, name: &'static str) -> FfiResult<&'static mut T> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &'static str) -> FfiResult<&'a [f64]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

fn json_out<T: serde::Serialize>(value: &T, dst: &mut *mut c_char) -> FfiResult<()> {
    *dst = to_c(serde_json::to_string(value).map_err(Error::from)?);
    Ok(())
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates (if needed) and opens a project directory.
///
/// # Safety
/// `root` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qda_project_init(root: *const c_char, out_project: *mut *mut QdaProject) -> QdaStatus {
    guard(|| {
        let dst = out(out_project, "out_project")?;
        *dst = ptr::null_mut();
        let pipeline = Pipeline::init(Path::new(text(root, "root")?))?;
        *dst = Box::into_raw(Box::new(QdaProject { pipeline }));
        Ok(())
    })
}

/// Opens an existing project with its `qda.toml`.
///
/// # Safety
/// `root` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qda_project_open(root: *const c_char, out_project: *mut *mut QdaProject) -> QdaStatus {
    guard(|| {
        let dst = out(out_project, "out_project")?;
        *dst = ptr::null_mut();
        let pipeline = Pipeline::open(Path::new(text(root, "root")?), &[])?;
        *dst = Box::into_raw(Box::new(QdaProject { pipeline }));
        Ok(())
    })
}

/// # Safety
/// `project` must come from `qda_project_open`/`qda_project_init` or be null.
#[no_mangle]
pub unsafe extern "C" fn qda_project_close(project: *mut QdaProject) {
    if !project.is_null() {
        drop(Box::from_raw(project));
    }
}

/// Writes the seeded synthetic corpus into `root/input`.
///
/// # Safety
/// `root` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qda_synth_write(root: *const c_char, seed: u64, validated: bool) -> QdaStatus {
    guard(|| {
        write_inputs(Path::new(text(root, "root")?), SynthOptions { seed, validated })?;
        Ok(())
    })
}

/// Runs `stage` (a stage name or `all`) under the project lock and returns
/// the run summary as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn qda_project_run(
    project: *mut QdaProject,
    stage: *const c_char,
    force: bool,
    out_json: *mut *mut c_char,
) -> QdaStatus {
    guard(|| {
        let p = out(project, "project")?;
        let stage = text(stage, "stage")?;
        let dst = out(out_json, "out_json")?;
        *dst = ptr::null_mut();
        let _lock = p.pipeline.project.lock()?;
        let summary = if stage == "all" {
            p.pipeline.run_all(force)?
        } else {
            RunSummary {
                stages: vec![p.pipeline.run_stage(stage.parse::<Stage>()?, force)?],
            }
        };
        json_out(&summary, dst)
    })
}

/// Stage states as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn qda_project_status(project: *mut QdaProject, out_json: *mut *mut c_char) -> QdaStatus {
    guard(|| {
        let p = out(project, "project")?;
        let dst = out(out_json, "out_json")?;
        *dst = ptr::null_mut();
        p.pipeline.project.reload()?;
        json_out(&p.pipeline.status(), dst)
    })
}

/// The report summary JSON. The report stage must be fresh.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn qda_project_report(project: *mut QdaProject, out_json: *mut *mut c_char) -> QdaStatus {
    guard(|| {
        let p = out(project, "project")?;
        let dst = out(out_json, "out_json")?;
        *dst = ptr::null_mut();
        p.pipeline.project.reload()?;
        let bytes = p.pipeline.project.load_artifact("report_summary.json", false)?;
        *dst = to_c(String::from_utf8(bytes).map_err(|_| Failure::Utf8("report"))?);
        Ok(())
    })
}

/// Sets a dictionary entry. `base_version < 0` skips the version check.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qda_dictionary_set(
    project: *mut QdaProject,
    key: *const c_char,
    lemma: *const c_char,
    base_version: i64,
    out_version: *mut u64,
) -> QdaStatus {
    guard(|| {
        let p = out(project, "project")?;
        let (key, lemma) = (text(key, "key")?, text(lemma, "lemma")?);
        let dst = out(out_version, "out_version")?;
        let _lock = p.pipeline.project.lock()?;
        p.pipeline.project.reload()?;
        let base = u64::try_from(base_version).ok();
        *dst = pipeline::edit_dictionary(&mut p.pipeline.project, key, lemma, base)?.version;
        Ok(())
    })
}

/// Applies a review action (`accept`, `reject`, `reassign`) to segment
/// `<set>:<document>:<sentence>`. `categories` is a comma-separated list
/// (may be null unless reassigning). Returns the updated segment as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn qda_review_apply(
    project: *mut QdaProject,
    segment: *const c_char,
    action: *const c_char,
    categories: *const c_char,
    out_json: *mut *mut c_char,
) -> QdaStatus {
    guard(|| {
        let p = out(project, "project")?;
        let dst = out(out_json, "out_json")?;
        *dst = ptr::null_mut();
        let categories = if categories.is_null() {
            Vec::new()
        } else {
            text(categories, "categories")?
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        };
        let action = ReviewAction {
            segment: text(segment, "segment")?.parse()?,
            action: text(action, "action")?.parse::<ActionKind>()?,
            categories,
            note: None,
            timestamp: qda_core::lexicon::now_stamp(),
        };
        let _lock = p.pipeline.project.lock()?;
        p.pipeline.project.reload()?;
        let seg = pipeline::apply_review(&mut p.pipeline.project, action, None)?;
        json_out(&seg, dst)
    })
}

/// Pearson correlation of two series of length `n`.
///
/// # Safety
/// `x` and `y` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn qda_pearson(x: *const f64, y: *const f64, n: usize, out_r: *mut f64) -> QdaStatus {
    guard(|| {
        let (x, y) = (slice(x, n, "x")?, slice(y, n, "y")?);
        *out(out_r, "out_r")? = stats::pearson(x, y)?;
        Ok(())
    })
}

/// Two-sided Wilcoxon rank-sum test. The statistic is the rank sum of `a`.
///
/// # Safety
/// `a`/`b` must point to `na`/`nb` doubles.
#[no_mangle]
pub unsafe extern "C" fn qda_wilcoxon_rank_sum(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out_statistic: *mut f64,
    out_p: *mut f64,
) -> QdaStatus {
    guard(|| {
        let r = stats::wilcoxon_rank_sum(slice(a, na, "a")?, slice(b, nb, "b")?)?;
        *out(out_statistic, "out_statistic")? = r.statistic;
        *out(out_p, "out_p")? = r.p_value;
        Ok(())
    })
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`.
///
/// # Safety
/// `out_p` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qda_fisher_exact(a: u64, b: u64, c: u64, d: u64, out_p: *mut f64) -> QdaStatus {
    guard(|| {
        *out(out_p, "out_p")? = stats::fishers_exact([[a, b], [c, d]])?.p_value;
        Ok(())
    })
}

/// Builds a lemmatiser from dictionary CSV text (`key,lemma,pos_hint,provenance`).
///
/// # Safety
/// `csv` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qda_lemmatizer_new(csv: *const c_char, out_lemmatizer: *mut *mut QdaLemmatizer) -> QdaStatus {
    guard(|| {
        let dst = out(out_lemmatizer, "out_lemmatizer")?;
        *dst = ptr::null_mut();
        let dict = LemmaDictionary::read_csv(text(csv, "csv")?.as_bytes(), None::<&[u8]>)?;
        *dst = Box::into_raw(Box::new(QdaLemmatizer {
            dict,
            contractions: ContractionTable::bundled(),
        }));
        Ok(())
    })
}

/// Lemmatises `text` and returns the unigram stream as JSON (lemma, sentence
/// and byte span per item).
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn qda_lemmatize(
    lemmatizer: *const QdaLemmatizer,
    input: *const c_char,
    out_json: *mut *mut c_char,
) -> QdaStatus {
    guard(|| {
        let l = lemmatizer.as_ref().ok_or(Failure::Null("lemmatizer"))?;
        let dst = out(out_json, "out_json")?;
        *dst = ptr::null_mut();
        let doc = Document::from_text("input", SetLabel::Training, text(input, "text")?, &l.contractions);
        json_out(&apply_lemmatization(&doc, &l.dict).items, dst)
    })
}

/// # Safety
/// `lemmatizer` must come from `qda_lemmatizer_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn qda_lemmatizer_free(lemmatizer: *mut QdaLemmatizer) {
    if !lemmatizer.is_null() {
        drop(Box::from_raw(lemmatizer));
    }
}
