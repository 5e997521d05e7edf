use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use qda_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(qda_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    assert!(!s.is_null());
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    qda_string_free(s);
    out
}

#[test]
fn project_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let root = c(dir.path().to_str().unwrap());
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(qda_project_open(root.as_ptr(), &mut p), QdaStatus::NotFound);
        assert!(p.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(qda_project_init(root.as_ptr(), &mut p), QdaStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(qda_synth_write(root.as_ptr(), 5, false), QdaStatus::Ok);

        let mut json = ptr::null_mut();
        assert_eq!(qda_project_run(p, c("search").as_ptr(), false, &mut json), QdaStatus::Dependency);
        assert!(json.is_null());
        assert!(last_error().contains("tdm"), "{}", last_error());
        assert_eq!(qda_project_run(p, c("sideways").as_ptr(), false, &mut json), QdaStatus::Config);

        assert_eq!(qda_project_run(p, c("all").as_ptr(), false, &mut json), QdaStatus::Ok);
        let summary: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(summary["stages"].as_array().unwrap().len(), 13);

        assert_eq!(qda_project_status(p, &mut json), QdaStatus::Ok);
        let status: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert!(status.as_array().unwrap().iter().all(|s| s["state"] == "fresh"));

        assert_eq!(qda_project_report(p, &mut json), QdaStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(report["pairs"]["testing"]["final_threshold"], 0.9);

        let mut version = 0u64;
        assert_eq!(qda_dictionary_set(p, c("dose").as_ptr(), c("dosage").as_ptr(), -1, &mut version), QdaStatus::Ok);
        let v = version;
        assert_eq!(
            qda_dictionary_set(p, c("dose").as_ptr(), c("dose").as_ptr(), (v - 1) as i64, &mut version),
            QdaStatus::Conflict
        );
        assert_eq!(qda_dictionary_set(p, c("dose").as_ptr(), c("dosage").as_ptr(), v as i64, &mut version), QdaStatus::Ok);
        assert_eq!(version, v);
        assert_eq!(qda_project_report(p, &mut json), QdaStatus::Stale);

        assert_eq!(qda_project_run(p, c("all").as_ptr(), false, &mut json), QdaStatus::Ok);
        qda_string_free(json);
        let segs: Vec<_> = std::fs::read_to_string(dir.path().join("report/segments_testing.csv")).unwrap().lines().skip(1).map(str::to_string).collect();
        let first: Vec<&str> = segs[0].split(',').collect();
        let id = c(&format!("testing:{}:{}", first[0], first[1]));
        assert_eq!(qda_review_apply(p, id.as_ptr(), c("reassign").as_ptr(), ptr::null(), &mut json), QdaStatus::Validation);
        assert_eq!(qda_review_apply(p, id.as_ptr(), c("reassign").as_ptr(), c("cough, antiviral").as_ptr(), &mut json), QdaStatus::Ok);
        let seg: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(seg["status"], "reassigned");
        assert_eq!(seg["categories"], serde_json::json!(["antiviral", "cough"]));
        qda_project_close(p);
    }
}

#[test]
fn null_and_bad_arguments() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(qda_project_open(ptr::null(), &mut p), QdaStatus::NullArgument);
        assert_eq!(qda_project_open(c("/x").as_ptr(), ptr::null_mut()), QdaStatus::NullArgument);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(qda_project_open(bad.as_ptr().cast(), &mut p), QdaStatus::InvalidUtf8);
        let mut json = ptr::null_mut();
        assert_eq!(qda_project_run(ptr::null_mut(), c("all").as_ptr(), false, &mut json), QdaStatus::NullArgument);
        qda_project_close(ptr::null_mut());
        qda_string_free(ptr::null_mut());
        qda_lemmatizer_free(ptr::null_mut());
    }
}

#[test]
fn statistics() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 4.0, 6.0, 8.5];
    let mut r = 0.0;
    unsafe {
        assert_eq!(qda_pearson(x.as_ptr(), y.as_ptr(), 4, &mut r), QdaStatus::Ok);
        assert!((r - qda_core::stats::pearson(&x, &y).unwrap()).abs() < 1e-15);
        let flat = [3.0; 4];
        assert_eq!(qda_pearson(x.as_ptr(), flat.as_ptr(), 4, &mut r), QdaStatus::Undefined);

        let (mut w, mut p) = (0.0, 0.0);
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        assert_eq!(qda_wilcoxon_rank_sum(a.as_ptr(), 3, b.as_ptr(), 3, &mut w, &mut p), QdaStatus::Ok);
        assert_eq!(w, 6.0);
        // the lowest of C(6,3) = 20 arrangements, doubled
        assert!((p - 0.1).abs() < 1e-12);
        assert_eq!(qda_wilcoxon_rank_sum(a.as_ptr(), 0, b.as_ptr(), 3, &mut w, &mut p), QdaStatus::Empty);

        assert_eq!(qda_fisher_exact(3, 0, 0, 3, &mut p), QdaStatus::Ok);
        assert!((p - 0.1).abs() < 1e-12);
        assert_eq!(qda_fisher_exact(0, 0, 1, 1, &mut p), QdaStatus::Undefined);
    }
}

#[test]
fn lemmatizer_handle() {
    let csv = c("key,lemma,pos_hint,provenance\nswine flu,influenza,,manual\nswine,pig,,auto\nfevers,fever,,auto\n");
    unsafe {
        let mut l = ptr::null_mut();
        assert_eq!(qda_lemmatizer_new(csv.as_ptr(), &mut l), QdaStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(qda_lemmatize(l, c("Swine flu and fevers. A swine.").as_ptr(), &mut json), QdaStatus::Ok);
        let items: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        let lemmas: Vec<&str> = items.as_array().unwrap().iter().map(|i| i["lemma"].as_str().unwrap()).collect();
        assert_eq!(lemmas, ["influenza", "and", "fever", "a", "pig"]);
        assert_eq!(items[0]["start"], 0);
        assert_eq!(items[0]["end"], 9);
        qda_lemmatizer_free(l);
        assert_eq!(qda_lemmatizer_new(c("key,lemma\nx,y\n").as_ptr(), &mut l), QdaStatus::Validation);
        assert!(l.is_null());
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/qda.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "qda_last_error",
        "qda_string_free",
        "qda_project_init",
        "qda_project_open",
        "qda_project_close",
        "qda_project_run",
        "qda_project_status",
        "qda_project_report",
        "qda_dictionary_set",
        "qda_review_apply",
        "qda_synth_write",
        "qda_pearson",
        "qda_wilcoxon_rank_sum",
        "qda_fisher_exact",
        "qda_lemmatizer_new",
        "qda_lemmatize",
        "qda_lemmatizer_free",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f}");
    }
    assert!(h.contains("typedef struct QdaProject QdaProject;"));
    assert!(h.contains("QDA_STATUS_DEPENDENCY = 12"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; only the declaration check ran");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"qda.h\"\nint main(void) { double r; QdaStatus s = qda_pearson(0, 0, 0, &r); return s == QDA_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
