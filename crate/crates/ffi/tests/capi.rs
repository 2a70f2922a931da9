use std::ffi::{CStr, CString};
use std::ptr;

use trex_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { trex_string_free(p) };
    s
}

fn last_error() -> String {
    let p = trex_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn canonicalize_and_errors() {
    let mut out = ptr::null_mut();
    let st = unsafe { trex_canonicalize(c("OCC").as_ptr(), 0, &mut out) };
    assert_eq!(st, TrexStatus::Ok);
    let a = take(out);
    unsafe { trex_canonicalize(c("C(O)C").as_ptr(), 0, &mut out) };
    assert_eq!(take(out), a);

    let st = unsafe { trex_canonicalize(c("C1CC").as_ptr(), 0, &mut out) };
    assert_eq!(st, TrexStatus::MalformedSmiles);
    assert!(last_error().contains("C1CC"));

    assert_eq!(unsafe { trex_canonicalize(ptr::null(), 0, &mut out) }, TrexStatus::NullArgument);
    assert_eq!(unsafe { trex_canonicalize(c("C").as_ptr(), 0, ptr::null_mut()) }, TrexStatus::NullArgument);
    let bad = [0xffu8, 0];
    assert_eq!(unsafe { trex_canonicalize(bad.as_ptr().cast(), 0, &mut out) }, TrexStatus::InvalidUtf8);
}

#[test]
fn config_handle() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { trex_config_new(ptr::null(), &mut cfg) }, TrexStatus::Ok);
    assert_eq!(unsafe { trex_config_set(cfg, c("epochs.center").as_ptr(), c("3").as_ptr()) }, TrexStatus::Ok);
    assert_eq!(unsafe { trex_config_set(cfg, c("no.such").as_ptr(), c("1").as_ptr()) }, TrexStatus::Config);
    assert_eq!(unsafe { trex_config_set(cfg, c("beam").as_ptr(), c("0").as_ptr()) }, TrexStatus::Config);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { trex_config_text(cfg, &mut text) }, TrexStatus::Ok);
    let text = take(text);
    assert!(text.contains("epochs.center = 3"));
    assert!(text.contains("beam = 10"));
    assert_eq!(unsafe { trex_train(cfg, c("sideways").as_ptr()) }, TrexStatus::Config);
    unsafe { trex_config_free(cfg) };
    unsafe { trex_config_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoints_and_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ptr::null_mut();
    unsafe { trex_config_new(ptr::null(), &mut cfg) };
    let run_dir = c(dir.path().to_str().unwrap());
    unsafe { trex_config_set(cfg, c("run_dir").as_ptr(), run_dir.as_ptr()) };
    unsafe { trex_config_set(cfg, c("text.source").as_ptr(), c("heuristic").as_ptr()) };
    let mut pred = ptr::null_mut();
    assert_eq!(unsafe { trex_ingest(cfg) }, TrexStatus::Config);
    assert!(last_error().contains("data.path"));
    assert_eq!(unsafe { trex_predictor_open(cfg, &mut pred) }, TrexStatus::MissingUpstream);
    assert!(pred.is_null());
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { trex_evaluate(cfg, &mut json) }, TrexStatus::EmptySplit);
    unsafe { trex_config_free(cfg) };
}

#[test]
fn train_and_predict_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rxn.txt");
    std::fs::write(&data, trex_core::data::synthetic_corpus(40, 9).join("\n")).unwrap();
    let mut cfg = ptr::null_mut();
    unsafe { trex_config_new(ptr::null(), &mut cfg) };
    for (k, v) in [
        ("run_dir", dir.path().to_str().unwrap()),
        ("data.path", data.to_str().unwrap()),
        ("model.layers", "2"),
        ("model.hidden", "8"),
        ("model.head_hidden", "8"),
        ("model.latent", "8"),
        ("text.encoders", "hash:16:1"),
        ("text.source", "heuristic"),
        ("epochs.center", "1"),
        ("epochs.completion", "1"),
        ("epochs.rerank", "1"),
    ] {
        assert_eq!(unsafe { trex_config_set(cfg, c(k).as_ptr(), c(v).as_ptr()) }, TrexStatus::Ok, "{k}");
    }
    assert_eq!(unsafe { trex_ingest(cfg) }, TrexStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { trex_train(cfg, c("pipeline").as_ptr()) }, TrexStatus::Ok, "{}", last_error());

    let mut pred = ptr::null_mut();
    assert_eq!(unsafe { trex_predictor_open(cfg, &mut pred) }, TrexStatus::Ok);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { trex_predict(pred, c("CCOc1ccccc1").as_ptr(), 0, &mut json) }, TrexStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
    assert_eq!(v["candidates"][0]["rank"], 1);
    assert_eq!(unsafe { trex_predict(pred, c("C(").as_ptr(), 0, &mut json) }, TrexStatus::MalformedSmiles);
    unsafe { trex_predictor_free(pred) };

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { trex_evaluate(cfg, &mut json) }, TrexStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
    assert!(v["reports"].as_array().unwrap().len() >= 4);
    unsafe { trex_config_free(cfg) };
}

#[test]
fn header_is_valid_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/trex.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["trex_config_new", "trex_ingest", "trex_predict", "trex_last_error", "TREX_STATUS_MISSING_UPSTREAM"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else { return };
    if !cc.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"trex.h\"\nint main(void) { TrexConfig *c = 0; return trex_config_new(0, &c) == TREX_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let st = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}
