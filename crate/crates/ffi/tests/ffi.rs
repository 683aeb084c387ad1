use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use thpn::corpus::{build_vocab, generate_synthetic, to_jsonl, SynthConfig, TaskStyle};
use thpn::model::{ModelConfig, Thpn};
use thpn::numerics::RngState;
use thpn::training::{write_checkpoint, Hyperparams};
use thpn_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    checkpoint: CString,
    train: CString,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_synthetic(&SynthConfig {
        n_restaurants: 6,
        n_dialogues: 8,
        style: TaskStyle::Full,
        seed: 2,
    })
    .unwrap();
    let hp = Hyperparams {
        model: ModelConfig {
            dim: 8,
            ..ModelConfig::default()
        },
        max_len: 8,
        ..Hyperparams::default()
    };
    let model = Thpn::new(hp.model, build_vocab(&d), &mut RngState::new(4)).unwrap();
    let ck = dir.path().join("model.thpn");
    write_checkpoint(&ck, &model, &hp).unwrap();
    let train = dir.path().join("train.jsonl");
    std::fs::write(&train, to_jsonl(&d).unwrap()).unwrap();
    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    Fixture {
        checkpoint: c(&ck),
        train: c(&train),
        _dir: dir,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(thpn_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn open(f: &Fixture) -> *mut ThpnSession {
    let mut s = ptr::null_mut();
    let st = unsafe { thpn_session_open(f.checkpoint.as_ptr(), f.train.as_ptr(), &mut s) };
    assert_eq!(st, ThpnStatus::Ok, "{}", last_error());
    assert!(!s.is_null());
    s
}

fn respond(s: *mut ThpnSession, text: &str) -> (ThpnStatus, Option<serde_json::Value>) {
    let u = CString::new(text).unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let st = unsafe { thpn_session_respond(s, u.as_ptr(), &mut out) };
    if out.is_null() {
        return (st, None);
    }
    let v = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { thpn_string_free(out) };
    (st, Some(v))
}

#[test]
fn session_lifecycle() {
    let f = fixture();
    let s = open(&f);
    let (st, v) = respond(s, "hello");
    assert_eq!(st, ThpnStatus::Ok);
    let v = v.unwrap();
    assert!(v["text"].is_string());
    let n_ret = v["retrieved"].as_array().unwrap().len();
    assert!((1..=3).contains(&n_ret));
    assert_eq!(
        v["generated"]["tokens"].as_array().unwrap().len(),
        v["generated"]["provenance"].as_array().unwrap().len()
    );
    assert_eq!(last_error(), "");

    let mut len = 0usize;
    assert_eq!(
        unsafe { thpn_session_history_len(s, &mut len) },
        ThpnStatus::Ok
    );
    assert_eq!(len, 2);
    let (a, b, c) = (
        CString::new("carson").unwrap(),
        CString::new("tuesday").unwrap(),
        CString::new("low_of_20f").unwrap(),
    );
    assert_eq!(
        unsafe { thpn_session_add_kb(s, a.as_ptr(), b.as_ptr(), c.as_ptr()) },
        ThpnStatus::Ok
    );
    assert_eq!(unsafe { thpn_session_reset(s) }, ThpnStatus::Ok);
    assert_eq!(
        unsafe { thpn_session_history_len(s, &mut len) },
        ThpnStatus::Ok
    );
    assert_eq!(len, 0);
    unsafe { thpn_session_free(s) };
}

#[test]
fn errors_are_reported() {
    let f = fixture();
    let mut s = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.thpn").unwrap();
    assert_eq!(
        unsafe { thpn_session_open(missing.as_ptr(), ptr::null(), &mut s) },
        ThpnStatus::Data
    );
    assert!(s.is_null());
    assert!(!last_error().is_empty());

    // a training file is not a checkpoint
    assert_eq!(
        unsafe { thpn_session_open(f.train.as_ptr(), ptr::null(), &mut s) },
        ThpnStatus::Incompatible
    );
    assert_eq!(
        unsafe { thpn_session_open(ptr::null(), ptr::null(), &mut s) },
        ThpnStatus::NullArgument
    );

    let s = open(&f);
    assert_eq!(respond(s, "   ").0, ThpnStatus::Data);
    let bad = [0xffu8, 0];
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { thpn_session_respond(s, bad.as_ptr().cast(), &mut out) },
        ThpnStatus::InvalidUtf8
    );
    assert!(out.is_null());
    assert_eq!(
        unsafe { thpn_session_respond(ptr::null_mut(), bad.as_ptr().cast(), &mut out) },
        ThpnStatus::NullArgument
    );
    unsafe {
        thpn_session_free(s);
        thpn_session_free(ptr::null_mut());
        thpn_string_free(ptr::null_mut());
    }
}

#[test]
fn session_without_guidance() {
    let f = fixture();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { thpn_session_open(f.checkpoint.as_ptr(), ptr::null(), &mut s) },
        ThpnStatus::Ok
    );
    let (st, v) = respond(s, "hi");
    assert_eq!(st, ThpnStatus::Ok);
    assert!(v.unwrap()["retrieved"].as_array().unwrap().is_empty());
    unsafe { thpn_session_free(s) };
}

#[test]
fn corpus_metrics() {
    let refs = [
        CString::new("a b c d e").unwrap(),
        CString::new("x y").unwrap(),
    ];
    let hyps = [
        CString::new("a b c d e").unwrap(),
        CString::new("x y").unwrap(),
    ];
    let rp: Vec<*const c_char> = refs.iter().map(|c| c.as_ptr()).collect();
    let hp: Vec<*const c_char> = hyps.iter().map(|c| c.as_ptr()).collect();
    let mut m = ThpnCorpusMetrics::default();
    assert_eq!(
        unsafe { thpn_corpus_metrics(rp.as_ptr(), hp.as_ptr(), 2, &mut m) },
        ThpnStatus::Ok
    );
    assert_eq!(m.per_response_accuracy, 1.0);
    assert!((m.bleu - 1.0).abs() < 1e-12);

    let hyps = [CString::new("a b c d").unwrap()];
    let hp: Vec<*const c_char> = hyps.iter().map(|c| c.as_ptr()).collect();
    assert_eq!(
        unsafe { thpn_corpus_metrics(rp.as_ptr(), hp.as_ptr(), 1, &mut m) },
        ThpnStatus::Ok
    );
    assert!((m.bleu - (-0.25f64).exp()).abs() < 1e-9);
    assert_eq!(m.per_response_accuracy, 0.0);
    assert_eq!(
        unsafe { thpn_corpus_metrics(rp.as_ptr(), hp.as_ptr(), 0, &mut m) },
        ThpnStatus::Data
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(thpn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/thpn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "thpn_last_error",
        "thpn_session_open",
        "thpn_session_respond",
        "thpn_session_add_kb",
        "thpn_session_reset",
        "thpn_session_free",
        "thpn_string_free",
        "thpn_corpus_metrics",
        "THPN_STATUS_INCOMPATIBLE",
        "typedef struct ThpnSession ThpnSession",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"thpn.h\"\nint main(void) { ThpnSession *s = 0; ThpnStatus st = thpn_session_open(\"m\", 0, &s); return st == THPN_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
