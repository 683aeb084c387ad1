//! C ABI over the `thpn` chat session and corpus metrics.
//!
//! Every fallible function returns a [`ThpnStatus`]. On failure the message
//! is available from [`thpn_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`thpn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use thpn::cli::build_repository;
use thpn::corpus::{parse_babi, read_jsonl, Dialogue, EntitySet};
use thpn::metrics::{bleu, per_response_accuracy};
use thpn::session::ChatSession;
use thpn::training::load_checkpoint;
use thpn::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThpnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Usage = 3,
    Data = 4,
    Incompatible = 5,
    Internal = 6,
}

/// Opaque chat session.
pub struct ThpnSession {
    inner: ChatSession,
}

/// Corpus-level scores of a hypothesis set.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ThpnCorpusMetrics {
    pub bleu: f64,
    pub per_response_accuracy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ThpnStatus {
    match e {
        Error::Config(_) => ThpnStatus::Usage,
        Error::Incompatible(_) => ThpnStatus::Incompatible,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::Data(_) => ThpnStatus::Data,
        _ => ThpnStatus::Internal,
    }
}

struct Fail(ThpnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ThpnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ThpnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ThpnStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(ThpnStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ThpnStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `s` must be null or a live pointer from [`thpn_session_open`].
unsafe fn session<'a>(s: *mut ThpnSession) -> Result<&'a mut ThpnSession, Fail> {
    s.as_mut()
        .ok_or_else(|| Fail(ThpnStatus::NullArgument, "session is null".into()))
}

fn out_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(ThpnStatus::Internal, "output contains NUL".into()))
}

fn read_dialogues(path: &Path) -> thpn::Result<Vec<Dialogue>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    } else {
        parse_babi(&std::fs::read_to_string(path)?)
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn thpn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn thpn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a session from a checkpoint. `train_path` (JSON lines or bAbI
/// text) supplies the guidance repository and entity lexicon; pass null to
/// chat without guidance.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_open(
    checkpoint_path: *const c_char,
    train_path: *const c_char,
    out: *mut *mut ThpnSession,
) -> ThpnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(ThpnStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let ck = text(checkpoint_path, "checkpoint_path")?;
        let (model, hp) = load_checkpoint(Path::new(ck), None)?;
        let (repo, lexicon) = if train_path.is_null() {
            (None, EntitySet::default())
        } else {
            let train = read_dialogues(Path::new(text(train_path, "train_path")?))?;
            let repo = if hp.model.ablation.no_ir {
                None
            } else {
                Some(build_repository(&train, hp.method, None)?)
            };
            (repo, EntitySet::from_dialogues(&train))
        };
        let s = Box::new(ThpnSession {
            inner: ChatSession::new(model, hp, repo, lexicon),
        });
        *out = Box::into_raw(s);
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer from [`thpn_session_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_free(s: *mut ThpnSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Answers one user utterance. `*out_json` receives
/// `{"text", "retrieved", "generated"}`; free it with [`thpn_string_free`].
///
/// # Safety
/// `s` must be a live session; `utterance` NUL-terminated; `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_respond(
    s: *mut ThpnSession,
    utterance: *const c_char,
    out_json: *mut *mut c_char,
) -> ThpnStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Fail(ThpnStatus::NullArgument, "out_json is null".into()));
        }
        *out_json = ptr::null_mut();
        let s = session(s)?;
        let reply = s.inner.respond(text(utterance, "utterance")?)?;
        let json = serde_json::to_string(&reply).map_err(Error::from)?;
        *out_json = out_string(json)?;
        Ok(())
    })
}

/// Adds a `(subject, relation, object)` triple to the session KB.
///
/// # Safety
/// `s` must be a live session; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_add_kb(
    s: *mut ThpnSession,
    subject: *const c_char,
    relation: *const c_char,
    object: *const c_char,
) -> ThpnStatus {
    guard(|| {
        let s = session(s)?;
        s.inner.add_kb(
            text(subject, "subject")?,
            text(relation, "relation")?,
            text(object, "object")?,
        )?;
        Ok(())
    })
}

/// Clears the dialogue history; the KB is kept.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_reset(s: *mut ThpnSession) -> ThpnStatus {
    guard(|| {
        session(s)?.inner.reset();
        Ok(())
    })
}

/// Number of utterances (both speakers) in the session history.
///
/// # Safety
/// `s` must be a live session; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn thpn_session_history_len(
    s: *mut ThpnSession,
    out: *mut usize,
) -> ThpnStatus {
    guard(|| {
        let len = session(s)?.inner.history().len();
        let out = out
            .as_mut()
            .ok_or_else(|| Fail(ThpnStatus::NullArgument, "out is null".into()))?;
        *out = len;
        Ok(())
    })
}

/// Corpus BLEU and per-response accuracy of `n` whitespace-tokenised
/// hypotheses against their references.
///
/// # Safety
/// `references` and `hypotheses` must each point to `n` NUL-terminated
/// strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn thpn_corpus_metrics(
    references: *const *const c_char,
    hypotheses: *const *const c_char,
    n: usize,
    out: *mut ThpnCorpusMetrics,
) -> ThpnStatus {
    guard(|| {
        if references.is_null() || hypotheses.is_null() || out.is_null() {
            return Err(Fail(ThpnStatus::NullArgument, "null argument".into()));
        }
        let tok = |p: *const c_char, what: &str| -> Result<Vec<String>, Fail> {
            Ok(thpn::corpus::tokenize(text(p, what)?))
        };
        let mut refs = Vec::with_capacity(n);
        let mut hyps = Vec::with_capacity(n);
        for i in 0..n {
            refs.push(tok(*references.add(i), "reference")?);
            hyps.push(tok(*hypotheses.add(i), "hypothesis")?);
        }
        *out = ThpnCorpusMetrics {
            bleu: bleu(&refs, &hyps)?,
            per_response_accuracy: per_response_accuracy(&refs, &hyps)?,
        };
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn thpn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
