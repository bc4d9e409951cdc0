//! C ABI over the deskmt library.
//!
//! Every fallible function returns a [`DeskmtStatus`]; on failure the message
//! is kept per thread and read with [`deskmt_last_error`]. Objects are opaque
//! handles released with their `_free` function, and strings returned through
//! out-parameters are released with [`deskmt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use deskmt::bpe::{decode_pieces, MergeTable, Segmenter};
use deskmt::corpus::{tokenize, Vocabulary};
use deskmt::decode::{Ensemble, Translator, DEFAULT_BEAM};
use deskmt::eval::bleu;
use deskmt::lexicon::Dictionary;
use deskmt::model::load_checkpoint;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeskmtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Translation = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(DeskmtStatus, String);

impl Failure {
    fn new(status: DeskmtStatus, msg: impl std::fmt::Display) -> Self {
        Self(status, msg.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Outcome) -> DeskmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DeskmtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DeskmtStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DeskmtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DeskmtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Outcome {
    if out.is_null() {
        return Err(Failure::new(DeskmtStatus::NullPointer, "output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| Failure::new(DeskmtStatus::Format, "result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(Failure::new(DeskmtStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(DeskmtStatus::NullPointer, format!("{what} is null")))
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::new(DeskmtStatus::Io, e)
}

fn format(e: impl std::fmt::Display) -> Failure {
    Failure::new(DeskmtStatus::Format, e)
}

/// Copies the calling thread's last error message into `buf` (always NUL
/// terminated when `len > 0`) and returns the full message length plus one.
/// Returns 0 when no error is recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn deskmt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deskmt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn deskmt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A loaded BPE merge table.
pub struct DeskmtBpe {
    merges: MergeTable,
}

/// Loads a merge table file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deskmt_bpe_load(path: *const c_char, out: *mut *mut DeskmtBpe) -> DeskmtStatus {
    guard(|| {
        let path = text(path, "path")?;
        let merges = MergeTable::load(path.as_ref()).map_err(format)?;
        put_handle(out, DeskmtBpe { merges })
    })
}

/// Segments a whitespace-tokenized sentence; pieces are space separated.
///
/// # Safety
/// `bpe` must be a live handle, `sentence` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn deskmt_bpe_segment(bpe: *const DeskmtBpe, sentence: *const c_char, out: *mut *mut c_char) -> DeskmtStatus {
    guard(|| {
        let bpe = handle(bpe, "bpe")?;
        let words = tokenize(text(sentence, "sentence")?);
        let pieces = Segmenter::new(&bpe.merges).sentence(&words);
        put_string(out, pieces.join(" "))
    })
}

/// Joins space-separated pieces back into words.
///
/// # Safety
/// `pieces` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn deskmt_bpe_join(pieces: *const c_char, out: *mut *mut c_char) -> DeskmtStatus {
    guard(|| {
        let pieces = tokenize(text(pieces, "pieces")?);
        put_string(out, decode_pieces(&pieces).join(" "))
    })
}

/// # Safety
/// `bpe` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn deskmt_bpe_free(bpe: *mut DeskmtBpe) {
    if !bpe.is_null() {
        drop(Box::from_raw(bpe));
    }
}

/// One model or an ensemble with its vocabularies and optional BPE and unk
/// dictionary.
pub struct DeskmtTranslator {
    ensemble: Ensemble,
    source: Vocabulary,
    target: Vocabulary,
    merges: Option<MergeTable>,
    dictionary: Option<Dictionary>,
    beam: usize,
}

/// Options for [`deskmt_translator_open`]. Null paths are absent.
#[repr(C)]
pub struct DeskmtTranslatorOptions {
    /// Checkpoint paths; more than one forms an ensemble.
    pub models: *const *const c_char,
    pub model_count: usize,
    pub source_vocab: *const c_char,
    pub target_vocab: *const c_char,
    /// Merge table for systems trained on BPE pieces.
    pub merges: *const c_char,
    /// Enables unk replacement by dictionary lookup with copy backoff.
    pub dictionary: *const c_char,
    /// Enables copy-only unk replacement when no dictionary is given.
    pub copy_unks: bool,
    /// 0 selects the default beam.
    pub beam: usize,
}

/// Loads checkpoints and vocabularies into a translator.
///
/// # Safety
/// `options` must point to a valid struct whose non-null strings are
/// NUL-terminated and whose `models` holds `model_count` entries.
#[no_mangle]
pub unsafe extern "C" fn deskmt_translator_open(
    options: *const DeskmtTranslatorOptions,
    out: *mut *mut DeskmtTranslator,
) -> DeskmtStatus {
    guard(|| {
        let o = handle(options, "options")?;
        if o.models.is_null() || o.model_count == 0 {
            return Err(Failure::new(DeskmtStatus::InvalidArgument, "at least one model is required"));
        }
        let mut models = Vec::with_capacity(o.model_count);
        for i in 0..o.model_count {
            let p = text(*o.models.add(i), "model path")?;
            models.push(load_checkpoint(p.as_ref()).map_err(format)?.0);
        }
        let ensemble = Ensemble::new(models).map_err(|e| Failure::new(DeskmtStatus::InvalidArgument, e))?;
        let source = Vocabulary::load(text(o.source_vocab, "source_vocab")?.as_ref()).map_err(io)?;
        let target = Vocabulary::load(text(o.target_vocab, "target_vocab")?.as_ref()).map_err(io)?;
        let merges = optional_path(o.merges, "merges")?
            .map(|p| MergeTable::load(&p).map_err(format))
            .transpose()?;
        let dictionary = match optional_path(o.dictionary, "dictionary")? {
            Some(p) => Some(Dictionary::load(&p).map_err(format)?),
            None if o.copy_unks => Some(Dictionary::default()),
            None => None,
        };
        let beam = if o.beam == 0 { DEFAULT_BEAM } else { o.beam };
        put_handle(
            out,
            DeskmtTranslator {
                ensemble,
                source,
                target,
                merges,
                dictionary,
                beam,
            },
        )
    })
}

/// Translates one whitespace-tokenized sentence.
///
/// # Safety
/// `translator` must be a live handle, `sentence` NUL-terminated, `out`
/// writable; `score` may be null.
#[no_mangle]
pub unsafe extern "C" fn deskmt_translator_translate(
    translator: *const DeskmtTranslator,
    sentence: *const c_char,
    out: *mut *mut c_char,
    score: *mut f64,
) -> DeskmtStatus {
    guard(|| {
        let t = handle(translator, "translator")?;
        let words = tokenize(text(sentence, "sentence")?);
        let mut tr = Translator {
            ensemble: &t.ensemble,
            source_vocab: &t.source,
            target_vocab: &t.target,
            segmenter: t.merges.as_ref().map(Segmenter::new),
            unk_dictionary: t.dictionary.as_ref(),
            beam_size: t.beam,
            max_len: None,
        };
        let result = tr
            .translate(&words)
            .map_err(|e| Failure::new(DeskmtStatus::Translation, e))?;
        if !score.is_null() {
            *score = result.score;
        }
        put_string(out, result.words.join(" "))
    })
}

/// # Safety
/// `translator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn deskmt_translator_free(translator: *mut DeskmtTranslator) {
    if !translator.is_null() {
        drop(Box::from_raw(translator));
    }
}

/// Corpus BLEU (0 to 100) of newline-separated hypotheses against references.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deskmt_bleu(hypotheses: *const c_char, references: *const c_char, out: *mut f64) -> DeskmtStatus {
    guard(|| {
        let lines = |s: &str| -> Vec<Vec<String>> { s.lines().map(tokenize).collect() };
        let h = lines(text(hypotheses, "hypotheses")?);
        let r = lines(text(references, "references")?);
        let b = bleu(&h, &r).map_err(|e| Failure::new(DeskmtStatus::InvalidArgument, e))?;
        if out.is_null() {
            return Err(Failure::new(DeskmtStatus::NullPointer, "output pointer is null"));
        }
        *out = b.score;
        Ok(())
    })
}
