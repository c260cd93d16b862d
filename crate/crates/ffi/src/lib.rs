//! C ABI over the graphcap core: lexicons, lexeme normalization, triplet
//! and alignment-answer parsing, prompt rendering, and cost arithmetic.
//!
//! Conventions: handles are opaque pointers freed by the matching `_free`
//! function; strings returned as `char*` are UTF-8, NUL-terminated, and
//! owned by the caller (release with [`graphcap_string_free`]); functions
//! that can fail return [`GcStatus`] and leave a message readable via
//! [`graphcap_last_error`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use graphcap::parse::AlignmentAnswer;
use graphcap::prompt::{render_alignment_prompt, render_extraction_prompt, TemplateSet};
use graphcap::types::{
    normalize_lexeme, CaptionRecord, Lexicon, LexiconKind, RawTriplet, TripletSource,
};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = CString::new(message.into()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Result codes for fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Render = 4,
}

/// Lexicon kind selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcLexiconKind {
    Entity = 0,
    Predicate = 1,
}

impl From<GcLexiconKind> for LexiconKind {
    fn from(kind: GcLexiconKind) -> Self {
        match kind {
            GcLexiconKind::Entity => LexiconKind::Entity,
            GcLexiconKind::Predicate => LexiconKind::Predicate,
        }
    }
}

/// Extraction template selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcChain {
    ExtractOriginal = 0,
    ExtractParaphrase = 1,
}

/// Opaque lexicon handle.
pub struct GcLexicon(Lexicon);

/// Opaque bundle of the stock prompt templates.
pub struct GcTemplates(TemplateSet);

/// Opaque parsed-triplet list.
pub struct GcTriplets {
    triplets: Vec<RawTriplet>,
    malformed: usize,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, GcStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is null"));
        return Err(GcStatus::InvalidArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format!("{name} is not valid UTF-8"));
            Err(GcStatus::InvalidUtf8)
        }
    }
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s)
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message for the most recent failure on this thread, or null. The
/// pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn graphcap_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn graphcap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be a pointer returned by a graphcap function, or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Normalizes a lexeme (lowercase, collapsed whitespace, surrounding
/// punctuation and leading articles removed). Returns an empty string for
/// inputs that normalize to nothing.
///
/// # Safety
/// `input` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn graphcap_normalize_lexeme(input: *const c_char) -> *mut c_char {
    clear_error();
    match unsafe { cstr_arg(input, "input") } {
        Ok(s) => owned_string(normalize_lexeme(s)),
        Err(_) => ptr::null_mut(),
    }
}

/// Loads a lexicon from a file (one class per line, or the JSON form).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn graphcap_lexicon_load(
    path: *const c_char,
    kind: GcLexiconKind,
    out: *mut *mut GcLexicon,
) -> GcStatus {
    clear_error();
    if out.is_null() {
        set_error("out is null");
        return GcStatus::InvalidArgument;
    }
    let path = match unsafe { cstr_arg(path, "path") } {
        Ok(p) => p,
        Err(status) => return status,
    };
    match Lexicon::from_path(Path::new(path), kind.into()) {
        Ok(lexicon) => {
            unsafe { *out = Box::into_raw(Box::new(GcLexicon(lexicon))) };
            GcStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            GcStatus::Io
        }
    }
}

/// # Safety
/// `lexicon` must come from [`graphcap_lexicon_load`], or be null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_lexicon_free(lexicon: *mut GcLexicon) {
    if !lexicon.is_null() {
        drop(unsafe { Box::from_raw(lexicon) });
    }
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `lexicon` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_lexicon_len(lexicon: *const GcLexicon) -> usize {
    unsafe { lexicon.as_ref() }.map(|l| l.0.len()).unwrap_or(0)
}

/// Class name at a 1-based index, or null when out of range.
///
/// # Safety
/// `lexicon` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_lexicon_class(
    lexicon: *const GcLexicon,
    index: usize,
) -> *mut c_char {
    unsafe { lexicon.as_ref() }
        .and_then(|l| l.0.class(index))
        .map(|c| owned_string(c.to_string()))
        .unwrap_or(ptr::null_mut())
}

/// 1-based index of an exact class name, 0 when absent.
///
/// # Safety
/// `lexicon` must be a live handle; `name` a valid string.
#[no_mangle]
pub unsafe extern "C" fn graphcap_lexicon_index_of(
    lexicon: *const GcLexicon,
    name: *const c_char,
) -> usize {
    clear_error();
    let Some(lexicon) = (unsafe { lexicon.as_ref() }) else {
        return 0;
    };
    match unsafe { cstr_arg(name, "name") } {
        Ok(name) => lexicon.0.index_of(name).unwrap_or(0),
        Err(_) => 0,
    }
}

/// Parses every well-formed triplet span out of a completion answer.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn graphcap_parse_triplets(
    response: *const c_char,
    image_id: *const c_char,
    caption_id: *const c_char,
    out: *mut *mut GcTriplets,
) -> GcStatus {
    clear_error();
    if out.is_null() {
        set_error("out is null");
        return GcStatus::InvalidArgument;
    }
    let response = match unsafe { cstr_arg(response, "response") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let image_id = match unsafe { cstr_arg(image_id, "image_id") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let caption_id = match unsafe { cstr_arg(caption_id, "caption_id") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let caption = CaptionRecord {
        image_id: image_id.to_string(),
        caption_id: caption_id.to_string(),
        text: "-".to_string(),
    };
    let parsed = graphcap::parse::parse_triplets(response, &caption, TripletSource::LlmOriginal);
    let handle = GcTriplets {
        triplets: parsed.triplets,
        malformed: parsed.malformed,
    };
    unsafe { *out = Box::into_raw(Box::new(handle)) };
    GcStatus::Ok
}

/// # Safety
/// `triplets` must come from [`graphcap_parse_triplets`], or be null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_free(triplets: *mut GcTriplets) {
    if !triplets.is_null() {
        drop(unsafe { Box::from_raw(triplets) });
    }
}

/// # Safety
/// `triplets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_len(triplets: *const GcTriplets) -> usize {
    unsafe { triplets.as_ref() }
        .map(|t| t.triplets.len())
        .unwrap_or(0)
}

/// Count of spans skipped for wrong arity or empty components.
///
/// # Safety
/// `triplets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_malformed(triplets: *const GcTriplets) -> usize {
    unsafe { triplets.as_ref() }
        .map(|t| t.malformed)
        .unwrap_or(0)
}

unsafe fn triplet_component(
    triplets: *const GcTriplets,
    index: usize,
    pick: fn(&RawTriplet) -> &str,
) -> *mut c_char {
    unsafe { triplets.as_ref() }
        .and_then(|t| t.triplets.get(index))
        .map(|t| owned_string(pick(t).to_string()))
        .unwrap_or(ptr::null_mut())
}

/// # Safety
/// `triplets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_subject(
    triplets: *const GcTriplets,
    index: usize,
) -> *mut c_char {
    unsafe { triplet_component(triplets, index, |t| &t.subject) }
}

/// # Safety
/// `triplets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_predicate(
    triplets: *const GcTriplets,
    index: usize,
) -> *mut c_char {
    unsafe { triplet_component(triplets, index, |t| &t.predicate) }
}

/// # Safety
/// `triplets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_triplets_object(
    triplets: *const GcTriplets,
    index: usize,
) -> *mut c_char {
    unsafe { triplet_component(triplets, index, |t| &t.object) }
}

/// Resolves an alignment answer against a lexicon and writes the result to
/// `out_index`: a 1-based class index, 0 for the `0.None` abstention, or
/// -1 when the answer is unparseable.
///
/// # Safety
/// `response` must be a valid string, `lexicon` a live handle, and
/// `out_index` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn graphcap_parse_alignment(
    response: *const c_char,
    lexicon: *const GcLexicon,
    out_index: *mut i64,
) -> GcStatus {
    clear_error();
    if out_index.is_null() {
        set_error("out_index is null");
        return GcStatus::InvalidArgument;
    }
    let Some(lexicon) = (unsafe { lexicon.as_ref() }) else {
        set_error("lexicon is null");
        return GcStatus::InvalidArgument;
    };
    let response = match unsafe { cstr_arg(response, "response") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let value = match graphcap::parse::parse_alignment(response, &lexicon.0) {
        AlignmentAnswer::Index(i) => i as i64,
        AlignmentAnswer::NoneOfThem => 0,
        AlignmentAnswer::Unparseable => -1,
    };
    unsafe { *out_index = value };
    GcStatus::Ok
}

/// The stock prompt templates.
#[no_mangle]
pub extern "C" fn graphcap_templates_bundled() -> *mut GcTemplates {
    Box::into_raw(Box::new(GcTemplates(TemplateSet::bundled())))
}

/// # Safety
/// `templates` must come from [`graphcap_templates_bundled`], or be null.
#[no_mangle]
pub unsafe extern "C" fn graphcap_templates_free(templates: *mut GcTemplates) {
    if !templates.is_null() {
        drop(unsafe { Box::from_raw(templates) });
    }
}

/// Renders an extraction prompt around a caption. Null on failure; see
/// [`graphcap_last_error`].
///
/// # Safety
/// `templates` must be a live handle; `caption` a valid string.
#[no_mangle]
pub unsafe extern "C" fn graphcap_render_extraction(
    templates: *const GcTemplates,
    chain: GcChain,
    caption: *const c_char,
) -> *mut c_char {
    clear_error();
    let Some(templates) = (unsafe { templates.as_ref() }) else {
        set_error("templates is null");
        return ptr::null_mut();
    };
    let caption = match unsafe { cstr_arg(caption, "caption") } {
        Ok(s) => s,
        Err(_) => return ptr::null_mut(),
    };
    let record = CaptionRecord {
        image_id: String::new(),
        caption_id: String::new(),
        text: caption.to_string(),
    };
    let template = match chain {
        GcChain::ExtractOriginal => &templates.0.extract_original,
        GcChain::ExtractParaphrase => &templates.0.extract_paraphrase,
    };
    match render_extraction_prompt(template, &record) {
        Ok(prompt) => owned_string(prompt),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Renders an alignment prompt for a lexeme; the entity or predicate
/// template is picked by the lexicon's kind. Null on failure.
///
/// # Safety
/// `templates` and `lexicon` must be live handles; `lexeme` a valid string.
#[no_mangle]
pub unsafe extern "C" fn graphcap_render_alignment(
    templates: *const GcTemplates,
    lexeme: *const c_char,
    lexicon: *const GcLexicon,
) -> *mut c_char {
    clear_error();
    let (Some(templates), Some(lexicon)) =
        (unsafe { templates.as_ref() }, unsafe { lexicon.as_ref() })
    else {
        set_error("templates or lexicon is null");
        return ptr::null_mut();
    };
    let lexeme = match unsafe { cstr_arg(lexeme, "lexeme") } {
        Ok(s) => s,
        Err(_) => return ptr::null_mut(),
    };
    let template = match lexicon.0.kind() {
        LexiconKind::Entity => &templates.0.align_entity,
        LexiconKind::Predicate => &templates.0.align_predicate,
    };
    match render_alignment_prompt(template, lexeme, &lexicon.0) {
        Ok(prompt) => owned_string(prompt),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// cost = input/1000 * input_price + output/1000 * output_price.
#[no_mangle]
pub extern "C" fn graphcap_estimate_cost(
    input_tokens: u64,
    output_tokens: u64,
    input_price_per_1k: f64,
    output_price_per_1k: f64,
) -> f64 {
    graphcap::llm::CostModel::new(input_price_per_1k.max(0.0), output_price_per_1k.max(0.0))
        .cost(input_tokens, output_tokens)
}

/// Triplets per image; 0 when there are no images.
#[no_mangle]
pub extern "C" fn graphcap_density(triplets: u64, images: u64) -> f64 {
    if images == 0 {
        0.0
    } else {
        triplets as f64 / images as f64
    }
}
