//! C ABI over `highlights_lrp`.
//!
//! Objects are opaque handles created by `*_load`/`hlrp_summarize` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`HlrpStatus`]; on failure the message is available from
//! [`hlrp_last_error`] on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use highlights_lrp::highlights::{
    first_summary, highlights_div_offline, highlights_div_online, highlights_online,
    random_summary, DivParams, HighlightsParams, ImportanceKind, Summary,
};
use highlights_lrp::lrp::{saliency, ConvRule};
use highlights_lrp::net::{forward, load_network, NetworkSpec};
use highlights_lrp::streams::{load_stream, Stream};
use highlights_lrp::tensor::state_to_input;
use highlights_lrp::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    OutOfRange = 6,
    Encode = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlrpRule {
    Argmax = 0,
    Zplus = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlrpMode {
    Online = 0,
    DivOnline = 1,
    DivOffline = 2,
    Random = 3,
    First = 4,
}

/// Summary parameters. `hlrp_summary_params_default` fills the offline
/// defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlrpSummaryParams {
    pub k: usize,
    pub l: usize,
    pub interval_size: usize,
    pub states_after: usize,
    /// 0 = min-max importance, 1 = gap to the second-best action.
    pub importance: u32,
    pub sample_size: usize,
    pub percentile: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HlrpDiagnostics {
    pub dropped_relevance: f64,
    pub dropped_count: u64,
    pub nonpositive_argmax: u64,
}

pub struct HlrpNetwork {
    inner: NetworkSpec,
}

pub struct HlrpStream {
    inner: Stream,
}

pub struct HlrpSummary {
    inner: Summary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HlrpStatus {
    match e {
        Error::Io { .. } => HlrpStatus::Io,
        Error::Json { .. } | Error::Network(_) | Error::Stream(_) => HlrpStatus::Parse,
        Error::Shape(_) => HlrpStatus::Shape,
        Error::IndexOutOfRange { .. } => HlrpStatus::OutOfRange,
        Error::Encode(_) => HlrpStatus::Encode,
        _ => HlrpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HlrpStatus, String)>) -> HlrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlrpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside highlights_lrp".into());
            HlrpStatus::Panic
        }
    }
}

fn lift<T>(r: Result<T, Error>) -> Result<T, (HlrpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HlrpStatus, String) {
    (HlrpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (HlrpStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (HlrpStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (HlrpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (HlrpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hlrp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn hlrp_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hlrp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// --- network ----------------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn hlrp_network_load(dir: *const c_char, out: *mut *mut HlrpNetwork) -> HlrpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = lift(load_network(path_arg(dir)?))?;
        *out = Box::into_raw(Box::new(HlrpNetwork { inner: net }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hlrp_network_free(net: *mut HlrpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input dimensions `[h, w, c]` and action count.
#[no_mangle]
pub unsafe extern "C" fn hlrp_network_dims(
    net: *const HlrpNetwork,
    dims_out: *mut usize,
    num_actions_out: *mut usize,
) -> HlrpStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let dims = slice_out(dims_out, 3, "dims_out")?;
        let (h, w, c) = net.inner.input_shape;
        dims.copy_from_slice(&[h, w, c]);
        if !num_actions_out.is_null() {
            *num_actions_out = net.inner.num_actions();
        }
        Ok(())
    })
}

fn check_state(net: &NetworkSpec, len: usize) -> Result<(usize, usize, usize), (HlrpStatus, String)> {
    let (h, w, c) = net.input_shape;
    if len != h * w * c {
        return Err((
            HlrpStatus::Shape,
            format!("state has {len} bytes, network expects {}", h * w * c),
        ));
    }
    Ok((h, w, c))
}

/// Q-values for one `[h, w, c]` u8 state.
#[no_mangle]
pub unsafe extern "C" fn hlrp_network_forward(
    net: *const HlrpNetwork,
    state: *const u8,
    state_len: usize,
    q_out: *mut f32,
    q_len: usize,
) -> HlrpStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.inner;
        let dims = check_state(net, state_len)?;
        let state = slice_arg(state, state_len, "state")?;
        if q_len != net.num_actions() {
            return Err((HlrpStatus::Shape, format!("q buffer holds {q_len}, need {}", net.num_actions())));
        }
        let q = slice_out(q_out, q_len, "q_out")?;
        let trace = lift(forward(net, &lift(state_to_input(state, dims))?))?;
        q.copy_from_slice(&trace.q_values);
        Ok(())
    })
}

/// Relevance map (`[h, w, c]`, same layout as the state) for `action`.
/// `diag` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hlrp_saliency(
    net: *const HlrpNetwork,
    state: *const u8,
    state_len: usize,
    action: usize,
    rule: HlrpRule,
    map_out: *mut f32,
    map_len: usize,
    diag: *mut HlrpDiagnostics,
) -> HlrpStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.inner;
        let dims = check_state(net, state_len)?;
        let state = slice_arg(state, state_len, "state")?;
        if map_len != state_len {
            return Err((HlrpStatus::Shape, format!("map buffer holds {map_len}, need {state_len}")));
        }
        let out = slice_out(map_out, map_len, "map_out")?;
        let rule = match rule {
            HlrpRule::Argmax => ConvRule::Argmax,
            HlrpRule::Zplus => ConvRule::Zplus,
        };
        let trace = lift(forward(net, &lift(state_to_input(state, dims))?))?;
        let map = lift(saliency(net, &trace, action, rule))?;
        out.copy_from_slice(map.relevance.data());
        if let Some(d) = diag.as_mut() {
            *d = HlrpDiagnostics {
                dropped_relevance: map.diagnostics.dropped_relevance,
                dropped_count: map.diagnostics.dropped_count as u64,
                nonpositive_argmax: map.diagnostics.nonpositive_argmax as u64,
            };
        }
        Ok(())
    })
}

// --- stream -----------------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn hlrp_stream_load(dir: *const c_char, out: *mut *mut HlrpStream) -> HlrpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = lift(load_stream(path_arg(dir)?))?;
        *out = Box::into_raw(Box::new(HlrpStream { inner: s }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hlrp_stream_free(stream: *mut HlrpStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Number of records; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn hlrp_stream_len(stream: *const HlrpStream) -> usize {
    stream.as_ref().map_or(0, |s| s.inner.len())
}

/// Borrowed pointer to record `index`'s state bytes; valid while the stream lives.
#[no_mangle]
pub unsafe extern "C" fn hlrp_stream_state(
    stream: *const HlrpStream,
    index: usize,
    state_out: *mut *const u8,
    len_out: *mut usize,
) -> HlrpStatus {
    guard(|| {
        let s = &stream.as_ref().ok_or_else(|| null("stream"))?.inner;
        if state_out.is_null() || len_out.is_null() {
            return Err(null("out"));
        }
        let r = lift(s.get(index))?;
        *state_out = r.state.as_ptr();
        *len_out = r.state.len();
        Ok(())
    })
}

// --- summaries --------------------------------------------------------------

#[no_mangle]
pub extern "C" fn hlrp_summary_params_default() -> HlrpSummaryParams {
    let p = HighlightsParams::offline_default();
    let d = DivParams::default();
    HlrpSummaryParams {
        k: p.k,
        l: p.l,
        interval_size: p.interval_size,
        states_after: p.states_after,
        importance: 1,
        sample_size: d.sample_size,
        percentile: d.percentile,
        seed: d.seed,
    }
}

#[no_mangle]
pub unsafe extern "C" fn hlrp_summarize(
    stream: *const HlrpStream,
    mode: HlrpMode,
    params: *const HlrpSummaryParams,
    out: *mut *mut HlrpSummary,
) -> HlrpStatus {
    guard(|| {
        let s = &stream.as_ref().ok_or_else(|| null("stream"))?.inner;
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let hp = HighlightsParams {
            k: p.k,
            l: p.l,
            interval_size: p.interval_size,
            states_after: p.states_after,
            num_simulations: None,
            importance: match p.importance {
                0 => ImportanceKind::Minmax,
                1 => ImportanceKind::Second,
                v => return Err((HlrpStatus::InvalidArgument, format!("unknown importance {v}"))),
            },
        };
        let div = DivParams {
            sample_size: p.sample_size,
            percentile: p.percentile,
            seed: p.seed,
        };
        let summary = lift(match mode {
            HlrpMode::Online => highlights_online(s, &hp),
            HlrpMode::DivOnline => highlights_div_online(s, &hp, &div),
            HlrpMode::DivOffline => highlights_div_offline(s, &hp, &div),
            HlrpMode::Random => random_summary(s, &hp, p.seed),
            HlrpMode::First => first_summary(s, &hp),
        })?;
        *out = Box::into_raw(Box::new(HlrpSummary { inner: summary }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hlrp_summary_free(summary: *mut HlrpSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Number of trajectories; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn hlrp_summary_len(summary: *const HlrpSummary) -> usize {
    summary.as_ref().map_or(0, |s| s.inner.trajectories.len())
}

/// Base record, importance and length of trajectory `i`. Any out pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hlrp_summary_trajectory(
    summary: *const HlrpSummary,
    i: usize,
    base_out: *mut usize,
    importance_out: *mut f64,
    len_out: *mut usize,
) -> HlrpStatus {
    guard(|| {
        let s = &summary.as_ref().ok_or_else(|| null("summary"))?.inner;
        let t = s.trajectories.get(i).ok_or_else(|| {
            (
                HlrpStatus::OutOfRange,
                format!("trajectory {i} out of range ({})", s.trajectories.len()),
            )
        })?;
        if let Some(b) = base_out.as_mut() {
            *b = t.base_index;
        }
        if let Some(v) = importance_out.as_mut() {
            *v = t.importance;
        }
        if let Some(n) = len_out.as_mut() {
            *n = t.indices.len();
        }
        Ok(())
    })
}

/// Copies trajectory `i`'s record indices into `indices_out` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn hlrp_summary_indices(
    summary: *const HlrpSummary,
    i: usize,
    indices_out: *mut usize,
    cap: usize,
) -> HlrpStatus {
    guard(|| {
        let s = &summary.as_ref().ok_or_else(|| null("summary"))?.inner;
        let t = s.trajectories.get(i).ok_or_else(|| {
            (
                HlrpStatus::OutOfRange,
                format!("trajectory {i} out of range ({})", s.trajectories.len()),
            )
        })?;
        if cap < t.indices.len() {
            return Err((HlrpStatus::Shape, format!("buffer holds {cap}, need {}", t.indices.len())));
        }
        slice_out(indices_out, t.indices.len(), "indices_out")?.copy_from_slice(&t.indices);
        Ok(())
    })
}

/// Summary as JSON; release with `hlrp_string_free`.
#[no_mangle]
pub unsafe extern "C" fn hlrp_summary_json(summary: *const HlrpSummary, out: *mut *mut c_char) -> HlrpStatus {
    guard(|| {
        let s = &summary.as_ref().ok_or_else(|| null("summary"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(s).map_err(|e| (HlrpStatus::Encode, e.to_string()))?;
        *out = CString::new(text).unwrap().into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hlrp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
