//! C ABI over the `subgen` streaming attention estimator.
//!
//! Every fallible function returns a [`SubgenStatus`]; on failure a message is
//! available from [`subgen_last_error_message`] on the same thread. States are
//! opaque handles created by `subgen_state_new*` and released with
//! [`subgen_state_free`]. Vectors are passed as `(pointer, d)` pairs of
//! doubles; matrices are row-major `n × d`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use subgen::{AccuracyParams, Error, ExactCache, SizeConstants, TokenTriplet};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    EmptyState = 5,
    Format = 6,
    BufferTooSmall = 7,
    ClusterabilityRegime = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque streaming state.
pub struct SubgenState {
    inner: subgen::SubGenState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubgenMemoryFootprint {
    pub vectors_stored: u64,
    pub scalars_stored: u64,
    pub bytes_estimate: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubgenStateInfo {
    pub d: usize,
    pub t: usize,
    pub s: usize,
    pub n: u64,
    pub m_prime: usize,
    pub delta: f64,
    pub mu: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SubgenStatus {
    match e {
        Error::NoTokens | Error::EmptyStream => SubgenStatus::EmptyState,
        Error::DimensionMismatch { .. } => SubgenStatus::DimensionMismatch,
        Error::NonFinite(_) => SubgenStatus::NonFinite,
        Error::ClusterabilityRegime(_) => SubgenStatus::ClusterabilityRegime,
        Error::Format(_) => SubgenStatus::Format,
        Error::Io(_) | Error::Csv(_) => SubgenStatus::Io,
        _ => SubgenStatus::InvalidArgument,
    }
}

struct Fail(SubgenStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SubgenStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SubgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SubgenStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            SubgenStatus::Panic
        }
    }
}

unsafe fn vec_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn vec_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn state_ref<'a>(st: *const SubgenState) -> Result<&'a subgen::SubGenState, Fail> {
    st.as_ref().map(|s| &s.inner).ok_or_else(|| null("state"))
}

unsafe fn state_mut<'a>(st: *mut SubgenState) -> Result<&'a mut subgen::SubGenState, Fail> {
    st.as_mut().map(|s| &mut s.inner).ok_or_else(|| null("state"))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn check_dim(st: &subgen::SubGenState, d: usize) -> Result<(), Fail> {
    if d != st.dim() {
        return Err(Error::DimensionMismatch {
            expected: st.dim(),
            got: d,
        }
        .into());
    }
    Ok(())
}

fn box_state(inner: subgen::SubGenState) -> *mut SubgenState {
    Box::into_raw(Box::new(SubgenState { inner }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn subgen_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread ("" after a success).
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn subgen_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code; unknown codes give "unknown status".
#[no_mangle]
pub extern "C" fn subgen_status_name(status: i32) -> *const c_char {
    const NAMES: [&CStr; 11] = [
        c"ok",
        c"null pointer",
        c"invalid argument",
        c"dimension mismatch",
        c"non-finite input",
        c"empty state",
        c"format error",
        c"buffer too small",
        c"clusterability regime violated",
        c"i/o error",
        c"internal panic",
    ];
    usize::try_from(status)
        .ok()
        .and_then(|i| NAMES.get(i))
        .copied()
        .unwrap_or(c"unknown status")
        .as_ptr()
}

/// Reservoir size `t` and sampler size `s` for an accuracy target.
///
/// # Safety
/// `out_t` and `out_s` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_derive_sizes(
    epsilon: f64,
    r: f64,
    delta: f64,
    n_max: f64,
    d: usize,
    c_t: f64,
    c_s: f64,
    out_t: *mut usize,
    out_s: *mut usize,
) -> SubgenStatus {
    guard(|| {
        if out_t.is_null() || out_s.is_null() {
            return Err(null("output"));
        }
        let params = AccuracyParams {
            epsilon,
            r,
            delta,
            n_max,
        };
        let (t, s) = subgen::derive_sizes(&params, d, SizeConstants { c_t, c_s })?;
        store(out_t, t, "out_t")?;
        store(out_s, s, "out_s")
    })
}

/// Creates a state with explicit reservoir size `t`, sampler size `s` and
/// cluster radius `delta`.
///
/// # Safety
/// `out` must be valid for writes. The handle must be released with
/// [`subgen_state_free`].
#[no_mangle]
pub unsafe extern "C" fn subgen_state_new(
    d: usize,
    t: usize,
    s: usize,
    delta: f64,
    seed: u64,
    out: *mut *mut SubgenState,
) -> SubgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let st = subgen::SubGenState::new(d, t, s, delta, seed)?;
        store(out, box_state(st), "out")
    })
}

/// Creates a state sized from an accuracy target with unit size constants.
///
/// # Safety
/// As [`subgen_state_new`].
#[no_mangle]
pub unsafe extern "C" fn subgen_state_new_with_accuracy(
    d: usize,
    epsilon: f64,
    r: f64,
    delta: f64,
    n_max: f64,
    seed: u64,
    out: *mut *mut SubgenState,
) -> SubgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = AccuracyParams {
            epsilon,
            r,
            delta,
            n_max,
        };
        let st = subgen::SubGenState::with_accuracy(d, &params, SizeConstants::default(), seed)?;
        store(out, box_state(st), "out")
    })
}

/// Releases a state. Null is ignored.
///
/// # Safety
/// `st` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_free(st: *mut SubgenState) {
    if !st.is_null() {
        drop(Box::from_raw(st));
    }
}

/// Deep copy of a state, including its random stream.
///
/// # Safety
/// `st` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_clone(
    st: *const SubgenState,
    out: *mut *mut SubgenState,
) -> SubgenStatus {
    guard(|| {
        let inner = state_ref(st)?.clone();
        store(out, box_state(inner), "out")
    })
}

/// Adds one key/value pair without querying.
///
/// # Safety
/// `k` and `v` must point to `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_ingest(
    st: *mut SubgenState,
    k: *const f64,
    v: *const f64,
    d: usize,
) -> SubgenStatus {
    guard(|| {
        let st = state_mut(st)?;
        check_dim(st, d)?;
        st.ingest(vec_in(k, d, "k")?, vec_in(v, d, "v")?)?;
        Ok(())
    })
}

/// Ingests `(k, v)` and writes the attention estimate for `q` into `out_z`.
///
/// # Safety
/// `q`, `k`, `v` must point to `d` doubles and `out_z` to room for `d`.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_process_token(
    st: *mut SubgenState,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    d: usize,
    out_z: *mut f64,
) -> SubgenStatus {
    guard(|| {
        let st = state_mut(st)?;
        check_dim(st, d)?;
        let out = vec_out(out_z, d, "out_z")?;
        let token = TokenTriplet::new(
            vec_in(q, d, "q")?.to_vec(),
            vec_in(k, d, "k")?.to_vec(),
            vec_in(v, d, "v")?.to_vec(),
        )?;
        let z = st.process_token(&token)?;
        out.copy_from_slice(&z.0);
        Ok(())
    })
}

/// Attention estimate for `q` over everything ingested so far.
///
/// # Safety
/// `q` must point to `d` doubles and `out_z` to room for `d`.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_query(
    st: *const SubgenState,
    q: *const f64,
    d: usize,
    out_z: *mut f64,
) -> SubgenStatus {
    guard(|| {
        let st = state_ref(st)?;
        check_dim(st, d)?;
        let out = vec_out(out_z, d, "out_z")?;
        let z = st.query(vec_in(q, d, "q")?)?;
        out.copy_from_slice(&z.0);
        Ok(())
    })
}

/// # Safety
/// `st` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_memory_footprint(
    st: *const SubgenState,
    out: *mut SubgenMemoryFootprint,
) -> SubgenStatus {
    guard(|| {
        let m = state_ref(st)?.memory_footprint();
        store(
            out,
            SubgenMemoryFootprint {
                vectors_stored: m.vectors_stored,
                scalars_stored: m.scalars_stored,
                bytes_estimate: m.bytes_estimate,
            },
            "out",
        )
    })
}

/// # Safety
/// `st` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_info(
    st: *const SubgenState,
    out: *mut SubgenStateInfo,
) -> SubgenStatus {
    guard(|| {
        let s = state_ref(st)?;
        store(
            out,
            SubgenStateInfo {
                d: s.dim(),
                t: s.t(),
                s: s.s(),
                n: s.n(),
                m_prime: s.m_prime(),
                delta: s.delta(),
                mu: s.mu(),
            },
            "out",
        )
    })
}

/// Size in bytes of the state's snapshot.
///
/// # Safety
/// `st` must be a live handle and `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_snapshot_len(
    st: *const SubgenState,
    out_len: *mut usize,
) -> SubgenStatus {
    guard(|| store(out_len, state_ref(st)?.snapshot_len(), "out_len"))
}

/// Writes the snapshot into `buf`. Fails with `BufferTooSmall` (and stores
/// the required size in `out_written`) when `cap` is insufficient.
///
/// # Safety
/// `buf` must be valid for `cap` bytes of writes; `out_written` for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_snapshot_write(
    st: *const SubgenState,
    buf: *mut u8,
    cap: usize,
    out_written: *mut usize,
) -> SubgenStatus {
    guard(|| {
        let st = state_ref(st)?;
        if out_written.is_null() {
            return Err(null("out_written"));
        }
        let len = st.snapshot_len();
        store(out_written, len, "out_written")?;
        if cap < len {
            return Err(Fail(
                SubgenStatus::BufferTooSmall,
                format!("snapshot needs {len} bytes, buffer holds {cap}"),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let bytes = st.to_snapshot();
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, len);
        Ok(())
    })
}

/// Restores a state from snapshot bytes.
///
/// # Safety
/// `buf` must be valid for `len` bytes; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn subgen_state_snapshot_read(
    buf: *const u8,
    len: usize,
    out: *mut *mut SubgenState,
) -> SubgenStatus {
    guard(|| {
        if buf.is_null() {
            return Err(null("buf"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let st = subgen::SubGenState::from_snapshot(slice::from_raw_parts(buf, len))?;
        store(out, box_state(st), "out")
    })
}

unsafe fn cache_from(keys: *const f64, values: *const f64, n: usize, d: usize) -> Result<ExactCache, Fail> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()).into());
    }
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Fail(SubgenStatus::InvalidArgument, "n * d overflows".into()))?;
    let k = vec_in(keys, len, "keys")?;
    let v = vec_in(values, len, "values")?;
    let rows = |m: &[f64]| m.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
    Ok(ExactCache::from_rows(rows(k), rows(v))?)
}

/// Exact softmax attention of `q` over `n` row-major keys and values.
///
/// # Safety
/// `keys` and `values` must hold `n * d` doubles; `q` and `out_z` `d`.
#[no_mangle]
pub unsafe extern "C" fn subgen_exact_attention(
    keys: *const f64,
    values: *const f64,
    n: usize,
    d: usize,
    q: *const f64,
    out_z: *mut f64,
) -> SubgenStatus {
    guard(|| {
        let cache = cache_from(keys, values, n, d)?;
        let out = vec_out(out_z, d, "out_z")?;
        let z = subgen::exact_attention(&cache, vec_in(q, d, "q")?)?;
        out.copy_from_slice(&z.0);
        Ok(())
    })
}

/// Spectral error of estimate `z` against exact attention.
///
/// # Safety
/// `keys` and `values` must hold `n * d` doubles; `q` and `z` `d`.
#[no_mangle]
pub unsafe extern "C" fn subgen_spectral_error(
    keys: *const f64,
    values: *const f64,
    n: usize,
    d: usize,
    q: *const f64,
    z: *const f64,
    out_error: *mut f64,
) -> SubgenStatus {
    guard(|| {
        let cache = cache_from(keys, values, n, d)?;
        let e = subgen::spectral_error(
            &subgen::AttnVector(vec_in(z, d, "z")?.to_vec()),
            &cache,
            vec_in(q, d, "q")?,
        )?;
        store(out_error, e, "out_error")
    })
}
