//! C ABI over `symdiff`.
//!
//! Conventions:
//! * every fallible function returns an [`SdStatus`]; on failure
//!   [`sd_last_error`] describes the problem for the calling thread;
//! * permutations are arrays of `n` zero-based `size_t` images;
//! * objects created by `*_new` / `*_load` are released with the matching
//!   `*_free`; strings returned through `char **` are released with
//!   [`sd_string_free`].
//!
//! # Safety
//!
//! Every pointer argument must be NULL or valid for the stated length;
//! NULL is reported as [`SdStatus::NullPointer`]. Handles must come from this
//! library and must not be used after they are freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use symdiff::diffusion::{decode_beam, Checkpoint};
use symdiff::mixing::{plan_schedule, EulerianTable};
use symdiff::perm::{ObjectList, Permutation};
use symdiff::reverse::ReverseParams;
use symdiff::rng::{seeded, stream, SdRng};
use symdiff::shuffles::{pmf_one_step, pmf_rs_tstep, sample_step, ShuffleKind};
use symdiff::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    InvalidPermutation = 4,
    Numerical = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// Precomputed rising-sequence counts for riffle shuffles on `n` cards.
pub struct SdEulerian {
    table: EulerianTable,
}

/// Seeded random generator.
pub struct SdRandom {
    rng: SdRng,
}

/// One reverse-transition distribution.
pub struct SdReverse {
    params: ReverseParams,
}

/// A trained score network with its denoising schedule.
pub struct SdModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::OutOfRange { .. } => SdStatus::OutOfRange,
            Error::InvalidPermutation(_) => SdStatus::InvalidPermutation,
            Error::Numerical(_) => SdStatus::Numerical,
            Error::Io(_) => SdStatus::Io,
            Error::Serde(_) => SdStatus::Parse,
            _ => SdStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SdStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(SdStatus::InvalidArgument, msg.into())
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad(format!("{what} is not UTF-8")))
}

unsafe fn read_perm(p: *const usize, n: usize) -> Result<Permutation, Fail> {
    Ok(Permutation::from_vec(slice(p, n, "perm")?.to_vec())?)
}

fn write_perm(sigma: &Permutation, out: &mut [usize]) -> FfiResult {
    if out.len() != sigma.len() {
        return Err(bad(format!(
            "output holds {} entries, need {}",
            out.len(),
            sigma.len()
        )));
    }
    out.copy_from_slice(sigma.as_slice());
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    *as_mut(out, what)? = value;
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult {
    let c = CString::new(s).map_err(|_| bad("string contains NUL"))?;
    put(out, c.into_raw(), "out")
}

unsafe fn put_box<T>(out: *mut *mut T, value: T) -> FfiResult {
    put(out, Box::into_raw(Box::new(value)), "out")
}

fn parse_kind(s: &str) -> Result<ShuffleKind, Fail> {
    Ok(s.parse::<ShuffleKind>()?)
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of rising sequences of `perm`.
#[no_mangle]
pub unsafe extern "C" fn sd_rising_sequences(
    perm: *const usize,
    n: usize,
    out: *mut usize,
) -> SdStatus {
    guard(|| put(out, read_perm(perm, n)?.rising_sequences(), "out"))
}

/// One-step probability of `perm` under shuffle `kind` ("RT", "RI", "RS").
#[no_mangle]
pub unsafe extern "C" fn sd_pmf_one_step(
    kind: *const c_char,
    perm: *const usize,
    n: usize,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let k = parse_kind(string(kind, "kind")?)?;
        put(out, pmf_one_step(k, &read_perm(perm, n)?), "out")
    })
}

/// Probability of `perm` after `t` riffle shuffles.
#[no_mangle]
pub unsafe extern "C" fn sd_pmf_rs_tstep(
    perm: *const usize,
    n: usize,
    t: u32,
    out: *mut f64,
) -> SdStatus {
    guard(|| put(out, pmf_rs_tstep(&read_perm(perm, n)?, t), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn sd_eulerian_new(n: usize, out: *mut *mut SdEulerian) -> SdStatus {
    guard(|| {
        put_box(
            out,
            SdEulerian {
                table: EulerianTable::new(n)?,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_eulerian_free(h: *mut SdEulerian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Total variation between `t` riffle shuffles and the uniform distribution.
#[no_mangle]
pub unsafe extern "C" fn sd_eulerian_tv_to_uniform(
    h: *const SdEulerian,
    t: u32,
    out: *mut f64,
) -> SdStatus {
    guard(|| put(out, as_ref(h, "handle")?.table.tv_to_uniform(t), "out"))
}

/// Total variation between `t` and `t_prime` riffle shuffles.
#[no_mangle]
pub unsafe extern "C" fn sd_eulerian_tv_between(
    h: *const SdEulerian,
    t: u32,
    t_prime: u32,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        put(
            out,
            as_ref(h, "handle")?.table.tv_between(t, t_prime),
            "out",
        )
    })
}

/// Planned horizon and schedule as a JSON object `{n, T, schedule, consecutive_tv}`.
#[no_mangle]
pub unsafe extern "C" fn sd_plan_schedule(
    n: usize,
    eps_t: f64,
    gap: f64,
    out_json: *mut *mut c_char,
) -> SdStatus {
    guard(|| {
        if !(eps_t > 0.0 && eps_t < 1.0 && gap > 0.0 && gap < 1.0) {
            return Err(bad("eps_t and gap must lie in (0, 1)"));
        }
        let plan = plan_schedule(n, eps_t, gap)?;
        put_string(
            out_json,
            serde_json::to_string(&plan).map_err(|e| bad(e.to_string()))?,
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_rng_new(seed: u64, out: *mut *mut SdRandom) -> SdStatus {
    guard(|| put_box(out, SdRandom { rng: seeded(seed) }))
}

/// Independent stream `index` under `seed`.
#[no_mangle]
pub unsafe extern "C" fn sd_rng_stream(seed: u64, index: u64, out: *mut *mut SdRandom) -> SdStatus {
    guard(|| {
        put_box(
            out,
            SdRandom {
                rng: stream(seed, index),
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_rng_free(h: *mut SdRandom) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Draws one step of shuffle `kind` on `n` cards into `out_perm`.
#[no_mangle]
pub unsafe extern "C" fn sd_sample_shuffle_step(
    kind: *const c_char,
    n: usize,
    rng: *mut SdRandom,
    out_perm: *mut usize,
) -> SdStatus {
    guard(|| {
        let k = parse_kind(string(kind, "kind")?)?;
        if n == 0 {
            return Err(bad("n must be >= 1"));
        }
        let rng = as_mut(rng, "rng")?;
        write_perm(
            &sample_step(k, n, &mut rng.rng),
            slice_mut(out_perm, n, "out_perm")?,
        )
    })
}

/// Builds a reverse distribution from JSON such as
/// `{"kind":"PL","s":[0.1,0.2]}` or `{"kind":"GPL","S":[[...],...]}`.
#[no_mangle]
pub unsafe extern "C" fn sd_reverse_from_json(
    json: *const c_char,
    out: *mut *mut SdReverse,
) -> SdStatus {
    guard(|| {
        let text = string(json, "json")?;
        let params: ReverseParams =
            serde_json::from_str(text).map_err(|e| Fail(SdStatus::Parse, e.to_string()))?;
        put_box(
            out,
            SdReverse {
                params: params.validated()?,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_reverse_free(h: *mut SdReverse) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sd_reverse_n(h: *const SdReverse, out: *mut usize) -> SdStatus {
    guard(|| put(out, as_ref(h, "handle")?.params.n(), "out"))
}

/// Natural log-probability of `perm`; `-inf` off the support.
#[no_mangle]
pub unsafe extern "C" fn sd_reverse_log_prob(
    h: *const SdReverse,
    perm: *const usize,
    n: usize,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let h = as_ref(h, "handle")?;
        put(out, h.params.log_prob(&read_perm(perm, n)?)?, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_reverse_sample(
    h: *const SdReverse,
    rng: *mut SdRandom,
    out_perm: *mut usize,
    n: usize,
) -> SdStatus {
    guard(|| {
        let h = as_ref(h, "handle")?;
        let rng = as_mut(rng, "rng")?;
        write_perm(
            &h.params.sample(&mut rng.rng),
            slice_mut(out_perm, n, "out_perm")?,
        )
    })
}

/// Up to `k` most likely permutations, best first. `out_perms` holds
/// `k * n` entries and `out_log_probs` holds `k`; `out_count` receives the
/// number actually written.
#[no_mangle]
pub unsafe extern "C" fn sd_reverse_top_k(
    h: *const SdReverse,
    k: usize,
    inner_beam: usize,
    out_perms: *mut usize,
    out_log_probs: *mut f64,
    out_count: *mut usize,
) -> SdStatus {
    guard(|| {
        let h = as_ref(h, "handle")?;
        let n = h.params.n();
        let best = h.params.top_k(k, inner_beam)?;
        let perms = slice_mut(out_perms, k * n, "out_perms")?;
        let lps = slice_mut(out_log_probs, k, "out_log_probs")?;
        for (i, (sigma, lp)) in best.iter().enumerate() {
            write_perm(sigma, &mut perms[i * n..(i + 1) * n])?;
            lps[i] = *lp;
        }
        put(out_count, best.len(), "out_count")
    })
}

/// Loads a training checkpoint from a JSON string.
#[no_mangle]
pub unsafe extern "C" fn sd_model_from_json(
    json: *const c_char,
    out: *mut *mut SdModel,
) -> SdStatus {
    guard(|| {
        let checkpoint = Checkpoint::from_json(string(json, "json")?)?;
        put_box(out, SdModel { checkpoint })
    })
}

/// Loads a training checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn sd_model_load(path: *const c_char, out: *mut *mut SdModel) -> SdStatus {
    guard(|| {
        let path = string(path, "path")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Fail(SdStatus::Io, format!("{path}: {e}")))?;
        put_box(
            out,
            SdModel {
                checkpoint: Checkpoint::from_json(&text)?,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_model_free(h: *mut SdModel) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// List length the model was trained on.
#[no_mangle]
pub unsafe extern "C" fn sd_model_n(h: *const SdModel, out: *mut usize) -> SdStatus {
    guard(|| put(out, as_ref(h, "handle")?.checkpoint.task.n, "out"))
}

/// Reverse distribution the network predicts for scalars `values` at time
/// `t`, as JSON in the format accepted by [`sd_reverse_from_json`].
#[no_mangle]
pub unsafe extern "C" fn sd_model_forward_json(
    h: *const SdModel,
    values: *const f64,
    n: usize,
    t: u32,
    out_json: *mut *mut c_char,
) -> SdStatus {
    guard(|| {
        let h = as_ref(h, "handle")?;
        let x = ObjectList::from_scalars(slice(values, n, "values")?)?;
        let params = h.checkpoint.net.reverse_params(&x, t)?;
        put_string(
            out_json,
            serde_json::to_string(&params).map_err(|e| bad(e.to_string()))?,
        )
    })
}

/// Beam-search decoding over the model's schedule. `out_perm[i]` is the
/// index of the value placed at position `i`.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn sd_model_decode(
    h: *const SdModel,
    values: *const f64,
    n: usize,
    outer_beam: usize,
    inner_beam: usize,
    restarts: usize,
    seed: u64,
    out_perm: *mut usize,
    out_log_prob: *mut f64,
) -> SdStatus {
    guard(|| {
        let h = as_ref(h, "handle")?;
        if outer_beam == 0 || inner_beam < outer_beam || restarts == 0 {
            return Err(bad("need 1 <= outer_beam <= inner_beam and restarts >= 1"));
        }
        let x = ObjectList::from_scalars(slice(values, n, "values")?)?;
        let ck = &h.checkpoint;
        let d = decode_beam(
            &ck.net,
            &x,
            &ck.schedule,
            outer_beam,
            inner_beam,
            restarts,
            &mut seeded(seed),
        )?;
        write_perm(&d.perm, slice_mut(out_perm, n, "out_perm")?)?;
        put(out_log_prob, d.log_prob, "out_log_prob")
    })
}
