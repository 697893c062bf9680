//! C ABI over the traceprobe engine.
//!
//! Every function returns a [`TpStatus`] (or a plain value where nothing can
//! fail). On failure the message is available from [`tp_last_error`] on the
//! same thread until the next failing call. Objects are opaque handles
//! created by `*_new`/`*_load`/`*_run`-style calls and released with the
//! matching `*_free`; passing NULL to a `*_free` is a no-op. Byte and text
//! results come back in a [`TpBuffer`] released with [`tp_buffer_free`].
//!
//! Observations are passed as `(const double *obs, size_t obs_len)` and fill
//! the model's observe sites in order; `obs == NULL` keeps the simulator's
//! own observed values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Duration;

use traceprobe::controller::{
    BatchError, ConditionSet, ControllerError, LocalSimulator, RemoteSimulator, Simulator,
};
use traceprobe::diagnostics::{
    autocorrelation, ess_chain, extract_graph, gelman_rubin, marginal, most_frequent_types, Binning,
    DiagnosticsError,
};
use traceprobe::importance::{infer_ic, infer_is, load_posterior, save_posterior, WeightedPosterior};
use traceprobe::mcmc::{run_chain, Chain, ChainConfig, ChainInit, Kernel, RwKernelConfig};
use traceprobe::neural::{load_network, ProposalNetwork};
use traceprobe::protocol::{decode, encode, parse_endpoints, Message, DEFAULT_TIMEOUT};
use traceprobe::trace::{load_traces, TraceIoError};
use traceprobe::Value;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    InvalidArgument = 2,
    /// Malformed message bytes or file contents.
    Decode = 3,
    Io = 4,
    /// Connection, protocol or simulator failure.
    Simulator = 5,
    /// The result is numerically degenerate (for example all weights zero).
    Numerical = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// MCMC proposal kernel.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpKernel {
    /// Single-site resampling from the prior.
    Lmh = 0,
    /// Gaussian random walk at continuous sites, prior elsewhere.
    Rmh = 1,
}

/// Heap bytes owned by the caller. `data[len]` is an extra NUL so text
/// results can be used as C strings.
#[repr(C)]
pub struct TpBuffer {
    pub data: *mut u8,
    pub len: usize,
}

pub struct TpMessage(Message);

/// A pool of simulators; inference runs one worker per member.
pub struct TpSimulator(Vec<Box<dyn Simulator>>);

pub struct TpPosterior(WeightedPosterior);

pub struct TpNetwork(ProposalNetwork);

pub struct TpChain(Chain);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (TpStatus, String);

fn fail<T>(status: TpStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err((status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TpStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either NULL or a pointer from this library.
    unsafe { p.as_ref() }.ok_or_else(|| (TpStatus::NullArgument, format!("{name} is NULL")))
}

fn non_null_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as for `non_null`, and the caller does not alias the handle.
    unsafe { p.as_mut() }.ok_or_else(|| (TpStatus::NullArgument, format!("{name} is NULL")))
}

fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(TpStatus::NullArgument, format!("{name} is NULL"));
    }
    // SAFETY: non-NULL and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (TpStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(TpStatus::NullArgument, format!("{name} is NULL"));
    }
    // SAFETY: the caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return fail(TpStatus::NullArgument, format!("{name} is NULL"));
    }
    // SAFETY: the caller guarantees `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(TpStatus::NullArgument, format!("{name} is NULL"));
    }
    // SAFETY: non-NULL out pointer supplied by the caller.
    unsafe { out.write(v) };
    Ok(())
}

fn handle<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    put(out, Box::into_raw(Box::new(v)), "out")
}

fn buffer(out: *mut TpBuffer, mut bytes: Vec<u8>) -> Result<(), Failure> {
    let len = bytes.len();
    bytes.push(0);
    let data = Box::into_raw(bytes.into_boxed_slice()) as *mut u8;
    put(out, TpBuffer { data, len }, "out")
}

fn observation(obs: *const f64, len: usize) -> Result<Option<Value>, Failure> {
    if obs.is_null() {
        return Ok(None);
    }
    Ok(Some(Value::vector(slice(obs, len, "obs")?.to_vec())))
}

fn batch_failure(e: BatchError) -> Failure {
    let status = match e.source {
        ControllerError::InvalidConfig(_) | ControllerError::Observation(_) => TpStatus::InvalidArgument,
        _ => TpStatus::Simulator,
    };
    (status, e.to_string())
}

fn io_failure(path: &str, e: TraceIoError) -> Failure {
    let status = match e {
        TraceIoError::Io(_) => TpStatus::Io,
        TraceIoError::Corrupt { .. } => TpStatus::Decode,
    };
    (status, format!("{path}: {e}"))
}

/// Hands out the posterior, then reports degenerate weights, mirroring the
/// CLI which writes the file before failing.
fn posterior_out(out: *mut *mut TpPosterior, p: WeightedPosterior) -> Result<(), Failure> {
    let zero = p.ess() == 0.0;
    handle(out, TpPosterior(p))?;
    if zero {
        return fail(TpStatus::Numerical, "every importance weight is zero");
    }
    Ok(())
}

fn diag_failure(e: DiagnosticsError) -> Failure {
    (TpStatus::InvalidArgument, e.to_string())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `buf` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tp_buffer_free(buf: TpBuffer) {
    if !buf.data.is_null() {
        // SAFETY: `data` was produced by `buffer` with `len + 1` bytes.
        drop(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(buf.data, buf.len + 1)) });
    }
}

/// Decodes one message body (without the length prefix).
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_message_decode(data: *const u8, len: usize, out: *mut *mut TpMessage) -> TpStatus {
    guard(|| {
        let bytes = slice(data, len, "data")?;
        let m = decode(bytes).map_err(|e| (TpStatus::Decode, e.to_string()))?;
        handle(out, TpMessage(m))
    })
}

/// Canonical body bytes of `msg`.
///
/// # Safety
/// `msg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_message_encode(msg: *const TpMessage, out: *mut TpBuffer) -> TpStatus {
    guard(|| buffer(out, encode(&non_null(msg, "msg")?.0)))
}

/// Kind byte of `msg` (0 for NULL).
///
/// # Safety
/// `msg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_message_kind(msg: *const TpMessage) -> u8 {
    non_null(msg, "msg").map_or(0, |m| m.0.kind() as u8)
}

/// Human-readable rendering of `msg`.
///
/// # Safety
/// `msg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_message_describe(msg: *const TpMessage, out: *mut TpBuffer) -> TpStatus {
    guard(|| buffer(out, format!("{:?}", non_null(msg, "msg")?.0).into_bytes()))
}

/// # Safety
/// `msg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_message_free(msg: *mut TpMessage) {
    if !msg.is_null() {
        // SAFETY: created by `handle`.
        drop(unsafe { Box::from_raw(msg) });
    }
}

/// Connects to every endpoint of a comma-separated list
/// (`tcp://host:port`, `ipc://path`). `timeout_secs <= 0` uses the default.
///
/// # Safety
/// `endpoints` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_simulator_connect(
    endpoints: *const c_char,
    timeout_secs: f64,
    out: *mut *mut TpSimulator,
) -> TpStatus {
    guard(|| {
        let list = text(endpoints, "endpoints")?;
        let eps = parse_endpoints(list).map_err(|e| (TpStatus::InvalidArgument, e.to_string()))?;
        if eps.is_empty() {
            return fail(TpStatus::InvalidArgument, "no endpoint given");
        }
        let timeout = if timeout_secs > 0.0 && timeout_secs.is_finite() {
            Duration::from_secs_f64(timeout_secs)
        } else {
            DEFAULT_TIMEOUT
        };
        let mut sims: Vec<Box<dyn Simulator>> = Vec::new();
        for e in &eps {
            let s = RemoteSimulator::connect(e, Some(timeout))
                .map_err(|err| (TpStatus::Simulator, format!("{e}: {err}")))?;
            sims.push(Box::new(s));
        }
        handle(out, TpSimulator(sims))
    })
}

/// `workers` in-process instances of a built-in reference model.
///
/// # Safety
/// `model` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_simulator_local(
    model: *const c_char,
    workers: usize,
    out: *mut *mut TpSimulator,
) -> TpStatus {
    guard(|| {
        let name = text(model, "model")?;
        if workers == 0 {
            return fail(TpStatus::InvalidArgument, "workers must be at least 1");
        }
        let mut sims: Vec<Box<dyn Simulator>> = Vec::new();
        for _ in 0..workers {
            let m = traceprobe::reference::by_name(name)
                .ok_or_else(|| (TpStatus::InvalidArgument, format!("unknown model {name:?}")))?;
            sims.push(Box::new(LocalSimulator::new(m)));
        }
        handle(out, TpSimulator(sims))
    })
}

/// # Safety
/// `sim` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_simulator_free(sim: *mut TpSimulator) {
    if !sim.is_null() {
        // SAFETY: created by `handle`.
        drop(unsafe { Box::from_raw(sim) });
    }
}

/// Prior-proposal importance sampling over `n` traces. On
/// [`TpStatus::Numerical`] (all weights zero) `*out` is still set and must be freed.
///
/// # Safety
/// `sim` must be a live handle, `obs` NULL or `obs_len` readable doubles,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_infer_is(
    sim: *mut TpSimulator,
    obs: *const f64,
    obs_len: usize,
    n: usize,
    seed: u64,
    out: *mut *mut TpPosterior,
) -> TpStatus {
    guard(|| {
        let sims = non_null_mut(sim, "sim")?;
        let obs = observation(obs, obs_len)?;
        let p = infer_is(&mut sims.0, &ConditionSet::new(), obs.as_ref(), n, seed).map_err(batch_failure)?;
        posterior_out(out, p)
    })
}

/// Importance sampling with a trained network's proposals. The network
/// conditions on the observation, so `obs` is required.
///
/// # Safety
/// As [`tp_infer_is`], and `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_infer_ic(
    sim: *mut TpSimulator,
    net: *const TpNetwork,
    obs: *const f64,
    obs_len: usize,
    n: usize,
    seed: u64,
    out: *mut *mut TpPosterior,
) -> TpStatus {
    guard(|| {
        let sims = non_null_mut(sim, "sim")?;
        let net = non_null(net, "net")?;
        let obs = observation(obs, obs_len)?;
        let p = infer_ic(&mut sims.0, &net.0, &ConditionSet::new(), obs.as_ref(), n, seed)
            .map_err(batch_failure)?;
        posterior_out(out, p)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_network_load(path: *const c_char, out: *mut *mut TpNetwork) -> TpStatus {
    guard(|| {
        let p = text(path, "path")?;
        let net = load_network(&PathBuf::from(p)).map_err(|e| {
            let status = match e {
                traceprobe::neural::NetworkIoError::Io(_) => TpStatus::Io,
                _ => TpStatus::Decode,
            };
            (status, format!("{p}: {e}"))
        })?;
        handle(out, TpNetwork(net))
    })
}

/// # Safety
/// `net` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_network_free(net: *mut TpNetwork) {
    if !net.is_null() {
        // SAFETY: created by `handle`.
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Number of weighted traces (0 for NULL).
///
/// # Safety
/// `post` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_len(post: *const TpPosterior) -> usize {
    non_null(post, "post").map_or(0, |p| p.0.len())
}

/// Effective sample size `(Σw)² / Σw²`.
///
/// # Safety
/// `post` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_ess(post: *const TpPosterior, out: *mut f64) -> TpStatus {
    guard(|| put(out, non_null(post, "post")?.0.ess(), "out"))
}

/// Log of the mean unnormalized weight.
///
/// # Safety
/// `post` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_log_evidence(post: *const TpPosterior, out: *mut f64) -> TpStatus {
    guard(|| put(out, non_null(post, "post")?.0.log_evidence(), "out"))
}

/// Unnormalized log weight of trace `index`.
///
/// # Safety
/// `post` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_log_weight(post: *const TpPosterior, index: usize, out: *mut f64) -> TpStatus {
    guard(|| {
        let p = non_null(post, "post")?;
        let w = p.0.log_weights().get(index).copied().ok_or_else(|| {
            (TpStatus::InvalidArgument, format!("index {index} out of range for {} traces", p.0.len()))
        })?;
        put(out, w, "out")
    })
}

/// Weighted mean and variance of the value at `address#instance`.
///
/// # Safety
/// `post` must be a live handle, `address` NUL-terminated, `mean` and
/// `variance` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_moments(
    post: *const TpPosterior,
    address: *const c_char,
    instance: u32,
    mean: *mut f64,
    variance: *mut f64,
) -> TpStatus {
    guard(|| {
        let p = non_null(post, "post")?;
        let a = text(address, "address")?;
        let (m, v) = p
            .0
            .moments(a, instance)
            .ok_or_else(|| (TpStatus::InvalidArgument, format!("{a}#{instance} has no real values")))?;
        put(mean, m, "mean")?;
        put(variance, v, "variance")
    })
}

/// Weighted marginal over integer classes `0..classes` at `address#instance`.
/// Writes `classes` masses to `out`; mass of traces lacking the site or
/// with values outside the classes is not included.
///
/// # Safety
/// `post` must be a live handle, `address` NUL-terminated, `out` writable
/// for `classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_class_marginal(
    post: *const TpPosterior,
    address: *const c_char,
    instance: u32,
    classes: usize,
    out: *mut f64,
) -> TpStatus {
    guard(|| {
        let p = non_null(post, "post")?;
        let a = text(address, "address")?;
        let h = marginal(&p.0, a, instance, &Binning::Classes(classes)).map_err(diag_failure)?;
        out_slice(out, classes, "out")?.copy_from_slice(&h.masses);
        Ok(())
    })
}

/// # Safety
/// `post` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_save(post: *const TpPosterior, path: *const c_char) -> TpStatus {
    guard(|| {
        let p = non_null(post, "post")?;
        let path = text(path, "path")?;
        save_posterior(&PathBuf::from(path), &p.0).map_err(|e| io_failure(path, e))
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_load(path: *const c_char, out: *mut *mut TpPosterior) -> TpStatus {
    guard(|| {
        let path = text(path, "path")?;
        let (_, p) = load_posterior(&PathBuf::from(path)).map_err(|e| io_failure(path, e))?;
        handle(out, TpPosterior(p))
    })
}

/// # Safety
/// `post` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_posterior_free(post: *mut TpPosterior) {
    if !post.is_null() {
        // SAFETY: created by `handle`.
        drop(unsafe { Box::from_raw(post) });
    }
}

/// Runs one chain from a prior draw on the pool's first simulator. Samples
/// are kept after `burn_in` steps, every `thinning`-th step.
///
/// # Safety
/// `sim` must be a live handle, `obs` NULL or `obs_len` readable doubles,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_run(
    sim: *mut TpSimulator,
    kernel: TpKernel,
    sigma: f64,
    steps: usize,
    burn_in: usize,
    thinning: usize,
    seed: u64,
    obs: *const f64,
    obs_len: usize,
    out: *mut *mut TpChain,
) -> TpStatus {
    guard(|| {
        let sims = non_null_mut(sim, "sim")?;
        if thinning == 0 {
            return fail(TpStatus::InvalidArgument, "thinning must be at least 1");
        }
        let kernel = match kernel {
            TpKernel::Lmh => Kernel::Prior,
            TpKernel::Rmh if sigma >= 0.0 && sigma.is_finite() => Kernel::RandomWalk(RwKernelConfig { sigma }),
            TpKernel::Rmh => return fail(TpStatus::InvalidArgument, format!("sigma {sigma} must be non-negative")),
        };
        let obs = observation(obs, obs_len)?;
        let cfg = ChainConfig { steps, burn_in, thinning, kernel, seed };
        let first = sims.0.first_mut().expect("pools are never empty");
        let chain = run_chain(first.as_mut(), ChainInit::Prior, &cfg, &ConditionSet::new(), obs.as_ref())
            .map_err(|e| (TpStatus::Simulator, e.to_string()))?;
        handle(out, TpChain(chain))
    })
}

/// Number of kept samples (0 for NULL).
///
/// # Safety
/// `chain` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_len(chain: *const TpChain) -> usize {
    non_null(chain, "chain").map_or(0, |c| c.0.samples.len())
}

/// Number of steps run, the length of the log-joint series (0 for NULL).
///
/// # Safety
/// `chain` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_steps(chain: *const TpChain) -> usize {
    non_null(chain, "chain").map_or(0, |c| c.0.log_joints.len())
}

/// # Safety
/// `chain` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_acceptance_rate(chain: *const TpChain, out: *mut f64) -> TpStatus {
    guard(|| put(out, non_null(chain, "chain")?.0.acceptance_rate, "out"))
}

/// Copies the per-step joint log density into `out`, which must hold
/// [`tp_chain_steps`] doubles (`capacity` says how many it holds).
///
/// # Safety
/// `chain` must be a live handle; `out` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_log_joints(chain: *const TpChain, out: *mut f64, capacity: usize) -> TpStatus {
    guard(|| {
        let c = non_null(chain, "chain")?;
        let n = c.0.log_joints.len();
        if capacity < n {
            return fail(TpStatus::InvalidArgument, format!("capacity {capacity} below {n} steps"));
        }
        out_slice(out, n, "out")?.copy_from_slice(&c.0.log_joints);
        Ok(())
    })
}

/// The kept samples as an equally weighted posterior.
///
/// # Safety
/// `chain` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_posterior(chain: *const TpChain, out: *mut *mut TpPosterior) -> TpStatus {
    guard(|| {
        let c = non_null(chain, "chain")?;
        handle(out, TpPosterior(WeightedPosterior::uniform(c.0.samples.clone())))
    })
}

/// # Safety
/// `chain` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_chain_free(chain: *mut TpChain) {
    if !chain.is_null() {
        // SAFETY: created by `handle`.
        drop(unsafe { Box::from_raw(chain) });
    }
}

/// Gelman–Rubin statistic over `n_chains` series of `len` values each.
///
/// # Safety
/// `chains` must hold `n_chains` pointers to `len` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_gelman_rubin(
    chains: *const *const f64,
    n_chains: usize,
    len: usize,
    out: *mut f64,
) -> TpStatus {
    guard(|| {
        let ptrs = slice(chains, n_chains, "chains")?;
        let series = ptrs
            .iter()
            .map(|&p| slice(p, len, "chain"))
            .collect::<Result<Vec<_>, _>>()?;
        put(out, gelman_rubin(&series).map_err(diag_failure)?, "out")
    })
}

/// Autocorrelation at lags `0..=max_lag`, written to `out` (`max_lag + 1` doubles).
///
/// # Safety
/// `series` must hold `len` readable doubles; `out` writable for `max_lag + 1`.
#[no_mangle]
pub unsafe extern "C" fn tp_autocorrelation(
    series: *const f64,
    len: usize,
    max_lag: usize,
    out: *mut f64,
) -> TpStatus {
    guard(|| {
        let s = slice(series, len, "series")?;
        let rho = autocorrelation(s, max_lag).map_err(diag_failure)?;
        out_slice(out, rho.len(), "out")?.copy_from_slice(&rho);
        Ok(())
    })
}

/// Effective sample size of an autocorrelated series.
///
/// # Safety
/// `series` must hold `len` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_ess_chain(series: *const f64, len: usize, out: *mut f64) -> TpStatus {
    guard(|| {
        let s = slice(series, len, "series")?;
        put(out, ess_chain(s).map_err(diag_failure)?, "out")
    })
}

/// Address transition graph of a trace file as Graphviz DOT. `top > 0`
/// keeps only the traces of the `top` most frequent trace types.
///
/// # Safety
/// `trace_path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_graph_dot(trace_path: *const c_char, top: usize, out: *mut TpBuffer) -> TpStatus {
    guard(|| {
        let path = text(trace_path, "trace_path")?;
        let f = load_traces(&PathBuf::from(path)).map_err(|e| io_failure(path, e))?;
        let traces = if top > 0 { most_frequent_types(&f.traces, top) } else { f.traces };
        let g = extract_graph(&traces, Some(&f.dictionary));
        buffer(out, g.to_dot().into_bytes())
    })
}
