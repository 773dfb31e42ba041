//! C ABI for the channel-allocation simulator.
//!
//! Every fallible function returns a [`ChanallocStatus`]; on failure the
//! message is kept per thread and can be read with
//! [`chanalloc_last_error_message`]. Configurations and traces are opaque
//! handles owned by the caller and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use chanalloc::assignment::solve_optimal;
use chanalloc::experiment::{run_experiment, run_replication, ExperimentConfig};
use chanalloc::trace::Trace;
use chanalloc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanallocStatus {
    Ok = 0,
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Parameters violate a protocol hypothesis or are malformed.
    Config = 3,
    Parse = 4,
    /// A link or channel index is out of range.
    Index = 5,
    Io = 6,
    Protocol = 7,
    /// A requested time index lies outside the trace.
    OutOfRange = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// Opaque experiment configuration.
pub struct ChanallocConfig {
    inner: ExperimentConfig,
}

/// Opaque record of one simulated run.
pub struct ChanallocTrace {
    inner: Trace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ChanallocStatus, msg: impl Into<String>) -> ChanallocStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> ChanallocStatus {
    let status = match &e {
        Error::Config(_) | Error::Dimension { .. } | Error::Size { .. } | Error::Phase { .. } | Error::Alignment(_) => {
            ChanallocStatus::Config
        }
        Error::Parse { .. } => ChanallocStatus::Parse,
        Error::Index { .. } => ChanallocStatus::Index,
        Error::Io { .. } => ChanallocStatus::Io,
        Error::Protocol(_) => ChanallocStatus::Protocol,
    };
    fail(status, e.to_string())
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), ChanallocStatus>) -> ChanallocStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ChanallocStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(ChanallocStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ChanallocStatus> {
    if p.is_null() {
        return Err(fail(ChanallocStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ChanallocStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ChanallocStatus> {
    p.as_ref()
        .ok_or_else(|| fail(ChanallocStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), ChanallocStatus> {
    if p.is_null() {
        Err(fail(ChanallocStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn chanalloc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration for `n_links` links and `n_channels` channels.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_config_new(
    n_links: usize,
    n_channels: usize,
    out: *mut *mut ChanallocConfig,
) -> ChanallocStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inner = ExperimentConfig::new(n_links, n_channels);
        inner.validate().map_err(from_error)?;
        *out = Box::into_raw(Box::new(ChanallocConfig { inner }));
        Ok(())
    })
}

/// Parses configuration text (`key = value` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_config_parse(text: *const c_char, out: *mut *mut ChanallocConfig) -> ChanallocStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = str_arg(text, "text")?;
        let inner = ExperimentConfig::parse(text).map_err(from_error)?;
        *out = Box::into_raw(Box::new(ChanallocConfig { inner }));
        Ok(())
    })
}

/// Sets one configuration key from its textual value, with the same syntax
/// and validation as configuration files. The handle is unchanged on failure.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_config_set(
    config: *mut ChanallocConfig,
    key: *const c_char,
    value: *const c_char,
) -> ChanallocStatus {
    guard(|| {
        let cfg = config
            .as_mut()
            .ok_or_else(|| fail(ChanallocStatus::NullPointer, "config is null"))?;
        let key = str_arg(key, "key")?.trim();
        let value = str_arg(value, "value")?;
        let mut text: String = cfg
            .inner
            .to_text()
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(key))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(&format!("{key} = {value}\n"));
        cfg.inner = ExperimentConfig::parse(&text).map_err(from_error)?;
        Ok(())
    })
}

/// Serialized configuration; release with [`chanalloc_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_config_to_text(config: *const ChanallocConfig, out: *mut *mut c_char) -> ChanallocStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let cfg = handle(config, "config")?;
        let c = CString::new(cfg.inner.to_text()).map_err(|_| fail(ChanallocStatus::Config, "text contains NUL"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `config` must be a handle from this library or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_config_free(config: *mut ChanallocConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Optimal one-to-one allocation of a row-major `n_links × n_channels`
/// expected-QoS matrix. Channels written to `out_channels` are 1-based.
///
/// # Safety
/// `q` must point to `n_links * n_channels` doubles, `out_channels` to
/// `n_links` slots, and `out_value` to one double.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_solve_optimal(
    q: *const f64,
    n_links: usize,
    n_channels: usize,
    out_channels: *mut usize,
    out_value: *mut f64,
) -> ChanallocStatus {
    guard(|| {
        if q.is_null() || out_channels.is_null() || out_value.is_null() {
            return Err(fail(ChanallocStatus::NullPointer, "null matrix or output"));
        }
        let len = n_links
            .checked_mul(n_channels)
            .ok_or_else(|| fail(ChanallocStatus::Config, "matrix size overflows"))?;
        let flat = std::slice::from_raw_parts(q, len);
        let rows: Vec<Vec<f64>> = flat.chunks(n_channels.max(1)).take(n_links).map(<[f64]>::to_vec).collect();
        let a = solve_optimal(&rows).map_err(from_error)?;
        std::slice::from_raw_parts_mut(out_channels, n_links).copy_from_slice(&a.channel_of);
        *out_value = a.value;
        Ok(())
    })
}

/// Simulates replication `rep` of the configured algorithm.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_simulate(
    config: *const ChanallocConfig,
    rep: u64,
    out: *mut *mut ChanallocTrace,
) -> ChanallocStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let cfg = handle(config, "config")?;
        let (_, inner) = run_replication(&cfg.inner, rep).map_err(from_error)?;
        *out = Box::into_raw(Box::new(ChanallocTrace { inner }));
        Ok(())
    })
}

/// Runs every replication and writes all output files into the configured
/// directory.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_run_experiment(config: *const ChanallocConfig) -> ChanallocStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        run_experiment(&cfg.inner).map_err(from_error)?;
        Ok(())
    })
}

/// Slots recorded in the trace.
///
/// # Safety
/// `trace` must be a live handle or null (giving 0).
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_len(trace: *const ChanallocTrace) -> u64 {
    trace.as_ref().map_or(0, |t| t.inner.slots.len() as u64)
}

/// Packets started within the horizon.
///
/// # Safety
/// `trace` must be a live handle or null (giving 0).
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_packets(trace: *const ChanallocTrace) -> u64 {
    trace.as_ref().map_or(0, |t| t.inner.packets.len() as u64)
}

/// First packet whose exploitation allocation is optimal, 0 if none.
///
/// # Safety
/// `trace` must be a live handle or null (giving 0).
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_convergence_packet(trace: *const ChanallocTrace) -> u64 {
    trace
        .as_ref()
        .and_then(|t| t.inner.convergence_packet())
        .unwrap_or(0)
}

/// Summary figures of a trace.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChanallocTraceSummary {
    pub optimal_sum: f64,
    pub total_reward: f64,
    pub final_regret: f64,
    pub final_pseudo_regret: f64,
}

/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_summary(
    trace: *const ChanallocTrace,
    out: *mut ChanallocTraceSummary,
) -> ChanallocStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let t = &handle(trace, "trace")?.inner;
        *out = ChanallocTraceSummary {
            optimal_sum: t.optimal_sum,
            total_reward: t.total_reward,
            final_regret: t.final_regret(),
            final_pseudo_regret: t.final_pseudo_regret(),
        };
        Ok(())
    })
}

/// Cumulative realized and pseudo regret after slot `t` (1-based).
///
/// # Safety
/// `trace` must be a live handle; the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_regret_at(
    trace: *const ChanallocTrace,
    t: u64,
    out_regret: *mut f64,
    out_pseudo_regret: *mut f64,
) -> ChanallocStatus {
    guard(|| {
        out_ptr(out_regret, "out_regret")?;
        out_ptr(out_pseudo_regret, "out_pseudo_regret")?;
        let tr = &handle(trace, "trace")?.inner;
        if t == 0 || t > tr.slots.len() as u64 {
            return Err(fail(
                ChanallocStatus::OutOfRange,
                format!("slot {t} outside 1..={}", tr.slots.len()),
            ));
        }
        let s = &tr.slots[(t - 1) as usize];
        *out_regret = s.cum_regret;
        *out_pseudo_regret = s.cum_pseudo_regret;
        Ok(())
    })
}

/// Writes the per-slot, per-link CSV trace to `path`.
///
/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_write_csv(trace: *const ChanallocTrace, path: *const c_char) -> ChanallocStatus {
    guard(|| {
        let tr = &handle(trace, "trace")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        let file = std::fs::File::create(&path).map_err(|e| fail(ChanallocStatus::Io, format!("{}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        tr.write_csv(&mut w).map_err(from_error)?;
        std::io::Write::flush(&mut w).map_err(|e| fail(ChanallocStatus::Io, format!("{}: {e}", path.display())))?;
        Ok(())
    })
}

/// # Safety
/// `trace` must be a handle from this library or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn chanalloc_trace_free(trace: *mut ChanallocTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
