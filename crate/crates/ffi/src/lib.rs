//! C ABI over the odcast toolkit.
//!
//! Every fallible function returns an [`OdcastStatus`]. On failure the
//! message is kept per thread and read with [`odcast_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use odcast::config::RunConfig;
use odcast::evaluation;
use odcast::model::{Checkpoint, ModelTopology};
use odcast::tensor::Tensor;
use odcast::topology::DirectedNetwork;
use odcast::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdcastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Config = 5,
    Network = 6,
    Numerical = 7,
    Checkpoint = 8,
    Io = 9,
    Panic = 10,
}

/// Directed highway network.
pub struct OdcastNetwork {
    net: DirectedNetwork,
}

/// Trained FL-GCN checkpoint.
pub struct OdcastModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: OdcastStatus,
    message: String,
}

impl Failure {
    fn new(status: OdcastStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Network(_) | Error::NotCorridor(_) => OdcastStatus::Network,
            Error::Tensor(_) | Error::InvalidArgument(_) | Error::InsufficientData(_) => OdcastStatus::InvalidArgument,
            Error::Numerical(_) | Error::Diverged(_) => OdcastStatus::Numerical,
            Error::Parse { .. } => OdcastStatus::Parse,
            Error::Config(_) => OdcastStatus::Config,
            Error::Checkpoint(_) => OdcastStatus::Checkpoint,
            Error::Io { .. } => OdcastStatus::Io,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OdcastStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OdcastStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {detail}"));
            OdcastStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(OdcastStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(OdcastStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(OdcastStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(OdcastStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(OdcastStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Release with [`odcast_string_free`].
#[no_mangle]
pub extern "C" fn odcast_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odcast_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn odcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Straight corridor of `n_d` interchanges `spacing_miles` apart.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn odcast_network_turnpike(n_d: usize, spacing_miles: f64, out: *mut *mut OdcastNetwork) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let net = DirectedNetwork::turnpike(n_d, spacing_miles)?;
        *out = Box::into_raw(Box::new(OdcastNetwork { net }));
        Ok(())
    })
}

/// Parses the text form written by `odcast simulate` (`network.txt`).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_network_from_text(text: *const c_char, out: *mut *mut OdcastNetwork) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = read_str(text, "text")?;
        let net = DirectedNetwork::from_text(text, "<text>")?;
        *out = Box::into_raw(Box::new(OdcastNetwork { net }));
        Ok(())
    })
}

/// Text form of the network. Release with [`odcast_string_free`].
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_network_to_text(net: *const OdcastNetwork, out: *mut *mut c_char) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = into_c_string(handle(net, "network")?.net.to_text());
        Ok(())
    })
}

/// Node, sensor-link and O-D pair counts.
///
/// # Safety
/// `net` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn odcast_network_dims(
    net: *const OdcastNetwork,
    nodes: *mut usize,
    sensors: *mut usize,
    od_pairs: *mut usize,
) -> OdcastStatus {
    guard(|| {
        let net = &handle(net, "network")?.net;
        for (p, v) in [(nodes, net.node_count()), (sensors, net.sensor_count()), (od_pairs, net.od_count())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn odcast_network_free(net: *mut OdcastNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Loads a checkpoint written by `odcast train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_model_load(path: *const c_char, out: *mut *mut OdcastModel) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let path = read_str(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(OdcastModel { checkpoint }));
        Ok(())
    })
}

/// Interchange count and link lag count the model was trained with.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn odcast_model_dims(model: *const OdcastModel, n_d: *mut usize, k_link_lags: *mut usize) -> OdcastStatus {
    guard(|| {
        let params = &handle(model, "model")?.checkpoint.params;
        if !n_d.is_null() {
            *n_d = params.n_d();
        }
        if !k_link_lags.is_null() {
            *k_link_lags = params.config().k_link_lags;
        }
        Ok(())
    })
}

/// One O-D forecast in vehicles.
///
/// `z` is the row-major `sensors x 2k` link matrix (current lags, then the
/// historical lags), `x_hist` the row-major `n_d x (n_d - 1)` historical O-D
/// matrix. Writes `n_d * (n_d - 1)` values to `out`.
///
/// # Safety
/// Handles must be live and each buffer must hold the stated length.
#[no_mangle]
pub unsafe extern "C" fn odcast_model_predict(
    model: *const OdcastModel,
    net: *const OdcastNetwork,
    z: *const f64,
    z_len: usize,
    x_hist: *const f64,
    x_hist_len: usize,
    out: *mut f64,
    out_len: usize,
) -> OdcastStatus {
    guard(|| {
        let ck = &handle(model, "model")?.checkpoint;
        let net = &handle(net, "network")?.net;
        let n_d = ck.params.n_d();
        if net.node_count() != n_d {
            return Err(Failure::new(
                OdcastStatus::InvalidArgument,
                format!("model expects {n_d} interchanges, network has {}", net.node_count()),
            ));
        }
        let cols = 2 * ck.params.config().k_link_lags;
        let expect = [("z", z_len, net.sensor_count() * cols), ("x_hist", x_hist_len, n_d * (n_d - 1)), ("out", out_len, n_d * (n_d - 1))];
        for (name, got, want) in expect {
            if got != want {
                return Err(Failure::new(OdcastStatus::InvalidArgument, format!("{name} has {got} values, expected {want}")));
            }
        }
        out_ptr(out, "out")?;
        let z = Tensor::matrix(net.sensor_count(), cols, read_slice(z, z_len, "z")?.to_vec()).map_err(Error::from)?;
        let xh = Tensor::matrix(n_d, n_d - 1, read_slice(x_hist, x_hist_len, "x_hist")?.to_vec()).map_err(Error::from)?;
        let pred = ck.predict(&ModelTopology::new(net), &z, &xh)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(pred.data());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn odcast_model_free(model: *mut OdcastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn metric(
    truth: *const f64,
    pred: *const f64,
    len: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> odcast::Result<f64>,
) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = f(read_slice(truth, len, "truth")?, read_slice(pred, len, "pred")?)?;
        Ok(())
    })
}

/// Root mean squared error over `len` cells.
///
/// # Safety
/// `truth` and `pred` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_rmse(truth: *const f64, pred: *const f64, len: usize, out: *mut f64) -> OdcastStatus {
    metric(truth, pred, len, out, evaluation::rmse)
}

/// RMSE normalized by total true flow.
///
/// # Safety
/// `truth` and `pred` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_rmsn(truth: *const f64, pred: *const f64, len: usize, out: *mut f64) -> OdcastStatus {
    metric(truth, pred, len, out, evaluation::rmsn)
}

/// SHA-256 digest of a TOML run configuration after defaults are applied.
/// Release with [`odcast_string_free`].
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcast_config_digest(toml: *const c_char, out: *mut *mut c_char) -> OdcastStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let config = RunConfig::from_toml(read_str(toml, "toml")?, "<config>")?;
        *out = into_c_string(config.digest());
        Ok(())
    })
}
