//! C ABI over the formwatch monitor.
//!
//! Handles are opaque and owned by the caller, who releases them with the matching
//! `_free` function. Every fallible call returns an [`FwStatus`]; on failure a
//! description is available from [`fw_last_error_message`] on the same thread.
//! Strings returned through `out` parameters are NUL-terminated UTF-8 and must be
//! released with [`fw_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::Path;
use std::ptr;

use formwatch::classifier::classify;
use formwatch::ingest::parse_capture_line;
use formwatch::layout::{Scene, render_svg};
use formwatch::model::ApplicationStructure;
use formwatch::service::{Monitor, MonitorConfig};
use formwatch::store::{load_structure, structure_from_json, structure_to_json};
use formwatch::{IngestError, ServiceError, StructureError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStatus {
    Ok = 0,
    NullArg = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    NotFound = 5,
    Io = 6,
    NoStructure = 7,
    Internal = 8,
}

/// A loaded application structure.
pub struct FwStructure {
    inner: ApplicationStructure,
}

/// A monitor instance with its own event log and counters.
pub struct FwMonitor {
    inner: Monitor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FwStatus, String);

impl From<StructureError> for Failure {
    fn from(e: StructureError) -> Self {
        let status = match e {
            StructureError::Parse { .. } | StructureError::UnsupportedVersion(_) => FwStatus::Parse,
            StructureError::Invalid(_) => FwStatus::Validation,
            StructureError::Io { .. } => FwStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NoStructure => FwStatus::NoStructure,
            ServiceError::NotFound(_) => FwStatus::NotFound,
            ServiceError::Structure(_) => FwStatus::Validation,
            ServiceError::Layout(_) => FwStatus::Internal,
            ServiceError::Journal(_) => FwStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure(FwStatus::Parse, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(FwStatus::Parse, e.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("NUL bytes removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            FwStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            FwStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(FwStatus::NullArg, format!("{name} is null")));
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|e| Failure(FwStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| Failure(FwStatus::NullArg, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FwStatus::NullArg, "out is null".into()));
    }
    unsafe { *out = value };
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(FwStatus::Internal, e.to_string()))?;
    unsafe { put(out, c.into_raw()) }
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() { Err(Failure(FwStatus::NullArg, "out is null".into())) } else { Ok(()) }
}

/// Library version; static, do not free.
#[unsafe(no_mangle)]
pub extern "C" fn fw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null after a success.
/// Valid until the next call into this library on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn fw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads and validates a structure file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_structure_load(path: *const c_char, out: *mut *mut FwStructure) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let path = unsafe { str_arg(path, "path") }?;
        let inner = load_structure(Path::new(path))?;
        unsafe { put(out, Box::into_raw(Box::new(FwStructure { inner }))) }
    })
}

/// Parses and validates a structure document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_structure_from_json(json: *const c_char, out: *mut *mut FwStructure) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let inner = structure_from_json(unsafe { str_arg(json, "json") }?)?;
        unsafe { put(out, Box::into_raw(Box::new(FwStructure { inner }))) }
    })
}

/// # Safety
/// `structure` must be a live handle; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_structure_to_json(structure: *const FwStructure, out: *mut *mut c_char) -> FwStatus {
    guard(|| {
        let s = unsafe { ref_arg(structure, "structure") }?;
        unsafe { put_string(out, structure_to_json(&s.inner)) }
    })
}

/// Number of destination groups; 0 for a null handle.
///
/// # Safety
/// `structure` must be null or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_structure_group_count(structure: *const FwStructure) -> usize {
    unsafe { structure.as_ref() }.map_or(0, |s| s.inner.groups.len())
}

/// # Safety
/// `structure` must be null or a handle from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_structure_free(structure: *mut FwStructure) {
    if !structure.is_null() {
        drop(unsafe { Box::from_raw(structure) });
    }
}

/// Classifies one capture line and writes its verdict record as JSON.
///
/// # Safety
/// `structure` must be a live handle, `line` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_classify_line(
    structure: *const FwStructure,
    line: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let s = unsafe { ref_arg(structure, "structure") }?;
        let line = unsafe { str_arg(line, "line") }?;
        let request = parse_capture_line(line, 1, "ffi", &s.inner.base_url)?;
        let verdict = serde_json::to_string(&classify(&request, &s.inner))?;
        unsafe { put_string(out, verdict) }
    })
}

/// Creates a monitor keeping at most `retention` events; 0 selects the default.
///
/// # Safety
/// `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_new(retention: usize, out: *mut *mut FwMonitor) -> FwStatus {
    guard(|| {
        let mut config = MonitorConfig::default();
        if retention > 0 {
            config.retention = retention;
        }
        unsafe { put(out, Box::into_raw(Box::new(FwMonitor { inner: Monitor::new(config) }))) }
    })
}

/// # Safety
/// `monitor` must be null or a handle from this library, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_free(monitor: *mut FwMonitor) {
    if !monitor.is_null() {
        drop(unsafe { Box::from_raw(monitor) });
    }
}

/// Installs a copy of `structure` as the monitor's current snapshot.
///
/// # Safety
/// Both handles must be live.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_set_structure(
    monitor: *const FwMonitor,
    structure: *const FwStructure,
) -> FwStatus {
    guard(|| {
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        let s = unsafe { ref_arg(structure, "structure") }?;
        m.inner.replace_structure(s.inner.clone())?;
        Ok(())
    })
}

/// Ingests newline-separated capture lines; writes `{"accepted":..,"rejected":[..]}`.
///
/// # Safety
/// `monitor` must be live, `lines` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_ingest(
    monitor: *const FwMonitor,
    lines: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        let outcome = m.inner.ingest_events(unsafe { str_arg(lines, "lines") }?)?;
        unsafe { put_string(out, serde_json::to_string(&outcome)?) }
    })
}

/// # Safety
/// `monitor` must be live and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_overview(monitor: *const FwMonitor, out: *mut *mut c_char) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        unsafe { put_string(out, serde_json::to_string(&m.inner.overview()?)?) }
    })
}

/// Overview scene of one destination group, as a scene document.
///
/// # Safety
/// `monitor` must be live, `group_id` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_group_scene(
    monitor: *const FwMonitor,
    group_id: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        let scene = Scene::Overview(m.inner.group_scene(unsafe { str_arg(group_id, "group_id") }?)?);
        unsafe { put_string(out, serde_json::to_string(&scene)?) }
    })
}

/// Form lane scene of one request, as a scene document.
///
/// # Safety
/// `monitor` must be live, the ids NUL-terminated strings, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_form_scene(
    monitor: *const FwMonitor,
    form_id: *const c_char,
    request_id: *const c_char,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        let (fid, rid) = unsafe { (str_arg(form_id, "form_id")?, str_arg(request_id, "request_id")?) };
        let scene = Scene::Form(m.inner.form_scene(fid, rid)?);
        unsafe { put_string(out, serde_json::to_string(&scene)?) }
    })
}

/// Control detail scene of one request, as a scene document.
///
/// # Safety
/// `monitor` must be live, the ids NUL-terminated strings, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_monitor_control_scene(
    monitor: *const FwMonitor,
    form_id: *const c_char,
    request_id: *const c_char,
    order_index: usize,
    out: *mut *mut c_char,
) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let m = unsafe { ref_arg(monitor, "monitor") }?;
        let (fid, rid) = unsafe { (str_arg(form_id, "form_id")?, str_arg(request_id, "request_id")?) };
        let scene = Scene::Control(m.inner.control_scene(fid, rid, order_index)?);
        unsafe { put_string(out, serde_json::to_string(&scene)?) }
    })
}

/// Renders a scene document to SVG.
///
/// # Safety
/// `scene_json` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fw_render_svg(scene_json: *const c_char, out: *mut *mut c_char) -> FwStatus {
    guard(|| {
        check_out(out)?;
        let scene: Scene = serde_json::from_str(unsafe { str_arg(scene_json, "scene_json") }?)?;
        unsafe { put_string(out, render_svg(&scene)) }
    })
}
