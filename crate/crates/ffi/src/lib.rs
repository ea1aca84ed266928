// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI over the `ensim` simulator.
//!
//! Scenarios and reports are opaque heap handles owned by the caller and
//! released with their `_free` function. Every fallible call returns an
//! [`EnsimStatus`]; on failure [`ensim_last_error_message`] describes the
//! error for the calling thread. Strings returned through out-parameters are
//! NUL-terminated UTF-8 and must be released with [`ensim_string_free`].
//! Panics never cross the boundary.
//!
//! The header `include/ensim.h` is generated from this file at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ensim::keyschedule::{KeySchedule, TemporaryExposureKey, EPI_LEN, KEY_LEN};
use ensim::report::{render, Format};
use ensim::scenario::{run_with, RunOptions};
use ensim::{load_scenario, DayIndex, RunReport, Scenario};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    InvalidArgument = 4,
    Internal = 5,
}

/// A validated scenario.
pub struct EnsimScenario(Scenario);

/// The report of a finished run.
pub struct EnsimReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("NULs removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guarded(f: impl FnOnce() -> Result<(), (EnsimStatus, String)>) -> EnsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EnsimStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EnsimStatus::Internal
        }
    }
}

fn null(what: &str) -> (EnsimStatus, String) {
    (EnsimStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (EnsimStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|e| (EnsimStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn string_out(text: String, out: *mut *mut c_char) -> Result<(), (EnsimStatus, String)> {
    let c = CString::new(text).map_err(|e| (EnsimStatus::Internal, e.to_string()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Parses and validates a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_scenario_from_json(json: *const c_char, out: *mut *mut EnsimScenario) -> EnsimStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { read_str(json, "json") }?;
        let s = Scenario::from_json_str(text).map_err(|e| (EnsimStatus::InvalidScenario, e.to_string()))?;
        unsafe { *out = Box::into_raw(Box::new(EnsimScenario(s))) };
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_scenario_load(path: *const c_char, out: *mut *mut EnsimScenario) -> EnsimStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { read_str(path, "path") }?;
        let s = load_scenario(path).map_err(|e| (EnsimStatus::InvalidScenario, e.to_string()))?;
        unsafe { *out = Box::into_raw(Box::new(EnsimScenario(s))) };
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ensim_scenario_free(scenario: *mut EnsimScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

unsafe fn run_impl(scenario: *const EnsimScenario, seed: Option<u64>, out: *mut *mut EnsimReport) -> EnsimStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = unsafe { scenario.as_ref() }.ok_or_else(|| null("scenario"))?;
        let report = run_with(&s.0, RunOptions { seed_override: seed, ..Default::default() });
        unsafe { *out = Box::into_raw(Box::new(EnsimReport(report))) };
        Ok(())
    })
}

/// Runs a scenario with its own seed.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_run(scenario: *const EnsimScenario, out: *mut *mut EnsimReport) -> EnsimStatus {
    unsafe { run_impl(scenario, None, out) }
}

/// Runs a scenario with `seed` in place of the scenario's seed.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_run_with_seed(
    scenario: *const EnsimScenario,
    seed: u64,
    out: *mut *mut EnsimReport,
) -> EnsimStatus {
    unsafe { run_impl(scenario, Some(seed), out) }
}

/// # Safety
/// `report` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ensim_report_free(report: *mut EnsimReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

unsafe fn render_impl(report: *const EnsimReport, format: Format, out: *mut *mut c_char) -> EnsimStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        string_out(render(&r.0, format), out)
    })
}

/// The full report as JSON with sorted keys.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_report_to_json(report: *const EnsimReport, out: *mut *mut c_char) -> EnsimStatus {
    unsafe { render_impl(report, Format::Json, out) }
}

/// The per-device CSV summary.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ensim_report_to_csv(report: *const EnsimReport, out: *mut *mut c_char) -> EnsimStatus {
    unsafe { render_impl(report, Format::Csv, out) }
}

/// Number of notifications raised during the run; 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ensim_report_notification_count(report: *const EnsimReport) -> usize {
    unsafe { report.as_ref() }.map_or(0, |r| r.0.notifications.len())
}

/// Whether the run's notifications equal the oracle's; false for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ensim_report_agrees_with_oracle(report: *const EnsimReport) -> bool {
    unsafe { report.as_ref() }.is_some_and(|r| r.0.agrees_with_oracle())
}

/// Derives the identifier broadcast in `interval` of `day` from a 16-byte key.
///
/// # Safety
/// `key` must point to 16 readable bytes and `out` to 16 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ensim_derive_epi(
    key: *const u8,
    day: u32,
    interval: u32,
    rotation_minutes: u32,
    out: *mut u8,
) -> EnsimStatus {
    guarded(|| {
        if key.is_null() {
            return Err(null("key"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let invalid = |e: ensim::keyschedule::KeyScheduleError| (EnsimStatus::InvalidArgument, e.to_string());
        let schedule = KeySchedule::new(rotation_minutes).map_err(invalid)?;
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(unsafe { std::slice::from_raw_parts(key, KEY_LEN) });
        let tek = TemporaryExposureKey::new(DayIndex(day), bytes);
        let epi = schedule.derive_epi(&tek, schedule.interval(interval).map_err(invalid)?).map_err(invalid)?;
        unsafe { std::ptr::copy_nonoverlapping(epi.as_bytes().as_ptr(), out, EPI_LEN) };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ensim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ensim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}
