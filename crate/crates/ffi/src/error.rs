use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use kalman_inversion::Error;

/// Status returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotSpd = 3,
    Numerical = 4,
    Unsupported = 5,
    ForwardFailed = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) fn set_last_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    let c = CString::new(msg).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

pub(crate) fn status_of(e: &Error) -> KiStatus {
    match e {
        Error::NotSpd(_) => KiStatus::NotSpd,
        Error::SingularPrecision(_)
        | Error::SingularInnovation
        | Error::RankDeficient { .. }
        | Error::NonFinite(_) => KiStatus::Numerical,
        Error::Unsupported(_) => KiStatus::Unsupported,
        Error::SolverFailure(_) => KiStatus::ForwardFailed,
        Error::Io(_) => KiStatus::Io,
        _ => KiStatus::InvalidArgument,
    }
}

/// Error carried out of an entry point body.
pub(crate) struct Failure(pub KiStatus, pub String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

pub(crate) fn null(what: &str) -> Failure {
    Failure(KiStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, translating errors and panics into a status and the
/// thread's last-error message. A panic leaves no handle half-built that
/// the caller could observe, so unwind safety is asserted.
pub(crate) fn guard<F>(body: F) -> KiStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            KiStatus::Panic
        }
    }
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when there is no error. Passing a null `buf` only queries the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ki_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}
