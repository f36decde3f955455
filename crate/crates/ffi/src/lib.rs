//! C-compatible surface over one process-wide [`Mpw`] context.
//!
//! Every call returns `MPW_OK` (0) or a negative status; calls that create
//! something return its positive id instead. After a failure,
//! [`mpw_last_error`] gives the message for the calling thread. The matching
//! declarations are in `include/mpwide.h`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, c_int, CStr};
use std::ptr;
use std::slice;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{LazyLock, Mutex};

use mpwide::{Endpoint, Mpw, MpwError, PathConfig, PathId, Role, Setting, TransferHandle};

pub const MPW_OK: c_int = 0;
pub const MPW_ERR_NOT_INITIALIZED: c_int = -1;
pub const MPW_ERR_INVALID_ARGUMENT: c_int = -2;
pub const MPW_ERR_NO_SUCH_PATH: c_int = -3;
pub const MPW_ERR_PATH_FAILED: c_int = -4;
pub const MPW_ERR_BUSY: c_int = -5;
pub const MPW_ERR_TIMEOUT: c_int = -6;
pub const MPW_ERR_CONNECT: c_int = -7;
pub const MPW_ERR_TRANSPORT: c_int = -8;
pub const MPW_ERR_PROTOCOL: c_int = -9;
pub const MPW_ERR_OVERSIZE: c_int = -10;
pub const MPW_ERR_HANDLE: c_int = -11;
pub const MPW_ERR_OTHER: c_int = -99;

static CONTEXT: LazyLock<Mpw> = LazyLock::new(Mpw::new);
static INITIALIZED: AtomicBool = AtomicBool::new(false);
static HANDLES: LazyLock<Mutex<HashMap<u64, TransferHandle>>> = LazyLock::new(Default::default);
static NEXT_HANDLE: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &MpwError) -> c_int {
    match e.root() {
        MpwError::UnresolvableHost(_)
        | MpwError::InvalidEndpoint(_)
        | MpwError::OutOfRange { .. }
        | MpwError::Precondition(_) => MPW_ERR_INVALID_ARGUMENT,
        MpwError::NoSuchPath(_) => MPW_ERR_NO_SUCH_PATH,
        MpwError::PathFailed(_) => MPW_ERR_PATH_FAILED,
        MpwError::Busy(_) => MPW_ERR_BUSY,
        MpwError::Timeout { .. } => MPW_ERR_TIMEOUT,
        MpwError::Connect { .. } => MPW_ERR_CONNECT,
        MpwError::Transport { .. } | MpwError::Truncated { .. } | MpwError::StreamClosed => {
            MPW_ERR_TRANSPORT
        }
        MpwError::Protocol(_) | MpwError::BadFrame(_) => MPW_ERR_PROTOCOL,
        MpwError::Oversize { .. } => MPW_ERR_OVERSIZE,
        MpwError::UnknownHandle(_) | MpwError::HandleConsumed(_) => MPW_ERR_HANDLE,
        _ => MPW_ERR_OTHER,
    }
}

fn fail(code: c_int, message: String) -> c_int {
    LAST_ERROR.with(|m| *m.borrow_mut() = message);
    code
}

/// Runs `f` on the context, translating errors into status codes.
fn with_ctx(f: impl FnOnce(&Mpw) -> mpwide::Result<c_int>) -> c_int {
    if !INITIALIZED.load(Ordering::Acquire) {
        return fail(MPW_ERR_NOT_INITIALIZED, "library is not initialized".into());
    }
    match f(&CONTEXT) {
        Ok(v) => v,
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

fn path_id(raw: i64) -> mpwide::Result<PathId> {
    u32::try_from(raw)
        .ok()
        .filter(|&v| v > 0)
        .map(PathId::from_u32)
        .ok_or(MpwError::OutOfRange {
            what: "path id",
            value: raw as u64,
        })
}

unsafe fn bytes<'a>(ptr: *const u8, len: usize) -> mpwide::Result<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(MpwError::Precondition("null buffer".into()));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn bytes_mut<'a>(ptr: *mut u8, len: usize) -> mpwide::Result<&'a mut [u8]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(MpwError::Precondition("null buffer".into()));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn ok(_: ()) -> c_int {
    MPW_OK
}

/// Initializes (or re-initializes after finalize) the library.
#[no_mangle]
pub extern "C" fn mpw_init() -> c_int {
    LazyLock::force(&CONTEXT);
    INITIALIZED.store(true, Ordering::Release);
    MPW_OK
}

/// Closes every path and invalidates outstanding handles.
#[no_mangle]
pub extern "C" fn mpw_finalize() -> c_int {
    with_ctx(|mpw| {
        INITIALIZED.store(false, Ordering::Release);
        mpw.finalize();
        HANDLES.lock().unwrap().clear();
        Ok(MPW_OK)
    })
}

/// Opens a path; returns its id (> 0) or a status (< 0). With `server`
/// nonzero, binds `host:port` and waits for the peer.
#[no_mangle]
pub unsafe extern "C" fn mpw_create_path(
    host: *const c_char,
    port: u16,
    streams: c_int,
    server: c_int,
    autotune: c_int,
) -> i64 {
    i64::from(with_ctx(|mpw| {
        if host.is_null() {
            return Err(MpwError::Precondition("null host".into()));
        }
        let host = CStr::from_ptr(host)
            .to_str()
            .map_err(|_| MpwError::InvalidEndpoint("host is not UTF-8".into()))?;
        let streams = usize::try_from(streams).map_err(|_| MpwError::OutOfRange {
            what: "stream count",
            value: streams as u64,
        })?;
        let role = if server != 0 {
            Role::Server
        } else {
            Role::Client
        };
        let config = PathConfig {
            autotune: autotune != 0,
            ..PathConfig::with_streams(streams)
        };
        let id = mpw.create_path(&Endpoint::new(host, port)?, streams, role, config)?;
        Ok(id.as_u32() as c_int)
    }))
}

#[no_mangle]
pub extern "C" fn mpw_destroy_path(path: i64) -> c_int {
    with_ctx(|mpw| mpw.destroy_path(path_id(path)?).map(ok))
}

#[no_mangle]
pub unsafe extern "C" fn mpw_send(path: i64, buf: *const u8, len: usize) -> c_int {
    with_ctx(|mpw| mpw.send(path_id(path)?, bytes(buf, len)?).map(ok))
}

#[no_mangle]
pub unsafe extern "C" fn mpw_recv(path: i64, buf: *mut u8, len: usize) -> c_int {
    with_ctx(|mpw| mpw.recv_into(path_id(path)?, bytes_mut(buf, len)?).map(ok))
}

/// Sends `out_len` bytes while receiving exactly `in_len` into `in_buf`.
#[no_mangle]
pub unsafe extern "C" fn mpw_send_recv(
    path: i64,
    out: *const u8,
    out_len: usize,
    in_buf: *mut u8,
    in_len: usize,
) -> c_int {
    with_ctx(|mpw| {
        let target = bytes_mut(in_buf, in_len)?;
        let got = mpw.send_recv(path_id(path)?, bytes(out, out_len)?, in_len)?;
        target.copy_from_slice(&got);
        Ok(MPW_OK)
    })
}

/// Exchanges buffers of unknown size. The received buffer is returned in
/// `*in_buf` / `*in_len` and must be released with [`mpw_free`].
#[no_mangle]
pub unsafe extern "C" fn mpw_dsend_recv(
    path: i64,
    out: *const u8,
    out_len: usize,
    in_buf: *mut *mut u8,
    in_len: *mut usize,
) -> c_int {
    with_ctx(|mpw| {
        if in_buf.is_null() || in_len.is_null() {
            return Err(MpwError::Precondition("null output pointer".into()));
        }
        let got = mpw.dsend_recv(path_id(path)?, bytes(out, out_len)?)?;
        let boxed = got.into_boxed_slice();
        *in_len = boxed.len();
        *in_buf = if boxed.is_empty() {
            ptr::null_mut()
        } else {
            Box::into_raw(boxed) as *mut u8
        };
        Ok(MPW_OK)
    })
}

/// Releases a buffer returned by [`mpw_dsend_recv`].
#[no_mangle]
pub unsafe extern "C" fn mpw_free(buf: *mut u8, len: usize) {
    if !buf.is_null() && len > 0 {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

#[no_mangle]
pub extern "C" fn mpw_barrier(path: i64) -> c_int {
    with_ctx(|mpw| mpw.barrier(path_id(path)?).map(ok))
}

/// Sends over `send_path` while receiving `in_len` bytes from `recv_path`.
#[no_mangle]
pub unsafe extern "C" fn mpw_cycle(
    recv_path: i64,
    send_path: i64,
    out: *const u8,
    out_len: usize,
    in_buf: *mut u8,
    in_len: usize,
) -> c_int {
    with_ctx(|mpw| {
        let target = bytes_mut(in_buf, in_len)?;
        let got = mpw.cycle(
            path_id(recv_path)?,
            path_id(send_path)?,
            bytes(out, out_len)?,
            in_len,
        )?;
        target.copy_from_slice(&got);
        Ok(MPW_OK)
    })
}

/// Starts a background exchange; returns a handle id (> 0) or a status.
#[no_mangle]
pub unsafe extern "C" fn mpw_isend_recv(
    path: i64,
    out: *const u8,
    out_len: usize,
    in_len: usize,
) -> i64 {
    let mut id = 0u64;
    let status = with_ctx(|mpw| {
        let handle = mpw.isend_recv(path_id(path)?, bytes(out, out_len)?, in_len)?;
        id = NEXT_HANDLE.fetch_add(1, Ordering::Relaxed);
        HANDLES.lock().unwrap().insert(id, handle);
        Ok(MPW_OK)
    });
    if status == MPW_OK {
        id as i64
    } else {
        i64::from(status)
    }
}

fn handle(id: i64) -> mpwide::Result<TransferHandle> {
    HANDLES
        .lock()
        .unwrap()
        .get(&(id as u64))
        .copied()
        .ok_or(MpwError::UnknownHandle(id as u64))
}

/// 1 when the transfer is complete, 0 while it runs, < 0 on error.
#[no_mangle]
pub extern "C" fn mpw_has_finished(handle_id: i64) -> c_int {
    with_ctx(|mpw| Ok(c_int::from(mpw.has_finished(handle(handle_id)?)?)))
}

/// Waits for the transfer and copies the `in_len` received bytes out. The
/// handle is released.
#[no_mangle]
pub unsafe extern "C" fn mpw_wait(handle_id: i64, in_buf: *mut u8, in_len: usize) -> c_int {
    with_ctx(|mpw| {
        let h = handle(handle_id)?;
        let target = bytes_mut(in_buf, in_len)?;
        HANDLES.lock().unwrap().remove(&(handle_id as u64));
        let got = mpw.wait(h)?;
        if got.len() != in_len {
            return Err(MpwError::Precondition(format!(
                "buffer holds {in_len} bytes, transfer received {}",
                got.len()
            )));
        }
        target.copy_from_slice(&got);
        Ok(MPW_OK)
    })
}

#[no_mangle]
pub extern "C" fn mpw_set_chunk_size(path: i64, bytes: usize) -> c_int {
    with_ctx(|mpw| {
        mpw.configure(path_id(path)?, Setting::ChunkSize(bytes))
            .map(ok)
    })
}

/// Bytes per second per stream; 0 turns pacing off.
#[no_mangle]
pub extern "C" fn mpw_set_pacing_rate(path: i64, rate: u64) -> c_int {
    let rate = (rate > 0).then_some(rate);
    with_ctx(|mpw| {
        mpw.configure(path_id(path)?, Setting::PacingRate(rate))
            .map(ok)
    })
}

#[no_mangle]
pub extern "C" fn mpw_set_window(path: i64, bytes: usize) -> c_int {
    with_ctx(|mpw| {
        mpw.configure(path_id(path)?, Setting::Window(bytes))
            .map(ok)
    })
}

#[no_mangle]
pub extern "C" fn mpw_set_autotune(path: i64, on: c_int) -> c_int {
    with_ctx(|mpw| {
        mpw.configure(path_id(path)?, Setting::AutoTune(on != 0))
            .map(ok)
    })
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns its full length.
#[no_mangle]
pub unsafe extern "C" fn mpw_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let msg = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
