//! C ABI over colorlab: load a checkpoint, colorize images, score them.
//!
//! Every function returns a [`ClStatus`]; on failure the message is kept
//! per thread and read back with [`cl_last_error_message`]. Models are
//! opaque handles owned by the caller and released with [`cl_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use colorlab::checkpoint::Checkpoint;
use colorlab::color::{rgb_to_lab, LabImage, RgbImage};
use colorlab::metrics;
use colorlab::Error;

/// Result codes. Zero is success, everything else is negative.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    Io = -3,
    Checkpoint = -4,
    Shape = -5,
    Panic = -6,
}

/// A loaded model. Opaque to C.
pub struct ClModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ClStatus {
    match e {
        Error::Io(_) | Error::Image(_) | Error::Dataset { .. } | Error::Network(_) => ClStatus::Io,
        Error::Checkpoint(_) => ClStatus::Checkpoint,
        Error::Shape(_) => ClStatus::Shape,
        _ => ClStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ClStatus, String)>) -> ClStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ClStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ClStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ClStatus, String) {
    (ClStatus::NullPointer, format!("{what} is null"))
}

/// The message of the last failed call on this thread, or null. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cl_model_load(path: *const c_char, out: *mut *mut ClModel) -> ClStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller promises NUL termination.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (ClStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(ClModel { ckpt })) };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`cl_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cl_model_free(model: *mut ClModel) {
    if !model.is_null() {
        // SAFETY: the caller hands back ownership of a Box we created.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Side length of the square images the model accepts.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cl_model_image_size(model: *const ClModel, out: *mut usize) -> ClStatus {
    guard(|| {
        // SAFETY: null-checked; the caller promises a live handle.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null.
        unsafe { *out = m.ckpt.image_size };
        Ok(())
    })
}

/// Model kind ("classifier", "gan" or "generator") as a static string, or
/// null for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cl_model_kind(model: *const ClModel) -> *const c_char {
    // SAFETY: null-checked; the caller promises a live handle.
    match unsafe { model.as_ref() } {
        None => ptr::null(),
        Some(m) => match m.ckpt.model.kind() {
            "classifier" => c"classifier".as_ptr(),
            "gan" => c"gan".as_ptr(),
            _ => c"generator".as_ptr(),
        },
    }
}

/// Borrows `len` elements, rejecting null and oversized requests.
///
/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (ClStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null; validity is the caller's contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (ClStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null; validity is the caller's contract.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn pixels(height: usize, width: usize) -> Result<usize, (ClStatus, String)> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .filter(|&n| n > 0)
        .ok_or_else(|| (ClStatus::InvalidArgument, format!("bad image size {height}x{width}")))
}

/// Colorizes an 8-bit interleaved RGB image. Only its lightness is used, so
/// gray or color input both work. `rgb_out` receives `height*width*3`
/// bytes and may alias `rgb_in`.
///
/// # Safety
/// `model` must be a live handle; both buffers must hold
/// `height*width*3` bytes.
#[no_mangle]
pub unsafe extern "C" fn cl_colorize_rgb8(
    model: *mut ClModel,
    height: usize,
    width: usize,
    rgb_in: *const u8,
    rgb_out: *mut u8,
) -> ClStatus {
    guard(|| {
        // SAFETY: null-checked; the caller promises a live handle.
        let m = unsafe { model.as_mut() }.ok_or_else(|| null("model"))?;
        let n = pixels(height, width)?;
        // SAFETY: lengths per the contract above.
        let input = RgbImage::from_u8(height, width, unsafe { slice(rgb_in, n, "rgb_in")? }).map_err(lib_err)?;
        let lab = rgb_to_lab(&input);
        let gray = LabImage::grayscale(height, width, lab.l().to_vec()).map_err(lib_err)?;
        let out = m.ckpt.colorize(&gray).map_err(lib_err)?;
        // SAFETY: as above; the input was copied, so aliasing is harmless.
        unsafe { slice_mut(rgb_out, n, "rgb_out")? }.copy_from_slice(&out.to_u8());
        Ok(())
    })
}

/// Scores an 8-bit prediction against ground truth: pixel accuracy at
/// `eps`, PSNR in dB (infinite for identical images) and SSIM. Any output
/// pointer may be null to skip that metric.
///
/// # Safety
/// Both images must hold `height*width*3` bytes; non-null outputs must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cl_metrics_rgb8(
    height: usize,
    width: usize,
    pred: *const u8,
    real: *const u8,
    eps: f32,
    pixel_acc: *mut f64,
    psnr_db: *mut f64,
    ssim: *mut f64,
) -> ClStatus {
    guard(|| {
        let n = pixels(height, width)?;
        // SAFETY: lengths per the contract above.
        let p = RgbImage::from_u8(height, width, unsafe { slice(pred, n, "pred")? }).map_err(lib_err)?;
        // SAFETY: as above.
        let r = RgbImage::from_u8(height, width, unsafe { slice(real, n, "real")? }).map_err(lib_err)?;
        let write = |dst: *mut f64, v: f64| {
            if !dst.is_null() {
                // SAFETY: non-null outputs are writable per the contract.
                unsafe { *dst = v };
            }
        };
        if !pixel_acc.is_null() {
            write(pixel_acc, metrics::pixel_accuracy(&p, &r, eps).map_err(lib_err)?);
        }
        if !psnr_db.is_null() {
            write(psnr_db, metrics::psnr(&p, &r).map_err(lib_err)?);
        }
        if !ssim.is_null() {
            write(ssim, metrics::ssim(&p, &r).map_err(lib_err)?);
        }
        Ok(())
    })
}
