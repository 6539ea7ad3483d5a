//! C bindings for segmentation scoring.
//!
//! Every function returns a [`FetsStatus`]. On failure the message for the
//! calling thread is available from [`fets_last_error_message`] until the
//! next failing call on that thread. Volumes are opaque handles owned by the
//! caller and released with [`fets_label_volume_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fets_core::metrics::{self, EvaluationConfig};
use fets_core::volumes::{self, Geometry, LabelVolume, Region, RegionMapping};
use fets_core::Error;

/// Result codes shared by all entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    InvalidLabel = 5,
    GeometryMismatch = 6,
    Internal = 7,
}

/// Tumor sub-region selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetsRegion {
    Et = 0,
    Tc = 1,
    Wt = 2,
}

impl From<FetsRegion> for Region {
    fn from(r: FetsRegion) -> Self {
        match r {
            FetsRegion::Et => Region::ET,
            FetsRegion::Tc => Region::TC,
            FetsRegion::Wt => Region::WT,
        }
    }
}

/// Scores for one case, indexed by [`FetsRegion`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FetsCaseScores {
    pub dice: [f64; 3],
    pub hd95: [f64; 3],
}

/// Opaque segmentation volume.
pub struct FetsLabelVolume {
    inner: LabelVolume,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> FetsStatus {
    match err {
        Error::Io { .. } => FetsStatus::Io,
        Error::Format(_) | Error::UnsupportedDatatype(_) => FetsStatus::Format,
        Error::InvalidLabel { .. } => FetsStatus::InvalidLabel,
        Error::GeometryMismatch(_) => FetsStatus::GeometryMismatch,
        Error::InvalidVolume(_) | Error::Config(_) => FetsStatus::InvalidArgument,
        _ => FetsStatus::Internal,
    }
}

struct Failure(FetsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FetsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FetsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FetsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FetsStatus::Internal
        }
    }
}

unsafe fn volume_ref<'a>(v: *const FetsLabelVolume, what: &str) -> Result<&'a LabelVolume, Failure> {
    v.as_ref().map(|v| &v.inner).ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(FetsStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn emit(vol: LabelVolume, out: *mut *mut FetsLabelVolume) {
    let boxed = Box::new(FetsLabelVolume { inner: vol });
    unsafe { *out = Box::into_raw(boxed) };
}

/// Message describing the last failure on this thread; empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fets_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fets_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a volume from `nx * ny * nz` labels in x-fastest order.
///
/// # Safety
/// `spacing` must point to 3 doubles, `data` to `len` bytes, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: *const f64,
    data: *const u8,
    len: usize,
    out: *mut *mut FetsLabelVolume,
) -> FetsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if spacing.is_null() {
            return Err(null("spacing"));
        }
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let sp = std::slice::from_raw_parts(spacing, 3);
        let geometry = Geometry::new([nx, ny, nz], [sp[0], sp[1], sp[2]])?;
        let labels = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        emit(LabelVolume::new(geometry, labels)?, out);
        Ok(())
    })
}

/// Reads a uint8 NIfTI-1 segmentation.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_read(
    path: *const c_char,
    out: *mut *mut FetsLabelVolume,
) -> FetsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        emit(volumes::read_label_nifti(path)?, out);
        Ok(())
    })
}

/// Writes a volume as uint8 NIfTI-1.
///
/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_write(vol: *const FetsLabelVolume, path: *const c_char) -> FetsStatus {
    guard(|| {
        let vol = volume_ref(vol, "volume")?;
        let path = path_arg(path)?;
        volumes::write_nifti(vol, path)?;
        Ok(())
    })
}

/// Copies dimensions and spacing out. Either pointer may be null.
///
/// # Safety
/// `vol` must be a live handle; non-null outputs must hold 3 elements.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_geometry(
    vol: *const FetsLabelVolume,
    dims: *mut usize,
    spacing: *mut f64,
) -> FetsStatus {
    guard(|| {
        let g = volume_ref(vol, "volume")?.geometry();
        if !dims.is_null() {
            ptr::copy_nonoverlapping(g.dims.as_ptr(), dims, 3);
        }
        if !spacing.is_null() {
            ptr::copy_nonoverlapping(g.spacing.as_ptr(), spacing, 3);
        }
        Ok(())
    })
}

/// Borrows the label buffer. The pointer lives as long as the handle.
///
/// # Safety
/// `vol` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_data(
    vol: *const FetsLabelVolume,
    data: *mut *const u8,
    len: *mut usize,
) -> FetsStatus {
    guard(|| {
        let v = volume_ref(vol, "volume")?;
        if data.is_null() || len.is_null() {
            return Err(null("output"));
        }
        *data = v.data().as_ptr();
        *len = v.data().len();
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `vol` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fets_label_volume_free(vol: *mut FetsLabelVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

unsafe fn region_pair(
    pred: *const FetsLabelVolume,
    truth: *const FetsLabelVolume,
    region: FetsRegion,
) -> Result<(volumes::BinaryMask, volumes::BinaryMask), Failure> {
    let pred = volume_ref(pred, "prediction")?;
    let truth = volume_ref(truth, "ground truth")?;
    let mapping = RegionMapping::default();
    Ok((mapping.mask(pred, region.into()), mapping.mask(truth, region.into())))
}

unsafe fn write_out(out: *mut f64, v: f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = v;
    Ok(())
}

/// Dice of one region. Both masks empty scores 1.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fets_dice(
    pred: *const FetsLabelVolume,
    truth: *const FetsLabelVolume,
    region: FetsRegion,
    out: *mut f64,
) -> FetsStatus {
    guard(|| {
        let (pm, gt) = region_pair(pred, truth, region)?;
        write_out(out, metrics::dice(&pm, &gt)?.value)
    })
}

/// 95th-percentile Hausdorff distance of one region, in millimeters.
/// Both masks empty scores 0; one empty scores the volume diagonal.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fets_hd95(
    pred: *const FetsLabelVolume,
    truth: *const FetsLabelVolume,
    region: FetsRegion,
    out: *mut f64,
) -> FetsStatus {
    guard(|| {
        let (pm, gt) = region_pair(pred, truth, region)?;
        write_out(out, metrics::hd95(&pm, &gt)?.value)
    })
}

/// Dice and HD95 for all three regions.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fets_evaluate_case(
    pred: *const FetsLabelVolume,
    truth: *const FetsLabelVolume,
    out: *mut FetsCaseScores,
) -> FetsStatus {
    guard(|| {
        let pred = volume_ref(pred, "prediction")?;
        let truth = volume_ref(truth, "ground truth")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let scores = metrics::evaluate_case(pred, truth, &EvaluationConfig::default())?;
        let mut result = FetsCaseScores::default();
        for (i, pair) in scores.chunks(2).enumerate() {
            result.dice[i] = pair[0].metric.value;
            result.hd95[i] = pair[1].metric.value;
        }
        *out = result;
        Ok(())
    })
}
