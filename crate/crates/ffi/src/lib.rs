//! C ABI over the voxgan library.
//!
//! Volumes cross the boundary as opaque `VgVolume` handles created by `vg_volume_*`,
//! `vg_phantom_generate` and friends and released with `vg_volume_free`. Every fallible
//! call returns a `VgStatus`; the message of the last failure on the calling thread is
//! available through `vg_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use voxgan::fuse::{synthesize_view, EstimateAccumulator, FusionPolicy};
use voxgan::gan::OracleTranslator;
use voxgan::grid::{read_volume, write_volume, View, Volume, VolumeKind, HU_MIN};
use voxgan::metrics::{drr, error_stats};
use voxgan::phantom::{generate_pair, PhantomSpec};
use voxgan::prep::{build_body_mask, standardize, BodyMask, ClipPolicy};
use voxgan::tiles::{estimates_per_voxel, TileSpec};
use voxgan::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    EmptyMask = 6,
    MissingArtifact = 7,
    Numeric = 8,
    Panic = 9,
}

/// Fusion rule for overlapping estimates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgPolicy {
    Average = 0,
    Median = 1,
    Vote = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgView {
    Axial = 0,
    Coronal = 1,
    Sagittal = 2,
}

/// Opaque volume handle.
pub struct VgVolume {
    inner: Volume,
}

/// Voxel error statistics in HU; `me` is the mean of CT minus sCT.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VgErrorStats {
    pub mae: f64,
    pub me: f64,
    pub voxels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VgStatus {
    match e {
        Error::Io(_) => VgStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::PayloadMismatch { .. }
        | Error::UnknownKind(_)
        | Error::Checkpoint(_) => VgStatus::Format,
        Error::Shape(_) | Error::OutOfRange { .. } | Error::CubeTooSmall { .. } => VgStatus::Shape,
        Error::EmptyMask | Error::EmptyDataset => VgStatus::EmptyMask,
        Error::MissingArtifact { .. } => VgStatus::MissingArtifact,
        Error::Numeric(_) => VgStatus::Numeric,
        _ => VgStatus::InvalidArgument,
    }
}

struct Fail(VgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VgStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside voxgan".into());
            VgStatus::Panic
        }
    }
}

unsafe fn volume<'a>(v: *const VgVolume, what: &str) -> Result<&'a Volume, Fail> {
    v.as_ref().map(|h| &h.inner).ok_or_else(|| null(what))
}

unsafe fn put(out: *mut *mut VgVolume, v: Volume) {
    *out = Box::into_raw(Box::new(VgVolume { inner: v }));
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VgStatus::InvalidArgument, "path is not UTF-8".into()))
}

fn policy(p: VgPolicy) -> FusionPolicy {
    match p {
        VgPolicy::Average => FusionPolicy::Average,
        VgPolicy::Median => FusionPolicy::Median,
        VgPolicy::Vote => FusionPolicy::vote(),
    }
}

fn view(v: VgView) -> View {
    match v {
        VgView::Axial => View::Axial,
        VgView::Coronal => View::Coronal,
        VgView::Sagittal => View::Sagittal,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated, always NUL-terminated)
/// and returns the full message length, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn vg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a volume from `nx * ny * nz` x-fastest values. `kind` is 0 MR, 1 CT, 2 sCT, 3 label, 4 mask.
///
/// # Safety
/// `values` must be valid for `len` floats and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: f32,
    kind: u8,
    values: *const f32,
    len: usize,
    out: *mut *mut VgVolume,
) -> VgStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return Err(null("values or out"));
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        put(
            out,
            Volume::new([nx, ny, nz], spacing, VolumeKind::from_code(kind)?, data)?,
        );
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_free(v: *mut VgVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_read(path_: *const c_char, out: *mut *mut VgVolume) -> VgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, read_volume(path(path_)?)?);
        Ok(())
    })
}

/// # Safety
/// `v` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_write(v: *const VgVolume, path_: *const c_char) -> VgStatus {
    guard(|| Ok(write_volume(volume(v, "volume")?, path(path_)?)?))
}

/// Writes dims to `dims[0..3]`, plus spacing and kind code when the pointers are non-null.
///
/// # Safety
/// `v` must be a live handle; `dims` must be valid for three values.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_info(
    v: *const VgVolume,
    dims: *mut usize,
    spacing: *mut f32,
    kind: *mut u8,
) -> VgStatus {
    guard(|| {
        let vol = volume(v, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        ptr::copy_nonoverlapping(vol.dims().as_ptr(), dims, 3);
        if !spacing.is_null() {
            *spacing = vol.spacing();
        }
        if !kind.is_null() {
            *kind = vol.kind().code();
        }
        Ok(())
    })
}

/// Copies all values into `buf`, which must hold exactly `nx * ny * nz` floats.
///
/// # Safety
/// `v` must be a live handle and `buf` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vg_volume_values(
    v: *const VgVolume,
    buf: *mut f32,
    len: usize,
) -> VgStatus {
    guard(|| {
        let vol = volume(v, "volume")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != vol.len() {
            return Err(Fail(
                VgStatus::Shape,
                format!("buffer holds {len} values, volume has {}", vol.len()),
            ));
        }
        ptr::copy_nonoverlapping(vol.values().as_ptr(), buf, len);
        Ok(())
    })
}

/// Generates an aligned MR / CT / label phantom with the default anatomy.
///
/// # Safety
/// The three output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_phantom_generate(
    seed: u64,
    edge: usize,
    tumor: bool,
    artifact: bool,
    mr: *mut *mut VgVolume,
    ct: *mut *mut VgVolume,
    labels: *mut *mut VgVolume,
) -> VgStatus {
    guard(|| {
        if mr.is_null() || ct.is_null() || labels.is_null() {
            return Err(null("output"));
        }
        let pair = generate_pair(&PhantomSpec {
            seed,
            edge,
            tumor,
            artifact,
            ..PhantomSpec::default()
        })?;
        put(mr, pair.mr);
        put(ct, pair.ct);
        put(labels, pair.labels);
        Ok(())
    })
}

/// Largest connected foreground component of an MR volume, hole-filled and dilated.
///
/// # Safety
/// `mr` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vg_body_mask(
    mr: *const VgVolume,
    dilate: usize,
    out: *mut *mut VgVolume,
) -> VgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, build_body_mask(volume(mr, "mr")?, dilate)?.mask);
        Ok(())
    })
}

/// Clips MR intensities and scales them to `[0, 255]`. A `percentile` in `(0, 100]` selects the
/// dynamic policy; otherwise `static_clip` is used.
///
/// # Safety
/// `mr` and `mask` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vg_standardize(
    mr: *const VgVolume,
    mask: *const VgVolume,
    static_clip: f32,
    percentile: f32,
    out: *mut *mut VgVolume,
) -> VgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let clip = if percentile > 0.0 {
            ClipPolicy::DynamicPercentile(percentile)
        } else {
            ClipPolicy::Static(static_clip)
        };
        let mask = BodyMask::from_volume(volume(mask, "mask")?.clone(), 0)?;
        put(out, standardize(volume(mr, "mr")?, &mask, clip)?);
        Ok(())
    })
}

/// Estimates per voxel and view for a tiling: `ceil((P - 2c) / s)^2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_estimates_per_voxel(
    patch: usize,
    stride: usize,
    crop: usize,
    out: *mut usize,
) -> VgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = estimates_per_voxel(&TileSpec::new(patch, stride, crop)?);
        Ok(())
    })
}

/// Fuses `n` HU estimates of one voxel.
///
/// # Safety
/// `values` must be valid for `n` floats and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vg_fuse_estimates(
    p: VgPolicy,
    values: *const f32,
    n: usize,
    out: *mut f32,
) -> VgStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return Err(null("values or out"));
        }
        let v = std::slice::from_raw_parts(values, n);
        *out = policy(p)
            .combine(v)
            .ok_or_else(|| Fail(VgStatus::InvalidArgument, "no estimates to fuse".into()))?;
        Ok(())
    })
}

/// Tiles, translates with the noise-free label oracle and fuses the selected views.
/// `views` is a bit set: 1 axial, 2 coronal, 4 sagittal. `count` receives the estimate count map
/// when non-null.
///
/// # Safety
/// The input handles must be live; `sct` (and `count` if non-null) must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_synthesize_oracle(
    mr_net: *const VgVolume,
    mask: *const VgVolume,
    labels: *const VgVolume,
    patch: usize,
    stride: usize,
    crop: usize,
    views: u32,
    p: VgPolicy,
    sct: *mut *mut VgVolume,
    count: *mut *mut VgVolume,
) -> VgStatus {
    guard(|| {
        if sct.is_null() {
            return Err(null("sct"));
        }
        let mr = volume(mr_net, "mr")?;
        let mask = BodyMask::from_volume(volume(mask, "mask")?.clone(), 0)?;
        let oracle = OracleTranslator::new(volume(labels, "labels")?)?;
        let spec = TileSpec::new(patch, stride, crop)?;
        let chosen: Vec<View> = View::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| views & (1 << i) != 0)
            .map(|(_, v)| *v)
            .collect();
        if chosen.is_empty() {
            return Err(Fail(VgStatus::InvalidArgument, "no views selected".into()));
        }
        let mut acc = EstimateAccumulator::new(mr.dims(), mr.spacing());
        for v in chosen {
            synthesize_view(mr, &mask, &oracle, v, &spec, &mut acc)?;
        }
        put(sct, voxgan::fuse::fuse(&acc, &policy(p), HU_MIN)?);
        if !count.is_null() {
            put(count, acc.count_map()?);
        }
        Ok(())
    })
}

/// MAE and ME of `sct` against `ct` over the non-zero voxels of `mask`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vg_error_stats(
    ct: *const VgVolume,
    sct: *const VgVolume,
    mask: *const VgVolume,
    out: *mut VgErrorStats,
) -> VgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bits = volume(mask, "mask")?.to_bools();
        let s = error_stats(volume(ct, "ct")?, volume(sct, "sct")?, &bits)?;
        *out = VgErrorStats {
            mae: s.mae,
            me: s.me,
            voxels: s.voxels,
        };
        Ok(())
    })
}

/// Parallel projection scaled so the brightest ray is 255. Pass a null `buf` to query
/// `width` and `height`; otherwise `len` must equal `width * height`.
///
/// # Safety
/// `v` must be a live handle; `width` and `height` writable; `buf` null or valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vg_drr(
    v: *const VgVolume,
    dir: VgView,
    width: *mut usize,
    height: *mut usize,
    buf: *mut f32,
    len: usize,
) -> VgStatus {
    guard(|| {
        if width.is_null() || height.is_null() {
            return Err(null("width or height"));
        }
        let vol = volume(v, "volume")?;
        let view = view(dir);
        let (w, h) = view.plane_dims(vol.dims());
        *width = w;
        *height = h;
        if buf.is_null() {
            return Ok(());
        }
        if len != w * h {
            return Err(Fail(
                VgStatus::Shape,
                format!("buffer holds {len} values, image has {}", w * h),
            ));
        }
        let img = drr(vol, view)?;
        ptr::copy_nonoverlapping(img.data.as_ptr(), buf, len);
        Ok(())
    })
}
