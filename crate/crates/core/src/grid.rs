//! Volume grids, orthogonal slicing, mirroring, and the `VOXV1` file format.
//!
//! Axis conventions (fixed for the whole crate):
//!
//! | view     | slicing axis | image `u` (column) | image `v` (row) |
//! |----------|--------------|--------------------|-----------------|
//! | axial    | z            | x                  | y               |
//! | coronal  | y            | x                  | z               |
//! | sagittal | x            | y                  | z               |
//!
//! Voxel storage is x-fastest: `index = x + nx * (y + ny * z)`. The sagittal
//! midplane is the plane `x = (nx - 1) / 2`, so left-right mirroring flips x.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const HU_MIN: f32 = -1000.0;
pub const HU_MAX: f32 = 3071.0;

pub const VOLUME_MAGIC: &[u8; 5] = b"VOXV1";
const HEADER_LEN: usize = 5 + 1 + 12 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    MrLike,
    CtLike,
    Synthetic,
    Label,
    Mask,
}

impl VolumeKind {
    pub fn code(self) -> u8 {
        match self {
            VolumeKind::MrLike => 0,
            VolumeKind::CtLike => 1,
            VolumeKind::Synthetic => 2,
            VolumeKind::Label => 3,
            VolumeKind::Mask => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => VolumeKind::MrLike,
            1 => VolumeKind::CtLike,
            2 => VolumeKind::Synthetic,
            3 => VolumeKind::Label,
            4 => VolumeKind::Mask,
            other => return Err(Error::UnknownKind(other)),
        })
    }

    pub fn is_hu(self) -> bool {
        matches!(self, VolumeKind::CtLike | VolumeKind::Synthetic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    /// Index of the slicing axis (0 = x, 1 = y, 2 = z).
    pub fn axis(self) -> usize {
        match self {
            View::Axial => 2,
            View::Coronal => 1,
            View::Sagittal => 0,
        }
    }

    /// Axes mapped to the image `(u, v)` coordinates.
    pub fn plane_axes(self) -> (usize, usize) {
        match self {
            View::Axial => (0, 1),
            View::Coronal => (0, 2),
            View::Sagittal => (1, 2),
        }
    }

    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.axis()]
    }

    /// `(width, height)` of a slice taken in this view.
    pub fn plane_dims(self, dims: [usize; 3]) -> (usize, usize) {
        let (a, b) = self.plane_axes();
        (dims[a], dims[b])
    }

    /// Voxel coordinate of in-plane pixel `(u, v)` on slice `index`.
    #[inline]
    pub fn voxel(self, index: usize, u: usize, v: usize) -> [usize; 3] {
        match self {
            View::Axial => [u, v, index],
            View::Coronal => [u, index, v],
            View::Sagittal => [index, u, v],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "axial" => Ok(View::Axial),
            "coronal" => Ok(View::Coronal),
            "sagittal" => Ok(View::Sagittal),
            other => Err(Error::param(format!("unknown view '{other}'"))),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major 2-D image, `u` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[u + self.width * v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f32) {
        self.data[u + self.width * v] = value;
    }

    /// Copy of the `size x size` window with top-left corner `(u0, v0)`.
    pub fn crop(&self, u0: usize, v0: usize, size: usize) -> Image2D {
        let mut data = Vec::with_capacity(size * size);
        for v in v0..v0 + size {
            let row = v * self.width;
            data.extend_from_slice(&self.data[row + u0..row + u0 + size]);
        }
        Image2D {
            width: size,
            height: size,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: f32,
    kind: VolumeKind,
    values: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: f32, kind: VolumeKind, values: Vec<f32>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "zero extent in dims {dims:?}"
            )));
        }
        if values.len() != n {
            return Err(Error::InvalidVolume(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        match kind {
            VolumeKind::CtLike | VolumeKind::Synthetic => {
                if let Some(bad) = values.iter().find(|v| !(HU_MIN..=HU_MAX).contains(*v)) {
                    return Err(Error::InvalidVolume(format!(
                        "HU value {bad} outside [-1000, 3071]"
                    )));
                }
            }
            VolumeKind::Mask => {
                if let Some(bad) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidVolume(format!(
                        "mask value {bad} is not 0 or 1"
                    )));
                }
            }
            VolumeKind::MrLike | VolumeKind::Label => {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::InvalidVolume(format!("non-finite value {bad}")));
                }
            }
        }
        Ok(Self {
            dims,
            spacing,
            kind,
            values,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: f32, kind: VolumeKind, value: f32) -> Result<Self> {
        Self::new(dims, spacing, kind, vec![value; dims.iter().product()])
    }

    pub fn mask_from_bools(dims: [usize; 3], spacing: f32, bits: &[bool]) -> Result<Self> {
        Self::new(
            dims,
            spacing,
            VolumeKind::Mask,
            bits.iter().map(|&b| f32::from(u8::from(b))).collect(),
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f32 {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> f32 {
        self.values[self.index(p)]
    }

    /// Same geometry, new values and kind.
    pub fn with_values(&self, kind: VolumeKind, values: Vec<f32>) -> Result<Volume> {
        Volume::new(self.dims, self.spacing, kind, values)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn slice(&self, view: View, index: usize) -> Result<Image2D> {
        let extent = view.extent(self.dims);
        if index >= extent {
            return Err(Error::OutOfRange { index, extent });
        }
        let (w, h) = view.plane_dims(self.dims);
        let mut data = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                data.push(self.values[self.index(view.voxel(index, u, v))]);
            }
        }
        Ok(Image2D {
            width: w,
            height: h,
            data,
        })
    }

    /// Returns a copy with slice `index` of `view` replaced by `image`.
    pub fn with_slice(&self, view: View, index: usize, image: &Image2D) -> Result<Volume> {
        let mut values = self.values.clone();
        insert_slice(self.dims, &mut values, view, index, image)?;
        Volume::new(self.dims, self.spacing, self.kind, values)
    }

    /// True when slice `index` holds any nonzero value.
    pub fn slice_has_nonzero(&self, view: View, index: usize) -> bool {
        let (w, h) = view.plane_dims(self.dims);
        (0..h).any(|v| (0..w).any(|u| self.values[self.index(view.voxel(index, u, v))] != 0.0))
    }
}

/// Writes `image` into slice `index` of a raw x-fastest buffer.
pub fn insert_slice(
    dims: [usize; 3],
    values: &mut [f32],
    view: View,
    index: usize,
    image: &Image2D,
) -> Result<()> {
    let extent = view.extent(dims);
    if index >= extent {
        return Err(Error::OutOfRange { index, extent });
    }
    let (w, h) = view.plane_dims(dims);
    if image.width != w || image.height != h {
        return Err(Error::shape(format!(
            "slice is {}x{}, view plane is {w}x{h}",
            image.width, image.height
        )));
    }
    for v in 0..h {
        for u in 0..w {
            let p = view.voxel(index, u, v);
            values[p[0] + dims[0] * (p[1] + dims[1] * p[2])] = image.get(u, v);
        }
    }
    Ok(())
}

/// Pads `v` to an `edge`-voxel cube, original content centred (offset `(edge - n) / 2` per axis).
pub fn resample_to_cube(v: &Volume, edge: usize, pad_value: f32) -> Result<Volume> {
    if let Some(&extent) = v.dims.iter().find(|&&d| d > edge) {
        return Err(Error::CubeTooSmall { edge, extent });
    }
    let off = v.dims.map(|d| (edge - d) / 2);
    let mut out = vec![pad_value; edge * edge * edge];
    for z in 0..v.dims[2] {
        for y in 0..v.dims[1] {
            let src = v.index([0, y, z]);
            let dst = off[0] + edge * ((y + off[1]) + edge * (z + off[2]));
            out[dst..dst + v.dims[0]].copy_from_slice(&v.values[src..src + v.dims[0]]);
        }
    }
    Volume::new([edge; 3], v.spacing, v.kind, out)
}

/// Left-right flip about the sagittal midplane.
pub fn mirror_volume(v: &Volume) -> Volume {
    let [nx, ny, nz] = v.dims;
    let mut out = Vec::with_capacity(v.values.len());
    for z in 0..nz {
        for y in 0..ny {
            let row = nx * (y + ny * z);
            out.extend(v.values[row..row + nx].iter().rev());
        }
    }
    Volume {
        dims: v.dims,
        spacing: v.spacing,
        kind: v.kind,
        values: out,
    }
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * v.values.len());
    buf.extend_from_slice(VOLUME_MAGIC);
    buf.push(v.kind.code());
    for d in v.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&v.spacing.to_le_bytes());
    for x in &v.values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < VOLUME_MAGIC.len() || &bytes[..5] != VOLUME_MAGIC {
        return Err(Error::BadMagic { expected: "VOXV1" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let kind = VolumeKind::from_code(bytes[5])?;
    let u32_at =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let dims = [u32_at(6) as usize, u32_at(10) as usize, u32_at(14) as usize];
    let spacing = f32::from_le_bytes([bytes[18], bytes[19], bytes[20], bytes[21]]);
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidVolume(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            needed: HEADER_LEN + expected,
            found: bytes.len(),
        });
    }
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(dims, spacing, kind, values)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_volume(v))?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    decode_volume(&fs::read(path)?)
}
