//! Inference tiling geometry and the training-time augmentation recipe.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Image2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileSpec {
    pub patch: usize,
    pub stride: usize,
    pub crop: usize,
}

impl TileSpec {
    pub fn new(patch: usize, stride: usize, crop: usize) -> Result<Self> {
        let t = Self {
            patch,
            stride,
            crop,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let TileSpec {
            patch,
            stride,
            crop,
        } = *self;
        if patch == 0 {
            return Err(Error::param("patch size must be positive"));
        }
        if 2 * crop >= patch {
            return Err(Error::param(format!(
                "crop {crop} leaves nothing of a {patch}-voxel patch"
            )));
        }
        if stride == 0 || stride > patch - 2 * crop {
            return Err(Error::param(format!(
                "stride {stride} must lie in 1..={} to cover the slice (patch {patch}, crop {crop})",
                patch - 2 * crop
            )));
        }
        Ok(())
    }

    /// Non-overlapping tiling (`c = 0`, `s = P`).
    pub fn perfect(patch: usize) -> Self {
        Self {
            patch,
            stride: patch,
            crop: 0,
        }
    }

    pub fn label(&self) -> String {
        format!("c{}_s{}", self.crop, self.stride)
    }

    /// Retained `[start, end)` range of a patch at `origin` along an axis of length `extent`.
    /// Crop is skipped on patch edges lying on the slice border.
    #[inline]
    pub fn retained(&self, origin: usize, extent: usize) -> (usize, usize) {
        let start = if origin == 0 { 0 } else { origin + self.crop };
        let end = if origin + self.patch == extent {
            extent
        } else {
            origin + self.patch - self.crop
        };
        (start, end)
    }
}

/// Origins along one axis: `0, s, 2s, …` plus a final origin clamped to end at the border.
pub fn plan_axis(extent: usize, spec: &TileSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if extent < spec.patch {
        return Err(Error::param(format!(
            "extent {extent} is smaller than patch {}",
            spec.patch
        )));
    }
    let last = extent - spec.patch;
    let mut origins: Vec<usize> = (0..=last).step_by(spec.stride).collect();
    if *origins.last().expect("origin 0 always present") != last {
        origins.push(last);
    }
    Ok(origins)
}

/// Patch origins `(u, v)` covering a `width x height` slice, `u` fastest.
pub fn plan_tiles(extent: (usize, usize), spec: &TileSpec) -> Result<Vec<(usize, usize)>> {
    let us = plan_axis(extent.0, spec)?;
    let vs = plan_axis(extent.1, spec)?;
    Ok(vs
        .iter()
        .flat_map(|&v| us.iter().map(move |&u| (u, v)))
        .collect())
}

/// Interior maximum of the number of estimates a voxel receives from one view.
pub fn estimates_per_voxel(spec: &TileSpec) -> usize {
    let kept = spec.patch - 2 * spec.crop;
    let per_axis = kept.div_ceil(spec.stride);
    per_axis * per_axis
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub rot_deg: (f32, f32),
    pub scale: (f32, f32),
    pub shear: (f32, f32),
    pub cuts_per_slice: usize,
    pub max_tries: usize,
    pub mirror: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rot_deg: (-3.5, 3.5),
            scale: (0.9, 1.1),
            shear: (0.97, 1.03),
            cuts_per_slice: 5,
            max_tries: 100,
            mirror: true,
        }
    }
}

impl AugmentParams {
    /// No geometric jitter.
    pub fn identity() -> Self {
        Self {
            rot_deg: (0.0, 0.0),
            scale: (1.0, 1.0),
            shear: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f32, f32)| r.0 <= r.1;
        if !(ordered(self.rot_deg) && ordered(self.scale) && ordered(self.shear)) {
            return Err(Error::param(
                "augmentation ranges must be ordered (lo <= hi)",
            ));
        }
        if self.scale.0 <= 0.0 || self.shear.0 <= 0.0 {
            return Err(Error::param("scale and shear ranges must be positive"));
        }
        if self.cuts_per_slice == 0 || self.max_tries == 0 {
            return Err(Error::param("cuts_per_slice and max_tries must be >= 1"));
        }
        Ok(())
    }
}

/// Training patches drawn over all epochs.
pub fn epoch_patch_count(slices_per_view: u64, params: &AugmentParams, epochs: u64) -> u64 {
    let mirror = if params.mirror { 2 } else { 1 };
    slices_per_view * mirror * params.cuts_per_slice as u64 * epochs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub mr: Image2D,
    pub ct: Image2D,
    pub origin: (usize, usize),
}

fn sample(lo_hi: (f32, f32), rng: &mut impl Rng) -> f32 {
    if lo_hi.0 == lo_hi.1 {
        lo_hi.0
    } else {
        rng.gen_range(lo_hi.0..lo_hi.1)
    }
}

/// Inverse-mapped affine warp about the image centre; outside samples read `fill`.
fn warp(img: &Image2D, inv: [[f32; 2]; 2], fill: f32) -> Image2D {
    let cu = (img.width as f32 - 1.0) / 2.0;
    let cv = (img.height as f32 - 1.0) / 2.0;
    let mut out = Image2D::filled(img.width, img.height, fill);
    let at = |u: i64, v: i64| -> f32 {
        if u < 0 || v < 0 || u >= img.width as i64 || v >= img.height as i64 {
            fill
        } else {
            img.get(u as usize, v as usize)
        }
    };
    for v in 0..img.height {
        for u in 0..img.width {
            let du = u as f32 - cu;
            let dv = v as f32 - cv;
            let su = inv[0][0] * du + inv[0][1] * dv + cu;
            let sv = inv[1][0] * du + inv[1][1] * dv + cv;
            let u0 = su.floor();
            let v0 = sv.floor();
            let fu = su - u0;
            let fv = sv - v0;
            let (u0, v0) = (u0 as i64, v0 as i64);
            let val = (1.0 - fu) * (1.0 - fv) * at(u0, v0)
                + fu * (1.0 - fv) * at(u0 + 1, v0)
                + (1.0 - fu) * fv * at(u0, v0 + 1)
                + fu * fv * at(u0 + 1, v0 + 1);
            out.set(u, v, val);
        }
    }
    out
}

/// The forward matrix `R(θ) · diag(scale) · [[1, shear-1], [0, 1]]`, inverted.
fn inverse_affine(rot_deg: f32, scale: f32, shear: f32) -> [[f32; 2]; 2] {
    let (s, c) = rot_deg.to_radians().sin_cos();
    let k = shear - 1.0;
    let a = [
        [c * scale, (c * k - s) * scale],
        [s * scale, (s * k + c) * scale],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ]
}

/// Air test in network units (MR 0, CT -1000 HU == 0).
fn all_air(img: &Image2D) -> bool {
    img.data.iter().all(|&x| x <= 1e-3)
}

/// Applies one shared random affine to a paired slice and cuts `cuts_per_slice` patches.
///
/// A cut is rejected only when both the MR and CT windows are entirely air; after
/// `max_tries` rejected draws the last draw is kept.
pub fn augment_slice(
    mr: &Image2D,
    ct: &Image2D,
    patch: usize,
    params: &AugmentParams,
    rng: &mut impl Rng,
) -> Result<Vec<PatchPair>> {
    params.validate()?;
    if mr.width != ct.width || mr.height != ct.height {
        return Err(Error::shape("MR and CT slices differ in size"));
    }
    if mr.width < patch || mr.height < patch {
        return Err(Error::param(format!(
            "slice {}x{} is smaller than patch {patch}",
            mr.width, mr.height
        )));
    }
    let inv = inverse_affine(
        sample(params.rot_deg, rng),
        sample(params.scale, rng),
        sample(params.shear, rng),
    );
    let mr_w = warp(mr, inv, 0.0);
    let ct_w = warp(ct, inv, 0.0);
    let mut out = Vec::with_capacity(params.cuts_per_slice);
    for _ in 0..params.cuts_per_slice {
        let mut pair = None;
        for _ in 0..params.max_tries {
            let u = rng.gen_range(0..=mr.width - patch);
            let v = rng.gen_range(0..=mr.height - patch);
            let m = mr_w.crop(u, v, patch);
            let c = ct_w.crop(u, v, patch);
            let air = all_air(&m) && all_air(&c);
            pair = Some(PatchPair {
                mr: m,
                ct: c,
                origin: (u, v),
            });
            if !air {
                break;
            }
        }
        out.push(pair.expect("max_tries >= 1"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_size_plans() {
        let t = TileSpec::new(128, 128, 0).unwrap();
        assert_eq!(plan_axis(512, &t).unwrap(), vec![0, 128, 256, 384]);
        let t = TileSpec::new(128, 96, 16).unwrap();
        assert_eq!(plan_axis(512, &t).unwrap(), vec![0, 96, 192, 288, 384]);
        let t = TileSpec::new(128, 32, 16).unwrap();
        assert_eq!(plan_axis(512, &t).unwrap().len(), 13);
    }

    #[test]
    fn stride96_crop16_retained_regions_are_disjoint() {
        let t = TileSpec::new(128, 96, 16).unwrap();
        let origins = plan_axis(512, &t).unwrap();
        let mut cover = vec![0u32; 512];
        for o in origins {
            let (a, b) = t.retained(o, 512);
            for c in &mut cover[a..b] {
                *c += 1;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn clamped_final_origin() {
        let t = TileSpec::new(16, 10, 0).unwrap();
        assert_eq!(plan_axis(40, &t).unwrap(), vec![0, 10, 20, 24]);
        assert!(plan_axis(15, &t).is_err());
    }

    #[test]
    fn coverage_exhaustive_small() {
        for patch in [4usize, 5, 8] {
            for crop in 0..(patch + 1) / 2 {
                if 2 * crop >= patch {
                    continue;
                }
                for stride in 1..=patch - 2 * crop {
                    let t = TileSpec::new(patch, stride, crop).unwrap();
                    for extent in patch..patch * 4 {
                        let mut cover = vec![0u32; extent];
                        for o in plan_axis(extent, &t).unwrap() {
                            let (a, b) = t.retained(o, extent);
                            for c in &mut cover[a..b] {
                                *c += 1;
                            }
                        }
                        assert!(cover.iter().all(|&c| c >= 1), "{t:?} extent {extent}");
                    }
                }
            }
        }
    }

    #[test]
    fn estimate_formula_examples() {
        assert_eq!(estimates_per_voxel(&TileSpec::new(128, 32, 8).unwrap()), 16);
        assert_eq!(
            3 * estimates_per_voxel(&TileSpec::new(128, 32, 8).unwrap()),
            48
        );
        assert_eq!(estimates_per_voxel(&TileSpec::new(128, 32, 16).unwrap()), 9);
        assert_eq!(estimates_per_voxel(&TileSpec::perfect(128)), 1);
    }

    /// Brute-force: maximum coverage over a long periodic axis, squared for two axes.
    fn brute_max_count(t: &TileSpec) -> usize {
        let extent = t.patch * 8 + t.stride * 3;
        let origins: Vec<usize> = (0..=extent - t.patch).step_by(t.stride).collect();
        let mut cover = vec![0usize; extent];
        for &o in &origins {
            for c in &mut cover[o + t.crop..o + t.patch - t.crop] {
                *c += 1;
            }
        }
        let m = cover[t.patch..extent - t.patch]
            .iter()
            .copied()
            .max()
            .unwrap();
        m * m
    }

    #[test]
    fn estimate_formula_matches_brute_force_grid() {
        for patch in [16usize, 32, 64] {
            for crop in 0..=patch / 4 {
                for stride in 1..=patch - 2 * crop {
                    let t = TileSpec::new(patch, stride, crop).unwrap();
                    assert_eq!(estimates_per_voxel(&t), brute_max_count(&t), "{t:?}");
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(TileSpec::new(0, 1, 0).is_err());
        assert!(TileSpec::new(8, 1, 4).is_err());
        assert!(TileSpec::new(8, 7, 1).is_err());
        assert!(TileSpec::new(8, 0, 1).is_err());
    }

    #[test]
    fn epoch_patch_counts_scale_with_slices() {
        let p = AugmentParams::default();
        assert_eq!(epoch_patch_count(2663, &p, 200), 5_326_000);
        assert_eq!(epoch_patch_count(2524, &p, 200), 5_048_000);
        assert_eq!(epoch_patch_count(4245, &p, 200), 8_490_000);
        assert_eq!(epoch_patch_count(0, &p, 200), 0);
    }

    fn checker(w: usize) -> Image2D {
        let data = (0..w * w)
            .map(|i| {
                if ((i % w) / 3 + (i / w) / 3) % 2 == 0 {
                    200.0
                } else {
                    40.0
                }
            })
            .collect();
        Image2D::new(w, w, data).unwrap()
    }

    #[test]
    fn zero_width_ranges_are_deterministic() {
        let mr = checker(24);
        let params = AugmentParams {
            cuts_per_slice: 3,
            ..AugmentParams::identity()
        };
        let a = augment_slice(&mr, &mr, 8, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = augment_slice(&mr, &mr, 8, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        // identity warp: patches are plain crops
        for p in &a {
            assert_eq!(p.mr, mr.crop(p.origin.0, p.origin.1, 8));
        }
    }

    #[test]
    fn pairing_survives_augmentation() {
        let mr = checker(32);
        let ct = Image2D::new(32, 32, mr.data.iter().map(|x| 0.5 * x).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            for p in augment_slice(&mr, &ct, 16, &AugmentParams::default(), &mut rng).unwrap() {
                for (a, b) in p.mr.data.iter().zip(&p.ct.data) {
                    assert!((0.5 * a - b).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn air_cuts_are_redrawn() {
        // one bright pixel in a sea of air: with enough tries every cut should contain it
        let mut mr = Image2D::filled(32, 32, 0.0);
        for v in 12..20 {
            for u in 12..20 {
                mr.set(u, v, 100.0);
            }
        }
        let params = AugmentParams {
            cuts_per_slice: 10,
            ..AugmentParams::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cuts = augment_slice(&mr, &mr, 8, &params, &mut rng).unwrap();
        assert!(cuts.iter().all(|p| p.mr.data.iter().any(|&x| x > 0.0)));
        assert!(augment_slice(&mr, &Image2D::filled(31, 32, 0.0), 8, &params, &mut rng).is_err());
        assert!(augment_slice(&mr.crop(0, 0, 4), &mr.crop(0, 0, 4), 8, &params, &mut rng).is_err());
    }
}
