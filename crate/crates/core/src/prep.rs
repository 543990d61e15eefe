//! MR intensity standardisation and body masks.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{Volume, VolumeKind, HU_MAX, HU_MIN};
use crate::morph;

/// Width of the network range.
pub const NET_MAX: f32 = 255.0;
/// HU width of one network-unit step (4071 / 255).
pub const HU_PER_NET_UNIT: f32 = (HU_MAX - HU_MIN) / NET_MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipPolicy {
    /// Nearest-rank percentile of masked voxel intensities.
    DynamicPercentile(f32),
    Static(f32),
}

impl Default for ClipPolicy {
    fn default() -> Self {
        ClipPolicy::Static(2500.0)
    }
}

impl ClipPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClipPolicy::DynamicPercentile(p) if !(p > 0.0 && p < 100.0) => {
                Err(Error::param(format!("percentile {p} must lie in (0, 100)")))
            }
            ClipPolicy::Static(v) if !(v > 0.0 && v.is_finite()) => Err(Error::param(format!(
                "static clip value {v} must be positive"
            ))),
            _ => Ok(()),
        }
    }

    /// Parses `static:2500` or `dynamic:99`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "clip policy '{s}' must look like static:2500 or dynamic:99"
            ))
        })?;
        let value: f32 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad clip value in '{s}'")))?;
        let policy = match kind.trim() {
            "static" => ClipPolicy::Static(value),
            "dynamic" => ClipPolicy::DynamicPercentile(value),
            other => return Err(Error::Config(format!("unknown clip policy '{other}'"))),
        };
        policy
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(policy)
    }
}

impl fmt::Display for ClipPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipPolicy::DynamicPercentile(p) => write!(f, "dynamic:{p}"),
            ClipPolicy::Static(v) => write!(f, "static:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyMask {
    pub mask: Volume,
    pub dilation_voxels: usize,
}

impl BodyMask {
    pub fn from_volume(mask: Volume, dilation_voxels: usize) -> Result<Self> {
        if mask.kind() != VolumeKind::Mask {
            return Err(Error::param("body mask volume must have kind Mask"));
        }
        Ok(Self {
            mask,
            dilation_voxels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.mask.dims()
    }

    pub fn bits(&self) -> Vec<bool> {
        self.mask.to_bools()
    }

    pub fn voxel_count(&self) -> usize {
        self.mask.count_nonzero()
    }
}

/// Largest 6-connected nonzero region of `v`, holes filled in 3-D, then ball-dilated.
pub fn foreground_mask(
    v: &Volume,
    foreground: impl Fn(f32) -> bool,
    dilate: usize,
) -> Result<BodyMask> {
    let dims = v.dims();
    let fg: Vec<bool> = v.values().iter().map(|&x| foreground(x)).collect();
    if !fg.iter().any(|&b| b) {
        return Err(Error::EmptyMask);
    }
    let body = morph::largest_component(dims, &fg);
    let body = morph::fill_holes(dims, &body);
    let body = morph::dilate_ball(dims, &body, dilate);
    BodyMask::from_volume(Volume::mask_from_bools(dims, v.spacing(), &body)?, dilate)
}

pub fn build_body_mask(mr: &Volume, dilate: usize) -> Result<BodyMask> {
    if mr.kind() != VolumeKind::MrLike {
        return Err(Error::param(format!(
            "body mask needs an MR volume, got {:?}",
            mr.kind()
        )));
    }
    foreground_mask(mr, |x| x != 0.0, dilate)
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the sorted sample.
pub fn nearest_rank_percentile(values: &mut [f32], p: f32) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f32::total_cmp);
    let rank = ((p as f64 / 100.0) * values.len() as f64).ceil() as usize;
    Some(values[rank.clamp(1, values.len()) - 1])
}

/// Resolves the clip value a policy would use on `mr` under `mask`.
pub fn resolve_clip(mr: &Volume, mask: &BodyMask, policy: ClipPolicy) -> Result<f32> {
    policy.validate()?;
    match policy {
        ClipPolicy::Static(v) => Ok(v),
        ClipPolicy::DynamicPercentile(p) => {
            if mask.dims() != mr.dims() {
                return Err(Error::shape("mask and MR dims differ"));
            }
            let mut vals: Vec<f32> = mr
                .values()
                .iter()
                .zip(mask.mask.values())
                .filter(|(_, &m)| m != 0.0)
                .map(|(&v, _)| v)
                .collect();
            let clip = nearest_rank_percentile(&mut vals, p).ok_or(Error::EmptyMask)?;
            if clip <= 0.0 {
                return Err(Error::Numeric(format!(
                    "percentile clip value {clip} is not positive"
                )));
            }
            Ok(clip)
        }
    }
}

/// `min(x, clip) / clip * 255`, clamped below at 0.
pub fn standardize_with(mr: &Volume, clip: f32) -> Result<Volume> {
    if !(clip > 0.0) {
        return Err(Error::param("clip value must be positive"));
    }
    let scale = NET_MAX / clip;
    let out = mr
        .values()
        .iter()
        .map(|&x| (x.clamp(0.0, clip) * scale).min(NET_MAX))
        .collect();
    mr.with_values(VolumeKind::MrLike, out)
}

pub fn standardize(mr: &Volume, mask: &BodyMask, policy: ClipPolicy) -> Result<Volume> {
    if mask.dims() != mr.dims() {
        return Err(Error::shape("mask and MR dims differ"));
    }
    standardize_with(mr, resolve_clip(mr, mask, policy)?)
}

#[inline]
pub fn hu_to_net(hu: f32) -> f32 {
    if cfg!(debug_assertions) && !(HU_MIN..=HU_MAX).contains(&hu) {
        log::debug!("hu_to_net: {hu} clamped into [-1000, 3071]");
    }
    (hu.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN) * NET_MAX
}

#[inline]
pub fn net_to_hu(y: f32) -> f32 {
    if cfg!(debug_assertions) && !(0.0..=NET_MAX).contains(&y) {
        log::debug!("net_to_hu: {y} clamped into [0, 255]");
    }
    HU_MIN + y.clamp(0.0, NET_MAX) / NET_MAX * (HU_MAX - HU_MIN)
}

/// CT volume mapped into network units (kind MrLike as a generic scalar carrier).
pub fn ct_to_net(ct: &Volume) -> Result<Volume> {
    if !ct.kind().is_hu() {
        return Err(Error::param("ct_to_net needs an HU volume"));
    }
    ct.with_values(
        VolumeKind::MrLike,
        ct.values().iter().map(|&h| hu_to_net(h)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_pair, PhantomSpec};

    fn mr_of(dims: [usize; 3], vals: Vec<f32>) -> Volume {
        Volume::new(dims, 1.0, VolumeKind::MrLike, vals).unwrap()
    }

    #[test]
    fn mask_keeps_largest_blob() {
        let dims = [12, 12, 12];
        let mut v = vec![0.0; 1728];
        let idx = |x: usize, y: usize, z: usize| x + 12 * (y + 12 * z);
        // 100 voxel slab: 5x5x4
        for z in 0..4 {
            for y in 0..5 {
                for x in 0..5 {
                    v[idx(x, y, z)] = 1.0;
                }
            }
        }
        // 10 voxel bar
        for x in 0..10 {
            v[idx(x, 10, 10)] = 1.0;
        }
        let m = build_body_mask(&mr_of(dims, v), 0).unwrap();
        assert_eq!(m.voxel_count(), 100);
        assert_eq!(m.mask.get([0, 10, 10]), 0.0);
    }

    #[test]
    fn mask_of_cube_without_dilation_is_cube() {
        let dims = [8, 8, 8];
        let v: Vec<f32> = (0..512)
            .map(|i| {
                let (x, y, z) = (i % 8, (i / 8) % 8, i / 64);
                if (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z) {
                    5.0
                } else {
                    0.0
                }
            })
            .collect();
        let m = build_body_mask(&mr_of(dims, v.clone()), 0).unwrap();
        assert_eq!(
            m.mask.values(),
            v.iter()
                .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn mask_errors() {
        assert!(matches!(
            build_body_mask(&mr_of([3, 3, 3], vec![0.0; 27]), 2),
            Err(Error::EmptyMask)
        ));
        let ct = Volume::filled([3, 3, 3], 1.0, VolumeKind::CtLike, 0.0).unwrap();
        assert!(build_body_mask(&ct, 0).is_err());
    }

    #[test]
    fn phantom_mask_contains_body_ellipsoid() {
        let spec = PhantomSpec {
            edge: 32,
            seed: 4,
            ..PhantomSpec::default()
        };
        let p = generate_pair(&spec).unwrap();
        let m = build_body_mask(&p.mr, 2).unwrap();
        let c = 15.5f32;
        let mut body = 0;
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let q: f32 = [x, y, z]
                        .iter()
                        .zip(spec.body)
                        .map(|(&i, a)| ((i as f32 - c) / (a * 32.0)).powi(2))
                        .sum();
                    if q <= 1.0 {
                        body += 1;
                        assert_eq!(m.mask.get([x, y, z]), 1.0);
                    }
                }
            }
        }
        assert!(m.voxel_count() > body);
    }

    #[test]
    fn static_clip_closed_form() {
        let mr = Volume::filled([2, 2, 2], 1.0, VolumeKind::MrLike, 100.0).unwrap();
        let mask = BodyMask::from_volume(
            Volume::filled([2, 2, 2], 1.0, VolumeKind::Mask, 1.0).unwrap(),
            0,
        )
        .unwrap();
        let s = standardize(&mr, &mask, ClipPolicy::Static(2500.0)).unwrap();
        assert!(s.values().iter().all(|&x| (x - 10.2).abs() < 1e-4));
    }

    #[test]
    fn dynamic_clip_is_nearest_rank() {
        let vals: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        let mr = mr_of([10, 10, 1], vals);
        let mask = BodyMask::from_volume(
            Volume::filled([10, 10, 1], 1.0, VolumeKind::Mask, 1.0).unwrap(),
            0,
        )
        .unwrap();
        assert_eq!(
            resolve_clip(&mr, &mask, ClipPolicy::DynamicPercentile(99.0)).unwrap(),
            99.0
        );
        let s = standardize(&mr, &mask, ClipPolicy::DynamicPercentile(99.0)).unwrap();
        assert_eq!(s.values()[98], 255.0);
        assert_eq!(s.values()[99], 255.0);
        assert!(s.values()[97] < 255.0);
        // max maps to 255 when clipping at the max
        let s2 = standardize(&mr, &mask, ClipPolicy::Static(100.0)).unwrap();
        assert_eq!(s2.values()[99], 255.0);
    }

    #[test]
    fn dynamic_on_empty_mask_fails() {
        let mr = mr_of([2, 2, 2], vec![1.0; 8]);
        let mask = BodyMask {
            mask: Volume::filled([2, 2, 2], 1.0, VolumeKind::Mask, 0.0).unwrap(),
            dilation_voxels: 0,
        };
        assert!(matches!(
            standardize(&mr, &mask, ClipPolicy::DynamicPercentile(99.0)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn standardize_is_idempotent_at_resolved_clip() {
        let mr = mr_of([4, 1, 1], vec![10.0, 50.0, 3000.0, 0.0]);
        let once = standardize_with(&mr, 2500.0).unwrap();
        let twice = standardize_with(&once, 255.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn hu_net_mapping() {
        assert_eq!(hu_to_net(-1000.0), 0.0);
        assert_eq!(hu_to_net(3071.0), 255.0);
        assert!((hu_to_net(40.0) - 1040.0 / 4071.0 * 255.0).abs() < 1e-4);
        assert!((hu_to_net(40.0) - 65.14).abs() < 0.01);
        for hu in [-1000.0f32, -321.5, 0.0, 40.0, 700.0, 3071.0] {
            assert!((net_to_hu(hu_to_net(hu)) - hu).abs() < HU_PER_NET_UNIT);
        }
        assert_eq!(hu_to_net(-5000.0), 0.0);
        assert_eq!(net_to_hu(300.0), 3071.0);
    }

    #[test]
    fn clip_policy_parse() {
        assert_eq!(
            ClipPolicy::parse("static:2500").unwrap(),
            ClipPolicy::Static(2500.0)
        );
        assert_eq!(
            ClipPolicy::parse("dynamic:99").unwrap(),
            ClipPolicy::DynamicPercentile(99.0)
        );
        assert!(ClipPolicy::parse("dynamic:100").is_err());
        assert!(ClipPolicy::parse("foo").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn standardized_values_stay_in_net_range(vals in prop::collection::vec(0.0f32..10000.0, 8), p in 1.0f32..99.0) {
                let mr = mr_of([2, 2, 2], vals);
                let mask = BodyMask::from_volume(Volume::filled([2, 2, 2], 1.0, VolumeKind::Mask, 1.0).unwrap(), 0).unwrap();
                for policy in [ClipPolicy::DynamicPercentile(p), ClipPolicy::Static(2500.0)] {
                    if let Ok(s) = standardize(&mr, &mask, policy) {
                        prop_assert!(s.values().iter().all(|&x| (0.0..=255.0).contains(&x)));
                    }
                }
            }
        }
    }
}
