//! Sliding-patch inference and per-voxel fusion of overlapping estimates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gan::{translate_patch, PatchContext, Translator};
use crate::grid::{View, Volume, VolumeKind, HU_MIN};
use crate::prep::{net_to_hu, BodyMask};
use crate::tiles::{plan_tiles, TileSpec};

/// HU class bounds used by [`FusionPolicy::Vote`]: air `[-1000, air_max)`,
/// tissue `[air_max, tissue_max)`, bone `[tissue_max, 3071]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteParams {
    pub air_max: f32,
    pub tissue_max: f32,
    pub majority_frac: f32,
    pub minority_frac: f32,
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            air_max: -200.0,
            tissue_max: 200.0,
            majority_frac: 0.65,
            minority_frac: 0.65,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionPolicy {
    Average,
    Median,
    Vote(VoteParams),
}

impl FusionPolicy {
    pub const ALL: [FusionPolicy; 3] = [
        FusionPolicy::Average,
        FusionPolicy::Median,
        FusionPolicy::Vote(VoteParams {
            air_max: -200.0,
            tissue_max: 200.0,
            majority_frac: 0.65,
            minority_frac: 0.65,
        }),
    ];

    pub fn vote() -> Self {
        FusionPolicy::Vote(VoteParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionPolicy::Average => "average",
            FusionPolicy::Median => "median",
            FusionPolicy::Vote(_) => "vote",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "average" | "mean" => Ok(FusionPolicy::Average),
            "median" => Ok(FusionPolicy::Median),
            "vote" | "voting" => Ok(FusionPolicy::vote()),
            _ => Err(Error::param(format!(
                "unknown fusion policy '{s}' (average|median|vote)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FusionPolicy::Vote(p) = self {
            let frac_ok = |f: f32| f > 0.5 && f <= 1.0;
            if !(HU_MIN < p.air_max && p.air_max < p.tissue_max) {
                return Err(Error::param(
                    "vote class bounds must satisfy -1000 < air_max < tissue_max",
                ));
            }
            if !frac_ok(p.majority_frac) || !frac_ok(p.minority_frac) {
                return Err(Error::param("vote fractions must lie in (0.5, 1]"));
            }
        }
        Ok(())
    }

    /// Fused value of one voxel's estimates; `None` when there are none.
    pub fn combine(&self, values: &[f32]) -> Option<f32> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            FusionPolicy::Average => mean(values),
            FusionPolicy::Median => median(values),
            FusionPolicy::Vote(p) => vote(values, p),
        })
    }
}

impl std::fmt::Display for FusionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn mean(values: &[f32]) -> f32 {
    (values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64) as f32
}

fn median(values: &[f32]) -> f32 {
    let mut s = values.to_vec();
    s.sort_by(f32::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        ((s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0) as f32
    }
}

fn vote(values: &[f32], p: &VoteParams) -> f32 {
    let class = |v: f32| {
        if v < p.air_max {
            0
        } else if v < p.tissue_max {
            1
        } else {
            2
        }
    };
    let mut count = [0usize; 3];
    let mut sum = [0.0f64; 3];
    for &v in values {
        let c = class(v);
        count[c] += 1;
        sum[c] += v as f64;
    }
    // stable sort on count keeps air < tissue < bone order among ties
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| count[b].cmp(&count[a]));
    let total = values.len() as f32;
    let (a, b) = (order[0], order[1]);
    if count[a] as f32 / total >= p.majority_frac {
        (sum[a] / count[a] as f64) as f32
    } else if (count[a] + count[b]) as f32 / total >= p.minority_frac {
        ((sum[a] + sum[b]) / (count[a] + count[b]) as f64) as f32
    } else {
        mean(values)
    }
}

/// Ragged per-voxel store of HU estimates.
#[derive(Debug, Clone)]
pub struct EstimateAccumulator {
    dims: [usize; 3],
    spacing: f32,
    estimates: Vec<Vec<f32>>,
}

impl EstimateAccumulator {
    pub fn new(dims: [usize; 3], spacing: f32) -> Self {
        Self {
            dims,
            spacing,
            estimates: vec![Vec::new(); dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn push(&mut self, index: usize, hu: f32) {
        self.estimates[index].push(hu);
    }

    pub fn estimates(&self, index: usize) -> &[f32] {
        &self.estimates[index]
    }

    pub fn count(&self, index: usize) -> usize {
        self.estimates[index].len()
    }

    pub fn total(&self) -> usize {
        self.estimates.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.iter().all(Vec::is_empty)
    }

    pub fn merge(&mut self, other: EstimateAccumulator) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::shape("cannot merge accumulators of different dims"));
        }
        for (a, b) in self.estimates.iter_mut().zip(other.estimates) {
            a.extend(b);
        }
        Ok(())
    }

    /// Estimates per voxel as a volume (debugging aid).
    pub fn count_map(&self) -> Result<Volume> {
        let v = self.estimates.iter().map(|e| e.len() as f32).collect();
        Volume::new(self.dims, self.spacing, VolumeKind::Synthetic, v)
    }
}

/// Tiles every masked slice of `view`, translates each tile and records the retained,
/// masked voxels in HU.
pub fn synthesize_view(
    mr: &Volume,
    mask: &BodyMask,
    t: &dyn Translator,
    view: View,
    spec: &TileSpec,
    acc: &mut EstimateAccumulator,
) -> Result<()> {
    let dims = mr.dims();
    if mask.dims() != dims || acc.dims() != dims {
        return Err(Error::shape("MR, mask and accumulator dims differ"));
    }
    let (w, h) = view.plane_dims(dims);
    let tiles = plan_tiles((w, h), spec)?;
    let p = spec.patch;
    for slice in 0..view.extent(dims) {
        if !mask.mask.slice_has_nonzero(view, slice) {
            continue;
        }
        let m = mask.mask.slice(view, slice)?;
        let img = mr.slice(view, slice)?;
        for &(u0, v0) in &tiles {
            let (ua, ub) = spec.retained(u0, w);
            let (va, vb) = spec.retained(v0, h);
            let any = (va..vb).any(|v| (ua..ub).any(|u| m.get(u, v) != 0.0));
            if !any {
                continue;
            }
            let ctx = PatchContext {
                view,
                slice,
                origin: (u0, v0),
            };
            let out = translate_patch(t, &img.crop(u0, v0, p), &ctx)?;
            for v in va..vb {
                for u in ua..ub {
                    if m.get(u, v) != 0.0 {
                        let idx = mr.index(view.voxel(slice, u, v));
                        acc.push(idx, net_to_hu(out.get(u - u0, v - v0)));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Per-voxel fusion; voxels without estimates get `fill`.
pub fn fuse(acc: &EstimateAccumulator, policy: &FusionPolicy, fill: f32) -> Result<Volume> {
    policy.validate()?;
    let values = acc
        .estimates
        .par_iter()
        .map(|e| policy.combine(e).unwrap_or(fill))
        .collect();
    Volume::new(acc.dims, acc.spacing, VolumeKind::Synthetic, values)
}

/// Runs each view into a shared accumulator (views in parallel) and returns it unfused.
pub fn accumulate_views(
    mr: &Volume,
    mask: &BodyMask,
    translators: &[(View, &dyn Translator)],
    spec: &TileSpec,
) -> Result<EstimateAccumulator> {
    if translators.is_empty() {
        return Err(Error::param("at least one view translator is required"));
    }
    let parts: Vec<EstimateAccumulator> = translators
        .par_iter()
        .map(|(view, t)| {
            let mut acc = EstimateAccumulator::new(mr.dims(), mr.spacing());
            synthesize_view(mr, mask, *t, *view, spec, &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("non-empty");
    for p in it {
        acc.merge(p)?;
    }
    Ok(acc)
}

/// Full 1- to 3-view synthesis with `fill = -1000 HU` outside the mask.
pub fn synthesize_volume(
    mr: &Volume,
    mask: &BodyMask,
    translators: &[(View, &dyn Translator)],
    spec: &TileSpec,
    policy: &FusionPolicy,
) -> Result<Volume> {
    fuse(
        &accumulate_views(mr, mask, translators, spec)?,
        policy,
        HU_MIN,
    )
}
