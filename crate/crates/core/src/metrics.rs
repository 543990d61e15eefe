//! Region masks, HU error statistics, radiograph projections and report tables.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Image2D, View, Volume, VolumeKind, HU_MIN};
use crate::morph;
use crate::prep::BodyMask;

/// Boundary expansion in the reference geometry: 4 voxels at 1.125 mm.
pub const REFERENCE_EXPANSION_MM: f32 = 4.5;

/// Voxels of expansion keeping the reference physical distance (< 5 mm) at `spacing`.
pub fn expansion_voxels(spacing: f32) -> usize {
    (REFERENCE_EXPANSION_MM / spacing).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionSpec {
    Body {
        expand: usize,
    },
    /// Voxels above `threshold` HU on the reference CT.
    Bone {
        threshold: f32,
        expand: usize,
    },
    /// Voxels below `threshold` HU on the reference CT, inside the body.
    Air {
        threshold: f32,
        expand: usize,
    },
}

impl RegionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RegionSpec::Body { .. } => "body",
            RegionSpec::Bone { .. } => "bone",
            RegionSpec::Air { .. } => "air",
        }
    }

    pub fn expand(&self) -> usize {
        match *self {
            RegionSpec::Body { expand }
            | RegionSpec::Bone { expand, .. }
            | RegionSpec::Air { expand, .. } => expand,
        }
    }

    /// Body, bone (> 200 HU) and air (< -300 HU) with a common expansion.
    pub fn standard(expand: usize) -> [RegionSpec; 3] {
        [
            RegionSpec::Body { expand },
            RegionSpec::Bone {
                threshold: 200.0,
                expand,
            },
            RegionSpec::Air {
                threshold: -300.0,
                expand,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub region: RegionSpec,
    pub bits: Vec<bool>,
    /// The threshold selected nothing inside the body.
    pub empty: bool,
}

impl RegionMask {
    pub fn voxel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Undilated body contour from a CT: largest component above -500 HU, holes filled.
pub fn body_from_ct(ct: &Volume) -> Result<BodyMask> {
    crate::prep::foreground_mask(ct, |hu| hu > -500.0, 0)
}

pub fn region_mask(ct_ref: &Volume, body: &BodyMask, spec: RegionSpec) -> Result<RegionMask> {
    let dims = ct_ref.dims();
    if body.dims() != dims {
        return Err(Error::shape("reference CT and body mask dims differ"));
    }
    let inside = body.bits();
    let seed: Vec<bool> = match spec {
        RegionSpec::Body { .. } => inside.clone(),
        RegionSpec::Bone { threshold, .. } => ct_ref
            .values()
            .iter()
            .zip(&inside)
            .map(|(&hu, &b)| b && hu > threshold)
            .collect(),
        RegionSpec::Air { threshold, .. } => ct_ref
            .values()
            .iter()
            .zip(&inside)
            .map(|(&hu, &b)| b && hu < threshold)
            .collect(),
    };
    let empty = !seed.iter().any(|&b| b);
    if empty {
        log::warn!("{} region is empty before expansion", spec.name());
    }
    let bits = if empty {
        seed
    } else {
        morph::dilate_ball(dims, &seed, spec.expand())
    };
    Ok(RegionMask {
        region: spec,
        bits,
        empty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mae: f64,
    /// Mean of `ct - sct`: positive when the reference is brighter.
    pub me: f64,
    /// Sample standard deviation over voxels of `|ct - sct|` and `ct - sct`.
    pub mae_voxel_std: f64,
    pub me_voxel_std: f64,
    pub voxels: usize,
}

pub fn error_stats(ct: &Volume, sct: &Volume, mask: &[bool]) -> Result<ErrorStats> {
    if ct.dims() != sct.dims() || mask.len() != ct.len() {
        return Err(Error::shape("CT, sCT and mask dims differ"));
    }
    let diffs: Vec<f64> = ct
        .values()
        .iter()
        .zip(sct.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| a as f64 - b as f64)
        .collect();
    if diffs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = diffs.len() as f64;
    let me = diffs.iter().sum::<f64>() / n;
    let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let sample_std = |xs: &mut dyn Iterator<Item = f64>, mean: f64| {
        if diffs.len() < 2 {
            0.0
        } else {
            (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let mae_voxel_std = sample_std(&mut diffs.iter().map(|d| d.abs()), mae);
    let me_voxel_std = sample_std(&mut diffs.iter().copied(), me);
    Ok(ErrorStats {
        mae,
        me,
        mae_voxel_std,
        me_voxel_std,
        voxels: diffs.len(),
    })
}

pub fn mae(ct: &Volume, sct: &Volume, mask: &[bool]) -> Result<f64> {
    Ok(error_stats(ct, sct, mask)?.mae)
}

pub fn me(ct: &Volume, sct: &Volume, mask: &[bool]) -> Result<f64> {
    Ok(error_stats(ct, sct, mask)?.me)
}

/// MAE of the best single HU value over the pooled masked voxels (their median).
pub fn best_constant_mae(cases: &[(&Volume, &[bool])]) -> Result<(f64, f32)> {
    let mut vals: Vec<f32> = cases
        .iter()
        .flat_map(|(ct, m)| {
            ct.values()
                .iter()
                .zip(m.iter())
                .filter(|(_, &b)| b)
                .map(|(&v, _)| v)
        })
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    vals.sort_by(f32::total_cmp);
    let c = vals[(vals.len() - 1) / 2];
    let mae = vals
        .iter()
        .map(|&v| (v as f64 - c as f64).abs())
        .sum::<f64>()
        / vals.len() as f64;
    Ok((mae, c))
}

/// Parallel-ray sums of `max(0, HU + 1000) * spacing` along the view axis, unnormalized.
pub fn drr_raw(v: &Volume, view: View) -> Result<Image2D> {
    if !matches!(v.kind(), VolumeKind::CtLike | VolumeKind::Synthetic) {
        return Err(Error::param(format!(
            "radiographs need a CT-valued volume, got {:?}",
            v.kind()
        )));
    }
    if view == View::Axial {
        return Err(Error::param(
            "radiographs are projected along the sagittal or coronal axis",
        ));
    }
    let dims = v.dims();
    let (w, h) = view.plane_dims(dims);
    let mut acc = vec![0.0f64; w * h];
    for i in 0..view.extent(dims) {
        for vv in 0..h {
            for u in 0..w {
                let hu = v.get(view.voxel(i, u, vv));
                acc[u + w * vv] += (hu - HU_MIN).max(0.0) as f64 * v.spacing() as f64;
            }
        }
    }
    Image2D::new(w, h, acc.into_iter().map(|x| x as f32).collect())
}

/// [`drr_raw`] scaled so the brightest ray is 255; an all-air volume stays zero.
pub fn drr(v: &Volume, view: View) -> Result<Image2D> {
    let mut img = drr_raw(v, view)?;
    let max = img.data.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        img.data.iter_mut().for_each(|x| *x = (*x as f64 * 255.0 / max as f64) as f32);
    }
    Ok(img)
}

/// Binary 8-bit PGM with the highest `v` row at the top.
pub fn encode_pgm(img: &Image2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    for v in (0..img.height).rev() {
        for u in 0..img.width {
            out.push(img.get(u, v).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn write_pgm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub case_id: String,
    pub model: String,
    pub policy: String,
    pub tilespec: String,
    pub region: String,
    pub stats: ErrorStats,
}

pub const REPORT_HEADER: &str =
    "case_id,model,policy,tilespec,region,mae_hu,me_hu,voxels,mae_voxel_std,me_voxel_std";

fn write_row(s: &mut String, r: &RegionMetrics) {
    let st = &r.stats;
    let _ = writeln!(
        s,
        "{},{},{},{},{},{:.3},{:.3},{},{:.3},{:.3}",
        r.case_id,
        r.model,
        r.policy,
        r.tilespec,
        r.region,
        st.mae,
        st.me,
        st.voxels,
        st.mae_voxel_std,
        st.me_voxel_std
    );
}

/// Header plus one line per row.
pub fn rows_csv(rows: &[RegionMetrics]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{REPORT_HEADER}");
    for r in rows {
        write_row(&mut s, r);
    }
    s
}

/// Inverse of [`rows_csv`]; aggregate rows are skipped.
pub fn parse_rows_csv(text: &str) -> Result<Vec<RegionMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::param("metrics CSV header does not match"));
    }
    let bad = |l: &str| Error::param(format!("malformed metrics row '{l}'"));
    let mut out = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 10 {
            return Err(bad(l));
        }
        if f[0] == "mean" || f[0] == "std" {
            continue;
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(l));
        out.push(RegionMetrics {
            case_id: f[0].into(),
            model: f[1].into(),
            policy: f[2].into(),
            tilespec: f[3].into(),
            region: f[4].into(),
            stats: ErrorStats {
                mae: num(5)?,
                me: num(6)?,
                voxels: f[7].parse().map_err(|_| bad(l))?,
                mae_voxel_std: num(8)?,
                me_voxel_std: num(9)?,
            },
        });
    }
    Ok(out)
}

/// Per-case rows followed by `mean` and `std` rows (population std over cases) for each
/// (model, policy, tilespec, region) group, in first-seen order.
pub fn report(cases: &[RegionMetrics]) -> Result<String> {
    if cases.is_empty() {
        return Err(Error::param("report needs at least one case"));
    }
    let mut s = rows_csv(cases);
    let mut groups: Vec<(&str, &str, &str, &str)> = Vec::new();
    for r in cases {
        let key = (
            r.model.as_str(),
            r.policy.as_str(),
            r.tilespec.as_str(),
            r.region.as_str(),
        );
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for key in groups {
        let rows: Vec<&ErrorStats> = cases
            .iter()
            .filter(|r| {
                (
                    r.model.as_str(),
                    r.policy.as_str(),
                    r.tilespec.as_str(),
                    r.region.as_str(),
                ) == key
            })
            .map(|r| &r.stats)
            .collect();
        let cols = |f: &dyn Fn(&ErrorStats) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        let fields: [Vec<f64>; 5] = [
            cols(&|r| r.mae),
            cols(&|r| r.me),
            cols(&|r| r.voxels as f64),
            cols(&|r| r.mae_voxel_std),
            cols(&|r| r.me_voxel_std),
        ];
        let (means, stds): (Vec<f64>, Vec<f64>) = fields.iter().map(|c| mean_std(c)).unzip();
        let (m, p, t, g) = key;
        let _ = writeln!(
            s,
            "mean,{m},{p},{t},{g},{:.3},{:.3},{:.1},{:.3},{:.3}",
            means[0], means[1], means[2], means[3], means[4]
        );
        let _ = writeln!(
            s,
            "std,{m},{p},{t},{g},{:.3},{:.3},{:.1},{:.3},{:.3}",
            stds[0], stds[1], stds[2], stds[3], stds[4]
        );
    }
    Ok(s)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}
