//! Procedural MR/CT/label phantoms with perfect voxel alignment.
//!
//! Geometry lives in normalised body coordinates: a voxel at `p` has
//! `q = (p - centre) / semi_axes`, and `|q| <= 1` is inside the body. Bone
//! shells are bands of `|q|`; air cavities and the tumour are small
//! ellipsoids. Everything except the tumour and the artifact is symmetric
//! about the sagittal midplane.
//!
//! The MR side maps bone and interior air to nearly the same dark intensity,
//! so a voxel's class cannot be recovered from its MR value alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Volume, VolumeKind, HU_MAX, HU_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TissueClass {
    ExteriorAir,
    InteriorAir,
    SoftTissue,
    Bone,
    Tumor,
}

impl TissueClass {
    pub const ALL: [TissueClass; 5] = [
        TissueClass::ExteriorAir,
        TissueClass::InteriorAir,
        TissueClass::SoftTissue,
        TissueClass::Bone,
        TissueClass::Tumor,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: f32) -> Option<Self> {
        if code.fract() != 0.0 || code < 0.0 {
            return None;
        }
        Self::ALL.get(code as usize).copied()
    }

    /// Noise-free CT value.
    pub fn hu(self) -> f32 {
        match self {
            TissueClass::ExteriorAir | TissueClass::InteriorAir => -1000.0,
            TissueClass::SoftTissue => 40.0,
            TissueClass::Tumor => 60.0,
            TissueClass::Bone => 700.0,
        }
    }

    /// Noise-free MR intensity (arbitrary scanner units).
    pub fn mr(self) -> f32 {
        match self {
            TissueClass::ExteriorAir => 0.0,
            TissueClass::InteriorAir => 60.0,
            TissueClass::Bone => 100.0,
            TissueClass::SoftTissue => 2300.0,
            TissueClass::Tumor => 2500.0,
        }
    }
}

/// MR intensity of the dark tumour core (inner half of the tumour radius).
pub const TUMOR_CORE_MR: f32 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub edge: usize,
    /// Body ellipsoid semi-axes as fractions of `edge`.
    pub body: [f32; 3],
    pub n_bone_shells: usize,
    pub n_air_cavities: usize,
    pub tumor: bool,
    pub artifact: bool,
    pub noise_hu: f32,
    pub noise_mr: f32,
    pub spacing: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            edge: 64,
            body: [0.36, 0.40, 0.42],
            n_bone_shells: 1,
            n_air_cavities: 2,
            tumor: false,
            artifact: false,
            noise_hu: 20.0,
            noise_mr: 60.0,
            spacing: 2.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.body.iter().any(|&a| !(a > 0.0 && a <= 0.5)) {
            return Err(Error::param(format!(
                "body semi-axes {:?} must lie in (0, 0.5]",
                self.body
            )));
        }
        if self.n_bone_shells < 1 {
            return Err(Error::param("n_bone_shells must be >= 1"));
        }
        if self.n_bone_shells > 3 {
            return Err(Error::param("at most 3 bone shells fit inside the body"));
        }
        if self.edge < 8 {
            return Err(Error::param("edge must be at least 8 voxels"));
        }
        if !(self.noise_hu >= 0.0 && self.noise_mr >= 0.0) {
            return Err(Error::param("noise sigmas must be non-negative"));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::param("spacing must be positive"));
        }
        Ok(())
    }

    /// One-line-per-field text form, used for the sidecar manifest.
    pub fn to_manifest(&self) -> String {
        format!(
            "seed={}\nedge={}\nbody={},{},{}\nn_bone_shells={}\nn_air_cavities={}\ntumor={}\nartifact={}\nnoise_hu={}\nnoise_mr={}\nspacing={}\n",
            self.seed,
            self.edge,
            self.body[0],
            self.body[1],
            self.body[2],
            self.n_bone_shells,
            self.n_air_cavities,
            self.tumor,
            self.artifact,
            self.noise_hu,
            self.noise_mr,
            self.spacing
        )
    }
}

#[derive(Debug, Clone)]
pub struct PhantomPair {
    pub mr: Volume,
    pub ct: Volume,
    pub labels: Volume,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    centre: [f32; 3],
    radii: [f32; 3],
}

impl Blob {
    fn dist2(&self, q: [f32; 3]) -> f32 {
        (0..3)
            .map(|a| ((q[a] - self.centre[a]) / self.radii[a]).powi(2))
            .sum()
    }
}

/// Seed-dependent geometry, all in normalised body coordinates.
struct Layout {
    shells: Vec<(f32, f32)>,
    cavities: Vec<Blob>,
    tumor: Option<Blob>,
    implant: Option<Blob>,
    streak_z: f32,
    bias_phase: [f32; 3],
}

impl Layout {
    fn sample(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Layout {
        let mut shells = Vec::new();
        for k in 0..spec.n_bone_shells {
            let outer = 0.93 - 0.22 * k as f32 + rng.gen_range(-0.02..0.02);
            let thick = rng.gen_range(0.10..0.14);
            shells.push((outer - thick, outer));
        }
        let inner_limit = shells.last().map(|s| s.0).unwrap_or(0.9) - 0.06;

        let mut cavities = Vec::new();
        let mut remaining = spec.n_air_cavities;
        while remaining > 0 {
            let r = [
                rng.gen_range(0.10..0.16),
                rng.gen_range(0.10..0.16),
                rng.gen_range(0.12..0.20),
            ];
            let y = rng.gen_range(-0.25..0.25);
            let z = rng.gen_range(-0.30..0.30);
            if remaining >= 2 {
                let x = rng.gen_range(0.18..0.32);
                cavities.push(Blob {
                    centre: [x, y, z],
                    radii: r,
                });
                cavities.push(Blob {
                    centre: [-x, y, z],
                    radii: r,
                });
                remaining -= 2;
            } else {
                cavities.push(Blob {
                    centre: [0.0, y, z],
                    radii: r,
                });
                remaining -= 1;
            }
        }
        // shrink anything that would poke through the innermost shell
        for c in &mut cavities {
            let reach = (0..3)
                .map(|a| c.centre[a].abs() + c.radii[a])
                .fold(0.0f32, f32::max);
            if reach > inner_limit {
                let s = inner_limit / reach;
                for a in 0..3 {
                    c.centre[a] *= s;
                    c.radii[a] *= s;
                }
            }
        }

        let tumor = spec.tumor.then(|| {
            let r = rng.gen_range(0.20..0.26);
            Blob {
                centre: [0.42, rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                radii: [r, r * 1.1, r],
            }
        });
        let (implant, streak_z) = if spec.artifact {
            let z = rng.gen_range(-0.35..-0.15);
            (
                Some(Blob {
                    centre: [rng.gen_range(-0.3..0.3), -0.55, z],
                    radii: [0.07, 0.07, 0.07],
                }),
                z,
            )
        } else {
            (None, 0.0)
        };
        let bias_phase = [
            rng.gen_range(0.0..std::f32::consts::TAU),
            rng.gen_range(0.0..std::f32::consts::TAU),
            rng.gen_range(0.0..std::f32::consts::TAU),
        ];
        Layout {
            shells,
            cavities,
            tumor,
            implant,
            streak_z,
            bias_phase,
        }
    }

    fn classify(&self, q: [f32; 3]) -> (TissueClass, bool) {
        let r2 = q.iter().map(|c| c * c).sum::<f32>();
        if r2 > 1.0 {
            return (TissueClass::ExteriorAir, false);
        }
        let r = r2.sqrt();
        if let Some(t) = &self.tumor {
            let d = t.dist2(q);
            if d <= 1.0 && !self.shells.iter().any(|&(a, b)| r >= a && r <= b) {
                return (TissueClass::Tumor, d <= 0.25);
            }
        }
        if self.shells.iter().any(|&(a, b)| r >= a && r <= b) {
            return (TissueClass::Bone, false);
        }
        if self.cavities.iter().any(|c| c.dist2(q) <= 1.0) {
            return (TissueClass::InteriorAir, false);
        }
        (TissueClass::SoftTissue, false)
    }
}

/// Generates an aligned `(mr, ct, labels)` triple; deterministic in `spec.seed`.
pub fn generate_pair(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = Layout::sample(spec, &mut rng);
    let n = spec.edge;
    let centre = (n as f32 - 1.0) / 2.0;
    let semi = spec.body.map(|a| a * n as f32);

    let hu_noise = Normal::new(0.0f32, spec.noise_hu.max(f32::MIN_POSITIVE)).expect("finite sigma");
    let mr_noise = Normal::new(0.0f32, spec.noise_mr.max(f32::MIN_POSITIVE)).expect("finite sigma");

    let total = n * n * n;
    let mut labels = Vec::with_capacity(total);
    let mut ct = Vec::with_capacity(total);
    let mut mr = Vec::with_capacity(total);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f32, y as f32, z as f32];
                let q = [
                    (p[0] - centre) / semi[0],
                    (p[1] - centre) / semi[1],
                    (p[2] - centre) / semi[2],
                ];
                let (class, tumor_core) = layout.classify(q);
                labels.push(f32::from(class.code()));
                if class == TissueClass::ExteriorAir {
                    ct.push(HU_MIN);
                    mr.push(0.0);
                    continue;
                }
                let mut hu = class.hu();
                let mut intensity = if tumor_core {
                    TUMOR_CORE_MR
                } else {
                    class.mr()
                };
                if let Some(imp) = &layout.implant {
                    if imp.dist2(q) <= 1.0 {
                        hu = 3000.0;
                        intensity = 0.0;
                    } else if (q[2] - layout.streak_z).abs() * semi[2] < 1.0
                        && (q[1] - imp.centre[1]).abs() < 0.5
                    {
                        hu += 800.0;
                    }
                }
                if spec.artifact {
                    let ph = layout.bias_phase;
                    let field = 1.0
                        + 0.12
                            * (std::f32::consts::PI * q[0] * 0.5 + ph[0]).sin()
                            * (std::f32::consts::PI * q[1] * 0.5 + ph[1]).cos()
                        + 0.05 * (std::f32::consts::PI * q[2] * 0.5 + ph[2]).sin();
                    intensity *= field;
                }
                let hu_n = if spec.noise_hu > 0.0 {
                    hu_noise.sample(&mut rng)
                } else {
                    0.0
                };
                let mr_n = if spec.noise_mr > 0.0 {
                    mr_noise.sample(&mut rng)
                } else {
                    0.0
                };
                ct.push((hu + hu_n).clamp(HU_MIN, HU_MAX));
                // interior voxels stay strictly positive so the body is the nonzero set
                mr.push((intensity + mr_n).max(1.0));
            }
        }
    }
    let dims = [n; 3];
    Ok(PhantomPair {
        mr: Volume::new(dims, spec.spacing, VolumeKind::MrLike, mr)?,
        ct: Volume::new(dims, spec.spacing, VolumeKind::CtLike, ct)?,
        labels: Volume::new(dims, spec.spacing, VolumeKind::Label, labels)?,
    })
}

/// Noise-free CT from the class table.
pub fn oracle_translate(labels: &Volume) -> Result<Volume> {
    if labels.kind() != VolumeKind::Label {
        return Err(Error::param(format!(
            "oracle_translate needs a Label volume, got {:?}",
            labels.kind()
        )));
    }
    let values = labels
        .values()
        .iter()
        .map(|&c| {
            TissueClass::from_code(c)
                .map(TissueClass::hu)
                .ok_or_else(|| {
                    Error::InvalidVolume(format!("label code {c} is not a tissue class"))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    labels.with_values(VolumeKind::CtLike, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::mirror_volume;

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            seed,
            edge: 32,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn centre_is_soft_tissue_and_exterior_is_exact_air() {
        let s = PhantomSpec {
            n_air_cavities: 0,
            ..spec(1)
        };
        let p = generate_pair(&s).unwrap();
        let c = [15, 15, 15];
        assert_eq!(p.labels.get(c), f32::from(TissueClass::SoftTissue.code()));
        assert!((p.ct.get(c) - 40.0).abs() <= 3.0 * s.noise_hu);
        assert_eq!(p.ct.get([0, 0, 0]), -1000.0);
        assert_eq!(p.mr.get([0, 0, 0]), 0.0);
        for (i, &l) in p.labels.values().iter().enumerate() {
            if l == 0.0 {
                assert_eq!(p.ct.values()[i], -1000.0);
                assert_eq!(p.mr.values()[i], 0.0);
            } else {
                assert!(p.mr.values()[i] > 0.0);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_pair(&spec(7)).unwrap();
        let b = generate_pair(&spec(7)).unwrap();
        assert_eq!(a.mr, b.mr);
        assert_eq!(a.ct, b.ct);
        assert_eq!(a.labels, b.labels);
        let c = generate_pair(&spec(8)).unwrap();
        assert_ne!(a.ct, c.ct);
    }

    #[test]
    fn oracle_matches_noise_free_ct() {
        let s = PhantomSpec {
            noise_hu: 0.0,
            noise_mr: 0.0,
            ..spec(3)
        };
        let p = generate_pair(&s).unwrap();
        assert_eq!(oracle_translate(&p.labels).unwrap().values(), p.ct.values());
        assert!(oracle_translate(&p.ct).is_err());
        let tissue = Volume::filled([4; 3], 1.0, VolumeKind::Label, 2.0).unwrap();
        assert!(oracle_translate(&tissue)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 40.0));
    }

    #[test]
    fn oracle_error_against_noisy_ct_is_half_normal_mean() {
        let s = PhantomSpec {
            edge: 48,
            n_air_cavities: 0,
            ..spec(5)
        };
        let p = generate_pair(&s).unwrap();
        let o = oracle_translate(&p.labels).unwrap();
        // restrict to soft tissue so the HU clamp at -1000 does not bias air
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..p.ct.len() {
            if p.labels.values()[i] == 2.0 {
                sum += (p.ct.values()[i] - o.values()[i]).abs() as f64;
                n += 1;
            }
        }
        let expected = s.noise_hu as f64 * (2.0 / std::f64::consts::PI).sqrt();
        let mae = sum / n as f64;
        assert!(
            (mae - expected).abs() < 0.1 * expected,
            "mae {mae} expected {expected}"
        );
    }

    #[test]
    fn bone_and_interior_air_are_ambiguous_in_mr() {
        let s = PhantomSpec {
            edge: 48,
            ..spec(11)
        };
        let p = generate_pair(&s).unwrap();
        let mean_of = |code: f32| {
            let v: Vec<f32> = (0..p.mr.len())
                .filter(|&i| p.labels.values()[i] == code)
                .map(|i| p.mr.values()[i])
                .collect();
            assert!(!v.is_empty());
            v.iter().sum::<f32>() / v.len() as f32
        };
        let bone = mean_of(3.0);
        let air = mean_of(1.0);
        assert!((bone - air).abs() < s.noise_mr, "bone {bone} air {air}");
    }

    #[test]
    fn symmetric_without_tumor() {
        let s = PhantomSpec {
            noise_hu: 0.0,
            noise_mr: 0.0,
            ..spec(9)
        };
        let p = generate_pair(&s).unwrap();
        assert_eq!(mirror_volume(&p.labels), p.labels);
        assert_eq!(mirror_volume(&p.ct), p.ct);
        let t = generate_pair(&PhantomSpec { tumor: true, ..s }).unwrap();
        assert_ne!(mirror_volume(&t.labels), t.labels);
        assert!(t.labels.values().contains(&4.0));
    }

    #[test]
    fn artifact_adds_high_hu_streak() {
        let s = PhantomSpec {
            artifact: true,
            edge: 48,
            ..spec(2)
        };
        let p = generate_pair(&s).unwrap();
        assert!(p.ct.values().iter().any(|&v| v > 2500.0));
        assert!(p
            .ct
            .values()
            .iter()
            .all(|&v| (-1000.0..=3071.0).contains(&v)));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_pair(&PhantomSpec {
            body: [0.6, 0.4, 0.4],
            ..spec(0)
        })
        .is_err());
        assert!(generate_pair(&PhantomSpec {
            n_bone_shells: 0,
            ..spec(0)
        })
        .is_err());
    }
}
