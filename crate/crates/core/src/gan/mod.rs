//! Adversarial training (paired and cycle-consistent) and the patch translator interface.

mod cycle;
mod pix2pix;
mod train;

use crate::error::{Error, Result};
use crate::grid::{Image2D, View, Volume};
use crate::nn::{from_unit, to_unit, GeneratorConfig, GeneratorNet, Tensor4};
use crate::phantom::oracle_translate;
use crate::prep::{ct_to_net, NET_MAX};
use crate::tiles::AugmentParams;

pub use cycle::{cycle_consistency, cycle_step, CycleLosses, CycleModel};
pub use pix2pix::{generator_gradient, pix2pix_step, Pix2PixModel, StepLosses};
pub use train::{train_view, validation_patches, EpochLog, TrainCase, TrainOutcome, TrainedModel};

pub const BATCH_SIZE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Pix2Pix,
    Cycle,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pix2Pix => "pix2pix",
            ModelKind::Cycle => "cycle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pix2pix" => Ok(ModelKind::Pix2Pix),
            "cycle" | "cyclegan" => Ok(ModelKind::Cycle),
            _ => Err(Error::param(format!(
                "unknown model kind '{s}' (pix2pix|cycle)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub lambda_l1: f32,
    pub lambda_cyc: f32,
    pub lr: f32,
    pub patch: usize,
    pub generator: GeneratorConfig,
    pub disc_base: usize,
    pub disc_layers: usize,
    pub augment: AugmentParams,
    pub views: Vec<View>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            lambda_l1: 100.0,
            lambda_cyc: 10.0,
            lr: 2e-4,
            patch: 32,
            generator: GeneratorConfig::default(),
            disc_base: 32,
            disc_layers: 5,
            augment: AugmentParams {
                cuts_per_slice: 2,
                ..AugmentParams::default()
            },
            views: View::ALL.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if self.patch == 0 || !self.patch.is_multiple_of(1 << self.generator.depth) {
            return Err(Error::param(format!(
                "patch {} must be a positive multiple of {}",
                self.patch,
                1 << self.generator.depth
            )));
        }
        if !(self.lr > 0.0) || self.lambda_l1 < 0.0 || self.lambda_cyc < 0.0 {
            return Err(Error::param(
                "lr must be positive and loss weights non-negative",
            ));
        }
        if self.views.is_empty() {
            return Err(Error::param("at least one view must be trained"));
        }
        Ok(())
    }
}

/// Independent seed for a (run seed, view, role) triple.
pub(crate) fn derive_seed(seed: u64, view: View, role: &str) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(view as u64 + 1);
    for b in role.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Where a patch sits in its volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchContext {
    pub view: View,
    pub slice: usize,
    pub origin: (usize, usize),
}

/// Maps an MR patch in `[0, 255]` to a CT-space patch in `[0, 255]`.
pub trait Translator: Send + Sync {
    /// Required patch edge, if any.
    fn patch_size(&self) -> Option<usize> {
        None
    }

    fn translate(&self, patch: &Image2D, ctx: &PatchContext) -> Result<Image2D>;
}

/// Checks size, runs the translator and clamps the result to `[0, 255]`.
pub fn translate_patch(t: &dyn Translator, patch: &Image2D, ctx: &PatchContext) -> Result<Image2D> {
    if patch.width != patch.height {
        return Err(Error::shape(format!(
            "patch must be square, got {}x{}",
            patch.width, patch.height
        )));
    }
    if let Some(p) = t.patch_size() {
        if patch.width != p {
            return Err(Error::shape(format!(
                "translator expects {p}x{p} patches, got {}",
                patch.width
            )));
        }
    }
    let mut out = t.translate(patch, ctx)?;
    if out.width != patch.width || out.height != patch.height {
        return Err(Error::shape("translator changed the patch size"));
    }
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, NET_MAX));
    Ok(out)
}

pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, patch: &Image2D, _ctx: &PatchContext) -> Result<Image2D> {
        Ok(patch.clone())
    }
}

/// Reads the noise-free CT of a phantom at the patch location, ignoring the MR content.
pub struct OracleTranslator {
    ct_net: Volume,
}

impl OracleTranslator {
    pub fn new(labels: &Volume) -> Result<Self> {
        Ok(Self {
            ct_net: ct_to_net(&oracle_translate(labels)?)?,
        })
    }
}

impl Translator for OracleTranslator {
    fn translate(&self, patch: &Image2D, ctx: &PatchContext) -> Result<Image2D> {
        let (w, h) = ctx.view.plane_dims(self.ct_net.dims());
        if ctx.origin.0 + patch.width > w || ctx.origin.1 + patch.height > h {
            return Err(Error::OutOfRange {
                index: ctx.origin.0.max(ctx.origin.1) + patch.width,
                extent: w.min(h),
            });
        }
        Ok(self
            .ct_net
            .slice(ctx.view, ctx.slice)?
            .crop(ctx.origin.0, ctx.origin.1, patch.width))
    }
}

/// A trained generator in inference mode.
pub struct GeneratorTranslator {
    pub net: GeneratorNet,
    pub patch: usize,
}

impl Translator for GeneratorTranslator {
    fn patch_size(&self) -> Option<usize> {
        Some(self.patch)
    }

    fn translate(&self, patch: &Image2D, _ctx: &PatchContext) -> Result<Image2D> {
        let y = self.net.infer(&image_to_tensor(patch))?;
        tensor_to_image(&y)
    }
}

pub(crate) fn image_to_tensor(img: &Image2D) -> Tensor4 {
    Tensor4 {
        n: 1,
        c: 1,
        h: img.height,
        w: img.width,
        data: img.data.iter().map(|&x| to_unit(x)).collect(),
    }
}

pub(crate) fn tensor_to_image(t: &Tensor4) -> Result<Image2D> {
    if t.n != 1 || t.c != 1 {
        return Err(Error::shape(format!(
            "expected a single-channel image tensor, got {:?}",
            t.shape()
        )));
    }
    Image2D::new(
        t.w,
        t.h,
        t.data
            .iter()
            .map(|&y| from_unit(y).clamp(0.0, NET_MAX))
            .collect(),
    )
}

pub(crate) fn check_finite(what: &str, step: u64, values: &[(&str, f32)]) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let dump: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v}")).collect();
    log::error!("{what} diverged at step {step}: {}", dump.join(" "));
    Err(Error::Numeric(format!(
        "{what} loss is not finite at step {step} ({})",
        dump.join(", ")
    )))
}

pub(crate) fn require_net_volume(v: &Volume, what: &str) -> Result<()> {
    if v.values().iter().any(|&x| !(0.0..=NET_MAX).contains(&x)) {
        return Err(Error::param(format!(
            "{what} must be in network units [0, 255]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Volume, VolumeKind};
    use crate::phantom::TissueClass;
    use crate::prep::hu_to_net;

    fn ctx() -> PatchContext {
        PatchContext {
            view: View::Axial,
            slice: 3,
            origin: (2, 1),
        }
    }

    #[test]
    fn identity_returns_input() {
        let p = Image2D::new(4, 4, (0..16).map(|i| i as f32 * 10.0).collect()).unwrap();
        assert_eq!(translate_patch(&IdentityTranslator, &p, &ctx()).unwrap(), p);
    }

    #[test]
    fn oracle_soft_tissue_patch_is_constant() {
        let labels = Volume::filled(
            [8, 8, 8],
            1.0,
            VolumeKind::Label,
            f32::from(TissueClass::SoftTissue.code()),
        )
        .unwrap();
        let t = OracleTranslator::new(&labels).unwrap();
        let out = translate_patch(&t, &Image2D::filled(4, 4, 0.0), &ctx()).unwrap();
        assert!(out.data.iter().all(|&v| v == hu_to_net(40.0)));
        let far = PatchContext {
            origin: (6, 0),
            ..ctx()
        };
        assert!(translate_patch(&t, &Image2D::filled(4, 4, 0.0), &far).is_err());
    }

    #[test]
    fn generator_translator_is_pure_and_bounded() {
        let cfg = GeneratorConfig {
            base: 8,
            ..Default::default()
        };
        let t = GeneratorTranslator {
            net: GeneratorNet::new("g", cfg, 4).unwrap(),
            patch: 16,
        };
        let p = Image2D::new(16, 16, (0..256).map(|i| (i % 256) as f32).collect()).unwrap();
        let a = translate_patch(&t, &p, &ctx()).unwrap();
        let b = translate_patch(&t, &p, &ctx()).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=255.0).contains(v)));
        assert!(translate_patch(&t, &Image2D::filled(8, 8, 0.0), &ctx()).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_view_and_role() {
        let a = derive_seed(1, View::Axial, "g");
        assert_ne!(a, derive_seed(1, View::Coronal, "g"));
        assert_ne!(a, derive_seed(1, View::Axial, "d"));
        assert_ne!(a, derive_seed(2, View::Axial, "g"));
        assert_eq!(a, derive_seed(1, View::Axial, "g"));
    }
}
