use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cycle::{cycle_step, CycleLosses, CycleModel};
use super::pix2pix::{pix2pix_step, Pix2PixModel};
use super::{
    cycle_consistency, derive_seed, image_to_tensor, require_net_volume, GeneratorTranslator,
    ModelKind, PatchContext, TrainConfig,
};
use crate::error::{Error, Result};
use crate::grid::{mirror_volume, Image2D, View, Volume};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{l1_loss, DiscriminatorConfig, GeneratorConfig, GeneratorNet, Network};
use crate::phantom::PhantomPair;
use crate::prep::{build_body_mask, ct_to_net, standardize, BodyMask, ClipPolicy};
use crate::tiles::{augment_slice, plan_tiles, TileSpec};

/// One phantom prepared for training: standardized MR and CT, both in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct TrainCase {
    pub id: String,
    pub mr: Volume,
    pub ct: Volume,
    pub mask: BodyMask,
}

impl TrainCase {
    pub fn new(id: impl Into<String>, mr: Volume, ct: Volume, mask: BodyMask) -> Result<Self> {
        if mr.dims() != ct.dims() || mask.dims() != mr.dims() {
            return Err(Error::shape("training MR, CT and mask dims differ"));
        }
        require_net_volume(&mr, "training MR")?;
        require_net_volume(&ct, "training CT")?;
        Ok(Self {
            id: id.into(),
            mr,
            ct,
            mask,
        })
    }

    pub fn from_pair(
        id: impl Into<String>,
        pair: &PhantomPair,
        clip: ClipPolicy,
        dilate: usize,
    ) -> Result<Self> {
        let mask = build_body_mask(&pair.mr, dilate)?;
        let mr = standardize(&pair.mr, &mask, clip)?;
        Self::new(id, mr, ct_to_net(&pair.ct)?, mask)
    }
}

/// Original and mirrored copies of a case with the slice indices that touch the mask.
struct ViewSource {
    mr: [Volume; 2],
    ct: [Volume; 2],
    slices: [Vec<usize>; 2],
}

impl ViewSource {
    fn new(case: &TrainCase, view: View, mirror: bool) -> Self {
        let mask_m = mirror_volume(&case.mask.mask);
        let slices_of = |m: &Volume| {
            (0..view.extent(m.dims()))
                .filter(|&i| m.slice_has_nonzero(view, i))
                .collect()
        };
        let mirrored = if mirror {
            slices_of(&mask_m)
        } else {
            Vec::new()
        };
        Self {
            mr: [case.mr.clone(), mirror_volume(&case.mr)],
            ct: [case.ct.clone(), mirror_volume(&case.ct)],
            slices: [slices_of(&case.mask.mask), mirrored],
        }
    }
}

/// Fixed evaluation patches: every eighth masked slice, perfect tiling, masked tiles only.
pub fn validation_patches(
    cases: &[TrainCase],
    view: View,
    patch: usize,
) -> Result<Vec<(Image2D, Image2D, PatchContext)>> {
    let spec = TileSpec::perfect(patch);
    let mut out = Vec::new();
    for case in cases {
        let dims = case.mr.dims();
        let plane = view.plane_dims(dims);
        let tiles = plan_tiles(plane, &spec)?;
        for slice in (0..view.extent(dims)).filter(|i| i % 8 == 4) {
            if !case.mask.mask.slice_has_nonzero(view, slice) {
                continue;
            }
            let m = case.mask.mask.slice(view, slice)?;
            let mr = case.mr.slice(view, slice)?;
            let ct = case.ct.slice(view, slice)?;
            for &(u, v) in &tiles {
                if m.crop(u, v, patch).data.iter().any(|&x| x != 0.0) {
                    let ctx = PatchContext {
                        view,
                        slice,
                        origin: (u, v),
                    };
                    out.push((mr.crop(u, v, patch), ct.crop(u, v, patch), ctx));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    /// Mean per-step losses, in [`ModelKind`] column order.
    pub terms: Vec<f32>,
    pub validation: f32,
}

pub enum TrainedModel {
    Pix2Pix(Pix2PixModel),
    Cycle(CycleModel),
}

impl TrainedModel {
    pub fn new(kind: ModelKind, config: &TrainConfig, view: View) -> Result<Self> {
        Ok(match kind {
            ModelKind::Pix2Pix => TrainedModel::Pix2Pix(Pix2PixModel::new(config, view)?),
            ModelKind::Cycle => TrainedModel::Cycle(CycleModel::new(config, view)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Pix2Pix(_) => ModelKind::Pix2Pix,
            TrainedModel::Cycle(_) => ModelKind::Cycle,
        }
    }

    fn nets(&self) -> Vec<&dyn Network> {
        match self {
            TrainedModel::Pix2Pix(m) => vec![&m.g, &m.d],
            TrainedModel::Cycle(m) => vec![&m.g_mr2ct, &m.g_ct2mr, &m.d_ct, &m.d_mr],
        }
    }

    fn nets_mut(&mut self) -> Vec<&mut dyn Network> {
        match self {
            TrainedModel::Pix2Pix(m) => vec![&mut m.g, &mut m.d],
            TrainedModel::Cycle(m) => {
                vec![&mut m.g_mr2ct, &mut m.g_ct2mr, &mut m.d_ct, &mut m.d_mr]
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            TrainedModel::Pix2Pix(m) => m.descriptor(),
            TrainedModel::Cycle(m) => m.descriptor(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture_nets(self.descriptor(), &self.nets())
    }

    /// Rebuilds a model from a checkpoint; optimiser state starts fresh.
    pub fn from_checkpoint(ck: &Checkpoint, lr: f32) -> Result<Self> {
        let lines: Vec<&str> = ck.descriptor.lines().collect();
        let bad = || Error::Checkpoint(format!("unrecognised descriptor '{}'", ck.descriptor));
        let kind = ModelKind::parse(lines.first().ok_or_else(bad)?).map_err(|_| bad())?;
        let g = GeneratorConfig::parse(lines.get(1).ok_or_else(bad)?)?;
        let d = DiscriminatorConfig::parse(lines.get(2).ok_or_else(bad)?)?;
        let config = TrainConfig {
            generator: g,
            disc_base: d.base,
            disc_layers: d.layers,
            lr,
            views: vec![View::Axial],
            ..TrainConfig::default()
        };
        let mut model = Self::new(kind, &config, View::Axial)?;
        if model.descriptor() != ck.descriptor {
            return Err(bad());
        }
        ck.restore_nets(&ck.descriptor, &mut model.nets_mut())?;
        Ok(model)
    }

    /// The MR -> CT generator.
    pub fn generator(&self) -> &GeneratorNet {
        match self {
            TrainedModel::Pix2Pix(m) => &m.g,
            TrainedModel::Cycle(m) => &m.g_mr2ct,
        }
    }

    pub fn translator(&self, patch: usize) -> GeneratorTranslator {
        GeneratorTranslator {
            net: self.generator().duplicate(),
            patch,
        }
    }

    pub fn reverse_translator(&self, patch: usize) -> Option<GeneratorTranslator> {
        match self {
            TrainedModel::Cycle(m) => Some(GeneratorTranslator {
                net: m.g_ct2mr.duplicate(),
                patch,
            }),
            TrainedModel::Pix2Pix(_) => None,
        }
    }

    pub fn state_digest(&self) -> String {
        self.nets()
            .iter()
            .map(|n| n.state_digest())
            .collect::<Vec<_>>()
            .join(":")
    }

    /// Validation score: mean L1 of G for pix2pix, mean summed cycle L1 for cycle (network units).
    pub fn validate(
        &self,
        patches: &[(Image2D, Image2D, PatchContext)],
        patch: usize,
    ) -> Result<f32> {
        if patches.is_empty() {
            return Ok(f32::NAN);
        }
        let mut total = 0.0f64;
        match self {
            TrainedModel::Pix2Pix(m) => {
                for (mr, ct, _) in patches {
                    let y = m.g.infer(&image_to_tensor(mr))?;
                    total += l1_loss(&y, &image_to_tensor(ct))?.value as f64;
                }
            }
            TrainedModel::Cycle(_) => {
                let a = self.translator(patch);
                let b = self.reverse_translator(patch).expect("cycle model");
                for (mr, ct, ctx) in patches {
                    total += cycle_consistency(&a, &b, mr, ct, ctx)? as f64;
                }
            }
        }
        Ok((total / patches.len() as f64) as f32)
    }
}

pub struct TrainOutcome {
    pub view: View,
    pub model: TrainedModel,
    /// Row 0 is the untrained model.
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::new();
        let cols = loss_columns(self.model.kind());
        let _ = writeln!(
            s,
            "epoch,step,{},{}",
            cols[..cols.len() - 1].join(","),
            cols[cols.len() - 1]
        );
        for r in &self.log {
            let terms: Vec<String> = r.terms.iter().map(|t| format!("{t:.6}")).collect();
            let _ = writeln!(
                s,
                "{},{},{},{:.6}",
                r.epoch,
                r.step,
                terms.join(","),
                r.validation
            );
        }
        s
    }
}

pub fn loss_columns(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Pix2Pix => &["d_loss", "g_adv", "g_l1", "val_l1"],
        ModelKind::Cycle => &[
            "d_ct",
            "d_mr",
            "adv_mr2ct",
            "adv_ct2mr",
            "cyc_mr",
            "cyc_ct",
            "val_cycle",
        ],
    }
}

fn cycle_terms(l: &CycleLosses) -> [f32; 6] {
    [l.d_ct, l.d_mr, l.adv_mr2ct, l.adv_ct2mr, l.cyc_mr, l.cyc_ct]
}

/// Trains one view of one model kind from scratch. Deterministic in `config.seed`.
pub fn train_view(
    cases: &[TrainCase],
    validation: &[TrainCase],
    view: View,
    config: &TrainConfig,
    kind: ModelKind,
) -> Result<TrainOutcome> {
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = config.patch;
    let aug = &config.augment;
    let sources: Vec<ViewSource> = cases
        .iter()
        .map(|c| ViewSource::new(c, view, aug.mirror))
        .collect();
    let items: Vec<(usize, usize, usize)> = sources
        .iter()
        .enumerate()
        .flat_map(|(ci, s)| {
            (0..2).flat_map(move |m| s.slices[m].iter().map(move |&sl| (ci, m, sl)))
        })
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let val = validation_patches(validation, view, p)?;
    let mut model = TrainedModel::new(kind, config, view)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, view, "data"));
    let mut log = vec![EpochLog {
        epoch: 0,
        step: 0,
        terms: vec![0.0; loss_columns(kind).len() - 1],
        validation: model.validate(&val, p)?,
    }];
    let mut step = 0u64;
    let slice = |ci: usize, m: usize, sl: usize| -> Result<(Image2D, Image2D)> {
        Ok((
            sources[ci].mr[m].slice(view, sl)?,
            sources[ci].ct[m].slice(view, sl)?,
        ))
    };

    for epoch in 1..=config.epochs {
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let partner: Vec<(usize, usize, usize)> = if kind == ModelKind::Cycle {
            let mut o = items.clone();
            o.shuffle(&mut rng);
            o
        } else {
            Vec::new()
        };
        let mut sums = vec![0.0f64; loss_columns(kind).len() - 1];
        let mut n = 0u64;
        for (i, &(ci, m, sl)) in order.iter().enumerate() {
            let (mr, ct) = slice(ci, m, sl)?;
            let cuts = augment_slice(&mr, &ct, p, aug, &mut rng)?;
            let partner_cuts = if kind == ModelKind::Cycle {
                let (pc, pm, ps) = partner[i];
                let (mr2, ct2) = slice(pc, pm, ps)?;
                augment_slice(&mr2, &ct2, p, aug, &mut rng)?
            } else {
                Vec::new()
            };
            for (k, cut) in cuts.iter().enumerate() {
                let x = image_to_tensor(&cut.mr);
                match &mut model {
                    TrainedModel::Pix2Pix(mm) => {
                        let l = pix2pix_step(mm, &x, &image_to_tensor(&cut.ct))?;
                        for (s, v) in sums.iter_mut().zip([l.d_loss, l.g_adv, l.g_l1]) {
                            *s += v as f64;
                        }
                    }
                    TrainedModel::Cycle(mm) => {
                        let y = image_to_tensor(&partner_cuts[k].ct);
                        let l = cycle_step(mm, &x, &y)?;
                        for (s, v) in sums.iter_mut().zip(cycle_terms(&l)) {
                            *s += v as f64;
                        }
                    }
                }
                n += 1;
                step += 1;
            }
        }
        let validation = model.validate(&val, p)?;
        let terms: Vec<f32> = sums.iter().map(|s| (*s / n.max(1) as f64) as f32).collect();
        log::info!(
            "{kind} {view} epoch {epoch}/{}: losses {terms:?} validation {validation:.4}",
            config.epochs
        );
        log.push(EpochLog {
            epoch,
            step,
            terms,
            validation,
        });
    }
    Ok(TrainOutcome { view, model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_pair, PhantomSpec};
    use crate::tiles::AugmentParams;

    fn cases(n: u64, edge: usize) -> Vec<TrainCase> {
        (0..n)
            .map(|s| {
                let spec = PhantomSpec {
                    seed: 100 + s,
                    edge,
                    ..PhantomSpec::default()
                };
                TrainCase::from_pair(
                    format!("p{s}"),
                    &generate_pair(&spec).unwrap(),
                    ClipPolicy::default(),
                    1,
                )
                .unwrap()
            })
            .collect()
    }

    fn tiny(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            patch: 16,
            generator: GeneratorConfig {
                base: 4,
                depth: 2,
                ..Default::default()
            },
            disc_base: 4,
            disc_layers: 4,
            augment: AugmentParams {
                cuts_per_slice: 1,
                ..AugmentParams::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = cases(1, 24);
        let cfg = tiny(0);
        let out = train_view(&data, &data, View::Axial, &cfg, ModelKind::Pix2Pix).unwrap();
        let fresh = TrainedModel::new(ModelKind::Pix2Pix, &cfg, View::Axial).unwrap();
        assert_eq!(out.model.state_digest(), fresh.state_digest());
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn same_seed_gives_identical_checkpoints() {
        let data = cases(1, 24);
        for kind in [ModelKind::Pix2Pix, ModelKind::Cycle] {
            let a = train_view(&data, &data, View::Coronal, &tiny(1), kind).unwrap();
            let b = train_view(&data, &data, View::Coronal, &tiny(1), kind).unwrap();
            assert_eq!(a.model.checkpoint().encode(), b.model.checkpoint().encode());
            assert_eq!(a.log_csv(), b.log_csv());
            let c = train_view(
                &data,
                &data,
                View::Coronal,
                &TrainConfig { seed: 9, ..tiny(1) },
                kind,
            )
            .unwrap();
            assert_ne!(a.model.state_digest(), c.model.state_digest());
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let data = cases(1, 24);
        let out = train_view(&data, &data, View::Sagittal, &tiny(1), ModelKind::Cycle).unwrap();
        let ck = Checkpoint::decode(&out.model.checkpoint().encode()).unwrap();
        let back = TrainedModel::from_checkpoint(&ck, 2e-4).unwrap();
        assert_eq!(back.kind(), ModelKind::Cycle);
        assert_eq!(back.state_digest(), out.model.state_digest());
    }

    #[test]
    fn log_has_header_and_rows() {
        let data = cases(1, 24);
        let out = train_view(&data, &data, View::Axial, &tiny(2), ModelKind::Pix2Pix).unwrap();
        let csv = out.log_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,step,d_loss,g_adv,g_l1,val_l1");
        assert_eq!(lines.len(), 4);
        assert!(out.log[2].step > out.log[1].step);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            train_view(&[], &[], View::Axial, &tiny(1), ModelKind::Pix2Pix),
            Err(Error::EmptyDataset)
        ));
    }
}
