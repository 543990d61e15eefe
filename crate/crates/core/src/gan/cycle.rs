use super::{
    check_finite, derive_seed, image_to_tensor, translate_patch, PatchContext, TrainConfig,
    Translator,
};
use crate::error::{Error, Result};
use crate::grid::{Image2D, View};
use crate::nn::loss::{FAKE, REAL};
use crate::nn::{
    l1_loss, lsgan_loss, AdamState, DiscriminatorConfig, DiscriminatorNet, GeneratorConfig,
    GeneratorNet, Mode, Network, Tensor4,
};
use crate::prep::NET_MAX;

/// Two generators closing the MR -> CT -> MR and CT -> MR -> CT loops, one discriminator per domain.
pub struct CycleModel {
    pub g_mr2ct: GeneratorNet,
    pub g_ct2mr: GeneratorNet,
    pub d_ct: DiscriminatorNet,
    pub d_mr: DiscriminatorNet,
    pub lambda_cyc: f32,
    opt_mr2ct: AdamState,
    opt_ct2mr: AdamState,
    opt_d_ct: AdamState,
    opt_d_mr: AdamState,
    steps: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CycleLosses {
    pub d_ct: f32,
    pub d_mr: f32,
    pub adv_mr2ct: f32,
    pub adv_ct2mr: f32,
    pub cyc_mr: f32,
    pub cyc_ct: f32,
}

impl CycleLosses {
    pub fn cycle_total(&self) -> f32 {
        self.cyc_mr + self.cyc_ct
    }
}

impl CycleModel {
    pub fn new(config: &TrainConfig, view: View) -> Result<Self> {
        let gcfg = GeneratorConfig {
            in_ch: 1,
            out_ch: 1,
            ..config.generator
        };
        let dcfg = DiscriminatorConfig {
            in_ch: 1,
            base: config.disc_base,
            layers: config.disc_layers,
        };
        let s = |role: &str| derive_seed(config.seed, view, role);
        Ok(Self {
            g_mr2ct: GeneratorNet::new("g_mr2ct", gcfg, s("cycle.g_mr2ct"))?,
            g_ct2mr: GeneratorNet::new("g_ct2mr", gcfg, s("cycle.g_ct2mr"))?,
            d_ct: DiscriminatorNet::new("d_ct", dcfg, s("cycle.d_ct"))?,
            d_mr: DiscriminatorNet::new("d_mr", dcfg, s("cycle.d_mr"))?,
            lambda_cyc: config.lambda_cyc,
            opt_mr2ct: AdamState::new(config.lr),
            opt_ct2mr: AdamState::new(config.lr),
            opt_d_ct: AdamState::new(config.lr),
            opt_d_mr: AdamState::new(config.lr),
            steps: 0,
        })
    }

    pub fn descriptor(&self) -> String {
        format!(
            "cycle\n{}\n{}\n{}",
            self.g_mr2ct.config.descriptor(),
            self.d_ct.config.descriptor(),
            self.d_mr.config.descriptor()
        )
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Adversarial gradient of `lsgan(D(x), real)` w.r.t. `x`; D statistics and parameters untouched.
fn fool(d: &mut DiscriminatorNet, x: &Tensor4) -> Result<(f32, Tensor4)> {
    let score = d.forward(x, Mode::TrainFrozenStats)?;
    let l = lsgan_loss(&score, REAL);
    let g = d.backward(&l.grad)?;
    d.zero_grad();
    Ok((l.value, g))
}

fn update_discriminator(
    d: &mut DiscriminatorNet,
    opt: &mut AdamState,
    real: &Tensor4,
    fake: &Tensor4,
) -> Result<f32> {
    d.zero_grad();
    let mut total = 0.0;
    for (x, target) in [(real, REAL), (fake, FAKE)] {
        let score = d.forward(x, Mode::Train)?;
        let mut l = lsgan_loss(&score, target);
        l.grad.data.iter_mut().for_each(|g| *g *= 0.5);
        d.backward(&l.grad)?;
        total += 0.5 * l.value;
    }
    opt.step(&mut d.params_mut())?;
    d.zero_grad();
    Ok(total)
}

fn scaled(mut t: Tensor4, s: f32) -> Tensor4 {
    t.data.iter_mut().for_each(|v| *v *= s);
    t
}

/// One joint generator update then one update per discriminator. The MR and CT patches
/// need not depict the same anatomy.
pub fn cycle_step(model: &mut CycleModel, mr: &Tensor4, ct: &Tensor4) -> Result<CycleLosses> {
    if mr.c != 1 || ct.c != 1 || mr.n != ct.n {
        return Err(Error::shape(format!(
            "cycle inputs {:?} / {:?}",
            mr.shape(),
            ct.shape()
        )));
    }
    let lam = model.lambda_cyc;
    model.g_mr2ct.zero_grad();
    model.g_ct2mr.zero_grad();

    // forward order keeps each generator's cache stack LIFO-compatible with the backward order below
    let fake_ct = model.g_mr2ct.forward(mr, Mode::Train)?;
    let fake_mr = model.g_ct2mr.forward(ct, Mode::Train)?;
    let rec_mr = model.g_ct2mr.forward(&fake_ct, Mode::Train)?;
    let rec_ct = model.g_mr2ct.forward(&fake_mr, Mode::Train)?;

    let cyc_mr = l1_loss(&rec_mr, mr)?;
    let cyc_ct = l1_loss(&rec_ct, ct)?;
    let (adv_mr2ct, mut g_fake_ct) = fool(&mut model.d_ct, &fake_ct)?;
    let (adv_ct2mr, mut g_fake_mr) = fool(&mut model.d_mr, &fake_mr)?;

    g_fake_mr.add_assign(&model.g_mr2ct.backward(&scaled(cyc_ct.grad, lam))?);
    g_fake_ct.add_assign(&model.g_ct2mr.backward(&scaled(cyc_mr.grad, lam))?);
    model.g_ct2mr.backward(&g_fake_mr)?;
    model.g_mr2ct.backward(&g_fake_ct)?;

    model.steps += 1;
    let step = model.steps;
    check_finite(
        "cycle",
        step,
        &[
            ("adv_mr2ct", adv_mr2ct),
            ("adv_ct2mr", adv_ct2mr),
            ("cyc_mr", cyc_mr.value),
            ("cyc_ct", cyc_ct.value),
        ],
    )?;
    model.opt_mr2ct.step(&mut model.g_mr2ct.params_mut())?;
    model.opt_ct2mr.step(&mut model.g_ct2mr.params_mut())?;

    let d_ct = update_discriminator(&mut model.d_ct, &mut model.opt_d_ct, ct, &fake_ct)?;
    let d_mr = update_discriminator(&mut model.d_mr, &mut model.opt_d_mr, mr, &fake_mr)?;
    check_finite("cycle", step, &[("d_ct", d_ct), ("d_mr", d_mr)])?;
    Ok(CycleLosses {
        d_ct,
        d_mr,
        adv_mr2ct,
        adv_ct2mr,
        cyc_mr: cyc_mr.value,
        cyc_ct: cyc_ct.value,
    })
}

/// Summed cycle L1 (network units) for translators `mr2ct` and `ct2mr` on one MR and one CT patch.
pub fn cycle_consistency(
    mr2ct: &dyn Translator,
    ct2mr: &dyn Translator,
    mr: &Image2D,
    ct: &Image2D,
    ctx: &PatchContext,
) -> Result<f32> {
    let rec_mr = translate_patch(ct2mr, &translate_patch(mr2ct, mr, ctx)?, ctx)?;
    let rec_ct = translate_patch(mr2ct, &translate_patch(ct2mr, ct, ctx)?, ctx)?;
    let a = l1_loss(&image_to_tensor(&rec_mr), &image_to_tensor(mr))?.value;
    let b = l1_loss(&image_to_tensor(&rec_ct), &image_to_tensor(ct))?.value;
    debug_assert!(mr
        .data
        .iter()
        .chain(&ct.data)
        .all(|v| (0.0..=NET_MAX).contains(v)));
    Ok(a + b)
}
