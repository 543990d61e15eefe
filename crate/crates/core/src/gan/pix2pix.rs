use super::{check_finite, derive_seed, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::View;
use crate::nn::loss::{FAKE, REAL};
use crate::nn::{
    l1_loss, lsgan_loss, AdamState, DiscriminatorConfig, DiscriminatorNet, GeneratorConfig,
    GeneratorNet, Mode, Network, Tensor4,
};

/// Conditional GAN: `G: MR -> CT`, `D` scores the `MR | CT` channel stack.
pub struct Pix2PixModel {
    pub g: GeneratorNet,
    pub d: DiscriminatorNet,
    pub lambda_l1: f32,
    opt_g: AdamState,
    opt_d: AdamState,
    steps: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub d_loss: f32,
    pub g_adv: f32,
    pub g_l1: f32,
}

impl Pix2PixModel {
    pub fn new(config: &TrainConfig, view: View) -> Result<Self> {
        let gcfg = GeneratorConfig {
            in_ch: 1,
            out_ch: 1,
            ..config.generator
        };
        let dcfg = DiscriminatorConfig {
            in_ch: 2,
            base: config.disc_base,
            layers: config.disc_layers,
        };
        Ok(Self {
            g: GeneratorNet::new("g", gcfg, derive_seed(config.seed, view, "pix2pix.g"))?,
            d: DiscriminatorNet::new("d", dcfg, derive_seed(config.seed, view, "pix2pix.d"))?,
            lambda_l1: config.lambda_l1,
            opt_g: AdamState::new(config.lr),
            opt_d: AdamState::new(config.lr),
            steps: 0,
        })
    }

    pub fn descriptor(&self) -> String {
        format!(
            "pix2pix\n{}\n{}",
            self.g.config.descriptor(),
            self.d.config.descriptor()
        )
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// One discriminator update on (real, fake) conditioned pairs; returns the halved LSGAN loss.
fn discriminator_update(
    model: &mut Pix2PixModel,
    mr: &Tensor4,
    ct: &Tensor4,
    fake: &Tensor4,
) -> Result<f32> {
    let d = &mut model.d;
    d.zero_grad();
    let mut total = 0.0;
    for (input, target) in [(ct, REAL), (fake, FAKE)] {
        let pair = Tensor4::concat_channels(mr, input)?;
        let score = d.forward(&pair, Mode::Train)?;
        let mut l = lsgan_loss(&score, target);
        l.grad.data.iter_mut().for_each(|g| *g *= 0.5);
        d.backward(&l.grad)?;
        total += 0.5 * l.value;
    }
    model.opt_d.step(&mut d.params_mut())?;
    d.zero_grad();
    Ok(total)
}

/// Accumulates the generator gradient of `adv_weight * lsgan(D(mr|G(mr)), real) + l1_weight * L1(G(mr), ct)`
/// into `model.g` without touching D's parameters or running statistics.
///
/// Expects the matching `G` forward to be the newest cached one; `fake` is its output.
fn generator_backward(
    model: &mut Pix2PixModel,
    mr: &Tensor4,
    ct: &Tensor4,
    fake: &Tensor4,
    adv_weight: f32,
    l1_weight: f32,
) -> Result<(f32, f32)> {
    let pair = Tensor4::concat_channels(mr, fake)?;
    let score = model.d.forward(&pair, Mode::TrainFrozenStats)?;
    let mut adv = lsgan_loss(&score, REAL);
    adv.grad.data.iter_mut().for_each(|g| *g *= adv_weight);
    let (_, mut grad) = model.d.backward(&adv.grad)?.split_channels(mr.c);
    model.d.zero_grad();
    let l1 = l1_loss(fake, ct)?;
    for (g, l) in grad.data.iter_mut().zip(&l1.grad.data) {
        *g += l1_weight * l;
    }
    model.g.backward(&grad)?;
    Ok((adv.value, l1.value))
}

/// One D update followed by one G update on a single aligned pair (network units, `[-1, 1]`).
pub fn pix2pix_step(model: &mut Pix2PixModel, mr: &Tensor4, ct: &Tensor4) -> Result<StepLosses> {
    if !mr.same_shape(ct) || mr.c != 1 {
        return Err(Error::shape(format!(
            "pix2pix pair shapes {:?} / {:?}",
            mr.shape(),
            ct.shape()
        )));
    }
    let fake = model.g.forward(mr, Mode::Train)?;
    let d_loss = discriminator_update(model, mr, ct, &fake)?;

    model.g.zero_grad();
    let lambda = model.lambda_l1;
    let (g_adv, g_l1) = generator_backward(model, mr, ct, &fake, 1.0, lambda)?;
    model.steps += 1;
    check_finite(
        "pix2pix",
        model.steps,
        &[("d_loss", d_loss), ("g_adv", g_adv), ("g_l1", g_l1)],
    )?;
    model.opt_g.step(&mut model.g.params_mut())?;
    Ok(StepLosses {
        d_loss,
        g_adv,
        g_l1,
    })
}

/// Flattened generator gradient for the given loss weighting on one pair, with no parameter update.
pub fn generator_gradient(
    model: &mut Pix2PixModel,
    mr: &Tensor4,
    ct: &Tensor4,
    adv_weight: f32,
    l1_weight: f32,
) -> Result<Vec<f32>> {
    model.g.zero_grad();
    let fake = model.g.forward(mr, Mode::TrainFrozenStats)?;
    generator_backward(model, mr, ct, &fake, adv_weight, l1_weight)?;
    let grad = model.g.flat_grad();
    model.g.zero_grad();
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GeneratorConfig;

    fn small_config() -> TrainConfig {
        TrainConfig {
            generator: GeneratorConfig {
                base: 8,
                ..Default::default()
            },
            disc_base: 8,
            patch: 32,
            ..Default::default()
        }
    }

    /// No dropout, so repeated gradient evaluations see the same function.
    fn fixed_config() -> TrainConfig {
        TrainConfig {
            generator: GeneratorConfig {
                base: 8,
                dropout_permille: 0,
                ..Default::default()
            },
            disc_base: 8,
            patch: 32,
            ..Default::default()
        }
    }

    fn pair(seed: u32) -> (Tensor4, Tensor4) {
        let mr: Vec<f32> = (0..1024)
            .map(|i| (i as f32 * 0.05 + seed as f32).sin() * 0.8)
            .collect();
        let ct: Vec<f32> = mr
            .iter()
            .map(|v| (v * 0.5 - 0.2).clamp(-1.0, 1.0))
            .collect();
        (
            Tensor4::from_vec(1, 1, 32, 32, mr).unwrap(),
            Tensor4::from_vec(1, 1, 32, 32, ct).unwrap(),
        )
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn generator_update_leaves_discriminator_untouched() {
        let mut m = Pix2PixModel::new(&small_config(), View::Axial).unwrap();
        let (mr, ct) = pair(0);
        let fake = m.g.forward(&mr, Mode::Train).unwrap();
        discriminator_update(&mut m, &mr, &ct, &fake).unwrap();
        let before = m.d.state_digest();
        let g_before = m.g.state_digest();
        m.g.zero_grad();
        generator_backward(&mut m, &mr, &ct, &fake, 1.0, 100.0).unwrap();
        m.opt_g.step(&mut m.g.params_mut()).unwrap();
        assert_eq!(m.d.state_digest(), before);
        assert_ne!(m.g.state_digest(), g_before);
    }

    #[test]
    fn discriminator_update_leaves_generator_untouched() {
        let mut m = Pix2PixModel::new(&small_config(), View::Axial).unwrap();
        let (mr, ct) = pair(1);
        let fake = m.g.forward(&mr, Mode::Train).unwrap();
        let g_before = m.g.state_digest();
        let d_before = m.d.state_digest();
        discriminator_update(&mut m, &mr, &ct, &fake).unwrap();
        assert_eq!(m.g.state_digest(), g_before);
        assert_ne!(m.d.state_digest(), d_before);
        assert!(m.g.flat_grad().iter().all(|&g| g == 0.0));
        m.g.clear_cache();
    }

    #[test]
    fn zero_l1_weight_gives_pure_adversarial_gradient() {
        let mut m = Pix2PixModel::new(&fixed_config(), View::Axial).unwrap();
        let (mr, ct) = pair(2);
        let (_, other_ct) = pair(7);
        let a = generator_gradient(&mut m, &mr, &ct, 1.0, 0.0).unwrap();
        let b = generator_gradient(&mut m, &mr, &other_ct, 1.0, 0.0).unwrap();
        assert_eq!(a, b, "target must not matter without the L1 term");
        assert!(a.iter().any(|&g| g != 0.0));

        // a discriminator with constant output carries no adversarial signal
        for p in m.d.params_mut() {
            if p.name.contains("l4.conv") {
                let bias = p.name.ends_with("bias");
                p.value
                    .iter_mut()
                    .for_each(|v| *v = if bias { 0.3 } else { 0.0 });
            }
        }
        let flat = generator_gradient(&mut m, &mr, &ct, 1.0, 0.0).unwrap();
        assert!(flat.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn large_l1_weight_aligns_with_pure_l1_direction() {
        let mut m = Pix2PixModel::new(&fixed_config(), View::Axial).unwrap();
        let (mr, ct) = pair(3);
        let pure = generator_gradient(&mut m, &mr, &ct, 0.0, 1.0).unwrap();
        let mut last = -1.0;
        for lambda in [1.0f32, 100.0, 1e4] {
            let mixed = generator_gradient(&mut m, &mr, &ct, 1.0, lambda).unwrap();
            let c = cosine(&mixed, &pure);
            assert!(c >= last - 1e-6, "cosine must not drop as lambda grows");
            last = c;
        }
        assert!(last > 0.999, "cosine at lambda 1e4 was {last}");
    }

    #[test]
    fn repeated_pair_l1_decreases() {
        let mut m = Pix2PixModel::new(&small_config(), View::Axial).unwrap();
        let (mr, ct) = pair(4);
        let l1: Vec<f32> = (0..200)
            .map(|_| pix2pix_step(&mut m, &mr, &ct).unwrap().g_l1)
            .collect();
        let windows: Vec<f32> = l1
            .chunks(50)
            .map(|w| w.iter().sum::<f32>() / w.len() as f32)
            .collect();
        for w in windows.windows(2) {
            assert!(w[1] < w[0], "windowed L1 {windows:?}");
        }
    }

    #[test]
    fn step_rejects_mismatched_pair() {
        let mut m = Pix2PixModel::new(&small_config(), View::Axial).unwrap();
        let (mr, _) = pair(0);
        assert!(pix2pix_step(&mut m, &mr, &Tensor4::zeros(1, 1, 16, 16)).is_err());
    }
}
