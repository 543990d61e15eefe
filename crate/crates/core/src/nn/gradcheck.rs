//! Central-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, Layer, LeakyRelu, Mode, Tanh};
use super::loss::{l1_loss, lsgan_loss};
use super::tensor::Tensor4;

const H: f32 = 1e-2;
pub const TOLERANCE: f64 = 1e-3;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(n).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random input whose entries keep at least `margin` away from zero.
fn input(rng: &mut ChaCha8Rng, shape: [usize; 4], margin: f32) -> Tensor4 {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.gen_range(margin..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor4::from_vec(shape[0], shape[1], shape[2], shape[3], data).unwrap()
}

fn probe_loss(layer: &mut dyn Layer, x: &Tensor4, r: &Tensor4) -> f64 {
    let y = layer.forward(x, Mode::TrainFrozenStats).unwrap();
    layer.clear_cache();
    y.data
        .iter()
        .zip(&r.data)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Worst relative error over the input gradient and every parameter gradient
/// for the probe loss `sum(r * layer(x))`.
fn check_layer(layer: &mut dyn Layer, x: &Tensor4, rng: &mut ChaCha8Rng) -> f64 {
    let y = layer.forward(x, Mode::TrainFrozenStats).unwrap();
    let r = input(rng, y.shape(), 0.0);
    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
    let dx = layer.backward(&r).unwrap();

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    let mut num = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xp.data[i];
        xp.data[i] = orig + H;
        let lp = probe_loss(layer, &xp, &r);
        xp.data[i] = orig - H;
        let lm = probe_loss(layer, &xp, &r);
        xp.data[i] = orig;
        num.push((lp - lm) / (2.0 * H as f64));
    }
    let ana: Vec<f64> = dx.data.iter().map(|&v| v as f64).collect();
    worst = worst.max(rel_err(&ana, &num));

    let n_params = layer.params().len();
    for pi in 0..n_params {
        let len = layer.params()[pi].value.len();
        let ana: Vec<f64> = layer.params()[pi].grad.iter().map(|&v| v as f64).collect();
        let mut num = Vec::with_capacity(len);
        for j in 0..len {
            let orig = layer.params()[pi].value[j];
            layer.params_mut()[pi].value[j] = orig + H;
            let lp = probe_loss(layer, x, &r);
            layer.params_mut()[pi].value[j] = orig - H;
            let lm = probe_loss(layer, x, &r);
            layer.params_mut()[pi].value[j] = orig;
            num.push((lp - lm) / (2.0 * H as f64));
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

fn conv2d_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = Conv2d::new("c", 2, 3, 4, 2, 1, rng);
    let x = input(rng, [2, 2, 8, 8], 0.0);
    check_layer(&mut l, &x, rng)
}

fn conv2d_unit_stride_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = Conv2d::new("c", 2, 2, 3, 1, 1, rng);
    let x = input(rng, [1, 2, 5, 6], 0.0);
    check_layer(&mut l, &x, rng)
}

fn conv_transpose_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = ConvTranspose2d::new("t", 3, 2, 4, 2, 1, rng);
    let x = input(rng, [2, 3, 4, 4], 0.0);
    check_layer(&mut l, &x, rng)
}

fn batchnorm_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = BatchNorm2d::new("bn", 3, rng);
    let x = input(rng, [2, 3, 3, 3], 0.0);
    check_layer(&mut l, &x, rng)
}

fn leaky_relu_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = LeakyRelu::new(0.2);
    let x = input(rng, [1, 2, 4, 4], 0.05);
    check_layer(&mut l, &x, rng)
}

fn relu_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = LeakyRelu::relu();
    let x = input(rng, [1, 2, 4, 4], 0.05);
    check_layer(&mut l, &x, rng)
}

fn tanh_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = Tanh::new();
    let x = input(rng, [1, 2, 4, 4], 0.0).map(|v| 2.0 * v);
    check_layer(&mut l, &x, rng)
}

fn dropout_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut l = Dropout::new(0.5, rng.gen());
    let x = input(rng, [1, 2, 4, 4], 0.0);
    let mask: Vec<f32> = (0..x.len())
        .map(|_| if rng.gen::<bool>() { 2.0 } else { 0.0 })
        .collect();
    let r = input(rng, x.shape(), 0.0);
    l.forward_with_mask(&x, mask.clone());
    let dx = l.backward(&r).unwrap();
    let loss = |x: &Tensor4| -> f64 {
        x.data
            .iter()
            .zip(&mask)
            .zip(&r.data)
            .map(|((&a, &m), &b)| (a * m) as f64 * b as f64)
            .sum()
    };
    let mut xp = x.clone();
    let num: Vec<f64> = (0..x.len())
        .map(|i| {
            let o = xp.data[i];
            xp.data[i] = o + H;
            let lp = loss(&xp);
            xp.data[i] = o - H;
            let lm = loss(&xp);
            xp.data[i] = o;
            (lp - lm) / (2.0 * H as f64)
        })
        .collect();
    rel_err(&dx.data.iter().map(|&v| v as f64).collect::<Vec<_>>(), &num)
}

fn check_loss(x: &Tensor4, grad: &Tensor4, f: impl Fn(&Tensor4) -> f32) -> f64 {
    let mut xp = x.clone();
    let num: Vec<f64> = (0..x.len())
        .map(|i| {
            let o = xp.data[i];
            xp.data[i] = o + H;
            let lp = f(&xp) as f64;
            xp.data[i] = o - H;
            let lm = f(&xp) as f64;
            xp.data[i] = o;
            (lp - lm) / (2.0 * H as f64)
        })
        .collect();
    rel_err(
        &grad.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        &num,
    )
}

fn l1_check(rng: &mut ChaCha8Rng) -> f64 {
    let b = input(rng, [1, 1, 4, 4], 0.0);
    // offsets stay well clear of the kink at a == b
    let off = input(rng, [1, 1, 4, 4], 0.1);
    let mut a = b.clone();
    a.add_assign(&off);
    let g = l1_loss(&a, &b).unwrap().grad;
    check_loss(&a, &g, |x| l1_loss(x, &b).unwrap().value)
}

fn lsgan_check(rng: &mut ChaCha8Rng) -> f64 {
    let s = input(rng, [2, 1, 2, 2], 0.0);
    let mut worst = 0.0f64;
    for target in [0.0, 1.0] {
        let g = lsgan_loss(&s, target).grad;
        worst = worst.max(check_loss(&s, &g, |x| lsgan_loss(x, target).value));
    }
    worst
}

/// Worst relative gradient error of one differentiable op over [`SEEDS`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub worst: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

/// Every layer and loss against central differences.
pub fn run_all() -> Vec<GradCheck> {
    let checks: [(&'static str, fn(&mut ChaCha8Rng) -> f64); 10] = [
        ("conv2d", conv2d_check),
        ("conv2d stride 1", conv2d_unit_stride_check),
        ("conv transpose", conv_transpose_check),
        ("batchnorm", batchnorm_check),
        ("leaky relu", leaky_relu_check),
        ("relu", relu_check),
        ("tanh", tanh_check),
        ("dropout", dropout_check),
        ("l1 loss", l1_check),
        ("lsgan loss", lsgan_check),
    ];
    checks
        .iter()
        .map(|&(name, f)| {
            let worst = SEEDS
                .iter()
                .map(|&s| f(&mut ChaCha8Rng::seed_from_u64(s)))
                .fold(0.0, f64::max);
            GradCheck { name, worst }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_op_matches_finite_differences() {
        let all = super::run_all();
        assert_eq!(all.len(), 10);
        for c in all {
            assert!(c.passed(), "{}: relative error {:.2e}", c.name, c.worst);
        }
    }
}
