//! Fixed layer set with hand-written backward passes.
//!
//! Each layer keeps a stack of forward caches: `forward` in a training mode
//! pushes, `backward` pops. A network evaluated several times before its
//! backward passes (the cycle generators) therefore must run its backward
//! passes in reverse order of the forwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{gemm, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout active, caches kept.
    Train,
    /// As `Train` but running statistics are left untouched.
    TrainFrozenStats,
    /// Running statistics, no dropout, no caches.
    Eval,
}

impl Mode {
    fn training(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; n],
        }
    }

    pub fn gaussian(
        name: impl Into<String>,
        shape: Vec<usize>,
        mean: f32,
        std: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(mean, std).expect("finite init std");
        Self::new(name, shape, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn constant(name: impl Into<String>, shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Layer: Send + Sync {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4>;
    fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4>;
    /// Pure inference (eval semantics), usable through a shared reference.
    fn infer(&self, x: &Tensor4) -> Result<Tensor4>;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    /// Non-trainable state saved with checkpoints.
    fn buffers(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    fn clear_cache(&mut self);
}

fn no_cache(layer: &str) -> Error {
    Error::shape(format!(
        "{layer}: backward called without a matching training forward"
    ))
}

#[inline]
fn conv_out(size: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if size + 2 * p < k {
        return Err(Error::shape(format!(
            "input {size} too small for kernel {k} with pad {p}"
        )));
    }
    Ok((size + 2 * p - k) / s + 1)
}

/// Unfolds a `C x H x W` image into `(C*k*k) x (Ho*Wo)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f32],
) {
    let hw_out = ho * wo;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oh in 0..ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, out) in line.iter_mut().enumerate() {
                        let iw = (ow * s + kj) as isize - p as isize;
                        *out = if iw < 0 || iw >= w as isize {
                            0.0
                        } else {
                            srow[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    dst: &mut [f32],
) {
    let hw_out = ho * wo;
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oh in 0..ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * s + kj) as isize - p as isize;
                        if iw >= 0 && iw < w as isize {
                            drow[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_ch x (in_ch * k * k)`
    pub weight: Param,
    pub bias: Param,
    cache: Vec<(Vec<Vec<f32>>, [usize; 4])>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight: Param::gaussian(
                format!("{name}.weight"),
                vec![out_ch, in_ch, k, k],
                0.0,
                0.02,
                rng,
            ),
            bias: Param::constant(format!("{name}.bias"), vec![out_ch], 0.0),
            cache: Vec::new(),
        }
    }

    fn check(&self, x: &Tensor4) -> Result<(usize, usize)> {
        if x.c != self.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} channels, got {}",
                self.in_ch, x.c
            )));
        }
        Ok((
            conv_out(x.h, self.k, self.stride, self.pad)?,
            conv_out(x.w, self.k, self.stride, self.pad)?,
        ))
    }

    fn run(&self, x: &Tensor4, keep: bool) -> Result<(Tensor4, Vec<Vec<f32>>)> {
        let (ho, wo) = self.check(x)?;
        let kk = self.in_ch * self.k * self.k;
        let mut out = Tensor4::zeros(x.n, self.out_ch, ho, wo);
        let mut kept = Vec::new();
        for i in 0..x.n {
            let mut cols = vec![0.0; kk * ho * wo];
            im2col(
                x.sample(i),
                x.c,
                x.h,
                x.w,
                self.k,
                self.stride,
                self.pad,
                ho,
                wo,
                &mut cols,
            );
            let y = out.sample_mut(i);
            for (o, row) in y.chunks_exact_mut(ho * wo).enumerate() {
                row.fill(self.bias.value[o]);
            }
            gemm(
                self.out_ch,
                kk,
                ho * wo,
                &self.weight.value,
                false,
                &cols,
                false,
                y,
                1.0,
            );
            if keep {
                kept.push(cols);
            }
        }
        Ok((out, kept))
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let (y, cols) = self.run(x, mode.training())?;
        if mode.training() {
            self.cache.push((cols, x.shape()));
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let (cols, [n, c, h, w]) = self.cache.pop().ok_or_else(|| no_cache("conv2d"))?;
        let (ho, wo) = (g.h, g.w);
        let kk = c * self.k * self.k;
        let mut dx = Tensor4::zeros(n, c, h, w);
        let mut dcols = vec![0.0; kk * ho * wo];
        for (i, col) in cols.iter().enumerate() {
            let gi = g.sample(i);
            gemm(
                self.out_ch,
                ho * wo,
                kk,
                gi,
                false,
                col,
                true,
                &mut self.weight.grad,
                1.0,
            );
            for (o, row) in gi.chunks_exact(ho * wo).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f32>();
            }
            gemm(
                kk,
                self.out_ch,
                ho * wo,
                &self.weight.value,
                true,
                gi,
                false,
                &mut dcols,
                0.0,
            );
            col2im(
                &dcols,
                c,
                h,
                w,
                self.k,
                self.stride,
                self.pad,
                ho,
                wo,
                dx.sample_mut(i),
            );
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.run(x, false)?.0)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// Transposed convolution: the adjoint of [`Conv2d`] with the same geometry.
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `in_ch x (out_ch * k * k)`
    pub weight: Param,
    pub bias: Param,
    cache: Vec<Tensor4>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight: Param::gaussian(
                format!("{name}.weight"),
                vec![in_ch, out_ch, k, k],
                0.0,
                0.02,
                rng,
            ),
            bias: Param::constant(format!("{name}.bias"), vec![out_ch], 0.0),
            cache: Vec::new(),
        }
    }

    fn out_size(&self, size: usize) -> Result<usize> {
        let full = (size - 1) * self.stride + self.k;
        if full < 2 * self.pad + 1 {
            return Err(Error::shape("transposed conv output would be empty"));
        }
        Ok(full - 2 * self.pad)
    }

    fn run(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.c != self.in_ch {
            return Err(Error::shape(format!(
                "tconv expects {} channels, got {}",
                self.in_ch, x.c
            )));
        }
        let (ho, wo) = (self.out_size(x.h)?, self.out_size(x.w)?);
        let kk = self.out_ch * self.k * self.k;
        let hw = x.h * x.w;
        let mut out = Tensor4::zeros(x.n, self.out_ch, ho, wo);
        let mut cols = vec![0.0; kk * hw];
        for i in 0..x.n {
            gemm(
                kk,
                self.in_ch,
                hw,
                &self.weight.value,
                true,
                x.sample(i),
                false,
                &mut cols,
                0.0,
            );
            let y = out.sample_mut(i);
            col2im(
                &cols,
                self.out_ch,
                ho,
                wo,
                self.k,
                self.stride,
                self.pad,
                x.h,
                x.w,
                y,
            );
            for (o, row) in y.chunks_exact_mut(ho * wo).enumerate() {
                let b = self.bias.value[o];
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(out)
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let y = self.run(x)?;
        if mode.training() {
            self.cache.push(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.pop().ok_or_else(|| no_cache("tconv2d"))?;
        let kk = self.out_ch * self.k * self.k;
        let hw = x.h * x.w;
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut dcols = vec![0.0; kk * hw];
        for i in 0..x.n {
            let gi = g.sample(i);
            im2col(
                gi,
                self.out_ch,
                g.h,
                g.w,
                self.k,
                self.stride,
                self.pad,
                x.h,
                x.w,
                &mut dcols,
            );
            gemm(
                self.in_ch,
                kk,
                hw,
                &self.weight.value,
                false,
                &dcols,
                false,
                dx.sample_mut(i),
                0.0,
            );
            gemm(
                self.in_ch,
                hw,
                kk,
                x.sample(i),
                false,
                &dcols,
                true,
                &mut self.weight.grad,
                1.0,
            );
            for (o, row) in gi.chunks_exact(g.h * g.w).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f32>();
            }
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.run(x)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

pub struct BatchNorm2d {
    pub ch: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Vec<(Vec<f32>, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            ch,
            gamma: Param::gaussian(format!("{name}.gamma"), vec![ch], 1.0, 0.02, rng),
            beta: Param::constant(format!("{name}.beta"), vec![ch], 0.0),
            running_mean: Param::constant(format!("{name}.running_mean"), vec![ch], 0.0),
            running_var: Param::constant(format!("{name}.running_var"), vec![ch], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: Vec::new(),
        }
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.c != self.ch {
            return Err(Error::shape(format!(
                "batchnorm expects {} channels, got {}",
                self.ch, x.c
            )));
        }
        Ok(())
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        if !mode.training() {
            return self.infer(x);
        }
        self.check(x)?;
        let hw = x.h * x.w;
        let m = (x.n * hw) as f64;
        let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut xhat = vec![0.0f32; x.len()];
        let mut invstd = vec![0.0f32; x.c];
        for c in 0..x.c {
            let mut sum = 0.0f64;
            for i in 0..x.n {
                sum += x.sample(i)[c * hw..(c + 1) * hw]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0f64;
            for i in 0..x.n {
                sq += x.sample(i)[c * hw..(c + 1) * hw]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / m;
            let is = 1.0 / (var + self.eps as f64).sqrt();
            invstd[c] = is as f32;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let base = i * x.sample_len() + c * hw;
                for j in base..base + hw {
                    let xh = ((x.data[j] as f64 - mean) * is) as f32;
                    xhat[j] = xh;
                    y.data[j] = g * xh + b;
                }
            }
            if mode == Mode::Train {
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                let mo = self.momentum;
                self.running_mean.value[c] =
                    (1.0 - mo) * self.running_mean.value[c] + mo * mean as f32;
                self.running_var.value[c] =
                    (1.0 - mo) * self.running_var.value[c] + mo * unbiased as f32;
            }
        }
        self.cache.push((xhat, invstd));
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let (xhat, invstd) = self.cache.pop().ok_or_else(|| no_cache("batchnorm"))?;
        let hw = g.h * g.w;
        let m = (g.n * hw) as f32;
        let mut dx = Tensor4::zeros(g.n, g.c, g.h, g.w);
        for c in 0..g.c {
            let (mut sg, mut sgx) = (0.0f64, 0.0f64);
            for i in 0..g.n {
                let base = i * g.sample_len() + c * hw;
                for j in base..base + hw {
                    sg += g.data[j] as f64;
                    sgx += (g.data[j] * xhat[j]) as f64;
                }
            }
            self.gamma.grad[c] += sgx as f32;
            self.beta.grad[c] += sg as f32;
            let scale = self.gamma.value[c] * invstd[c] / m;
            let (sg, sgx) = (sg as f32, sgx as f32);
            for i in 0..g.n {
                let base = i * g.sample_len() + c * hw;
                for j in base..base + hw {
                    dx.data[j] = scale * (m * g.data[j] - sg - xhat[j] * sgx);
                }
            }
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let hw = x.h * x.w;
        let mut y = x.clone();
        for i in 0..x.n {
            let s = y.sample_mut(i);
            for c in 0..self.ch {
                let is = 1.0 / (self.running_var.value[c] + self.eps).sqrt();
                let (g, b, mu) = (
                    self.gamma.value[c],
                    self.beta.value[c],
                    self.running_mean.value[c],
                );
                for v in &mut s[c * hw..(c + 1) * hw] {
                    *v = g * (*v - mu) * is + b;
                }
            }
        }
        Ok(y)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Param> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// `max(x, slope * x)`; `slope = 0` gives ReLU.
pub struct LeakyRelu {
    pub slope: f32,
    cache: Vec<Tensor4>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self {
            slope,
            cache: Vec::new(),
        }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }
}

impl Layer for LeakyRelu {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let y = self.infer(x)?;
        if mode.training() {
            self.cache.push(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.pop().ok_or_else(|| no_cache("leaky_relu"))?;
        let mut dx = g.clone();
        for (d, &xv) in dx.data.iter_mut().zip(&x.data) {
            if xv <= 0.0 {
                *d *= self.slope;
            }
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        let s = self.slope;
        Ok(x.map(|v| if v > 0.0 { v } else { s * v }))
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

#[derive(Default)]
pub struct Tanh {
    cache: Vec<Tensor4>,
}

impl Tanh {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Tanh {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let y = self.infer(x)?;
        if mode.training() {
            self.cache.push(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let y = self.cache.pop().ok_or_else(|| no_cache("tanh"))?;
        let mut dx = g.clone();
        for (d, &yv) in dx.data.iter_mut().zip(&y.data) {
            *d *= 1.0 - yv * yv;
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(x.map(f32::tanh))
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during training.
pub struct Dropout {
    pub rate: f32,
    rng: ChaCha8Rng,
    cache: Vec<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: Vec::new(),
        }
    }

    /// Training forward with a caller-supplied keep mask.
    pub(crate) fn forward_with_mask(&mut self, x: &Tensor4, mask: Vec<f32>) -> Tensor4 {
        let mut y = x.clone();
        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.cache.push(mask);
        y
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        if !mode.training() || self.rate == 0.0 {
            if mode.training() {
                self.cache.push(vec![1.0; x.len()]);
            }
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| {
                if self.rng.gen::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let mut y = x.clone();
        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.cache.push(mask);
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let mask = self.cache.pop().ok_or_else(|| no_cache("dropout"))?;
        let mut dx = g.clone();
        dx.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(dx)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(x.clone())
    }

    fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> {
        let mut d = g.clone();
        for l in self.layers.iter_mut().rev() {
            d = l.backward(&d)?;
        }
        Ok(d)
    }

    fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn buffers(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }
}
