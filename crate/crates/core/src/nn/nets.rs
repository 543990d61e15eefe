//! UNet generator and strided convolutional discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, Layer, LeakyRelu, Mode, Param, Sequential, Tanh,
};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

const KERNEL: usize = 4;
const LEAK: f32 = 0.2;

/// Parameter and buffer access shared by both networks.
pub trait Network {
    fn blocks(&self) -> Vec<&Sequential>;
    fn blocks_mut(&mut self) -> Vec<&mut Sequential>;

    fn params(&self) -> Vec<&Param> {
        self.blocks().into_iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks_mut()
            .into_iter()
            .flat_map(|b| b.params_mut())
            .collect()
    }

    fn buffers(&self) -> Vec<&Param> {
        self.blocks()
            .into_iter()
            .flat_map(|b| b.buffers())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.blocks_mut()
            .into_iter()
            .flat_map(|b| b.buffers_mut())
            .collect()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn clear_cache(&mut self) {
        self.blocks_mut().into_iter().for_each(|b| b.clear_cache());
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over every parameter and buffer value.
    fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params().into_iter().chain(self.buffers()) {
            h.update(p.name.as_bytes());
            for v in &p.value {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Flattened gradient of all parameters.
    fn flat_grad(&self) -> Vec<f32> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }
}

fn copy_state(src: &dyn Network, dst: &mut dyn Network) {
    for (d, s) in dst.params_mut().into_iter().zip(src.params()) {
        d.value.clone_from(&s.value);
    }
    for (d, s) in dst.buffers_mut().into_iter().zip(src.buffers()) {
        d.value.clone_from(&s.value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub base: usize,
    pub depth: usize,
    /// Decoder stages (counted from the bottleneck) that carry dropout.
    pub dropout_stages: usize,
    pub dropout_permille: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_ch: 1,
            out_ch: 1,
            base: 32,
            depth: 3,
            dropout_stages: 1,
            dropout_permille: 500,
        }
    }
}

impl GeneratorConfig {
    fn channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| self.base * (1usize << i.min(3)))
            .collect()
    }

    pub fn descriptor(&self) -> String {
        format!(
            "unet in={} out={} base={} depth={} dropout_stages={} dropout_permille={}",
            self.in_ch,
            self.out_ch,
            self.base,
            self.depth,
            self.dropout_stages,
            self.dropout_permille
        )
    }

    pub fn parse(desc: &str) -> Result<Self> {
        let kv = parse_descriptor(desc, "unet")?;
        let get = |k: &str| -> Result<usize> {
            kv.iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("descriptor '{desc}' lacks {k}")))
        };
        Ok(Self {
            in_ch: get("in")?,
            out_ch: get("out")?,
            base: get("base")?,
            depth: get("depth")?,
            dropout_stages: get("dropout_stages")?,
            dropout_permille: get("dropout_permille")? as u32,
        })
    }
}

fn parse_descriptor(desc: &str, head: &str) -> Result<Vec<(String, String)>> {
    let mut parts = desc.split_whitespace();
    if parts.next() != Some(head) {
        return Err(Error::Checkpoint(format!(
            "descriptor '{desc}' is not a {head}"
        )));
    }
    Ok(parts
        .filter_map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect())
}

/// UNet over `[-1, 1]` images: stride-2 conv encoder, stride-2 transposed-conv decoder
/// with channel-concatenated skips, tanh output.
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    name: String,
    enc: Vec<Sequential>,
    dec: Vec<Sequential>,
}

impl GeneratorNet {
    pub fn new(name: &str, config: GeneratorConfig, seed: u64) -> Result<Self> {
        if config.depth == 0 || config.base == 0 || config.in_ch == 0 || config.out_ch == 0 {
            return Err(Error::param("generator dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = config.channels();
        let d = config.depth;
        let mut enc = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { config.in_ch } else { ch[i - 1] };
            let mut s = Sequential::new().push(Conv2d::new(
                &format!("{name}.enc{i}.conv"),
                cin,
                ch[i],
                KERNEL,
                2,
                1,
                &mut rng,
            ));
            if i > 0 {
                s = s.push(BatchNorm2d::new(
                    &format!("{name}.enc{i}.bn"),
                    ch[i],
                    &mut rng,
                ));
            }
            enc.push(s.push(LeakyRelu::new(LEAK)));
        }
        let mut dec = Vec::with_capacity(d);
        for j in 0..d {
            let cin = if j == 0 { ch[d - 1] } else { 2 * ch[d - 1 - j] };
            if j + 1 == d {
                dec.push(
                    Sequential::new()
                        .push(ConvTranspose2d::new(
                            &format!("{name}.dec{j}.tconv"),
                            cin,
                            config.out_ch,
                            KERNEL,
                            2,
                            1,
                            &mut rng,
                        ))
                        .push(Tanh::new()),
                );
                continue;
            }
            let cout = ch[d - 2 - j];
            let mut s = Sequential::new()
                .push(ConvTranspose2d::new(
                    &format!("{name}.dec{j}.tconv"),
                    cin,
                    cout,
                    KERNEL,
                    2,
                    1,
                    &mut rng,
                ))
                .push(BatchNorm2d::new(
                    &format!("{name}.dec{j}.bn"),
                    cout,
                    &mut rng,
                ));
            if j < config.dropout_stages && config.dropout_permille > 0 {
                s = s.push(Dropout::new(
                    config.dropout_permille as f32 / 1000.0,
                    rng.gen(),
                ));
            }
            dec.push(s.push(LeakyRelu::relu()));
        }
        Ok(Self {
            config,
            name: name.to_string(),
            enc,
            dec,
        })
    }

    /// Same architecture and weights, fresh caches and optimiser-free.
    pub fn duplicate(&self) -> Self {
        let mut n = Self::new(&self.name, self.config, 0).expect("config already validated");
        copy_state(self, &mut n);
        n
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        let f = 1usize << self.config.depth;
        if x.c != self.config.in_ch || !x.h.is_multiple_of(f) || !x.w.is_multiple_of(f) || x.h == 0 || x.w == 0 {
            return Err(Error::shape(format!(
                "generator needs {} channels and spatial dims divisible by {f}, got {:?}",
                self.config.in_ch,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        self.check(x)?;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for e in &mut self.enc {
            h = e.forward(&h, mode)?;
            skips.push(h.clone());
        }
        for j in 0..d {
            h = self.dec[j].forward(&h, mode)?;
            if j + 1 < d {
                h = Tensor4::concat_channels(&h, &skips[d - 2 - j])?;
            }
        }
        Ok(h)
    }

    /// Pure inference (running statistics, no dropout).
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for e in &self.enc {
            h = e.infer(&h)?;
            skips.push(h.clone());
        }
        for j in 0..d {
            h = self.dec[j].infer(&h)?;
            if j + 1 < d {
                h = Tensor4::concat_channels(&h, &skips[d - 2 - j])?;
            }
        }
        Ok(h)
    }

    /// Backpropagates `grad` (w.r.t. the output) for the most recent unmatched forward.
    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let d = self.config.depth;
        let ch = self.config.channels();
        let mut skip_grads: Vec<Option<Tensor4>> = vec![None; d];
        let mut g = self.dec[d - 1].backward(grad)?;
        for j in (0..d - 1).rev() {
            let (gh, gs) = g.split_channels(ch[d - 2 - j]);
            skip_grads[d - 2 - j] = Some(gs);
            g = self.dec[j].backward(&gh)?;
        }
        for i in (0..d).rev() {
            if let Some(s) = &skip_grads[i] {
                g.add_assign(s);
            }
            g = self.enc[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl Network for GeneratorNet {
    fn blocks(&self) -> Vec<&Sequential> {
        self.enc.iter().chain(&self.dec).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut Sequential> {
        self.enc.iter_mut().chain(self.dec.iter_mut()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub in_ch: usize,
    pub base: usize,
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_ch: 2,
            base: 32,
            layers: 5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn descriptor(&self) -> String {
        format!(
            "disc in={} base={} layers={}",
            self.in_ch, self.base, self.layers
        )
    }

    pub fn parse(desc: &str) -> Result<Self> {
        let kv = parse_descriptor(desc, "disc")?;
        let get = |k: &str| -> Result<usize> {
            kv.iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("descriptor '{desc}' lacks {k}")))
        };
        Ok(Self {
            in_ch: get("in")?,
            base: get("base")?,
            layers: get("layers")?,
        })
    }
}

/// Stack of stride-2 convolutions ending in a raw realness score map
/// (1x1 for a 32x32 input with five layers).
pub struct DiscriminatorNet {
    pub config: DiscriminatorConfig,
    name: String,
    body: Sequential,
}

impl DiscriminatorNet {
    pub fn new(name: &str, config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.layers < 2 || config.base == 0 || config.in_ch == 0 {
            return Err(Error::param(
                "discriminator needs >= 2 layers and positive widths",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut body = Sequential::new();
        let mut cin = config.in_ch;
        for i in 0..config.layers {
            let last = i + 1 == config.layers;
            let cout = if last {
                1
            } else {
                config.base * (1usize << i.min(2))
            };
            body = body.push(Conv2d::new(
                &format!("{name}.l{i}.conv"),
                cin,
                cout,
                KERNEL,
                2,
                1,
                &mut rng,
            ));
            if !last {
                if i > 0 {
                    body = body.push(BatchNorm2d::new(&format!("{name}.l{i}.bn"), cout, &mut rng));
                }
                body = body.push(LeakyRelu::new(LEAK));
            }
            cin = cout;
        }
        Ok(Self {
            config,
            name: name.to_string(),
            body,
        })
    }

    /// Same architecture and weights, fresh caches and optimiser-free.
    pub fn duplicate(&self) -> Self {
        let mut n = Self::new(&self.name, self.config, 0).expect("config already validated");
        copy_state(self, &mut n);
        n
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.c != self.config.in_ch {
            return Err(Error::shape(format!(
                "discriminator expects {} channels, got {}",
                self.config.in_ch, x.c
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        self.check(x)?;
        self.body.forward(x, mode)
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        self.body.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        self.body.backward(grad)
    }
}

impl Network for DiscriminatorNet {
    fn blocks(&self) -> Vec<&Sequential> {
        vec![&self.body]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Sequential> {
        vec![&mut self.body]
    }
}
