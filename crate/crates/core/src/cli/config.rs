//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fuse::FusionPolicy;
use crate::gan::TrainConfig;
use crate::grid::View;
use crate::phantom::PhantomSpec;
use crate::prep::ClipPolicy;
use crate::tiles::TileSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub id: String,
    pub split: Split,
    pub phantom: PhantomSpec,
}

/// Which translator a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTranslator {
    Model,
    Oracle,
    Identity,
}

impl SweepTranslator {
    pub fn name(self) -> &'static str {
        match self {
            SweepTranslator::Model => "model",
            SweepTranslator::Oracle => "oracle",
            SweepTranslator::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(SweepTranslator::Model),
            "oracle" => Ok(SweepTranslator::Oracle),
            "identity" => Ok(SweepTranslator::Identity),
            _ => Err(Error::Config(format!(
                "unknown sweep translator '{s}' (model|oracle|identity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Template for every generated phantom; seed, tumour and artifact flags are set per case.
    pub phantom: PhantomSpec,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub clip: ClipPolicy,
    pub mask_dilation: usize,
    pub tile: TileSpec,
    pub train: TrainConfig,
    pub cycle_epochs: usize,
    pub cycle_views: Vec<View>,
    pub policies: Vec<FusionPolicy>,
    pub region_expand: usize,
    pub sweep_translator: SweepTranslator,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("runs/desk"),
            phantom: PhantomSpec::default(),
            n_train: 6,
            n_val: 1,
            n_test: 3,
            clip: ClipPolicy::default(),
            mask_dilation: 4,
            tile: TileSpec {
                patch: 32,
                stride: 8,
                crop: 4,
            },
            train: TrainConfig::default(),
            cycle_epochs: 8,
            cycle_views: vec![View::Axial],
            policies: FusionPolicy::ALL.to_vec(),
            region_expand: 2,
            sweep_translator: SweepTranslator::Model,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true/false, got '{v}'"
        ))),
    }
}

fn parse_range(key: &str, v: &str) -> Result<(f32, f32)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected 'lo,hi', got '{v}'")))?;
    Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?))
}

fn parse_views(key: &str, v: &str) -> Result<Vec<View>> {
    v.split(',')
        .map(|s| View::parse(s.trim()).map_err(|e| Error::Config(format!("{key}: {e}"))))
        .collect()
}

fn join_views(v: &[View]) -> String {
    v.iter().map(|v| v.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    n + 1
                ))
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "phantom.edge" => self.phantom.edge = parse_num(key, v)?,
            "phantom.spacing" => self.phantom.spacing = parse_num(key, v)?,
            "phantom.noise_hu" => self.phantom.noise_hu = parse_num(key, v)?,
            "phantom.noise_mr" => self.phantom.noise_mr = parse_num(key, v)?,
            "phantom.bone_shells" => self.phantom.n_bone_shells = parse_num(key, v)?,
            "phantom.air_cavities" => self.phantom.n_air_cavities = parse_num(key, v)?,
            "split.train" => self.n_train = parse_num(key, v)?,
            "split.val" => self.n_val = parse_num(key, v)?,
            "split.test" => self.n_test = parse_num(key, v)?,
            "prep.clip" => {
                self.clip =
                    ClipPolicy::parse(v).map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
            "prep.dilate" => self.mask_dilation = parse_num(key, v)?,
            "tiles.patch" => {
                self.tile.patch = parse_num(key, v)?;
                t.patch = self.tile.patch;
            }
            "tiles.stride" => self.tile.stride = parse_num(key, v)?,
            "tiles.crop" => self.tile.crop = parse_num(key, v)?,
            "augment.cuts" => t.augment.cuts_per_slice = parse_num(key, v)?,
            "augment.max_tries" => t.augment.max_tries = parse_num(key, v)?,
            "augment.mirror" => t.augment.mirror = parse_bool(key, v)?,
            "augment.rot_deg" => t.augment.rot_deg = parse_range(key, v)?,
            "augment.scale" => t.augment.scale = parse_range(key, v)?,
            "augment.shear" => t.augment.shear = parse_range(key, v)?,
            "train.epochs" => t.epochs = parse_num(key, v)?,
            "train.lambda_l1" => t.lambda_l1 = parse_num(key, v)?,
            "train.lambda_cyc" => t.lambda_cyc = parse_num(key, v)?,
            "train.lr" => t.lr = parse_num(key, v)?,
            "train.base" => t.generator.base = parse_num(key, v)?,
            "train.depth" => t.generator.depth = parse_num(key, v)?,
            "train.disc_base" => t.disc_base = parse_num(key, v)?,
            "train.views" => t.views = parse_views(key, v)?,
            "cycle.epochs" => self.cycle_epochs = parse_num(key, v)?,
            "cycle.views" => self.cycle_views = parse_views(key, v)?,
            "fusion.policies" => {
                self.policies = v
                    .split(',')
                    .map(|s| {
                        FusionPolicy::parse(s).map_err(|e| Error::Config(format!("{key}: {e}")))
                    })
                    .collect::<Result<_>>()?
            }
            "metrics.expand" => self.region_expand = parse_num(key, v)?,
            "sweep.translator" => self.sweep_translator = SweepTranslator::parse(v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.phantom.validate().map_err(cfg)?;
        self.tile.validate().map_err(cfg)?;
        self.clip.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        if self.tile.patch != self.train.patch {
            return Err(Error::Config(
                "tiles.patch and the training patch differ".into(),
            ));
        }
        if self.tile.patch > self.phantom.edge {
            return Err(Error::Config(
                "patch is larger than the phantom edge".into(),
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "split.train and split.test must be >= 1".into(),
            ));
        }
        if self.policies.is_empty() || self.cycle_views.is_empty() {
            return Err(Error::Config(
                "fusion.policies and cycle.views must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let a = &t.augment;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("phantom.edge", self.phantom.edge.to_string());
        kv("phantom.spacing", self.phantom.spacing.to_string());
        kv("phantom.noise_hu", self.phantom.noise_hu.to_string());
        kv("phantom.noise_mr", self.phantom.noise_mr.to_string());
        kv(
            "phantom.bone_shells",
            self.phantom.n_bone_shells.to_string(),
        );
        kv(
            "phantom.air_cavities",
            self.phantom.n_air_cavities.to_string(),
        );
        kv("split.train", self.n_train.to_string());
        kv("split.val", self.n_val.to_string());
        kv("split.test", self.n_test.to_string());
        kv("prep.clip", self.clip.to_string());
        kv("prep.dilate", self.mask_dilation.to_string());
        kv("tiles.patch", self.tile.patch.to_string());
        kv("tiles.stride", self.tile.stride.to_string());
        kv("tiles.crop", self.tile.crop.to_string());
        kv("augment.cuts", a.cuts_per_slice.to_string());
        kv("augment.max_tries", a.max_tries.to_string());
        kv("augment.mirror", a.mirror.to_string());
        kv(
            "augment.rot_deg",
            format!("{},{}", a.rot_deg.0, a.rot_deg.1),
        );
        kv("augment.scale", format!("{},{}", a.scale.0, a.scale.1));
        kv("augment.shear", format!("{},{}", a.shear.0, a.shear.1));
        kv("train.epochs", t.epochs.to_string());
        kv("train.lambda_l1", t.lambda_l1.to_string());
        kv("train.lambda_cyc", t.lambda_cyc.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.base", t.generator.base.to_string());
        kv("train.depth", t.generator.depth.to_string());
        kv("train.disc_base", t.disc_base.to_string());
        kv("train.views", join_views(&t.views));
        kv("cycle.epochs", self.cycle_epochs.to_string());
        kv("cycle.views", join_views(&self.cycle_views));
        kv(
            "fusion.policies",
            self.policies
                .iter()
                .map(|p| p.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("metrics.expand", self.region_expand.to_string());
        kv("sweep.translator", self.sweep_translator.name().to_string());
        s
    }

    /// SHA-256 of the canonical text, excluding the output directory.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out "))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Phantom specs for every split. Test cases cycle through plain, artifact and tumour anatomy.
    pub fn cases(&self) -> Vec<CaseSpec> {
        let mut out = Vec::new();
        let mut add = |split: Split, i: usize, offset: u64, tumor: bool, artifact: bool| {
            let seed = self
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(offset + i as u64);
            out.push(CaseSpec {
                id: format!("{}{i:02}", split.name()),
                split,
                phantom: PhantomSpec {
                    seed,
                    tumor,
                    artifact,
                    ..self.phantom.clone()
                },
            });
        };
        for i in 0..self.n_train {
            add(Split::Train, i, 0, i % 3 == 1, i % 3 == 2);
        }
        for i in 0..self.n_val {
            add(Split::Val, i, 10_000, i % 2 == 1, false);
        }
        for i in 0..self.n_test {
            add(Split::Test, i, 20_000, i % 3 == 2, i % 3 == 1);
        }
        out
    }

    pub fn cases_in(&self, split: Split) -> Vec<CaseSpec> {
        self.cases()
            .into_iter()
            .filter(|c| c.split == split)
            .collect()
    }

    pub fn pix2pix_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn cycle_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            epochs: self.cycle_epochs,
            views: self.cycle_views.clone(),
            ..self.train.clone()
        }
    }
}
