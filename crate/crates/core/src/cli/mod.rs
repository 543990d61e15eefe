//! Command-line front end: argument parsing, config loading and exit codes.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{CaseSpec, RunConfig, Split, SweepTranslator};
pub use manifest::{FileEntry, RunManifest, StageTiming};
pub use pipeline::*;

use crate::error::{Error, Result};
use crate::fuse::FusionPolicy;
use crate::gan::ModelKind;
use crate::tiles::TileSpec;

#[derive(Debug, Parser)]
#[command(
    name = "voxgan",
    version,
    about = "Patch-based 2.5-D GAN synthetic CT on procedural phantoms"
)]
pub struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct KindArg {
    /// pix2pix or cycle.
    #[arg(long, default_value = "pix2pix", value_parser = parse_kind)]
    pub kind: ModelKind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train/val/test phantoms.
    Phantom,
    /// Train one model per configured view.
    Train(KindArg),
    /// Synthesize one case.
    Synth {
        #[arg(long)]
        case: String,
        #[command(flatten)]
        kind: KindArg,
        /// Defaults to the configured tiling.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long, default_value = "average")]
        policy: String,
    },
    /// Region metrics over the test split.
    Eval(KindArg),
    /// Sagittal and coronal projections of a case's CT and sCT.
    Drr {
        #[arg(long)]
        case: String,
        #[command(flatten)]
        kind: KindArg,
    },
    /// Tiling, view-count, clip and fusion grid over the test split.
    Sweep(KindArg),
    /// Aggregate metrics and timings.
    Report,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParam(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs a parsed command line and returns the text to print.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // a pool built earlier in the process stays in place
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    let cfg = cli.run_config()?;
    let files = |m: &RunManifest| {
        format!(
            "{}: wrote {} files under {}",
            m.command,
            m.files.len(),
            cfg.out.display()
        )
    };
    Ok(match &cli.command {
        Command::Phantom => files(&cmd_phantom(&cfg)?),
        Command::Train(k) => files(&cmd_train(&cfg, k.kind)?),
        Command::Synth {
            case,
            kind,
            stride,
            crop,
            policy,
        } => {
            let spec = TileSpec::new(
                cfg.tile.patch,
                stride.unwrap_or(cfg.tile.stride),
                crop.unwrap_or(cfg.tile.crop),
            )?;
            files(&cmd_synth(&cfg, case, kind.kind, &spec, &FusionPolicy::parse(policy)?)?.0)
        }
        Command::Eval(k) => files(&cmd_eval(&cfg, k.kind)?),
        Command::Drr { case, kind } => files(&cmd_drr(&cfg, case, kind.kind)?),
        Command::Sweep(k) => files(&cmd_sweep(&cfg, k.kind)?.0),
        Command::Report => cmd_report(&cfg)?.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidParam("x".into())), 2);
        assert_eq!(
            exit_code(&Error::MissingArtifact {
                path: "a".into(),
                hint: "b".into()
            }),
            3
        );
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 4);
        assert_eq!(exit_code(&Error::EmptyMask), 1);
    }

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::parse_from([
            "voxgan", "--seed", "11", "--out", "/tmp/x", "train", "--kind", "cycle",
        ]);
        let cfg = cli.run_config().unwrap();
        assert_eq!((cfg.seed, cfg.out.to_str().unwrap()), (11, "/tmp/x"));
        assert!(matches!(
            cli.command,
            Command::Train(KindArg {
                kind: ModelKind::Cycle
            })
        ));
        assert!(Cli::try_parse_from(["voxgan", "train", "--kind", "vae"]).is_err());
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let cli = Cli::parse_from(["voxgan", "--config", "/nonexistent/run.cfg", "report"]);
        assert_eq!(exit_code(&run(&cli).unwrap_err()), 2);
    }
}
