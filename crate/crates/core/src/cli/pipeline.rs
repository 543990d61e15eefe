//! The commands behind the `voxgan` binary. Each returns the manifest it saved.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::{CaseSpec, RunConfig, Split, SweepTranslator};
use super::manifest::RunManifest;
use crate::error::{Error, Result};
use crate::fuse::{accumulate_views, fuse, EstimateAccumulator, FusionPolicy};
use crate::gan::{
    IdentityTranslator, ModelKind, OracleTranslator, TrainCase, TrainConfig, TrainOutcome,
    TrainedModel, Translator,
};
use crate::grid::{encode_volume, read_volume, View, Volume, VolumeKind, HU_MIN};
use crate::metrics::{
    body_from_ct, drr, encode_pgm, error_stats, mean_std, parse_rows_csv, region_mask, report,
    rows_csv, RegionMask, RegionMetrics, RegionSpec,
};
use crate::nn::checkpoint::Checkpoint;
use crate::phantom::{generate_pair, PhantomPair};
use crate::prep::{build_body_mask, standardize, BodyMask, ClipPolicy};
use crate::tiles::{estimates_per_voxel, TileSpec};

/// Patch edge of the reference tiling grid.
pub const REFERENCE_PATCH: usize = 128;

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn phantom(&self, case: &str, name: &str) -> String {
        format!("phantoms/{case}/{name}.vox")
    }

    pub fn model(&self, kind: ModelKind, view: View) -> String {
        format!("models/{kind}/{view}.voxw")
    }

    pub fn train_log(&self, kind: ModelKind, view: View) -> String {
        format!("models/{kind}/{view}_log.csv")
    }

    pub fn synth(
        &self,
        kind: ModelKind,
        case: &str,
        spec: &TileSpec,
        policy: &FusionPolicy,
    ) -> String {
        format!("synth/{kind}/{case}_{}_{}.vox", spec.label(), policy.name())
    }

    pub fn count_map(&self, kind: ModelKind, case: &str, spec: &TileSpec) -> String {
        format!("synth/{kind}/{case}_{}_count.vox", spec.label())
    }

    pub fn metrics(&self, kind: ModelKind) -> String {
        format!("eval/{kind}_metrics.csv")
    }

    pub fn abs(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn require(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let path = self.abs(rel);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                path,
                hint: hint.to_string(),
            })
        }
    }
}

fn manifest(cfg: &RunConfig, command: &str) -> RunManifest {
    RunManifest::new(command, cfg.hash(), cfg.seed)
}

fn finish(m: RunManifest, cfg: &RunConfig) -> Result<RunManifest> {
    m.save(&cfg.out)?;
    Ok(m)
}

pub fn cmd_phantom(cfg: &RunConfig) -> Result<RunManifest> {
    let dir = RunDir::new(&cfg.out);
    let mut m = manifest(cfg, "phantom");
    let cases = cfg.cases();
    let pairs = m.time("phantom generation", || {
        cases
            .par_iter()
            .map(|c| generate_pair(&c.phantom))
            .collect::<Result<Vec<_>>>()
    })?;
    for (c, pair) in cases.iter().zip(&pairs) {
        for (name, v) in [("mr", &pair.mr), ("ct", &pair.ct), ("labels", &pair.labels)] {
            m.write_file(&cfg.out, &dir.phantom(&c.id, name), &encode_volume(v))?;
        }
        let spec = format!("split = {}\n{}", c.split.name(), c.phantom.to_manifest());
        m.write_file(
            &cfg.out,
            &format!("phantoms/{}/spec.txt", c.id),
            spec.as_bytes(),
        )?;
    }
    m.write_file(&cfg.out, "config.txt", cfg.to_text().as_bytes())?;
    info!(
        "wrote {} phantoms under {}",
        cases.len(),
        cfg.out.join("phantoms").display()
    );
    finish(m, cfg)
}

pub fn load_pair(cfg: &RunConfig, case: &CaseSpec) -> Result<PhantomPair> {
    let dir = RunDir::new(&cfg.out);
    let hint = "run `voxgan phantom` with the same config first";
    let read = |name: &str| -> Result<Volume> {
        read_volume(dir.require(&dir.phantom(&case.id, name), hint)?)
    };
    Ok(PhantomPair {
        mr: read("mr")?,
        ct: read("ct")?,
        labels: read("labels")?,
    })
}

/// A test case ready for synthesis: standardised MR and its body mask.
pub struct PreparedCase {
    pub id: String,
    pub pair: PhantomPair,
    pub mask: BodyMask,
    pub mr_net: Volume,
}

impl PreparedCase {
    pub fn new(cfg: &RunConfig, case: &CaseSpec, clip: ClipPolicy) -> Result<Self> {
        let pair = load_pair(cfg, case)?;
        let mask = build_body_mask(&pair.mr, cfg.mask_dilation)?;
        let mr_net = standardize(&pair.mr, &mask, clip)?;
        Ok(Self {
            id: case.id.clone(),
            pair,
            mask,
            mr_net,
        })
    }

    pub fn with_clip(&self, clip: ClipPolicy) -> Result<Self> {
        let mr_net = standardize(&self.pair.mr, &self.mask, clip)?;
        Ok(Self {
            id: self.id.clone(),
            pair: self.pair.clone(),
            mask: self.mask.clone(),
            mr_net,
        })
    }

    /// Body, bone and air regions on the reference CT.
    pub fn regions(&self, expand: usize) -> Result<Vec<RegionMask>> {
        let body = body_from_ct(&self.pair.ct)?;
        RegionSpec::standard(expand)
            .into_iter()
            .map(|r| region_mask(&self.pair.ct, &body, r))
            .collect()
    }
}

fn train_cases(cfg: &RunConfig, split: Split) -> Result<Vec<TrainCase>> {
    cfg.cases_in(split)
        .par_iter()
        .map(|c| {
            TrainCase::from_pair(
                c.id.clone(),
                &load_pair(cfg, c)?,
                cfg.clip,
                cfg.mask_dilation,
            )
        })
        .collect()
}

pub fn train_config(cfg: &RunConfig, kind: ModelKind) -> TrainConfig {
    match kind {
        ModelKind::Pix2Pix => cfg.pix2pix_train_config(),
        ModelKind::Cycle => cfg.cycle_train_config(),
    }
}

/// Trains every configured view, writes checkpoints and loss logs, and returns the outcomes.
pub fn train_models(cfg: &RunConfig, kind: ModelKind) -> Result<(RunManifest, Vec<TrainOutcome>)> {
    let dir = RunDir::new(&cfg.out);
    let tc = train_config(cfg, kind);
    let mut m = manifest(cfg, &format!("train_{kind}"));
    let (cases, val) = m.time("data preparation", || {
        Ok((
            train_cases(cfg, Split::Train)?,
            train_cases(cfg, Split::Val)?,
        ))
    })?;
    let outcomes = m.time("training", || {
        tc.views
            .par_iter()
            .map(|&v| crate::gan::train_view(&cases, &val, v, &tc, kind))
            .collect::<Result<Vec<_>>>()
    })?;
    for o in &outcomes {
        m.write_file(
            &cfg.out,
            &dir.model(kind, o.view),
            &o.model.checkpoint().encode(),
        )?;
        m.write_file(
            &cfg.out,
            &dir.train_log(kind, o.view),
            o.log_csv().as_bytes(),
        )?;
    }
    Ok((finish(m, cfg)?, outcomes))
}

pub fn cmd_train(cfg: &RunConfig, kind: ModelKind) -> Result<RunManifest> {
    Ok(train_models(cfg, kind)?.0)
}

/// Loads the checkpoint of each view, failing with the expected path when one is absent.
pub fn load_models(
    cfg: &RunConfig,
    kind: ModelKind,
    views: &[View],
) -> Result<Vec<(View, TrainedModel)>> {
    let dir = RunDir::new(&cfg.out);
    let hint = format!("run `voxgan train --kind {kind}` with the same config first");
    views
        .iter()
        .map(|&v| {
            let path = dir.require(&dir.model(kind, v), &hint)?;
            let ck = Checkpoint::load(&path)?;
            Ok((v, TrainedModel::from_checkpoint(&ck, cfg.train.lr)?))
        })
        .collect()
}

/// Untrained models exactly as training would initialise them.
pub fn init_models(cfg: &RunConfig, kind: ModelKind) -> Result<Vec<(View, TrainedModel)>> {
    let tc = train_config(cfg, kind);
    tc.views
        .iter()
        .map(|&v| Ok((v, TrainedModel::new(kind, &tc, v)?)))
        .collect()
}

pub type ViewTranslators = Vec<(View, Box<dyn Translator>)>;

pub fn model_translators(models: &[(View, TrainedModel)], patch: usize) -> ViewTranslators {
    models
        .iter()
        .map(|(v, m)| (*v, Box::new(m.translator(patch)) as Box<dyn Translator>))
        .collect()
}

fn borrowed(ts: &ViewTranslators) -> Vec<(View, &dyn Translator)> {
    ts.iter().map(|(v, t)| (*v, t.as_ref())).collect()
}

/// Per-view accumulators, in the order of `ts`.
pub fn view_accumulators(
    case: &PreparedCase,
    ts: &ViewTranslators,
    spec: &TileSpec,
) -> Result<Vec<EstimateAccumulator>> {
    borrowed(ts)
        .par_iter()
        .map(|&(v, t)| accumulate_views(&case.mr_net, &case.mask, &[(v, t)], spec))
        .collect()
}

fn merged(parts: &[EstimateAccumulator]) -> Result<EstimateAccumulator> {
    let mut it = parts.iter().cloned();
    let mut acc = it
        .next()
        .ok_or_else(|| Error::param("no view accumulators"))?;
    for p in it {
        acc.merge(p)?;
    }
    Ok(acc)
}

fn kind_views(cfg: &RunConfig, kind: ModelKind) -> Vec<View> {
    train_config(cfg, kind).views
}

fn find_case(cfg: &RunConfig, id: &str) -> Result<CaseSpec> {
    cfg.cases().into_iter().find(|c| c.id == id).ok_or_else(|| {
        Error::Config(format!(
            "unknown case '{id}'; the config defines train00.., val00.., test00.."
        ))
    })
}

/// sCT and count map for one case.
pub fn cmd_synth(
    cfg: &RunConfig,
    case_id: &str,
    kind: ModelKind,
    spec: &TileSpec,
    policy: &FusionPolicy,
) -> Result<(RunManifest, Volume)> {
    spec.validate()?;
    policy.validate()?;
    let dir = RunDir::new(&cfg.out);
    let mut m = manifest(cfg, &format!("synth_{kind}_{case_id}"));
    let case = PreparedCase::new(cfg, &find_case(cfg, case_id)?, cfg.clip)?;
    let ts = m.time("network setup", || {
        Ok(model_translators(
            &load_models(cfg, kind, &kind_views(cfg, kind))?,
            spec.patch,
        ))
    })?;
    let acc = m.time("sct generation", || {
        merged(&view_accumulators(&case, &ts, spec)?)
    })?;
    let sct = m.time("fusion", || fuse(&acc, policy, HU_MIN))?;
    m.write_file(
        &cfg.out,
        &dir.synth(kind, case_id, spec, policy),
        &encode_volume(&sct),
    )?;
    m.write_file(
        &cfg.out,
        &dir.count_map(kind, case_id, spec),
        &encode_volume(&acc.count_map()?),
    )?;
    Ok((finish(m, cfg)?, sct))
}

fn region_rows(
    case: &PreparedCase,
    sct: &Volume,
    regions: &[RegionMask],
    model: &str,
    policy: &str,
    tile: &str,
) -> Result<Vec<RegionMetrics>> {
    let mut rows = Vec::new();
    for r in regions {
        if r.empty {
            warn!("{}: {} region is empty, skipped", case.id, r.region.name());
            continue;
        }
        rows.push(RegionMetrics {
            case_id: case.id.clone(),
            model: model.to_string(),
            policy: policy.to_string(),
            tilespec: tile.to_string(),
            region: r.region.name().to_string(),
            stats: error_stats(&case.pair.ct, sct, &r.bits)?,
        });
    }
    Ok(rows)
}

/// Region metrics over the test split for the trained models, their untrained initialisation
/// and the best constant predictor. Also writes the sCT of every policy.
pub fn evaluate(cfg: &RunConfig, kind: ModelKind) -> Result<(RunManifest, Vec<RegionMetrics>)> {
    let dir = RunDir::new(&cfg.out);
    let mut m = manifest(cfg, &format!("eval_{kind}"));
    let views = kind_views(cfg, kind);
    let trained = m.time("network setup", || {
        Ok(model_translators(
            &load_models(cfg, kind, &views)?,
            cfg.tile.patch,
        ))
    })?;
    let init = model_translators(&init_models(cfg, kind)?, cfg.tile.patch);
    let tile = cfg.tile.label();
    let cases: Vec<PreparedCase> = cfg
        .cases_in(Split::Test)
        .iter()
        .map(|c| PreparedCase::new(cfg, c, cfg.clip))
        .collect::<Result<_>>()?;
    let regions: Vec<Vec<RegionMask>> = cases
        .iter()
        .map(|c| c.regions(cfg.region_expand))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (case, reg) in cases.iter().zip(&regions) {
        let acc = m.time("sct generation", || {
            merged(&view_accumulators(case, &trained, &cfg.tile)?)
        })?;
        for p in &cfg.policies {
            let sct = m.time("fusion", || fuse(&acc, p, HU_MIN))?;
            m.write_file(
                &cfg.out,
                &dir.synth(kind, &case.id, &cfg.tile, p),
                &encode_volume(&sct),
            )?;
            rows.extend(region_rows(case, &sct, reg, kind.name(), p.name(), &tile)?);
        }
        m.write_file(
            &cfg.out,
            &dir.count_map(kind, &case.id, &cfg.tile),
            &encode_volume(&acc.count_map()?),
        )?;
        let acc0 = merged(&view_accumulators(case, &init, &cfg.tile)?)?;
        let p0 = &cfg.policies[0];
        rows.extend(region_rows(
            case,
            &fuse(&acc0, p0, HU_MIN)?,
            reg,
            &format!("{kind}-init"),
            p0.name(),
            &tile,
        )?);
    }

    // a single HU value for all test bodies, chosen to minimise their pooled MAE
    let pooled: Vec<(&Volume, &[bool])> = cases
        .iter()
        .zip(&regions)
        .map(|(c, r)| (&c.pair.ct, &r[0].bits[..]))
        .collect();
    let (_, constant) = crate::metrics::best_constant_mae(&pooled)?;
    for (case, reg) in cases.iter().zip(&regions) {
        let sct = Volume::filled(
            case.pair.ct.dims(),
            case.pair.ct.spacing(),
            VolumeKind::Synthetic,
            constant,
        )?;
        rows.extend(region_rows(
            case,
            &sct,
            reg,
            "constant",
            "none",
            &format!("hu{constant}"),
        )?);
    }
    m.write_file(&cfg.out, &dir.metrics(kind), rows_csv(&rows).as_bytes())?;
    Ok((finish(m, cfg)?, rows))
}

pub fn cmd_eval(cfg: &RunConfig, kind: ModelKind) -> Result<RunManifest> {
    Ok(evaluate(cfg, kind)?.0)
}

/// Sagittal and coronal DRRs of the CT and of the sCT written by `synth` or `eval`.
pub fn cmd_drr(cfg: &RunConfig, case_id: &str, kind: ModelKind) -> Result<RunManifest> {
    let dir = RunDir::new(&cfg.out);
    let mut m = manifest(cfg, &format!("drr_{kind}_{case_id}"));
    let pair = load_pair(cfg, &find_case(cfg, case_id)?)?;
    let rel = dir.synth(kind, case_id, &cfg.tile, &cfg.policies[0]);
    let hint = format!(
        "run `voxgan synth --case {case_id} --kind {kind}` or `voxgan eval --kind {kind}` first"
    );
    let sct = read_volume(dir.require(&rel, &hint)?)?;
    for view in [View::Sagittal, View::Coronal] {
        for (name, v) in [("ct", &pair.ct), ("sct", &sct)] {
            let img = m.time("projection", || drr(v, view))?;
            m.write_file(
                &cfg.out,
                &format!("drr/{kind}/{case_id}_{name}_{view}.pgm"),
                &encode_pgm(&img),
            )?;
        }
    }
    finish(m, cfg)
}

/// The four reference tilings at patch 128, each paired with its proportional desk tiling.
pub fn sweep_specs(patch: usize) -> Result<Vec<(TileSpec, TileSpec)>> {
    let reference = [(0, 128), (16, 96), (16, 32), (8, 32)];
    reference
        .iter()
        .map(|&(c, s)| {
            let scale = |x: usize| x * patch / REFERENCE_PATCH;
            let desk = TileSpec::new(patch, scale(s), scale(c))?;
            Ok((
                TileSpec {
                    patch: REFERENCE_PATCH,
                    stride: s,
                    crop: c,
                },
                desk,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub case_id: String,
    pub translator: String,
    pub clip: String,
    pub views: String,
    pub ref_spec: String,
    pub desk_spec: String,
    pub policy: String,
    pub estimates_per_voxel: usize,
    pub mae: f64,
    pub me: f64,
    pub voxels: usize,
}

pub const SWEEP_HEADER: &str =
    "case_id,translator,clip,views,ref_spec,desk_spec,policy,estimates_per_voxel,mae_hu,me_hu,voxels";

fn view_set_name(views: &[View]) -> String {
    if views.len() == 1 {
        format!("1-view-{}", views[0])
    } else {
        format!("{}-view", views.len())
    }
}

/// Rows of every sweep cell on the test split.
pub fn sweep_rows(cfg: &RunConfig, kind: ModelKind) -> Result<(RunManifest, Vec<SweepRow>)> {
    let mut m = manifest(cfg, &format!("sweep_{kind}"));
    let all_views = match cfg.sweep_translator {
        SweepTranslator::Model => kind_views(cfg, kind),
        _ => View::ALL.to_vec(),
    };
    let models = match cfg.sweep_translator {
        SweepTranslator::Model => m.time("network setup", || load_models(cfg, kind, &all_views))?,
        _ => Vec::new(),
    };
    let mut view_sets: Vec<Vec<usize>> = vec![vec![0]];
    if all_views.len() > 1 {
        view_sets.push((0..all_views.len()).collect());
    }
    let mut clips = vec![cfg.clip];
    if cfg.clip != ClipPolicy::DynamicPercentile(99.0) {
        clips.push(ClipPolicy::DynamicPercentile(99.0));
    }
    let specs = sweep_specs(cfg.tile.patch)?;
    let translator_name = match cfg.sweep_translator {
        SweepTranslator::Model => kind.name().to_string(),
        t => t.name().to_string(),
    };

    let mut rows = Vec::new();
    for c in cfg.cases_in(Split::Test) {
        let base = PreparedCase::new(cfg, &c, cfg.clip)?;
        let regions = base.regions(cfg.region_expand)?;
        let body = &regions[0];
        let ts: ViewTranslators = match cfg.sweep_translator {
            SweepTranslator::Model => model_translators(&models, cfg.tile.patch),
            SweepTranslator::Oracle => {
                let labels = &base.pair.labels;
                all_views
                    .iter()
                    .map(|&v| {
                        Ok((
                            v,
                            Box::new(OracleTranslator::new(labels)?) as Box<dyn Translator>,
                        ))
                    })
                    .collect::<Result<_>>()?
            }
            SweepTranslator::Identity => all_views
                .iter()
                .map(|&v| (v, Box::new(IdentityTranslator) as Box<dyn Translator>))
                .collect(),
        };
        for clip in &clips {
            let case = base.with_clip(*clip)?;
            for (reference, desk) in &specs {
                let parts = m.time("sct generation", || view_accumulators(&case, &ts, desk))?;
                for set in &view_sets {
                    let acc = merged(&set.iter().map(|&i| parts[i].clone()).collect::<Vec<_>>())?;
                    let views: Vec<View> = set.iter().map(|&i| all_views[i]).collect();
                    for p in &cfg.policies {
                        let sct = m.time("fusion", || fuse(&acc, p, HU_MIN))?;
                        let st = error_stats(&case.pair.ct, &sct, &body.bits)?;
                        rows.push(SweepRow {
                            case_id: case.id.clone(),
                            translator: translator_name.clone(),
                            clip: clip.to_string(),
                            views: view_set_name(&views),
                            ref_spec: reference.label(),
                            desk_spec: desk.label(),
                            policy: p.name().to_string(),
                            estimates_per_voxel: estimates_per_voxel(desk) * views.len(),
                            mae: st.mae,
                            me: st.me,
                            voxels: st.voxels,
                        });
                    }
                }
            }
        }
    }
    Ok((m, rows))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.3},{:.3},{}",
            r.case_id,
            r.translator,
            r.clip,
            r.views,
            r.ref_spec,
            r.desk_spec,
            r.policy,
            r.estimates_per_voxel,
            r.mae,
            r.me,
            r.voxels
        );
    }
    s
}

/// Mean and population std of MAE over cases, grouped by `key`, in first-seen order.
fn grouped<K: Ord + Clone>(rows: &[&SweepRow], key: impl Fn(&SweepRow) -> K) -> Vec<(K, f64, f64)> {
    let mut order: Vec<K> = Vec::new();
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r.mae);
    }
    order
        .into_iter()
        .map(|k| {
            let (mu, sd) = mean_std(&groups[&k]);
            (k, mu, sd)
        })
        .collect()
}

/// Overlap-count and view-count trend: every view set and tiling at the configured clip.
pub fn views_csv(rows: &[SweepRow], clip: &str) -> String {
    let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.clip == clip).collect();
    let mut s =
        String::from("views,ref_spec,desk_spec,policy,estimates_per_voxel,mae_mean,mae_std\n");
    for ((views, reference, desk, policy, n), mu, sd) in grouped(&sel, |r| {
        (
            r.views.clone(),
            r.ref_spec.clone(),
            r.desk_spec.clone(),
            r.policy.clone(),
            r.estimates_per_voxel,
        )
    }) {
        let _ = writeln!(s, "{views},{reference},{desk},{policy},{n},{mu:.3},{sd:.3}");
    }
    s
}

fn widest_view_set(rows: &[SweepRow]) -> String {
    rows.iter()
        .max_by_key(|r| r.estimates_per_voxel)
        .map(|r| r.views.clone())
        .unwrap_or_default()
}

/// Clip policies compared with the widest view set and the first policy.
pub fn clips_csv(rows: &[SweepRow], policy: &str) -> String {
    let views = widest_view_set(rows);
    let sel: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.views == views && r.policy == policy)
        .collect();
    let mut s = String::from("clip,views,policy,ref_spec,desk_spec,mae_mean,mae_std\n");
    for ((clip, reference, desk), mu, sd) in grouped(&sel, |r| {
        (r.clip.clone(), r.ref_spec.clone(), r.desk_spec.clone())
    }) {
        let _ = writeln!(s, "{clip},{views},{policy},{reference},{desk},{mu:.3},{sd:.3}");
    }
    s
}

/// Fusion policies compared with the widest view set at the configured clip.
pub fn policies_csv(rows: &[SweepRow], clip: &str) -> String {
    let views = widest_view_set(rows);
    let sel: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.views == views && r.clip == clip)
        .collect();
    let mut s = String::from("policy,views,clip,ref_spec,desk_spec,mae_mean,mae_std\n");
    for ((policy, reference, desk), mu, sd) in grouped(&sel, |r| {
        (r.policy.clone(), r.ref_spec.clone(), r.desk_spec.clone())
    }) {
        let _ = writeln!(s, "{policy},{views},{clip},{reference},{desk},{mu:.3},{sd:.3}");
    }
    s
}

pub fn cmd_sweep(cfg: &RunConfig, kind: ModelKind) -> Result<(RunManifest, Vec<SweepRow>)> {
    let (mut m, rows) = sweep_rows(cfg, kind)?;
    let clip = cfg.clip.to_string();
    let first = cfg.policies[0].name();
    let dir = format!("sweep/{kind}");
    m.write_file(
        &cfg.out,
        &format!("{dir}/sweep.csv"),
        sweep_csv(&rows).as_bytes(),
    )?;
    m.write_file(
        &cfg.out,
        &format!("{dir}/views.csv"),
        views_csv(&rows, &clip).as_bytes(),
    )?;
    m.write_file(
        &cfg.out,
        &format!("{dir}/clips.csv"),
        clips_csv(&rows, first).as_bytes(),
    )?;
    m.write_file(
        &cfg.out,
        &format!("{dir}/policies.csv"),
        policies_csv(&rows, &clip).as_bytes(),
    )?;
    Ok((finish(m, cfg)?, rows))
}

/// Aggregated metrics of every evaluated model plus the stage timings of all saved manifests.
pub fn cmd_report(cfg: &RunConfig) -> Result<(RunManifest, String)> {
    let dir = RunDir::new(&cfg.out);
    let mut m = manifest(cfg, "report");
    let mut rows = Vec::new();
    for kind in [ModelKind::Pix2Pix, ModelKind::Cycle] {
        let path = dir.abs(&dir.metrics(kind));
        if path.is_file() {
            rows.extend(parse_rows_csv(&std::fs::read_to_string(&path)?)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.abs(&dir.metrics(ModelKind::Pix2Pix)),
            hint: "run `voxgan eval` first".into(),
        });
    }
    let table = report(&rows)?;
    m.write_file(&cfg.out, "report/report.csv", table.as_bytes())?;

    let mut timing = String::from("command,stage,seconds\n");
    for path in manifest_paths(&cfg.out)? {
        let mf = RunManifest::load(&path)?;
        if mf.command == "report" {
            continue;
        }
        let mut stages: Vec<&str> = Vec::new();
        for t in &mf.timings {
            if !stages.contains(&t.stage.as_str()) {
                stages.push(&t.stage);
            }
        }
        for st in stages {
            let _ = writeln!(timing, "{},{st},{:.3}", mf.command, mf.stage_seconds(st));
        }
    }
    m.write_file(&cfg.out, "report/timing.csv", timing.as_bytes())?;
    Ok((finish(m, cfg)?, format!("{table}\n{timing}")))
}

fn manifest_paths(root: &Path) -> Result<Vec<PathBuf>> {
    let dir = root.join("manifests");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}
