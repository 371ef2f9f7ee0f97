use std::collections::BTreeMap;
use std::path::Path;

use parc_core::dataset::{Dataset, DatasetEntry, Split};
use parc_core::dns::{mms_trajectory, sweep_dataset, taylor_green_trajectory, UniformDecay};
use parc_core::fields::{GridSpec, Snapshot, Trajectory};
use parc_core::io::config::{burgers_config, model_config, stage, sweep_params, sweep_split, train_config};
use parc_core::io::ingest::write_raster;
use parc_core::io::manifest::MANIFEST_FILE;
use parc_core::io::ingest::ingest as ingest_file;
use parc_core::io::{read_dataset, write_dataset, write_snapshot_file, Checkpoint, Config, DatasetManifest};
use parc_core::metrics::{
    burgers_residual, hotspot_errors, ns_residual, trajectory_divergence_error, trajectory_hotspots, trajectory_rmse,
    trajectory_rmse_speed, MetricsRecord, ResidualOptions,
};
use parc_core::model::{IntegratorSpec, Model, Normalization, Scheme};
use parc_core::training::{history_csv, train as train_model, Stage};
use parc_core::{Error, Result};

use crate::create_dir;

pub const CHECKPOINT_FILE: &str = "checkpoint.parcckp";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn loss_file(stage: Stage) -> String {
    format!("loss_stage{}.csv", stage.number())
}

fn announce(out: &Path, m: &DatasetManifest) {
    println!("wrote {} trajectories to {}", m.entries.len(), out.join(MANIFEST_FILE).display());
}

pub fn gen_burgers(cfg: &Config, out: &Path) -> Result<()> {
    let base = burgers_config(cfg)?;
    let ds = sweep_dataset(&sweep_params(cfg)?, sweep_split(cfg)?, &base)?;
    announce(out, &write_dataset(&ds, out)?);
    Ok(())
}

pub fn gen_mms(cfg: &Config, out: &Path) -> Result<()> {
    let grid = GridSpec::centered_square(cfg.usize("mms.cells")?, cfg.f64("mms.length")?)?;
    let amplitude = cfg.f64("mms.amplitude")?;
    let k = cfg.f64("mms.diffusivity")?;
    let m = mms_trajectory(grid, cfg.f64("mms.dt")?, cfg.usize("mms.steps")?, &UniformDecay { amplitude }, k)?;
    let forcing = m
        .trajectory
        .snapshots()
        .iter()
        .zip(&m.forcing)
        .map(|(s, [fx, fy])| Snapshot::from_channels(s.t, vec![fx.clone(), fy.clone()], vec!["f_x".into(), "f_y".into()]))
        .collect::<Result<Vec<_>>>()?;
    write_snapshot_file(&Trajectory::new(forcing, m.trajectory.dt())?, &out.join("forcing.parcfld"))?;
    let entry = DatasetEntry {
        constants: BTreeMap::from([("amplitude".to_string(), amplitude), ("k".to_string(), k)]),
        split: Split::Train,
        trajectory: m.trajectory,
    };
    announce(out, &write_dataset(&Dataset::new(vec![entry])?, out)?);
    Ok(())
}

pub fn gen_taylor_green(cfg: &Config, out: &Path) -> Result<()> {
    let nu = cfg.f64("taylor_green.nu")?;
    let rho = cfg.f64("taylor_green.rho")?;
    let grid = GridSpec::periodic_square(cfg.usize("taylor_green.cells")?)?;
    let trajectory = taylor_green_trajectory(grid, nu, rho, cfg.f64("taylor_green.dt")?, cfg.usize("taylor_green.steps")?)?;
    // Unit velocity and length scales on [0, 2π)².
    let constants = BTreeMap::from([("nu".to_string(), nu), ("rho".to_string(), rho), ("Re".to_string(), 1.0 / nu)]);
    let entry = DatasetEntry {
        constants,
        split: Split::Test,
        trajectory,
    };
    announce(out, &write_dataset(&Dataset::new(vec![entry])?, out)?);
    Ok(())
}

pub fn ingest(input: &Path, out: &Path) -> Result<()> {
    let ing = ingest_file(input)?;
    if let Some(mask) = &ing.mask {
        write_raster(&[mask], &out.join("mask.txt"))?;
    }
    announce(out, &write_dataset(&Dataset::new(vec![ing.entry])?, out)?);
    Ok(())
}

pub fn train(cfg: &Config, out: &Path, data: &Path, init: Option<&Path>) -> Result<()> {
    let stage = stage(cfg)?;
    let tc = train_config(cfg)?;
    let init = match (stage, init) {
        (Stage::Correction, None) => {
            return Err(Error::Validation(
                "train.stage=2 needs the stage-1 checkpoint; pass --init <checkpoint>".into(),
            ))
        }
        (_, Some(p)) => Some(Checkpoint::read(p)?),
        (Stage::Differentiator, None) => None,
    };
    let (mut ds, _) = read_dataset(data)?;
    for i in cfg.list_parsed::<usize>("train.validation")? {
        ds.set_split(i, Split::Validation)?;
    }
    let mut model = match &init {
        Some(c) => c.model.clone(),
        None => {
            let mc = model_config(cfg)?;
            let norm = Normalization::from_dataset(&ds, &mc)?;
            Model::init(mc, norm, cfg.parsed("model.seed")?)?
        }
    };
    let rep = train_model(&mut model, &ds, &tc, stage, None, &mut |r| {
        let val = r.val_loss.map(|v| format!(" val {v:.6e}")).unwrap_or_default();
        eprintln!("epoch {:4} train {:.6e}{val} lr {:.2e}", r.epoch, r.train_loss, r.learning_rate);
    })?;
    write_text(&out.join(loss_file(stage)), &history_csv(&rep.history))?;
    let ckpt = match (stage, &init) {
        (Stage::Correction, Some(s1)) => Checkpoint::stage2(s1, model, tc.seed, Some(rep.optimizer))?,
        _ => Checkpoint::stage1(model, tc.seed, Some(rep.optimizer)),
    };
    ckpt.write(&out.join(CHECKPOINT_FILE))?;
    println!(
        "stage {} best epoch {} loss {:.6e}{}",
        stage.number(),
        rep.best_epoch,
        rep.best_loss,
        if rep.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}

/// Writes `pred/` and the matching, equally long `truth/` dataset.
pub fn rollout(cfg: &Config, out: &Path, checkpoint: &Path, data: &Path) -> Result<()> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let (ds, _) = read_dataset(data)?;
    let split = match cfg.get("rollout.split")? {
        "all" => None,
        s => Some(s.parse::<Split>()?),
    };
    let scheme: Scheme = cfg.parsed("train.scheme")?;
    let spec = IntegratorSpec::new(scheme, ds.dt(), cfg.bool("rollout.correction")?)?;
    let steps = cfg.usize("rollout.steps")?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for e in ds.entries().iter().filter(|e| split.is_none_or(|s| e.split == s)) {
        let n = if steps == 0 { e.trajectory.len() - 1 } else { steps };
        let p = ckpt.model.rollout(e.trajectory.first(), &e.constants, n, &spec)?;
        truth.push(DatasetEntry {
            trajectory: e.trajectory.truncated(n + 1)?,
            ..e.clone()
        });
        pred.push(DatasetEntry {
            trajectory: p,
            ..e.clone()
        });
    }
    if pred.is_empty() {
        return Err(Error::Validation(format!("no trajectories in split {:?}", cfg.get("rollout.split")?)));
    }
    let n = pred.len();
    write_dataset(&Dataset::new(pred)?, &out.join("pred"))?;
    write_dataset(&Dataset::new(truth)?, &out.join("truth"))?;
    println!("rolled out {n} trajectories into {}", out.display());
    Ok(())
}

fn has_channel(t: &Trajectory, name: &str) -> bool {
    t.channel_names().iter().any(|c| c == name)
}

/// Accuracy columns compare `pred` with `truth`; residual, divergence and
/// hotspot-count columns describe `pred` alone.
pub fn metrics_record(cfg: &Config, name: &str, pred: &DatasetEntry, truth: &DatasetEntry) -> Result<MetricsRecord> {
    let p = &pred.trajectory;
    let t = if truth.trajectory.len() > p.len() { truth.trajectory.truncated(p.len())? } else { truth.trajectory.clone() };
    if t.len() != p.len() {
        return Err(Error::Shape(format!("{name}: prediction has {} snapshots, reference only {}", p.len(), t.len())));
    }
    let opts = ResidualOptions {
        exclude_ring: cfg.bool("eval.exclude_ring")?,
        mask: None,
    };
    let both = |c: &str| has_channel(p, c) && has_channel(&t, c);
    let mut rec = MetricsRecord {
        trajectory: name.to_string(),
        rmse_u: Some(trajectory_rmse_speed(p, &t)?),
        rmse_t: if both("T") { Some(trajectory_rmse(p, &t, "T")?) } else { None },
        rmse_p: if both("p") { Some(trajectory_rmse(p, &t, "p")?) } else { None },
        ..MetricsRecord::default()
    };
    if p.len() >= 3 {
        if let Some(&r) = pred.constants.get("R") {
            rec.burgers_residual = Some(burgers_residual(p, r, &opts)?);
        }
        let re = cfg.opt_f64("eval.re")?.or_else(|| pred.constants.get("Re").copied());
        if let (true, Some(re)) = (has_channel(p, "p"), re) {
            let rho = match pred.constants.get("rho") {
                Some(&r) => r,
                None => cfg.f64("eval.rho")?,
            };
            rec.ns_residual = Some(ns_residual(p, rho, re, &opts)?);
        }
    }
    let div = trajectory_divergence_error(p, &opts)?;
    rec.eps_div = Some(div.signed);
    rec.eps_div_abs = Some(div.abs);
    let ch = cfg.get("eval.hotspot_channel")?;
    if !ch.is_empty() {
        let thr = cfg.f64("eval.hotspot_threshold")?;
        let hp = trajectory_hotspots(p, ch, thr)?;
        let ht = trajectory_hotspots(&t, ch, thr)?;
        rec.hotspot = Some(hotspot_errors(&hp, &ht)?);
        rec.hotspot_empty_steps = Some(hp.empty.iter().filter(|&&e| e).count());
    }
    Ok(rec)
}

pub fn eval(cfg: &Config, out: &Path, pred: &Path, truth: &Path) -> Result<()> {
    let (pds, pm) = read_dataset(pred)?;
    let (tds, _) = read_dataset(truth)?;
    if pds.len() != tds.len() {
        return Err(Error::Shape(format!("{} predicted trajectories but {} references", pds.len(), tds.len())));
    }
    let mut csv = MetricsRecord::csv_header();
    csv.push('\n');
    for ((p, t), m) in pds.entries().iter().zip(tds.entries()).zip(&pm.entries) {
        csv.push_str(&metrics_record(cfg, &m.file, p, t)?.csv_row());
        csv.push('\n');
    }
    create_dir(out)?;
    write_text(&out.join(METRICS_FILE), &csv)?;
    println!("wrote {} metric rows to {}", pds.len(), out.join(METRICS_FILE).display());
    Ok(())
}
