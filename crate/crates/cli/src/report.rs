//! Tables and figures collected from finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use parc_core::dataset::Dataset;
use parc_core::io::config::Config;
use parc_core::io::manifest::MANIFEST_FILE;
use parc_core::io::{read_dataset, DatasetManifest};
use parc_core::metrics::{format_float, MetricsRecord};
use parc_core::training::{Stage, HISTORY_COLUMNS};
use parc_core::{Error, Result};

use crate::commands::{loss_file, write_text, METRICS_FILE};
use crate::create_dir;
use crate::render::{loss_svg, write_png, Series};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MetricsRecord::csv_header().as_str()) {
        return Err(Error::Validation(format!("{path:?} does not start with the metrics header")));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRecord::parse_csv_row).collect()
}

fn read_history(path: &Path) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_COLUMNS.join(",").as_str()) {
        return Err(Error::Validation(format!("{path:?} is not a loss history")));
    }
    let bad = || Error::Validation(format!("malformed row in {path:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != HISTORY_COLUMNS.len() {
                return Err(bad());
            }
            let epoch = c[0].parse().map_err(|_| bad())?;
            let train = c[1].parse().map_err(|_| bad())?;
            let val = if c[2].is_empty() { None } else { Some(c[2].parse().map_err(|_| bad())?) };
            Ok((epoch, train, val))
        })
        .collect()
}

/// Resolves frame indices; negative values count from the end.
fn frame_indices(spec: &[i64], len: usize) -> Result<Vec<usize>> {
    spec.iter()
        .map(|&i| {
            let k = if i < 0 { len as i64 + i } else { i };
            if (0..len as i64).contains(&k) {
                Ok(k as usize)
            } else {
                Err(Error::Validation(format!("frame {i} out of range for {len} snapshots")))
            }
        })
        .collect()
}

fn render_frames(ds: &Dataset, m: &DatasetManifest, frames: &[i64], dir: &Path) -> Result<usize> {
    create_dir(dir)?;
    let mut n = 0;
    for (e, me) in ds.entries().iter().zip(&m.entries) {
        let stem = me.file.trim_end_matches(".parcfld");
        for k in frame_indices(frames, e.trajectory.len())? {
            let s = &e.trajectory.snapshots()[k];
            write_png(&s.speed(), &dir.join(format!("{stem}_t{k:04}_speed.png")))?;
            n += 1;
            for (f, name) in s.state().iter().zip(&s.channel_names()[2..]) {
                write_png(f, &dir.join(format!("{stem}_t{k:04}_{name}.png")))?;
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Mean `rmse_u` per distinct `R`, in increasing `R`.
pub fn rmse_vs_r(rows: &[MetricsRecord], constants: &BTreeMap<String, BTreeMap<String, f64>>) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for row in rows {
        let (Some(rmse), Some(&r)) = (row.rmse_u, constants.get(&row.trajectory).and_then(|c| c.get("R"))) else {
            continue;
        };
        match acc.iter_mut().find(|a| a.0 == r) {
            Some(a) => {
                a.1 += rmse;
                a.2 += 1;
            }
            None => acc.push((r, rmse, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    acc.into_iter().map(|(r, s, n)| (r, s / n as f64)).collect()
}

pub fn report(cfg: &Config, out: &Path, runs: &[PathBuf]) -> Result<()> {
    let frames: Vec<i64> = cfg.list_parsed("report.frames")?;
    let mut rows = Vec::new();
    let mut constants = BTreeMap::new();
    let mut rendered = 0;
    let mut losses = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        if !run.is_dir() {
            return Err(Error::Validation(format!("missing input: run directory {run:?} does not exist")));
        }
        let metrics = run.join(METRICS_FILE);
        if metrics.is_file() {
            rows.extend(read_metrics(&metrics)?);
        }
        if run.join(MANIFEST_FILE).is_file() {
            let (ds, m) = read_dataset(run)?;
            for me in &m.entries {
                constants.entry(me.file.clone()).or_insert_with(|| me.constants.clone());
            }
            rendered += render_frames(&ds, &m, &frames, &out.join("frames").join(format!("run{i}")))?;
        }
        for stage in [Stage::Differentiator, Stage::Correction] {
            let p = run.join(loss_file(stage));
            if p.is_file() {
                losses.push((i, stage, read_history(&p)?));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("missing inputs: no {METRICS_FILE} with rows in {runs:?}")));
    }

    let mut csv = MetricsRecord::csv_header();
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out.join(METRICS_FILE), &csv)?;

    let curve = rmse_vs_r(&rows, &constants);
    if !curve.is_empty() {
        let mut s = String::from("R,rmse_u\n");
        for (r, e) in &curve {
            writeln!(s, "{},{}", format_float(*r), format_float(*e)).unwrap();
        }
        write_text(&out.join("rmse_vs_R.csv"), &s)?;
    }

    for (i, stage, hist) in &losses {
        let train = Series {
            label: "train",
            color: "#3b528b",
            points: hist.iter().map(|h| (h.0, h.1)).collect(),
        };
        let val = Series {
            label: "validation",
            color: "#d95f02",
            points: hist.iter().filter_map(|h| h.2.map(|v| (h.0, v))).collect(),
        };
        let title = format!("run{i} stage {} loss", stage.number());
        write_text(&out.join(format!("loss_run{i}_stage{}.svg", stage.number())), &loss_svg(&title, &[train, val]))?;
    }
    println!(
        "report: {} metric rows, {} R points, {rendered} frames, {} loss curves in {}",
        rows.len(),
        curve.len(),
        losses.len(),
        out.display()
    );
    Ok(())
}
