//! Ingestion of externally generated raster dumps.
//!
//! A descriptor (`key=value` text) declares the grid, channels, time step and
//! raw layout, and points at one text raster per channel. Each raster holds
//! the frames of that channel as whitespace- or comma-separated matrices
//! separated by blank lines. With `layout=rows_y` (default) each text row is
//! one grid row; with `layout=rows_x` each text row is one grid column and
//! the data is transposed on read.
//!
//! Recognized keys: `height`, `width`, `dx`, `dt`, `t0`, `frames`,
//! `channels`, `layout`, `split`, `data.<channel>`, `const.<name>`, and for an
//! obstacle `mask=disk` with `mask.center_x`, `mask.center_y`,
//! `mask.diameter` (physical units, origin at the domain corner).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::binary::{read_file, write_file};
use crate::dataset::{DatasetEntry, Split};
use crate::error::{Error, Result};
use crate::fields::{disk_mask, Field, GridSpec, Snapshot, Trajectory, VELOCITY_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterLayout {
    RowsY,
    RowsX,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiskSpec {
    pub center: (f64, f64),
    pub diameter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub height: usize,
    pub width: usize,
    pub dx: f64,
    pub dt: f64,
    pub t0: f64,
    pub frames: usize,
    pub channels: Vec<String>,
    pub layout: RasterLayout,
    pub split: Split,
    /// Raster file per channel, relative to the descriptor's directory.
    pub data: BTreeMap<String, PathBuf>,
    pub constants: BTreeMap<String, f64>,
    pub disk: Option<DiskSpec>,
}

/// Grid with cell centers at `(j + 1/2)·dx`, so physical coordinates start
/// at the domain corner.
pub fn corner_grid(height: usize, width: usize, dx: f64) -> Result<GridSpec> {
    GridSpec::with_origin(height, width, dx, (0.5 * dx, 0.5 * dx))
}

impl Descriptor {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("descriptor line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Validation(format!("descriptor lacks {k:?}")));
        let parse_f = |k: &str, v: String| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Validation(format!("descriptor key {k}: bad number {v:?}")))
        };
        let parse_u = |k: &str, v: String| -> Result<usize> {
            v.parse().map_err(|_| Error::Validation(format!("descriptor key {k}: bad integer {v:?}")))
        };
        let height = parse_u("height", take("height")?)?;
        let width = parse_u("width", take("width")?)?;
        let dx = parse_f("dx", take("dx")?)?;
        let dt = parse_f("dt", take("dt")?)?;
        let frames = parse_u("frames", take("frames")?)?;
        let channels: Vec<String> = take("channels")?.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        let t0 = kv.remove("t0").map(|v| parse_f("t0", v)).transpose()?.unwrap_or(0.0);
        let layout = match kv.remove("layout").as_deref() {
            None | Some("rows_y") => RasterLayout::RowsY,
            Some("rows_x") => RasterLayout::RowsX,
            Some(o) => return Err(Error::Validation(format!("unknown layout {o:?} (rows_y, rows_x)"))),
        };
        let split = kv.remove("split").map(|s| s.parse()).transpose()?.unwrap_or(Split::Train);
        let disk = match kv.remove("mask").as_deref() {
            None | Some("none") => None,
            Some("disk") => {
                let mut f = |k: &str| -> Result<f64> {
                    let v = kv.remove(k).ok_or_else(|| Error::Validation(format!("disk mask needs {k:?}")))?;
                    parse_f(k, v)
                };
                Some(DiskSpec {
                    center: (f("mask.center_x")?, f("mask.center_y")?),
                    diameter: f("mask.diameter")?,
                })
            }
            Some(o) => return Err(Error::Validation(format!("unknown mask {o:?} (none, disk)"))),
        };
        let mut data = BTreeMap::new();
        let mut constants = BTreeMap::new();
        for (k, v) in kv {
            if let Some(c) = k.strip_prefix("data.") {
                data.insert(c.to_string(), PathBuf::from(v));
            } else if let Some(c) = k.strip_prefix("const.") {
                constants.insert(c.to_string(), parse_f(&k, v)?);
            } else {
                return Err(Error::Validation(format!("unknown descriptor key {k:?}")));
            }
        }
        if channels.len() < 2 || channels[..2] != VELOCITY_NAMES {
            return Err(Error::Validation(format!("channels must start with u_x,u_y, got {channels:?}")));
        }
        for c in &channels {
            if !data.contains_key(c) {
                return Err(Error::Validation(format!("descriptor lacks data.{c}")));
            }
        }
        if let Some(extra) = data.keys().find(|k| !channels.contains(k)) {
            return Err(Error::Validation(format!("data.{extra} is not a declared channel")));
        }
        if frames == 0 {
            return Err(Error::Validation("descriptor needs at least one frame".into()));
        }
        Ok(Self {
            height,
            width,
            dx,
            dt,
            t0,
            frames,
            channels,
            layout,
            split,
            data,
            constants,
            disk,
        })
    }

    pub fn grid(&self) -> Result<GridSpec> {
        corner_grid(self.height, self.width, self.dx)
    }

    /// Obstacle mask from the declared geometry, if any.
    pub fn mask(&self) -> Result<Option<Field>> {
        let grid = self.grid()?;
        Ok(self.disk.as_ref().map(|d| disk_mask(grid, d.center, 0.5 * d.diameter)))
    }
}

/// Parses frames of `rows × cols` numbers separated by blank lines.
pub fn parse_raster(text: &str, rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut frames = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    let mut cur_rows = 0;
    let flush = |cur: &mut Vec<f64>, cur_rows: &mut usize, frames: &mut Vec<Vec<f64>>| -> Result<()> {
        if *cur_rows == 0 {
            return Ok(());
        }
        if *cur_rows != rows {
            return Err(Error::Shape(format!(
                "{what}: frame {} has {cur_rows} rows, expected {rows}",
                frames.len()
            )));
        }
        frames.push(std::mem::take(cur));
        *cur_rows = 0;
        Ok(())
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut cur, &mut cur_rows, &mut frames)?;
            continue;
        }
        let before = cur.len();
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok.parse().map_err(|_| Error::Validation(format!("{what}: bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{what}, frame {}", frames.len()),
                });
            }
            cur.push(v);
        }
        let n = cur.len() - before;
        if n != cols {
            return Err(Error::Shape(format!(
                "{what}: frame {} row {cur_rows} has {n} values, expected {cols}",
                frames.len()
            )));
        }
        cur_rows += 1;
    }
    flush(&mut cur, &mut cur_rows, &mut frames)?;
    Ok(frames)
}

/// Renders frames in the format read by [`parse_raster`].
pub fn format_raster(frames: &[&Field]) -> String {
    let mut s = String::new();
    for (k, f) in frames.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        for row in f.values().chunks(f.grid().width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
    }
    s
}

pub fn write_raster(frames: &[&Field], path: &Path) -> Result<()> {
    write_file(path, format_raster(frames).as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub entry: DatasetEntry,
    pub mask: Option<Field>,
}

/// Reads the descriptor at `path` and every raster it references.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Validation(format!("{path:?} is not UTF-8")))?;
    let d = Descriptor::parse(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    ingest_descriptor(&d, dir)
}

pub fn ingest_descriptor(d: &Descriptor, dir: &Path) -> Result<Ingested> {
    let grid = d.grid()?;
    let (rows, cols) = match d.layout {
        RasterLayout::RowsY => (d.height, d.width),
        RasterLayout::RowsX => (d.width, d.height),
    };
    let mut per_channel = Vec::with_capacity(d.channels.len());
    for c in &d.channels {
        let p = dir.join(&d.data[c]);
        let text = String::from_utf8(read_file(&p)?).map_err(|_| Error::Validation(format!("{p:?} is not UTF-8")))?;
        let frames = parse_raster(&text, rows, cols, &format!("{}", p.display()))?;
        if frames.len() != d.frames {
            return Err(Error::Shape(format!("{p:?} has {} frames, descriptor declares {}", frames.len(), d.frames)));
        }
        per_channel.push(frames);
    }
    let mut snaps = Vec::with_capacity(d.frames);
    for k in 0..d.frames {
        let mut fields = Vec::with_capacity(d.channels.len());
        for frames in &per_channel {
            let raw = Field::new(corner_grid(rows, cols, d.dx)?, frames[k].clone(), "")?;
            let f = match d.layout {
                RasterLayout::RowsY => raw,
                RasterLayout::RowsX => Field::new(grid, raw.transposed()?.into_values(), "")?,
            };
            fields.push(f);
        }
        snaps.push(Snapshot::from_channels(Trajectory::time_at(d.t0, d.dt, k), fields, d.channels.clone())?);
    }
    Ok(Ingested {
        entry: DatasetEntry {
            constants: d.constants.clone(),
            split: d.split,
            trajectory: Trajectory::new(snaps, d.dt)?,
        },
        mask: d.mask()?,
    })
}
