//! Dataset manifests: line-oriented `key=value` text listing trajectory
//! files, their splits and PDE constants, and per-channel statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::binary::{read_file, write_file};
use super::snapshot::{quantized, read_snapshot_file, write_snapshot_file};
use crate::dataset::{ChannelStats, Dataset, DatasetEntry, Split};
use crate::error::{Error, FormatError, Result};
use crate::metrics::format_float;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub split: Split,
    pub constants: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub channels: Vec<String>,
    pub stats: Vec<ChannelStats>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "schema={MANIFEST_SCHEMA}").unwrap();
        writeln!(s, "channels={}", self.channels.join(",")).unwrap();
        for (name, st) in self.channels.iter().zip(&self.stats) {
            for (k, v) in [("min", st.min), ("max", st.max), ("mean", st.mean), ("std", st.std)] {
                writeln!(s, "stats.{name}.{k}={}", format_float(v)).unwrap();
            }
        }
        writeln!(s, "trajectories={}", self.entries.len()).unwrap();
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(s, "trajectory.{i}.file={}", e.file).unwrap();
            writeln!(s, "trajectory.{i}.split={}", e.split).unwrap();
            for (k, v) in &e.constants {
                writeln!(s, "trajectory.{i}.const.{k}={}", format_float(*v)).unwrap();
            }
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, FormatError::Malformed(msg));
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key=value", i + 1)))?;
            if kv.insert(k, v).is_some() {
                return Err(bad(format!("duplicate key {k:?}")));
            }
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| bad(format!("missing key {k:?}")));
        let schema = take("schema")?;
        if schema != MANIFEST_SCHEMA.to_string() {
            let found = schema.parse().map_err(|_| bad(format!("bad schema {schema:?}")))?;
            return Err(Error::format(
                path,
                FormatError::VersionMismatch {
                    found,
                    expected: MANIFEST_SCHEMA,
                },
            ));
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| bad(format!("bad number {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-finite value {s:?}")))
            }
        };
        let channels: Vec<String> = take("channels")?.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
        let mut stats = Vec::new();
        for c in &channels {
            let mut f = |k: &str| -> Result<f64> { num(take(&format!("stats.{c}.{k}"))?) };
            stats.push(ChannelStats {
                min: f("min")?,
                max: f("max")?,
                mean: f("mean")?,
                std: f("std")?,
            });
        }
        let n: usize = take("trajectories")?.parse().map_err(|_| bad("bad trajectory count".into()))?;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for i in 0..n {
            let file = take(&format!("trajectory.{i}.file"))?.to_string();
            let split = take(&format!("trajectory.{i}.split"))?.parse().map_err(|e: Error| bad(e.to_string()))?;
            entries.push(ManifestEntry {
                file,
                split,
                constants: BTreeMap::new(),
            });
        }
        for (k, v) in kv {
            let rest = k.strip_prefix("trajectory.").ok_or_else(|| bad(format!("unknown key {k:?}")))?;
            let (idx, name) = rest
                .split_once(".const.")
                .ok_or_else(|| bad(format!("unknown key {k:?}")))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad index in {k:?}")))?;
            let e = entries.get_mut(idx).ok_or_else(|| bad(format!("index out of range in {k:?}")))?;
            e.constants.insert(name.to_string(), num(v)?);
        }
        Ok(Self { channels, stats, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, FormatError::Malformed("not UTF-8".into())))?;
        Self::parse(&text, path)
    }
}

fn file_name(i: usize) -> String {
    format!("traj_{i:04}.parcfld")
}

/// Writes every trajectory plus `manifest.txt` into `dir`. The recorded
/// statistics are those of the data as stored (f32-rounded).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    let mut stored = Vec::with_capacity(ds.len());
    for (i, e) in ds.entries().iter().enumerate() {
        let file = file_name(i);
        write_snapshot_file(&e.trajectory, &dir.join(&file))?;
        stored.push(DatasetEntry {
            constants: e.constants.clone(),
            split: e.split,
            trajectory: quantized(&e.trajectory)?,
        });
        entries.push(ManifestEntry {
            file,
            split: e.split,
            constants: e.constants.clone(),
        });
    }
    let stored = Dataset::new(stored)?;
    let channels = ds.channel_names().to_vec();
    let stats = channels.iter().map(|c| stored.stats()[c]).collect();
    let m = DatasetManifest { channels, stats, entries };
    write_file(&dir.join(MANIFEST_FILE), m.to_text().as_bytes())?;
    Ok(m)
}

/// Loads a dataset from a manifest path or a directory containing one.
pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_path: PathBuf = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let m = DatasetManifest::read(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let trajectory = read_snapshot_file(&dir.join(&e.file))?;
        if trajectory.channel_names() != m.channels.as_slice() {
            return Err(Error::format(
                &manifest_path,
                FormatError::Malformed(format!("{} has channels {:?}, manifest lists {:?}", e.file, trajectory.channel_names(), m.channels)),
            ));
        }
        entries.push(DatasetEntry {
            constants: e.constants.clone(),
            split: e.split,
            trajectory,
        });
    }
    Ok((Dataset::new(entries)?, m))
}
