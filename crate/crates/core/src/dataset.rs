//! In-memory datasets: trajectories tagged with their PDE constants and split,
//! plus the per-channel statistics used for normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split {s:?} (train, validation, test)"))),
        }
    }
}

/// Summary statistics of one channel (or one PDE constant) over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n, mut mean, mut m2) = (0u64, 0.0, 0.0);
        for &v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "channel statistics".into(),
                });
            }
            min = min.min(v);
            max = max.max(v);
            // Welford update
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        if n == 0 {
            return Err(Error::Validation("statistics of an empty set".into()));
        }
        Ok(Self {
            min,
            max,
            mean,
            std: (m2 / n as f64).sqrt(),
        })
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.max + self.min)
    }

    /// Half the value range, or 1 for a degenerate (constant) channel.
    pub fn half_range(&self) -> f64 {
        let h = 0.5 * (self.max - self.min);
        if h > 0.0 {
            h
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    /// PDE constants for this trajectory, e.g. `R`, `a`, `w` or `nu`, `rho`.
    pub constants: BTreeMap<String, f64>,
    pub split: Split,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    entries: Vec<DatasetEntry>,
    stats: BTreeMap<String, ChannelStats>,
}

impl Dataset {
    /// Checks that every entry shares one channel layout and time step and
    /// computes channel statistics over all snapshots of all entries.
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Validation("dataset needs at least one trajectory".into()));
        };
        let names = first.trajectory.channel_names().to_vec();
        let dt = first.trajectory.dt();
        for (i, e) in entries.iter().enumerate() {
            if e.trajectory.channel_names() != names.as_slice() {
                return Err(Error::Shape(format!("trajectory {i} has channels {:?}, expected {names:?}", e.trajectory.channel_names())));
            }
            if !e.trajectory.grid().same_shape(first.trajectory.grid()) {
                return Err(Error::Shape(format!("trajectory {i} is on a different grid")));
            }
            if e.trajectory.dt() != dt {
                return Err(Error::Validation(format!("trajectory {i} has dt {} but the dataset uses {dt}", e.trajectory.dt())));
            }
        }
        let mut stats = BTreeMap::new();
        for (c, name) in names.iter().enumerate() {
            let values = entries
                .iter()
                .flat_map(|e| e.trajectory.snapshots())
                .flat_map(|s| s.channels().nth(c).expect("layout checked").values());
            stats.insert(name.clone(), ChannelStats::from_values(values)?);
        }
        Ok(Self { entries, stats })
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<DatasetEntry> {
        self.entries
    }

    pub fn stats(&self) -> &BTreeMap<String, ChannelStats> {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn channel_names(&self) -> &[String] {
        self.entries[0].trajectory.channel_names()
    }

    pub fn dt(&self) -> f64 {
        self.entries[0].trajectory.dt()
    }

    /// Statistics of a PDE constant across entries that define it.
    pub fn constant_stats(&self, name: &str) -> Result<ChannelStats> {
        let values: Vec<f64> = self.entries.iter().filter_map(|e| e.constants.get(name).copied()).collect();
        if values.len() != self.entries.len() {
            return Err(Error::Validation(format!("constant {name:?} is missing from some trajectories")));
        }
        ChannelStats::from_values(&values)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Re-tags entries, e.g. to hold out a validation trajectory.
    pub fn set_split(&mut self, index: usize, split: Split) -> Result<()> {
        let n = self.entries.len();
        let e = self
            .entries
            .get_mut(index)
            .ok_or_else(|| Error::Validation(format!("entry {index} out of range ({n} entries)")))?;
        e.split = split;
        Ok(())
    }
}
