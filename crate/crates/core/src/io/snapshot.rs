//! Trajectory files: fixed little-endian header, channel names, then an f32
//! payload ordered time, channel, row, column.
//!
//! The grid origin and channel units are not part of the format; files read
//! back on a grid with origin `(0, 0)` and unitless fields.

use std::path::Path;

use super::binary::{len_u32, read_file, write_file, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::fields::{Field, GridSpec, Snapshot, Trajectory};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PARCFLD1";
pub const SNAPSHOT_VERSION: u32 = 1;
/// Magic, version, four dimensions and three f64 values.
pub const SNAPSHOT_HEADER_BYTES: usize = 8 + 4 + 4 * 4 + 3 * 8;

/// Payload size in bytes for the given dimensions.
pub fn payload_bytes(height: usize, width: usize, channels: usize, steps: usize) -> usize {
    4 * steps * channels * height * width
}

fn to_f32(v: f64) -> Result<f32> {
    let q = v as f32;
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::NonFinite {
            context: format!("f32 conversion of {v}"),
        })
    }
}

/// The trajectory as it reads back from disk: values rounded to f32, units
/// dropped, times regenerated from `t0` and `dt`, origin reset.
pub fn quantized(traj: &Trajectory) -> Result<Trajectory> {
    decode(&encode(traj)?, Path::new("<memory>"))
}

pub fn encode(traj: &Trajectory) -> Result<Vec<u8>> {
    let g = traj.grid();
    let names = traj.channel_names();
    let mut w = Writer::default();
    w.bytes(SNAPSHOT_MAGIC);
    w.u32(SNAPSHOT_VERSION);
    w.u32(len_u32(g.height, "height")?);
    w.u32(len_u32(g.width, "width")?);
    w.u32(len_u32(names.len(), "channel count")?);
    w.u32(len_u32(traj.len(), "step count")?);
    w.f64(g.dx);
    w.f64(traj.dt());
    w.f64(traj.first().t);
    for n in names {
        w.str(n)?;
    }
    w.buf.reserve(payload_bytes(g.height, g.width, names.len(), traj.len()));
    for s in traj.snapshots() {
        for f in s.channels() {
            for &v in f.values() {
                w.f32(to_f32(v)?);
            }
        }
    }
    Ok(w.buf)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Trajectory> {
    let mut r = Reader::new(bytes, path);
    r.magic(SNAPSHOT_MAGIC)?;
    r.version(SNAPSHOT_VERSION)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let t = r.u32()? as usize;
    let dx = r.f64()?;
    let dt = r.f64()?;
    let t0 = r.f64()?;
    if c < 2 || t == 0 {
        return Err(r.malformed(format!("need at least 2 channels and 1 step, header says C={c}, T={t}")));
    }
    let grid = GridSpec::new(h, w, dx).map_err(|e| r.malformed(e.to_string()))?;
    let names = (0..c).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let expected = payload_bytes(h, w, c, t);
    if r.remaining() < expected {
        return Err(r.fail(FormatError::Truncated {
            expected: (bytes.len() - r.remaining() + expected) as u64,
            found: bytes.len() as u64,
        }));
    }
    let mut snaps = Vec::with_capacity(t);
    for k in 0..t {
        let mut fields = Vec::with_capacity(c);
        for _ in 0..c {
            let raw = r.take(4 * grid.len())?;
            let values: Vec<f64> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(r.malformed(format!("non-finite value at step {k}")));
            }
            fields.push(Field::new(grid, values, "")?);
        }
        let snap = Snapshot::from_channels(Trajectory::time_at(t0, dt, k), fields, names.clone()).map_err(|e| r.malformed(e.to_string()))?;
        snaps.push(snap);
    }
    r.finish()?;
    Trajectory::new(snaps, dt).map_err(|e| r.malformed(e.to_string()))
}

pub fn write_snapshot_file(traj: &Trajectory, path: &Path) -> Result<()> {
    write_file(path, &encode(traj)?)
}

pub fn read_snapshot_file(path: &Path) -> Result<Trajectory> {
    decode(&read_file(path)?, path)
}
