//! Evaluation metrics: prediction RMSEs, PDE residuals, the divergence-free
//! error and hotspot quantities.
//!
//! Residuals evaluate spatial terms with the metric stencils (central inside,
//! second-order one-sided at edges) and the time derivative with central
//! differences between snapshots, second-order one-sided at the first and
//! last snapshot. By default the outer ring of cells and any masked obstacle
//! cells are left out of the averages.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fdops::{self, StencilScheme};
use crate::fields::{Field, GridSpec, Snapshot, Trajectory};

/// Hotspot temperature threshold in kelvin.
pub const HOTSPOT_THRESHOLD: f64 = 875.0;

/// Root mean squared cellwise difference.
pub fn rmse(pred: &Field, truth: &Field) -> Result<f64> {
    pred.grid().check_same(truth.grid(), "rmse")?;
    let sq: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / pred.values().len() as f64).sqrt())
}

/// RMSE of the speed `sqrt(u_x² + u_y²)`.
pub fn rmse_speed(pred: &Snapshot, truth: &Snapshot) -> Result<f64> {
    rmse(&pred.speed(), &truth.speed())
}

fn check_aligned(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("trajectories have {} and {} snapshots", pred.len(), truth.len())));
    }
    pred.grid().check_same(truth.grid(), "trajectory metrics")
}

/// RMSE over every cell of every snapshot of a named channel.
pub fn trajectory_rmse(pred: &Trajectory, truth: &Trajectory, channel: &str) -> Result<f64> {
    check_aligned(pred, truth)?;
    let mut sq = 0.0;
    for (p, t) in pred.snapshots().iter().zip(truth.snapshots()) {
        let missing = || Error::Validation(format!("channel {channel:?} not present"));
        let r = rmse(p.channel(channel).ok_or_else(missing)?, t.channel(channel).ok_or_else(missing)?)?;
        sq += r * r;
    }
    Ok((sq / pred.len() as f64).sqrt())
}

/// Speed RMSE over every cell of every snapshot.
pub fn trajectory_rmse_speed(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_aligned(pred, truth)?;
    let mut sq = 0.0;
    for (p, t) in pred.snapshots().iter().zip(truth.snapshots()) {
        let r = rmse_speed(p, t)?;
        sq += r * r;
    }
    Ok((sq / pred.len() as f64).sqrt())
}

/// Which cells enter residual averages.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualOptions {
    pub exclude_ring: bool,
    /// Binary obstacle mask; masked cells are excluded and stencils never
    /// read them.
    pub mask: Option<Field>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            exclude_ring: true,
            mask: None,
        }
    }
}

impl ResidualOptions {
    /// Every cell counts.
    pub fn full() -> Self {
        Self {
            exclude_ring: false,
            mask: None,
        }
    }

    fn included(&self, grid: &GridSpec) -> Result<Vec<bool>> {
        if let Some(m) = &self.mask {
            grid.check_same(m.grid(), "residual mask")?;
        }
        let keep: Vec<bool> = (0..grid.len())
            .map(|i| {
                let (row, col) = (i / grid.width, i % grid.width);
                let ring = self.exclude_ring && grid.is_boundary(row, col);
                let masked = self.mask.as_ref().is_some_and(|m| m.values()[i] != 0.0);
                !ring && !masked
            })
            .collect();
        if !keep.iter().any(|&k| k) {
            return Err(Error::Validation("no cells left after ring and mask exclusion".into()));
        }
        Ok(keep)
    }

    fn gradient(&self, f: &Field) -> Result<(Field, Field)> {
        match &self.mask {
            Some(m) => fdops::masked::gradient(f, m),
            None => fdops::gradient(f, StencilScheme::METRIC),
        }
    }

    fn laplacian(&self, f: &Field) -> Result<Field> {
        match &self.mask {
            Some(m) => fdops::masked::laplacian(f, m),
            None => fdops::laplacian(f, StencilScheme::METRIC),
        }
    }
}

fn mean_over(values: impl Iterator<Item = f64>, keep: &[bool]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (v, &k) in values.zip(keep) {
        if k {
            sum += v;
            n += 1;
        }
    }
    sum / n as f64
}

/// Time derivative of channel `c` at snapshot `k`: central inside, second-order
/// one-sided at either end.
fn time_derivative(traj: &Trajectory, k: usize, c: usize) -> Result<Vec<f64>> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::Validation(format!("time derivatives need at least 3 snapshots, got {n}")));
    }
    let s = traj.snapshots();
    let at = |j: usize| s[j].channels().nth(c).expect("channel index in range").values();
    let dt = traj.dt();
    // Written in differences so that constant-in-time data gives exactly 0.
    let out: Vec<f64> = if k == 0 {
        let (a, b, c) = (at(0), at(1), at(2));
        (0..a.len()).map(|i| (2.0 * (b[i] - a[i]) - 0.5 * (c[i] - a[i])) / dt).collect()
    } else if k + 1 == n {
        let (a, b, c) = (at(n - 3), at(n - 2), at(n - 1));
        (0..a.len()).map(|i| (2.0 * (c[i] - b[i]) - 0.5 * (c[i] - a[i])) / dt).collect()
    } else {
        let (a, c) = (at(k - 1), at(k + 1));
        (0..a.len()).map(|i| 0.5 * (c[i] - a[i]) / dt).collect()
    };
    Ok(out)
}

/// Cellwise momentum residual components; `pressure` adds `(1/ρ)∇p`.
fn momentum_residual(
    traj: &Trajectory,
    k: usize,
    nu: f64,
    pressure: Option<(usize, f64)>,
    opts: &ResidualOptions,
) -> Result<[Vec<f64>; 2]> {
    let s = &traj.snapshots()[k];
    let (u, v) = (&s.velocity()[0], &s.velocity()[1]);
    let pgrad = match pressure {
        Some((c, rho)) => {
            let p = s.channels().nth(c).expect("pressure channel index");
            let (px, py) = opts.gradient(p)?;
            Some((px, py, 1.0 / rho))
        }
        None => None,
    };
    let mut out = [Vec::new(), Vec::new()];
    for (c, comp) in [u, v].into_iter().enumerate() {
        let dt = time_derivative(traj, k, c)?;
        let (gx, gy) = opts.gradient(comp)?;
        let lap = opts.laplacian(comp)?;
        let mut f: Vec<f64> = (0..dt.len())
            .map(|i| dt[i] + u.values()[i] * gx.values()[i] + v.values()[i] * gy.values()[i] - nu * lap.values()[i])
            .collect();
        if let Some((px, py, inv_rho)) = &pgrad {
            let g = if c == 0 { px } else { py };
            f.iter_mut().zip(g.values()).for_each(|(a, b)| *a += inv_rho * b);
        }
        out[c] = f;
    }
    Ok(out)
}

fn residual_norm(f: &[Vec<f64>; 2], keep: &[bool]) -> f64 {
    mean_over(f[0].iter().zip(&f[1]).map(|(a, b)| a.hypot(*b)), keep)
}

/// `‖f_u‖` of the Burgers equation `u_t + u·∇u - (1/R)Δu` at snapshot `k`.
pub fn burgers_residual_at(traj: &Trajectory, k: usize, r: f64, opts: &ResidualOptions) -> Result<f64> {
    if k >= traj.len() {
        return Err(Error::Validation(format!("snapshot {k} out of range")));
    }
    if !(r > 0.0) {
        return Err(Error::Validation(format!("R must be positive, got {r}")));
    }
    let keep = opts.included(traj.grid())?;
    let f = momentum_residual(traj, k, 1.0 / r, None, opts)?;
    Ok(residual_norm(&f, &keep))
}

/// Burgers residual averaged over every snapshot of the trajectory.
pub fn burgers_residual(traj: &Trajectory, r: f64, opts: &ResidualOptions) -> Result<f64> {
    let mut sum = 0.0;
    for k in 0..traj.len() {
        sum += burgers_residual_at(traj, k, r, opts)?;
    }
    Ok(sum / traj.len() as f64)
}

fn pressure_index(traj: &Trajectory, name: &str) -> Result<usize> {
    traj.channel_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Validation(format!("ns_residual needs a pressure channel {name:?}")))
}

/// Navier–Stokes momentum residual
/// `‖u_t + u·∇u + (1/ρ)∇p - (1/Re)Δu‖` at snapshot `k`, using pressure
/// channel `p`.
pub fn ns_residual_at(traj: &Trajectory, k: usize, rho: f64, re: f64, opts: &ResidualOptions) -> Result<f64> {
    if k >= traj.len() {
        return Err(Error::Validation(format!("snapshot {k} out of range")));
    }
    if !(rho > 0.0 && re > 0.0) {
        return Err(Error::Validation(format!("rho and Re must be positive, got {rho}, {re}")));
    }
    let c = pressure_index(traj, "p")?;
    let keep = opts.included(traj.grid())?;
    let f = momentum_residual(traj, k, 1.0 / re, Some((c, rho)), opts)?;
    Ok(residual_norm(&f, &keep))
}

/// Navier–Stokes residual averaged over every snapshot.
pub fn ns_residual(traj: &Trajectory, rho: f64, re: f64, opts: &ResidualOptions) -> Result<f64> {
    let mut sum = 0.0;
    for k in 0..traj.len() {
        sum += ns_residual_at(traj, k, rho, re, opts)?;
    }
    Ok(sum / traj.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceError {
    /// Mean of the signed cellwise divergence.
    pub signed: f64,
    /// Mean of its absolute value.
    pub abs: f64,
    pub max_abs: f64,
}

pub fn divergence_error(snapshot: &Snapshot, opts: &ResidualOptions) -> Result<DivergenceError> {
    let keep = opts.included(snapshot.grid())?;
    let (u, v) = (&snapshot.velocity()[0], &snapshot.velocity()[1]);
    let div = match &opts.mask {
        Some(m) => {
            let a = fdops::masked::derivative(u, fdops::Axis::X, m)?;
            let b = fdops::masked::derivative(v, fdops::Axis::Y, m)?;
            crate::fields::add(&a, &b)?
        }
        None => fdops::divergence((u, v), StencilScheme::METRIC)?,
    };
    let d = div.values();
    let max_abs = d.iter().zip(&keep).filter(|(_, &k)| k).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    Ok(DivergenceError {
        signed: mean_over(d.iter().copied(), &keep),
        abs: mean_over(d.iter().map(|v| v.abs()), &keep),
        max_abs,
    })
}

/// Divergence error averaged over the snapshots of a trajectory.
pub fn trajectory_divergence_error(traj: &Trajectory, opts: &ResidualOptions) -> Result<DivergenceError> {
    let mut acc = DivergenceError {
        signed: 0.0,
        abs: 0.0,
        max_abs: 0.0,
    };
    for s in traj.snapshots() {
        let e = divergence_error(s, opts)?;
        acc.signed += e.signed;
        acc.abs += e.abs;
        acc.max_abs = acc.max_abs.max(e.max_abs);
    }
    let n = traj.len() as f64;
    acc.signed /= n;
    acc.abs /= n;
    Ok(acc)
}

/// Hotspot quantities per snapshot. Rates are backward differences and so
/// have one entry fewer; `rate[j]` belongs to `time[j + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HotspotSeries {
    pub time: Vec<f64>,
    pub temperature: Vec<f64>,
    pub area: Vec<f64>,
    pub temperature_rate: Vec<f64>,
    pub area_rate: Vec<f64>,
    /// Snapshots with no hotspot cell, where the mean temperature is set to 0.
    pub empty: Vec<bool>,
}

/// Mean hotspot temperature and total hotspot area for each field, with
/// every cell at or above `threshold` counted as hot.
pub fn hotspot_series(temperatures: &[Field], times: &[f64], threshold: f64) -> Result<HotspotSeries> {
    if temperatures.len() != times.len() {
        return Err(Error::Shape(format!("{} fields but {} times", temperatures.len(), times.len())));
    }
    let mut s = HotspotSeries {
        time: times.to_vec(),
        temperature: Vec::with_capacity(times.len()),
        area: Vec::with_capacity(times.len()),
        temperature_rate: Vec::new(),
        area_rate: Vec::new(),
        empty: Vec::with_capacity(times.len()),
    };
    for f in temperatures {
        let cell = f.grid().cell_area();
        let (mut weighted, mut count) = (0.0, 0usize);
        for &t in f.values() {
            if t >= threshold {
                weighted += t * cell;
                count += 1;
            }
        }
        let area = count as f64 * cell;
        s.area.push(area);
        s.temperature.push(if count == 0 { 0.0 } else { weighted / area });
        s.empty.push(count == 0);
    }
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        if !(dt > 0.0) {
            return Err(Error::Validation("hotspot times must increase".into()));
        }
        s.temperature_rate.push((s.temperature[j] - s.temperature[j - 1]) / dt);
        s.area_rate.push((s.area[j] - s.area[j - 1]) / dt);
    }
    Ok(s)
}

/// Hotspot series of a named temperature channel.
pub fn trajectory_hotspots(traj: &Trajectory, channel: &str, threshold: f64) -> Result<HotspotSeries> {
    let fields = traj
        .snapshots()
        .iter()
        .map(|s| s.channel(channel).cloned().ok_or_else(|| Error::Validation(format!("no channel {channel:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = traj.snapshots().iter().map(|s| s.t).collect();
    hotspot_series(&fields, &times, threshold)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HotspotErrors {
    pub temperature: f64,
    pub area: f64,
    pub temperature_rate: f64,
    pub area_rate: f64,
}

fn series_rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// RMSE over time of each hotspot quantity.
pub fn hotspot_errors(pred: &HotspotSeries, truth: &HotspotSeries) -> Result<HotspotErrors> {
    if pred.temperature.len() != truth.temperature.len() {
        return Err(Error::Shape(format!(
            "hotspot series lengths differ: {} vs {}",
            pred.temperature.len(),
            truth.temperature.len()
        )));
    }
    Ok(HotspotErrors {
        temperature: series_rmse(&pred.temperature, &truth.temperature),
        area: series_rmse(&pred.area, &truth.area),
        temperature_rate: series_rmse(&pred.temperature_rate, &truth.temperature_rate),
        area_rate: series_rmse(&pred.area_rate, &truth.area_rate),
    })
}

/// One row of the metrics table. Metrics that do not apply to a dataset are
/// `None` and written as empty cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub trajectory: String,
    pub rmse_u: Option<f64>,
    pub rmse_t: Option<f64>,
    pub rmse_p: Option<f64>,
    pub burgers_residual: Option<f64>,
    pub ns_residual: Option<f64>,
    pub eps_div: Option<f64>,
    pub eps_div_abs: Option<f64>,
    pub hotspot: Option<HotspotErrors>,
    /// Predicted snapshots whose hotspot set was empty.
    pub hotspot_empty_steps: Option<usize>,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 13] = [
        "trajectory",
        "rmse_u",
        "rmse_T",
        "rmse_P",
        "burgers_residual",
        "ns_residual",
        "eps_div",
        "eps_div_abs",
        "eps_T_hs",
        "eps_A_hs",
        "eps_Tdot_hs",
        "eps_Adot_hs",
        "hotspot_empty_steps",
    ];

    pub fn csv_header() -> String {
        Self::COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let h = self.hotspot;
        let values = [
            self.rmse_u,
            self.rmse_t,
            self.rmse_p,
            self.burgers_residual,
            self.ns_residual,
            self.eps_div,
            self.eps_div_abs,
            h.map(|h| h.temperature),
            h.map(|h| h.area),
            h.map(|h| h.temperature_rate),
            h.map(|h| h.area_rate),
        ];
        let mut row = self.trajectory.replace(',', "_");
        for v in values {
            row.push(',');
            if let Some(v) = v {
                write!(row, "{}", format_float(v)).expect("writing to a String");
            }
        }
        row.push(',');
        if let Some(n) = self.hotspot_empty_steps {
            write!(row, "{n}").expect("writing to a String");
        }
        row
    }

    /// Parses a row produced by [`MetricsRecord::csv_row`].
    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != Self::COLUMNS.len() {
            return Err(Error::Validation(format!(
                "metrics row has {} cells, expected {}",
                cells.len(),
                Self::COLUMNS.len()
            )));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Validation(format!("bad number {s:?} in metrics row")))
            }
        };
        let hs = [num(cells[8])?, num(cells[9])?, num(cells[10])?, num(cells[11])?];
        let hotspot = match hs {
            [Some(temperature), Some(area), Some(temperature_rate), Some(area_rate)] => Some(HotspotErrors {
                temperature,
                area,
                temperature_rate,
                area_rate,
            }),
            _ => None,
        };
        Ok(Self {
            trajectory: cells[0].to_string(),
            rmse_u: num(cells[1])?,
            rmse_t: num(cells[2])?,
            rmse_p: num(cells[3])?,
            burgers_residual: num(cells[4])?,
            ns_residual: num(cells[5])?,
            eps_div: num(cells[6])?,
            eps_div_abs: num(cells[7])?,
            hotspot,
            hotspot_empty_steps: if cells[12].is_empty() {
                None
            } else {
                Some(cells[12].parse().map_err(|_| Error::Validation(format!("bad count {:?}", cells[12])))?)
            },
        })
    }
}

/// Locale-independent scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}
