//! Uniform 2D grids, scalar fields, snapshots and trajectories.
//!
//! Storage is row-major with `(row, col)` indexing. Rows run along `y`
//! (increasing downward) and columns along `x` (increasing rightward), so the
//! cell at `(row, col)` is centered at `(origin.0 + col*dx, origin.1 + row*dx)`.
//! Every public operation rejects NaN/Inf instead of propagating it.

use crate::error::{ensure_finite, Error, Result};

/// Uniform cell-centered grid with equal spacing in both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub dx: f64,
    /// Physical `(x, y)` of the center of cell `(0, 0)`.
    pub origin: (f64, f64),
}

impl GridSpec {
    pub const MIN_CELLS: usize = 4;

    pub fn new(height: usize, width: usize, dx: f64) -> Result<Self> {
        Self::with_origin(height, width, dx, (0.0, 0.0))
    }

    pub fn with_origin(height: usize, width: usize, dx: f64, origin: (f64, f64)) -> Result<Self> {
        if height < Self::MIN_CELLS || width < Self::MIN_CELLS {
            return Err(Error::GridTooSmall { height, width });
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Validation(format!("grid spacing must be positive, got {dx}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            dx,
            origin,
        })
    }

    /// Square `length x length` domain centered on the physical origin,
    /// resolved by `cells x cells` cell-centered points.
    pub fn centered_square(cells: usize, length: f64) -> Result<Self> {
        let dx = length / cells as f64;
        let first = -0.5 * length + 0.5 * dx;
        Self::with_origin(cells, cells, dx, (first, first))
    }

    /// `[0, 2π)²` sampled at `x_j = j·2π/n`.
    pub fn periodic_square(cells: usize) -> Result<Self> {
        Self::new(cells, cells, 2.0 * std::f64::consts::PI / cells as f64)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, col: usize) -> f64 {
        self.origin.0 + col as f64 * self.dx
    }

    pub fn y(&self, row: usize) -> f64 {
        self.origin.1 + row as f64 * self.dx
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn is_boundary(&self, row: usize, col: usize) -> bool {
        row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width
    }

    /// Shape and spacing agree; origins are not compared.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.height == other.height && self.width == other.width && self.dx == other.dx
    }

    pub(crate) fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} (dx {}) vs {}x{} (dx {})",
                self.height, self.width, self.dx, other.height, other.width, other.dx
            )))
        }
    }
}

/// One scalar channel sampled on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
    units: String,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>, units: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid {}x{} needs {}",
                values.len(),
                grid.height,
                grid.width,
                grid.len()
            )));
        }
        ensure_finite(&values, || "field construction".into())?;
        Ok(Self {
            grid,
            values,
            units: units.into(),
        })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        assert!(value.is_finite(), "constant field value must be finite");
        Self {
            grid,
            values: vec![value; grid.len()],
            units: String::new(),
        }
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for row in 0..grid.height {
            let y = grid.y(row);
            for col in 0..grid.width {
                values.push(f(grid.x(col), y));
            }
        }
        Self::new(grid, values, "")
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    /// Pointwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Field::new(self.grid, values, self.units.clone())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid, "binary field operation")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::new(self.grid, values, self.units.clone())
    }

    pub fn transposed(&self) -> Result<Field> {
        let g = self.grid;
        let tg = GridSpec::with_origin(g.width, g.height, g.dx, (g.origin.1, g.origin.0))?;
        let mut values = vec![0.0; g.len()];
        for row in 0..g.height {
            for col in 0..g.width {
                values[tg.index(col, row)] = self.get(row, col);
            }
        }
        Field::new(tg, values, self.units.clone())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
    Abs,
}

/// Right-hand operand of [`elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Field(&'a Field),
    Scalar(f64),
}

pub fn elementwise(op: ElementwiseOp, a: &Field, b: Operand<'_>) -> Result<Field> {
    match (op, b) {
        (ElementwiseOp::Abs, _) => a.map(f64::abs),
        (ElementwiseOp::Add, Operand::Field(b)) => a.zip_with(b, |x, y| x + y),
        (ElementwiseOp::Sub, Operand::Field(b)) => a.zip_with(b, |x, y| x - y),
        (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Field(b)) => a.zip_with(b, |x, y| x * y),
        (ElementwiseOp::Add, Operand::Scalar(s)) => a.map(|x| x + s),
        (ElementwiseOp::Sub, Operand::Scalar(s)) => a.map(|x| x - s),
        (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Scalar(s)) => a.map(|x| x * s),
    }
}

pub fn add(a: &Field, b: &Field) -> Result<Field> {
    elementwise(ElementwiseOp::Add, a, Operand::Field(b))
}

pub fn sub(a: &Field, b: &Field) -> Result<Field> {
    elementwise(ElementwiseOp::Sub, a, Operand::Field(b))
}

pub fn mul(a: &Field, b: &Field) -> Result<Field> {
    elementwise(ElementwiseOp::Mul, a, Operand::Field(b))
}

pub fn scale(a: &Field, s: f64) -> Result<Field> {
    elementwise(ElementwiseOp::Scale, a, Operand::Scalar(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Max,
    Min,
    Sum,
}

pub fn reduce(op: Reduction, a: &Field) -> f64 {
    let v = a.values();
    match op {
        Reduction::Sum => v.iter().sum(),
        Reduction::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Reduction::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Reduction::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Replaces cells where `mask == 1` by `value`.
pub fn masked_fill(a: &Field, mask: &Field, value: f64) -> Result<Field> {
    a.grid.check_same(&mask.grid, "masked_fill")?;
    if let Some(bad) = mask.values.iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(Error::Validation(format!("mask must be binary, found {bad}")));
    }
    a.zip_with(mask, |v, m| if m == 1.0 { value } else { v })
}

/// Binary mask of cells whose centers satisfy `(x-cx)² + (y-cy)² <= radius²`.
pub fn disk_mask(grid: GridSpec, center: (f64, f64), radius: f64) -> Field {
    let r2 = radius * radius;
    Field::from_fn(grid, |x, y| {
        let (ddx, ddy) = (x - center.0, y - center.1);
        if ddx * ddx + ddy * ddy <= r2 {
            1.0
        } else {
            0.0
        }
    })
    .expect("mask values are finite")
    .with_units("mask")
}

pub const VELOCITY_NAMES: [&str; 2] = ["u_x", "u_y"];

/// Time-stamped multi-channel state: two velocity channels plus state channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    velocity: Vec<Field>,
    state: Vec<Field>,
    channel_names: Vec<String>,
}

impl Snapshot {
    /// `channel_names` lists the velocity names first, then the state names.
    pub fn new(t: f64, velocity: Vec<Field>, state: Vec<Field>, channel_names: Vec<String>) -> Result<Self> {
        if velocity.len() != 2 {
            return Err(Error::Shape(format!(
                "2D snapshots need exactly 2 velocity channels, got {}",
                velocity.len()
            )));
        }
        if channel_names.len() != velocity.len() + state.len() {
            return Err(Error::Shape(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                velocity.len() + state.len()
            )));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite {
                context: "snapshot time".into(),
            });
        }
        let grid = velocity[0].grid;
        for f in velocity.iter().chain(&state) {
            grid.check_same(&f.grid, "snapshot channels")?;
        }
        Ok(Self {
            t,
            velocity,
            state,
            channel_names,
        })
    }

    /// Velocity-only snapshot named `u_x`, `u_y`.
    pub fn velocity_only(t: f64, ux: Field, uy: Field) -> Result<Self> {
        Self::new(
            t,
            vec![ux, uy],
            Vec::new(),
            VELOCITY_NAMES.iter().map(|s| s.to_string()).collect(),
        )
    }

    /// Builds a snapshot from a flat channel list, the first two being velocity.
    pub fn from_channels(t: f64, mut channels: Vec<Field>, names: Vec<String>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::Shape("snapshot needs at least the two velocity channels".into()));
        }
        let state = channels.split_off(2);
        Self::new(t, channels, state, names)
    }

    pub fn grid(&self) -> &GridSpec {
        self.velocity[0].grid()
    }

    pub fn velocity(&self) -> &[Field] {
        &self.velocity
    }

    pub fn state(&self) -> &[Field] {
        &self.state
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channels(&self) -> impl Iterator<Item = &Field> {
        self.velocity.iter().chain(&self.state)
    }

    pub fn n_channels(&self) -> usize {
        self.velocity.len() + self.state.len()
    }

    pub fn channel(&self, name: &str) -> Option<&Field> {
        let idx = self.channel_names.iter().position(|n| n == name)?;
        self.channels().nth(idx)
    }

    /// Cellwise `sqrt(u_x² + u_y²)`.
    pub fn speed(&self) -> Field {
        self.velocity[0]
            .zip_with(&self.velocity[1], |a, b| a.hypot(b))
            .expect("velocity channels share a grid")
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn same_layout(&self, other: &Snapshot) -> bool {
        self.channel_names == other.channel_names && self.grid().same_shape(other.grid())
    }
}

/// Uniformly sampled sequence of snapshots with `t_k = t_0 + k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    snapshots: Vec<Snapshot>,
    dt: f64,
}

impl Trajectory {
    pub fn new(snapshots: Vec<Snapshot>, dt: f64) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Validation("trajectory needs at least one snapshot".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("trajectory dt must be positive, got {dt}")));
        }
        let t0 = snapshots[0].t;
        for (k, s) in snapshots.iter().enumerate() {
            if !s.same_layout(&snapshots[0]) {
                return Err(Error::Shape(format!("snapshot {k} has a different channel layout or grid")));
            }
            let expected = Self::time_at(t0, dt, k);
            let tol = 4.0 * f64::EPSILON * expected.abs().max(dt);
            if (s.t - expected).abs() > tol {
                return Err(Error::Validation(format!(
                    "snapshot {k} at t={} but uniform sampling expects {expected}",
                    s.t
                )));
            }
        }
        Ok(Self { snapshots, dt })
    }

    /// The sampling rule used everywhere for snapshot times.
    pub fn time_at(t0: f64, dt: f64, k: usize) -> f64 {
        t0 + k as f64 * dt
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<Snapshot> {
        self.snapshots
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn first(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory is non-empty")
    }

    pub fn grid(&self) -> &GridSpec {
        self.snapshots[0].grid()
    }

    pub fn channel_names(&self) -> &[String] {
        self.snapshots[0].channel_names()
    }

    /// Keeps the first `n` snapshots.
    pub fn truncated(&self, n: usize) -> Result<Trajectory> {
        Trajectory::new(self.snapshots[..n.min(self.len())].to_vec(), self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 1.0).unwrap()
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(matches!(GridSpec::new(3, 8, 1.0), Err(Error::GridTooSmall { .. })));
        assert!(GridSpec::new(8, 8, 0.0).is_err());
        assert!(GridSpec::new(8, 8, -1.0).is_err());
    }

    #[test]
    fn constant_arithmetic() {
        let g = grid(8);
        let one = Field::constant(g, 1.0);
        let two = Field::constant(g, 2.0);
        assert!(add(&one, &two).unwrap().values().iter().all(|&v| v == 3.0));
        assert!(scale(&two, 0.5).unwrap().values().iter().all(|&v| v == 1.0));
        let f = Field::from_fn(g, |x, y| x * 0.3 - y * y).unwrap();
        assert!(sub(&f, &f).unwrap().values().iter().all(|&v| v == 0.0));
        let abs = elementwise(ElementwiseOp::Abs, &f, Operand::Scalar(0.0)).unwrap();
        assert!(abs.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_mismatch_is_a_shape_error() {
        let a = Field::zeros(grid(8));
        let b = Field::zeros(grid(9));
        assert!(matches!(add(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn nan_is_rejected() {
        let g = grid(4);
        let f = Field::constant(g, 1.0);
        assert!(matches!(f.map(|v| v / 0.0 - v / 0.0), Err(Error::NonFinite { .. })));
        assert!(Field::new(g, vec![f64::NAN; 16], "").is_err());
    }

    #[test]
    fn reductions() {
        assert_eq!(reduce(Reduction::Mean, &Field::constant(grid(8), 3.0)), 3.0);
        assert_eq!(reduce(Reduction::Sum, &Field::constant(grid(4), 1.0)), 16.0);
        let g = grid(6);
        let mut v = vec![0.0; 36];
        v[17] = 5.0;
        let f = Field::new(g, v, "").unwrap();
        assert_eq!(reduce(Reduction::Max, &f), 5.0);
        assert_eq!(reduce(Reduction::Min, &f), 0.0);
    }

    #[test]
    fn masked_fill_cases() {
        let g = grid(6);
        let ones = Field::constant(g, 1.0);
        let filled = masked_fill(&ones, &ones, 0.0).unwrap();
        assert!(filled.values().iter().all(|&v| v == 0.0));

        let f = Field::from_fn(g, |x, y| x + 10.0 * y).unwrap();
        assert_eq!(masked_fill(&f, &Field::zeros(g), 9.0).unwrap(), f);

        let bad = Field::constant(g, 0.5);
        assert!(matches!(masked_fill(&f, &bad, 0.0), Err(Error::Validation(_))));
    }

    #[test]
    fn disk_mask_matches_rasterization_oracle() {
        let n = 64;
        let g = grid(n);
        let center = (31.5, 31.5);
        let radius = 16.0;
        let mask = disk_mask(g, center, radius);
        let f = Field::constant(g, 1.0);
        let filled = masked_fill(&f, &mask, 0.0).unwrap();
        let zeroed = filled.values().iter().filter(|&&v| v == 0.0).count();

        // Independent count of integer lattice cells inside the disk.
        let mut expected = 0;
        for i in 0..n {
            for j in 0..n {
                let dx = i as f64 - 31.5;
                let dy = j as f64 - 31.5;
                if dx * dx + dy * dy <= 256.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(zeroed, expected);
        let area = std::f64::consts::PI * radius * radius;
        let perimeter = 2.0 * std::f64::consts::PI * radius;
        assert!((zeroed as f64 - area).abs() <= perimeter);
    }

    #[test]
    fn trajectory_requires_uniform_times() {
        let g = grid(4);
        let snap = |t| Snapshot::velocity_only(t, Field::zeros(g), Field::zeros(g)).unwrap();
        assert!(Trajectory::new(vec![snap(0.0), snap(0.1), snap(0.2)], 0.1).is_ok());
        assert!(Trajectory::new(vec![snap(0.0), snap(0.1), snap(0.25)], 0.1).is_err());
    }

    #[test]
    fn snapshot_requires_two_velocity_channels() {
        let g = grid(4);
        let r = Snapshot::new(0.0, vec![Field::zeros(g)], vec![], vec!["u".into()]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
