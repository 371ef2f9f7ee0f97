//! Ground-truth data: 2D viscous Burgers by implicit time stepping, the
//! Gaussian initial condition and parameter sweeps, manufactured solutions,
//! and analytic Taylor–Green vortices.
//!
//! The Burgers solver advances `u_t = -u·∇u + (1/R)Δu` with backward Euler.
//! Each inner step is a Picard iteration: advection is evaluated at the
//! previous iterate with first-order upwind differences, and the implicit
//! diffusion system `(I - hνΔ)u = rhs` on the interior (zero Dirichlet ring)
//! is solved by conjugate gradients. Upwinding keeps the scheme monotone, so
//! the discrete solution obeys the maximum principle even at R = 15000 where
//! a centered scheme would oscillate.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::{Dataset, DatasetEntry, Split};
use crate::error::{Error, Result};
use crate::fdops::{self, StencilScheme};
use crate::fields::{Field, GridSpec, Snapshot, Trajectory};

pub const PICARD_TOLERANCE: f64 = 1e-10;
pub const PICARD_MAX_ITERATIONS: usize = 50;
const CG_TOLERANCE: f64 = 1e-13;
const CG_MAX_ITERATIONS: usize = 1000;

pub const VELOCITY_UNITS: &str = "cm/s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersConfig {
    /// Diffusion parameter; the viscosity is `1/r`.
    pub r: f64,
    pub a: f64,
    pub w: f64,
    pub grid: GridSpec,
    pub dt_out: f64,
    pub steps_out: usize,
    pub substeps: usize,
    /// Disabling advection leaves the pure heat equation, used to verify
    /// the diffusion solve in isolation.
    pub advection: bool,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            r: 1000.0,
            a: 0.9,
            w: 1.0,
            grid: GridSpec::centered_square(64, 6.0).expect("64x64 is a valid grid"),
            dt_out: 0.02,
            steps_out: 100,
            substeps: 15,
            advection: true,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("R", self.r), ("a", self.a), ("w", self.w), ("dt_out", self.dt_out)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("Burgers {name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Validation("Burgers substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn viscosity(&self) -> f64 {
        1.0 / self.r
    }

    /// Inner backward-Euler step size.
    pub fn h(&self) -> f64 {
        self.dt_out / self.substeps as f64
    }
}

/// `u = v = a·exp(-‖r‖²/w)` about the domain center, zero on the boundary ring.
pub fn gaussian_ic(cfg: &BurgersConfig) -> Result<Snapshot> {
    cfg.validate()?;
    let g = cfg.grid;
    let cx = g.origin.0 + 0.5 * (g.width - 1) as f64 * g.dx;
    let cy = g.origin.1 + 0.5 * (g.height - 1) as f64 * g.dx;
    let mut values = vec![0.0; g.len()];
    for row in 1..g.height - 1 {
        for col in 1..g.width - 1 {
            let (dx, dy) = (g.x(col) - cx, g.y(row) - cy);
            values[g.index(row, col)] = cfg.a * (-(dx * dx + dy * dy) / cfg.w).exp();
        }
    }
    let u = Field::new(g, values, VELOCITY_UNITS)?;
    Snapshot::velocity_only(0.0, u.clone(), u)
}

/// Scratch state for repeated backward-Euler steps on one grid.
struct BurgersSolver {
    height: usize,
    width: usize,
    dx: f64,
    h: f64,
    /// `hν/dx²`
    alpha: f64,
    advection: bool,
    // CG vectors
    r: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl BurgersSolver {
    fn new(cfg: &BurgersConfig) -> Self {
        let g = cfg.grid;
        let h = cfg.h();
        Self {
            height: g.height,
            width: g.width,
            dx: g.dx,
            h,
            alpha: h * cfg.viscosity() / (g.dx * g.dx),
            advection: cfg.advection,
            r: vec![0.0; g.len()],
            p: vec![0.0; g.len()],
            q: vec![0.0; g.len()],
        }
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        let w = self.width;
        (1..self.height - 1).flat_map(move |row| (1..w - 1).map(move |col| row * w + col))
    }

    /// `out = (I - hνΔ)x` on the interior, zero on the ring.
    fn helmholtz(&self, x: &[f64], out: &mut [f64]) {
        let w = self.width;
        out.fill(0.0);
        for i in self.interior() {
            let nb = x[i - 1] + x[i + 1] + x[i - w] + x[i + w];
            out[i] = (1.0 + 4.0 * self.alpha) * x[i] - self.alpha * nb;
        }
    }

    /// First-order upwind `u ∂φ/∂x + v ∂φ/∂y` on the interior.
    fn advect(&self, u: &[f64], v: &[f64], phi: &[f64], out: &mut [f64]) {
        let w = self.width;
        out.fill(0.0);
        if !self.advection {
            return;
        }
        for i in self.interior() {
            let dfx = if u[i] > 0.0 { phi[i] - phi[i - 1] } else { phi[i + 1] - phi[i] };
            let dfy = if v[i] > 0.0 { phi[i] - phi[i - w] } else { phi[i + w] - phi[i] };
            out[i] = (u[i] * dfx + v[i] * dfy) / self.dx;
        }
    }

    /// Solves `(I - hνΔ)x = b` by conjugate gradients, warm-started from `x`.
    fn solve(&mut self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let mut q = std::mem::take(&mut self.q);
        self.helmholtz(x, &mut q);
        for i in 0..b.len() {
            self.r[i] = b[i] - q[i];
        }
        for i in 0..self.height * self.width {
            let (row, col) = (i / self.width, i % self.width);
            if row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width {
                self.r[i] = 0.0;
            }
        }
        self.p.copy_from_slice(&self.r);
        let mut rr: f64 = self.r.iter().map(|v| v * v).sum();
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut iterations = 0;
        loop {
            let res = self.r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if res <= CG_TOLERANCE * scale {
                break;
            }
            if iterations == CG_MAX_ITERATIONS {
                self.q = q;
                return Err(Error::Solver {
                    context: "conjugate-gradient diffusion solve".into(),
                    iterations,
                    residual: res,
                });
            }
            self.helmholtz(&self.p, &mut q);
            let pq: f64 = self.p.iter().zip(&q).map(|(a, b)| a * b).sum();
            let step = rr / pq;
            for i in 0..x.len() {
                x[i] += step * self.p[i];
                self.r[i] -= step * q[i];
            }
            let rr_new: f64 = self.r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..x.len() {
                self.p[i] = self.r[i] + beta * self.p[i];
            }
            iterations += 1;
        }
        self.q = q;
        Ok(())
    }

    /// One backward-Euler step of both velocity components in place.
    fn step(&mut self, u: &mut Vec<f64>, v: &mut Vec<f64>) -> Result<()> {
        let n = u.len();
        let (un, vn) = (u.clone(), v.clone());
        let mut adv_u = vec![0.0; n];
        let mut adv_v = vec![0.0; n];
        let mut rhs_u = vec![0.0; n];
        let mut rhs_v = vec![0.0; n];
        let mut mu = vec![0.0; n];
        self.advect(u, v, u, &mut adv_u);
        self.advect(u, v, v, &mut adv_v);
        let mut residual = f64::INFINITY;
        for iteration in 1..=PICARD_MAX_ITERATIONS {
            for i in 0..n {
                rhs_u[i] = un[i] - self.h * adv_u[i];
                rhs_v[i] = vn[i] - self.h * adv_v[i];
            }
            self.solve(&rhs_u, u)?;
            self.solve(&rhs_v, v)?;

            // Nonlinear residual of the backward-Euler equations at the new iterate.
            self.advect(u, v, u, &mut adv_u);
            self.advect(u, v, v, &mut adv_v);
            residual = 0.0;
            for (x, xn, adv) in [(&*u, &un, &adv_u), (&*v, &vn, &adv_v)] {
                self.helmholtz(x, &mut mu);
                for i in self.interior() {
                    residual = residual.max((mu[i] - xn[i] + self.h * adv[i]).abs());
                }
            }
            if !residual.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("Burgers Picard iteration {iteration}"),
                });
            }
            if residual <= PICARD_TOLERANCE {
                return Ok(());
            }
        }
        Err(Error::Solver {
            context: "Picard iteration for backward-Euler Burgers step".into(),
            iterations: PICARD_MAX_ITERATIONS,
            residual,
        })
    }
}

fn check_state(state: &Snapshot, cfg: &BurgersConfig) -> Result<()> {
    cfg.validate()?;
    cfg.grid.check_same(state.grid(), "Burgers state")?;
    if !state.state().is_empty() {
        return Err(Error::Shape("Burgers snapshots carry velocity channels only".into()));
    }
    Ok(())
}

fn velocity_snapshot(t: f64, grid: GridSpec, u: Vec<f64>, v: Vec<f64>) -> Result<Snapshot> {
    Snapshot::velocity_only(t, Field::new(grid, u, VELOCITY_UNITS)?, Field::new(grid, v, VELOCITY_UNITS)?)
}

/// Advances one inner backward-Euler substep of size `dt_out / substeps`.
pub fn step_burgers(state: &Snapshot, cfg: &BurgersConfig) -> Result<Snapshot> {
    check_state(state, cfg)?;
    let mut solver = BurgersSolver::new(cfg);
    let mut u = state.velocity()[0].values().to_vec();
    let mut v = state.velocity()[1].values().to_vec();
    solver.step(&mut u, &mut v)?;
    velocity_snapshot(state.t + cfg.h(), *state.grid(), u, v)
}

/// Runs `steps_out` output intervals from `initial`, each of `substeps`
/// inner steps, and returns every output snapshot including the first.
pub fn integrate_burgers(initial: &Snapshot, cfg: &BurgersConfig) -> Result<Trajectory> {
    check_state(initial, cfg)?;
    let grid = *initial.grid();
    let mut solver = BurgersSolver::new(cfg);
    let mut u = initial.velocity()[0].values().to_vec();
    let mut v = initial.velocity()[1].values().to_vec();
    let mut snapshots = Vec::with_capacity(cfg.steps_out + 1);
    snapshots.push(initial.clone());
    for k in 1..=cfg.steps_out {
        for _ in 0..cfg.substeps {
            solver.step(&mut u, &mut v)?;
        }
        let t = Trajectory::time_at(initial.t, cfg.dt_out, k);
        snapshots.push(velocity_snapshot(t, grid, u.clone(), v.clone())?);
    }
    Trajectory::new(snapshots, cfg.dt_out)
}

/// Gaussian initial condition followed by `steps_out` output steps.
pub fn generate_trajectory(cfg: &BurgersConfig) -> Result<Trajectory> {
    integrate_burgers(&gaussian_ic(cfg)?, cfg)
}

/// Parameter lists whose Cartesian product defines a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepParams {
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub w: Vec<f64>,
}

impl SweepParams {
    /// The published training or test grid of Burgers constants.
    pub fn table3(split: Split) -> Self {
        match split {
            Split::Test => Self {
                r: vec![100.0, 500.0, 3000.0, 6500.0, 12500.0, 15000.0],
                a: vec![0.35, 0.40, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95, 1.00],
                w: vec![0.55, 0.6, 0.65, 0.75, 0.85, 0.95, 1.05],
            },
            Split::Train | Split::Validation => Self {
                r: vec![1000.0, 2500.0, 5000.0, 7500.0, 10000.0],
                a: vec![0.5, 0.6, 0.7, 0.8, 0.9],
                w: vec![0.7, 0.8, 0.9, 1.0],
            },
        }
    }

    /// `(R, a, w)` triples in R-major order.
    pub fn combinations(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.r.len() * self.a.len() * self.w.len());
        for &r in &self.r {
            for &a in &self.a {
                for &w in &self.w {
                    out.push((r, a, w));
                }
            }
        }
        out
    }
}

/// One trajectory per `(R, a, w)` combination, generated in parallel. `base`
/// supplies the grid, output step and substep count.
pub fn sweep_dataset(params: &SweepParams, split: Split, base: &BurgersConfig) -> Result<Dataset> {
    if params.r.is_empty() || params.a.is_empty() || params.w.is_empty() {
        return Err(Error::Validation("sweep parameter lists must be non-empty".into()));
    }
    let entries = params
        .combinations()
        .into_par_iter()
        .map(|(r, a, w)| {
            let cfg = BurgersConfig { r, a, w, ..*base };
            let trajectory = generate_trajectory(&cfg)?;
            let constants = BTreeMap::from([("R".to_string(), r), ("a".to_string(), a), ("w".to_string(), w)]);
            Ok(DatasetEntry {
                constants,
                split,
                trajectory,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entries)
}

/// An analytic velocity field (and optionally pressure) used to verify the
/// pipeline by the method of manufactured solutions.
pub trait Manufactured: Sync {
    fn velocity(&self, x: f64, y: f64, t: f64) -> (f64, f64);
    fn velocity_dt(&self, x: f64, y: f64, t: f64) -> (f64, f64);
    fn pressure(&self, _x: f64, _y: f64, _t: f64) -> Option<f64> {
        None
    }
    fn density(&self) -> f64 {
        1.0
    }
}

/// A time-independent field given by a closure.
pub struct SteadyFlow<F>(pub F);

impl<F: Fn(f64, f64) -> (f64, f64) + Sync> Manufactured for SteadyFlow<F> {
    fn velocity(&self, x: f64, y: f64, _t: f64) -> (f64, f64) {
        (self.0)(x, y)
    }

    fn velocity_dt(&self, _x: f64, _y: f64, _t: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Spatially uniform `(amplitude·e^{-t}, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct UniformDecay {
    pub amplitude: f64,
}

impl Manufactured for UniformDecay {
    fn velocity(&self, _x: f64, _y: f64, t: f64) -> (f64, f64) {
        (self.amplitude * (-t).exp(), 0.0)
    }

    fn velocity_dt(&self, _x: f64, _y: f64, t: f64) -> (f64, f64) {
        (-self.amplitude * (-t).exp(), 0.0)
    }
}

/// Decaying Taylor–Green vortex on `[0, 2π)²`, an exact Navier–Stokes solution:
/// `u = (-cos x sin y, sin x cos y)·e^{-2νt}`, `p = -(ρ/4)(cos 2x + cos 2y)·e^{-4νt}`.
#[derive(Clone, Copy, Debug)]
pub struct TaylorGreen {
    pub nu: f64,
    pub rho: f64,
}

impl TaylorGreen {
    /// Convective acceleration `u·∇u`.
    pub fn convective(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let d = (-4.0 * self.nu * t).exp();
        (-0.5 * (2.0 * x).sin() * d, -0.5 * (2.0 * y).sin() * d)
    }
}

impl Manufactured for TaylorGreen {
    fn velocity(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let d = (-2.0 * self.nu * t).exp();
        (-x.cos() * y.sin() * d, x.sin() * y.cos() * d)
    }

    fn velocity_dt(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (u, v) = self.velocity(x, y, t);
        (-2.0 * self.nu * u, -2.0 * self.nu * v)
    }

    fn pressure(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        Some(-0.25 * self.rho * ((2.0 * x).cos() + (2.0 * y).cos()) * (-4.0 * self.nu * t).exp())
    }

    fn density(&self) -> f64 {
        self.rho
    }
}

fn sample(grid: GridSpec, f: impl Fn(f64, f64) -> f64, units: &str) -> Result<Field> {
    Ok(Field::from_fn(grid, f)?.with_units(units))
}

/// Sampled manufactured trajectory with the forcing that makes it an exact
/// solution of `u_t = -u·∇u + kΔu - (1/ρ)∇p + R_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct MmsTrajectory {
    pub trajectory: Trajectory,
    /// `R_u = u_t + u·∇u - kΔu + (1/ρ)∇p` per snapshot, `[x, y]` components;
    /// the pressure term is present only if the solution defines a pressure.
    pub forcing: Vec<[Field; 2]>,
    pub diffusivity: f64,
}

/// Samples `m` at `t_k = k·dt` for `k = 0..=steps`. Time derivatives are
/// analytic; spatial terms use the metric stencils, so the forcing is exact
/// up to spatial truncation error.
pub fn mms_trajectory(grid: GridSpec, dt: f64, steps: usize, m: &dyn Manufactured, k: f64) -> Result<MmsTrajectory> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::Validation(format!("diffusivity must be non-negative, got {k}")));
    }
    let scheme = StencilScheme::METRIC;
    let mut snapshots = Vec::with_capacity(steps + 1);
    let mut forcing = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let t = Trajectory::time_at(0.0, dt, step);
        let u = sample(grid, |x, y| m.velocity(x, y, t).0, VELOCITY_UNITS)?;
        let v = sample(grid, |x, y| m.velocity(x, y, t).1, VELOCITY_UNITS)?;
        let ut = sample(grid, |x, y| m.velocity_dt(x, y, t).0, "")?;
        let vt = sample(grid, |x, y| m.velocity_dt(x, y, t).1, "")?;
        let pressure_grad = match m.pressure(grid.x(0), grid.y(0), t) {
            Some(_) => {
                let p = sample(grid, |x, y| m.pressure(x, y, t).unwrap_or(0.0), "")?;
                Some(fdops::gradient(&p, scheme)?)
            }
            None => None,
        };
        let mut parts = Vec::with_capacity(2);
        for (c, (comp, comp_t)) in [(&u, &ut), (&v, &vt)].into_iter().enumerate() {
            let adv = fdops::advect((&u, &v), comp, scheme)?;
            let lap = fdops::laplacian(comp, scheme)?;
            let mut values: Vec<f64> = (0..grid.len())
                .map(|i| comp_t.values()[i] + adv.values()[i] - k * lap.values()[i])
                .collect();
            if let Some((px, py)) = &pressure_grad {
                let g = if c == 0 { px } else { py };
                let inv_rho = 1.0 / m.density();
                for (out, gp) in values.iter_mut().zip(g.values()) {
                    *out += inv_rho * gp;
                }
            }
            parts.push(Field::new(grid, values, "")?);
        }
        let fy = parts.pop().expect("two components");
        let fx = parts.pop().expect("two components");
        forcing.push([fx, fy]);
        snapshots.push(Snapshot::velocity_only(t, u, v)?);
    }
    Ok(MmsTrajectory {
        trajectory: Trajectory::new(snapshots, dt)?,
        forcing,
        diffusivity: k,
    })
}

/// Taylor–Green velocity and pressure on `grid` at time `t`, with channels
/// `u_x`, `u_y`, `p`.
pub fn taylor_green(grid: GridSpec, nu: f64, rho: f64, t: f64) -> Result<Snapshot> {
    if !(nu >= 0.0 && rho > 0.0) {
        return Err(Error::Validation(format!("Taylor-Green needs nu >= 0 and rho > 0, got {nu}, {rho}")));
    }
    let tg = TaylorGreen { nu, rho };
    let u = sample(grid, |x, y| tg.velocity(x, y, t).0, "m/s")?;
    let v = sample(grid, |x, y| tg.velocity(x, y, t).1, "m/s")?;
    let p = sample(grid, |x, y| tg.pressure(x, y, t).unwrap_or(0.0), "Pa")?;
    Snapshot::new(t, vec![u, v], vec![p], vec!["u_x".into(), "u_y".into(), "p".into()])
}

/// Taylor–Green snapshots at `t_k = k·dt`.
pub fn taylor_green_trajectory(grid: GridSpec, nu: f64, rho: f64, dt: f64, steps: usize) -> Result<Trajectory> {
    let snaps = (0..=steps)
        .map(|k| taylor_green(grid, nu, rho, Trajectory::time_at(0.0, dt, k)))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(snaps, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small(n: usize) -> BurgersConfig {
        BurgersConfig {
            grid: GridSpec::centered_square(n, 6.0).unwrap(),
            ..BurgersConfig::default()
        }
    }

    #[test]
    fn default_geometry() {
        let c = BurgersConfig::default();
        assert_eq!((c.grid.height, c.grid.width), (64, 64));
        assert_eq!(c.grid.dx * 64.0, 6.0);
        assert_eq!((c.dt_out, c.steps_out, c.substeps), (0.02, 100, 15));
    }

    #[test]
    fn rejects_invalid_config() {
        for bad in [
            BurgersConfig { r: 0.0, ..small(8) },
            BurgersConfig { a: -1.0, ..small(8) },
            BurgersConfig { w: f64::NAN, ..small(8) },
            BurgersConfig { substeps: 0, ..small(8) },
        ] {
            assert!(matches!(gaussian_ic(&bad), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn gaussian_ic_values() {
        let cfg = BurgersConfig { a: 0.5, w: 1.0, ..BurgersConfig::default() };
        let ic = gaussian_ic(&cfg).unwrap();
        let g = cfg.grid;
        let dx = g.dx;
        let expect = 0.5 * (-(dx / 2.0) * (dx / 2.0) * 2.0 / 1.0f64).exp();
        for (row, col) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
            for c in ic.velocity() {
                assert!((c.get(row, col) - expect).abs() < 1e-15);
            }
        }
        for row in 0..g.height {
            for col in 0..g.width {
                if g.is_boundary(row, col) {
                    assert_eq!(ic.velocity()[0].get(row, col), 0.0);
                    assert_eq!(ic.velocity()[1].get(row, col), 0.0);
                }
            }
        }
        // ‖r‖² = w at the formula level
        assert!((0.5 * (-1.0f64).exp() - 0.18394).abs() < 1e-5);
    }

    #[test]
    fn zero_field_is_a_fixed_point() {
        let cfg = small(16);
        let z = Field::zeros(cfg.grid);
        let s = Snapshot::velocity_only(0.0, z.clone(), z).unwrap();
        let next = step_burgers(&s, &cfg).unwrap();
        assert!(next.velocity().iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
        assert!((next.t - cfg.h()).abs() < 1e-18);
    }

    #[test]
    fn pure_diffusion_decays_like_the_discrete_eigenmode() {
        let cfg = BurgersConfig {
            r: 50.0,
            advection: false,
            ..small(24)
        };
        let g = cfg.grid;
        let len = (g.width - 1) as f64 * g.dx;
        let mode = Field::from_fn(g, |x, y| (PI * (x - g.origin.0) / len).sin() * (PI * (y - g.origin.1) / len).sin()).unwrap();
        // exact zeros on the ring
        let mode = Field::new(
            g,
            (0..g.len())
                .map(|i| if g.is_boundary(i / g.width, i % g.width) { 0.0 } else { mode.values()[i] })
                .collect(),
            "",
        )
        .unwrap();
        let s = Snapshot::velocity_only(0.0, mode.clone(), mode.clone()).unwrap();
        let next = step_burgers(&s, &cfg).unwrap();

        let h = cfg.h();
        let nu = cfg.viscosity();
        let lambda = 8.0 / (g.dx * g.dx) * (PI * g.dx / (2.0 * len)).sin().powi(2);
        let factor = 1.0 / (1.0 + h * nu * lambda);
        for (a, b) in next.velocity()[0].values().iter().zip(mode.values()) {
            assert!((a - factor * b).abs() <= 1e-12, "{a} vs {}", factor * b);
        }
        // the discrete eigenvalue approaches the continuous 2π²/L²
        let continuous = 1.0 / (1.0 + h * (2.0 * PI * PI / (len * len)) / cfg.r);
        assert!((factor - continuous).abs() < 1e-6);
    }

    #[test]
    fn one_output_step_respects_maximum_principle() {
        let cfg = BurgersConfig {
            steps_out: 1,
            ..BurgersConfig::default()
        };
        let traj = generate_trajectory(&cfg).unwrap();
        let m0 = traj.first().velocity()[0].max_abs();
        let m1 = traj.last().velocity()[0].max_abs();
        assert!(m1 <= m0, "{m1} > {m0}");
    }

    #[test]
    fn zero_output_steps_is_just_the_ic() {
        let cfg = BurgersConfig { steps_out: 0, ..small(8) };
        let traj = generate_trajectory(&cfg).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.first(), &gaussian_ic(&cfg).unwrap());
    }

    #[test]
    fn output_times_are_exact() {
        let cfg = BurgersConfig { steps_out: 5, ..small(12) };
        let traj = generate_trajectory(&cfg).unwrap();
        for (k, s) in traj.snapshots().iter().enumerate() {
            assert_eq!(s.t, Trajectory::time_at(0.0, 0.02, k));
        }
    }

    #[test]
    fn sweep_sizes() {
        let train = SweepParams::table3(Split::Train);
        assert_eq!(train.combinations().len(), 100);
        let test = SweepParams::table3(Split::Test);
        assert_eq!((test.r.len(), test.a.len(), test.w.len()), (6, 9, 7));

        let one = SweepParams { r: vec![500.0], a: vec![0.5], w: vec![0.8] };
        let base = BurgersConfig { steps_out: 2, ..small(8) };
        let ds = sweep_dataset(&one, Split::Test, &base).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.entries()[0].constants["R"], 500.0);
        assert_eq!(ds.entries()[0].split, Split::Test);
        let empty = SweepParams { r: vec![], ..one };
        assert!(sweep_dataset(&empty, Split::Train, &base).is_err());
    }

    #[test]
    fn mms_constant_in_time_has_only_spatial_forcing() {
        let g = GridSpec::new(10, 10, 0.2).unwrap();
        let k = 0.3;
        let flow = SteadyFlow(|x: f64, y: f64| (x * x, x * y));
        let mms = mms_trajectory(g, 0.1, 2, &flow, k).unwrap();
        let s = &mms.trajectory.snapshots()[1];
        let (u, v) = (&s.velocity()[0], &s.velocity()[1]);
        let expect = fdops::advect((u, v), u, StencilScheme::METRIC).unwrap();
        let lap = fdops::laplacian(u, StencilScheme::METRIC).unwrap();
        for i in 0..g.len() {
            let e = expect.values()[i] - k * lap.values()[i];
            assert!((mms.forcing[1][0].values()[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mms_uniform_decay_forcing() {
        let g = GridSpec::new(6, 6, 0.5).unwrap();
        let mms = mms_trajectory(g, 0.1, 3, &UniformDecay { amplitude: 1.0 }, 0.01).unwrap();
        for (k, f) in mms.forcing.iter().enumerate() {
            let t = 0.1 * k as f64;
            for (&fx, &fy) in f[0].values().iter().zip(f[1].values()) {
                assert!((fx + (-t).exp()).abs() < 1e-14);
                assert_eq!(fy, 0.0);
            }
        }
    }

    #[test]
    fn mms_taylor_green_forcing_is_small() {
        let g = GridSpec::periodic_square(64).unwrap();
        let nu = 0.01;
        let mms = mms_trajectory(g, 0.05, 2, &TaylorGreen { nu, rho: 1.0 }, nu).unwrap();
        for f in &mms.forcing {
            let mean = f[0].values().iter().chain(f[1].values()).map(|v| v.abs()).sum::<f64>() / (2 * g.len()) as f64;
            assert!(mean <= 2e-3, "mean |forcing| {mean}");
        }
    }

    #[test]
    fn taylor_green_point_values_and_energy() {
        let n = 16;
        let g = GridSpec::periodic_square(n).unwrap();
        let s = taylor_green(g, 0.1, 1.0, 0.0).unwrap();
        // x = π/2 is column n/4, y = 0 is row 0
        assert!(s.velocity()[0].get(0, n / 4).abs() < 1e-15);
        assert!((s.velocity()[1].get(0, n / 4) - 1.0).abs() < 1e-15);

        let energy = |s: &Snapshot| {
            s.velocity()[0]
                .values()
                .iter()
                .zip(s.velocity()[1].values())
                .map(|(u, v)| 0.5 * (u * u + v * v))
                .sum::<f64>()
                / g.len() as f64
        };
        let (nu, t) = (0.1, 0.7);
        let later = taylor_green(g, nu, 1.0, t).unwrap();
        assert!((energy(&later) / energy(&s) - (-4.0 * nu * t).exp()).abs() < 1e-13);
    }

    #[test]
    fn taylor_green_pressure_balances_convection() {
        let tg = TaylorGreen { nu: 0.0, rho: 3.0 };
        let (x, y, t, e) = (0.4, 1.3, 0.0, 1e-6);
        let dpdx = (tg.pressure(x + e, y, t).unwrap() - tg.pressure(x - e, y, t).unwrap()) / (2.0 * e);
        let dpdy = (tg.pressure(x, y + e, t).unwrap() - tg.pressure(x, y - e, t).unwrap()) / (2.0 * e);
        let (cx, cy) = tg.convective(x, y, t);
        assert!((cx + dpdx / tg.rho).abs() < 1e-8);
        assert!((cy + dpdy / tg.rho).abs() < 1e-8);
    }
}
