//! Second-order finite-difference operators on uniform grids.
//!
//! Every operator is built from 1D taps along a grid line, so the same tap
//! tables give the forward stencil, its exact transpose (used by the autodiff
//! engine) and the obstacle-aware variants used by the metrics.

use crate::error::{Error, Result};
use crate::fields::{Field, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interior {
    Central2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Second-order one-sided differences at the edge.
    OneSided2,
    /// Replicate padding: edge gradients copy the adjacent interior value,
    /// edge second derivatives see a ghost cell equal to the edge cell.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StencilScheme {
    pub interior: Interior,
    pub boundary: Boundary,
}

impl StencilScheme {
    /// Scheme used by evaluation metrics.
    pub const METRIC: StencilScheme = StencilScheme {
        interior: Interior::Central2,
        boundary: Boundary::OneSided2,
    };
    /// Scheme used inside the differentiator, matching conv replicate padding.
    pub const NETWORK: StencilScheme = StencilScheme {
        interior: Interior::Central2,
        boundary: Boundary::Replicate,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Order {
    First,
    Second,
}

/// At most four `(offset index, weight)` pairs along a line; weights exclude
/// the `1/dx` or `1/dx²` factor.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    len: usize,
}

impl Taps {
    fn from(pairs: &[(usize, f64)]) -> Self {
        let mut t = Taps::default();
        for &(i, w) in pairs {
            t.idx[t.len] = i;
            t.w[t.len] = w;
            t.len += 1;
        }
        t
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len].iter().copied().zip(self.w[..self.len].iter().copied())
    }
}

/// First-derivative taps at position `i` of a line of length `n`. `open(j)`
/// says whether cell `j` may be read (always true without an obstacle mask).
pub(crate) fn first_taps(n: usize, i: usize, boundary: Boundary, open: &dyn Fn(usize) -> bool) -> Taps {
    let has = |off: isize| -> bool {
        let j = i as isize + off;
        j >= 0 && (j as usize) < n && open(j as usize)
    };
    if boundary == Boundary::Replicate {
        let c = i.clamp(1, n - 2);
        return Taps::from(&[(c + 1, 0.5), (c - 1, -0.5)]);
    }
    if has(-1) && has(1) {
        Taps::from(&[(i + 1, 0.5), (i - 1, -0.5)])
    } else if has(1) && has(2) {
        Taps::from(&[(i, -1.5), (i + 1, 2.0), (i + 2, -0.5)])
    } else if has(-1) && has(-2) {
        Taps::from(&[(i, 1.5), (i - 1, -2.0), (i - 2, 0.5)])
    } else if has(1) {
        Taps::from(&[(i + 1, 1.0), (i, -1.0)])
    } else if has(-1) {
        Taps::from(&[(i, 1.0), (i - 1, -1.0)])
    } else {
        Taps::default()
    }
}

/// Second-derivative taps, same conventions as [`first_taps`].
pub(crate) fn second_taps(n: usize, i: usize, boundary: Boundary, open: &dyn Fn(usize) -> bool) -> Taps {
    let has = |off: isize| -> bool {
        let j = i as isize + off;
        j >= 0 && (j as usize) < n && open(j as usize)
    };
    if boundary == Boundary::Replicate {
        return if i == 0 {
            Taps::from(&[(1, 1.0), (0, -1.0)])
        } else if i == n - 1 {
            Taps::from(&[(n - 2, 1.0), (n - 1, -1.0)])
        } else {
            Taps::from(&[(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)])
        };
    }
    if has(-1) && has(1) {
        Taps::from(&[(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)])
    } else if has(1) && has(2) && has(3) {
        Taps::from(&[(i, 2.0), (i + 1, -5.0), (i + 2, 4.0), (i + 3, -1.0)])
    } else if has(-1) && has(-2) && has(-3) {
        Taps::from(&[(i, 2.0), (i - 1, -5.0), (i - 2, 4.0), (i - 3, -1.0)])
    } else if has(1) && has(2) {
        Taps::from(&[(i, 1.0), (i + 1, -2.0), (i + 2, 1.0)])
    } else if has(-1) && has(-2) {
        Taps::from(&[(i, 1.0), (i - 1, -2.0), (i - 2, 1.0)])
    } else {
        Taps::default()
    }
}

/// A linear 1D derivative applied along every line of a `height x width`
/// raw buffer. Used directly by the autodiff stencil nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineStencil {
    pub axis: Axis,
    pub order: Order,
    pub boundary: Boundary,
    pub dx: f64,
}

impl LineStencil {
    fn factor(&self) -> f64 {
        match self.order {
            Order::First => 1.0 / self.dx,
            Order::Second => 1.0 / (self.dx * self.dx),
        }
    }

    /// Visits every `(out, in, weight)` contribution, honouring an optional
    /// obstacle mask (`true` = blocked). Blocked cells produce no output.
    fn for_each_tap(&self, height: usize, width: usize, mask: Option<&[bool]>, mut visit: impl FnMut(usize, usize, f64)) {
        let fac = self.factor();
        let (lines, n, line_stride, step) = match self.axis {
            Axis::X => (height, width, width, 1),
            Axis::Y => (width, height, 1, width),
        };
        for line in 0..lines {
            let base = line * line_stride;
            for i in 0..n {
                let out = base + i * step;
                if mask.is_some_and(|m| m[out]) {
                    continue;
                }
                let open = |j: usize| mask.is_none_or(|m| !m[base + j * step]);
                let taps = match self.order {
                    Order::First => first_taps(n, i, self.boundary, &open),
                    Order::Second => second_taps(n, i, self.boundary, &open),
                };
                for (j, w) in taps.iter() {
                    visit(out, base + j * step, w * fac);
                }
            }
        }
    }

    pub fn apply(&self, input: &[f64], height: usize, width: usize) -> Vec<f64> {
        self.apply_masked(input, height, width, None)
    }

    pub fn apply_masked(&self, input: &[f64], height: usize, width: usize, mask: Option<&[bool]>) -> Vec<f64> {
        let mut out = vec![0.0; height * width];
        self.for_each_tap(height, width, mask, |o, i, w| out[o] += w * input[i]);
        out
    }

    /// Accumulates `Lᵀ · grad_out` into `grad_in`.
    pub fn apply_transpose_into(&self, grad_out: &[f64], height: usize, width: usize, grad_in: &mut [f64]) {
        self.for_each_tap(height, width, None, |o, i, w| grad_in[i] += w * grad_out[o]);
    }
}

fn check_grid(g: &GridSpec) -> Result<()> {
    if g.height < GridSpec::MIN_CELLS || g.width < GridSpec::MIN_CELLS {
        Err(Error::GridTooSmall {
            height: g.height,
            width: g.width,
        })
    } else {
        Ok(())
    }
}

fn line_op(f: &Field, axis: Axis, order: Order, boundary: Boundary, mask: Option<&[bool]>) -> Result<Field> {
    let g = f.grid();
    check_grid(g)?;
    let st = LineStencil {
        axis,
        order,
        boundary,
        dx: g.dx,
    };
    Field::new(*g, st.apply_masked(f.values(), g.height, g.width, mask), "")
}

pub fn derivative(f: &Field, axis: Axis, scheme: StencilScheme) -> Result<Field> {
    line_op(f, axis, Order::First, scheme.boundary, None)
}

/// `(∂f/∂x, ∂f/∂y)`.
pub fn gradient(f: &Field, scheme: StencilScheme) -> Result<(Field, Field)> {
    Ok((derivative(f, Axis::X, scheme)?, derivative(f, Axis::Y, scheme)?))
}

/// Five-point Laplacian; the boundary treatment follows `scheme.boundary`.
pub fn laplacian(f: &Field, scheme: StencilScheme) -> Result<Field> {
    let xx = line_op(f, Axis::X, Order::Second, scheme.boundary, None)?;
    let yy = line_op(f, Axis::Y, Order::Second, scheme.boundary, None)?;
    crate::fields::add(&xx, &yy)
}

/// `u_x ∂f/∂x + u_y ∂f/∂y`.
pub fn advect(u: (&Field, &Field), f: &Field, scheme: StencilScheme) -> Result<Field> {
    f.grid().check_same(u.0.grid(), "advect")?;
    f.grid().check_same(u.1.grid(), "advect")?;
    let (gx, gy) = gradient(f, scheme)?;
    let values = (0..f.values().len())
        .map(|i| u.0.values()[i] * gx.values()[i] + u.1.values()[i] * gy.values()[i])
        .collect();
    Field::new(*f.grid(), values, "")
}

/// `∂u_x/∂x + ∂u_y/∂y`.
pub fn divergence(u: (&Field, &Field), scheme: StencilScheme) -> Result<Field> {
    u.0.grid().check_same(u.1.grid(), "divergence")?;
    let a = derivative(u.0, Axis::X, scheme)?;
    let b = derivative(u.1, Axis::Y, scheme)?;
    crate::fields::add(&a, &b)
}

/// Obstacle-aware stencils: no tap reads a masked cell, cells next to the
/// mask fall back to one-sided differences pointing away from it, and masked
/// cells are zero in the output.
pub mod masked {
    use super::*;

    pub(crate) fn to_bools(mask: &Field) -> Vec<bool> {
        mask.values().iter().map(|&m| m != 0.0).collect()
    }

    pub fn derivative(f: &Field, axis: Axis, mask: &Field) -> Result<Field> {
        f.grid().check_same(mask.grid(), "masked derivative")?;
        let m = to_bools(mask);
        line_op(f, axis, Order::First, Boundary::OneSided2, Some(&m))
    }

    pub fn gradient(f: &Field, mask: &Field) -> Result<(Field, Field)> {
        Ok((derivative(f, Axis::X, mask)?, derivative(f, Axis::Y, mask)?))
    }

    pub fn laplacian(f: &Field, mask: &Field) -> Result<Field> {
        f.grid().check_same(mask.grid(), "masked laplacian")?;
        let m = to_bools(mask);
        let xx = line_op(f, Axis::X, Order::Second, Boundary::OneSided2, Some(&m))?;
        let yy = line_op(f, Axis::Y, Order::Second, Boundary::OneSided2, Some(&m))?;
        crate::fields::add(&xx, &yy)
    }
}
