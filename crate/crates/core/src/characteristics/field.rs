use std::sync::Arc;

use serde::Serialize;

use super::TraceError;
use crate::determinacy::Trapezoid;
use crate::problem::ProblemSpec;

/// Discretisation of the trapezoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridParams {
    /// Upper bound on the node spacing of every time slice.
    pub dx: f64,
    /// Number of time steps `K`; levels are `t_k = k T / K`.
    pub dt_levels: usize,
    /// RK4 steps per time level along characteristics.
    pub substeps: usize,
}

impl GridParams {
    /// `Δx = (b - a)/800`, 200 time levels, 4 characteristic substeps.
    pub fn default_for(spec: &ProblemSpec) -> Self {
        GridParams { dx: (spec.b() - spec.a()) / 800.0, dt_levels: 200, substeps: 4 }
    }

    /// Halves `dx` and doubles the number of levels `times` times.
    pub fn refined(&self, times: u32) -> Self {
        let f = 2usize.pow(times);
        GridParams { dx: self.dx / f as f64, dt_levels: self.dt_levels * f, substeps: self.substeps }
    }
}

/// One time level: uniform nodes spanning `[a + Λt, b - Λt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub left: f64,
    pub right: f64,
    pub cells: usize,
    spacing: f64,
    inv_spacing: f64,
}

impl Slice {
    fn new(t: f64, left: f64, right: f64, max_dx: f64) -> Self {
        let width = right - left;
        let cells = ((width / max_dx) - 1e-9).ceil().max(1.0) as usize;
        let spacing = width / cells as f64;
        Slice { t, left, right, cells, spacing, inv_spacing: 1.0 / spacing }
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.cells {
            self.right
        } else {
            self.left + j as f64 * self.spacing
        }
    }

    /// Cell index and offset for linear interpolation. Offsets within
    /// rounding of a node snap to exactly 0 or 1; points beyond the ends
    /// extrapolate from the edge cell.
    #[inline(always)]
    fn locate(&self, x: f64) -> (usize, f64) {
        let r = (x - self.left) * self.inv_spacing;
        // truncation floors non-negative values; the rest go to cell 0
        let j = (r as i64).clamp(0, self.cells as i64 - 1) as usize;
        let w = r - j as f64;
        if w.abs() < SNAP {
            (j, 0.0)
        } else if (w - 1.0).abs() < SNAP {
            (j, 1.0)
        } else {
            (j, w)
        }
    }
}

const SNAP: f64 = 1e-12;

/// Node layout shared by all iterates of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapezoidGrid {
    pub trap: Trapezoid,
    pub params: GridParams,
    dt: f64,
    inv_dt: f64,
    slices: Vec<Slice>,
    clamp_tol: f64,
}

impl TrapezoidGrid {
    pub fn new(trap: Trapezoid, params: GridParams) -> Self {
        let k_max = params.dt_levels.max(1);
        let dt = trap.t_final / k_max as f64;
        let slices = (0..=k_max)
            .map(|k| {
                let t = if k == k_max { trap.t_final } else { k as f64 * dt };
                Slice::new(t, trap.left(t), trap.right(t), params.dx)
            })
            .collect();
        TrapezoidGrid { trap, params, dt, inv_dt: 1.0 / dt, slices, clamp_tol: 1e-9 * (trap.b - trap.a) }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// RK4 step along characteristics.
    pub fn dtau(&self) -> f64 {
        self.dt / self.params.substeps.max(1) as f64
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn levels(&self) -> usize {
        self.slices.len()
    }

    pub fn clamp_tol(&self) -> f64 {
        self.clamp_tol
    }

    pub fn node_count(&self) -> usize {
        self.slices.iter().map(Slice::nodes).sum()
    }

    /// Clamps `x` onto the slice of the trapezoid at time `t` when it lies
    /// outside by at most the clamp tolerance.
    #[inline]
    pub(crate) fn confine(&self, x: f64, t: f64) -> Option<f64> {
        self.cut(t).confine(x)
    }

    /// Everything about time `t` that interpolation and confinement need.
    #[inline]
    pub(crate) fn cut(&self, t: f64) -> TimeCut {
        let (k, theta) = self.bracket(t);
        TimeCut { t, lo: self.trap.left(t), hi: self.trap.right(t), tol: self.clamp_tol, k, theta }
    }

    #[inline]
    pub(crate) fn contains(&self, x: f64, t: f64) -> bool {
        let t_tol = 1e-12 * self.trap.t_final.max(1.0);
        t >= -t_tol && t <= self.trap.t_final + t_tol && self.confine(x, t).is_some()
    }

    /// Bracketing levels and weight of the upper one.
    #[inline]
    fn bracket(&self, t: f64) -> (usize, f64) {
        let last = self.slices.len() - 1;
        let s = t * self.inv_dt;
        let k = (s as i64).clamp(0, last.saturating_sub(1) as i64) as usize;
        let theta = s - k as f64;
        if theta.abs() < SNAP {
            (k, 0.0)
        } else if (theta - 1.0).abs() < SNAP {
            (k + 1, 0.0)
        } else {
            (k, theta.clamp(0.0, 1.0))
        }
    }
}

/// A time in the trapezoid with its slice bounds and bracketing levels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TimeCut {
    pub(crate) t: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    k: usize,
    theta: f64,
}

impl TimeCut {
    /// Clamps `x` onto the slice when it lies outside by at most the clamp
    /// tolerance.
    #[inline]
    pub(crate) fn confine(&self, x: f64) -> Option<f64> {
        if x < self.lo {
            (x >= self.lo - self.tol).then_some(self.lo)
        } else if x > self.hi {
            (x <= self.hi + self.tol).then_some(self.hi)
        } else {
            Some(x)
        }
    }
}

/// A vector field with `n` components sampled on a [`TrapezoidGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterateField {
    grid: Arc<TrapezoidGrid>,
    n: usize,
    /// Per level, node-major: `values[k][j * n + i]`.
    values: Vec<Vec<f64>>,
    /// Picard index `ν` of the iterate this field holds.
    pub iteration: usize,
}

impl IterateField {
    pub fn zeros(grid: Arc<TrapezoidGrid>, n: usize) -> Self {
        let values = grid.slices.iter().map(|s| vec![0.0; s.nodes() * n]).collect();
        IterateField { grid, n, values, iteration: 0 }
    }

    /// Fills every node from `f(x, t, out)`.
    pub fn from_fn<E>(
        grid: Arc<TrapezoidGrid>,
        n: usize,
        mut f: impl FnMut(f64, f64, &mut [f64]) -> Result<(), E>,
    ) -> Result<Self, E> {
        let mut field = Self::zeros(grid, n);
        for (k, slice) in field.grid.slices.iter().enumerate() {
            for j in 0..slice.nodes() {
                f(slice.x(j), slice.t, &mut field.values[k][j * n..(j + 1) * n])?;
            }
        }
        Ok(field)
    }

    pub(crate) fn from_levels(grid: Arc<TrapezoidGrid>, n: usize, values: Vec<Vec<f64>>, iteration: usize) -> Self {
        debug_assert_eq!(values.len(), grid.levels());
        IterateField { grid, n, values, iteration }
    }

    pub fn grid(&self) -> &Arc<TrapezoidGrid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn node(&self, k: usize, j: usize) -> &[f64] {
        &self.values[k][j * self.n..(j + 1) * self.n]
    }

    /// Iterates `(k, j, x, t, values)` over all nodes, level by level.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, f64, f64, &[f64])> + '_ {
        self.grid
            .slices
            .iter()
            .enumerate()
            .flat_map(move |(k, s)| (0..s.nodes()).map(move |j| (k, j, s.x(j), s.t, self.node(k, j))))
    }

    /// `max |self - other|` over nodes and components.
    pub fn max_abs_diff(&self, other: &IterateField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Piecewise-linear interpolation in `x` on the two bracketing levels,
    /// then linear in `t`. Exact at nodes; reproduces affine fields.
    #[inline]
    pub fn interp_into(&self, x: f64, t: f64, out: &mut [f64]) -> Result<(), TraceError> {
        if !self.grid.contains(x, t) {
            return Err(TraceError::OutsideDomain { x, t });
        }
        self.interp_confined(x, t, out);
        Ok(())
    }

    /// [`Self::interp_into`] for points already known to lie in the grid.
    #[inline]
    pub(crate) fn interp_confined(&self, x: f64, t: f64, out: &mut [f64]) {
        self.interp_cut(&self.grid.cut(t), x, out)
    }

    #[inline]
    pub(crate) fn interp_cut(&self, cut: &TimeCut, x: f64, out: &mut [f64]) {
        let n = self.n;
        let out = &mut out[..n];
        let lower = self.cell(cut.k, x);
        if cut.theta == 0.0 {
            let (w, c) = lower;
            let (a, b) = c.split_at(n);
            for ((o, &a), &b) in out.iter_mut().zip(a).zip(b) {
                *o = lerp(a, b, w);
            }
            return;
        }
        let ((w0, c0), (w1, c1)) = (lower, self.cell(cut.k + 1, x));
        let theta = cut.theta;
        let (a0, b0) = c0.split_at(n);
        let (a1, b1) = c1.split_at(n);
        for ((((o, &a0), &b0), &a1), &b1) in out.iter_mut().zip(a0).zip(b0).zip(a1).zip(b1) {
            *o = (1.0 - theta) * lerp(a0, b0, w0) + theta * lerp(a1, b1, w1);
        }
    }

    /// Weight and the values at both ends of the cell of level `k` holding `x`.
    #[inline(always)]
    fn cell(&self, k: usize, x: f64) -> (f64, &[f64]) {
        let (j, w) = self.grid.slices[k].locate(x);
        (w, &self.values[k][j * self.n..(j + 2) * self.n])
    }

    pub fn interp(&self, x: f64, t: f64) -> Result<Vec<f64>, TraceError> {
        let mut out = vec![0.0; self.n];
        self.interp_into(x, t, &mut out)?;
        Ok(out)
    }

    /// Second-order finite differences in `x` on each slice: central inside,
    /// one-sided three-point at the slice ends.
    pub fn x_derivative(&self) -> IterateField {
        let n = self.n;
        let values = self
            .grid
            .slices
            .iter()
            .zip(&self.values)
            .map(|(s, v)| {
                let m = s.nodes();
                let inv = 1.0 / s.spacing;
                let mut d = vec![0.0; m * n];
                for i in 0..n {
                    let at = |j: usize| v[j * n + i];
                    if m == 2 {
                        let slope = (at(1) - at(0)) * inv;
                        d[i] = slope;
                        d[n + i] = slope;
                        continue;
                    }
                    d[i] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * 0.5 * inv;
                    for j in 1..m - 1 {
                        d[j * n + i] = (at(j + 1) - at(j - 1)) * 0.5 * inv;
                    }
                    d[(m - 1) * n + i] = (3.0 * at(m - 1) - 4.0 * at(m - 2) + at(m - 3)) * 0.5 * inv;
                }
                d
            })
            .collect();
        IterateField { grid: self.grid.clone(), n, values, iteration: self.iteration }
    }
}

/// Exact at `w = 0` and `w = 1` for finite values.
#[inline(always)]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    (1.0 - w) * a + w * b
}
