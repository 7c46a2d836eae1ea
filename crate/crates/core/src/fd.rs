//! Finite-difference comparators: the one-sided gradient of a sampled
//! potential and an explicit deterministic solver used as a noise-free
//! reference.

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, ScalarField};
use crate::problems::ProblemSpec;
use crate::scalar::{Real, Vec2};

/// `E = -grad phi` by backward differences `(phi_i - phi_{i-1}) / dx`; the
/// first column (row) uses the forward difference instead.
pub fn fd_gradient<T: Real>(phi: &ScalarField<T>) -> (ScalarField<T>, ScalarField<T>) {
    let grid = *phi.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut ex = ScalarField::zeros(grid);
    let mut ey = ScalarField::zeros(grid);
    for cell in grid.cells() {
        let (i, j) = (cell.i, cell.j);
        let (ia, ib) = if i == 0 { (1, 0) } else { (i, i - 1) };
        let (ja, jb) = if j == 0 { (1, 0) } else { (j, j - 1) };
        debug_assert!(ia < nx && ja < ny);
        ex.set(cell, -(phi.get(Cell::new(ia, j)) - phi.get(Cell::new(ib, j))) / grid.dx());
        ey.set(cell, -(phi.get(Cell::new(i, ja)) - phi.get(Cell::new(i, jb))) / grid.dy());
    }
    (ex, ey)
}

/// Conservative central discretization of
/// `du/dt = -div(v u) + div(D grad u) + c u + s` on the interior cells.
/// Face diffusion and face velocity are arithmetic means of the adjacent
/// cell-center values.
#[derive(Debug, Clone)]
pub struct FdOperator<'a, T: Real> {
    spec: &'a ProblemSpec<T>,
    grid: GridSpec<T>,
    d: Vec<T>,
    v: Vec<Vec2<T>>,
}

impl<'a, T: Real> FdOperator<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>, grid: GridSpec<T>) -> Self {
        let d = grid.cells().map(|c| (spec.diffusion)(grid.center(c))).collect();
        let v = grid.cells().map(|c| spec.advection_at(grid.center(c))).collect();
        Self { spec, grid, d, v }
    }

    /// Largest stable explicit step under both diffusion and advection CFL
    /// limits (factor 0.9).
    pub fn max_stable_dt(&self) -> T {
        let g = &self.grid;
        let safety = T::of(0.9);
        let h2 = (g.dx() * g.dx()).min(g.dy() * g.dy());
        let d_max = self.d.iter().copied().fold(T::zero(), T::max);
        let mut limit = if d_max > T::zero() {
            safety * h2 / (T::of(4.0) * d_max)
        } else {
            T::infinity()
        };
        let vx = self.v.iter().map(|v| v.x.abs()).fold(T::zero(), T::max);
        let vy = self.v.iter().map(|v| v.y.abs()).fold(T::zero(), T::max);
        if vx > T::zero() {
            limit = limit.min(safety * g.dx() / vx);
        }
        if vy > T::zero() {
            limit = limit.min(safety * g.dy() / vy);
        }
        limit
    }

    /// Flux from cell `a` into its +x neighbour `b` (or +y when `along_x`
    /// is false): advective minus diffusive transport across the shared face.
    #[inline]
    fn face_flux(&self, u: &[T], a: usize, b: usize, along_x: bool) -> T {
        let half = T::of(0.5);
        let h = if along_x { self.grid.dx() } else { self.grid.dy() };
        let d_face = half * (self.d[a] + self.d[b]);
        let v_face = if along_x {
            half * (self.v[a].x + self.v[b].x)
        } else {
            half * (self.v[a].y + self.v[b].y)
        };
        v_face * half * (u[a] + u[b]) - d_face * (u[b] - u[a]) / h
    }

    /// Time derivative at every interior cell (zero on boundary cells).
    pub fn rate(&self, u: &[T], t: T) -> Result<Vec<T>> {
        let g = &self.grid;
        let mut du = vec![T::zero(); g.cell_count()];
        for cell in g.cells().filter(|c| !g.is_boundary(*c)) {
            let k = g.linear(cell);
            let east = g.linear(Cell::new(cell.i + 1, cell.j));
            let west = g.linear(Cell::new(cell.i - 1, cell.j));
            let north = g.linear(Cell::new(cell.i, cell.j + 1));
            let south = g.linear(Cell::new(cell.i, cell.j - 1));
            let div_x = (self.face_flux(u, k, east, true) - self.face_flux(u, west, k, true)) / g.dx();
            let div_y = (self.face_flux(u, k, north, false) - self.face_flux(u, south, k, false)) / g.dy();
            let r = g.center(cell);
            let s = self.spec.injection.exact_rate(t, r).ok_or_else(|| {
                Error::InvalidProblem(format!(
                    "problem '{}' has a source without exact companions",
                    self.spec.name
                ))
            })?;
            du[k] = -div_x - div_y + self.spec.reaction_at(t, r) * u[k] + s;
        }
        Ok(du)
    }

    /// Net flux leaving the interior block through faces shared with boundary
    /// cells.
    pub fn boundary_outflow(&self, u: &[T]) -> T {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let mut out = T::zero();
        for j in 1..ny - 1 {
            let l = (g.linear(Cell::new(0, j)), g.linear(Cell::new(1, j)));
            let r = (g.linear(Cell::new(nx - 2, j)), g.linear(Cell::new(nx - 1, j)));
            out = out - self.face_flux(u, l.0, l.1, true) * g.dy() + self.face_flux(u, r.0, r.1, true) * g.dy();
        }
        for i in 1..nx - 1 {
            let b = (g.linear(Cell::new(i, 0)), g.linear(Cell::new(i, 1)));
            let t = (g.linear(Cell::new(i, ny - 2)), g.linear(Cell::new(i, ny - 1)));
            out = out - self.face_flux(u, b.0, b.1, false) * g.dx() + self.face_flux(u, t.0, t.1, false) * g.dx();
        }
        out
    }

    fn pin_boundary(&self, u: &mut [T], t: T) {
        let g = &self.grid;
        for cell in g.boundary_cells() {
            u[g.linear(cell)] = (self.spec.dirichlet)(t, g.center(cell));
        }
    }
}

/// Explicit-Euler solve from `t0` to `t_end` with boundary cells pinned to the
/// Dirichlet data. The step actually used is `(t_end - t0) / ceil((t_end - t0) / dt_fd)`.
///
/// Fails if `dt_fd` exceeds the CFL limit.
pub fn solve_deterministic<T: Real>(
    spec: &ProblemSpec<T>,
    grid: GridSpec<T>,
    t0: T,
    t_end: T,
    dt_fd: T,
) -> Result<ScalarField<T>> {
    if !(t0 < t_end) || !(dt_fd > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "need t0 < t_end and dt > 0, got t0 = {t0}, t_end = {t_end}, dt = {dt_fd}"
        )));
    }
    let op = FdOperator::new(spec, grid);
    let limit = op.max_stable_dt();
    if dt_fd > limit {
        return Err(Error::Cfl {
            dt: dt_fd.to_f64_lossy(),
            suggested_dt: limit.to_f64_lossy(),
        });
    }
    let span = t_end - t0;
    let steps = (span / dt_fd - T::of(1e-9)).ceil().to_usize().unwrap_or(1).max(1);
    let dt = span / T::of_usize(steps);

    let mut u: Vec<T> = grid.cells().map(|c| (spec.initial)(t0, grid.center(c))).collect();
    op.pin_boundary(&mut u, t0);
    for k in 0..steps {
        let t = t0 + T::of_usize(k) * dt;
        let du = op.rate(&u, t)?;
        for (x, d) in u.iter_mut().zip(du) {
            *x = *x + dt * d;
        }
        op.pin_boundary(&mut u, t0 + T::of_usize(k + 1) * dt);
    }
    ScalarField::from_values(grid, u)
}

/// Stable step for [`solve_deterministic`]: the CFL limit of the operator.
pub fn stable_dt<T: Real>(spec: &ProblemSpec<T>, grid: GridSpec<T>) -> T {
    FdOperator::new(spec, grid).max_stable_dt()
}
