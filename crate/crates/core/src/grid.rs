//! Uniform rectangular grids, cell-centered scalar fields and the
//! particle-to-field histogram estimator.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real, Vec2};
use crate::transport::ParticleEnsemble;

/// Default floor for [`relative_error`].
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-12;

/// Index of a grid cell: `i` along x, `j` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Uniform rectangular grid of `nx * ny` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    x_min: T,
    x_max: T,
    y_min: T,
    y_max: T,
    nx: usize,
    ny: usize,
    dx: T,
    dy: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(x_range: (T, T), y_range: (T, T), nx: usize, ny: usize) -> Result<Self> {
        let (x_min, x_max) = x_range;
        let (y_min, y_max) = y_range;
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::InvalidGrid(format!(
                "empty domain [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if !(x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite()) {
            return Err(Error::InvalidGrid("non-finite domain bounds".into()));
        }
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 cells per dimension, got {nx} x {ny}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
            dx: (x_max - x_min) / T::of_usize(nx),
            dy: (y_max - y_min) / T::of_usize(ny),
        })
    }

    /// Square domain `[lo, hi]^2` with `m` cells per side.
    pub fn square(lo: T, hi: T, m: usize) -> Result<Self> {
        Self::new((lo, hi), (lo, hi), m, m)
    }

    pub fn x_range(&self) -> (T, T) {
        (self.x_min, self.x_max)
    }

    pub fn y_range(&self) -> (T, T) {
        (self.y_min, self.y_max)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn dy(&self) -> T {
        self.dy
    }

    pub fn cell_area(&self) -> T {
        self.dx * self.dy
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major linear index, `i` outer and `j` inner.
    #[inline]
    pub fn linear(&self, cell: Cell) -> usize {
        cell.i * self.ny + cell.j
    }

    #[inline]
    pub fn cell_of_linear(&self, k: usize) -> Cell {
        Cell::new(k / self.ny, k % self.ny)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.nx).flat_map(move |i| (0..self.ny).map(move |j| Cell::new(i, j)))
    }

    #[inline]
    pub fn center(&self, cell: Cell) -> Vec2<T> {
        let half = T::of(0.5);
        Vec2::new(
            self.x_min + (T::of_usize(cell.i) + half) * self.dx,
            self.y_min + (T::of_usize(cell.j) + half) * self.dy,
        )
    }

    /// Lower-left corner of a cell.
    #[inline]
    pub fn corner(&self, cell: Cell) -> Vec2<T> {
        Vec2::new(
            self.x_min + T::of_usize(cell.i) * self.dx,
            self.y_min + T::of_usize(cell.j) * self.dy,
        )
    }

    /// True for cells touching the domain edge.
    #[inline]
    pub fn is_boundary(&self, cell: Cell) -> bool {
        cell.i == 0 || cell.j == 0 || cell.i + 1 == self.nx || cell.j + 1 == self.ny
    }

    pub fn boundary_cells(&self) -> Vec<Cell> {
        self.cells().filter(|c| self.is_boundary(*c)).collect()
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Cell containing `p` (half-open cells, the upper domain edge belongs to
    /// the last cell), or `None` when `p` is outside the closed domain.
    #[inline]
    pub fn locate(&self, p: Vec2<T>) -> Option<Cell> {
        if !self.contains(p) {
            return None;
        }
        let fi = ((p.x - self.x_min) / self.dx).floor();
        let fj = ((p.y - self.y_min) / self.dy).floor();
        let i = fi.to_usize().unwrap_or(0).min(self.nx - 1);
        let j = fj.to_usize().unwrap_or(0).min(self.ny - 1);
        Some(Cell::new(i, j))
    }

    /// Cell holding the domain midpoint: `(floor(nx/2), floor(ny/2))`.
    pub fn middle_cell(&self) -> Cell {
        Cell::new(self.nx / 2, self.ny / 2)
    }

    /// Uniform random point inside `cell`.
    #[inline]
    pub fn sample_in_cell<R: rand::Rng + ?Sized>(&self, cell: Cell, rng: &mut R) -> Vec2<T> {
        let c = self.corner(cell);
        Vec2::new(
            c.x + T::sample_unit(rng) * self.dx,
            c.y + T::sample_unit(rng) * self.dy,
        )
    }

    fn same_as(&self, other: &Self) -> bool {
        self == other
    }
}

/// Free-function form of [`GridSpec::locate`].
pub fn locate_cell<T: Real>(grid: &GridSpec<T>, position: Vec2<T>) -> Option<Cell> {
    grid.locate(position)
}

/// Cell-centered values of one scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: GridSpec<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self {
            values: vec![T::zero(); grid.cell_count()],
            grid,
        }
    }

    pub fn from_values(grid: GridSpec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        let field = Self { grid, values };
        field.check_finite()?;
        Ok(field)
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: GridSpec<T>, mut f: impl FnMut(Vec2<T>) -> T) -> Self {
        let values = grid.cells().map(|c| f(grid.center(c))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> T {
        self.values[self.grid.linear(cell)]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, v: T) {
        let k = self.grid.linear(cell);
        self.values[k] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sum of `value * area` over all cells.
    pub fn integral(&self) -> T {
        let acc: CompensatedSum<T> = self.values.iter().copied().collect();
        acc.value() * self.grid.cell_area()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => {
                let c = self.grid.cell_of_linear(k);
                Err(Error::NonFiniteField { i: c.i, j: c.j })
            }
        }
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.nx, self.grid.ny, other.grid.nx, other.grid.ny
            )))
        }
    }

    /// Writes `i,j,x_center,y_center,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,x_center,y_center,value")?;
        for cell in self.grid.cells() {
            let c = self.grid.center(cell);
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                cell.i,
                cell.j,
                c.x.to_f64_lossy(),
                c.y.to_f64_lossy(),
                self.get(cell).to_f64_lossy()
            )?;
        }
        Ok(())
    }

    /// Reads the format produced by [`ScalarField::write_csv`] onto `grid`.
    pub fn read_csv<R: BufRead>(grid: GridSpec<T>, input: R) -> Result<Self> {
        let mut field = Self::zeros(grid);
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "i,j,x_center,y_center,value" => {}
            _ => return Err(Error::Parse("missing field CSV header".into())),
        }
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Parse(format!("bad row '{line}'")));
            }
            let parse_idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("{s}: {e}")))
            };
            let i = parse_idx(cols[0])?;
            let j = parse_idx(cols[1])?;
            let v: f64 = cols[4]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("{}: {e}", cols[4])))?;
            if i >= grid.nx || j >= grid.ny {
                return Err(Error::Parse(format!("cell ({i}, {j}) out of range")));
            }
            field.set(Cell::new(i, j), T::of(v));
            seen += 1;
        }
        if seen != grid.cell_count() {
            return Err(Error::Parse(format!(
                "expected {} rows, found {seen}",
                grid.cell_count()
            )));
        }
        field.check_finite()?;
        Ok(field)
    }
}

/// Histogram estimate: signed weight per cell divided by the cell area.
///
/// Fails if any particle lies outside the closed domain.
pub fn estimate_field<T: Real>(
    particles: &ParticleEnsemble<T>,
    grid: &GridSpec<T>,
) -> Result<ScalarField<T>> {
    let mut sums = vec![CompensatedSum::<T>::new(); grid.cell_count()];
    for (index, (p, w)) in particles.iter().enumerate() {
        let cell = grid.locate(p).ok_or(Error::ParticleOutside {
            index,
            x: p.x.to_f64_lossy(),
            y: p.y.to_f64_lossy(),
        })?;
        sums[grid.linear(cell)].add(w);
    }
    let area = grid.cell_area();
    let values = sums.iter().map(|s| s.value() / area).collect();
    Ok(ScalarField {
        grid: *grid,
        values,
    })
}

/// Per-cell `|estimate - exact| / max(|exact|, floor)`.
pub fn relative_error<T: Real>(
    estimate: &ScalarField<T>,
    exact: &ScalarField<T>,
    floor: T,
) -> Result<ScalarField<T>> {
    estimate.zip_with(exact, |e, x| (e - x).abs() / x.abs().max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> GridSpec<f64> {
        GridSpec::<f64>::square(0.0, 1.0, 15).unwrap()
    }

    #[test]
    fn locate_matches_floor_arithmetic() {
        let g = unit_grid();
        assert_eq!(g.locate(Vec2::new(0.5, 0.5)), Some(Cell::new(7, 7)));
        assert_eq!(g.locate(Vec2::new(0.0, 0.0)), Some(Cell::new(0, 0)));
        assert_eq!(g.locate(Vec2::new(1.1, 0.5)), None);
        assert_eq!(g.locate(Vec2::new(0.5, -1e-9)), None);
        // upper edge is inside the closed domain
        assert_eq!(g.locate(Vec2::new(1.0, 1.0)), Some(Cell::new(14, 14)));
    }

    #[test]
    fn locate_inverts_center() {
        let g = GridSpec::<f64>::new((-1.0, 3.0), (0.5, 1.5), 17, 9).unwrap();
        for c in g.cells() {
            assert_eq!(g.locate(g.center(c)), Some(c));
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::<f64>::square(0.0, 1.0, 2).is_err());
        assert!(GridSpec::<f64>::new((1.0, 1.0), (0.0, 1.0), 5, 5).is_err());
        assert!(GridSpec::<f64>::new((0.0, 1.0), (2.0, 1.0), 5, 5).is_err());
    }

    #[test]
    fn single_particle_histogram() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        assert!((g.cell_area() - 0.04).abs() < 1e-15);
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.31, 0.77), 0.04);
        let f = estimate_field(&ens, &g).unwrap();
        let hit = g.locate(Vec2::new(0.31, 0.77)).unwrap();
        for c in g.cells() {
            let expect = if c == hit { 1.0 } else { 0.0 };
            assert!((f.get(c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_ensemble_gives_zero_field() {
        let g = unit_grid();
        let f = estimate_field(&ParticleEnsemble::<f64>::new(), &g).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outside_particle_is_rejected() {
        let g = unit_grid();
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.5, 0.5), 1.0);
        ens.push(Vec2::new(1.01, 0.5), 1.0);
        assert!(matches!(
            estimate_field(&ens, &g),
            Err(Error::ParticleOutside { index: 1, .. })
        ));
    }

    #[test]
    fn relative_error_cases() {
        let g = unit_grid();
        let exact = ScalarField::from_fn(g, |_| 1.0);
        let same = relative_error(&exact, &exact, 1e-12).unwrap();
        assert!(same.values().iter().all(|&v| v == 0.0));

        let est = ScalarField::from_fn(g, |_| 1.1);
        let r = relative_error(&est, &exact, 1e-12).unwrap();
        assert!(r.values().iter().all(|&v| (v - 0.1).abs() < 1e-12));

        let zero = ScalarField::zeros(g);
        let small = ScalarField::from_fn(g, |_| 0.01);
        let r = relative_error(&small, &zero, 1e-12).unwrap();
        assert!(r.values().iter().all(|&v| (v / 1e10 - 1.0).abs() < 1e-12));

        let other = ScalarField::zeros(GridSpec::<f64>::square(0.0, 1.0, 5).unwrap());
        assert!(relative_error(&other, &exact, 1e-12).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let g = GridSpec::<f64>::new((0.0, 2.0), (0.0, 1.0), 4, 3).unwrap();
        let f = ScalarField::from_fn(g, |p| (p.x * 3.1).sin() / (1.0 + p.y).powi(3));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i,j,x_center,y_center,value\n0,0,"));
        assert!(text.lines().nth(2).unwrap().starts_with("0,1,"));
        let back = ScalarField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 3).unwrap();
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(g, v),
            Err(Error::NonFiniteField { i: 1, j: 1 })
        ));
    }

    #[test]
    fn middle_cell_convention() {
        let odd = GridSpec::<f64>::square(0.0, 2.0, 21).unwrap();
        assert_eq!(odd.middle_cell(), Cell::new(10, 10));
        let c = odd.center(odd.middle_cell());
        assert!((c.x - 1.0).abs() < 1e-12 && (c.y - 1.0).abs() < 1e-12);
        let even = GridSpec::<f64>::square(0.0, 2.0, 20).unwrap();
        assert_eq!(even.middle_cell(), Cell::new(10, 10));
        assert_eq!(even.locate(Vec2::new(1.0, 1.0)), Some(even.middle_cell()));
    }
}
