//! Signed-weight particle ensembles and the drift-diffusion transport step,
//! Dirichlet boundary maintenance and population control.

use std::io::Write;

use log::warn;
use rand::Rng;

use crate::error::Result;
use crate::grid::{Cell, GridSpec};
use crate::problems::{effective_drift, ProblemSpec};
use crate::scalar::{CompensatedSum, Real, Vec2};

/// Particle positions and signed weights, stored column-wise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleEnsemble<T> {
    x: Vec<T>,
    y: Vec<T>,
    w: Vec<T>,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn new() -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            w: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    pub fn push(&mut self, p: Vec2<T>, weight: T) {
        self.x.push(p.x);
        self.y.push(p.y);
        self.w.push(weight);
    }

    #[inline]
    pub fn position(&self, k: usize) -> Vec2<T> {
        Vec2::new(self.x[k], self.y[k])
    }

    #[inline]
    pub fn weight(&self, k: usize) -> T {
        self.w[k]
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.w
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec2<T>, T)> + '_ {
        self.x
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((&x, &y), &w)| (Vec2::new(x, y), w))
    }

    pub fn total_weight(&self) -> T {
        self.w.iter().copied().collect::<CompensatedSum<T>>().value()
    }

    pub fn total_abs_weight(&self) -> T {
        self.w.iter().map(|w| w.abs()).collect::<CompensatedSum<T>>().value()
    }

    /// Keeps particles for which `keep(position, weight)` holds, preserving order.
    pub fn retain(&mut self, mut keep: impl FnMut(Vec2<T>, T) -> bool) {
        let mut out = 0;
        for k in 0..self.w.len() {
            if keep(Vec2::new(self.x[k], self.y[k]), self.w[k]) {
                self.x[out] = self.x[k];
                self.y[out] = self.y[k];
                self.w[out] = self.w[k];
                out += 1;
            }
        }
        self.truncate(out);
    }

    fn truncate(&mut self, n: usize) {
        self.x.truncate(n);
        self.y.truncate(n);
        self.w.truncate(n);
    }

    /// Replaces every weight by `f(position, weight)`.
    #[inline]
    pub fn update_weights(&mut self, mut f: impl FnMut(Vec2<T>, T) -> T) {
        for k in 0..self.w.len() {
            self.w[k] = f(Vec2::new(self.x[k], self.y[k]), self.w[k]);
        }
    }

    /// Drops zero-weight particles.
    pub fn purge_zero(&mut self) {
        self.retain(|_, w| w != T::zero());
    }

    pub fn all_weights_finite(&self) -> bool {
        self.w.iter().all(|w| w.is_finite())
    }

    /// Writes `x,y,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,weight")?;
        for (p, w) in self.iter() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                p.x.to_f64_lossy(),
                p.y.to_f64_lossy(),
                w.to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

fn particles_for_mass<T: Real>(mass: T, n_total: usize, reference: T) -> usize {
    let share = T::of_usize(n_total) * mass.abs() / reference;
    share.round().to_usize().unwrap_or(0).max(1)
}

/// Places `count` particles uniformly in `cell` with total weight exactly
/// `mass`. Individual weights follow `density` at the particle positions,
/// shifted by a constant so the sum is `mass`: a uniform cloud then carries
/// the linear part of the profile, which keeps the density continuous across
/// the edge of a re-populated cell.
fn fill_cell<T: Real, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    grid: &GridSpec<T>,
    cell: Cell,
    mass: T,
    count: usize,
    density: impl Fn(Vec2<T>) -> T,
    rng: &mut R,
) {
    let n = T::of_usize(count);
    let start = ens.len();
    let mut profile = Vec::with_capacity(count);
    for _ in 0..count {
        let p = grid.sample_in_cell(cell, rng);
        profile.push(density(p));
        ens.push(p, T::zero());
    }
    let mean = profile.iter().copied().collect::<CompensatedSum<T>>().value() / n;
    let scale = grid.cell_area() / n;
    let base = mass / n;
    for (w, g) in ens.weights_mut()[start..].iter_mut().zip(profile) {
        let shaped = base + (g - mean) * scale;
        *w = if shaped.is_finite() { shaped } else { base };
    }
}

/// Cell masses `u0(t0, center) * area` of the initial condition.
fn initial_masses<T: Real>(spec: &ProblemSpec<T>, grid: &GridSpec<T>, t0: T) -> Vec<T> {
    let area = grid.cell_area();
    grid.cells()
        .map(|c| (spec.initial)(t0, grid.center(c)) * area)
        .collect()
}

/// Samples the initial condition: cell `c` receives
/// `max(1, round(N |m_c| / sum |m|))` particles placed uniformly with total
/// weight `m_c`, shaped by the initial profile. Cells with zero mass stay empty.
pub fn sample_initial<T: Real, R: Rng + ?Sized>(
    spec: &ProblemSpec<T>,
    grid: &GridSpec<T>,
    n: usize,
    t0: T,
    rng: &mut R,
) -> ParticleEnsemble<T> {
    if n < grid.cell_count() {
        warn!(
            "{}: {} particles for {} cells; many cells will be poorly resolved",
            spec.name,
            n,
            grid.cell_count()
        );
    }
    let masses = initial_masses(spec, grid, t0);
    let total: T = masses.iter().map(|m| m.abs()).collect::<CompensatedSum<T>>().value();
    let mut ens = ParticleEnsemble::with_capacity(n + grid.cell_count());
    if total == T::zero() {
        return ens;
    }
    for (k, &m) in masses.iter().enumerate() {
        if m != T::zero() {
            let count = particles_for_mass(m, n, total);
            fill_cell(&mut ens, grid, grid.cell_of_linear(k), m, count, |r| (spec.initial)(t0, r), rng);
        }
    }
    ens
}

/// One Euler–Maruyama step `X <- X + b(X) dt + sqrt(2 D(X) dt) xi`.
/// Weights are untouched.
pub fn step<T: Real, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    spec: &ProblemSpec<T>,
    dt: T,
    rng: &mut R,
) {
    let two_dt = T::of(2.0) * dt;
    for k in 0..ens.len() {
        let p = Vec2::new(ens.x[k], ens.y[k]);
        let b = effective_drift(spec, p);
        let amp = ((spec.diffusion)(p).max(T::zero()) * two_dt).sqrt();
        let xi = T::sample_normal(rng);
        let eta = T::sample_normal(rng);
        ens.x[k] = p.x + b.x * dt + amp * xi;
        ens.y[k] = p.y + b.y * dt + amp * eta;
    }
}

/// Particle budget of the Dirichlet boundary layer, fixed at the start time.
#[derive(Debug, Clone)]
pub struct BoundaryLayer<T> {
    cells: Vec<Cell>,
    n_particles: usize,
    reference_mass: T,
}

impl<T: Real> BoundaryLayer<T> {
    /// Uses `sum |m|` of the initial condition at `t0` as mass reference.
    pub fn new(spec: &ProblemSpec<T>, grid: &GridSpec<T>, n_particles: usize, t0: T) -> Self {
        let masses = initial_masses(spec, grid, t0);
        let mut reference = masses.iter().map(|m| m.abs()).collect::<CompensatedSum<T>>().value();
        if reference == T::zero() {
            // no initial mass: budget one N / cells share per unit of cell mass
            reference = grid.cell_area() * T::of_usize(grid.cell_count());
        }
        Self {
            cells: grid.boundary_cells(),
            n_particles,
            reference_mass: reference,
        }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn particles_for(&self, mass: T) -> usize {
        particles_for_mass(mass, self.n_particles, self.reference_mass)
    }
}

/// Absorbs particles that left the closed domain, then empties every boundary
/// cell and re-populates it to mass `g(t, center) * area`. Interior cells are
/// untouched. Returns the number of absorbed particles.
pub fn apply_boundary<T: Real, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    spec: &ProblemSpec<T>,
    grid: &GridSpec<T>,
    layer: &BoundaryLayer<T>,
    t: T,
    rng: &mut R,
) -> usize {
    let before = ens.len();
    let mut absorbed = 0;
    ens.retain(|p, _| match grid.locate(p) {
        None => {
            absorbed += 1;
            false
        }
        Some(c) => !grid.is_boundary(c),
    });
    debug_assert!(ens.len() <= before);
    let area = grid.cell_area();
    for &cell in &layer.cells {
        let mass = (spec.dirichlet)(t, grid.center(cell)) * area;
        if mass != T::zero() {
            fill_cell(ens, grid, cell, mass, layer.particles_for(mass), |r| (spec.dirichlet)(t, r), rng);
        }
    }
    absorbed
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PopulationReport {
    pub rouletted: usize,
    pub killed: usize,
    pub merged: usize,
}

/// Median of |w| (upper median for even counts).
fn median_abs<T: Real>(weights: &[T]) -> Option<T> {
    if weights.is_empty() {
        return None;
    }
    let mut abs: Vec<T> = weights.iter().map(|w| w.abs()).collect();
    let mid = abs.len() / 2;
    let (_, m, _) = abs.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite weights"));
    Some(*m)
}

/// Russian roulette on light particles, followed by same-cell merging if the
/// ensemble still holds more than `2 * target_count` particles.
///
/// A particle with `|w| < w_cap * median|w|` survives with probability
/// `|w| / (w_cap * median)` and then carries weight `sign(w) * w_cap * median`,
/// so the expected total weight is unchanged.
pub fn control_population<T: Real, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    grid: &GridSpec<T>,
    w_cap: T,
    target_count: usize,
    rng: &mut R,
) -> PopulationReport {
    ens.purge_zero();
    let mut report = PopulationReport::default();
    let Some(median) = median_abs(&ens.w) else {
        return report;
    };
    let threshold = w_cap * median;
    for w in ens.w.iter_mut() {
        let a = w.abs();
        if a < threshold {
            report.rouletted += 1;
            if T::sample_unit(rng) < a / threshold {
                *w = threshold.copysign(*w);
            } else {
                *w = T::zero();
                report.killed += 1;
            }
        }
    }
    ens.purge_zero();
    if ens.len() > 2 * target_count {
        report.merged = merge_same_cell(ens, grid, 2 * target_count);
    }
    report
}

/// Merges two particles into one at their |w|-weighted mean position.
pub fn merge_pair<T: Real>(a: (Vec2<T>, T), b: (Vec2<T>, T)) -> (Vec2<T>, T) {
    let (pa, wa) = a;
    let (pb, wb) = b;
    let (ma, mb) = (wa.abs(), wb.abs());
    let s = ma + mb;
    let p = Vec2::new((pa.x * ma + pb.x * mb) / s, (pa.y * ma + pb.y * mb) / s);
    (p, wa + wb)
}

/// Pairwise merging of same-cell, same-sign particles until the count is at
/// most `max_count` or no pair is left. Within each (cell, sign) group the
/// particles are paired in order of |w|, and the lightest pairs merge first,
/// so heavy particles stay intact and only as many merges as needed are made.
/// Per-cell signed weight is preserved exactly. Returns the number of merges.
pub fn merge_same_cell<T: Real>(ens: &mut ParticleEnsemble<T>, grid: &GridSpec<T>, max_count: usize) -> usize {
    let mut merges = 0;
    while ens.len() > max_count {
        let needed = ens.len() - max_count;
        let mut keyed: Vec<(usize, bool, T, usize)> = ens
            .iter()
            .enumerate()
            .filter_map(|(k, (p, w))| grid.locate(p).map(|c| (grid.linear(c), w < T::zero(), w.abs(), k)))
            .collect();
        keyed.sort_unstable_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then(a.2.partial_cmp(&b.2).expect("finite weights"))
                .then(a.3.cmp(&b.3))
        });
        let mut pairs: Vec<(T, usize, usize)> = Vec::with_capacity(keyed.len() / 2);
        let mut idx = 0;
        while idx + 1 < keyed.len() {
            let (a, b) = (keyed[idx], keyed[idx + 1]);
            if (a.0, a.1) == (b.0, b.1) {
                pairs.push((a.2 + b.2, a.3, b.3));
                idx += 2;
            } else {
                idx += 1;
            }
        }
        if pairs.is_empty() {
            break;
        }
        if pairs.len() > needed {
            let by_weight = |a: &(T, usize, usize), b: &(T, usize, usize)| {
                a.0.partial_cmp(&b.0).expect("finite weights").then(a.1.cmp(&b.1))
            };
            pairs.select_nth_unstable_by(needed - 1, by_weight);
            pairs.truncate(needed);
        }
        for &(_, a, b) in &pairs {
            let (p, w) = merge_pair((ens.position(a), ens.weight(a)), (ens.position(b), ens.weight(b)));
            ens.x[a] = p.x;
            ens.y[a] = p.y;
            ens.w[a] = w;
            ens.w[b] = T::zero();
        }
        ens.purge_zero();
        merges += pairs.len();
    }
    merges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::estimate_field;
    use crate::problems::{experiment1_problems, experiment2_problems, InjectionSource};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn constant_problem(k: f64, d: f64) -> ProblemSpec<f64> {
        let u: crate::problems::ScalarFn<f64> = Arc::new(move |_t, _r| k);
        ProblemSpec {
            name: "const".into(),
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            diffusion: Arc::new(move |_r| d),
            diffusion_gradient: Arc::new(|_r| Vec2::zero()),
            advection: None,
            reaction: None,
            injection: InjectionSource::default(),
            dirichlet: u.clone(),
            initial: u.clone(),
            exact: Some(u),
        }
    }

    #[test]
    fn constant_initial_condition_is_exact_per_cell() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let spec = constant_problem(2.5, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ens = sample_initial(&spec, &grid, 225 * 40, 0.0, &mut rng);
        assert_eq!(ens.len(), 225 * 40);
        let f = estimate_field(&ens, &grid).unwrap();
        for &v in f.values() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_initial_condition_keeps_sign() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let mut neg = p.field_x.clone();
        let u = neg.initial.clone();
        neg.initial = Arc::new(move |t, r| -u(t, r));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens = sample_initial(&neg, &grid, 10_000, 0.0, &mut rng);
        assert!(ens.weights().iter().all(|&w| w < 0.0));
        let f = estimate_field(&ens, &grid).unwrap();
        assert!(f.values().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn zero_initial_condition_gives_empty_ensemble() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        let spec = constant_problem(0.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_initial(&spec, &grid, 1000, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn initial_total_weight_is_center_riemann_sum() {
        let grid = GridSpec::<f64>::square(0.0, 2.0, 21).unwrap();
        let p = experiment2_problems(0.1f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ens = sample_initial(&p.potential, &grid, 500_000, 5.0, &mut rng);
        // direct midpoint quadrature of the closed form
        let h = 2.0 / 21.0;
        let mut quad = 0.0;
        for i in 0..21 {
            for j in 0..21 {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                quad += (-(x * x + y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI) * h * h;
            }
        }
        assert!((ens.total_weight() - quad).abs() < 1e-12 * quad);
    }

    #[test]
    fn degenerate_diffusion_does_not_move() {
        let spec = constant_problem(1.0, 0.0);
        let grid = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ens = sample_initial(&spec, &grid, 500, 0.0, &mut rng);
        let before = ens.clone();
        step(&mut ens, &spec, 0.01, &mut rng);
        assert_eq!(before, ens);
    }

    #[test]
    fn step_never_changes_weights() {
        let p = experiment1_problems(0.1f64).unwrap();
        let grid = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ens = sample_initial(&p.potential, &grid, 5000, 0.0, &mut rng);
        let w: Vec<f64> = ens.weights().to_vec();
        for _ in 0..10 {
            step(&mut ens, &p.potential, 0.001, &mut rng);
        }
        assert_eq!(ens.weights(), &w[..]);
    }

    #[test]
    fn diffusion_amplitude_follows_local_coefficient() {
        // E_x spec of the first experiment: zero drift, amplitude sqrt(2 d x^2 dt)
        let p = experiment1_problems(0.1f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut ens = ParticleEnsemble::with_capacity(n);
        for _ in 0..n {
            ens.push(Vec2::new(0.6, 0.4), 1.0);
        }
        step(&mut ens, &p.field_x, 0.001, &mut rng);
        let dx: Vec<f64> = (0..n).map(|k| ens.position(k).x - 0.6).collect();
        let mean = dx.iter().sum::<f64>() / n as f64;
        let var = dx.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = 2.0 * 0.1 * 0.36 * 0.001;
        // mean zero within 4 standard errors, variance within 4 standard errors
        assert!(mean.abs() < 4.0 * (expect / n as f64).sqrt());
        assert!((var - expect).abs() < 4.0 * expect * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn brownian_displacement_variance() {
        // constant D, no drift: Var[x(tau) - x(0)] = 2 D tau
        let spec = constant_problem(1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut ens = ParticleEnsemble::with_capacity(n);
        for _ in 0..n {
            ens.push(Vec2::new(0.0, 0.0), 1.0);
        }
        let (dt, steps) = (0.01, 50);
        for _ in 0..steps {
            step(&mut ens, &spec, dt, &mut rng);
        }
        let tau = dt * steps as f64;
        let xs: Vec<f64> = (0..n).map(|k| ens.position(k).x).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = 2.0 * 0.1 * tau;
        let se = expect * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "var {var} vs {expect} (se {se})");
    }

    #[test]
    fn boundary_absorbs_and_repopulates() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let spec = &p.potential;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ens = sample_initial(spec, &grid, 20_000, 0.0, &mut rng);
        let layer = BoundaryLayer::new(spec, &grid, 20_000, 0.0);
        ens.push(Vec2::new(1.01, 0.5), 1.0);
        let interior_before = estimate_field(&ens_without_outside(&ens, &grid), &grid).unwrap();
        let absorbed = apply_boundary(&mut ens, spec, &grid, &layer, 0.3, &mut rng);
        assert_eq!(absorbed, 1);
        let f = estimate_field(&ens, &grid).unwrap();
        for c in grid.cells() {
            if grid.is_boundary(c) {
                let g = (spec.dirichlet)(0.3, grid.center(c));
                assert!((f.get(c) - g).abs() < 1e-12 * g.abs().max(1.0));
            } else {
                assert_eq!(f.get(c), interior_before.get(c));
            }
        }
    }

    fn ens_without_outside(ens: &ParticleEnsemble<f64>, grid: &GridSpec<f64>) -> ParticleEnsemble<f64> {
        let mut e = ens.clone();
        e.retain(|p, _| grid.contains(p));
        e
    }

    #[test]
    fn zero_dirichlet_leaves_boundary_empty() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 7).unwrap();
        let mut spec = constant_problem(1.0, 0.1);
        spec.dirichlet = Arc::new(|_t, _r| 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut ens = sample_initial(&spec, &grid, 4900, 0.0, &mut rng);
        let layer = BoundaryLayer::new(&spec, &grid, 4900, 0.0);
        apply_boundary(&mut ens, &spec, &grid, &layer, 0.1, &mut rng);
        for (p, _) in ens.iter() {
            assert!(!grid.is_boundary(grid.locate(p).unwrap()));
        }
    }

    #[test]
    fn equal_weights_survive_roulette() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ens = ParticleEnsemble::new();
        for k in 0..100 {
            ens.push(Vec2::new(0.01 * k as f64, 0.5), 0.25);
        }
        let before = ens.clone();
        let rep = control_population(&mut ens, &grid, 1.0, 100, &mut rng);
        assert_eq!(rep, PopulationReport::default());
        assert_eq!(ens, before);
    }

    #[test]
    fn merge_rule() {
        let (p, w) = merge_pair((Vec2::new(0.0f64, 1.0), 0.3), (Vec2::new(1.0, 0.0), 0.1));
        assert!((w - 0.4).abs() < 1e-15);
        assert!((p.x - 0.25).abs() < 1e-15 && (p.y - 0.75).abs() < 1e-15);

        let grid = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.05, 0.05), 0.3);
        ens.push(Vec2::new(0.15, 0.15), 0.1);
        let merges = merge_same_cell(&mut ens, &grid, 0);
        assert_eq!(merges, 1);
        assert_eq!(ens.len(), 1);
        let (p, w) = ens.iter().next().unwrap();
        assert!((w - 0.4).abs() < 1e-15);
        assert!((p.x - 0.075).abs() < 1e-15 && (p.y - 0.075).abs() < 1e-15);
    }

    #[test]
    fn merging_preserves_cell_weights_and_signs() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ens = ParticleEnsemble::new();
        for _ in 0..2000 {
            let p = Vec2::new(f64::sample_unit(&mut rng), f64::sample_unit(&mut rng));
            let w = f64::sample_unit(&mut rng) - 0.4;
            ens.push(p, w);
        }
        let before = estimate_field(&ens, &grid).unwrap();
        merge_same_cell(&mut ens, &grid, 300);
        assert!(ens.len() <= 300);
        let after = estimate_field(&ens, &grid).unwrap();
        for c in grid.cells() {
            assert!((before.get(c) - after.get(c)).abs() < 1e-11);
        }
    }

    #[test]
    fn merging_takes_lightest_pairs_first() {
        let grid = GridSpec::<f64>::square(0.0, 1.0, 3).unwrap();
        let mut ens = ParticleEnsemble::new();
        for k in 0..4 {
            ens.push(Vec2::new(0.1 + 0.01 * k as f64, 0.1), 1.0);
        }
        for k in 0..6 {
            ens.push(Vec2::new(0.1, 0.2 + 0.01 * k as f64), 1e-3 * (1 + k) as f64);
        }
        assert_eq!(merge_same_cell(&mut ens, &grid, 8), 2);
        assert_eq!(ens.len(), 8);
        let heavy = ens.weights().iter().filter(|w| **w == 1.0).count();
        assert_eq!(heavy, 4);
        let mut light: Vec<f64> = ens.weights().iter().copied().filter(|w| *w < 1.0).collect();
        light.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(light.len(), 4);
        assert!((light[0] - 3e-3).abs() < 1e-15 && (light[3] - 7e-3).abs() < 1e-15);
    }

    #[test]
    fn roulette_is_unbiased() {
        // fixed ensemble with a spread of weights; 1000 trials of 200 roulette
        // applications each
        let grid = GridSpec::<f64>::square(0.0, 1.0, 5).unwrap();
        let mut base = ParticleEnsemble::new();
        for k in 0..50 {
            let w = if k % 2 == 0 { 1.0 } else { 0.02 * (k as f64 + 1.0) / 50.0 };
            base.push(Vec2::new(0.5, 0.5), if k % 7 == 0 { -w } else { w });
        }
        let original = base.total_weight();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let trials = 1000;
        let mut totals = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut ens = base.clone();
            for _ in 0..200 {
                control_population(&mut ens, &grid, 0.5, 1000, &mut rng);
            }
            totals.push(ens.total_weight());
        }
        let mean = totals.iter().sum::<f64>() / trials as f64;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - original).abs() < 3.0 * se, "mean {mean} vs {original}, se {se}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.25f64, 0.5), -1.5);
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,y,weight");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].ends_with("-1.5000000000000000e0"));
    }
}
