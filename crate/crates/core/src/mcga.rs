//! Coupled particle solve of the potential and both field components.
//!
//! Each step publishes a snapshot of all three field estimates, then advances
//! every solver through transport, reaction, injection, boundary and
//! population control. Companion-dependent sources read only the snapshot,
//! so the three updates are independent within a step.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{estimate_field, GridSpec, ScalarField};
use crate::problems::{ProblemSet, ProblemSpec, RunConfig};
use crate::scalar::{Real, Vec2};
use crate::sources::{apply_reaction, evaluate_injection, inject, SourceFieldSet};
use crate::streams::{stream_rng, FieldId};
use crate::transport::{
    apply_boundary, control_population, sample_initial, step, BoundaryLayer, ParticleEnsemble,
};

/// Particle solver for one scalar equation.
pub struct FieldSolver<'a, T: Real> {
    id: FieldId,
    spec: &'a ProblemSpec<T>,
    grid: GridSpec<T>,
    ensemble: ParticleEnsemble<T>,
    rng: ChaCha8Rng,
    boundary: BoundaryLayer<T>,
    config: RunConfig<T>,
}

impl<'a, T: Real> FieldSolver<'a, T> {
    /// Samples the initial ensemble from the replicate's stream for `id`.
    pub fn new(
        id: FieldId,
        spec: &'a ProblemSpec<T>,
        grid: GridSpec<T>,
        config: &RunConfig<T>,
        replicate: usize,
    ) -> Result<Self> {
        config.validate()?;
        check_domain(spec, &grid)?;
        check_diffusion(spec, &grid)?;
        if replicate == 0 {
            warn_boundary_reach(spec, &grid, config.dt);
        }
        let mut rng = stream_rng(config.seed, replicate, id);
        let ensemble = sample_initial(spec, &grid, config.n_particles, config.t0, &mut rng);
        let boundary = BoundaryLayer::new(spec, &grid, config.n_particles, config.t0);
        Ok(Self {
            id,
            spec,
            grid,
            ensemble,
            rng,
            boundary,
            config: *config,
        })
    }

    pub fn id(&self) -> FieldId {
        self.id
    }

    pub fn ensemble(&self) -> &ParticleEnsemble<T> {
        &self.ensemble
    }

    pub fn estimate(&self) -> Result<ScalarField<T>> {
        estimate_field(&self.ensemble, &self.grid)
    }

    /// Advances from step `k` to `k + 1`. `snapshot` must be present when the
    /// problem injects a companion-dependent source.
    pub fn advance(&mut self, k: usize, snapshot: Option<&SourceFieldSet<T>>) -> Result<()> {
        let cfg = &self.config;
        let (t, t_next, dt) = (cfg.time_at(k), cfg.time_at(k + 1), cfg.dt);
        let opts = cfg.options;

        step(&mut self.ensemble, self.spec, dt, &mut self.rng);
        if let Some(c) = &self.spec.reaction {
            apply_reaction(&mut self.ensemble, c, &self.grid, t, dt)?;
        }
        if !self.spec.injection.is_empty() {
            let rate = match snapshot {
                Some(snap) => evaluate_injection(self.spec, snap, cfg.coupling_mode, t)?,
                None if self.spec.injection.needs_potential() => {
                    return Err(Error::MissingCompanion(self.spec.name.clone()));
                }
                None => {
                    let zero = ScalarField::zeros(self.grid);
                    let snap = SourceFieldSet::new(zero.clone(), zero.clone(), zero, t)?;
                    evaluate_injection(self.spec, &snap, cfg.coupling_mode, t)?
                }
            };
            inject(&mut self.ensemble, &rate, dt, opts.n_per_cell, &mut self.rng);
        }
        apply_boundary(
            &mut self.ensemble,
            self.spec,
            &self.grid,
            &self.boundary,
            t_next,
            &mut self.rng,
        );
        let trigger = (opts.population_trigger * T::of_usize(cfg.n_particles))
            .to_usize()
            .unwrap_or(usize::MAX);
        if self.ensemble.len() > trigger {
            let report = control_population(
                &mut self.ensemble,
                &self.grid,
                opts.w_cap,
                cfg.n_particles,
                &mut self.rng,
            );
            log::debug!("{} step {k}: population control {report:?}", self.spec.name);
        }
        if !self.ensemble.all_weights_finite() {
            return Err(Error::NonFiniteWeight {
                field: self.spec.name.clone(),
                step: k,
            });
        }
        Ok(())
    }
}

fn check_domain<T: Real>(spec: &ProblemSpec<T>, grid: &GridSpec<T>) -> Result<()> {
    if spec.x_range == grid.x_range() && spec.y_range == grid.y_range() {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!(
            "problem '{}' domain does not match the grid",
            spec.name
        )))
    }
}

fn check_diffusion<T: Real>(spec: &ProblemSpec<T>, grid: &GridSpec<T>) -> Result<()> {
    let probe = |p: Vec2<T>| {
        let d = (spec.diffusion)(p);
        d >= T::zero() && d.is_finite()
    };
    let ok = grid.cells().all(|c| probe(grid.center(c)) && probe(grid.corner(c)));
    let (x1, y1) = (grid.x_range().1, grid.y_range().1);
    if ok && probe(Vec2::new(x1, y1)) {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!(
            "problem '{}' has negative or non-finite diffusion",
            spec.name
        )))
    }
}

/// The re-populated boundary layer is one cell thick; when a step's diffusion
/// reach approaches that width, mass that would arrive from beyond the domain
/// edge is missing and the adjacent interior cells are biased low.
fn warn_boundary_reach<T: Real>(spec: &ProblemSpec<T>, grid: &GridSpec<T>, dt: T) {
    let d_max = grid
        .boundary_cells()
        .into_iter()
        .map(|c| (spec.diffusion)(grid.center(c)))
        .fold(T::zero(), T::max);
    let reach = T::of(2.0) * (T::of(2.0) * d_max * dt).sqrt();
    let width = grid.dx().min(grid.dy());
    if reach > width {
        log::warn!(
            "{}: two diffusion lengths per step ({:.3e}) exceed the boundary cell width ({:.3e}); \
             expect a boundary-layer bias of order the step size",
            spec.name,
            reach.to_f64_lossy(),
            width.to_f64_lossy()
        );
    }
}

/// Final (or window-averaged) estimates of the three fields.
#[derive(Debug, Clone, PartialEq)]
pub struct McgaFields<T> {
    pub phi: ScalarField<T>,
    pub ex: ScalarField<T>,
    pub ey: ScalarField<T>,
}

impl<T: Real> McgaFields<T> {
    pub fn norm(&self) -> Result<ScalarField<T>> {
        field_norm(&self.ex, &self.ey)
    }
}

/// Lockstep state of the three solvers.
pub struct CoupledState<'a, T: Real> {
    solvers: [FieldSolver<'a, T>; 3],
    clock: usize,
    snapshot: SourceFieldSet<T>,
}

impl<'a, T: Real> CoupledState<'a, T> {
    pub fn new(problems: &'a ProblemSet<T>, grid: GridSpec<T>, config: &RunConfig<T>, replicate: usize) -> Result<Self> {
        if !(problems.potential.same_domain(&problems.field_x) && problems.potential.same_domain(&problems.field_y)) {
            return Err(Error::InvalidProblem("field problems have different domains".into()));
        }
        let solvers = [
            FieldSolver::new(FieldId::Potential, &problems.potential, grid, config, replicate)?,
            FieldSolver::new(FieldId::FieldX, &problems.field_x, grid, config, replicate)?,
            FieldSolver::new(FieldId::FieldY, &problems.field_y, grid, config, replicate)?,
        ];
        let snapshot = Self::publish(&solvers, config.t0)?;
        Ok(Self {
            solvers,
            clock: 0,
            snapshot,
        })
    }

    fn publish(solvers: &[FieldSolver<'a, T>; 3], time: T) -> Result<SourceFieldSet<T>> {
        SourceFieldSet::new(
            solvers[0].estimate()?,
            solvers[1].estimate()?,
            solvers[2].estimate()?,
            time,
        )
    }

    pub fn steps_taken(&self) -> usize {
        self.clock
    }

    pub fn snapshot(&self) -> &SourceFieldSet<T> {
        &self.snapshot
    }

    pub fn solver(&self, id: FieldId) -> &FieldSolver<'a, T> {
        &self.solvers[FieldId::ALL.iter().position(|f| *f == id).expect("known id")]
    }

    /// One step of all three solvers from the published snapshot, then
    /// publication of the new snapshot.
    pub fn advance(&mut self) -> Result<()> {
        let k = self.clock;
        for solver in self.solvers.iter_mut() {
            solver.advance(k, Some(&self.snapshot))?;
        }
        self.clock += 1;
        let time = self.solvers[0].config.time_at(self.clock);
        self.snapshot = Self::publish(&self.solvers, time)?;
        Ok(())
    }

    /// Final ensembles in [`FieldId::ALL`] order.
    pub fn into_ensembles(self) -> [ParticleEnsemble<T>; 3] {
        self.solvers.map(|s| s.ensemble)
    }

    pub fn fields(&self) -> McgaFields<T> {
        McgaFields {
            phi: self.snapshot.phi_hat.clone(),
            ex: self.snapshot.ex_hat.clone(),
            ey: self.snapshot.ey_hat.clone(),
        }
    }
}

/// Running mean of fields over a trailing window.
struct WindowAverage<T> {
    sums: Option<[Vec<T>; 3]>,
    count: usize,
}

impl<T: Real> WindowAverage<T> {
    fn new() -> Self {
        Self { sums: None, count: 0 }
    }

    fn add(&mut self, f: &McgaFields<T>) {
        let parts = [f.phi.values(), f.ex.values(), f.ey.values()];
        match &mut self.sums {
            None => self.sums = Some(parts.map(|v| v.to_vec())),
            Some(s) => {
                for (acc, v) in s.iter_mut().zip(parts) {
                    for (a, &b) in acc.iter_mut().zip(v) {
                        *a = *a + b;
                    }
                }
            }
        }
        self.count += 1;
    }

    fn finish(self, template: &McgaFields<T>) -> Result<McgaFields<T>> {
        let n = T::of_usize(self.count);
        let [a, b, c] = self.sums.expect("at least one sample");
        let scale = |v: Vec<T>| v.into_iter().map(|x| x / n).collect::<Vec<T>>();
        Ok(McgaFields {
            phi: ScalarField::from_values(*template.phi.grid(), scale(a))?,
            ex: ScalarField::from_values(*template.ex.grid(), scale(b))?,
            ey: ScalarField::from_values(*template.ey.grid(), scale(c))?,
        })
    }
}

/// Runs the coupled solve for replicate `replicate` of `config` and returns
/// the estimates at the end time (averaged over the last
/// `config.options.average_window` steps when nonzero).
pub fn run_mcga_replicate<T: Real>(
    problems: &ProblemSet<T>,
    grid: GridSpec<T>,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<McgaFields<T>> {
    run_coupled(problems, grid, config, replicate).map(|(fields, _)| fields)
}

/// [`run_mcga_replicate`] that also returns the final particle ensembles in
/// [`FieldId::ALL`] order.
pub fn run_mcga_with_ensembles<T: Real>(
    problems: &ProblemSet<T>,
    grid: GridSpec<T>,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<(McgaFields<T>, [ParticleEnsemble<T>; 3])> {
    run_coupled(problems, grid, config, replicate).map(|(fields, state)| (fields, state.into_ensembles()))
}

fn run_coupled<'a, T: Real>(
    problems: &'a ProblemSet<T>,
    grid: GridSpec<T>,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<(McgaFields<T>, CoupledState<'a, T>)> {
    let steps = config.step_count()?;
    let window = config.options.average_window.min(steps);
    let mut state = CoupledState::new(problems, grid, config, replicate)?;
    let mut avg = WindowAverage::new();
    for k in 0..steps {
        state.advance()?;
        if window > 0 && k + window >= steps {
            avg.add(&state.fields());
        }
    }
    let last = state.fields();
    let fields = if window > 0 { avg.finish(&last)? } else { last };
    Ok((fields, state))
}

/// Replicate 0 of [`run_mcga_replicate`].
pub fn run_mcga<T: Real>(problems: &ProblemSet<T>, grid: GridSpec<T>, config: &RunConfig<T>) -> Result<McgaFields<T>> {
    run_mcga_replicate(problems, grid, config, 0)
}

/// Standalone solve of one equation, drawing from the same stream the
/// coupled solver would assign to `id`. Fails if the problem needs a
/// companion potential estimate.
pub fn solve_single<T: Real>(
    spec: &ProblemSpec<T>,
    id: FieldId,
    grid: GridSpec<T>,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<ScalarField<T>> {
    solve_single_with_ensemble(spec, id, grid, config, replicate).map(|(field, _)| field)
}

/// [`solve_single`] that also returns the final particle ensemble.
pub fn solve_single_with_ensemble<T: Real>(
    spec: &ProblemSpec<T>,
    id: FieldId,
    grid: GridSpec<T>,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<(ScalarField<T>, ParticleEnsemble<T>)> {
    if spec.injection.needs_potential() {
        return Err(Error::MissingCompanion(spec.name.clone()));
    }
    let steps = config.step_count()?;
    let mut solver = FieldSolver::new(id, spec, grid, config, replicate)?;
    for k in 0..steps {
        solver.advance(k, None)?;
    }
    let field = solver.estimate()?;
    Ok((field, solver.ensemble))
}

/// Per-cell `sqrt(ex^2 + ey^2)`.
pub fn field_norm<T: Real>(ex: &ScalarField<T>, ey: &ScalarField<T>) -> Result<ScalarField<T>> {
    ex.zip_with(ey, |a, b| a.hypot(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;
    use crate::problems::{experiment1_problems, experiment2_problems};

    #[test]
    fn norm_examples() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 3).unwrap();
        let ex = ScalarField::from_fn(g, |_| 3.0);
        let ey = ScalarField::from_fn(g, |_| 4.0);
        assert!(field_norm(&ex, &ey).unwrap().values().iter().all(|&v| v == 5.0));
        let ex = ScalarField::from_fn(g, |r| r.x - 0.6);
        let n = field_norm(&ex, &ScalarField::zeros(g)).unwrap();
        for c in g.cells() {
            assert_eq!(n.get(c), ex.get(c).abs());
        }
        let other = ScalarField::zeros(GridSpec::<f64>::square(0.0, 1.0, 4).unwrap());
        assert!(field_norm(&ex, &other).is_err());
    }

    #[test]
    fn exact_norm_of_first_experiment() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let t = 0.7;
        let ex = ScalarField::from_fn(g, |r| p.field_x.exact_at(t, r).unwrap());
        let ey = ScalarField::from_fn(g, |r| p.field_y.exact_at(t, r).unwrap());
        let n = field_norm(&ex, &ey).unwrap();
        for c in g.cells() {
            let r = g.center(c);
            let expect = 2f64.sqrt() * (-(r.x + r.y)).exp() * (-0.1 * t).exp();
            assert!((n.get(c) - expect).abs() < 1e-14);
        }
    }

    fn small_config(n: usize, t0: f64, t_end: f64, dt: f64) -> RunConfig<f64> {
        let mut cfg = RunConfig::new(n, t0, t_end, dt).unwrap();
        cfg.seed = 99;
        cfg
    }

    #[test]
    fn uncoupled_field_matches_single_solve() {
        let g = GridSpec::<f64>::square(0.0, 2.0, 11).unwrap();
        let p = experiment2_problems(0.1f64).unwrap();
        let cfg = small_config(20_000, 5.0, 5.2, 0.01);
        let coupled = run_mcga_replicate(&p, g, &cfg, 3).unwrap();
        let single = solve_single(&p.field_x, FieldId::FieldX, g, &cfg, 3).unwrap();
        assert_eq!(coupled.ex, single);
        let single_phi = solve_single(&p.potential, FieldId::Potential, g, &cfg, 3).unwrap();
        assert_eq!(coupled.phi, single_phi);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 7).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let cfg = small_config(5_000, 0.0, 0.05, 0.001);
        let a = run_mcga(&p, g, &cfg).unwrap();
        let b = run_mcga(&p, g, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.seed = 100;
        assert_ne!(run_mcga(&p, g, &other).unwrap().ex, a.ex);
    }

    #[test]
    fn field_x_needs_potential_snapshot() {
        let g = GridSpec::<f64>::square(0.0, 1.0, 7).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let cfg = small_config(1_000, 0.0, 0.01, 0.001);
        assert!(matches!(
            solve_single(&p.field_x, FieldId::FieldX, g, &cfg, 0),
            Err(Error::MissingCompanion(_))
        ));
    }

    #[test]
    fn mismatched_domain_is_rejected() {
        let g = GridSpec::<f64>::square(0.0, 2.0, 7).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let cfg = small_config(1_000, 0.0, 0.01, 0.001);
        assert!(run_mcga(&p, g, &cfg).is_err());
    }

    #[test]
    fn short_run_tracks_exact_solution() {
        // 50 steps of the first experiment: per-cell noise is ~7 % at this N,
        // so check the interior mean bias and the median error instead
        let g = GridSpec::<f64>::square(0.0, 1.0, 15).unwrap();
        let p = experiment1_problems(0.1f64).unwrap();
        let cfg = small_config(50_000, 0.0, 0.05, 0.001);
        let out = run_mcga(&p, g, &cfg).unwrap();
        for (field, spec) in [(&out.phi, &p.potential), (&out.ex, &p.field_x), (&out.ey, &p.field_y)] {
            let mut rel: Vec<f64> = g
                .cells()
                .filter(|c| !g.is_boundary(*c))
                .map(|c| {
                    let exact = spec.exact_at(0.05, g.center(c)).unwrap();
                    (field.get(c) - exact) / exact
                })
                .collect();
            let bias = rel.iter().sum::<f64>() / rel.len() as f64;
            assert!(bias.abs() < 0.02, "{}: bias {bias}", spec.name);
            rel.iter_mut().for_each(|r| *r = r.abs());
            rel.sort_by(|a, b| a.total_cmp(b));
            let median = rel[rel.len() / 2];
            assert!(median < 0.1, "{}: median {median}", spec.name);
        }
        assert!(out.ex.get(Cell::new(7, 7)) > 0.0);
    }

    #[test]
    fn window_average_of_one_step_is_final_estimate() {
        let g = GridSpec::<f64>::square(0.0, 2.0, 9).unwrap();
        let p = experiment2_problems(0.1f64).unwrap();
        let mut cfg = small_config(5_000, 5.0, 5.1, 0.01);
        let last = run_mcga(&p, g, &cfg).unwrap();
        cfg.options.average_window = 1;
        let avg = run_mcga(&p, g, &cfg).unwrap();
        for (a, b) in last.ex.values().iter().zip(avg.ex.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        cfg.options.average_window = 5;
        let avg5 = run_mcga(&p, g, &cfg).unwrap();
        assert_ne!(avg5.ex, last.ex);
    }

    #[test]
    fn works_in_single_precision() {
        let g = GridSpec::<f32>::square(0.0, 2.0, 11).unwrap();
        let p = experiment2_problems(0.1f32).unwrap();
        let cfg = RunConfig::new(20_000, 5.0f32, 5.5, 0.01).unwrap();
        let out = run_mcga(&p, g, &cfg).unwrap();
        let mid = g.middle_cell();
        let exact = p.field_x.exact_at(5.5, g.center(mid)).unwrap();
        assert!((out.ex.get(mid) - exact).abs() < 0.3 * exact);
    }
}
