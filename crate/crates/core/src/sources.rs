//! Operator-split source handling: multiplicative reaction updates and
//! per-cell particle injection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::problems::{CouplingMode, ProblemSpec, ScalarFn};
use crate::scalar::Real;
use crate::transport::ParticleEnsemble;

/// Field estimates published at the start of a step.
#[derive(Debug, Clone)]
pub struct SourceFieldSet<T> {
    pub phi_hat: ScalarField<T>,
    pub ex_hat: ScalarField<T>,
    pub ey_hat: ScalarField<T>,
    pub time: T,
}

impl<T: Real> SourceFieldSet<T> {
    pub fn new(phi_hat: ScalarField<T>, ex_hat: ScalarField<T>, ey_hat: ScalarField<T>, time: T) -> Result<Self> {
        phi_hat.ensure_same_grid(&ex_hat)?;
        phi_hat.ensure_same_grid(&ey_hat)?;
        Ok(Self {
            phi_hat,
            ex_hat,
            ey_hat,
            time,
        })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.phi_hat.grid()
    }
}

/// `w <- w (1 + c(t, X) dt)` for every particle.
///
/// Requires `dt * max|c| < 1` over the cell centers of `grid`.
pub fn apply_reaction<T: Real>(
    ens: &mut ParticleEnsemble<T>,
    reaction: &ScalarFn<T>,
    grid: &GridSpec<T>,
    t: T,
    dt: T,
) -> Result<()> {
    let c_max = grid
        .cells()
        .map(|c| reaction(t, grid.center(c)).abs())
        .fold(T::zero(), T::max);
    if !(dt * c_max < T::one()) {
        return Err(Error::UnstableReaction {
            time: t.to_f64_lossy(),
            product: (dt * c_max).to_f64_lossy(),
            suggested_dt: (T::of(0.5) / c_max).to_f64_lossy(),
        });
    }
    ens.update_weights(|p, w| w * (T::one() + reaction(t, p) * dt));
    Ok(())
}

/// Per-cell injection rate of the problem's source at time `t`, using the
/// published estimates for companion fields.
///
/// In `Neglect` mode the coupling term is zero and the `E_y` estimate is
/// never read. In `Exact` mode the coupling derivative comes from the exact
/// solution. Problems without injected sources yield a zero field.
pub fn evaluate_injection<T: Real>(
    spec: &ProblemSpec<T>,
    fields: &SourceFieldSet<T>,
    mode: CouplingMode,
    t: T,
) -> Result<ScalarField<T>> {
    let grid = *fields.grid();
    let src = &spec.injection;
    let mut rate = ScalarField::zeros(grid);
    if src.is_empty() {
        return Ok(rate);
    }
    let coupling = match (&src.coupling, mode) {
        (Some(cp), CouplingMode::Exact) => {
            let deriv = cp
                .exact_derivative
                .as_ref()
                .ok_or_else(|| Error::MissingExactCoupling(spec.name.clone()))?;
            Some((&cp.coefficient, deriv))
        }
        _ => None,
    };
    for cell in grid.cells() {
        let r = grid.center(cell);
        let mut s = T::zero();
        if let Some(a) = &src.potential_coefficient {
            s = s + a(t, r) * fields.phi_hat.get(cell);
        }
        if let Some((coef, deriv)) = coupling {
            s = s + coef(t, r) * deriv(t, r);
        }
        if let Some(f) = &src.forcing {
            s = s + f(t, r);
        }
        rate.set(cell, s);
    }
    Ok(rate)
}

/// Adds `n_per_cell` uniformly placed particles to every cell with a nonzero
/// rate, each carrying `s_c dt area / n_per_cell`. Returns the number added.
pub fn inject<T: Real, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    rate: &ScalarField<T>,
    dt: T,
    n_per_cell: usize,
    rng: &mut R,
) -> usize {
    assert!(n_per_cell >= 1, "n_per_cell must be at least 1");
    let grid = rate.grid();
    let scale = dt * grid.cell_area() / T::of_usize(n_per_cell);
    let mut added = 0;
    for cell in grid.cells() {
        let s = rate.get(cell);
        if s != T::zero() {
            let w = s * scale;
            for _ in 0..n_per_cell {
                ens.push(grid.sample_in_cell(cell, rng), w);
            }
            added += n_per_cell;
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{estimate_field, Cell};
    use crate::problems::{experiment1_problems, experiment2_problems};
    use crate::scalar::Vec2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_grid() -> GridSpec<f64> {
        GridSpec::<f64>::square(0.0, 1.0, 15).unwrap()
    }

    fn snapshot(grid: GridSpec<f64>, phi: f64, ey: f64) -> SourceFieldSet<f64> {
        SourceFieldSet::new(
            ScalarField::from_fn(grid, |_| phi),
            ScalarField::zeros(grid),
            ScalarField::from_fn(grid, |_| ey),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_reaction_keeps_weights() {
        let g = unit_grid();
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.2, 0.3), 0.7);
        let zero: ScalarFn<f64> = Arc::new(|_, _| 0.0);
        apply_reaction(&mut ens, &zero, &g, 0.0, 0.001).unwrap();
        assert_eq!(ens.weight(0), 0.7);
    }

    #[test]
    fn constant_reaction_scales_weights() {
        let g = unit_grid();
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.2, 0.3), 1.0);
        ens.push(Vec2::new(0.9, 0.1), -2.0);
        let c: ScalarFn<f64> = Arc::new(|_, _| -0.1);
        apply_reaction(&mut ens, &c, &g, 0.0, 0.001).unwrap();
        assert!((ens.weight(0) - 0.9999).abs() < 1e-15);
        assert!((ens.weight(1) + 2.0 * 0.9999).abs() < 1e-15);
    }

    #[test]
    fn repeated_reaction_approaches_exponential() {
        let g = unit_grid();
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.5, 0.5), 1.0);
        let c: ScalarFn<f64> = Arc::new(|_, _| -0.1);
        for _ in 0..1000 {
            apply_reaction(&mut ens, &c, &g, 0.0, 0.001).unwrap();
        }
        let gap = (ens.weight(0) - (-0.1f64).exp()).abs() / (-0.1f64).exp();
        assert!(gap < 1e-4);
        assert!((ens.weight(0) - 0.9999f64.powi(1000)).abs() < 1e-13);
    }

    #[test]
    fn unstable_reaction_is_rejected() {
        let g = unit_grid();
        let mut ens = ParticleEnsemble::new();
        let c: ScalarFn<f64> = Arc::new(|_, r: Vec2<f64>| -20.0 * r.x);
        let err = apply_reaction(&mut ens, &c, &g, 0.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::UnstableReaction { .. }));
    }

    #[test]
    fn potential_coefficient_vanishes_at_midline() {
        let g = unit_grid();
        let p = experiment1_problems(0.1f64).unwrap();
        let rate = evaluate_injection(&p.field_x, &snapshot(g, 0.3, 0.0), CouplingMode::Neglect, 0.0).unwrap();
        // cell 7 has center x = 0.5
        assert!(rate.get(Cell::new(7, 4)).abs() < 1e-16);
        // elsewhere (4 d x - 2 d) phi_hat
        let x = g.center(Cell::new(2, 4)).x;
        assert!((rate.get(Cell::new(2, 4)) - (0.4 * x - 0.2) * 0.3).abs() < 1e-15);
    }

    #[test]
    fn exact_coupling_value() {
        let g = unit_grid();
        let p = experiment1_problems(0.1f64).unwrap();
        let zero_phi = snapshot(g, 0.0, 0.0);
        let rate = evaluate_injection(&p.field_x, &zero_phi, CouplingMode::Exact, 0.0).unwrap();
        // 2 d x dE_y/dy with dE_y/dy = -exp(-(x + y)) at (0.5, 0.5)
        let v = rate.get(Cell::new(7, 7));
        assert!((v + 0.1 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v.abs() - 0.0367879).abs() < 1e-7);
    }

    #[test]
    fn neglect_mode_ignores_field_y_estimate() {
        let g = unit_grid();
        let p = experiment1_problems(0.1f64).unwrap();
        let clean = evaluate_injection(&p.field_x, &snapshot(g, 0.3, 0.0), CouplingMode::Neglect, 0.2).unwrap();
        let poisoned = evaluate_injection(&p.field_x, &snapshot(g, 0.3, f64::NAN), CouplingMode::Neglect, 0.2).unwrap();
        assert_eq!(clean, poisoned);
        let exact = evaluate_injection(&p.field_x, &snapshot(g, 0.3, f64::NAN), CouplingMode::Exact, 0.2).unwrap();
        exact.check_finite().unwrap();
    }

    #[test]
    fn no_source_problems_give_zero_rate() {
        let g = GridSpec::<f64>::square(0.0, 2.0, 11).unwrap();
        let p = experiment2_problems(0.1f64).unwrap();
        let snap = snapshot(g, 1.0, 1.0);
        for spec in p.iter() {
            for mode in [CouplingMode::Neglect, CouplingMode::Exact] {
                let r = evaluate_injection(spec, &snap, mode, 5.0).unwrap();
                assert!(r.values().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn exact_mode_without_exact_derivative_fails() {
        let g = unit_grid();
        let mut p = experiment1_problems(0.1f64).unwrap();
        p.field_x.injection.coupling.as_mut().unwrap().exact_derivative = None;
        let snap = snapshot(g, 0.3, 0.0);
        assert!(matches!(
            evaluate_injection(&p.field_x, &snap, CouplingMode::Exact, 0.0),
            Err(Error::MissingExactCoupling(_))
        ));
        assert!(evaluate_injection(&p.field_x, &snap, CouplingMode::Neglect, 0.0).is_ok());
    }

    #[test]
    fn injection_weights_and_mass() {
        let g = unit_grid();
        let mut rate = ScalarField::zeros(g);
        rate.set(Cell::new(3, 9), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ens = ParticleEnsemble::new();
        assert_eq!(inject(&mut ens, &rate, 0.001, 4, &mut rng), 4);
        for (p, w) in ens.iter() {
            assert_eq!(g.locate(p), Some(Cell::new(3, 9)));
            assert!((w - 2.0 * 0.001 / (225.0 * 4.0)).abs() < 1e-18);
        }

        let zero = ScalarField::zeros(g);
        let before = ens.clone();
        inject(&mut ens, &zero, 0.001, 4, &mut rng);
        assert_eq!(ens, before);
    }

    #[test]
    fn injected_mass_matches_rate_integral() {
        let g = unit_grid();
        let rate = ScalarField::from_fn(g, |r| (r.x - 0.4) * (1.0 + r.y));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ens = ParticleEnsemble::new();
        ens.push(Vec2::new(0.5, 0.5), 1.0);
        let before = estimate_field(&ens, &g).unwrap();
        inject(&mut ens, &rate, 0.01, 3, &mut rng);
        let after = estimate_field(&ens, &g).unwrap();
        let added = after.integral() - before.integral();
        assert!((added - rate.integral() * 0.01).abs() < 1e-15);
    }
}
