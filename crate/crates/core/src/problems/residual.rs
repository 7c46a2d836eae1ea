//! Finite-difference residual of a manufactured solution, used to check
//! that the analytic coefficients and sources are consistent with the
//! claimed exact solution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ProblemSpec;
use crate::scalar::{Real, Vec2};

/// `du/dt + div(v u) - div(D grad u) - (c u + s)` at `(t, r)` with every
/// derivative taken by centered differences of step `h`.
///
/// Returns `None` when the problem has no exact solution or its source needs
/// an exact companion that is not available.
pub fn manufactured_residual<T: Real>(spec: &ProblemSpec<T>, t: T, r: Vec2<T>, h: T) -> Option<T> {
    let u = spec.exact.as_ref()?;
    let two = T::of(2.0);
    let half = h / two;
    let ex = Vec2::new(h, T::zero());
    let ey = Vec2::new(T::zero(), h);
    let hx = Vec2::new(half, T::zero());
    let hy = Vec2::new(T::zero(), half);

    let dudt = (u(t + h, r) - u(t - h, r)) / (two * h);

    let flux_x = |p: Vec2<T>| spec.advection_at(p).x * u(t, p);
    let flux_y = |p: Vec2<T>| spec.advection_at(p).y * u(t, p);
    let div_vu = (flux_x(r + ex) - flux_x(r - ex)) / (two * h)
        + (flux_y(r + ey) - flux_y(r - ey)) / (two * h);

    let d = &spec.diffusion;
    let u0 = u(t, r);
    let div_dgrad = (d(r + hx) * (u(t, r + ex) - u0) - d(r - hx) * (u0 - u(t, r - ex))) / (h * h)
        + (d(r + hy) * (u(t, r + ey) - u0) - d(r - hy) * (u0 - u(t, r - ey))) / (h * h);

    let source = spec.reaction_at(t, r) * u0 + spec.injection.exact_rate(t, r)?;
    Some(dudt + div_vu - div_dgrad - source)
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualReport<T> {
    pub max_abs: T,
    pub worst_time: T,
    pub worst_point: Vec2<T>,
    pub samples: usize,
}

/// Largest |residual| over `samples` uniformly random interior points and
/// times in `[t_lo, t_hi]`. The sampled points stay `margin` away from the
/// domain edge.
pub fn max_residual<T: Real>(
    spec: &ProblemSpec<T>,
    (t_lo, t_hi): (T, T),
    samples: usize,
    h: T,
    seed: u64,
) -> Option<ResidualReport<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = T::of(0.01);
    let (x0, x1) = spec.x_range;
    let (y0, y1) = spec.y_range;
    let lerp = |a: T, b: T, s: T| a + (b - a) * s;
    let mut report = ResidualReport {
        max_abs: T::zero(),
        worst_time: t_lo,
        worst_point: Vec2::zero(),
        samples,
    };
    for _ in 0..samples {
        let t = lerp(t_lo, t_hi, T::sample_unit(&mut rng));
        let p = Vec2::new(
            lerp(x0 + margin, x1 - margin, T::sample_unit(&mut rng)),
            lerp(y0 + margin, y1 - margin, T::sample_unit(&mut rng)),
        );
        let res = manufactured_residual(spec, t, p, h)?.abs();
        if !(res <= report.max_abs) {
            report.max_abs = res;
            report.worst_time = t;
            report.worst_point = p;
        }
    }
    Some(report)
}
