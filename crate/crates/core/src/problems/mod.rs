//! Problem definitions: coefficient functions, boundary and initial data,
//! and the manufactured solutions of the two reference experiments.
//!
//! Every scalar equation handled here has the form
//!
//! ```text
//! du/dt + div(v u) = div(D grad u) + c u + s
//! ```
//!
//! where `s` is an injected source that may depend on companion field
//! estimates. Particles realize the transport part through an Itô diffusion
//! with drift `v + grad D` and amplitude `sqrt(2 D)`.

mod custom;
mod residual;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use custom::{CustomProblem, ExpPoly, ExpTerm};
pub use residual::{manufactured_residual, max_residual, ResidualReport};

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec2};

/// Scalar function of time and position.
pub type ScalarFn<T> = Arc<dyn Fn(T, Vec2<T>) -> T + Send + Sync>;
/// Time-independent scalar function of position.
pub type SpatialFn<T> = Arc<dyn Fn(Vec2<T>) -> T + Send + Sync>;
/// Time-independent vector function of position.
pub type VectorFn<T> = Arc<dyn Fn(Vec2<T>) -> Vec2<T> + Send + Sync>;

/// How the cross-component derivative in the field equations is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CouplingMode {
    /// The coupling term is set to zero.
    #[default]
    Neglect,
    /// The coupling term is evaluated from the exact manufactured solution.
    Exact,
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingMode::Neglect => "neglect",
            CouplingMode::Exact => "exact",
        })
    }
}

impl FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neglect" => Ok(CouplingMode::Neglect),
            "exact" => Ok(CouplingMode::Exact),
            other => Err(Error::Parse(format!(
                "unknown coupling mode '{other}' (expected neglect|exact)"
            ))),
        }
    }
}

/// Cross-component coupling `coefficient(t, r) * d(companion)`, where the
/// derivative of the companion field is only available from an exact solution.
#[derive(Clone)]
pub struct CouplingTerm<T> {
    pub coefficient: ScalarFn<T>,
    pub exact_derivative: Option<ScalarFn<T>>,
}

/// Source terms realized by injecting new particles.
#[derive(Clone)]
pub struct InjectionSource<T> {
    /// Multiplies the companion potential estimate.
    pub potential_coefficient: Option<ScalarFn<T>>,
    /// Exact companion potential, used only by noise-free reference solvers.
    pub exact_potential: Option<ScalarFn<T>>,
    pub coupling: Option<CouplingTerm<T>>,
    /// Known forcing independent of other fields.
    pub forcing: Option<ScalarFn<T>>,
}

impl<T> Default for InjectionSource<T> {
    fn default() -> Self {
        Self {
            potential_coefficient: None,
            exact_potential: None,
            coupling: None,
            forcing: None,
        }
    }
}

impl<T: Real> InjectionSource<T> {
    pub fn is_empty(&self) -> bool {
        self.potential_coefficient.is_none() && self.coupling.is_none() && self.forcing.is_none()
    }

    pub fn needs_potential(&self) -> bool {
        self.potential_coefficient.is_some()
    }

    /// Source rate with every companion quantity taken from exact solutions.
    /// `None` if some required exact companion is missing.
    pub fn exact_rate(&self, t: T, r: Vec2<T>) -> Option<T> {
        let mut s = T::zero();
        if let Some(a) = &self.potential_coefficient {
            s = s + a(t, r) * self.exact_potential.as_ref()?(t, r);
        }
        if let Some(cp) = &self.coupling {
            s = s + (cp.coefficient)(t, r) * cp.exact_derivative.as_ref()?(t, r);
        }
        if let Some(f) = &self.forcing {
            s = s + f(t, r);
        }
        Some(s)
    }
}

/// Coefficients and data of one scalar drift-diffusion-reaction equation.
#[derive(Clone)]
pub struct ProblemSpec<T> {
    pub name: String,
    pub x_range: (T, T),
    pub y_range: (T, T),
    /// Isotropic diffusion coefficient `D(r) >= 0`.
    pub diffusion: SpatialFn<T>,
    /// Analytic `grad D`; never obtained by numerical differentiation.
    pub diffusion_gradient: VectorFn<T>,
    /// Extra flux velocity `v`; `None` means zero.
    pub advection: Option<VectorFn<T>>,
    /// Coefficient `c` of the term proportional to the transported quantity.
    pub reaction: Option<ScalarFn<T>>,
    pub injection: InjectionSource<T>,
    pub dirichlet: ScalarFn<T>,
    /// Initial data, evaluated at the run start time.
    pub initial: ScalarFn<T>,
    pub exact: Option<ScalarFn<T>>,
}

impl<T: Real> fmt::Debug for ProblemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("x_range", &self.x_range)
            .field("y_range", &self.y_range)
            .field("advection", &self.advection.is_some())
            .field("reaction", &self.reaction.is_some())
            .field("injection", &!self.injection.is_empty())
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl<T: Real> ProblemSpec<T> {
    #[inline]
    pub fn advection_at(&self, r: Vec2<T>) -> Vec2<T> {
        self.advection.as_ref().map_or_else(Vec2::zero, |v| v(r))
    }

    #[inline]
    pub fn reaction_at(&self, t: T, r: Vec2<T>) -> T {
        self.reaction.as_ref().map_or_else(T::zero, |c| c(t, r))
    }

    /// Exact solution at `(t, r)`, if known.
    pub fn exact_at(&self, t: T, r: Vec2<T>) -> Option<T> {
        self.exact.as_ref().map(|u| u(t, r))
    }

    pub fn same_domain(&self, other: &Self) -> bool {
        self.x_range == other.x_range && self.y_range == other.y_range
    }
}

/// Drift of the Itô process whose law solves the transport part:
/// `b(r) = v(r) + grad D(r)`, from `div(D grad u) = lap(D u) - div(u grad D)`.
#[inline]
pub fn effective_drift<T: Real>(spec: &ProblemSpec<T>, r: Vec2<T>) -> Vec2<T> {
    spec.advection_at(r) + (spec.diffusion_gradient)(r)
}

/// Potential and the two field-component problems solved together.
#[derive(Clone)]
pub struct ProblemSet<T> {
    pub potential: ProblemSpec<T>,
    pub field_x: ProblemSpec<T>,
    pub field_y: ProblemSpec<T>,
}

impl<T: Real> fmt::Debug for ProblemSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl<T: Real> ProblemSet<T> {
    pub fn iter(&self) -> impl Iterator<Item = &ProblemSpec<T>> {
        [&self.potential, &self.field_x, &self.field_y].into_iter()
    }
}

fn check_diffusion_scale<T: Real>(d: T) -> Result<()> {
    if d > T::zero() && d.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!(
            "diffusion scale must be positive and finite, got {d}"
        )))
    }
}

/// Manufactured problem on `[0,1]^2` with `D(r) = d * x^2` and potential
/// `phi = exp(-(x + y)) exp(-d t)`.
///
/// With `E = -grad phi` the exact components are `E_x = E_y = phi`. The
/// `E_x` equation carries advection `(-2 d x, 0)`, the potential source
/// `(4 d x - 2 d) phi` and the coupling `2 d x dE_y/dy`.
pub fn experiment1_problems<T: Real>(d: T) -> Result<ProblemSet<T>> {
    check_diffusion_scale(d)?;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let unit = (T::zero(), T::one());

    let phi: ScalarFn<T> = Arc::new(move |t: T, r: Vec2<T>| (-(r.x + r.y) - d * t).exp());
    let reaction: ScalarFn<T> =
        Arc::new(move |_t: T, r: Vec2<T>| -d + two * d * r.x - two * d * r.x * r.x);
    let diffusion: SpatialFn<T> = Arc::new(move |r: Vec2<T>| d * r.x * r.x);
    let gradient: VectorFn<T> = Arc::new(move |r: Vec2<T>| Vec2::new(two * d * r.x, T::zero()));

    let base = |name: &str, exact: ScalarFn<T>| ProblemSpec {
        name: name.to_string(),
        x_range: unit,
        y_range: unit,
        diffusion: diffusion.clone(),
        diffusion_gradient: gradient.clone(),
        advection: None,
        reaction: Some(reaction.clone()),
        injection: InjectionSource::default(),
        dirichlet: exact.clone(),
        initial: exact.clone(),
        exact: Some(exact),
    };

    let potential = base("exp1.phi", phi.clone());

    let mut field_x = base("exp1.ex", phi.clone());
    field_x.advection = Some(Arc::new(move |r: Vec2<T>| {
        Vec2::new(-two * d * r.x, T::zero())
    }));
    let phi_for_dy = phi.clone();
    field_x.injection = InjectionSource {
        potential_coefficient: Some(Arc::new(move |_t: T, r: Vec2<T>| four * d * r.x - two * d)),
        exact_potential: Some(phi.clone()),
        coupling: Some(CouplingTerm {
            coefficient: Arc::new(move |_t: T, r: Vec2<T>| two * d * r.x),
            // dE_y/dy = -phi for E_y = phi
            exact_derivative: Some(Arc::new(move |t: T, r: Vec2<T>| -phi_for_dy(t, r))),
        }),
        forcing: None,
    };

    let field_y = base("exp1.ey", phi);

    Ok(ProblemSet {
        potential,
        field_x,
        field_y,
    })
}

/// Free-space heat-kernel problem on `[0,2]^2` with constant diffusion `d`.
///
/// `phi = exp(-(x^2 + y^2) / (4 d t)) / (4 pi d t)` and `E = -grad phi`,
/// i.e. `E_x = x / (2 d t) * phi`. All three equations are pure diffusion.
/// The exact solution is singular at `t = 0`, so runs must start at `t0 > 0`.
pub fn experiment2_problems<T: Real>(d: T) -> Result<ProblemSet<T>> {
    check_diffusion_scale(d)?;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let domain = (T::zero(), two);

    let phi = move |t: T, r: Vec2<T>| {
        let s = four * d * t;
        (-(r.x * r.x + r.y * r.y) / s).exp() / (T::PI() * s)
    };
    let phi_fn: ScalarFn<T> = Arc::new(phi);
    let ex_fn: ScalarFn<T> = Arc::new(move |t: T, r: Vec2<T>| r.x / (two * d * t) * phi(t, r));
    let ey_fn: ScalarFn<T> = Arc::new(move |t: T, r: Vec2<T>| r.y / (two * d * t) * phi(t, r));

    let make = |name: &str, exact: ScalarFn<T>| ProblemSpec {
        name: name.to_string(),
        x_range: domain,
        y_range: domain,
        diffusion: Arc::new(move |_r: Vec2<T>| d),
        diffusion_gradient: Arc::new(|_r: Vec2<T>| Vec2::zero()),
        advection: None,
        reaction: None,
        injection: InjectionSource::default(),
        dirichlet: exact.clone(),
        initial: exact.clone(),
        exact: Some(exact),
    };

    Ok(ProblemSet {
        potential: make("exp2.phi", phi_fn),
        field_x: make("exp2.ex", ex_fn),
        field_y: make("exp2.ey", ey_fn),
    })
}

/// Tunables of the particle solver that do not change the modelled equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Particles added per cell and step for injected sources.
    pub n_per_cell: usize,
    /// Russian-roulette threshold as a fraction of the median |weight|.
    pub w_cap: T,
    /// Population control runs once the ensemble exceeds this multiple of N.
    pub population_trigger: T,
    /// Number of trailing steps averaged into the reported fields (0 = final
    /// time only).
    pub average_window: usize,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            n_per_cell: 4,
            w_cap: T::of(0.5),
            population_trigger: T::of(4.0),
            average_window: 0,
        }
    }
}

/// Time stepping, sampling and reproducibility settings of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig<T> {
    /// Particles per simulated field.
    pub n_particles: usize,
    pub t0: T,
    pub t_end: T,
    pub dt: T,
    pub seed: u64,
    pub coupling_mode: CouplingMode,
    pub replicates: usize,
    pub options: SolverOptions<T>,
}

pub const DEFAULT_SEED: u64 = 20_240_917;

impl<T: Real> RunConfig<T> {
    pub fn new(n_particles: usize, t0: T, t_end: T, dt: T) -> Result<Self> {
        let cfg = Self {
            n_particles,
            t0,
            t_end,
            dt,
            seed: DEFAULT_SEED,
            coupling_mode: CouplingMode::Neglect,
            replicates: 1,
            options: SolverOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// N = 500000, t in [0, 1], dt = 0.001.
    pub fn experiment1() -> Self {
        Self::new(500_000, T::zero(), T::one(), T::of(0.001)).expect("valid defaults")
    }

    /// N = 500000, t in [5, 6], dt = 0.01, 20 replicates.
    pub fn experiment2() -> Self {
        let mut cfg = Self::new(500_000, T::of(5.0), T::of(6.0), T::of(0.01)).expect("valid defaults");
        cfg.replicates = 20;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidConfig("particle count must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicate count must be positive".into()));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t0 < self.t_end) {
            return Err(Error::InvalidConfig(format!(
                "start time {} must precede end time {}",
                self.t0, self.t_end
            )));
        }
        if self.options.n_per_cell == 0 {
            return Err(Error::InvalidConfig("n_per_cell must be at least 1".into()));
        }
        if !(self.options.w_cap > T::zero()) {
            return Err(Error::InvalidConfig("w_cap must be positive".into()));
        }
        if !(self.options.population_trigger >= T::one()) {
            return Err(Error::InvalidConfig("population trigger must be >= 1".into()));
        }
        self.step_count().map(|_| ())
    }

    /// Number of steps; `(t_end - t0) / dt` must be an integer to 1e-9.
    pub fn step_count(&self) -> Result<usize> {
        let ratio = ((self.t_end - self.t0) / self.dt).to_f64_lossy();
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() >= 1e-9 * n.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "(t_end - t0) / dt = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    /// Time at the end of step `k` (computed without accumulation).
    #[inline]
    pub fn time_at(&self, k: usize) -> T {
        self.t0 + T::of_usize(k) * self.dt
    }
}
