//! Replicate statistics: Welford accumulation, log-log order fitting and the
//! variance-versus-resolution study.

use crate::error::{Error, Result};
use crate::fd::fd_gradient;
use crate::grid::{GridSpec, ScalarField};
use crate::mcga::solve_single;
use crate::problems::{ProblemSet, RunConfig};
use crate::scalar::Real;
use crate::streams::{run_indexed, FieldId};

/// Single-pass mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WelfordAccumulator<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Real> WelfordAccumulator<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }

    #[inline]
    pub fn update(&mut self, x: T) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::of(self.count as f64);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    /// Parallel combination (Chan et al.).
    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (T::of(self.count as f64), T::of(other.count as f64));
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean = self.mean + delta * nb / n;
        self.m2 = self.m2 + other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Sample variance `M2 / (n - 1)`; needs two or more samples.
    pub fn variance(&self) -> Result<T> {
        if self.count < 2 {
            return Err(Error::Statistics(format!(
                "variance needs at least 2 samples, have {}",
                self.count
            )));
        }
        Ok(self.m2 / T::of((self.count - 1) as f64))
    }

    pub fn std_dev(&self) -> Result<T> {
        self.variance().map(T::sqrt)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> Result<T> {
        Ok((self.variance()? / T::of(self.count as f64)).sqrt())
    }
}

impl<T: Real> FromIterator<T> for WelfordAccumulator<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.update(x);
        }
        acc
    }
}

/// Free-function form of [`WelfordAccumulator::update`].
pub fn welford_update<T: Real>(mut acc: WelfordAccumulator<T>, x: T) -> WelfordAccumulator<T> {
    acc.update(x);
    acc
}

/// Per-cell Welford statistics over replicate fields.
#[derive(Debug, Clone)]
pub struct FieldStatistics<T> {
    grid: GridSpec<T>,
    cells: Vec<WelfordAccumulator<T>>,
}

impl<T: Real> FieldStatistics<T> {
    pub fn new(grid: GridSpec<T>) -> Self {
        Self {
            cells: vec![WelfordAccumulator::new(); grid.cell_count()],
            grid,
        }
    }

    pub fn add(&mut self, field: &ScalarField<T>) -> Result<()> {
        if field.grid() != &self.grid {
            return Err(Error::GridMismatch("replicate field on a different grid".into()));
        }
        for (acc, &v) in self.cells.iter_mut().zip(field.values()) {
            acc.update(v);
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.cells.first().map_or(0, |c| c.count())
    }

    pub fn mean(&self) -> ScalarField<T> {
        let values = self.cells.iter().map(|c| c.mean()).collect();
        ScalarField::from_values(self.grid, values).expect("finite replicate means")
    }

    /// Per-cell sample standard deviation (standard error of one replicate).
    pub fn std_dev(&self) -> Result<ScalarField<T>> {
        let values = self.cells.iter().map(|c| c.std_dev()).collect::<Result<Vec<T>>>()?;
        ScalarField::from_values(self.grid, values)
    }

    pub fn cell(&self, k: usize) -> &WelfordAccumulator<T> {
        &self.cells[k]
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

pub fn fit_loglog_slope<T: Real>(xs: &[T], ys: &[T]) -> Result<LogLogFit<T>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Statistics(format!(
            "need at least 2 aligned points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return Err(Error::Statistics("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<T> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = ys.iter().map(|v| v.ln()).collect();
    let n = T::of_usize(lx.len());
    let mx = lx.iter().copied().sum::<T>() / n;
    let my = ly.iter().copied().sum::<T>() / n;
    let sxx: T = lx.iter().map(|x| (*x - mx) * (*x - mx)).sum();
    let sxy: T = lx.iter().zip(&ly).map(|(x, y)| (*x - mx) * (*y - my)).sum();
    let syy: T = ly.iter().map(|y| (*y - my) * (*y - my)).sum();
    if sxx == T::zero() {
        return Err(Error::Statistics("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == T::zero() {
        T::one()
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Variance of the midpoint estimate per resolution for both estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudyResult<T> {
    pub resolutions: Vec<usize>,
    pub variances_mc: Vec<T>,
    pub variances_fd: Vec<T>,
    pub means_mc: Vec<T>,
    pub means_fd: Vec<T>,
    pub fit_mc: Option<LogLogFit<T>>,
    pub fit_fd: Option<LogLogFit<T>>,
    pub replicates: usize,
}

impl<T: Real> VarianceStudyResult<T> {
    /// Builds the result from per-resolution replicate samples. A fit that
    /// cannot be computed (e.g. zero variance) is `None` and its slope
    /// reports NaN.
    pub fn from_samples(resolutions: &[usize], samples_mc: &[Vec<T>], samples_fd: &[Vec<T>]) -> Result<Self> {
        if resolutions.len() < 2 || samples_mc.len() != resolutions.len() || samples_fd.len() != resolutions.len() {
            return Err(Error::Statistics("need samples for at least 2 resolutions".into()));
        }
        let replicates = samples_mc[0].len();
        let summarize = |s: &[Vec<T>]| -> Result<(Vec<T>, Vec<T>)> {
            let mut means = Vec::new();
            let mut vars = Vec::new();
            for reps in s {
                let acc: WelfordAccumulator<T> = reps.iter().copied().collect();
                means.push(acc.mean());
                vars.push(acc.variance()?);
            }
            Ok((means, vars))
        };
        let (means_mc, variances_mc) = summarize(samples_mc)?;
        let (means_fd, variances_fd) = summarize(samples_fd)?;
        let ms: Vec<T> = resolutions.iter().map(|&m| T::of_usize(m)).collect();
        Ok(Self {
            resolutions: resolutions.to_vec(),
            fit_mc: fit_loglog_slope(&ms, &variances_mc).ok(),
            fit_fd: fit_loglog_slope(&ms, &variances_fd).ok(),
            variances_mc,
            variances_fd,
            means_mc,
            means_fd,
            replicates,
        })
    }

    pub fn slope_mc(&self) -> T {
        self.fit_mc.map_or_else(T::nan, |f| f.slope)
    }

    pub fn slope_fd(&self) -> T {
        self.fit_fd.map_or_else(T::nan, |f| f.slope)
    }

    /// True when either slope could not be fitted.
    pub fn degenerate(&self) -> bool {
        self.fit_mc.is_none() || self.fit_fd.is_none()
    }
}

/// Midpoint samples of one replicate at one resolution.
#[derive(Debug, Clone, Copy)]
pub struct MidpointSample<T> {
    pub mc: T,
    pub fd: T,
}

/// One replicate of the variance study on an `m x m` grid over the problem
/// domain: the particle estimate of `E_x` and the finite-difference `E_x`
/// of the particle potential, both at the midpoint cell.
pub fn midpoint_sample<T: Real>(
    problems: &ProblemSet<T>,
    m: usize,
    config: &RunConfig<T>,
    replicate: usize,
) -> Result<MidpointSample<T>> {
    let (lo, hi) = problems.field_x.x_range;
    let (ylo, yhi) = problems.field_x.y_range;
    let grid = GridSpec::new((lo, hi), (ylo, yhi), m, m)?;
    let mid = grid.middle_cell();
    let ex = solve_single(&problems.field_x, FieldId::FieldX, grid, config, replicate)?;
    let phi = solve_single(&problems.potential, FieldId::Potential, grid, config, replicate)?;
    let (ex_fd, _) = fd_gradient(&phi);
    Ok(MidpointSample {
        mc: ex.get(mid),
        fd: ex_fd.get(mid),
    })
}

/// Runs `config.replicates` independent solves per resolution and fits the
/// growth order of the midpoint variance for both estimators. Replicate `r`
/// at resolution index `k` uses stream index `k * replicates + r`.
pub fn variance_study<T: Real>(
    problems: &ProblemSet<T>,
    resolutions: &[usize],
    config: &RunConfig<T>,
    jobs: usize,
) -> Result<VarianceStudyResult<T>> {
    if resolutions.len() < 2 {
        return Err(Error::InvalidConfig("variance study needs at least 2 resolutions".into()));
    }
    if config.replicates < 2 {
        return Err(Error::InvalidConfig("variance study needs at least 2 replicates".into()));
    }
    let reps = config.replicates;
    let tasks = resolutions.len() * reps;
    let samples = run_indexed(jobs, tasks, |task| {
        let (k, _r) = (task / reps, task % reps);
        midpoint_sample(problems, resolutions[k], config, task)
    })?;
    let mut mc = vec![Vec::with_capacity(reps); resolutions.len()];
    let mut fd = vec![Vec::with_capacity(reps); resolutions.len()];
    for (task, s) in samples.into_iter().enumerate() {
        mc[task / reps].push(s.mc);
        fd[task / reps].push(s.fd);
    }
    VarianceStudyResult::from_samples(resolutions, &mc, &fd)
}
