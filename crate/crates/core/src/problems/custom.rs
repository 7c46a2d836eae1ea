//! User-defined problems built from exponential-polynomial descriptors.
//!
//! A descriptor is a sum of terms `coef * x^px * y^py * exp(ax x + ay y + at t)`.
//! The class is closed under differentiation, so `grad D` stays analytic.
//! Textual form: terms separated by `;`, each term six whitespace-separated
//! numbers `coef px py ax ay at`, e.g. `0.1 2 0 0 0 0` for `0.1 x^2`.

use std::str::FromStr;
use std::sync::Arc;

use super::{InjectionSource, ProblemSpec, ScalarFn};
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub coef: f64,
    pub px: u32,
    pub py: u32,
    pub ax: f64,
    pub ay: f64,
    pub at: f64,
}

impl ExpTerm {
    pub fn constant(c: f64) -> Self {
        Self {
            coef: c,
            px: 0,
            py: 0,
            ax: 0.0,
            ay: 0.0,
            at: 0.0,
        }
    }

    fn eval<T: Real>(&self, t: T, r: Vec2<T>) -> T {
        let e = T::of(self.ax) * r.x + T::of(self.ay) * r.y + T::of(self.at) * t;
        T::of(self.coef) * r.x.powi(self.px as i32) * r.y.powi(self.py as i32) * e.exp()
    }
}

/// Sum of [`ExpTerm`]s.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpPoly {
    pub terms: Vec<ExpTerm>,
}

impl ExpPoly {
    pub fn new(terms: Vec<ExpTerm>) -> Self {
        Self { terms }
    }

    pub fn eval<T: Real>(&self, t: T, r: Vec2<T>) -> T {
        self.terms.iter().map(|term| term.eval(t, r)).sum()
    }

    pub fn is_time_independent(&self) -> bool {
        self.terms.iter().all(|t| t.at == 0.0)
    }

    pub fn d_dx(&self) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            if t.px > 0 {
                out.push(ExpTerm {
                    coef: t.coef * t.px as f64,
                    px: t.px - 1,
                    ..*t
                });
            }
            if t.ax != 0.0 {
                out.push(ExpTerm {
                    coef: t.coef * t.ax,
                    ..*t
                });
            }
        }
        Self::new(out)
    }

    pub fn d_dy(&self) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            if t.py > 0 {
                out.push(ExpTerm {
                    coef: t.coef * t.py as f64,
                    py: t.py - 1,
                    ..*t
                });
            }
            if t.ay != 0.0 {
                out.push(ExpTerm {
                    coef: t.coef * t.ay,
                    ..*t
                });
            }
        }
        Self::new(out)
    }

    fn into_fn<T: Real>(self) -> ScalarFn<T> {
        Arc::new(move |t, r| self.eval(t, r))
    }
}

impl FromStr for ExpPoly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for chunk in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let nums: Vec<&str> = chunk.split_whitespace().collect();
            if nums.len() != 6 {
                return Err(Error::Parse(format!(
                    "term '{chunk}' needs 6 numbers: coef px py ax ay at"
                )));
            }
            let real = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("'{s}' in term '{chunk}': {e}")))
            };
            let power = |s: &str| {
                s.parse::<u32>()
                    .map_err(|e| Error::Parse(format!("power '{s}' in term '{chunk}': {e}")))
            };
            terms.push(ExpTerm {
                coef: real(nums[0])?,
                px: power(nums[1])?,
                py: power(nums[2])?,
                ax: real(nums[3])?,
                ay: real(nums[4])?,
                at: real(nums[5])?,
            });
        }
        if terms.is_empty() {
            return Err(Error::Parse(format!("empty descriptor '{s}'")));
        }
        Ok(Self::new(terms))
    }
}

impl std::fmt::Display for ExpPoly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| format!("{} {} {} {} {} {}", t.coef, t.px, t.py, t.ax, t.ay, t.at))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Descriptor-level definition of a single scalar problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomProblem {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub diffusion: ExpPoly,
    pub advection_x: Option<ExpPoly>,
    pub advection_y: Option<ExpPoly>,
    pub reaction: Option<ExpPoly>,
    pub forcing: Option<ExpPoly>,
    pub exact: Option<ExpPoly>,
    /// Defaults to `exact` when absent.
    pub initial: Option<ExpPoly>,
    /// Defaults to `exact` when absent.
    pub dirichlet: Option<ExpPoly>,
}

impl CustomProblem {
    pub fn build<T: Real>(&self) -> Result<ProblemSpec<T>> {
        if !self.diffusion.is_time_independent() {
            return Err(Error::InvalidProblem("diffusion must not depend on time".into()));
        }
        for (name, v) in [("advection_x", &self.advection_x), ("advection_y", &self.advection_y)] {
            if v.as_ref().is_some_and(|p| !p.is_time_independent()) {
                return Err(Error::InvalidProblem(format!("{name} must not depend on time")));
            }
        }
        let initial = self
            .initial
            .clone()
            .or_else(|| self.exact.clone())
            .ok_or_else(|| Error::InvalidProblem("custom problem needs initial or exact".into()))?;
        let dirichlet = self
            .dirichlet
            .clone()
            .or_else(|| self.exact.clone())
            .ok_or_else(|| Error::InvalidProblem("custom problem needs dirichlet or exact".into()))?;

        let d = self.diffusion.clone();
        let (gx, gy) = (d.d_dx(), d.d_dy());
        let advection = match (&self.advection_x, &self.advection_y) {
            (None, None) => None,
            (ax, ay) => {
                let ax = ax.clone().unwrap_or_default();
                let ay = ay.clone().unwrap_or_default();
                let f: super::VectorFn<T> =
                    Arc::new(move |r| Vec2::new(ax.eval(T::zero(), r), ay.eval(T::zero(), r)));
                Some(f)
            }
        };
        let spec = ProblemSpec {
            name: "custom".into(),
            x_range: (T::of(self.x_range.0), T::of(self.x_range.1)),
            y_range: (T::of(self.y_range.0), T::of(self.y_range.1)),
            diffusion: Arc::new(move |r| d.eval(T::zero(), r).max(T::zero())),
            diffusion_gradient: Arc::new(move |r| {
                Vec2::new(gx.eval(T::zero(), r), gy.eval(T::zero(), r))
            }),
            advection,
            reaction: self.reaction.clone().map(ExpPoly::into_fn),
            injection: InjectionSource {
                forcing: self.forcing.clone().map(ExpPoly::into_fn),
                ..InjectionSource::default()
            },
            dirichlet: dirichlet.into_fn(),
            initial: initial.into_fn(),
            exact: self.exact.clone().map(ExpPoly::into_fn),
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::max_residual;

    #[test]
    fn parses_and_differentiates() {
        let p: ExpPoly = "0.1 2 0 0 0 0".parse().unwrap();
        let dx = p.d_dx();
        let r = Vec2::new(0.3f64, 0.8);
        assert!((dx.eval(0.0, r) - 0.06).abs() < 1e-15);
        assert_eq!(p.d_dy().eval(0.0, r), 0.0);

        let e: ExpPoly = "1 0 0 -1 -1 -0.1".parse().unwrap();
        let v: f64 = e.eval(0.5, r);
        assert!((v - (-1.1f64 - 0.05).exp()).abs() < 1e-15);
        assert!((e.d_dx().eval(0.5, r) + v).abs() < 1e-15);
        assert!(!e.is_time_independent());
        assert_eq!(e.to_string().parse::<ExpPoly>().unwrap(), e);
    }

    #[test]
    fn rejects_malformed_descriptors() {
        assert!("1 2 3".parse::<ExpPoly>().is_err());
        assert!("".parse::<ExpPoly>().is_err());
        assert!("1 -2 0 0 0 0".parse::<ExpPoly>().is_err());
    }

    #[test]
    fn custom_copy_of_potential_problem_is_consistent() {
        // phi = exp(-(x+y)) exp(-0.1 t) with D = 0.1 x^2 and c = -0.1 + 0.2 x - 0.2 x^2
        let cp = CustomProblem {
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            diffusion: "0.1 2 0 0 0 0".parse().unwrap(),
            advection_x: None,
            advection_y: None,
            reaction: Some("-0.1 0 0 0 0 0; 0.2 1 0 0 0 0; -0.2 2 0 0 0 0".parse().unwrap()),
            forcing: None,
            exact: Some("1 0 0 -1 -1 -0.1".parse().unwrap()),
            initial: None,
            dirichlet: None,
        };
        let spec = cp.build::<f64>().unwrap();
        let rep = max_residual(&spec, (0.0, 1.0), 50, 1e-5, 1).unwrap();
        assert!(rep.max_abs < 1e-6);
        let mut bad = cp.clone();
        bad.exact = None;
        assert!(bad.build::<f64>().is_err());
    }
}
