//! Experiment configuration: per-experiment defaults, a flat `key = value`
//! file format and command-line overrides.
//!
//! Resolution order is defaults, then the file, then flags; the last value
//! for a key wins. `scale` multiplies the particle count and replicate count
//! after all overrides are applied.
//!
//! Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `experiment` | `exp1`, `exp2` or `custom` (must match the subcommand) |
//! | `n_particles` | particles per simulated field |
//! | `t0`, `t_end`, `dt` | time window and step |
//! | `seed` | root seed of every random stream |
//! | `replicates` | independent replicates |
//! | `mode` | `neglect`, `exact` or `both` (cross-component coupling) |
//! | `cells` | cells per side of the square grid |
//! | `resolutions` | comma-separated cell counts for the variance study |
//! | `diffusion` | diffusion coefficient scale `D` of the built-in problems |
//! | `n_per_cell` | particles injected per source cell and step |
//! | `w_cap` | roulette threshold as a fraction of the median weight |
//! | `population_trigger` | control runs once count exceeds this multiple of N |
//! | `average_window` | trailing steps averaged into the reported fields (0 = final step) |
//! | `dump_ensembles` | `true` writes the final particle ensembles |
//! | `custom.x_range`, `custom.y_range` | two numbers, e.g. `0 1` |
//! | `custom.diffusion`, `custom.advection_x`, `custom.advection_y`, `custom.reaction`, `custom.forcing`, `custom.exact`, `custom.initial`, `custom.dirichlet` | exponential-polynomial descriptors |
//!
//! Descriptors are `;`-separated terms of six numbers `coef px py ax ay at`,
//! each standing for `coef * x^px * y^py * exp(ax x + ay y + at t)`.
//! Lines starting with `#` and blank lines are ignored.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use mcga_core::problems::{CustomProblem, ExpPoly, DEFAULT_SEED};
use mcga_core::{Config, CouplingMode, Options};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Manufactured exponential solution on the unit square.
    Exp1,
    /// Heat-kernel variance study on [0, 2]^2.
    Exp2,
    /// Single equation built from exponential-polynomial descriptors.
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Custom => "custom",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        <Experiment as ValueEnum>::from_str(s.trim(), true).map_err(|_| anyhow!("unknown experiment '{s}' (expected exp1|exp2|custom)"))
    }
}

/// Which coupling treatments to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    Both,
    Only(CouplingMode),
}

impl ModeSelection {
    pub fn modes(self) -> Vec<CouplingMode> {
        match self {
            ModeSelection::Both => vec![CouplingMode::Neglect, CouplingMode::Exact],
            ModeSelection::Only(m) => vec![m],
        }
    }
}

impl fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeSelection::Both => f.write_str("both"),
            ModeSelection::Only(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for ModeSelection {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("both") {
            return Ok(ModeSelection::Both);
        }
        Ok(ModeSelection::Only(s.parse()?))
    }
}

/// Descriptor block of a custom problem, kept in textual form until built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CustomSection {
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub diffusion: Option<ExpPoly>,
    pub advection_x: Option<ExpPoly>,
    pub advection_y: Option<ExpPoly>,
    pub reaction: Option<ExpPoly>,
    pub forcing: Option<ExpPoly>,
    pub exact: Option<ExpPoly>,
    pub initial: Option<ExpPoly>,
    pub dirichlet: Option<ExpPoly>,
}

impl CustomSection {
    pub fn problem(&self) -> Result<CustomProblem> {
        let need = |name: &str| anyhow!("custom problem needs 'custom.{name}'");
        Ok(CustomProblem {
            x_range: self.x_range.ok_or_else(|| need("x_range"))?,
            y_range: self.y_range.ok_or_else(|| need("y_range"))?,
            diffusion: self.diffusion.clone().ok_or_else(|| need("diffusion"))?,
            advection_x: self.advection_x.clone(),
            advection_y: self.advection_y.clone(),
            reaction: self.reaction.clone(),
            forcing: self.forcing.clone(),
            exact: self.exact.clone(),
            initial: self.initial.clone(),
            dirichlet: self.dirichlet.clone(),
        })
    }

    fn descriptors(&self) -> [(&'static str, &Option<ExpPoly>); 8] {
        [
            ("diffusion", &self.diffusion),
            ("advection_x", &self.advection_x),
            ("advection_y", &self.advection_y),
            ("reaction", &self.reaction),
            ("forcing", &self.forcing),
            ("exact", &self.exact),
            ("initial", &self.initial),
            ("dirichlet", &self.dirichlet),
        ]
    }
}

/// Fully resolved settings of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_particles: usize,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub replicates: usize,
    pub mode: ModeSelection,
    pub cells: usize,
    pub resolutions: Vec<usize>,
    pub diffusion: f64,
    pub n_per_cell: usize,
    pub w_cap: f64,
    pub population_trigger: f64,
    pub average_window: usize,
    pub dump_ensembles: bool,
    pub custom: CustomSection,
}

impl ExperimentConfig {
    /// Defaults mirror the published parameter sets of the two experiments.
    pub fn defaults(experiment: Experiment) -> Self {
        let options = Options::default();
        let base = Self {
            experiment,
            n_particles: 500_000,
            t0: 0.0,
            t_end: 1.0,
            dt: 0.001,
            seed: DEFAULT_SEED,
            replicates: 1,
            mode: ModeSelection::Both,
            cells: 15,
            resolutions: vec![11, 21, 41, 81],
            diffusion: 0.1,
            n_per_cell: options.n_per_cell,
            w_cap: options.w_cap,
            population_trigger: options.population_trigger,
            average_window: options.average_window,
            dump_ensembles: false,
            custom: CustomSection::default(),
        };
        match experiment {
            Experiment::Exp1 => base,
            Experiment::Exp2 => Self {
                t0: 5.0,
                t_end: 6.0,
                dt: 0.01,
                replicates: 20,
                ..base
            },
            Experiment::Custom => Self {
                n_particles: 100_000,
                cells: 21,
                mode: ModeSelection::Only(CouplingMode::Neglect),
                ..base
            },
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let ctx = || format!("invalid value '{value}' for '{key}'");
        match key {
            "experiment" => {
                let e: Experiment = value.parse()?;
                if e != self.experiment {
                    bail!("config is for experiment '{e}' but '{}' was requested", self.experiment);
                }
            }
            "n_particles" => self.n_particles = value.parse().with_context(ctx)?,
            "t0" => self.t0 = value.parse().with_context(ctx)?,
            "t_end" => self.t_end = value.parse().with_context(ctx)?,
            "dt" => self.dt = value.parse().with_context(ctx)?,
            "seed" => self.seed = value.parse().with_context(ctx)?,
            "replicates" => self.replicates = value.parse().with_context(ctx)?,
            "mode" => self.mode = value.parse().with_context(ctx)?,
            "cells" => self.cells = value.parse().with_context(ctx)?,
            "resolutions" => self.resolutions = parse_list(value).with_context(ctx)?,
            "diffusion" => self.diffusion = value.parse().with_context(ctx)?,
            "n_per_cell" => self.n_per_cell = value.parse().with_context(ctx)?,
            "w_cap" => self.w_cap = value.parse().with_context(ctx)?,
            "population_trigger" => self.population_trigger = value.parse().with_context(ctx)?,
            "average_window" => self.average_window = value.parse().with_context(ctx)?,
            "dump_ensembles" => self.dump_ensembles = value.parse().with_context(ctx)?,
            "custom.x_range" => self.custom.x_range = Some(parse_range(value).with_context(ctx)?),
            "custom.y_range" => self.custom.y_range = Some(parse_range(value).with_context(ctx)?),
            _ => {
                let Some(name) = key.strip_prefix("custom.") else {
                    bail!("unknown config key '{key}'");
                };
                let poly: ExpPoly = value.parse().with_context(ctx)?;
                let slot = match name {
                    "diffusion" => &mut self.custom.diffusion,
                    "advection_x" => &mut self.custom.advection_x,
                    "advection_y" => &mut self.custom.advection_y,
                    "reaction" => &mut self.custom.reaction,
                    "forcing" => &mut self.custom.forcing,
                    "exact" => &mut self.custom.exact,
                    "initial" => &mut self.custom.initial,
                    "dirichlet" => &mut self.custom.dirichlet,
                    _ => bail!("unknown config key '{key}'"),
                };
                *slot = Some(poly);
            }
        }
        Ok(())
    }

    /// Applies every setting of a parsed file or override list in order.
    pub fn apply(&mut self, settings: &[(String, String)]) -> Result<()> {
        for (k, v) in settings {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Scales the particle and replicate counts (each at least its minimum).
    pub fn scale(&mut self, factor: f64) -> Result<()> {
        if !(factor.is_finite() && factor > 0.0) {
            bail!("scale must be a positive number, got {factor}");
        }
        let scaled = |n: usize, min: usize| ((n as f64 * factor).round() as usize).max(min);
        self.n_particles = scaled(self.n_particles, 1);
        let min_reps = if self.experiment == Experiment::Exp2 { 2 } else { 1 };
        self.replicates = scaled(self.replicates, min_reps);
        Ok(())
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        for mode in self.mode.modes() {
            self.run_config(mode).context(
                "invalid run settings (check n_particles, t0, t_end, dt, replicates, n_per_cell, w_cap, population_trigger)",
            )?;
        }
        if self.cells < 3 {
            bail!("cells must be at least 3, got {}", self.cells);
        }
        if !(self.diffusion.is_finite() && self.diffusion > 0.0) {
            bail!("diffusion must be positive, got {}", self.diffusion);
        }
        match self.experiment {
            Experiment::Exp1 => {}
            Experiment::Exp2 => {
                if self.resolutions.len() < 2 || self.resolutions.iter().any(|&m| m < 3) {
                    bail!("resolutions need at least two entries, each >= 3");
                }
                if self.replicates < 2 {
                    bail!("the variance study needs at least 2 replicates");
                }
            }
            Experiment::Custom => {
                self.custom.problem()?.build::<f64>()?;
            }
        }
        Ok(())
    }

    /// Solver settings for one coupling treatment.
    pub fn run_config(&self, mode: CouplingMode) -> Result<Config> {
        let mut cfg = Config::new(self.n_particles, self.t0, self.t_end, self.dt)?;
        cfg.seed = self.seed;
        cfg.coupling_mode = mode;
        cfg.replicates = self.replicates;
        cfg.options = Options {
            n_per_cell: self.n_per_cell,
            w_cap: self.w_cap,
            population_trigger: self.population_trigger,
            average_window: self.average_window,
        };
        cfg.validate()?;
        cfg.step_count()?;
        Ok(cfg)
    }

    /// Ordered `(key, value)` pairs that reproduce this configuration
    /// exactly when read back with [`parse_settings`].
    pub fn settings(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.to_string()),
            ("n_particles".into(), self.n_particles.to_string()),
            ("t0".into(), self.t0.to_string()),
            ("t_end".into(), self.t_end.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("replicates".into(), self.replicates.to_string()),
            ("mode".into(), self.mode.to_string()),
            ("cells".into(), self.cells.to_string()),
            (
                "resolutions".into(),
                self.resolutions.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("diffusion".into(), self.diffusion.to_string()),
            ("n_per_cell".into(), self.n_per_cell.to_string()),
            ("w_cap".into(), self.w_cap.to_string()),
            ("population_trigger".into(), self.population_trigger.to_string()),
            ("average_window".into(), self.average_window.to_string()),
            ("dump_ensembles".into(), self.dump_ensembles.to_string()),
        ];
        for (key, range) in [("custom.x_range", self.custom.x_range), ("custom.y_range", self.custom.y_range)] {
            if let Some((a, b)) = range {
                out.push((key.into(), format!("{a} {b}")));
            }
        }
        for (name, poly) in self.custom.descriptors() {
            if let Some(p) = poly {
                out.push((format!("custom.{name}"), p.to_string()));
            }
        }
        out
    }

    /// The settings as config-file text.
    pub fn to_file_text(&self) -> String {
        let mut s = String::from("# resolved configuration; rerun with --config <this file>\n");
        for (k, v) in self.settings() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<usize>().map_err(|e| anyhow!("'{p}': {e}")))
        .collect()
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(|c: char| c.is_whitespace() || c == ',').filter(|p| !p.is_empty()).collect();
    if parts.len() != 2 {
        bail!("expected two numbers 'lo hi'");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}

/// Parses flat `key = value` text. Keys may repeat; later lines win when
/// applied in order.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{line}'", n + 1))?;
        let key = k.trim();
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse_settings(&text).with_context(|| format!("parsing config file {}", path.display()))
}
