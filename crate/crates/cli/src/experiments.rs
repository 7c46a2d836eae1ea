//! Experiment runners. Each resolves its problems, fans replicates out over
//! the worker pool, and writes the result bundle from the calling thread.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use mcga_core::grid::DEFAULT_RELATIVE_FLOOR;
use mcga_core::streams::run_indexed;
use mcga_core::{
    experiment1_problems, experiment2_problems, fd_gradient, field_norm, relative_error, run_mcga_replicate,
    run_mcga_with_ensembles, solve_deterministic, solve_single, solve_single_with_ensemble, stable_dt, variance_study,
    Cell, CouplingMode, Ensemble, Field, FieldId, FieldStats, Grid, Problem,
};
use serde_json::{json, Map, Value};

use crate::config::{Experiment, ExperimentConfig, ModeSelection};
use crate::output::{manifest, Bundle, RESOLVED_CONFIG, SUMMARY, VARIANCE, VARIANCE_HEADER};

/// Where and how to run.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub jobs: usize,
    /// Scale factor already applied to the configuration; recorded only.
    pub scale: f64,
}

/// Runs `config` and writes its bundle; returns the summary document.
pub fn run(config: &ExperimentConfig, ctx: &RunContext) -> Result<Value> {
    config.validate()?;
    let mut bundle = Bundle::create(&ctx.out)?;
    let mut summary = match config.experiment {
        Experiment::Exp1 => run_experiment1(config, ctx, &mut bundle)?,
        Experiment::Exp2 => run_experiment2(config, ctx, &mut bundle)?,
        Experiment::Custom => run_custom(config, ctx, &mut bundle)?,
    };
    let files = manifest(config);
    summary.insert("files".into(), json!(files));
    summary.insert("config".into(), config_json(config));
    summary.insert(
        "provenance".into(),
        json!({
            "tool": "mcga",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": config.seed,
            "scale_applied": ctx.scale,
            "resolved_config": RESOLVED_CONFIG,
        }),
    );
    let summary = Value::Object(summary);
    bundle.text(RESOLVED_CONFIG, &config.to_file_text())?;
    bundle.json(SUMMARY, &summary)?;
    if bundle.written() != files.as_slice() {
        bail!("internal error: wrote {:?}, manifest lists {:?}", bundle.written(), files);
    }
    info!("wrote {} files to {}", files.len(), ctx.out.display());
    Ok(summary)
}

/// The resolved configuration as a JSON object with typed values.
pub fn config_json(config: &ExperimentConfig) -> Value {
    let mut map = Map::new();
    for (k, v) in config.settings() {
        let value = if let Ok(n) = v.parse::<u64>() {
            json!(n)
        } else if let Ok(x) = v.parse::<f64>() {
            json!(x)
        } else if let Ok(b) = v.parse::<bool>() {
            json!(b)
        } else {
            json!(v)
        };
        map.insert(k, value);
    }
    Value::Object(map)
}

fn interior(grid: &Grid) -> Vec<Cell> {
    grid.cells().filter(|c| !grid.is_boundary(*c)).collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_values(field: &Field, cells: &[Cell]) -> Vec<f64> {
    let mut v: Vec<f64> = cells.iter().map(|&c| field.get(c)).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn median_over(field: &Field, cells: &[Cell]) -> f64 {
    quantile(&sorted_values(field, cells), 0.5)
}

/// Quantile summary of a relative-error field over `cells`.
fn error_stats(field: &Field, cells: &[Cell]) -> Value {
    let v = sorted_values(field, cells);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    json!({
        "median": quantile(&v, 0.5),
        "q25": quantile(&v, 0.25),
        "q75": quantile(&v, 0.75),
        "q90": quantile(&v, 0.9),
        "max": v[v.len() - 1],
        "mean": mean,
        "cells": v.len(),
    })
}

fn exact_field(spec: &Problem, grid: Grid, t: f64) -> Result<Field> {
    if spec.exact.is_none() {
        bail!("problem '{}' has no exact solution", spec.name);
    }
    Ok(Field::from_fn(grid, |r| spec.exact_at(t, r).unwrap_or(f64::NAN)))
}

fn rel(est: &Field, exact: &Field) -> Result<Field> {
    Ok(relative_error(est, exact, DEFAULT_RELATIVE_FLOOR)?)
}

fn run_experiment1(config: &ExperimentConfig, ctx: &RunContext, bundle: &mut Bundle) -> Result<Map<String, Value>> {
    let problems = experiment1_problems(config.diffusion)?;
    let grid = Grid::square(0.0, 1.0, config.cells)?;
    let modes = config.mode.modes();
    let reps = config.replicates;
    let run_configs = modes.iter().map(|&m| config.run_config(m)).collect::<Result<Vec<_>>>()?;
    info!(
        "exp1: {} mode(s) x {reps} replicate(s), N = {}, M = {}, {} steps",
        modes.len(),
        config.n_particles,
        config.cells,
        run_configs[0].step_count()?
    );
    let runs = run_indexed(ctx.jobs, modes.len() * reps, |task| {
        let (k, r) = (task / reps, task % reps);
        if r == 0 && config.dump_ensembles {
            run_mcga_with_ensembles(&problems, grid, &run_configs[k], r).map(|(f, e)| (f, Some(e)))
        } else {
            run_mcga_replicate(&problems, grid, &run_configs[k], r).map(|f| (f, None))
        }
    })
    .context("experiment 1 solve failed")?;

    let t = config.t_end;
    let exact_phi = exact_field(&problems.potential, grid, t)?;
    let exact_ex = exact_field(&problems.field_x, grid, t)?;
    let exact_ey = exact_field(&problems.field_y, grid, t)?;
    let exact_norm = field_norm(&exact_ex, &exact_ey)?;
    let cells = interior(&grid);

    let mut errors = Map::new();
    let mut per_replicate = Map::new();
    let mut dumps: Vec<(String, &Ensemble)> = Vec::new();
    for (k, &mode) in modes.iter().enumerate() {
        let (fields, ensembles) = &runs[k * reps];
        let mc_norm = fields.norm()?;
        let (fd_ex, fd_ey) = fd_gradient(&fields.phi);
        let fd_norm = field_norm(&fd_ex, &fd_ey)?;
        let mc = [
            ("phi", &fields.phi, &exact_phi),
            ("ex", &fields.ex, &exact_ex),
            ("ey", &fields.ey, &exact_ey),
            ("norm", &mc_norm, &exact_norm),
        ];
        let fd = [("ex", &fd_ex, &exact_ex), ("ey", &fd_ey, &exact_ey), ("norm", &fd_norm, &exact_norm)];
        for (name, f, _) in mc {
            bundle.field(&format!("mc_{mode}_{name}.csv"), f)?;
        }
        for (name, f, _) in fd {
            bundle.field(&format!("fd_{mode}_{name}.csv"), f)?;
        }
        let mut mc_stats = Map::new();
        for (name, f, e) in mc {
            let err = rel(f, e)?;
            bundle.field(&format!("err_mc_{mode}_{name}.csv"), &err)?;
            mc_stats.insert(name.into(), error_stats(&err, &cells));
        }
        let mut fd_stats = Map::new();
        for (name, f, e) in fd {
            let err = rel(f, e)?;
            bundle.field(&format!("err_fd_{mode}_{name}.csv"), &err)?;
            fd_stats.insert(name.into(), error_stats(&err, &cells));
        }
        errors.insert(mode.to_string(), json!({ "mc": mc_stats, "fd": fd_stats }));

        let mut medians: Map<String, Value> = Map::new();
        let mut mc_ex = Vec::new();
        let mut fd_ex_med = Vec::new();
        let mut mc_ey = Vec::new();
        let mut mc_phi = Vec::new();
        for (f, _) in &runs[k * reps..(k + 1) * reps] {
            let (dx, _) = fd_gradient(&f.phi);
            mc_ex.push(median_over(&rel(&f.ex, &exact_ex)?, &cells));
            fd_ex_med.push(median_over(&rel(&dx, &exact_ex)?, &cells));
            mc_ey.push(median_over(&rel(&f.ey, &exact_ey)?, &cells));
            mc_phi.push(median_over(&rel(&f.phi, &exact_phi)?, &cells));
        }
        let wins = mc_ex.iter().zip(&fd_ex_med).filter(|(m, f)| m < f).count();
        medians.insert("mc_phi".into(), json!(mc_phi));
        medians.insert("mc_ex".into(), json!(mc_ex));
        medians.insert("mc_ey".into(), json!(mc_ey));
        medians.insert("fd_ex".into(), json!(fd_ex_med));
        medians.insert("mc_better_ex".into(), json!(wins));
        per_replicate.insert(mode.to_string(), Value::Object(medians));

        if let Some(ens) = ensembles {
            for (id, e) in FieldId::ALL.iter().zip(ens.iter()) {
                dumps.push((format!("{mode}_{}", field_short(*id)), e));
            }
        }
    }
    for (name, f) in [("phi", &exact_phi), ("ex", &exact_ex), ("ey", &exact_ey), ("norm", &exact_norm)] {
        bundle.field(&format!("exact_{name}.csv"), f)?;
    }
    for (name, e) in dumps {
        bundle.ensemble(&name, e)?;
    }

    let mut summary = Map::new();
    summary.insert("experiment".into(), json!("exp1"));
    summary.insert("time".into(), json!(t));
    summary.insert("error_cells".into(), json!("interior"));
    summary.insert("relative_error".into(), Value::Object(errors));
    summary.insert("replicate_median_relative_error".into(), Value::Object(per_replicate));
    Ok(summary)
}

fn field_short(id: FieldId) -> &'static str {
    match id {
        FieldId::Potential => "phi",
        FieldId::FieldX => "ex",
        FieldId::FieldY => "ey",
    }
}

fn run_experiment2(config: &ExperimentConfig, ctx: &RunContext, bundle: &mut Bundle) -> Result<Map<String, Value>> {
    let problems = experiment2_problems(config.diffusion)?;
    let rc = config.run_config(CouplingMode::Neglect)?;
    info!(
        "exp2: resolutions {:?} x {} replicate(s), N = {}",
        config.resolutions, config.replicates, config.n_particles
    );
    if config.dump_ensembles {
        warn!("the variance study does not dump ensembles");
    }
    let study = variance_study(&problems, &config.resolutions, &rc, ctx.jobs).context("variance study failed")?;
    if study.degenerate() {
        warn!("variance study is degenerate (zero variance at some resolution); slopes are undefined");
    }

    let mut csv = format!("{VARIANCE_HEADER}\n");
    for (k, m) in study.resolutions.iter().enumerate() {
        csv.push_str(&format!(
            "{m},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            study.variances_mc[k], study.variances_fd[k], study.means_mc[k], study.means_fd[k]
        ));
    }
    bundle.text(VARIANCE, &csv)?;

    let fit = |f: &Option<mcga_core::stats::LogLogFit<f64>>| match f {
        Some(f) => json!({ "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared }),
        None => Value::Null,
    };
    let mut summary = Map::new();
    summary.insert("experiment".into(), json!("exp2"));
    summary.insert("resolutions".into(), json!(study.resolutions));
    summary.insert("replicates".into(), json!(study.replicates));
    summary.insert("variance_mc".into(), json!(study.variances_mc));
    summary.insert("variance_fd".into(), json!(study.variances_fd));
    summary.insert("mean_mc".into(), json!(study.means_mc));
    summary.insert("mean_fd".into(), json!(study.means_fd));
    summary.insert("fit_mc".into(), fit(&study.fit_mc));
    summary.insert("fit_fd".into(), fit(&study.fit_fd));
    summary.insert("degenerate".into(), json!(study.degenerate()));
    Ok(summary)
}

fn run_custom(config: &ExperimentConfig, ctx: &RunContext, bundle: &mut Bundle) -> Result<Map<String, Value>> {
    let problem = config.custom.problem()?;
    let spec: Problem = problem.build()?;
    let grid = Grid::new(problem.x_range, problem.y_range, config.cells, config.cells)?;
    let mode = match config.mode {
        ModeSelection::Only(m) => m,
        ModeSelection::Both => CouplingMode::Neglect,
    };
    let rc = config.run_config(mode)?;
    let reps = config.replicates;
    info!("custom: {reps} replicate(s), N = {}, M = {}", config.n_particles, config.cells);
    let runs = run_indexed(ctx.jobs, reps, |r| {
        if r == 0 && config.dump_ensembles {
            solve_single_with_ensemble(&spec, FieldId::Potential, grid, &rc, r).map(|(f, e)| (f, Some(e)))
        } else {
            solve_single(&spec, FieldId::Potential, grid, &rc, r).map(|f| (f, None))
        }
    })
    .context("custom solve failed")?;
    let fd = solve_deterministic(&spec, grid, config.t0, config.t_end, stable_dt(&spec, grid))
        .context("deterministic reference failed")?;

    let (mc, ensemble) = &runs[0];
    bundle.field("mc.csv", mc)?;
    let mut summary = Map::new();
    if reps >= 2 {
        let mut stats = FieldStats::new(grid);
        for (f, _) in &runs {
            stats.add(f)?;
        }
        bundle.field("mc_mean.csv", &stats.mean())?;
        bundle.field("mc_std.csv", &stats.std_dev()?)?;
    }
    bundle.field("fd_reference.csv", &fd)?;

    let cells = interior(&grid);
    let diff: Vec<f64> = cells.iter().map(|&c| (mc.get(c) - fd.get(c)).abs()).collect();
    summary.insert("experiment".into(), json!("custom"));
    summary.insert("time".into(), json!(config.t_end));
    summary.insert(
        "mc_vs_fd_reference".into(),
        json!({
            "max_abs_difference": diff.iter().copied().fold(0.0, f64::max),
            "rms_difference": (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt(),
        }),
    );
    if spec.exact.is_some() {
        let exact = exact_field(&spec, grid, config.t_end)?;
        let err_mc = rel(mc, &exact)?;
        let err_fd = rel(&fd, &exact)?;
        bundle.field("exact.csv", &exact)?;
        bundle.field("err_mc.csv", &err_mc)?;
        bundle.field("err_fd_reference.csv", &err_fd)?;
        summary.insert(
            "relative_error".into(),
            json!({ "mc": error_stats(&err_mc, &cells), "fd_reference": error_stats(&err_fd, &cells) }),
        );
    }
    if let Some(e) = ensemble {
        bundle.ensemble("mc", e)?;
    }
    Ok(summary)
}

/// Parses `KEY=VALUE` pairs given with `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
