//! Result-bundle writing and the documented file manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mcga_core::{Ensemble, Field};

use crate::config::{Experiment, ExperimentConfig};

pub const SUMMARY: &str = "summary.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const VARIANCE: &str = "variance.csv";
pub const ENSEMBLE_DIR: &str = "ensembles";

pub const FIELD_HEADER: &str = "i,j,x_center,y_center,value";
pub const ENSEMBLE_HEADER: &str = "x,y,weight";
pub const VARIANCE_HEADER: &str = "M,var_mc,var_fd,mean_mc,mean_fd";

/// Files a run of `config` writes, relative to the output directory, in
/// writing order.
///
/// Experiment 1, per coupling mode `m` (`neglect`, `exact`):
/// `mc_m_{phi,ex,ey,norm}.csv` particle estimates, `fd_m_{ex,ey,norm}.csv`
/// differenced particle potential, `err_mc_m_*.csv` / `err_fd_m_*.csv`
/// relative errors; then `exact_{phi,ex,ey,norm}.csv`.
///
/// Experiment 2: `variance.csv`.
///
/// Custom: `mc.csv`, `mc_mean.csv` and `mc_std.csv` (two or more
/// replicates), `fd_reference.csv` (deterministic solve), and with an exact
/// solution `exact.csv`, `err_mc.csv`, `err_fd_reference.csv`.
///
/// Every run ends with `resolved_config.txt` and `summary.json`. With
/// `dump_ensembles`, `ensembles/<name>.csv` holds the final particles of
/// replicate 0: `<mode>_<field>` for Experiment 1 and `mc` for custom runs.
/// The variance study writes no ensembles.
pub fn manifest(config: &ExperimentConfig) -> Vec<String> {
    let mut files = Vec::new();
    match config.experiment {
        Experiment::Exp1 => {
            for mode in config.mode.modes() {
                for name in ["phi", "ex", "ey", "norm"] {
                    files.push(format!("mc_{mode}_{name}.csv"));
                }
                for name in ["ex", "ey", "norm"] {
                    files.push(format!("fd_{mode}_{name}.csv"));
                }
                for name in ["phi", "ex", "ey", "norm"] {
                    files.push(format!("err_mc_{mode}_{name}.csv"));
                }
                for name in ["ex", "ey", "norm"] {
                    files.push(format!("err_fd_{mode}_{name}.csv"));
                }
            }
            for name in ["phi", "ex", "ey", "norm"] {
                files.push(format!("exact_{name}.csv"));
            }
            if config.dump_ensembles {
                for mode in config.mode.modes() {
                    for name in ["phi", "ex", "ey"] {
                        files.push(ensemble_file(&format!("{mode}_{name}")));
                    }
                }
            }
        }
        Experiment::Exp2 => files.push(VARIANCE.to_string()),
        Experiment::Custom => {
            files.push("mc.csv".into());
            if config.replicates >= 2 {
                files.push("mc_mean.csv".into());
                files.push("mc_std.csv".into());
            }
            files.push("fd_reference.csv".into());
            if config.custom.exact.is_some() {
                files.push("exact.csv".into());
                files.push("err_mc.csv".into());
                files.push("err_fd_reference.csv".into());
            }
            if config.dump_ensembles {
                files.push(ensemble_file("mc"));
            }
        }
    }
    files.push(RESOLVED_CONFIG.into());
    files.push(SUMMARY.into());
    files
}

pub fn ensemble_file(name: &str) -> String {
    format!("{ENSEMBLE_DIR}/{name}.csv")
}

/// Output directory that records what it writes.
pub struct Bundle {
    root: PathBuf,
    written: Vec<String>,
}

impl Bundle {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn finish(name: &str, mut w: BufWriter<File>) -> Result<()> {
        w.flush().with_context(|| format!("writing {name}"))
    }

    pub fn field(&mut self, name: &str, field: &Field) -> Result<()> {
        let mut w = self.open(name)?;
        field.write_csv(&mut w).with_context(|| format!("writing {name}"))?;
        Self::finish(name, w)
    }

    pub fn ensemble(&mut self, name: &str, ensemble: &Ensemble) -> Result<()> {
        let file = ensemble_file(name);
        let mut w = self.open(&file)?;
        ensemble.write_csv(&mut w).with_context(|| format!("writing {file}"))?;
        Self::finish(&file, w)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.open(name)?;
        w.write_all(text.as_bytes()).with_context(|| format!("writing {name}"))?;
        Self::finish(name, w)
    }

    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
