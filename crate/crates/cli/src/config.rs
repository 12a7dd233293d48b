//! Run configuration: command-line flags layered over an optional JSON file
//! layered over built-in defaults.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use saturate_core::de_engine::{Backend, DEFAULT_BISECT_TOL, DEFAULT_COUPLED_BISECT_TOL};

pub const DEFAULT_DV: usize = 3;
pub const DEFAULT_DC: usize = 6;
pub const DEFAULT_M: usize = 1;
pub const DEFAULT_L: usize = 100;
pub const DEFAULT_W: usize = 3;
pub const DEFAULT_MAX_ITER: usize = 50_000;
pub const DEFAULT_POTENTIAL_TOL: f64 = 1e-4;
pub const DEFAULT_POINTS: usize = 21;
pub const DEFAULT_GRID: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Ensemble selection. Every list flag takes comma-separated values; lists
/// longer than one are only accepted with `--sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct EnsembleArgs {
    /// Variable-node degree [default: 3]
    #[arg(long, value_delimiter = ',')]
    pub dv: Vec<usize>,
    /// Check-node degree [default: 6]
    #[arg(long, value_delimiter = ',')]
    pub dc: Vec<usize>,
    /// Field extension degree, symbols in GF(2^m) [default: 1]
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Use the spatially coupled ensemble
    #[arg(long)]
    pub coupled: bool,
    /// Chain length of the coupled ensemble [default: 100]
    #[arg(long = "L", value_delimiter = ',')]
    pub l: Vec<usize>,
    /// Coupling window [default: 3]
    #[arg(long, value_delimiter = ',')]
    pub w: Vec<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct IterArgs {
    /// Bisection tolerance on ε [default: 1e-5 uncoupled, 1e-4 coupled or potential]
    #[arg(long)]
    pub tol: Option<f64>,
    /// DE iteration cap per run [default: 50000]
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// JSON config file; explicit flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the result here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: json, or csv with --sweep]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Values accepted in a `--config` file; all optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct FileConfig {
    pub dv: Option<OneOrMany>,
    pub dc: Option<OneOrMany>,
    pub m: Option<OneOrMany>,
    pub coupled: Option<bool>,
    #[serde(rename = "L")]
    pub l: Option<OneOrMany>,
    pub w: Option<OneOrMany>,
    pub eps: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub sweep: Option<bool>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
    pub system: Option<PathBuf>,
    pub shape: Option<String>,
    pub check_only: Option<bool>,
    pub suite: Option<Vec<String>>,
    pub points: Option<usize>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn pick_list(cli: &[usize], file: Option<OneOrMany>, default: usize) -> Vec<usize> {
    if !cli.is_empty() {
        cli.to_vec()
    } else {
        file.map(OneOrMany::into_vec).filter(|v| !v.is_empty()).unwrap_or_else(|| vec![default])
    }
}

/// Fully resolved configuration, echoed into every result record.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub command: String,
    pub dv: Vec<usize>,
    pub dc: Vec<usize>,
    pub m: Vec<usize>,
    pub coupled: bool,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    pub w: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub sweep: bool,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    pub check_only: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suite: Vec<String>,
    pub points: usize,
    pub grid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub backend: Backend,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Whether the format came from a flag or the config file rather than the default.
    #[serde(skip)]
    pub format_explicit: bool,
}

/// Command-specific flags that are not part of the shared groups.
#[derive(Debug, Clone, Default)]
pub struct Extra {
    pub eps: Option<f64>,
    pub sweep: bool,
    pub system: Option<PathBuf>,
    pub shape: Option<String>,
    pub check_only: bool,
    pub suite: Vec<String>,
    pub points: Option<usize>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    /// `m` given to `verify`, where it restricts suites rather than picks an ensemble.
    pub verify_m: Option<usize>,
}

pub fn resolve(command: &str, ens: &EnsembleArgs, it: &IterArgs, out: &OutputArgs, extra: Extra) -> Result<RunConfig> {
    let file = FileConfig::load(out.config.as_ref())?;
    let coupled = ens.coupled || file.coupled.unwrap_or(false);
    let sweep = extra.sweep || file.sweep.unwrap_or(false);
    let default_tol = match command {
        "saturate" => DEFAULT_POTENTIAL_TOL,
        _ if coupled => DEFAULT_COUPLED_BISECT_TOL,
        _ => DEFAULT_BISECT_TOL,
    };
    let m = match extra.verify_m {
        Some(m) => vec![m],
        None => pick_list(&ens.m, file.m, DEFAULT_M),
    };
    let cfg = RunConfig {
        command: command.to_string(),
        dv: pick_list(&ens.dv, file.dv, DEFAULT_DV),
        dc: pick_list(&ens.dc, file.dc, DEFAULT_DC),
        m,
        coupled,
        l: pick_list(&ens.l, file.l, DEFAULT_L),
        w: pick_list(&ens.w, file.w, DEFAULT_W),
        eps: extra.eps.or(file.eps),
        tol: it.tol.or(file.tol).unwrap_or(default_tol),
        max_iter: it.max_iter.or(file.max_iter).unwrap_or(DEFAULT_MAX_ITER),
        sweep,
        format: out.format.or(file.format).unwrap_or(if sweep { Format::Csv } else { Format::Json }),
        jobs: out.jobs.or(file.jobs),
        system: extra.system.or(file.system),
        shape: extra.shape.or(file.shape),
        check_only: extra.check_only || file.check_only.unwrap_or(false),
        suite: if extra.suite.is_empty() { file.suite.unwrap_or_default() } else { extra.suite },
        points: extra.points.or(file.points).unwrap_or(DEFAULT_POINTS),
        grid: extra.grid.or(file.grid).unwrap_or(DEFAULT_GRID),
        seed: extra.seed.or(file.seed),
        samples: extra.samples.or(file.samples),
        backend: Backend::from_env()?,
        out: out.out.clone(),
        format_explicit: out.format.is_some() || file.format.is_some(),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            bail!("--tol must lie in (0, 1), got {}", self.tol);
        }
        if self.max_iter == 0 {
            bail!("--max-iter must be positive");
        }
        if let Some(eps) = self.eps {
            if !(0.0..=1.0).contains(&eps) {
                bail!("--eps must lie in [0, 1], got {eps}");
            }
        }
        if self.eps.is_some() && self.sweep {
            bail!("--eps runs a single ensemble and cannot be combined with --sweep");
        }
        if self.jobs == Some(0) {
            bail!("--jobs must be positive");
        }
        if self.points < 2 || self.grid < 2 {
            bail!("--points and --grid must be at least 2");
        }
        let ensemble = [&self.dv, &self.dc, &self.m];
        let chain = [&self.l, &self.w];
        if self.command == "saturate" {
            // the coupled comparison runs every (L, w) pair; the ensemble stays single
            if ensemble.iter().any(|v| v.len() > 1) {
                bail!("saturate takes a single ensemble; only --L and --w accept lists");
            }
        } else if !self.sweep && ensemble.iter().chain(chain.iter()).any(|v| v.len() > 1) {
            bail!("several values given for one parameter; add --sweep to run them all");
        }
        Ok(())
    }

    pub fn single(&self) -> (usize, usize, usize) {
        (self.dv[0], self.dc[0], self.m[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(dc: &[usize]) -> EnsembleArgs {
        EnsembleArgs { dc: dc.to_vec(), ..EnsembleArgs::default() }
    }

    #[test]
    fn defaults_depend_on_command() {
        let none = (IterArgs::default(), OutputArgs::default());
        let t = resolve("threshold", &ens(&[]), &none.0, &none.1, Extra::default()).unwrap();
        assert_eq!((t.single(), t.tol, t.format), ((3, 6, 1), DEFAULT_BISECT_TOL, Format::Json));
        let c = resolve("threshold", &EnsembleArgs { coupled: true, ..ens(&[]) }, &none.0, &none.1, Extra::default()).unwrap();
        assert_eq!(c.tol, DEFAULT_COUPLED_BISECT_TOL);
        let s = resolve("saturate", &ens(&[]), &none.0, &none.1, Extra::default()).unwrap();
        assert_eq!(s.tol, DEFAULT_POTENTIAL_TOL);
        let sw = resolve("threshold", &ens(&[6, 8]), &none.0, &none.1, Extra { sweep: true, ..Extra::default() }).unwrap();
        assert_eq!(sw.format, Format::Csv);
        assert!(!sw.format_explicit);
    }

    #[test]
    fn lists_need_sweep_except_chain_lists_in_saturate() {
        let none = (IterArgs::default(), OutputArgs::default());
        assert!(resolve("threshold", &ens(&[6, 8]), &none.0, &none.1, Extra::default()).is_err());
        let chain = EnsembleArgs { l: vec![50, 100], w: vec![3, 5], ..EnsembleArgs::default() };
        assert!(resolve("saturate", &chain, &none.0, &none.1, Extra::default()).is_ok());
        assert!(resolve("saturate", &ens(&[6, 8]), &none.0, &none.1, Extra::default()).is_err());
    }

    #[test]
    fn file_values_accept_scalars_or_lists() {
        let f: FileConfig = serde_json::from_str(r#"{"dc": [6, 8], "m": 2, "L": 64}"#).unwrap();
        assert_eq!(f.dc.unwrap().into_vec(), vec![6, 8]);
        assert_eq!(f.m.unwrap().into_vec(), vec![2]);
        assert_eq!(f.l.unwrap().into_vec(), vec![64]);
        assert!(serde_json::from_str::<FileConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
