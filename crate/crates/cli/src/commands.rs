use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use saturate_core::de_engine::{CoupledEngine, CoupledParams, DeConfig, DeEngine, EnsembleParams};
use saturate_core::potential::{
    build_linear_system, check_necessary_condition, solve_system, threshold_report, DShape, DeSystem, GapConfig,
    PotentialError, PotentialModel, SystemSpec,
};
use saturate_core::verify::{self, Suite, VerifyOptions};

use crate::config::RunConfig;

/// What a command produced: a JSON payload, optional CSV rows, and whether
/// it counts as a verification failure.
pub struct Outcome {
    pub result: Value,
    pub csv: Option<Table>,
    pub failed: bool,
    /// Human-readable text printed to stdout instead of the JSON record.
    pub summary: Option<String>,
    pub timing: Value,
}

impl Outcome {
    fn json(result: Value) -> Self {
        Outcome { result, csv: None, failed: false, summary: None, timing: Value::Null }
    }
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn de_config(cfg: &RunConfig) -> DeConfig {
    DeConfig { max_iter: cfg.max_iter, ..DeConfig::default() }
}

#[derive(Debug, Clone, Serialize)]
struct ThresholdRow {
    dv: usize,
    dc: usize,
    m: usize,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    eps_bp: f64,
}

pub fn threshold(cfg: &RunConfig) -> Result<Outcome> {
    let de = de_config(cfg);
    if let Some(eps) = cfg.eps {
        let (dv, dc, m) = cfg.single();
        let p = EnsembleParams::new(dv, dc, m)?;
        let report = if cfg.coupled {
            CoupledEngine::with_backend(CoupledParams::new(p, cfg.l[0], cfg.w[0])?, cfg.backend)?.run(eps, &de)?
        } else {
            DeEngine::with_backend(p, cfg.backend)?.fixed_point(eps, &de)?
        };
        return Ok(Outcome::json(serde_json::to_value(report)?));
    }
    let mut jobs = Vec::new();
    for &dv in &cfg.dv {
        for &dc in &cfg.dc {
            for &m in &cfg.m {
                if cfg.coupled {
                    for &l in &cfg.l {
                        for &w in &cfg.w {
                            jobs.push((dv, dc, m, Some((l, w))));
                        }
                    }
                } else {
                    jobs.push((dv, dc, m, None));
                }
            }
        }
    }
    // validate everything before spending time on any threshold
    for &(dv, dc, m, lw) in &jobs {
        let p = EnsembleParams::new(dv, dc, m)?;
        if let Some((l, w)) = lw {
            CoupledParams::new(p, l, w)?;
        }
    }
    let rows: Vec<ThresholdRow> = jobs
        .par_iter()
        .map(|&(dv, dc, m, lw)| -> Result<ThresholdRow> {
            let p = EnsembleParams::new(dv, dc, m)?;
            let eps_bp = match lw {
                Some((l, w)) => {
                    CoupledEngine::with_backend(CoupledParams::new(p, l, w)?, cfg.backend)?.bp_threshold(cfg.tol, &de)?
                }
                None => DeEngine::with_backend(p, cfg.backend)?.bp_threshold(cfg.tol, &de)?,
            };
            Ok(ThresholdRow { dv, dc, m, l: lw.map(|x| x.0), w: lw.map(|x| x.1), eps_bp })
        })
        .collect::<Result<_>>()?;
    let table = Table {
        header: vec!["dv", "dc", "m", "L", "w", "eps_bp"],
        rows: rows
            .iter()
            .map(|r| {
                let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
                vec![r.dv.to_string(), r.dc.to_string(), r.m.to_string(), opt(r.l), opt(r.w), format!("{}", r.eps_bp)]
            })
            .collect(),
    };
    let result = if cfg.sweep { serde_json::to_value(&rows)? } else { serde_json::to_value(&rows[0])? };
    Ok(Outcome { csv: Some(table), ..Outcome::json(result) })
}

/// A system file: a tagged system description plus optional `shape` and
/// `scale` keys.
struct SystemFile {
    spec: SystemSpec,
    shape: Option<DShape>,
    scale: Option<String>,
}

fn load_system(path: &Path) -> Result<SystemFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading system {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing system {}", path.display()))?;
    let spec: SystemSpec =
        serde_json::from_value(value.clone()).with_context(|| format!("invalid system in {}", path.display()))?;
    let shape = match value.get("shape") {
        None => None,
        Some(Value::String(s)) => Some(DShape::parse(s)?),
        Some(other) => Some(serde_json::from_value(other.clone()).context("invalid shape")?),
    };
    let scale = value.get("scale").map(|v| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    });
    Ok(SystemFile { spec, shape, scale })
}

fn system_for(cfg: &RunConfig) -> Result<(SystemSpec, DeSystem, DShape, Option<String>)> {
    let (spec, file_shape, scale) = match &cfg.system {
        Some(path) => {
            let f = load_system(path)?;
            (f.spec, f.shape, f.scale)
        }
        None => {
            let (dv, dc, m) = cfg.single();
            (SystemSpec::Nonbinary { dv, dc, m }, None, None)
        }
    };
    let sys = spec.build()?;
    let shape = match &cfg.shape {
        Some(s) => DShape::parse(s)?,
        None => file_shape.unwrap_or_else(|| sys.default_shape.clone()),
    };
    Ok((spec, sys, shape, scale))
}

pub fn potential(cfg: &RunConfig) -> Result<Outcome> {
    let (spec, sys, shape, scale) = system_for(cfg)?;
    let check = check_necessary_condition(&sys.f, &sys.g, &shape);
    let mut result = json!({
        "system": spec,
        "shape": shape,
        "necessaryCondition": check,
    });
    if cfg.check_only {
        result["verdict"] = json!(if check.holds { "holds" } else { "fails" });
        return Ok(Outcome::json(result));
    }
    let ls = build_linear_system(&sys.f, &sys.g, &shape)?;
    result["counts"] = serde_json::to_value(ls.counts())?;
    match solve_system(&ls) {
        Ok(mut sol) => {
            if let Some(a) = &scale {
                let a = a.parse().map_err(|_| anyhow!("invalid scale {a:?}"))?;
                sol = sol.scaled(&a);
            }
            result["verdict"] = json!("solved");
            result["solution"] = serde_json::to_value(sol.to_document())?;
        }
        Err(
            e @ (PotentialError::Infeasible
            | PotentialError::Underdetermined { .. }
            | PotentialError::NotAdmissible(_)),
        ) => {
            result["verdict"] = json!(match e {
                PotentialError::Infeasible => "infeasible",
                PotentialError::Underdetermined { .. } => "underdetermined",
                _ => "not-admissible",
            });
            result["reason"] = json!(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(Outcome::json(result))
}

pub fn saturate(cfg: &RunConfig) -> Result<Outcome> {
    let (spec, sys, shape, _) = system_for(cfg)?;
    let (sol, model) = PotentialModel::from_system(&sys, &shape)?;
    let gap_cfg = GapConfig { de: de_config(cfg), ..GapConfig::default() };
    let report = threshold_report(&model, cfg.tol, &gap_cfg, cfg.points, cfg.grid);
    let mut coupled = Vec::new();
    if let SystemSpec::Nonbinary { dv, dc, m } = spec {
        let p = EnsembleParams::new(dv, dc, m)?;
        let pairs: Vec<(usize, usize)> = cfg.l.iter().flat_map(|&l| cfg.w.iter().map(move |&w| (l, w))).collect();
        for &(l, w) in &pairs {
            CoupledParams::new(p, l, w)?;
        }
        coupled = pairs
            .par_iter()
            .map(|&(l, w)| -> Result<Value> {
                let th = CoupledEngine::with_backend(CoupledParams::new(p, l, w)?, cfg.backend)?.bp_threshold(cfg.tol, &gap_cfg.de)?;
                Ok(json!({ "L": l, "w": w, "epsBP": th, "gapToEpsStar": report.eps_star - th }))
            })
            .collect::<Result<_>>()?;
    }
    let table = Table {
        header: vec!["eps", "delta_e"],
        rows: report.energy_gap_curve.iter().map(|(e, g)| vec![format!("{e}"), format!("{g}")]).collect(),
    };
    let result = json!({
        "system": spec,
        "D": sol.to_document().d,
        "epsBP": report.eps_bp,
        "epsStar": report.eps_star,
        "energyGapCurve": report.energy_gap_curve.iter().map(|(e, g)| json!({"eps": e, "deltaE": finite(*g)})).collect::<Vec<_>>(),
        "wBound": {
            "eps": report.w_bound.eps,
            "K": report.w_bound.k,
            "alpha": report.w_bound.alpha,
            "beta": report.w_bound.beta,
            "gamma": report.w_bound.gamma,
            "deltaE": finite(report.w_bound.delta_e),
            "wMin": finite(report.w_bound.w_min),
        },
        "coupled": coupled,
    });
    Ok(Outcome { csv: Some(table), ..Outcome::json(result) })
}

/// JSON has no infinities; they are written as the strings "inf"/"-inf".
fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

pub fn verify(cfg: &RunConfig, m: Option<usize>) -> Result<Outcome> {
    let suites: Vec<Suite> = if cfg.suite.is_empty() || cfg.suite.iter().any(|s| s == "all") {
        Suite::ALL.to_vec()
    } else {
        cfg.suite.iter().map(|s| s.parse::<Suite>().map_err(|e| anyhow!(e))).collect::<Result<_>>()?
    };
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        m,
        seed: cfg.seed.unwrap_or(defaults.seed),
        samples: cfg.samples.unwrap_or(defaults.samples),
        ..defaults
    };
    if let Some(m) = m {
        if m == 0 || m > 8 {
            bail!("--m for verify must lie in 1..=8");
        }
    }
    let rep = verify::run(&suites, &opts);
    let mut text = String::new();
    text.push_str(&format!("{:<22} {:>6} {:>6} {:>9}\n", "suite", "checks", "failed", "seconds"));
    for s in &rep.suites {
        let failed = s.failures().count();
        text.push_str(&format!("{:<22} {:>6} {:>6} {:>9.1}\n", s.suite.name(), s.checks.len(), failed, s.seconds));
        for c in s.failures() {
            text.push_str(&format!("  FAIL {}/{}: {}\n", s.suite.name(), c.id, c.detail));
        }
    }
    text.push_str(if rep.passed { "all suites passed\n" } else { "verification FAILED\n" });
    let result = json!({
        "passed": rep.passed,
        "suites": rep.suites.iter().map(|s| json!({
            "suite": s.suite,
            "passed": s.passed(),
            "checks": s.checks,
        })).collect::<Vec<_>>(),
    });
    let timing = json!({
        "suites": rep.suites.iter().map(|s| (s.suite.name().to_string(), json!(s.seconds))).collect::<serde_json::Map<_, _>>(),
    });
    Ok(Outcome { result, csv: None, failed: !rep.passed, summary: Some(text), timing })
}
