//! Self-checks exposed through `saturate verify`.
//!
//! Each suite returns a list of named checks. Reference values
//! live here as constants; everything else is recomputed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::ratio_identities;
use crate::de_engine::{coupled_bp_threshold, CoupledParams, DeConfig, DeEngine, EnsembleParams};
use crate::message_algebra::{boxdot, boxtimes, ProbVector};
use crate::polynomial::{EpsPoly, Monomial, MultiPoly};
use crate::potential::{
    build_linear_system, check_necessary_condition, counting_formulas, solve_system, DMatrix, DShape, GapConfig,
    PotentialError, PotentialModel, PotentialSolution, SolutionDocument, SystemSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    RatioIdentities,
    Monotonicity,
    Simplex,
    Gradient,
    Golden,
    CoupledThresholds,
    PotentialSystems,
    Bilayer,
    SmallExample,
    DiagonalInfeasible,
    Counting,
    Saturation,
}

impl Suite {
    pub const ALL: [Suite; 12] = [
        Suite::RatioIdentities,
        Suite::Monotonicity,
        Suite::Simplex,
        Suite::Gradient,
        Suite::Golden,
        Suite::PotentialSystems,
        Suite::Bilayer,
        Suite::SmallExample,
        Suite::DiagonalInfeasible,
        Suite::Counting,
        Suite::CoupledThresholds,
        Suite::Saturation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::RatioIdentities => "ratio-identities",
            Suite::Monotonicity => "monotonicity",
            Suite::Simplex => "simplex",
            Suite::Gradient => "gradient",
            Suite::Golden => "golden",
            Suite::CoupledThresholds => "coupled-thresholds",
            Suite::PotentialSystems => "potential-systems",
            Suite::Bilayer => "bilayer",
            Suite::SmallExample => "small-example",
            Suite::DiagonalInfeasible => "diagonal-infeasible",
            Suite::Counting => "counting",
            Suite::Saturation => "saturation",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "appendix-a" => Some(Suite::RatioIdentities),
            "table2" => Some(Suite::PotentialSystems),
            _ => None,
        };
        alias.or_else(|| Suite::ALL.into_iter().find(|x| x.name() == s)).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            format!("unknown suite {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(id: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { id: id.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Restricts dimension-indexed suites to this `m`.
    pub m: Option<usize>,
    pub seed: u64,
    /// Random samples per property and dimension.
    pub samples: usize,
    /// Bisection tolerance for coupled thresholds.
    pub threshold_tol: f64,
    /// Bisection tolerance for the potential threshold.
    pub potential_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { m: None, seed: 0x5eed, samples: 1000, threshold_tol: 1e-4, potential_tol: 1e-6 }
    }
}

impl VerifyOptions {
    fn dims(&self, default: impl IntoIterator<Item = usize>) -> Vec<usize> {
        match self.m {
            Some(m) => vec![m],
            None => default.into_iter().collect(),
        }
    }
}

pub fn run(suites: &[Suite], opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let suites: Vec<SuiteReport> = suites.iter().map(|&s| run_suite(s, opts)).collect();
    let passed = suites.iter().all(SuiteReport::passed);
    VerifyReport { suites, passed, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::RatioIdentities => ratio_suite(opts),
        Suite::Monotonicity => monotonicity_suite(opts),
        Suite::Simplex => simplex_suite(opts),
        Suite::Gradient => gradient_suite(opts),
        Suite::Golden => golden_suite(),
        Suite::CoupledThresholds => coupled_threshold_suite(opts),
        Suite::PotentialSystems => potential_system_suite(),
        Suite::Bilayer => bilayer_suite(),
        Suite::SmallExample => small_example_suite(),
        Suite::DiagonalInfeasible => diagonal_suite(opts),
        Suite::Counting => counting_suite(opts),
        Suite::Saturation => saturation_suite(opts),
    };
    SuiteReport { suite, checks, seconds: start.elapsed().as_secs_f64() }
}

fn ratio_suite(opts: &VerifyOptions) -> Vec<Check> {
    opts.dims(1..=8)
        .into_iter()
        .map(|m| {
            let rep = ratio_identities(m as u32);
            let detail = match rep.failures.first() {
                None => format!("{} identities", rep.checked),
                Some(first) => format!("{} of {} failed, first: {first}", rep.failures.len(), rep.checked),
            };
            Check::new(format!("m={m}"), rep.failures.is_empty(), detail)
        })
        .collect()
}

fn random_ccdf(rng: &mut StdRng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Componentwise-ordered pair of CCDF vectors.
fn random_pair(rng: &mut StdRng, m: usize) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = (random_ccdf(rng, m), random_ccdf(rng, m));
    let lo = a.iter().zip(&b).map(|(p, q)| p.min(*q)).collect();
    let hi = a.iter().zip(&b).map(|(p, q)| p.max(*q)).collect();
    (lo, hi)
}

fn precedes(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(p, q)| *p <= q + 1e-12)
}

fn monotonicity_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for m in opts.dims(1..=4) {
        for (dv, dc) in [(3, 6), (2, 3), (4, 8)] {
            let engine = match DeEngine::new(EnsembleParams { dv, dc, m }) {
                Ok(e) => e,
                Err(e) => {
                    out.push(Check::new(format!("({dv},{dc},m={m})"), false, e.to_string()));
                    continue;
                }
            };
            let mut rng = StdRng::seed_from_u64(opts.seed ^ (m as u64) << 8 ^ (dc as u64));
            let mut bad = 0;
            for _ in 0..opts.samples {
                let (y, y2) = random_pair(&mut rng, m);
                let (e1, e2) = (rng.gen::<f64>(), rng.gen::<f64>());
                let (elo, ehi) = (e1.min(e2), e1.max(e2));
                let f_ok = precedes(&engine.f(&y, ehi), &engine.f(&y2, ehi))
                    && precedes(&engine.f(&y, elo), &engine.f(&y, ehi));
                let g_ok = precedes(&engine.g(&y), &engine.g(&y2));
                if !(f_ok && g_ok) {
                    bad += 1;
                }
            }
            out.push(Check::new(
                format!("({dv},{dc},m={m})"),
                bad == 0,
                format!("{bad} of {} ordered pairs violated", opts.samples),
            ));
        }
    }
    out
}

fn random_prob(rng: &mut StdRng, m: usize) -> ProbVector {
    let raw: Vec<f64> = (0..=m).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let rest: f64 = v[1..].iter().sum();
    v[0] = 1.0 - rest;
    ProbVector::new(v).expect("normalised by construction")
}

fn random_exact_prob(rng: &mut StdRng, m: usize) -> ProbVector<BigRational> {
    let raw: Vec<i64> = (0..=m).map(|_| rng.gen_range(0..50)).collect();
    let total: i64 = raw.iter().sum::<i64>().max(1);
    let mut v: Vec<BigRational> = raw.iter().map(|&k| BigRational::new(k.into(), total.into())).collect();
    if raw.iter().all(|&k| k == 0) {
        v[0] = BigRational::from_integer(1.into());
    }
    ProbVector::new(v).expect("normalised by construction")
}

fn simplex_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for m in opts.dims(1..=4) {
        let mut rng = StdRng::seed_from_u64(opts.seed.wrapping_add(m as u64));
        let mut bad = 0;
        let mut worst = 0.0f64;
        for _ in 0..opts.samples {
            let (a, b) = (random_prob(&mut rng, m), random_prob(&mut rng, m));
            for r in [boxdot(&a, &b), boxtimes(&a, &b)] {
                match r {
                    Ok(p) => {
                        let s: f64 = p.entries().iter().sum();
                        worst = worst.max((s - 1.0).abs());
                        if p.entries().iter().any(|&e| e < 0.0) || (s - 1.0).abs() > 1e-12 {
                            bad += 1;
                        }
                    }
                    Err(_) => bad += 1,
                }
            }
        }
        out.push(Check::new(
            format!("f64/m={m}"),
            bad == 0,
            format!("{bad} failures, worst mass error {worst:.1e}"),
        ));
        let mut exact_bad = 0;
        let n = (opts.samples / 20).max(10);
        for _ in 0..n {
            let (a, b) = (random_exact_prob(&mut rng, m), random_exact_prob(&mut rng, m));
            // the exact constructor rejects anything off the simplex
            if boxdot(&a, &b).is_err() || boxtimes(&a, &b).is_err() {
                exact_bad += 1;
            }
        }
        out.push(Check::new(format!("exact/m={m}"), exact_bad == 0, format!("{exact_bad} of {n} exact products off the simplex")));
    }
    out
}

fn nonbinary_model(dv: usize, dc: usize, m: usize) -> Result<(PotentialSolution, PotentialModel), PotentialError> {
    let sys = SystemSpec::Nonbinary { dv, dc, m }.build()?;
    PotentialModel::from_system(&sys, &DShape::StrictlyPositive)
}

fn central_difference(u: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|l| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[l] += h;
            b[l] -= h;
            (u(&a) - u(&b)) / (2.0 * h)
        })
        .collect()
}

/// Max componentwise error relative to the largest finite-difference entry
/// (floored at 1e-3 so that near-zero gradients are compared absolutely).
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-3f64, |s, v| s.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |e, (p, q)| e.max((p - q).abs())) / scale
}

fn gradient_suite(opts: &VerifyOptions) -> Vec<Check> {
    let points = 100;
    let mut out = Vec::new();
    for (dv, dc, m) in [(3, 4, 1), (3, 4, 2), (3, 4, 3), (3, 6, 2), (2, 3, 2)] {
        let tag = format!("({dv},{dc},m={m})");
        let (_, model) = match nonbinary_model(dv, dc, m) {
            Ok(x) => x,
            Err(e) => {
                out.push(Check::new(tag, false, e.to_string()));
                continue;
            }
        };
        let mut rng = StdRng::seed_from_u64(opts.seed ^ 0x9e37 ^ (m as u64) ^ ((dc as u64) << 4));
        let mut worst = 0.0f64;
        for _ in 0..points {
            let x: Vec<f64> = random_ccdf(&mut rng, m).into_iter().map(|v| 0.01 + 0.98 * v).collect();
            let eps = rng.gen_range(0.05..1.0);
            let fd = central_difference(|p| model.u(p, eps), &x);
            worst = worst.max(relative_error(&model.grad(&x, eps), &fd));
        }
        out.push(Check::new(format!("{tag}/single"), worst < 1e-5, format!("max relative error {worst:.2e}")));

        let w = 3;
        let cp = CoupledParams { base: EnsembleParams { dv, dc, m }, l: 4, w };
        let mut worst = 0.0f64;
        for _ in 0..points {
            let x: Vec<Vec<f64>> = (0..cp.positions())
                .map(|_| random_ccdf(&mut rng, m).into_iter().map(|v| 0.01 + 0.98 * v).collect())
                .collect();
            let eps = rng.gen_range(0.05..1.0);
            let grad = match model.coupled_grad(&cp, &x, eps) {
                Ok(g) => g.concat(),
                Err(_) => vec![f64::NAN],
            };
            let fd = central_difference(
                |p| model.coupled_u(&cp, &p.chunks(m).map(<[f64]>::to_vec).collect::<Vec<_>>(), eps).unwrap_or(f64::NAN),
                &x.concat(),
            );
            worst = worst.max(relative_error(&grad, &fd));
        }
        let ok = worst < 1e-5;
        out.push(Check::new(format!("{tag}/coupled"), ok, format!("max relative error {worst:.2e}")));

        let cfg = DeConfig { tol: 1e-14, ..DeConfig::default() };
        let mut worst = 0.0f64;
        for k in 0..20 {
            let eps = 0.05 * (k as f64 + 0.5);
            let start = random_ccdf(&mut rng, m);
            let it = model.iterate_from(start, eps, &cfg);
            worst = worst.max(model.grad(&it.x, eps).iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        out.push(Check::new(format!("{tag}/fixed-points"), worst < 1e-6, format!("max gradient {worst:.2e}")));

        let mut bad = 0;
        for _ in 0..points {
            let x = random_ccdf(&mut rng, m);
            let (e1, e2) = (rng.gen::<f64>(), rng.gen::<f64>());
            if (e1 - e2).abs() < 1e-9 || x.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (lo, hi) = (e1.min(e2), e1.max(e2));
            if model.u(&x, hi) >= model.u(&x, lo) {
                bad += 1;
            }
        }
        out.push(Check::new(format!("{tag}/decreasing-in-eps"), bad == 0, format!("{bad} of {points} pairs not decreasing")));
    }
    out
}

/// A stored solution: the system, the shape and the expected document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub system: SystemSpec,
    pub shape: DShape,
    /// Rescaling applied to the normalised solution before comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
    pub solution: SolutionDocument,
}

pub const GOLDEN: [(&str, &str); 5] = [
    ("nonbinary-2-3-2", include_str!("../golden/nonbinary-2-3-2.json")),
    ("nonbinary-3-4-2", include_str!("../golden/nonbinary-3-4-2.json")),
    ("nonbinary-3-4-3", include_str!("../golden/nonbinary-3-4-3.json")),
    ("bilayer-3-3-6-6", include_str!("../golden/bilayer-3-3-6-6.json")),
    ("bilayer-2-3-4-5", include_str!("../golden/bilayer-2-3-4-5.json")),
];

/// Solves a golden case's system from scratch.
pub fn solve_case(system: &SystemSpec, shape: &DShape, scale: Option<&str>) -> Result<SolutionDocument, PotentialError> {
    let sys = system.build()?;
    let mut sol = solve_system(&build_linear_system(&sys.f, &sys.g, shape)?)?;
    if let Some(a) = scale {
        let a: BigRational = a.parse().map_err(|_| PotentialError::InvalidSystem(format!("bad scale {a:?}")))?;
        sol = sol.scaled(&a);
    }
    Ok(sol.to_document())
}

fn golden_suite() -> Vec<Check> {
    GOLDEN
        .iter()
        .map(|(name, text)| {
            let case: GoldenCase = match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return Check::new(*name, false, format!("unreadable golden file: {e}")),
            };
            match solve_case(&case.system, &case.shape, case.scale.as_deref()) {
                Ok(doc) if doc == case.solution => Check::new(*name, true, format!("D = {:?}", doc.d)),
                Ok(doc) => Check::new(*name, false, format!("solution drifted: D = {:?}, F = {}", doc.d, doc.big_f)),
                Err(e) => Check::new(*name, false, e.to_string()),
            }
        })
        .collect()
}

/// Reference coupled BP thresholds (L → ∞ regime) for `dv = 3`, indexed by
/// `dc` and then `m ∈ {1, 3, 5, 8}`.
pub const REFERENCE_COUPLED_THRESHOLDS: [(usize, [f64; 4]); 4] = [
    (6, [0.4880, 0.4978, 0.4995, 0.4998]),
    (9, [0.3196, 0.3307, 0.3328, 0.3331]),
    (12, [0.2372, 0.2476, 0.2495, 0.2497]),
    (15, [0.1886, 0.1978, 0.1995, 0.1996]),
];

pub const REFERENCE_DIMENSIONS: [usize; 4] = [1, 3, 5, 8];

pub fn reference_coupled_threshold(dc: usize, m: usize) -> Option<f64> {
    let col = REFERENCE_DIMENSIONS.iter().position(|&x| x == m)?;
    REFERENCE_COUPLED_THRESHOLDS.iter().find(|(d, _)| *d == dc).map(|(_, row)| row[col])
}

fn coupled_threshold_suite(opts: &VerifyOptions) -> Vec<Check> {
    let dims = opts.dims([1, 3]);
    let cases: Vec<(usize, usize)> = dims
        .iter()
        .flat_map(|&m| REFERENCE_COUPLED_THRESHOLDS.iter().map(move |(dc, _)| (*dc, m)))
        .collect();
    cases
        .par_iter()
        .map(|&(dc, m)| {
            let tag = format!("(3,{dc},m={m},L=100,w=3)");
            let Some(expected) = reference_coupled_threshold(dc, m) else {
                return Check::new(tag, false, format!("no reference value for m = {m}"));
            };
            let cp = CoupledParams { base: EnsembleParams { dv: 3, dc, m }, l: 100, w: 3 };
            match coupled_bp_threshold(cp, opts.threshold_tol, &DeConfig::default()) {
                Ok(got) => Check::new(
                    tag,
                    (got - expected).abs() < 2e-3,
                    format!("{got:.5} vs reference {expected:.4} (|diff| {:.1e})", (got - expected).abs()),
                ),
                Err(e) => Check::new(tag, false, e.to_string()),
            }
        })
        .collect()
}

/// Reference `D` matrices (with `d11 = 1`) and system sizes
/// `(|S^F|+|S^G|, N_φ+N_μ)` for `(dv, dc, m)`.
pub fn reference_systems() -> Vec<((usize, usize, usize), DMatrix, (u64, u64))> {
    vec![
        ((3, 4, 2), DMatrix::from_integers(&[&[1, 2], &[2, 1]]), (16, 24)),
        ((3, 4, 3), DMatrix::from_integers(&[&[1, 3, 4], &[3, 3, 2], &[4, 2, 1]]), (41, 75)),
    ]
}

fn potential_system_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for ((dv, dc, m), d, (sets, eqs)) in reference_systems() {
        let tag = format!("({dv},{dc},{m})");
        let sys = match (SystemSpec::Nonbinary { dv, dc, m }).build() {
            Ok(s) => s,
            Err(e) => {
                out.push(Check::new(tag, false, e.to_string()));
                continue;
            }
        };
        let ls = match build_linear_system(&sys.f, &sys.g, &DShape::StrictlyPositive) {
            Ok(l) => l,
            Err(e) => {
                out.push(Check::new(tag, false, e.to_string()));
                continue;
            }
        };
        let c = ls.counts();
        out.push(Check::new(
            format!("{tag}/counts"),
            (c.size_f + c.size_g, c.n_phi + c.n_mu) == (sets, eqs),
            format!("{}/{} vs reference {sets}/{eqs}", c.size_f + c.size_g, c.n_phi + c.n_mu),
        ));
        match solve_system(&ls) {
            Ok(sol) => out.push(Check::new(
                format!("{tag}/D"),
                sol.d == d,
                format!("solved D = {} vs reference {d}", sol.d),
            )),
            Err(e) => out.push(Check::new(format!("{tag}/D"), false, e.to_string())),
        }
    }
    out
}

/// `ℓ1 (x1 + ((1-x1)^r1 - 1)/r1) + ℓ2 (x2 + ((1-x2)^r2 - 1)/r2)`.
pub fn bilayer_g_closed_form(l1: u32, l2: u32, r1: u32, r2: u32) -> MultiPoly {
    let term = |k: usize, l: u32, r: u32| {
        let x = MultiPoly::var(2, k);
        let one = MultiPoly::constant(2, EpsPoly::constant(BigRational::from_integer(1.into())));
        let pow = (0..r).fold(one.clone(), |acc, _| acc * (one.clone() - x.clone()));
        let inv_r = BigRational::new(1.into(), (r as i64).into());
        (x + (pow - one).scale(&inv_r)).scale(&BigRational::from_integer((l as i64).into()))
    };
    (term(0, l1, r1) + term(1, l2, r2)).with_dim(2)
}

/// The bilayer DE maps written as generic polynomial text.
pub fn bilayer_generic_spec(l1: u32, l2: u32, r1: u32, r2: u32) -> SystemSpec {
    let mono = |a: u32, b: u32| {
        let mut parts = vec!["eps".to_string()];
        for (k, e) in [(1, a), (2, b)] {
            match e {
                0 => {}
                1 => parts.push(format!("x{k}")),
                _ => parts.push(format!("x{k}^{e}")),
            }
        }
        parts.join("*")
    };
    let check = |k: usize, r: u32| {
        let x = MultiPoly::var(2, k);
        let one = MultiPoly::constant(2, EpsPoly::constant(BigRational::from_integer(1.into())));
        let pow = (0..r - 1).fold(one.clone(), |acc, _| acc * (one.clone() - x.clone()));
        (one - pow).to_string()
    };
    SystemSpec::Generic {
        m: 2,
        f: vec![mono(l1 - 1, l2), mono(l1, l2 - 1)],
        g: vec![check(0, r1), check(1, r2)],
        eps_degree: Some(1),
        monotone: false,
    }
}

fn bilayer_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for (l1, l2, r1, r2) in [(3, 3, 6, 6), (2, 3, 4, 5), (4, 2, 3, 7)] {
        let tag = format!("({l1},{l2},{r1},{r2})");
        let run = || -> Result<(bool, String), PotentialError> {
            let sys = bilayer_generic_spec(l1, l2, r1, r2).build()?;
            let check = check_necessary_condition(&sys.f, &sys.g, &DShape::Diagonal);
            let sol = solve_system(&build_linear_system(&sys.f, &sys.g, &DShape::Diagonal)?)?
                .scaled(&BigRational::from_integer((l1 as i64).into()));
            let big_f = MultiPoly::from_terms(2, [(Monomial::new(vec![l1, l2]), EpsPoly::eps())]);
            let d = DMatrix::from_integers(&[&[l1 as i64, 0], &[0, l2 as i64]]);
            let ok_f = sol.big_f == big_f;
            let ok_g = sol.big_g == bilayer_g_closed_form(l1, l2, r1, r2);
            Ok((
                check.holds && ok_f && ok_g && sol.d == d,
                format!("condition {}, D = {}, F = {}, G matches: {ok_g}", check.holds, sol.d, sol.big_f),
            ))
        };
        match run() {
            Ok((ok, detail)) => out.push(Check::new(tag, ok, detail)),
            Err(e) => out.push(Check::new(tag, false, e.to_string())),
        }
    }
    out
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn small_example_suite() -> Vec<Check> {
    let parse = |s: &str| MultiPoly::parse(s, 2);
    let expect_f = ["2/3*eps*x1 + 1/3*eps^2*x1 + 4/3*eps*x2 - 4/3*eps^2*x2", "eps^2*x2"];
    let expect_g = ["2*x1 - x1^2", "2/3*x1^2 - 4/3*x1*x2 + 2*x2 - 1/3*x2^2"];
    let big_f = "1/3*eps*x1^2 + 1/6*eps^2*x1^2 + 4/3*eps*x1*x2 + 2/3*eps^2*x1*x2 + 4/3*eps*x2^2 - 5/6*eps^2*x2^2";
    let big_g = "x1^2 + 1/9*x1^3 + 4*x1*x2 - 2/3*x1*x2^2 - 4/3*x1^2*x2 + x2^2 - 1/9*x2^3";
    let mut out = Vec::new();
    let sys = match (SystemSpec::Nonbinary { dv: 2, dc: 3, m: 2 }).build() {
        Ok(s) => s,
        Err(e) => return vec![Check::new("(2,3,2)", false, e.to_string())],
    };
    let same = |got: &[MultiPoly], want: &[&str]| {
        got.iter().zip(want).all(|(p, s)| parse(s).map(|q| q.with_dim(2) == p.clone().with_dim(2)).unwrap_or(false))
    };
    out.push(Check::new("f", same(&sys.f, &expect_f), sys.f.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ; ")));
    out.push(Check::new("g", same(&sys.g, &expect_g), sys.g.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ; ")));
    let sol = match build_linear_system(&sys.f, &sys.g, &DShape::StrictlyPositive).and_then(|l| solve_system(&l)) {
        Ok(s) => s,
        Err(e) => {
            out.push(Check::new("solve", false, e.to_string()));
            return out;
        }
    };
    let d = DMatrix::from_integers(&[&[1, 2], &[2, 1]]);
    out.push(Check::new("D", sol.d == d, sol.d.to_string()));
    let phi = [
        (vec![2, 0], EpsPoly::new(vec![rat(0, 1), rat(1, 3), rat(1, 6)])),
        (vec![1, 1], EpsPoly::new(vec![rat(0, 1), rat(4, 3), rat(2, 3)])),
        (vec![0, 2], EpsPoly::new(vec![rat(0, 1), rat(4, 3), rat(-5, 6)])),
    ];
    let phi_ok = sol.big_f.len() == phi.len() && phi.iter().all(|(a, c)| sol.big_f.coeff(&Monomial::new(a.clone())) == *c);
    out.push(Check::new("phi", phi_ok, sol.big_f.to_string()));
    let mu = [
        (vec![2, 0], rat(1, 1)),
        (vec![3, 0], rat(1, 9)),
        (vec![1, 1], rat(4, 1)),
        (vec![1, 2], rat(-2, 3)),
        (vec![2, 1], rat(-4, 3)),
        (vec![0, 2], rat(1, 1)),
        (vec![0, 3], rat(-1, 9)),
    ];
    let mu_ok = sol.big_g.len() == mu.len()
        && mu.iter().all(|(a, c)| sol.big_g.coeff(&Monomial::new(a.clone())) == EpsPoly::constant(c.clone()));
    out.push(Check::new("mu", mu_ok, sol.big_g.to_string()));
    out.push(Check::new("F", parse(big_f).map(|p| p.with_dim(2) == sol.big_f).unwrap_or(false), sol.big_f.to_string()));
    out.push(Check::new("G", parse(big_g).map(|p| p.with_dim(2) == sol.big_g).unwrap_or(false), sol.big_g.to_string()));
    out
}

fn diagonal_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for (dv, dc) in [(2, 3), (3, 4), (3, 6)] {
        for m in opts.dims(2..=4) {
            let tag = format!("({dv},{dc},m={m})");
            let run = || -> Result<(bool, String), PotentialError> {
                let sys = SystemSpec::Nonbinary { dv, dc, m }.build()?;
                let check = check_necessary_condition(&sys.f, &sys.g, &DShape::Diagonal);
                let solved = solve_system(&build_linear_system(&sys.f, &sys.g, &DShape::Diagonal)?);
                let infeasible = matches!(solved, Err(PotentialError::Infeasible));
                let witness = check.witness.map(|w| format!("{:?} side, monomial {:?}", w.side, w.monomial)).unwrap_or_default();
                Ok((!check.holds && infeasible, format!("condition holds: {}, infeasible: {infeasible}, {witness}", check.holds)))
            };
            match run() {
                Ok((ok, detail)) => out.push(Check::new(tag, ok, detail)),
                Err(e) => out.push(Check::new(tag, false, e.to_string())),
            }
        }
    }
    out
}

fn counting_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for (dv, dc) in [(2, 3), (3, 4), (3, 6)] {
        for m in opts.dims(1..=4) {
            let tag = format!("({dv},{dc},m={m})");
            let enumerated = SystemSpec::Nonbinary { dv, dc, m }
                .build()
                .and_then(|s| build_linear_system(&s.f, &s.g, &DShape::StrictlyPositive))
                .map(|l| l.counts());
            match enumerated {
                Ok(c) => {
                    let formula = counting_formulas(dv, dc, m);
                    out.push(Check::new(
                        tag,
                        c == formula,
                        format!(
                            "enumerated |S^F|={} |S^G|={} Nphi={} Nmu={}; formula {} {} {} {}",
                            c.size_f, c.size_g, c.n_phi, c.n_mu, formula.size_f, formula.size_g, formula.n_phi, formula.n_mu
                        ),
                    ));
                }
                Err(e) => out.push(Check::new(tag, false, e.to_string())),
            }
        }
    }
    out
}

/// Coupled threshold at `(L, w)` against `ε*`, plus the sign pattern of the
/// energy gap, for one `(dv, dc, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub eps_bp: f64,
    pub eps_star: f64,
    pub coupled: f64,
    pub gap_at_bp: f64,
    pub gap_at_star: f64,
    pub gap_decreasing: bool,
}

pub fn saturation_point(dv: usize, dc: usize, m: usize, l: usize, w: usize, opts: &VerifyOptions) -> Result<SaturationPoint, PotentialError> {
    let (_, model) = nonbinary_model(dv, dc, m)?;
    let cfg = GapConfig::default();
    let tol = opts.potential_tol;
    let eps_bp = model.bp_threshold(tol, &cfg.de);
    // upper end of the final bisection bracket: DE no longer decodes there
    let bp_upper = eps_bp + tol / 2.0;
    let eps_star = model.potential_threshold(bp_upper, tol, &cfg);
    let curve: Vec<f64> = (1..20)
        .map(|k| bp_upper + (eps_star - bp_upper) * k as f64 / 20.0)
        .map(|e| model.energy_gap(e, &cfg).value)
        .collect();
    let cp = CoupledParams::new(EnsembleParams::new(dv, dc, m)?, l, w)?;
    Ok(SaturationPoint {
        eps_bp,
        eps_star,
        coupled: coupled_bp_threshold(cp, opts.threshold_tol, &cfg.de)?,
        gap_at_bp: model.energy_gap(bp_upper, &cfg).value,
        gap_at_star: model.energy_gap(eps_star, &cfg).value,
        gap_decreasing: curve.windows(2).all(|p| p[1] < p[0]),
    })
}

fn saturation_suite(opts: &VerifyOptions) -> Vec<Check> {
    opts.dims([1, 2])
        .into_iter()
        .map(|m| {
            let tag = format!("(3,6,m={m},L=100,w=5)");
            match saturation_point(3, 6, m, 100, 5, opts) {
                Ok(p) => {
                    let ok = (p.coupled - p.eps_star).abs() < 2e-3
                        && p.gap_at_bp > 0.0
                        && p.gap_at_star.abs() < 1e-4
                        && p.gap_decreasing;
                    Check::new(
                        tag,
                        ok,
                        format!(
                            "coupled {:.5}, eps* {:.6}, eps_bp {:.6}, gap(bp) {:.3e}, gap(eps*) {:.1e}, decreasing {}",
                            p.coupled, p.eps_star, p.eps_bp, p.gap_at_bp, p.gap_at_star, p.gap_decreasing
                        ),
                    )
                }
                Err(e) => Check::new(tag, false, e.to_string()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("appendix-a".parse::<Suite>().unwrap(), Suite::RatioIdentities);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        let opts = VerifyOptions { samples: 200, ..VerifyOptions::default() };
        for s in [Suite::RatioIdentities, Suite::Simplex, Suite::Golden, Suite::Bilayer, Suite::SmallExample, Suite::DiagonalInfeasible] {
            let rep = run_suite(s, &opts);
            assert!(rep.passed(), "{s}: {:?}", rep.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn reference_lookup() {
        assert_eq!(reference_coupled_threshold(6, 3), Some(0.4978));
        assert_eq!(reference_coupled_threshold(6, 2), None);
    }

    #[test]
    fn generic_bilayer_text_matches_constructor() {
        let a = bilayer_generic_spec(2, 3, 4, 5).build().unwrap();
        let b = (SystemSpec::Bilayer { l1: 2, l2: 3, r1: 4, r2: 5 }).build().unwrap();
        assert_eq!(a.f, b.f);
        assert_eq!(a.g, b.g);
    }
}
