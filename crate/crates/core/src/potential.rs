//! Potential functions for vector DE recursions `x = f(g(x); ε)`.
//!
//! A potential needs a symmetric invertible matrix `D` and scalar functions
//! `F`, `G` with `F' = f D` and `G' = g D`. Writing `F = Σ φ_a y^a` and
//! `G = Σ μ_a x^a` turns those identities into a homogeneous linear system
//! in `(d_ij, φ, μ)`, which is solved here exactly. The numeric half of the
//! module evaluates `U(x; ε) = g(x) D xᵀ - G(x) - F(g(x); ε)`, its coupled
//! analogue, the energy gap and the potential threshold.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::de_engine::{bisect, sup_norm, CoupledParams, DeConfig, DeError, EnsembleParams, Iteration};
use crate::linalg;
use crate::polynomial::{extract_de_polynomials, CompiledPoly, EpsPoly, Monomial, MultiPoly, PolyError, SupportSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("no potential of the requested shape exists: the linear system only has the zero solution")]
    Infeasible,
    #[error("solution space has dimension {nullity}; the normalisation d11 = 1 does not fix it")]
    Underdetermined { nullity: usize },
    #[error("solution is not admissible: {0}")]
    NotAdmissible(String),
    #[error("f has {f} components, g has {g}, shape expects {shape}")]
    DimensionMismatch { f: usize, g: usize, shape: usize },
    #[error("f has ε-degree {found}, above the declared bound {bound}")]
    EpsDegree { found: usize, bound: usize },
    #[error("internal consistency check failed: {0}")]
    Verification(String),
    #[error("invalid system description: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    De(#[from] DeError),
}

/// Allowed nonzero pattern of `D`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DShape {
    Diagonal,
    StrictlyPositive,
    Mask(Vec<Vec<bool>>),
}

impl DShape {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            DShape::Diagonal => i == j,
            DShape::StrictlyPositive => true,
            DShape::Mask(mask) => mask[i][j],
        }
    }

    fn check_dim(&self, m: usize) -> bool {
        match self {
            DShape::Mask(mask) => mask.len() == m && mask.iter().all(|r| r.len() == m),
            _ => true,
        }
    }

    pub fn parse(s: &str) -> Result<DShape, PotentialError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagonal" | "diag" => Ok(DShape::Diagonal),
            "positive" | "strictly-positive" | "full" => Ok(DShape::StrictlyPositive),
            other => Err(PotentialError::InvalidSystem(format!("unknown D shape {other:?}"))),
        }
    }
}

/// Square matrix of exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DMatrix {
    entries: Vec<Vec<BigRational>>,
}

impl DMatrix {
    pub fn new(entries: Vec<Vec<BigRational>>) -> Self {
        DMatrix { entries }
    }

    pub fn from_integers(rows: &[&[i64]]) -> Self {
        DMatrix {
            entries: rows
                .iter()
                .map(|r| r.iter().map(|&v| BigRational::from_integer(v.into())).collect())
                .collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<BigRational>] {
        &self.entries
    }

    pub fn determinant(&self) -> BigRational {
        linalg::determinant(&self.entries)
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.m();
        (0..m).all(|i| (0..i).all(|j| self.entries[i][j] == self.entries[j][i]))
    }

    pub fn is_positive(&self) -> bool {
        self.entries.iter().flatten().all(Signed::is_positive)
    }

    pub fn scaled(&self, a: &BigRational) -> DMatrix {
        DMatrix { entries: self.entries.iter().map(|r| r.iter().map(|v| v * a).collect()).collect() }
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.to_f64().iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

impl fmt::Display for DMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, r) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let cells: Vec<String> = r.iter().map(ToString::to_string).collect();
            write!(f, "[{}]", cells.join(", "))?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    F,
    G,
}

/// A monomial that must appear in some derivative but cannot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub side: Side,
    /// Component whose support produced the monomial (0-based).
    pub source: usize,
    /// Coordinate the monomial was integrated along.
    pub shift: usize,
    /// Coordinate it was differentiated along.
    pub derivative: usize,
    pub monomial: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NecessaryCheck {
    pub holds: bool,
    pub witness: Option<Violation>,
}

fn supports(v: &[MultiPoly]) -> Vec<SupportSet> {
    let m = v.len();
    v.iter().map(|p| SupportSet::new(m, p.support().iter().cloned())).collect()
}

fn side_condition(side: Side, sets: &[SupportSet], shape: &DShape) -> Option<Violation> {
    let m = sets.len();
    for j in 0..m {
        let target = (0..m)
            .filter(|&i| shape.allows(i, j))
            .fold(SupportSet::new(m, []), |acc, i| acc.union(&sets[i]));
        for i in 0..m {
            for s in 0..m {
                if !shape.allows(i, s) {
                    continue;
                }
                let needed = sets[i].shift(s).unshift(j);
                if let Some(bad) = needed.difference(&target).iter().next() {
                    return Some(Violation {
                        side,
                        source: i,
                        shift: s,
                        derivative: j,
                        monomial: bad.exponents(m),
                    });
                }
            }
        }
    }
    None
}

/// Support inclusions required for `F' = f D`, `G' = g D` with the given
/// pattern: every monomial of `(S_i + e_s) - e_j` with `d_is ≠ 0` must lie in
/// the union of the `S_i'` with `d_i'j ≠ 0`.
pub fn check_necessary_condition(f: &[MultiPoly], g: &[MultiPoly], shape: &DShape) -> NecessaryCheck {
    let witness = side_condition(Side::F, &supports(f), shape).or_else(|| side_condition(Side::G, &supports(g), shape));
    NecessaryCheck { holds: witness.is_none(), witness }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Unknown {
    D(usize, usize),
    Phi(Vec<u32>),
    Mu(Vec<u32>),
}

/// `Σ coeff · unknown = 0`, identically in `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub terms: Vec<(usize, EpsPoly)>,
}

/// Homogeneous system in `(d_ij, φ_a, μ_a)` with its counting metadata.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    m: usize,
    shape: DShape,
    f: Vec<MultiPoly>,
    g: Vec<MultiPoly>,
    unknowns: Vec<Unknown>,
    equations: Vec<Equation>,
    set_f: SupportSet,
    set_g: SupportSet,
    n_phi: usize,
    n_mu: usize,
}

impl LinearSystem {
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn shape(&self) -> &DShape {
        &self.shape
    }
    pub fn unknowns(&self) -> &[Unknown] {
        &self.unknowns
    }
    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }
    pub fn set_f(&self) -> &SupportSet {
        &self.set_f
    }
    pub fn set_g(&self) -> &SupportSet {
        &self.set_g
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn n_mu(&self) -> usize {
        self.n_mu
    }
    pub fn f(&self) -> &[MultiPoly] {
        &self.f
    }
    pub fn g(&self) -> &[MultiPoly] {
        &self.g
    }
    pub fn counts(&self) -> SystemCounts {
        SystemCounts {
            size_f: self.set_f.len() as u64,
            size_g: self.set_g.len() as u64,
            n_phi: self.n_phi as u64,
            n_mu: self.n_mu as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemCounts {
    #[serde(rename = "sizeF")]
    pub size_f: u64,
    #[serde(rename = "sizeG")]
    pub size_g: u64,
    #[serde(rename = "nPhi")]
    pub n_phi: u64,
    #[serde(rename = "nMu")]
    pub n_mu: u64,
}

/// Closed-form set sizes and equation counts for nonbinary ensembles, with
/// monomial degrees `3..=dv` on the `F` side and `2..=dc` on the `G` side.
pub fn counting_formulas(dv: usize, dc: usize, m: usize) -> SystemCounts {
    let b = |n: usize, k: usize| -> u64 { if k > n { 0 } else { num_integer::binomial(n as u64, k as u64) } };
    let sum = |lo: usize, hi: usize, weighted: bool| -> u64 {
        (lo..=hi)
            .flat_map(|n| (1..=n).map(move |t| (n, t)))
            .map(|(n, t)| (if weighted { t as u64 } else { 1 }) * b(n - 1, t - 1) * b(m, t))
            .sum()
    };
    SystemCounts { size_f: sum(3, dv, false), size_g: sum(2, dc, false), n_phi: sum(3, dv, true), n_mu: sum(2, dc, true) }
}

fn side_set(v: &[MultiPoly], shape: &DShape) -> SupportSet {
    let m = v.len();
    let sets = supports(v);
    let mut out = SupportSet::new(m, []);
    for s in 0..m {
        for (j, set) in sets.iter().enumerate() {
            if shape.allows(j, s) {
                out = out.union(&set.shift(s));
            }
        }
    }
    out
}

/// One equation per `(a, s)` with `a ∈ S` and `a_s ≥ 1`:
/// `a_s c_a - Σ_j d_js [v_j]_{a - e_s} = 0`.
fn side_equations(
    v: &[MultiPoly],
    set: &SupportSet,
    shape: &DShape,
    d_index: &BTreeMap<(usize, usize), usize>,
    unknown: impl Fn(usize) -> usize,
) -> Vec<Equation> {
    let m = v.len();
    let mut out = Vec::new();
    for (n, a) in set.iter().enumerate() {
        for s in 0..m {
            let e = a.exp(s);
            if e == 0 {
                continue;
            }
            let below = a.shifted(s, -1).unwrap();
            let mut terms = vec![(unknown(n), EpsPoly::constant(BigRational::from_integer(e.into())))];
            for (j, vj) in v.iter().enumerate() {
                if !shape.allows(j, s) {
                    continue;
                }
                let c = vj.coeff(&below);
                if !c.is_zero() {
                    terms.push((d_index[&(j, s)], -c));
                }
            }
            out.push(Equation { terms });
        }
    }
    out
}

pub fn build_linear_system(f: &[MultiPoly], g: &[MultiPoly], shape: &DShape) -> Result<LinearSystem, PotentialError> {
    let m = f.len();
    if g.len() != m || m == 0 || !shape.check_dim(m) {
        let shape_m = match shape {
            DShape::Mask(mask) => mask.len(),
            _ => m,
        };
        return Err(PotentialError::DimensionMismatch { f: f.len(), g: g.len(), shape: shape_m });
    }
    let f: Vec<MultiPoly> = f.iter().map(|p| p.clone().with_dim(m)).collect();
    let g: Vec<MultiPoly> = g.iter().map(|p| p.clone().with_dim(m)).collect();
    let mut unknowns = Vec::new();
    let mut d_index = BTreeMap::new();
    for i in 0..m {
        for j in 0..m {
            if shape.allows(i, j) {
                d_index.insert((i, j), unknowns.len());
                unknowns.push(Unknown::D(i, j));
            }
        }
    }
    let set_f = side_set(&f, shape);
    let set_g = side_set(&g, shape);
    let phi0 = unknowns.len();
    unknowns.extend(set_f.iter().map(|a| Unknown::Phi(a.exponents(m))));
    let mu0 = unknowns.len();
    unknowns.extend(set_g.iter().map(|a| Unknown::Mu(a.exponents(m))));
    let eq_f = side_equations(&f, &set_f, shape, &d_index, |n| phi0 + n);
    let eq_g = side_equations(&g, &set_g, shape, &d_index, |n| mu0 + n);
    let (n_phi, n_mu) = (eq_f.len(), eq_g.len());
    let mut equations = eq_f;
    equations.extend(eq_g);
    Ok(LinearSystem { m, shape: shape.clone(), f, g, unknowns, equations, set_f, set_g, n_phi, n_mu })
}

/// Exact solution `(D, F, G)` with `d11 = 1` (or the first free entry of `D`).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSolution {
    pub m: usize,
    pub d: DMatrix,
    /// `F(y; ε) = Σ φ_a y^a`.
    pub big_f: MultiPoly,
    /// `G(x) = Σ μ_a x^a`.
    pub big_g: MultiPoly,
    /// Rank of the constraints left on the entries of `D` after eliminating
    /// `φ` and `μ`.
    pub d_rank: usize,
    /// Number of `D` entries that were unknowns.
    pub d_unknowns: usize,
    pub free_param: String,
}

impl PotentialSolution {
    /// Member `a · (D, F, G)` of the one-parameter solution family.
    pub fn scaled(&self, a: &BigRational) -> PotentialSolution {
        PotentialSolution {
            d: self.d.scaled(a),
            big_f: self.big_f.scale(a),
            big_g: self.big_g.scale(a),
            free_param: format!("d11 = {}", self.d.get(0, 0) * a),
            ..self.clone()
        }
    }

    pub fn phi(&self) -> impl Iterator<Item = (&Monomial, &EpsPoly)> {
        self.big_f.terms()
    }

    pub fn mu(&self) -> impl Iterator<Item = (&Monomial, &EpsPoly)> {
        self.big_g.terms()
    }

    /// `F' = f D` and `G' = g D` as exact polynomial identities.
    pub fn verify(&self, f: &[MultiPoly], g: &[MultiPoly]) -> Result<(), PotentialError> {
        for (side, big, v) in [("F", &self.big_f, f), ("G", &self.big_g, g)] {
            for s in 0..self.m {
                let lhs = big.differentiate(s)?;
                let rhs = v
                    .iter()
                    .enumerate()
                    .fold(MultiPoly::zero_in(self.m), |acc, (j, vj)| acc + vj.scale(self.d.get(j, s)));
                if lhs.with_dim(self.m) != rhs.with_dim(self.m) {
                    return Err(PotentialError::Verification(format!(
                        "d{side}/dx{} differs from the column {} combination",
                        s + 1,
                        s + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> SolutionDocument {
        let m = self.m;
        SolutionDocument {
            m,
            d: self.d.rows().iter().map(|r| r.iter().map(ToString::to_string).collect()).collect(),
            free_param: self.free_param.clone(),
            big_f: self.big_f.to_string(),
            big_g: self.big_g.to_string(),
            phi: self
                .phi()
                .map(|(a, c)| PhiEntry { monomial: a.exponents(m), coeffs: c.coeffs().iter().map(ToString::to_string).collect() })
                .collect(),
            mu: self
                .mu()
                .map(|(a, c)| MuEntry { monomial: a.exponents(m), value: c.to_string() })
                .collect(),
            d_rank: self.d_rank,
            d_unknowns: self.d_unknowns,
            determinant: self.d.determinant().to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("solution document serialises")
    }

    pub fn from_json(s: &str) -> Result<PotentialSolution, PotentialError> {
        let doc: SolutionDocument =
            serde_json::from_str(s).map_err(|e| PotentialError::InvalidSystem(e.to_string()))?;
        doc.into_solution()
    }
}

/// Canonical JSON form of a [`PotentialSolution`]; rationals are `"num/den"`
/// strings, `φ` coefficients are listed lowest ε-power first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub m: usize,
    #[serde(rename = "D")]
    pub d: Vec<Vec<String>>,
    #[serde(rename = "freeParam")]
    pub free_param: String,
    #[serde(rename = "F")]
    pub big_f: String,
    #[serde(rename = "G")]
    pub big_g: String,
    pub phi: Vec<PhiEntry>,
    pub mu: Vec<MuEntry>,
    #[serde(rename = "dRank")]
    pub d_rank: usize,
    #[serde(rename = "dUnknowns")]
    pub d_unknowns: usize,
    pub determinant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    pub monomial: Vec<u32>,
    pub coeffs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuEntry {
    pub monomial: Vec<u32>,
    pub value: String,
}

fn parse_rational(s: &str) -> Result<BigRational, PotentialError> {
    let bad = || PotentialError::InvalidSystem(format!("bad rational {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (BigInt, BigInt) = (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
            if d.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(n, d))
        }
        None => Ok(BigRational::from_integer(s.trim().parse().map_err(|_| bad())?)),
    }
}

impl SolutionDocument {
    pub fn into_solution(self) -> Result<PotentialSolution, PotentialError> {
        let d = self
            .d
            .iter()
            .map(|r| r.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PotentialSolution {
            m: self.m,
            d: DMatrix::new(d),
            big_f: MultiPoly::parse(&self.big_f, self.m)?,
            big_g: MultiPoly::parse(&self.big_g, self.m)?,
            d_rank: self.d_rank,
            d_unknowns: self.d_unknowns,
            free_param: self.free_param,
        })
    }
}

/// Eliminates `φ`, `μ` through one pivot equation each, reduces the rest to
/// constraints on `D` (matching every power of `ε`), and takes the
/// one-dimensional null space normalised at `d11 = 1`.
pub fn solve_system(sys: &LinearSystem) -> Result<PotentialSolution, PotentialError> {
    let m = sys.m;
    let d_cols: Vec<usize> = sys
        .unknowns
        .iter()
        .enumerate()
        .filter(|(_, u)| matches!(u, Unknown::D(..)))
        .map(|(k, _)| k)
        .collect();
    let nd = d_cols.len();
    // group equations by their single φ/μ unknown
    let mut groups: BTreeMap<usize, Vec<Vec<EpsPoly>>> = BTreeMap::new();
    for eq in &sys.equations {
        let (own, scale) = eq
            .terms
            .iter()
            .find(|(k, _)| *k >= nd)
            .map(|(k, c)| (*k, c.coeff(0)))
            .ok_or_else(|| PotentialError::Verification("equation without a φ/μ unknown".into()))?;
        // own = -(1/scale) Σ c_k d_k
        let inv = -scale.recip();
        let mut expr = vec![EpsPoly::zero(); nd];
        for (k, c) in &eq.terms {
            if *k < nd {
                expr[*k] = expr[*k].clone() + c.scale(&inv);
            }
        }
        groups.entry(own).or_default().push(expr);
    }
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    for exprs in groups.values() {
        let pivot = &exprs[0];
        for other in &exprs[1..] {
            let diff: Vec<EpsPoly> = other.iter().zip(pivot).map(|(a, b)| a.clone() - b.clone()).collect();
            let deg = diff.iter().filter_map(EpsPoly::degree).max();
            if let Some(deg) = deg {
                for p in 0..=deg {
                    let row: Vec<BigRational> = diff.iter().map(|c| c.coeff(p)).collect();
                    if row.iter().any(|v| !v.is_zero()) {
                        rows.push(row);
                    }
                }
            }
        }
    }
    let (rank, basis) = linalg::nullspace(rows, nd);
    match basis.len() {
        0 => return Err(PotentialError::Infeasible),
        1 => {}
        n => return Err(PotentialError::Underdetermined { nullity: n }),
    }
    let mut v = basis.into_iter().next().unwrap();
    let anchor = v.iter().find(|x| !x.is_zero()).cloned().ok_or(PotentialError::Infeasible)?;
    let free_param = match &sys.unknowns[d_cols[v.iter().position(|x| !x.is_zero()).unwrap()]] {
        Unknown::D(i, j) => format!("d{}{} = 1", i + 1, j + 1),
        _ => unreachable!(),
    };
    for x in v.iter_mut() {
        *x /= &anchor;
    }
    let mut d = vec![vec![BigRational::zero(); m]; m];
    for (col, value) in d_cols.iter().zip(&v) {
        if let Unknown::D(i, j) = sys.unknowns[*col] {
            d[i][j] = value.clone();
        }
    }
    let mut big_f = MultiPoly::zero_in(m);
    let mut big_g = MultiPoly::zero_in(m);
    for (own, exprs) in &groups {
        let value = exprs[0].iter().zip(&v).fold(EpsPoly::zero(), |acc, (c, dv)| acc + c.scale(dv));
        match &sys.unknowns[*own] {
            Unknown::Phi(a) => big_f.add_term(Monomial::new(a.clone()), value),
            Unknown::Mu(a) => big_g.add_term(Monomial::new(a.clone()), value),
            Unknown::D(..) => unreachable!(),
        }
    }
    let sol = PotentialSolution {
        m,
        d: DMatrix::new(d),
        big_f: big_f.with_dim(m),
        big_g: big_g.with_dim(m),
        d_rank: rank,
        d_unknowns: nd,
        free_param,
    };
    sol.verify(&sys.f, &sys.g)?;
    check_admissible(&sol.d, &sys.shape)?;
    Ok(sol)
}

fn check_admissible(d: &DMatrix, shape: &DShape) -> Result<(), PotentialError> {
    let m = d.m();
    if !d.is_symmetric() {
        return Err(PotentialError::NotAdmissible(format!("D = {d} is not symmetric")));
    }
    for i in 0..m {
        for j in 0..m {
            if shape.allows(i, j) && !d.get(i, j).is_positive() {
                return Err(PotentialError::NotAdmissible(format!("D = {d} has a non-positive entry at ({}, {})", i + 1, j + 1)));
            }
        }
    }
    if d.determinant().is_zero() {
        return Err(PotentialError::NotAdmissible(format!("D = {d} is singular")));
    }
    Ok(())
}

/// DE maps of a regular bilayer erasure code with degrees `(l1, l2, r1, r2)`.
pub fn bilayer_functions(l1: u32, l2: u32, r1: u32, r2: u32) -> Result<(Vec<MultiPoly>, Vec<MultiPoly>), PotentialError> {
    if l1 < 1 || l2 < 1 || r1 < 2 || r2 < 2 {
        return Err(PotentialError::InvalidSystem(format!(
            "bilayer degrees need l1, l2 >= 1 and r1, r2 >= 2 (got {l1}, {l2}, {r1}, {r2})"
        )));
    }
    let eps = EpsPoly::eps();
    let f1 = MultiPoly::from_terms(2, [(Monomial::new(vec![l1 - 1, l2]), eps.clone())]);
    let f2 = MultiPoly::from_terms(2, [(Monomial::new(vec![l1, l2 - 1]), eps)]);
    let check = |k: usize, r: u32| {
        let comp = MultiPoly::one() - MultiPoly::var(2, k);
        let pow = (0..r - 1).fold(MultiPoly::one(), |acc, _| acc * comp.clone());
        (MultiPoly::one() - pow).with_dim(2)
    };
    Ok((vec![f1, f2], vec![check(0, r1), check(1, r2)]))
}

/// A DE system description, as accepted by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    Nonbinary {
        dv: usize,
        dc: usize,
        m: usize,
    },
    Bilayer {
        l1: u32,
        l2: u32,
        r1: u32,
        r2: u32,
    },
    /// Arbitrary polynomial maps in canonical text form.
    Generic {
        m: usize,
        f: Vec<String>,
        g: Vec<String>,
        #[serde(default, rename = "epsDegree")]
        eps_degree: Option<usize>,
        #[serde(default)]
        monotone: bool,
    },
}

/// Polynomial DE maps ready for the potential construction.
#[derive(Debug, Clone)]
pub struct DeSystem {
    pub f: Vec<MultiPoly>,
    pub g: Vec<MultiPoly>,
    /// Whether the state space is the set of CCDF vectors rather than the cube.
    pub monotone: bool,
    pub default_shape: DShape,
}

impl SystemSpec {
    pub fn build(&self) -> Result<DeSystem, PotentialError> {
        match self {
            SystemSpec::Nonbinary { dv, dc, m } => {
                let (f, g) = extract_de_polynomials(EnsembleParams::new(*dv, *dc, *m)?)?;
                Ok(DeSystem { f, g, monotone: true, default_shape: DShape::StrictlyPositive })
            }
            SystemSpec::Bilayer { l1, l2, r1, r2 } => {
                let (f, g) = bilayer_functions(*l1, *l2, *r1, *r2)?;
                Ok(DeSystem { f, g, monotone: false, default_shape: DShape::Diagonal })
            }
            SystemSpec::Generic { m, f, g, eps_degree, monotone } => {
                let f = f.iter().map(|s| MultiPoly::parse(s, *m)).collect::<Result<Vec<_>, _>>()?;
                let g = g.iter().map(|s| MultiPoly::parse(s, *m)).collect::<Result<Vec<_>, _>>()?;
                if f.iter().chain(&g).any(|p| p.m() > *m) {
                    return Err(PotentialError::InvalidSystem(format!("a polynomial uses a variable beyond x{m}")));
                }
                if let Some(bound) = eps_degree {
                    let found = f.iter().map(MultiPoly::eps_degree).max().unwrap_or(0);
                    if found > *bound {
                        return Err(PotentialError::EpsDegree { found, bound: *bound });
                    }
                }
                if g.iter().any(|p| p.eps_degree() > 0) {
                    return Err(PotentialError::InvalidSystem("g must not depend on eps".into()));
                }
                Ok(DeSystem { f, g, monotone: *monotone, default_shape: DShape::StrictlyPositive })
            }
        }
    }
}

/// f64 evaluator for `U`, its gradient, and DE on a solved system.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    m: usize,
    d: Vec<Vec<f64>>,
    d_norm: f64,
    f: Vec<CompiledPoly>,
    g: Vec<CompiledPoly>,
    f_jac: Vec<Vec<CompiledPoly>>,
    g_jac: Vec<Vec<CompiledPoly>>,
    g_hess: Vec<Vec<Vec<CompiledPoly>>>,
    big_f: CompiledPoly,
    big_g: CompiledPoly,
    monotone: bool,
}

fn jacobian(v: &[MultiPoly], m: usize) -> Result<Vec<Vec<MultiPoly>>, PolyError> {
    v.iter().map(|p| (0..m).map(|l| p.clone().with_dim(m).differentiate(l)).collect()).collect()
}

impl PotentialModel {
    pub fn new(sol: &PotentialSolution, f: &[MultiPoly], g: &[MultiPoly], monotone: bool) -> Result<Self, PotentialError> {
        let m = sol.m;
        if f.len() != m || g.len() != m {
            return Err(PotentialError::DimensionMismatch { f: f.len(), g: g.len(), shape: m });
        }
        let g_jac = jacobian(g, m)?;
        let g_hess = g_jac.iter().map(|row| jacobian(row, m)).collect::<Result<Vec<_>, _>>()?;
        let compile2 = |v: &Vec<Vec<MultiPoly>>| v.iter().map(|r| r.iter().map(MultiPoly::compile).collect()).collect();
        Ok(PotentialModel {
            m,
            d: sol.d.to_f64(),
            d_norm: sol.d.inf_norm(),
            f: f.iter().map(MultiPoly::compile).collect(),
            g: g.iter().map(MultiPoly::compile).collect(),
            f_jac: compile2(&jacobian(f, m)?),
            g_hess: g_hess.iter().map(compile2).collect(),
            g_jac: compile2(&g_jac),
            big_f: sol.big_f.compile(),
            big_g: sol.big_g.compile(),
            monotone,
        })
    }

    pub fn from_system(sys: &DeSystem, shape: &DShape) -> Result<(PotentialSolution, Self), PotentialError> {
        let sol = solve_system(&build_linear_system(&sys.f, &sys.g, shape)?)?;
        let model = PotentialModel::new(&sol, &sys.f, &sys.g, sys.monotone)?;
        Ok((sol, model))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn f_vec(&self, y: &[f64], eps: f64) -> Vec<f64> {
        self.f.iter().map(|p| p.eval(y, eps)).collect()
    }

    pub fn g_vec(&self, x: &[f64]) -> Vec<f64> {
        self.g.iter().map(|p| p.eval(x, 0.0)).collect()
    }

    pub fn step(&self, x: &[f64], eps: f64) -> Vec<f64> {
        self.f_vec(&self.g_vec(x), eps).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    fn row_times_d(&self, v: &[f64]) -> Vec<f64> {
        (0..self.m).map(|k| (0..self.m).map(|i| v[i] * self.d[i][k]).sum()).collect()
    }

    /// `U(x; ε) = g(x) D xᵀ - G(x) - F(g(x); ε)`.
    pub fn u(&self, x: &[f64], eps: f64) -> f64 {
        let gx = self.g_vec(x);
        let gd = self.row_times_d(&gx);
        let quad: f64 = gd.iter().zip(x).map(|(a, b)| a * b).sum();
        quad - self.big_g.eval(x, 0.0) - self.big_f.eval(&gx, eps)
    }

    /// `(x - f(g(x); ε)) D G_d(x)` with `[G_d]_{kl} = ∂g_k/∂x_l`.
    pub fn grad(&self, x: &[f64], eps: f64) -> Vec<f64> {
        let fx = self.f_vec(&self.g_vec(x), eps);
        let diff: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a - b).collect();
        self.grad_from(&diff, x)
    }

    fn grad_from(&self, diff: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.row_times_d(diff);
        (0..self.m).map(|l| (0..self.m).map(|k| v[k] * self.g_jac[k][l].eval(x, 0.0)).sum()).collect()
    }

    fn coupled_y(&self, cp: &CoupledParams, gx: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (l, w) = (cp.l, cp.w);
        (0..l)
            .map(|j| {
                let mut y = vec![0.0; self.m];
                for row in &gx[j..j + w] {
                    for (a, b) in y.iter_mut().zip(row) {
                        *a += b / w as f64;
                    }
                }
                y
            })
            .collect()
    }

    fn check_rows(&self, cp: &CoupledParams, x: &[Vec<f64>]) -> Result<(), PotentialError> {
        if x.len() != cp.positions() || x.iter().any(|r| r.len() != self.m) {
            return Err(PotentialError::InvalidSystem(format!(
                "coupled state must have {} rows of length {}",
                cp.positions(),
                self.m
            )));
        }
        Ok(())
    }

    /// `Σ_i [g(x_i) D x_iᵀ - G(x_i)] - Σ_j F(y_j; ε)` with `Y = A G(X)`.
    pub fn coupled_u(&self, cp: &CoupledParams, x: &[Vec<f64>], eps: f64) -> Result<f64, PotentialError> {
        self.check_rows(cp, x)?;
        let gx: Vec<Vec<f64>> = x.iter().map(|r| self.g_vec(r)).collect();
        let mut total = 0.0;
        for (xi, gi) in x.iter().zip(&gx) {
            let gd = self.row_times_d(gi);
            total += gd.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() - self.big_g.eval(xi, 0.0);
        }
        for y in self.coupled_y(cp, &gx) {
            total -= self.big_f.eval(&y, eps);
        }
        Ok(total)
    }

    /// Row `i`: `(x_i - Σ_j A_ji f(y_j; ε)) D G_d(x_i)`.
    pub fn coupled_grad(&self, cp: &CoupledParams, x: &[Vec<f64>], eps: f64) -> Result<Vec<Vec<f64>>, PotentialError> {
        self.check_rows(cp, x)?;
        let gx: Vec<Vec<f64>> = x.iter().map(|r| self.g_vec(r)).collect();
        let fy: Vec<Vec<f64>> = self.coupled_y(cp, &gx).iter().map(|y| self.f_vec(y, eps)).collect();
        Ok((0..cp.positions())
            .map(|i| {
                let mut back = vec![0.0; self.m];
                for fj in &fy[i.saturating_sub(cp.w - 1)..=i.min(cp.l - 1)] {
                    for (a, b) in back.iter_mut().zip(fj) {
                        *a += b / cp.w as f64;
                    }
                }
                let diff: Vec<f64> = x[i].iter().zip(&back).map(|(a, b)| a - b).collect();
                self.grad_from(&diff, &x[i])
            })
            .collect())
    }

    pub fn iterate_from(&self, x0: Vec<f64>, eps: f64, cfg: &DeConfig) -> Iteration {
        let mut x = x0;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            let next = self.step(&x, eps);
            residual = next.iter().zip(&x).fold(0.0, |a, (p, q)| a.max((p - q).abs()));
            x = next;
            iterations += 1;
            if residual < cfg.tol {
                break;
            }
        }
        Iteration { converged: residual < cfg.tol, x, iterations, residual }
    }

    /// Whether DE started at `x0` reaches the decoded state.
    pub fn in_basin(&self, x0: &[f64], eps: f64, cfg: &DeConfig) -> bool {
        sup_norm(&self.iterate_from(x0.to_vec(), eps, cfg).x) < cfg.success_tol
    }

    pub fn decodes(&self, eps: f64, cfg: &DeConfig) -> bool {
        self.in_basin(&vec![1.0; self.m], eps, cfg)
    }

    pub fn bp_threshold(&self, tol: f64, cfg: &DeConfig) -> f64 {
        bisect(0.0, 1.0, tol, |e| self.decodes(e, cfg))
    }

    fn project(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        if self.monotone {
            for i in 1..x.len() {
                x[i] = x[i].min(x[i - 1]);
            }
        }
    }

    /// Start points: a uniform grid over the state space (CCDF vectors or the
    /// cube), without the origin, plus the all-ones vector.
    pub fn seeds(&self, levels: usize) -> Vec<Vec<f64>> {
        let levels = levels.max(2);
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.m];
        loop {
            let ok = !self.monotone || idx.windows(2).all(|w| w[0] >= w[1]);
            if ok && idx.iter().any(|&k| k > 0) {
                out.push(idx.iter().map(|&k| k as f64 / (levels - 1) as f64).collect());
            }
            let mut c = 0;
            loop {
                if c == self.m {
                    let ones = vec![1.0; self.m];
                    if !out.contains(&ones) {
                        out.push(ones);
                    }
                    return out;
                }
                idx[c] += 1;
                if idx[c] < levels {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
        }
    }

    /// Estimate of `ΔE(ε)`: the smallest `U` over nonzero DE fixed points
    /// reached from the seed grid, refined by descent restricted to points
    /// outside the basin of the decoded state. `+∞` when every seed decodes.
    pub fn energy_gap(&self, eps: f64, cfg: &GapConfig) -> EnergyGap {
        let seeds = self.seeds(cfg.levels_for(self.m));
        let found: Vec<Option<(f64, Vec<f64>)>> = seeds
            .par_iter()
            .map(|s| {
                let it = self.iterate_from(s.clone(), eps, &cfg.de);
                (sup_norm(&it.x) >= cfg.de.success_tol).then(|| (self.u(&it.x, eps), it.x))
            })
            .collect();
        let nontrivial = found.iter().flatten().count();
        let best = found.into_iter().flatten().fold(None::<(f64, Vec<f64>)>, |acc, c| match acc {
            Some(a) if a.0 <= c.0 => Some(a),
            _ => Some(c),
        });
        let Some((mut value, mut arg)) = best else {
            return EnergyGap { eps, value: f64::INFINITY, argmin: None, seeds: seeds.len(), nontrivial: 0 };
        };
        let mut h = 0.1;
        for _ in 0..cfg.refine_steps {
            let g = self.grad(&arg, eps);
            if sup_norm(&g) < 1e-12 {
                break;
            }
            let mut cand: Vec<f64> = arg.iter().zip(&g).map(|(a, b)| a - h * b).collect();
            self.project(&mut cand);
            let uc = self.u(&cand, eps);
            if uc < value && !self.in_basin(&cand, eps, &cfg.de) {
                value = uc;
                arg = cand;
            } else {
                h *= 0.5;
                if h < 1e-12 {
                    break;
                }
            }
        }
        EnergyGap { eps, value, argmin: Some(arg), seeds: seeds.len(), nontrivial }
    }

    /// Bisection on the sign of `ΔE` over `(eps_bp, 1]`.
    pub fn potential_threshold(&self, eps_bp: f64, tol: f64, cfg: &GapConfig) -> f64 {
        bisect(eps_bp, 1.0, tol, |e| self.energy_gap(e, cfg).value > 0.0)
    }

    /// Grid suprema `α = ‖G_d‖∞`, `β = ‖G_dd‖∞`, `γ = ‖F_d‖∞` over `[0,1]^m`,
    /// `K = ‖D‖∞(α + β + α²γ)` and `w_min = m K / (2 ΔE)`.
    pub fn w_bound(&self, eps: f64, gap: f64, points_per_dim: usize) -> WBound {
        let n = points_per_dim.max(2);
        let total = n.pow(self.m as u32);
        let point = |mut k: usize| -> Vec<f64> {
            (0..self.m)
                .map(|_| {
                    let v = (k % n) as f64 / (n - 1) as f64;
                    k /= n;
                    v
                })
                .collect()
        };
        let sups = (0..total)
            .into_par_iter()
            .map(|k| {
                let x = point(k);
                let row_sum = |rows: &Vec<Vec<CompiledPoly>>, e: f64| {
                    rows.iter().map(|r| r.iter().map(|p| p.eval(&x, e).abs()).sum::<f64>()).fold(0.0, f64::max)
                };
                let alpha = row_sum(&self.g_jac, 0.0);
                let gamma = row_sum(&self.f_jac, eps);
                let beta = self
                    .g_hess
                    .iter()
                    .map(|h| h.iter().flatten().map(|p| p.eval(&x, 0.0).abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                (alpha, beta, gamma)
            })
            .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
        let (alpha, beta, gamma) = sups;
        let k = self.d_norm * (alpha + beta + alpha * alpha * gamma);
        let w_min = if gap.is_infinite() && gap > 0.0 {
            0.0
        } else if gap > 0.0 {
            self.m as f64 * k / (2.0 * gap)
        } else {
            f64::INFINITY
        };
        WBound { eps, k, alpha, beta, gamma, delta_e: gap, w_min }
    }
}

/// Search controls for [`PotentialModel::energy_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    /// Grid levels per coordinate; `None` picks 9 for `m <= 3` and shrinks
    /// the grid for larger `m`.
    pub levels: Option<usize>,
    pub refine_steps: usize,
    pub de: DeConfig,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig { levels: None, refine_steps: 25, de: DeConfig::default() }
    }
}

impl GapConfig {
    pub fn levels_for(&self, m: usize) -> usize {
        self.levels.unwrap_or_else(|| if m <= 3 { 9 } else { (6561f64.powf(1.0 / m as f64).floor() as usize).max(3) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGap {
    pub eps: f64,
    pub value: f64,
    pub argmin: Option<Vec<f64>>,
    pub seeds: usize,
    pub nontrivial: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WBound {
    pub eps: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "deltaE")]
    pub delta_e: f64,
    #[serde(rename = "wMin")]
    pub w_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    #[serde(rename = "epsBP")]
    pub eps_bp: f64,
    #[serde(rename = "epsStar")]
    pub eps_star: f64,
    #[serde(rename = "energyGapCurve")]
    pub energy_gap_curve: Vec<(f64, f64)>,
    #[serde(rename = "wBound")]
    pub w_bound: WBound,
}

/// `ε^BP`, `ε*`, a `ΔE` curve on `points` values of `ε` from just above
/// `ε^BP` to 1, and the w-bound at the midpoint between `ε^BP` and `ε*`.
/// `ΔE` is evaluated at the upper end of the final `ε^BP` bracket, where DE
/// no longer decodes and the gap is finite.
pub fn threshold_report(model: &PotentialModel, tol: f64, cfg: &GapConfig, points: usize, grid: usize) -> ThresholdReport {
    let eps_bp = model.bp_threshold(tol, &cfg.de);
    let upper = (eps_bp + tol / 2.0).min(1.0);
    let eps_star = model.potential_threshold(upper, tol, cfg);
    let points = points.max(2);
    let curve = (0..points)
        .map(|k| upper + (1.0 - upper) * k as f64 / (points - 1) as f64)
        .map(|e| (e, model.energy_gap(e, cfg).value))
        .collect();
    let mid = 0.5 * (eps_bp + eps_star);
    let gap = model.energy_gap(mid, cfg).value;
    ThresholdReport { eps_bp, eps_star, energy_gap_curve: curve, w_bound: model.w_bound(mid, gap, grid) }
}

/// `U(x; ε)` straight from the exact polynomials.
pub fn potential_u(sol: &PotentialSolution, g: &[MultiPoly], x: &[f64], eps: f64) -> f64 {
    let m = sol.m;
    let d = sol.d.to_f64();
    let gx: Vec<f64> = g.iter().map(|p| p.eval_f64(x, eps)).collect();
    let quad: f64 = (0..m).map(|i| (0..m).map(|k| gx[i] * d[i][k] * x[k]).sum::<f64>()).sum();
    quad - sol.big_g.eval_f64(x, eps) - sol.big_f.eval_f64(&gx, eps)
}

/// Gradient of [`potential_u`] straight from the exact polynomials.
pub fn potential_grad(sol: &PotentialSolution, f: &[MultiPoly], g: &[MultiPoly], x: &[f64], eps: f64) -> Result<Vec<f64>, PotentialError> {
    let m = sol.m;
    let d = sol.d.to_f64();
    let gx: Vec<f64> = g.iter().map(|p| p.eval_f64(x, eps)).collect();
    let fx: Vec<f64> = f.iter().map(|p| p.eval_f64(&gx, eps)).collect();
    let v: Vec<f64> = (0..m).map(|k| (0..m).map(|i| (x[i] - fx[i]) * d[i][k]).sum()).collect();
    let jac = jacobian(g, m)?;
    Ok((0..m).map(|l| (0..m).map(|k| v[k] * jac[k][l].eval_f64(x, eps)).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn nonbinary(dv: usize, dc: usize, m: usize) -> DeSystem {
        SystemSpec::Nonbinary { dv, dc, m }.build().unwrap()
    }

    #[test]
    fn shape_parsing() {
        assert_eq!(DShape::parse("diagonal").unwrap(), DShape::Diagonal);
        assert_eq!(DShape::parse("positive").unwrap(), DShape::StrictlyPositive);
        assert!(DShape::parse("banded").is_err());
        assert!(DShape::Mask(vec![vec![true, false], vec![false, true]]).allows(1, 1));
    }

    #[test]
    fn small_example_solution() {
        let sys = nonbinary(2, 3, 2);
        let ls = build_linear_system(&sys.f, &sys.g, &DShape::StrictlyPositive).unwrap();
        assert_eq!(ls.set_f().len(), 3);
        let sol = solve_system(&ls).unwrap();
        assert_eq!(sol.d, DMatrix::from_integers(&[&[1, 2], &[2, 1]]));
        let phi = |a: &[u32]| sol.big_f.coeff(&Monomial::new(a.to_vec()));
        assert_eq!(phi(&[2, 0]), EpsPoly::new(vec![rat(0, 1), rat(1, 3), rat(1, 6)]));
        assert_eq!(phi(&[1, 1]), EpsPoly::new(vec![rat(0, 1), rat(4, 3), rat(2, 3)]));
        assert_eq!(phi(&[0, 2]), EpsPoly::new(vec![rat(0, 1), rat(4, 3), rat(-5, 6)]));
        let mu = |a: &[u32]| sol.big_g.coeff(&Monomial::new(a.to_vec()));
        assert_eq!(mu(&[2, 0]), EpsPoly::constant(rat(1, 1)));
        assert_eq!(mu(&[3, 0]), EpsPoly::constant(rat(1, 9)));
        assert_eq!(mu(&[1, 1]), EpsPoly::constant(rat(4, 1)));
        assert_eq!(mu(&[1, 2]), EpsPoly::constant(rat(-2, 3)));
        assert_eq!(mu(&[2, 1]), EpsPoly::constant(rat(-4, 3)));
        assert_eq!(mu(&[0, 2]), EpsPoly::constant(rat(1, 1)));
        assert_eq!(mu(&[0, 3]), EpsPoly::constant(rat(-1, 9)));
        assert_eq!(sol.d_rank, 3);
    }

    #[test]
    fn diagonal_shape_is_rejected_for_nonbinary() {
        let sys = nonbinary(2, 3, 2);
        let check = check_necessary_condition(&sys.f, &sys.g, &DShape::Diagonal);
        assert!(!check.holds);
        assert!(check.witness.is_some());
        let ls = build_linear_system(&sys.f, &sys.g, &DShape::Diagonal).unwrap();
        assert_eq!(solve_system(&ls), Err(PotentialError::Infeasible));
    }

    #[test]
    fn bilayer_solution() {
        let sys = SystemSpec::Bilayer { l1: 3, l2: 3, r1: 6, r2: 6 }.build().unwrap();
        assert!(check_necessary_condition(&sys.f, &sys.g, &DShape::Diagonal).holds);
        let ls = build_linear_system(&sys.f, &sys.g, &DShape::Diagonal).unwrap();
        let sol = solve_system(&ls).unwrap().scaled(&rat(3, 1));
        assert_eq!(sol.d, DMatrix::from_integers(&[&[3, 0], &[0, 3]]));
        assert_eq!(sol.big_f, MultiPoly::parse("eps*x1^3*x2^3", 2).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let sys = nonbinary(3, 4, 2);
        let sol = solve_system(&build_linear_system(&sys.f, &sys.g, &DShape::StrictlyPositive).unwrap()).unwrap();
        let back = PotentialSolution::from_json(&sol.to_json()).unwrap();
        assert_eq!(back, sol);
        back.verify(&sys.f, &sys.g).unwrap();
    }

    #[test]
    fn counting_formula_values() {
        let c = counting_formulas(3, 4, 3);
        assert_eq!((c.size_f, c.size_g, c.n_phi, c.n_mu), (10, 31, 18, 57));
        assert_eq!(counting_formulas(2, 3, 2).size_f, 0);
    }

    #[test]
    fn potential_vanishes_at_origin_and_matches_direct_route() {
        let sys = nonbinary(3, 4, 2);
        let (sol, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
        assert_eq!(model.u(&[0.0, 0.0], 0.6), 0.0);
        assert_eq!(model.grad(&[0.0, 0.0], 0.6), vec![0.0, 0.0]);
        let x = [0.8, 0.3];
        assert!((model.u(&x, 0.6) - potential_u(&sol, &sys.g, &x, 0.6)).abs() < 1e-13);
        let (a, b) = (model.grad(&x, 0.6), potential_grad(&sol, &sys.f, &sys.g, &x, 0.6).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-13));
    }

    #[test]
    fn seed_grid_sizes() {
        let sys = nonbinary(3, 6, 3);
        let (_, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
        // non-increasing triples over 9 levels, origin dropped
        assert_eq!(model.seeds(9).len(), 164);
        let bil = SystemSpec::Bilayer { l1: 2, l2: 3, r1: 4, r2: 5 }.build().unwrap();
        let (_, bm) = PotentialModel::from_system(&bil, &DShape::Diagonal).unwrap();
        assert_eq!(bm.seeds(5).len(), 24);
    }

    #[test]
    fn coupled_potential_reduces_to_single() {
        let sys = nonbinary(3, 6, 2);
        let (_, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
        let cp = CoupledParams::new(EnsembleParams::new(3, 6, 2).unwrap(), 1, 1).unwrap();
        let x = vec![vec![0.7, 0.2]];
        assert!((model.coupled_u(&cp, &x, 0.45).unwrap() - model.u(&x[0], 0.45)).abs() < 1e-15);
        let g = model.coupled_grad(&cp, &x, 0.45).unwrap();
        assert_eq!(g[0], model.grad(&x[0], 0.45));
    }

    #[test]
    fn three_dimensional_system_has_one_dimensional_solution_space() {
        let sys = nonbinary(3, 4, 3);
        let ls = build_linear_system(&sys.f, &sys.g, &DShape::StrictlyPositive).unwrap();
        assert_eq!((ls.equations().len(), ls.n_phi() + ls.n_mu()), (75, 75));
        let sol = solve_system(&ls).unwrap();
        assert_eq!(sol.d_rank, 8);
        assert!(sol.d.is_symmetric() && sol.d.is_positive());
        // the integer matrix with d12 = d21 = 3 admits no F with F' = fD
        let alt = PotentialSolution { d: DMatrix::from_integers(&[&[1, 3, 4], &[3, 3, 2], &[4, 2, 1]]), ..sol.clone() };
        assert!(alt.verify(&sys.f, &sys.g).is_err());
    }

    /// Closed form for the scalar (3,6) ensemble:
    /// `U(x) = x g - ∫_0^x g - ε g³/3` with `g(x) = 1 - (1-x)^5`.
    fn scalar_u(x: f64, eps: f64) -> f64 {
        let g = 1.0 - (1.0 - x).powi(5);
        let big_g = x - (1.0 - (1.0 - x).powi(6)) / 6.0;
        x * g - big_g - eps * g.powi(3) / 3.0
    }

    #[test]
    fn scalar_energy_gap_matches_closed_form() {
        let sys = nonbinary(3, 6, 1);
        let (_, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
        for eps in [0.44, 0.46, 0.48, 0.50] {
            // stable nonzero fixed point by scalar iteration from 1
            let mut x = 1.0f64;
            for _ in 0..200_000 {
                x = eps * (1.0 - (1.0 - x).powi(5)).powi(2);
            }
            let gap = model.energy_gap(eps, &GapConfig::default());
            assert!((gap.value - scalar_u(x, eps)).abs() < 1e-6, "eps {eps}: {} vs {}", gap.value, scalar_u(x, eps));
        }
        assert_eq!(model.energy_gap(0.40, &GapConfig::default()).value, f64::INFINITY);
        let star = model.potential_threshold(model.bp_threshold(1e-7, &DeConfig::default()), 1e-6, &GapConfig::default());
        assert!((star - 0.4881).abs() < 1e-3, "{star}");
    }

    #[test]
    fn w_bound_limits() {
        let sys = nonbinary(3, 6, 1);
        let (_, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
        let b = model.w_bound(0.45, f64::INFINITY, 11);
        assert_eq!((b.alpha, b.beta), (5.0, 20.0));
        assert_eq!(b.w_min, 0.0);
        assert_eq!(model.w_bound(0.45, 0.0, 11).w_min, f64::INFINITY);
        let finite = model.w_bound(0.45, 0.5, 11);
        assert!((finite.w_min - finite.k / 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_fixed_points() {
        for (dv, dc, m) in [(3, 6, 2), (3, 4, 3), (2, 3, 2)] {
            let sys = nonbinary(dv, dc, m);
            let (_, model) = PotentialModel::from_system(&sys, &DShape::StrictlyPositive).unwrap();
            for eps in [0.3, 0.55, 0.8, 0.95] {
                let it = model.iterate_from(vec![1.0; m], eps, &DeConfig { tol: 1e-14, ..DeConfig::default() });
                assert!(sup_norm(&model.grad(&it.x, eps)) < 1e-6);
            }
        }
    }

    fn fd_grad(u: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
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

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(1e-3f64, |s, v| s.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |e, (p, q)| e.max((p - q).abs())) / scale
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn model(m: usize) -> &'static PotentialModel {
            static CELLS: [OnceLock<PotentialModel>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
            CELLS[m - 1].get_or_init(|| PotentialModel::from_system(&nonbinary(3, 4, m), &DShape::StrictlyPositive).unwrap().1)
        }

        fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.01f64..0.99, m)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn gradient_matches_finite_differences(m in 1usize..=3, seed in point(3), eps in 0.05f64..1.0) {
                let x = &seed[..m];
                let md = model(m);
                let fd = fd_grad(|p| md.u(p, eps), x);
                prop_assert!(rel_err(&md.grad(x, eps), &fd) < 1e-5);
            }

            #[test]
            fn coupled_gradient_matches_finite_differences(
                m in 1usize..=2,
                w in 1usize..=3,
                rows in proptest::collection::vec(point(2), 6),
                eps in 0.05f64..1.0,
            ) {
                let cp = CoupledParams::new(EnsembleParams::new(3, 4, m).unwrap(), 6 - w + 1, w).unwrap();
                let x: Vec<Vec<f64>> = rows.iter().map(|r| r[..m].to_vec()).collect();
                let md = model(m);
                let g = md.coupled_grad(&cp, &x, eps).unwrap();
                let flat: Vec<f64> = x.concat();
                let fd = fd_grad(
                    |p| md.coupled_u(&cp, &p.chunks(m).map(<[f64]>::to_vec).collect::<Vec<_>>(), eps).unwrap(),
                    &flat,
                );
                prop_assert!(rel_err(&g.concat(), &fd) < 1e-5);
            }

            #[test]
            fn potential_decreases_in_eps(m in 1usize..=3, seed in point(3), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
                prop_assume!((e1 - e2).abs() > 1e-9);
                let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
                // CCDF vectors are non-increasing
                let mut x = seed[..m].to_vec();
                x.sort_by(|a, b| b.total_cmp(a));
                let x = &x[..];
                prop_assert!(model(m).u(x, hi) < model(m).u(x, lo));
            }
        }
    }
}
