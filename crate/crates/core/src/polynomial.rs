//! Sparse multivariate polynomials with exact coefficients that are
//! themselves polynomials in `ε`.
//!
//! Variables are indexed from 0 in the API and printed as `x1, x2, …`.
//! The canonical text form lists terms in graded lexicographic order
//! (`x1^2` before `x1*x2` before `x2^2`) with ε powers ascending inside each
//! monomial, for example `2/3*eps*x1 + 1/3*eps^2*x1 + eps^2*x2`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::combinatorics::{tables, Coeff, CombinatoricsError};
use crate::de_engine::{f_generic, g_generic, DeError, EnsembleParams};
use crate::message_algebra::Ring;

/// Largest `m` accepted by [`extract_de_polynomials`] unless overridden.
pub const DEFAULT_EXTRACT_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("symbolic expansion limited to m <= {limit}, got m = {m}")]
    DimensionGuard { m: usize, limit: usize },
    #[error("variable index {index} out of range for m = {m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("cannot parse polynomial: {0}")]
    Parse(String),
    #[error(transparent)]
    De(#[from] DeError),
    #[error(transparent)]
    Tables(#[from] CombinatoricsError),
}

/// Univariate polynomial in `ε` with exact coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EpsPoly {
    coeffs: Vec<BigRational>,
}

impl EpsPoly {
    pub fn new(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        EpsPoly { coeffs }
    }

    pub fn constant(c: BigRational) -> Self {
        EpsPoly::new(vec![c])
    }

    /// The polynomial `ε`.
    pub fn eps() -> Self {
        EpsPoly::new(vec![BigRational::zero(), BigRational::one()])
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    /// Coefficient of `ε^d` (zero beyond the degree).
    pub fn coeff(&self, d: usize) -> BigRational {
        self.coeffs.get(d).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Degree, with `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.len() <= 1
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return EpsPoly::default();
        }
        EpsPoly { coeffs: self.coeffs.iter().map(|a| a * c).collect() }
    }

    pub fn eval_exact(&self, eps: &BigRational) -> BigRational {
        self.coeffs.iter().rev().fold(BigRational::zero(), |acc, c| acc * eps + c)
    }

    pub fn eval_f64(&self, eps: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * eps + c.to_f64().unwrap_or(f64::NAN))
    }

    /// Approximate coefficients, lowest degree first.
    pub fn to_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect()
    }
}

impl Add for EpsPoly {
    type Output = EpsPoly;
    fn add(self, rhs: EpsPoly) -> EpsPoly {
        let (mut long, short) = if self.coeffs.len() >= rhs.coeffs.len() { (self, rhs) } else { (rhs, self) };
        for (a, b) in long.coeffs.iter_mut().zip(short.coeffs) {
            *a += b;
        }
        EpsPoly::new(long.coeffs)
    }
}

impl Neg for EpsPoly {
    type Output = EpsPoly;
    fn neg(self) -> EpsPoly {
        EpsPoly { coeffs: self.coeffs.into_iter().map(|c| -c).collect() }
    }
}

impl Sub for EpsPoly {
    type Output = EpsPoly;
    fn sub(self, rhs: EpsPoly) -> EpsPoly {
        self + (-rhs)
    }
}

impl Mul for EpsPoly {
    type Output = EpsPoly;
    fn mul(self, rhs: EpsPoly) -> EpsPoly {
        if self.coeffs.is_empty() || rhs.coeffs.is_empty() {
            return EpsPoly::default();
        }
        let mut out = vec![BigRational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        EpsPoly::new(out)
    }
}

impl Zero for EpsPoly {
    fn zero() -> Self {
        EpsPoly::default()
    }
    fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }
}

impl One for EpsPoly {
    fn one() -> Self {
        EpsPoly::constant(BigRational::one())
    }
}

impl Ring for EpsPoly {
    fn from_rational(r: &BigRational) -> Self {
        EpsPoly::constant(r.clone())
    }

    fn mul_coeff(&self, c: &Coeff) -> Self {
        self.scale(&c.exact)
    }
}

impl fmt::Display for EpsPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mono = Monomial::one();
        write_terms(f, std::iter::once((&mono, self)))
    }
}

impl FromStr for EpsPoly {
    type Err = PolyError;
    fn from_str(s: &str) -> Result<Self, PolyError> {
        let p = MultiPoly::parse(s, 0)?;
        Ok(p.coeff(&Monomial::one()))
    }
}

/// Exponent vector; trailing zeros are not stored, so monomials compare
/// equal across ambient dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(mut exps: Vec<u32>) -> Self {
        while exps.last() == Some(&0) {
            exps.pop();
        }
        Monomial { exps }
    }

    pub fn one() -> Self {
        Monomial::default()
    }

    /// The monomial `x_k`.
    pub fn var(k: usize) -> Self {
        let mut exps = vec![0; k + 1];
        exps[k] = 1;
        Monomial { exps }
    }

    pub fn exp(&self, k: usize) -> u32 {
        self.exps.get(k).copied().unwrap_or(0)
    }

    /// Exponents padded to length `m`.
    pub fn exponents(&self, m: usize) -> Vec<u32> {
        let mut v = self.exps.clone();
        v.resize(m.max(v.len()), 0);
        v
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    /// Number of coordinates that may be nonzero.
    pub fn span(&self) -> usize {
        self.exps.len()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let n = self.exps.len().max(other.exps.len());
        Monomial::new((0..n).map(|k| self.exp(k) + other.exp(k)).collect())
    }

    /// Adds `delta` to exponent `k`; `None` if it would go negative.
    pub fn shifted(&self, k: usize, delta: i64) -> Option<Monomial> {
        let e = self.exp(k) as i64 + delta;
        if e < 0 {
            return None;
        }
        let mut exps = self.exponents(k + 1);
        exps[k] = e as u32;
        Some(Monomial::new(exps))
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.exps.iter().enumerate().fold(1.0, |acc, (k, &e)| acc * x[k].powi(e as i32))
    }

    pub fn eval_exact(&self, x: &[BigRational]) -> BigRational {
        self.exps
            .iter()
            .enumerate()
            .fold(BigRational::one(), |acc, (k, &e)| acc * num_traits::pow(x[k].clone(), e as usize))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            let n = self.exps.len().max(other.exps.len());
            for k in 0..n {
                match other.exp(k).cmp(&self.exp(k)) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.exps.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Sparse polynomial in `x_1..x_m` with [`EpsPoly`] coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MultiPoly {
    m: usize,
    terms: BTreeMap<Monomial, EpsPoly>,
}

impl MultiPoly {
    pub fn zero_in(m: usize) -> Self {
        MultiPoly { m, terms: BTreeMap::new() }
    }

    /// The variable `x_k` in ambient dimension `m`.
    pub fn var(m: usize, k: usize) -> Self {
        assert!(k < m, "variable {k} out of range for m = {m}");
        let mut p = MultiPoly::zero_in(m);
        p.terms.insert(Monomial::var(k), EpsPoly::one());
        p
    }

    pub fn constant(m: usize, c: EpsPoly) -> Self {
        let mut p = MultiPoly::zero_in(m);
        p.add_term(Monomial::one(), c);
        p
    }

    /// The constant `ε`.
    pub fn eps(m: usize) -> Self {
        MultiPoly::constant(m, EpsPoly::eps())
    }

    pub fn from_terms(m: usize, terms: impl IntoIterator<Item = (Monomial, EpsPoly)>) -> Self {
        let mut p = MultiPoly::zero_in(m);
        for (mono, c) in terms {
            p.add_term(mono, c);
        }
        p
    }

    pub fn add_term(&mut self, mono: Monomial, c: EpsPoly) {
        self.m = self.m.max(mono.span());
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(mono);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = std::mem::take(o.get_mut()) + c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Same polynomial viewed in a (not smaller) ambient dimension.
    pub fn with_dim(mut self, m: usize) -> Self {
        self.m = self.m.max(m);
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &EpsPoly)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, mono: &Monomial) -> EpsPoly {
        self.terms.get(mono).cloned().unwrap_or_default()
    }

    /// Highest power of `ε` appearing in any coefficient.
    pub fn eps_degree(&self) -> usize {
        self.terms.values().filter_map(EpsPoly::degree).max().unwrap_or(0)
    }

    /// Largest total degree in `x`.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        MultiPoly::from_terms(self.m, self.terms.iter().map(|(k, v)| (k.clone(), v.scale(c))))
    }

    pub fn scale_eps(&self, c: &EpsPoly) -> Self {
        MultiPoly::from_terms(self.m, self.terms.iter().map(|(k, v)| (k.clone(), v.clone() * c.clone())))
    }

    fn check_index(&self, k: usize) -> Result<(), PolyError> {
        if k >= self.m {
            return Err(PolyError::IndexOutOfRange { index: k, m: self.m });
        }
        Ok(())
    }

    /// Termwise partial derivative in `x_k`.
    pub fn differentiate(&self, k: usize) -> Result<MultiPoly, PolyError> {
        self.check_index(k)?;
        Ok(MultiPoly::from_terms(
            self.m,
            self.terms.iter().filter_map(|(mono, c)| {
                let e = mono.exp(k);
                (e > 0).then(|| (mono.shifted(k, -1).unwrap(), c.scale(&BigRational::from_integer(e.into()))))
            }),
        ))
    }

    /// Termwise antiderivative in `x_k`, vanishing at `x_k = 0`.
    pub fn integrate(&self, k: usize) -> Result<MultiPoly, PolyError> {
        self.check_index(k)?;
        Ok(MultiPoly::from_terms(
            self.m,
            self.terms.iter().map(|(mono, c)| {
                let e = mono.exp(k) + 1;
                (mono.shifted(k, 1).unwrap(), c.scale(&BigRational::new(BigInt::one(), e.into())))
            }),
        ))
    }

    pub fn eval_f64(&self, x: &[f64], eps: f64) -> f64 {
        self.terms.iter().map(|(mono, c)| c.eval_f64(eps) * mono.eval_f64(x)).sum()
    }

    pub fn eval_exact(&self, x: &[BigRational], eps: &BigRational) -> BigRational {
        self.terms
            .iter()
            .fold(BigRational::zero(), |acc, (mono, c)| acc + c.eval_exact(eps) * mono.eval_exact(x))
    }

    /// Substitutes a value for `ε`, leaving constant coefficients.
    pub fn at_eps(&self, eps: &BigRational) -> MultiPoly {
        MultiPoly::from_terms(
            self.m,
            self.terms.iter().map(|(mono, c)| (mono.clone(), EpsPoly::constant(c.eval_exact(eps)))),
        )
    }

    pub fn support(&self) -> SupportSet {
        SupportSet { m: self.m, set: self.terms.keys().cloned().collect() }
    }

    /// Flattened f64 form for fast repeated evaluation.
    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            terms: self
                .terms
                .iter()
                .map(|(mono, c)| {
                    let vars = mono
                        .exps
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| **e > 0)
                        .map(|(k, e)| (k, *e as i32))
                        .collect();
                    (vars, c.to_f64())
                })
                .collect(),
        }
    }

    /// Parses the canonical text form in ambient dimension at least `m`.
    pub fn parse(s: &str, m: usize) -> Result<MultiPoly, PolyError> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(PolyError::Parse("empty input".into()));
        }
        let mut out = MultiPoly::zero_in(m);
        let mut rest = s.as_str();
        let mut first = true;
        while !rest.is_empty() {
            let (mut negative, mut body) = match rest.as_bytes()[0] {
                b'+' => (false, &rest[1..]),
                b'-' => (true, &rest[1..]),
                _ if first => (false, rest),
                _ => return Err(PolyError::Parse(format!("expected sign before {rest:?}"))),
            };
            // a signed coefficient after the operator, as in "a + -2*x1"
            if !first {
                if let Some(b) = body.strip_prefix('-') {
                    (negative, body) = (!negative, b);
                } else if let Some(b) = body.strip_prefix('+') {
                    body = b;
                }
            }
            first = false;
            let end = body.find(['+', '-']).unwrap_or(body.len());
            let (term, tail) = body.split_at(end);
            let (mono, coeff, power) = parse_term(term)?;
            let mut coeffs = vec![BigRational::zero(); power + 1];
            coeffs[power] = if negative { -coeff } else { coeff };
            out.add_term(mono, EpsPoly::new(coeffs));
            rest = tail;
        }
        Ok(out)
    }
}

fn parse_term(term: &str) -> Result<(Monomial, BigRational, usize), PolyError> {
    if term.is_empty() {
        return Err(PolyError::Parse("empty term".into()));
    }
    let mut coeff = BigRational::one();
    let mut power = 0usize;
    let mut exps: Vec<u32> = Vec::new();
    for factor in term.split('*') {
        let (base, exp) = match factor.split_once('^') {
            Some((b, e)) => {
                (b, e.parse::<u32>().map_err(|_| PolyError::Parse(format!("bad exponent in {factor:?}")))?)
            }
            None => (factor, 1),
        };
        if base == "eps" {
            power += exp as usize;
        } else if let Some(idx) = base.strip_prefix('x') {
            let k: usize = idx.parse().map_err(|_| PolyError::Parse(format!("bad variable {base:?}")))?;
            if k == 0 {
                return Err(PolyError::Parse("variables are numbered from x1".into()));
            }
            if exps.len() < k {
                exps.resize(k, 0);
            }
            exps[k - 1] += exp;
        } else {
            let r = parse_rational(base)?;
            coeff *= num_traits::pow(r, exp as usize);
        }
    }
    Ok((Monomial::new(exps), coeff, power))
}

fn parse_rational(s: &str) -> Result<BigRational, PolyError> {
    let bad = || PolyError::Parse(format!("bad number {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.parse().map_err(|_| bad())?;
            let d: BigInt = d.parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(n, d))
        }
        None => Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

fn write_terms<'a>(
    f: &mut fmt::Formatter<'_>,
    terms: impl Iterator<Item = (&'a Monomial, &'a EpsPoly)>,
) -> fmt::Result {
    let mut first = true;
    for (mono, c) in terms {
        for (d, a) in c.coeffs().iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let mut factors: Vec<String> = Vec::new();
            match d {
                0 => {}
                1 => factors.push("eps".into()),
                _ => factors.push(format!("eps^{d}")),
            }
            for (k, &e) in mono.exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(format!("x{}", k + 1)),
                    _ => factors.push(format!("x{}^{e}", k + 1)),
                }
            }
            let mag = a.abs();
            let sign = if a.is_negative() { "-" } else { "+" };
            if first {
                if a.is_negative() {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            if mag.is_one() && !factors.is_empty() {
                write!(f, "{}", factors.join("*"))?;
            } else if factors.is_empty() {
                write!(f, "{mag}")?;
            } else {
                write!(f, "{mag}*{}", factors.join("*"))?;
            }
        }
    }
    if first {
        write!(f, "0")?;
    }
    Ok(())
}

impl fmt::Display for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_terms(f, self.terms.iter())
    }
}

impl FromStr for MultiPoly {
    type Err = PolyError;
    fn from_str(s: &str) -> Result<Self, PolyError> {
        MultiPoly::parse(s, 0)
    }
}

impl Add for MultiPoly {
    type Output = MultiPoly;
    fn add(self, rhs: MultiPoly) -> MultiPoly {
        let (mut big, small) = if self.terms.len() >= rhs.terms.len() { (self, rhs) } else { (rhs, self) };
        big.m = big.m.max(small.m);
        for (mono, c) in small.terms {
            big.add_term(mono, c);
        }
        big
    }
}

impl Neg for MultiPoly {
    type Output = MultiPoly;
    fn neg(self) -> MultiPoly {
        MultiPoly { m: self.m, terms: self.terms.into_iter().map(|(k, v)| (k, -v)).collect() }
    }
}

impl Sub for MultiPoly {
    type Output = MultiPoly;
    fn sub(self, rhs: MultiPoly) -> MultiPoly {
        self + (-rhs)
    }
}

impl Mul for MultiPoly {
    type Output = MultiPoly;
    fn mul(self, rhs: MultiPoly) -> MultiPoly {
        let mut out = MultiPoly::zero_in(self.m.max(rhs.m));
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }
}

impl Zero for MultiPoly {
    fn zero() -> Self {
        MultiPoly::default()
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl One for MultiPoly {
    fn one() -> Self {
        MultiPoly::constant(0, EpsPoly::one())
    }
}

impl Ring for MultiPoly {
    fn from_rational(r: &BigRational) -> Self {
        MultiPoly::constant(0, EpsPoly::constant(r.clone()))
    }

    fn mul_coeff(&self, c: &Coeff) -> Self {
        self.scale(&c.exact)
    }
}

/// f64 form of a [`MultiPoly`]: per term the nonzero `(variable, exponent)`
/// pairs and the ε-coefficients lowest degree first.
#[derive(Debug, Clone, Default)]
pub struct CompiledPoly {
    terms: Vec<(Vec<(usize, i32)>, Vec<f64>)>,
}

impl CompiledPoly {
    pub fn eval(&self, x: &[f64], eps: f64) -> f64 {
        self.terms
            .iter()
            .map(|(vars, c)| {
                let ce = c.iter().rev().fold(0.0, |acc, a| acc * eps + a);
                vars.iter().fold(ce, |acc, &(k, e)| acc * x[k].powi(e))
            })
            .sum()
    }
}

/// A set of monomials sharing an ambient dimension.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportSet {
    m: usize,
    set: BTreeSet<Monomial>,
}

impl SupportSet {
    pub fn new(m: usize, items: impl IntoIterator<Item = Monomial>) -> Self {
        SupportSet { m, set: items.into_iter().collect() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn contains(&self, mono: &Monomial) -> bool {
        self.set.contains(mono)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Monomial> {
        self.set.iter()
    }

    /// `S + e_k`: adds one to coordinate `k` of every element.
    pub fn shift(&self, k: usize) -> SupportSet {
        assert!(k < self.m, "coordinate {k} out of range for m = {}", self.m);
        SupportSet { m: self.m, set: self.set.iter().map(|s| s.shifted(k, 1).unwrap()).collect() }
    }

    /// `S - e_k`: subtracts one from coordinate `k`, dropping elements
    /// whose coordinate `k` is zero.
    pub fn unshift(&self, k: usize) -> SupportSet {
        assert!(k < self.m, "coordinate {k} out of range for m = {}", self.m);
        SupportSet { m: self.m, set: self.set.iter().filter_map(|s| s.shifted(k, -1)).collect() }
    }

    pub fn union(&self, other: &SupportSet) -> SupportSet {
        SupportSet { m: self.m.max(other.m), set: self.set.union(&other.set).cloned().collect() }
    }

    pub fn is_subset(&self, other: &SupportSet) -> bool {
        self.set.is_subset(&other.set)
    }

    /// Elements not in `other`.
    pub fn difference(&self, other: &SupportSet) -> SupportSet {
        SupportSet { m: self.m, set: self.set.difference(&other.set).cloned().collect() }
    }
}

impl FromIterator<Monomial> for SupportSet {
    fn from_iter<I: IntoIterator<Item = Monomial>>(iter: I) -> Self {
        let set: BTreeSet<Monomial> = iter.into_iter().collect();
        let m = set.iter().map(Monomial::span).max().unwrap_or(0);
        SupportSet { m, set }
    }
}

pub fn support(p: &MultiPoly) -> SupportSet {
    p.support()
}

/// Symbolic DE maps `(f, g)` in CCDF coordinates: `f_j(y; ε)` and `g_j(x)`.
pub fn extract_de_polynomials(p: EnsembleParams) -> Result<(Vec<MultiPoly>, Vec<MultiPoly>), PolyError> {
    extract_de_polynomials_with_limit(p, DEFAULT_EXTRACT_LIMIT)
}

pub fn extract_de_polynomials_with_limit(
    p: EnsembleParams,
    limit: usize,
) -> Result<(Vec<MultiPoly>, Vec<MultiPoly>), PolyError> {
    p.validate()?;
    if p.m > limit {
        return Err(PolyError::DimensionGuard { m: p.m, limit });
    }
    let t = tables(p.m as u32)?;
    let vars: Vec<MultiPoly> = (0..p.m).map(|k| MultiPoly::var(p.m, k)).collect();
    let f = f_generic(&t, p.dv, &vars, &MultiPoly::eps(p.m));
    let g = g_generic(&t, p.dc, &vars);
    let fix = |v: Vec<MultiPoly>| v.into_iter().map(|q| q.with_dim(p.m)).collect();
    Ok((fix(f), fix(g)))
}
