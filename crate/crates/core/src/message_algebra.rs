//! Distributions over message dimensions and the two node operations.
//!
//! On the erasure channel a nonbinary BP message is a subspace of GF(2)^m and
//! density evolution only tracks the distribution of its dimension: a
//! probability vector of length `m + 1`. The variable-node operation `⊡`
//! intersects subspaces, the check-node operation `⊠` sums them. The tail-sum
//! transform to a length-`m` CCDF vector turns both updates into monotone maps.
//!
//! The kernels are generic over [`Ring`], so the same code runs on `f64`,
//! exact rationals, and symbolic polynomials.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{tables, Coeff, CombinatoricsError, SubspaceTables};

/// Tolerance on the simplex and CCDF invariants in floating point.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Negative entries down to this value are treated as cancellation noise.
pub const CLAMP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MessageError {
    #[error("vector must have length {expected}, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("dimension mismatch: m = {left} vs m = {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("CCDF entry {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("CCDF vector is not non-increasing at position {index}")]
    NotMonotone { index: usize },
    #[error("erasure probability {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("message dimension m must be at least 1")]
    EmptyVector,
    #[error(transparent)]
    Tables(#[from] CombinatoricsError),
}

/// Commutative ring elements the node operations can run on.
pub trait Ring: Clone + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn from_rational(r: &BigRational) -> Self;

    /// Multiplication by a tabulated subspace coefficient.
    fn mul_coeff(&self, c: &Coeff) -> Self {
        self.clone() * Self::from_rational(&c.exact)
    }
}

impl Ring for f64 {
    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }

    fn mul_coeff(&self, c: &Coeff) -> Self {
        self * c.approx
    }
}

impl Ring for BigRational {
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn mul_coeff(&self, c: &Coeff) -> Self {
        self * &c.exact
    }
}

/// Numeric scalars that can carry validated message vectors.
pub trait Scalar: Ring + PartialOrd + fmt::Debug {
    /// Exact scalars are validated without tolerance and never clamped.
    const EXACT: bool;
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// `[a ⊡ b]_k = Σ_{i≥k} a_i Σ_j V_{i,j,k} b_j` on raw slices of length `m + 1`.
pub fn boxdot_slices<R: Ring>(t: &SubspaceTables, a: &[R], b: &[R]) -> Vec<R> {
    let m = t.m();
    debug_assert!(a.len() == m + 1 && b.len() == m + 1);
    (0..=m)
        .map(|k| {
            let mut acc = R::zero();
            for (i, ai) in a.iter().enumerate().skip(k) {
                let mut inner = R::zero();
                for (j, bj) in b.iter().enumerate().take(m + k - i + 1).skip(k) {
                    let c = t.v(i, j, k);
                    if !c.is_zero() {
                        inner = inner + bj.mul_coeff(c);
                    }
                }
                if !inner.is_zero() {
                    acc = acc + ai.clone() * inner;
                }
            }
            acc
        })
        .collect()
}

/// `[a ⊠ b]_k = Σ_{i≤k} a_i Σ_{j=k-i}^{k} C_{i,j,k} b_j` on raw slices.
pub fn boxtimes_slices<R: Ring>(t: &SubspaceTables, a: &[R], b: &[R]) -> Vec<R> {
    let m = t.m();
    debug_assert!(a.len() == m + 1 && b.len() == m + 1);
    (0..=m)
        .map(|k| {
            let mut acc = R::zero();
            for (i, ai) in a.iter().enumerate().take(k + 1) {
                let mut inner = R::zero();
                for (j, bj) in b.iter().enumerate().take(k + 1).skip(k - i) {
                    let c = t.c(i, j, k);
                    if !c.is_zero() {
                        inner = inner + bj.mul_coeff(c);
                    }
                }
                if !inner.is_zero() {
                    acc = acc + ai.clone() * inner;
                }
            }
            acc
        })
        .collect()
}

/// Tail sums `x_i = Σ_{k≥i} p_k`, `i = 1..=m`.
pub fn tail_sums<R: Ring>(p: &[R]) -> Vec<R> {
    let m = p.len() - 1;
    let mut out = vec![R::zero(); m];
    let mut acc = R::zero();
    for i in (1..=m).rev() {
        acc = acc + p[i].clone();
        out[i - 1] = acc.clone();
    }
    out
}

/// Inverse of [`tail_sums`]: `p_0 = 1 - x_1`, `p_i = x_i - x_{i+1}`, `p_m = x_m`.
pub fn tail_differences<R: Ring>(x: &[R]) -> Vec<R> {
    let m = x.len();
    let mut out = Vec::with_capacity(m + 1);
    out.push(R::one() - x[0].clone());
    for i in 0..m {
        if i + 1 < m {
            out.push(x[i].clone() - x[i + 1].clone());
        } else {
            out.push(x[i].clone());
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> BigRational {
    BigRational::from_integer(num_integer::binomial(BigInt::from(n), BigInt::from(k)))
}

/// Distribution of the dimension of a message, indexed `0..=m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ProbVector<S = f64> {
    entries: Vec<S>,
}

impl<S: Scalar> ProbVector<S> {
    /// Validates and, for floating point, clamps cancellation noise.
    pub fn new(entries: Vec<S>) -> Result<Self, MessageError> {
        if entries.len() < 2 {
            return Err(MessageError::EmptyVector);
        }
        let mut entries = entries;
        let mut clamped = false;
        for (index, e) in entries.iter_mut().enumerate() {
            if *e < S::zero() {
                let value = e.to_f64();
                if S::EXACT || value < -CLAMP_TOL {
                    return Err(MessageError::NegativeEntry { index, value });
                }
                *e = S::zero();
                clamped = true;
            }
        }
        let sum = entries.iter().fold(S::zero(), |acc, e| acc + e.clone());
        if S::EXACT {
            if !sum.is_one() {
                return Err(MessageError::NotNormalized { sum: sum.to_f64() });
            }
        } else {
            let s = sum.to_f64();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(MessageError::NotNormalized { sum: s });
            }
            if clamped {
                let scale = S::from_rational(&float_to_rational(1.0 / s));
                entries = entries.into_iter().map(|e| e * scale.clone()).collect();
            }
        }
        Ok(ProbVector { entries })
    }

    /// Unit mass at dimension `k`.
    pub fn delta(m: usize, k: usize) -> Self {
        assert!(m >= 1 && k <= m, "delta({m}, {k}) out of range");
        let mut entries = vec![S::zero(); m + 1];
        entries[k] = S::one();
        ProbVector { entries }
    }

    /// All mass at dimension 0: the fully decoded message.
    pub fn known(m: usize) -> Self {
        Self::delta(m, 0)
    }

    pub fn m(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<S> {
        self.entries
    }

    fn check_same(&self, other: &Self) -> Result<(), MessageError> {
        if self.m() != other.m() {
            return Err(MessageError::DimensionMismatch { left: self.m(), right: other.m() });
        }
        Ok(())
    }
}

fn float_to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::one)
}

/// Complementary CDF of a dimension distribution, entries `x_1 ≥ … ≥ x_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct CcdfVector<S = f64> {
    entries: Vec<S>,
}

impl<S: Scalar> CcdfVector<S> {
    pub fn new(entries: Vec<S>) -> Result<Self, MessageError> {
        if entries.is_empty() {
            return Err(MessageError::EmptyVector);
        }
        let tol = if S::EXACT { 0.0 } else { SIMPLEX_TOL };
        let mut entries = entries;
        for index in 0..entries.len() {
            let v = entries[index].to_f64();
            let below = entries[index] < S::zero();
            let above = entries[index] > S::one();
            if (below && (S::EXACT || v < -tol)) || (above && (S::EXACT || v > 1.0 + tol)) || v.is_nan() {
                return Err(MessageError::OutOfRange { index, value: v });
            }
            if below {
                entries[index] = S::zero();
            } else if above {
                entries[index] = S::one();
            }
            if index > 0 && entries[index] > entries[index - 1] {
                let gap = entries[index].to_f64() - entries[index - 1].to_f64();
                if S::EXACT || gap > tol {
                    return Err(MessageError::NotMonotone { index });
                }
                entries[index] = entries[index - 1].clone();
            }
        }
        Ok(CcdfVector { entries })
    }

    pub fn zeros(m: usize) -> Self {
        CcdfVector { entries: vec![S::zero(); m] }
    }

    pub fn ones(m: usize) -> Self {
        CcdfVector { entries: vec![S::one(); m] }
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<S> {
        self.entries
    }

    /// Componentwise partial order `self ⪯ other`, with slack `tol`.
    pub fn precedes(&self, other: &Self, tol: f64) -> bool {
        self.m() == other.m()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.to_f64() <= b.to_f64() + tol)
    }
}

impl CcdfVector<f64> {
    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// The map `H`: probability vector to CCDF vector.
pub fn to_ccdf<S: Scalar>(p: &ProbVector<S>) -> CcdfVector<S> {
    let mut x = tail_sums(p.entries());
    if !S::EXACT {
        for v in x.iter_mut() {
            if *v > S::one() {
                *v = S::one();
            }
        }
    }
    CcdfVector { entries: x }
}

/// The inverse map `H⁻¹`: CCDF vector to probability vector.
pub fn from_ccdf<S: Scalar>(x: &CcdfVector<S>) -> ProbVector<S> {
    let mut p = tail_differences(x.entries());
    if !S::EXACT {
        for v in p.iter_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
    }
    ProbVector { entries: p }
}

/// Variable-node (subspace intersection) combination.
pub fn boxdot<S: Scalar>(a: &ProbVector<S>, b: &ProbVector<S>) -> Result<ProbVector<S>, MessageError> {
    a.check_same(b)?;
    let t = tables(a.m() as u32)?;
    ProbVector::new(boxdot_slices(&t, a.entries(), b.entries()))
}

/// Check-node (subspace sum) combination.
pub fn boxtimes<S: Scalar>(a: &ProbVector<S>, b: &ProbVector<S>) -> Result<ProbVector<S>, MessageError> {
    a.check_same(b)?;
    let t = tables(a.m() as u32)?;
    ProbVector::new(boxtimes_slices(&t, a.entries(), b.entries()))
}

/// Dimension distribution of a channel message: each of the `m` bits is
/// erased independently with probability `eps`.
pub fn channel_vector<S: Scalar>(m: usize, eps: S) -> Result<ProbVector<S>, MessageError> {
    if m == 0 {
        return Err(MessageError::EmptyVector);
    }
    if eps < S::zero() || eps > S::one() || eps.to_f64().is_nan() {
        return Err(MessageError::EpsilonOutOfRange(eps.to_f64()));
    }
    Ok(ProbVector { entries: channel_entries(m, &eps) })
}

/// Raw channel distribution without validation; also used symbolically.
pub fn channel_entries<R: Ring>(m: usize, eps: &R) -> Vec<R> {
    let comp = R::one() - eps.clone();
    (0..=m)
        .map(|i| {
            let mut term = R::from_rational(&binomial(m, i));
            for _ in 0..i {
                term = term * eps.clone();
            }
            for _ in i..m {
                term = term * comp.clone();
            }
            term
        })
        .collect()
}
