//! Subspace combinatorics over GF(2)^m.
//!
//! Gaussian binomial coefficients count the `k`-dimensional subspaces of
//! GF(2)^m. The coefficients `V^m_{i,j,k}` and `C^m_{i,j,k}` are the
//! probabilities that a uniformly random `j`-dimensional subspace meets
//! (respectively spans together with) a fixed `i`-dimensional subspace in a
//! subspace of dimension `k`. Everything here is exact; floating point copies
//! are kept next to the exact values for the density-evolution hot loops.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number, always kept in lowest terms with a positive
/// denominator.
pub type ExactRational = BigRational;

/// Default cap on the ambient dimension for which coefficient tables are built.
pub const DEFAULT_MAX_DIMENSION: u32 = 12;

static MAX_DIMENSION: AtomicU32 = AtomicU32::new(DEFAULT_MAX_DIMENSION);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombinatoricsError {
    #[error("dimension m = {m} exceeds the configured table limit {limit}")]
    DimensionTooLarge { m: u32, limit: u32 },
    #[error("dimension m must be at least 1")]
    ZeroDimension,
}

/// Changes the largest `m` for which [`tables`] will build coefficient tables.
pub fn set_max_dimension(limit: u32) {
    MAX_DIMENSION.store(limit, Ordering::SeqCst);
}

pub fn max_dimension() -> u32 {
    MAX_DIMENSION.load(Ordering::SeqCst)
}

pub(crate) fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

/// Number of `k`-dimensional subspaces of GF(2)^m, as an exact rational.
///
/// Returns 1 for `k = 0` or `k = m`, the product formula for `0 < k < m`,
/// and 0 for `k` outside `[0, m]`.
pub fn gaussian_binomial(m: u32, k: i64) -> ExactRational {
    if k < 0 || k > m as i64 {
        return ExactRational::zero();
    }
    let k = k as u32;
    if k == 0 || k == m {
        return ExactRational::one();
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for l in 0..k {
        num *= pow2(m) - pow2(l);
        den *= pow2(k) - pow2(l);
    }
    ExactRational::new(num, den)
}

fn in_v_support(m: usize, i: usize, j: usize, k: usize) -> bool {
    i <= m && j <= m && k <= i.min(j) && k + m >= i + j
}

fn in_c_support(m: usize, i: usize, j: usize, k: usize) -> bool {
    i <= m && j <= m && k <= m && k >= i.max(j) && k <= i + j
}

/// Probability that a random `j`-dimensional subspace intersects a fixed
/// `i`-dimensional subspace of GF(2)^m in dimension `k`.
pub fn v_coeff(m: usize, i: usize, j: usize, k: usize) -> ExactRational {
    if !in_v_support(m, i, j, k) {
        return ExactRational::zero();
    }
    let g = |a: usize, b: usize| gaussian_binomial(a as u32, b as i64);
    let shift = ((i - k) * (j - k)) as u32;
    g(i, k) * g(m - i, j - k) * ExactRational::from_integer(pow2(shift)) / g(m, j)
}

/// Probability that a random `j`-dimensional subspace together with a fixed
/// `i`-dimensional subspace of GF(2)^m spans a subspace of dimension `k`.
pub fn c_coeff(m: usize, i: usize, j: usize, k: usize) -> ExactRational {
    if !in_c_support(m, i, j, k) {
        return ExactRational::zero();
    }
    let g = |a: usize, b: usize| gaussian_binomial(a as u32, b as i64);
    let shift = ((k - i) * (k - j)) as u32;
    g(m - i, m - k) * g(i, k - j) * ExactRational::from_integer(pow2(shift)) / g(m, m - j)
}

/// A table entry carried in both exact and floating point form.
#[derive(Debug, Clone, PartialEq)]
pub struct Coeff {
    pub exact: ExactRational,
    pub approx: f64,
}

impl Coeff {
    fn new(exact: ExactRational) -> Self {
        let approx = exact.to_f64().unwrap_or(f64::NAN);
        Coeff { exact, approx }
    }

    pub fn is_zero(&self) -> bool {
        self.exact.is_zero()
    }
}

/// Eagerly built, read-only coefficient tables for one ambient dimension.
#[derive(Debug)]
pub struct SubspaceTables {
    m: usize,
    gauss: Vec<Coeff>,
    v: Vec<Coeff>,
    c: Vec<Coeff>,
}

impl SubspaceTables {
    pub fn new(m: u32) -> Result<Self, CombinatoricsError> {
        if m == 0 {
            return Err(CombinatoricsError::ZeroDimension);
        }
        let limit = max_dimension();
        if m > limit {
            return Err(CombinatoricsError::DimensionTooLarge { m, limit });
        }
        let mu = m as usize;
        let n = mu + 1;
        let gauss = (0..n).map(|k| Coeff::new(gaussian_binomial(m, k as i64))).collect();
        let mut v = Vec::with_capacity(n * n * n);
        let mut c = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(Coeff::new(v_coeff(mu, i, j, k)));
                    c.push(Coeff::new(c_coeff(mu, i, j, k)));
                }
            }
        }
        Ok(SubspaceTables { m: mu, gauss, v, c })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.m + 1;
        (i * n + j) * n + k
    }

    /// `G_{m,k}` for this table's `m`.
    pub fn gaussian(&self, k: usize) -> &Coeff {
        &self.gauss[k]
    }

    pub fn v(&self, i: usize, j: usize, k: usize) -> &Coeff {
        &self.v[self.index(i, j, k)]
    }

    pub fn c(&self, i: usize, j: usize, k: usize) -> &Coeff {
        &self.c[self.index(i, j, k)]
    }
}

fn cache() -> &'static Mutex<BTreeMap<u32, Arc<SubspaceTables>>> {
    static CACHE: OnceLock<Mutex<BTreeMap<u32, Arc<SubspaceTables>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// Shared tables for dimension `m`, built on first use.
pub fn tables(m: u32) -> Result<Arc<SubspaceTables>, CombinatoricsError> {
    if let Some(t) = cache().lock().expect("table cache poisoned").get(&m) {
        return Ok(Arc::clone(t));
    }
    let built = Arc::new(SubspaceTables::new(m)?);
    let mut guard = cache().lock().expect("table cache poisoned");
    Ok(Arc::clone(guard.entry(m).or_insert(built)))
}

/// Outcome of [`ratio_identities`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentityReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl IdentityReport {
    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Exact check of the ratio identities between neighbouring Gaussian
/// binomials and `V` coefficients for one `m`:
///
/// * `G_{m,i+1}/G_{m,i} = (2^{m-i}-1)/(2^{i+1}-1)`
/// * `G_{m+1,i}/G_{m,i} = (2^{m+1}-1)/(2^{m-i+1}-1)`
/// * `G_{m+1,i+1}/G_{m,i} = (2^{m+1}-1)/(2^{i+1}-1)`
/// * `V_{ijl}/V_{(i-1)jl} = (2^{i-l}-2^{-l})/(2^{i-l}-1) · (2^{m+l-i+1}-2^j)/(2^{m-i+1}-1)`,
///   with the lower bounds `2^l (2^{m-i+1}-2^{j-l})/(2^{m-i+1}-1)` for `l > 0`
///   and `2^{l-1}` when also `j - l <= m - i`
/// * `V_{ijl}/V_{(i-1)j(l-1)} = (2^i-1)/(2^{m+1}-2^i) · (2^{j+1}-2^l)/(2^l-1)`,
///   equal to one for `i = l`, `j = m`
pub fn ratio_identities(m: u32) -> IdentityReport {
    let two = |e: i64| -> ExactRational {
        if e >= 0 {
            ExactRational::from_integer(pow2(e as u32))
        } else {
            ExactRational::new(BigInt::one(), pow2((-e) as u32))
        }
    };
    let one = ExactRational::one();
    let g = |m: u32, k: i64| gaussian_binomial(m, k);
    let mut rep = IdentityReport::default();
    let mi = m as i64;
    for i in 0..=mi {
        let lhs = g(m, i + 1) / g(m, i);
        rep.expect(lhs == (two(mi - i) - &one) / (two(i + 1) - &one), || format!("G ratio in k at m={m}, i={i}"));
        let lhs = g(m + 1, i) / g(m, i);
        rep.expect(lhs == (two(mi + 1) - &one) / (two(mi - i + 1) - &one), || format!("G ratio in m at m={m}, i={i}"));
        let lhs = g(m + 1, i + 1) / g(m, i);
        rep.expect(lhs == (two(mi + 1) - &one) / (two(i + 1) - &one), || format!("G diagonal ratio at m={m}, i={i}"));
    }
    let mu = m as usize;
    let v = |i: i64, j: i64, l: i64| v_coeff(mu, i as usize, j as usize, l as usize);
    for l in 0..=mi {
        for i in l + 1..=mi {
            for j in l..=mi + l - i {
                let (a, b) = (v(i, j, l), v(i - 1, j, l));
                if a.is_zero() || b.is_zero() {
                    rep.expect(false, || format!("V_{{{i},{j},{l}}} or V_{{{},{j},{l}}} vanishes", i - 1));
                    continue;
                }
                let ratio = a / b;
                let rhs = (two(i - l) - two(-l)) / (two(i - l) - &one) * (two(mi + l - i + 1) - two(j))
                    / (two(mi - i + 1) - &one);
                rep.expect(ratio == rhs, || format!("V ratio in i at m={m}, (i,j,l)=({i},{j},{l})"));
                if l > 0 {
                    let bound = two(l) * (two(mi - i + 1) - two(j - l)) / (two(mi - i + 1) - &one);
                    rep.expect(ratio > bound, || format!("V ratio lower bound at m={m}, (i,j,l)=({i},{j},{l})"));
                    if j - l <= mi - i {
                        rep.expect(ratio > two(l - 1), || format!("V ratio above 2^(l-1) at m={m}, (i,j,l)=({i},{j},{l})"));
                    }
                }
            }
        }
    }
    for l in 1..=mi {
        for i in l..=mi {
            for j in l + 1..=mi + l - i {
                let (a, b) = (v(i, j, l), v(i - 1, j, l - 1));
                if a.is_zero() || b.is_zero() {
                    rep.expect(false, || format!("V_{{{i},{j},{l}}} or V_{{{},{j},{}}} vanishes", i - 1, l - 1));
                    continue;
                }
                let ratio = a / b;
                let rhs = (two(i) - &one) / (two(mi + 1) - two(i)) * (two(j + 1) - two(l)) / (two(l) - &one);
                rep.expect(ratio == rhs, || format!("V diagonal ratio at m={m}, (i,j,l)=({i},{j},{l})"));
            }
        }
        let ratio = v(l, mi, l) / v(l - 1, mi, l - 1);
        rep.expect(ratio == one, || format!("V_{{l,m,l}} ratio at m={m}, l={l}"));
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn r(n: i64, d: i64) -> ExactRational {
        ExactRational::new(n.into(), d.into())
    }

    // Subspaces of GF(2)^m as sorted element lists (bitmask vectors).
    fn span(gens: &[u32]) -> Vec<u32> {
        let mut s = vec![0u32];
        for &g in gens {
            if s.contains(&g) {
                continue;
            }
            let more: Vec<u32> = s.iter().map(|x| x ^ g).collect();
            s.extend(more);
        }
        s.sort_unstable();
        s
    }

    fn all_subspaces(m: u32) -> Vec<Vec<u32>> {
        let nonzero: Vec<u32> = (1..(1u32 << m)).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        // every subspace is spanned by at most m vectors; grow from smaller ones
        let mut frontier = vec![vec![0u32]];
        seen.insert(vec![0u32]);
        out.push(vec![0u32]);
        while let Some(s) = frontier.pop() {
            for &v in &nonzero {
                if s.contains(&v) {
                    continue;
                }
                let mut gens = s.clone();
                gens.push(v);
                let t = span(&gens);
                if seen.insert(t.clone()) {
                    out.push(t.clone());
                    frontier.push(t);
                }
            }
        }
        out
    }

    fn dim(s: &[u32]) -> usize {
        s.len().trailing_zeros() as usize
    }

    #[test]
    fn gaussian_binomial_examples() {
        assert_eq!(gaussian_binomial(2, 0), r(1, 1));
        assert_eq!(gaussian_binomial(2, 1), r(3, 1));
        assert_eq!(gaussian_binomial(4, 2), r(35, 1));
        assert_eq!(gaussian_binomial(3, 5), r(0, 1));
        assert_eq!(gaussian_binomial(3, -1), r(0, 1));
    }

    #[test]
    fn gaussian_binomial_counts_subspaces() {
        for m in 1..=4u32 {
            let subs = all_subspaces(m);
            for k in 0..=m as usize {
                let count = subs.iter().filter(|s| dim(s) == k).count() as i64;
                assert_eq!(gaussian_binomial(m, k as i64), r(count, 1), "m={m} k={k}");
            }
        }
    }

    #[test]
    fn v_and_c_match_enumeration() {
        for m in 1..=4u32 {
            let subs = all_subspaces(m);
            let mu = m as usize;
            for i in 0..=mu {
                let fixed = subs.iter().find(|s| dim(s) == i).unwrap();
                for j in 0..=mu {
                    let others: Vec<&Vec<u32>> = subs.iter().filter(|s| dim(s) == j).collect();
                    let total = others.len() as i64;
                    let mut meet = vec![0i64; mu + 1];
                    let mut join = vec![0i64; mu + 1];
                    for w in &others {
                        let inter: Vec<u32> = fixed.iter().copied().filter(|x| w.contains(x)).collect();
                        meet[dim(&inter)] += 1;
                        let mut gens = fixed.clone();
                        gens.extend(w.iter().copied());
                        join[dim(&span(&gens))] += 1;
                    }
                    for k in 0..=mu {
                        assert_eq!(v_coeff(mu, i, j, k), r(meet[k], total), "V m={m} {i},{j},{k}");
                        assert_eq!(c_coeff(mu, i, j, k), r(join[k], total), "C m={m} {i},{j},{k}");
                    }
                }
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(v_coeff(2, 1, 1, 1), r(1, 3));
        assert_eq!(v_coeff(2, 2, 2, 2), r(1, 1));
        assert_eq!(c_coeff(2, 0, 0, 0), r(1, 1));
        for m in 1..=5 {
            for j in 0..=m {
                assert_eq!(v_coeff(m, m, j, j), r(1, 1));
                assert_eq!(c_coeff(m, m, j, m), r(1, 1));
            }
        }
    }

    #[test]
    fn c_vanishes_below_max_dimension() {
        for m in 1..=5 {
            for i in 0..=m {
                for j in 0..=m {
                    for k in 0..i.max(j) {
                        assert!(c_coeff(m, i, j, k).is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        for m in 1..=6 {
            for i in 0..=m {
                for j in 0..=m {
                    let sv: ExactRational = (0..=m).map(|k| v_coeff(m, i, j, k)).sum();
                    let sc: ExactRational = (0..=m).map(|k| c_coeff(m, i, j, k)).sum();
                    assert!(sv.is_one() && sc.is_one(), "m={m} i={i} j={j}");
                    for k in 0..=m + 1 {
                        assert!(v_coeff(m, i, j, k) >= ExactRational::zero());
                        assert!(c_coeff(m, i, j, k) >= ExactRational::zero());
                    }
                }
            }
        }
    }

    #[test]
    fn tables_agree_with_direct_formulas() {
        let t = tables(3).unwrap();
        assert_eq!(t.m(), 3);
        assert_eq!(t.gaussian(1).exact, r(7, 1));
        assert_eq!(t.v(2, 2, 1).exact, v_coeff(3, 2, 2, 1));
        assert_eq!(t.c(1, 2, 3).exact, c_coeff(3, 1, 2, 3));
        assert!((t.v(1, 1, 1).approx - 1.0 / 7.0).abs() < 1e-15);
        assert!(Arc::ptr_eq(&t, &tables(3).unwrap()));
    }

    #[test]
    fn table_dimension_guard() {
        assert_eq!(SubspaceTables::new(0).unwrap_err(), CombinatoricsError::ZeroDimension);
        assert!(matches!(
            SubspaceTables::new(max_dimension() + 1),
            Err(CombinatoricsError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn ratio_identities_hold_exactly() {
        for m in 1..=8 {
            let rep = ratio_identities(m);
            assert!(rep.checked > 0);
            assert!(rep.failures.is_empty(), "m = {m}: {:?}", rep.failures);
        }
    }
}
