//! Density evolution for uncoupled and spatially coupled ensembles.
//!
//! State lives in CCDF coordinates. `f(y; ε)` is the variable-node update,
//! `g(x)` the check-node update, and one DE iteration is `x ← f(g(x); ε)`.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{tables, CombinatoricsError, SubspaceTables};
use crate::message_algebra::{
    boxdot_slices, boxtimes_slices, channel_entries, tail_differences, tail_sums, CcdfVector,
    MessageError, Ring,
};

/// Environment variable selecting the numeric backend (`f64` or `exact`).
pub const BACKEND_ENV: &str = "SATURATE_NUM_BACKEND";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeError {
    #[error("invalid ensemble: {0}")]
    InvalidParams(String),
    #[error("expected a vector of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("erasure probability {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("unknown numeric backend {0:?}")]
    UnknownBackend(String),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Tables(#[from] CombinatoricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub dv: usize,
    pub dc: usize,
    pub m: usize,
}

impl EnsembleParams {
    pub fn new(dv: usize, dc: usize, m: usize) -> Result<Self, DeError> {
        let p = EnsembleParams { dv, dc, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DeError> {
        if self.dv < 2 || self.dc < 2 {
            return Err(DeError::InvalidParams(format!(
                "degrees must be at least 2 (dv = {}, dc = {})",
                self.dv, self.dc
            )));
        }
        if self.m < 1 {
            return Err(DeError::InvalidParams("m must be at least 1".into()));
        }
        Ok(())
    }

    /// Design rate `1 - dv/dc`, if it lies in (0, 1).
    pub fn rate(&self) -> Option<f64> {
        (self.dc > self.dv).then(|| 1.0 - self.dv as f64 / self.dc as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoupledParams {
    pub base: EnsembleParams,
    #[serde(rename = "L")]
    pub l: usize,
    pub w: usize,
}

impl CoupledParams {
    pub fn new(base: EnsembleParams, l: usize, w: usize) -> Result<Self, DeError> {
        let cp = CoupledParams { base, l, w };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<(), DeError> {
        self.base.validate()?;
        if self.l < 1 || self.w < 1 {
            return Err(DeError::InvalidParams(format!(
                "L and w must be at least 1 (L = {}, w = {})",
                self.l, self.w
            )));
        }
        Ok(())
    }

    /// Number of variable positions, `L + w - 1`.
    pub fn positions(&self) -> usize {
        self.l + self.w - 1
    }
}

/// Iteration controls shared by all DE drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub success_tol: f64,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig { tol: 1e-10, max_iter: 50_000, success_tol: 1e-7 }
    }
}

impl DeConfig {
    fn validate(&self) -> Result<(), DeError> {
        for t in [self.tol, self.success_tol] {
            if !(t > 0.0) {
                return Err(DeError::BadTolerance(t));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_BISECT_TOL: f64 = 1e-5;
pub const DEFAULT_COUPLED_BISECT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    F64,
    /// Each update is evaluated in exact rationals from the f64 input and
    /// rounded once on output.
    Exact,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self, DeError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "f64" | "double" | "float" => Ok(Backend::F64),
            "exact" | "rational" => Ok(Backend::Exact),
            other => Err(DeError::UnknownBackend(other.to_string())),
        }
    }

    pub fn from_env() -> Result<Self, DeError> {
        match std::env::var(BACKEND_ENV) {
            Ok(v) => Backend::parse(&v),
            Err(_) => Ok(Backend::F64),
        }
    }
}

/// `f(y; ε) = H(p∘(ε) ⊡ y∘^{⊡(dv-1)})` over any ring.
pub fn f_generic<R: Ring>(t: &SubspaceTables, dv: usize, y: &[R], eps: &R) -> Vec<R> {
    let yo = tail_differences(y);
    let mut acc = yo.clone();
    for _ in 2..dv {
        acc = boxdot_slices(t, &acc, &yo);
    }
    let ch = channel_entries(t.m(), eps);
    tail_sums(&boxdot_slices(t, &ch, &acc))
}

/// `g(x) = H(x∘^{⊠(dc-1)})` over any ring.
pub fn g_generic<R: Ring>(t: &SubspaceTables, dc: usize, x: &[R]) -> Vec<R> {
    let xo = tail_differences(x);
    let mut acc = xo.clone();
    for _ in 2..dc {
        acc = boxtimes_slices(t, &acc, &xo);
    }
    tail_sums(&acc)
}

#[derive(Debug, Clone, Copy)]
struct Term {
    i: usize,
    j: usize,
    k: usize,
    c: f64,
}

/// Compiled f64 evaluator for one ensemble.
#[derive(Debug, Clone)]
pub struct DeEngine {
    params: EnsembleParams,
    backend: Backend,
    tables: Arc<SubspaceTables>,
    v_terms: Vec<Term>,
    c_terms: Vec<Term>,
}

impl DeEngine {
    pub fn new(params: EnsembleParams) -> Result<Self, DeError> {
        Self::with_backend(params, Backend::F64)
    }

    pub fn with_backend(params: EnsembleParams, backend: Backend) -> Result<Self, DeError> {
        params.validate()?;
        let t = tables(params.m as u32)?;
        let m = params.m;
        let mut v_terms = Vec::new();
        let mut c_terms = Vec::new();
        for k in 0..=m {
            for i in 0..=m {
                for j in 0..=m {
                    let v = t.v(i, j, k);
                    if !v.is_zero() {
                        v_terms.push(Term { i, j, k, c: v.approx });
                    }
                    let c = t.c(i, j, k);
                    if !c.is_zero() {
                        c_terms.push(Term { i, j, k, c: c.approx });
                    }
                }
            }
        }
        Ok(DeEngine { params, backend, tables: t, v_terms, c_terms })
    }

    pub fn params(&self) -> EnsembleParams {
        self.params
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn tables(&self) -> &SubspaceTables {
        &self.tables
    }

    fn combine(terms: &[Term], a: &[f64], b: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in terms {
            out[t.k] += t.c * a[t.i] * b[t.j];
        }
    }

    fn from_probs(p: &[f64], x: &mut [f64]) {
        let mut acc = 0.0;
        for i in (1..p.len()).rev() {
            acc += p[i];
            x[i - 1] = acc.clamp(0.0, 1.0);
        }
    }

    fn to_probs(x: &[f64], p: &mut [f64]) {
        let m = x.len();
        p[0] = (1.0 - x[0]).max(0.0);
        for i in 0..m {
            p[i + 1] = if i + 1 < m { (x[i] - x[i + 1]).max(0.0) } else { x[i].max(0.0) };
        }
    }

    /// Channel distribution `p∘(ε)` in f64.
    pub fn channel(&self, eps: f64) -> Vec<f64> {
        channel_entries(self.params.m, &eps)
    }

    /// `f` into `out`, given the channel distribution and reusable scratch.
    pub fn f_into(&self, y: &[f64], channel: &[f64], out: &mut [f64], s: &mut Scratch) {
        Self::to_probs(y, &mut s.base);
        s.acc.copy_from_slice(&s.base);
        for _ in 2..self.params.dv {
            Self::combine(&self.v_terms, &s.acc, &s.base, &mut s.tmp);
            std::mem::swap(&mut s.acc, &mut s.tmp);
        }
        Self::combine(&self.v_terms, channel, &s.acc, &mut s.tmp);
        Self::from_probs(&s.tmp, out);
    }

    /// `g` into `out` with reusable scratch.
    pub fn g_into(&self, x: &[f64], out: &mut [f64], s: &mut Scratch) {
        Self::to_probs(x, &mut s.base);
        s.acc.copy_from_slice(&s.base);
        for _ in 2..self.params.dc {
            Self::combine(&self.c_terms, &s.acc, &s.base, &mut s.tmp);
            std::mem::swap(&mut s.acc, &mut s.tmp);
        }
        Self::from_probs(&s.acc, out);
    }

    pub fn scratch(&self) -> Scratch {
        Scratch::new(self.params.m)
    }

    /// Raw variable-node update on a CCDF slice of length `m`.
    pub fn f(&self, y: &[f64], eps: f64) -> Vec<f64> {
        if self.backend == Backend::Exact {
            let yr: Vec<BigRational> = y.iter().map(|&v| rat(v)).collect();
            return round(&f_generic(&self.tables, self.params.dv, &yr, &rat(eps)));
        }
        let mut out = vec![0.0; self.params.m];
        self.f_into(y, &self.channel(eps), &mut out, &mut self.scratch());
        out
    }

    /// Raw check-node update on a CCDF slice of length `m`.
    pub fn g(&self, x: &[f64]) -> Vec<f64> {
        if self.backend == Backend::Exact {
            let xr: Vec<BigRational> = x.iter().map(|&v| rat(v)).collect();
            return round(&g_generic(&self.tables, self.params.dc, &xr));
        }
        let mut out = vec![0.0; self.params.m];
        self.g_into(x, &mut out, &mut self.scratch());
        out
    }

    /// One uncoupled DE step `f(g(x); ε)`.
    pub fn step(&self, x: &[f64], eps: f64) -> Vec<f64> {
        self.f(&self.g(x), eps)
    }

    fn check_len(&self, v: &[f64]) -> Result<(), DeError> {
        if v.len() != self.params.m {
            return Err(DeError::DimensionMismatch { expected: self.params.m, actual: v.len() });
        }
        Ok(())
    }

    pub fn f_update(&self, y: &CcdfVector, eps: f64) -> Result<CcdfVector, DeError> {
        self.check_len(y.entries())?;
        check_eps(eps)?;
        Ok(CcdfVector::new(self.f(y.entries(), eps))?)
    }

    pub fn g_update(&self, x: &CcdfVector) -> Result<CcdfVector, DeError> {
        self.check_len(x.entries())?;
        Ok(CcdfVector::new(self.g(x.entries()))?)
    }

    /// Iterates `x ← f(g(x); ε)` from an arbitrary start.
    pub fn iterate_from(&self, x0: Vec<f64>, eps: f64, cfg: &DeConfig) -> Iteration {
        let mut x = x0;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            let next = self.step(&x, eps);
            residual = sup_diff(&next, &x);
            x = next;
            iterations += 1;
            if residual < cfg.tol {
                break;
            }
        }
        Iteration { converged: residual < cfg.tol, x, iterations, residual }
    }

    /// Uncoupled DE from the all-ones vector.
    pub fn fixed_point(&self, eps: f64, cfg: &DeConfig) -> Result<DeReport, DeError> {
        check_eps(eps)?;
        cfg.validate()?;
        let it = self.iterate_from(vec![1.0; self.params.m], eps, cfg);
        let success = sup_norm(&it.x) < cfg.success_tol;
        Ok(DeReport {
            eps,
            fixed_point: FixedPoint::Uncoupled(CcdfVector::new(it.x)?),
            iterations: it.iterations,
            converged: it.converged,
            residual: it.residual,
            success,
        })
    }

    pub fn decodes(&self, eps: f64, cfg: &DeConfig) -> bool {
        // the sequence from all-ones is non-increasing, so dropping below
        // the success level is final
        let mut x = vec![1.0; self.params.m];
        for _ in 0..cfg.max_iter {
            let next = self.step(&x, eps);
            let residual = sup_diff(&next, &x);
            x = next;
            if residual < cfg.tol || sup_norm(&x) < cfg.success_tol {
                break;
            }
        }
        sup_norm(&x) < cfg.success_tol
    }

    pub fn bp_threshold(&self, bisect_tol: f64, cfg: &DeConfig) -> Result<f64, DeError> {
        if !(bisect_tol > 0.0) {
            return Err(DeError::BadTolerance(bisect_tol));
        }
        cfg.validate()?;
        Ok(bisect(0.0, 1.0, bisect_tol, |eps| self.decodes(eps, cfg)))
    }
}

/// Work buffers for the f64 kernels.
#[derive(Debug, Clone)]
pub struct Scratch {
    base: Vec<f64>,
    acc: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(m: usize) -> Self {
        Scratch { base: vec![0.0; m + 1], acc: vec![0.0; m + 1], tmp: vec![0.0; m + 1] }
    }
}

/// Raw outcome of a DE run.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(BigRational::zero)
}

fn round(v: &[BigRational]) -> Vec<f64> {
    v.iter().map(|r| r.to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0)).collect()
}

fn check_eps(eps: f64) -> Result<(), DeError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(DeError::EpsilonOutOfRange(eps));
    }
    Ok(())
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Bisection for the largest `ε` where `ok` holds, assuming `ok` is monotone.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, tol: f64, ok: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed point reached by a DE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixedPoint {
    Uncoupled(CcdfVector),
    Coupled(CoupledState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeReport {
    pub eps: f64,
    #[serde(rename = "fixedPoint")]
    pub fixed_point: FixedPoint,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub success: bool,
}

/// Stack of CCDF rows for positions `1..=L+w-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    #[serde(rename = "X")]
    pub x: Vec<CcdfVector>,
    #[serde(rename = "epsProfile")]
    pub eps_profile: Vec<f64>,
}

/// `L × (L+w-1)` banded averaging matrix with `1/w` on columns `i..i+w-1`.
pub fn coupling_matrix(l: usize, w: usize) -> Vec<Vec<f64>> {
    let n = l + w - 1;
    (0..l)
        .map(|i| (0..n).map(|c| if c >= i && c < i + w { 1.0 / w as f64 } else { 0.0 }).collect())
        .collect()
}

/// `ε` for positions `1..=L`, `0` for the `w - 1` terminating positions.
pub fn eps_profile(cp: &CoupledParams, eps: f64) -> Vec<f64> {
    (0..cp.positions()).map(|i| if i < cp.l { eps } else { 0.0 }).collect()
}

const PAR_MIN_LEN: usize = 16;

/// Compiled coupled recursion `X ← Aᵀ F(A G(X); ε)`.
#[derive(Debug, Clone)]
pub struct CoupledEngine {
    params: CoupledParams,
    engine: DeEngine,
}

impl CoupledEngine {
    pub fn new(params: CoupledParams) -> Result<Self, DeError> {
        Self::with_backend(params, Backend::F64)
    }

    pub fn with_backend(params: CoupledParams, backend: Backend) -> Result<Self, DeError> {
        params.validate()?;
        Ok(CoupledEngine { params, engine: DeEngine::with_backend(params.base, backend)? })
    }

    pub fn params(&self) -> CoupledParams {
        self.params
    }

    pub fn engine(&self) -> &DeEngine {
        &self.engine
    }

    fn g_row(&self, row: &[f64], out: &mut [f64], s: &mut Scratch) {
        if self.engine.backend == Backend::Exact {
            out.copy_from_slice(&self.engine.g(row));
        } else {
            self.engine.g_into(row, out, s);
        }
    }

    fn f_row(&self, row: &[f64], eps: f64, ch: &[f64], out: &mut [f64], s: &mut Scratch) {
        if self.engine.backend == Backend::Exact {
            out.copy_from_slice(&self.engine.f(row, eps));
        } else {
            self.engine.f_into(row, ch, out, s);
        }
    }

    /// One synchronous sweep on row-major buffers; `x` and `next` hold
    /// `L + w - 1` rows, `y` and `fy` hold `L` rows.
    fn step_flat(&self, x: &[f64], eps: f64, ch: &[f64], bufs: &mut Buffers, next: &mut [f64]) {
        let (l, w, m) = (self.params.l, self.params.w, self.params.base.m);
        let inv = 1.0 / w as f64;
        bufs.gx
            .par_chunks_mut(m)
            .zip(x.par_chunks(m))
            .with_min_len(PAR_MIN_LEN)
            .for_each_init(|| self.engine.scratch(), |s, (out, row)| self.g_row(row, out, s));
        for j in 0..l {
            let y = &mut bufs.y[j * m..(j + 1) * m];
            y.iter_mut().for_each(|v| *v = 0.0);
            for i in j..j + w {
                for (a, b) in y.iter_mut().zip(&bufs.gx[i * m..(i + 1) * m]) {
                    *a += b;
                }
            }
            y.iter_mut().for_each(|v| *v = (*v * inv).clamp(0.0, 1.0));
        }
        bufs.fy
            .par_chunks_mut(m)
            .zip(bufs.y.par_chunks(m))
            .with_min_len(PAR_MIN_LEN)
            .for_each_init(|| self.engine.scratch(), |s, (out, row)| self.f_row(row, eps, ch, out, s));
        for i in 0..self.params.positions() {
            let out = &mut next[i * m..(i + 1) * m];
            out.iter_mut().for_each(|v| *v = 0.0);
            for j in i.saturating_sub(w - 1)..=i.min(l - 1) {
                for (a, b) in out.iter_mut().zip(&bufs.fy[j * m..(j + 1) * m]) {
                    *a += b;
                }
            }
            out.iter_mut().for_each(|v| *v = (*v * inv).clamp(0.0, 1.0));
        }
    }

    /// `X ← Aᵀ F(A G(X); ε)` on a stack of rows.
    pub fn step(&self, x: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
        let m = self.params.base.m;
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        let mut next = vec![0.0; flat.len()];
        let mut bufs = Buffers::new(&self.params);
        self.step_flat(&flat, eps, &self.engine.channel(eps), &mut bufs, &mut next);
        next.chunks(m).map(<[f64]>::to_vec).collect()
    }

    /// Runs the recursion from `x0`; stops early once every row is below
    /// `stop_below`, which is exact for runs started from the all-ones state
    /// because those sequences are non-increasing.
    fn run_flat(&self, x0: Vec<f64>, eps: f64, cfg: &DeConfig, stop_below: Option<f64>) -> (Vec<f64>, usize, f64) {
        let mut x = x0;
        let mut next = vec![0.0; x.len()];
        let mut bufs = Buffers::new(&self.params);
        let ch = self.engine.channel(eps);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            self.step_flat(&x, eps, &ch, &mut bufs, &mut next);
            residual = sup_diff(&next, &x);
            std::mem::swap(&mut x, &mut next);
            iterations += 1;
            if residual < cfg.tol || stop_below.is_some_and(|t| sup_norm(&x) < t) {
                break;
            }
        }
        (x, iterations, residual)
    }

    pub fn iterate_from(&self, x0: Vec<Vec<f64>>, eps: f64, cfg: &DeConfig) -> (Vec<Vec<f64>>, usize, f64) {
        let m = self.params.base.m;
        let flat: Vec<f64> = x0.iter().flatten().copied().collect();
        let (x, it, r) = self.run_flat(flat, eps, cfg, None);
        (x.chunks(m).map(<[f64]>::to_vec).collect(), it, r)
    }

    fn all_ones(&self) -> Vec<f64> {
        vec![1.0; self.params.positions() * self.params.base.m]
    }

    pub fn run(&self, eps: f64, cfg: &DeConfig) -> Result<DeReport, DeError> {
        check_eps(eps)?;
        cfg.validate()?;
        let m = self.params.base.m;
        let (x, iterations, residual) = self.run_flat(self.all_ones(), eps, cfg, None);
        let success = sup_norm(&x) < cfg.success_tol;
        let rows = x.chunks(m).map(|r| CcdfVector::new(r.to_vec())).collect::<Result<Vec<_>, _>>()?;
        Ok(DeReport {
            eps,
            fixed_point: FixedPoint::Coupled(CoupledState {
                x: rows,
                eps_profile: eps_profile(&self.params, eps),
            }),
            iterations,
            converged: residual < cfg.tol,
            residual,
            success,
        })
    }

    pub fn decodes(&self, eps: f64, cfg: &DeConfig) -> bool {
        let (x, _, _) = self.run_flat(self.all_ones(), eps, cfg, Some(cfg.success_tol));
        sup_norm(&x) < cfg.success_tol
    }

    pub fn bp_threshold(&self, bisect_tol: f64, cfg: &DeConfig) -> Result<f64, DeError> {
        if !(bisect_tol > 0.0) {
            return Err(DeError::BadTolerance(bisect_tol));
        }
        cfg.validate()?;
        Ok(bisect(0.0, 1.0, bisect_tol, |eps| self.decodes(eps, cfg)))
    }
}

#[derive(Debug)]
struct Buffers {
    gx: Vec<f64>,
    y: Vec<f64>,
    fy: Vec<f64>,
}

impl Buffers {
    fn new(cp: &CoupledParams) -> Self {
        let m = cp.base.m;
        Buffers { gx: vec![0.0; cp.positions() * m], y: vec![0.0; cp.l * m], fy: vec![0.0; cp.l * m] }
    }
}

pub fn f_update(y: &CcdfVector, eps: f64, p: EnsembleParams) -> Result<CcdfVector, DeError> {
    DeEngine::new(p)?.f_update(y, eps)
}

pub fn g_update(x: &CcdfVector, p: EnsembleParams) -> Result<CcdfVector, DeError> {
    DeEngine::new(p)?.g_update(x)
}

pub fn de_fixed_point(p: EnsembleParams, eps: f64, cfg: &DeConfig) -> Result<DeReport, DeError> {
    DeEngine::new(p)?.fixed_point(eps, cfg)
}

pub fn bp_threshold(p: EnsembleParams, bisect_tol: f64, cfg: &DeConfig) -> Result<f64, DeError> {
    DeEngine::new(p)?.bp_threshold(bisect_tol, cfg)
}

pub fn coupled_de(cp: CoupledParams, eps: f64, cfg: &DeConfig) -> Result<DeReport, DeError> {
    CoupledEngine::new(cp)?.run(eps, cfg)
}

pub fn coupled_bp_threshold(cp: CoupledParams, bisect_tol: f64, cfg: &DeConfig) -> Result<f64, DeError> {
    CoupledEngine::new(cp)?.bp_threshold(bisect_tol, cfg)
}

/// Exact rational evaluation of `f`, used by golden identities.
pub fn f_exact(p: EnsembleParams, y: &[BigRational], eps: &BigRational) -> Result<Vec<BigRational>, DeError> {
    p.validate()?;
    if y.len() != p.m {
        return Err(DeError::DimensionMismatch { expected: p.m, actual: y.len() });
    }
    let t = tables(p.m as u32)?;
    Ok(f_generic(&t, p.dv, y, eps))
}

/// Exact rational evaluation of `g`.
pub fn g_exact(p: EnsembleParams, x: &[BigRational]) -> Result<Vec<BigRational>, DeError> {
    p.validate()?;
    if x.len() != p.m {
        return Err(DeError::DimensionMismatch { expected: p.m, actual: x.len() });
    }
    let t = tables(p.m as u32)?;
    Ok(g_generic(&t, p.dc, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens(dv: usize, dc: usize, m: usize) -> EnsembleParams {
        EnsembleParams::new(dv, dc, m).unwrap()
    }

    /// Scalar erasure DE `x ← ε (1 - (1-x)^{dc-1})^{dv-1}` with the same stopping rule.
    fn scalar_decodes(dv: usize, dc: usize, eps: f64, cfg: &DeConfig) -> bool {
        let mut x: f64 = 1.0;
        for _ in 0..cfg.max_iter {
            let next = eps * (1.0 - (1.0 - x).powi(dc as i32 - 1)).powi(dv as i32 - 1);
            let r = (next - x).abs();
            x = next;
            if r < cfg.tol {
                break;
            }
        }
        x < cfg.success_tol
    }

    fn scalar_threshold(dv: usize, dc: usize, tol: f64, cfg: &DeConfig) -> f64 {
        bisect(0.0, 1.0, tol, |e| scalar_decodes(dv, dc, e, cfg))
    }

    fn scalar_coupled_decodes(dv: usize, dc: usize, l: usize, w: usize, eps: f64, cfg: &DeConfig) -> bool {
        let n = l + w - 1;
        let mut x = vec![1.0f64; n];
        for _ in 0..cfg.max_iter {
            let y: Vec<f64> = (0..l)
                .map(|j| (0..w).map(|k| 1.0 - (1.0 - x[j + k]).powi(dc as i32 - 1)).sum::<f64>() / w as f64)
                .collect();
            let next: Vec<f64> = (0..n)
                .map(|i| {
                    (0..w)
                        .filter(|&k| k <= i && i - k < l)
                        .map(|k| eps * y[i - k].powi(dv as i32 - 1))
                        .sum::<f64>()
                        / w as f64
                })
                .collect();
            let r = next.iter().zip(&x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            x = next;
            if r < cfg.tol {
                break;
            }
        }
        x.iter().all(|v| *v < cfg.success_tol)
    }

    #[test]
    fn boundary_values() {
        let e = DeEngine::new(ens(3, 6, 3)).unwrap();
        let y = [0.7, 0.4, 0.1];
        assert_eq!(e.f(&y, 0.0), vec![0.0; 3]);
        assert_eq!(e.f(&[0.0; 3], 0.6), vec![0.0; 3]);
        assert_eq!(e.g(&[0.0; 3]), vec![0.0; 3]);
        assert_eq!(e.g(&[1.0; 3]), vec![1.0; 3]);
    }

    #[test]
    fn binary_reduction_matches_closed_form() {
        let f3 = DeEngine::new(ens(3, 6, 1)).unwrap();
        let mut rng_state = 0x2545f4914f6cdd1du64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let (eps, x) = (next(), next());
            assert!((f3.f(&[x], eps)[0] - eps * x * x).abs() < 1e-12);
            assert!((f3.g(&[x])[0] - (1.0 - (1.0 - x).powi(5))).abs() < 1e-12);
            let closed = eps * (1.0 - (1.0 - x).powi(5)).powi(2);
            assert!((f3.step(&[x], eps)[0] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn uncoupled_fixed_points() {
        let cfg = DeConfig::default();
        let p = ens(3, 6, 1);
        let ok = de_fixed_point(p, 0.40, &cfg).unwrap();
        assert!(ok.success && ok.converged);
        let bad = de_fixed_point(p, 0.45, &cfg).unwrap();
        assert!(!bad.success);
        let one_step = DeConfig { max_iter: 1, ..cfg };
        let zero = de_fixed_point(ens(4, 8, 3), 0.0, &one_step).unwrap();
        assert_eq!(zero.iterations, 1);
        assert!(zero.success);
    }

    #[test]
    fn binary_thresholds_match_scalar_oracle() {
        let cfg = DeConfig::default();
        for (dv, dc) in [(3, 6), (2, 3), (4, 8)] {
            let got = bp_threshold(ens(dv, dc, 1), 1e-5, &cfg).unwrap();
            let want = scalar_threshold(dv, dc, 1e-5, &cfg);
            assert!((got - want).abs() < 2e-5, "({dv},{dc}): {got} vs {want}");
        }
        let t36 = bp_threshold(ens(3, 6, 1), 1e-5, &cfg).unwrap();
        assert!((t36 - 0.4294).abs() < 1e-3);
    }

    #[test]
    fn threshold_worsens_with_m() {
        let cfg = DeConfig::default();
        let t1 = bp_threshold(ens(3, 6, 1), 1e-4, &cfg).unwrap();
        let t8 = bp_threshold(ens(3, 6, 8), 1e-4, &cfg).unwrap();
        assert!(t8 < t1, "{t8} !< {t1}");
    }

    #[test]
    fn coupling_matrix_shape() {
        assert_eq!(coupling_matrix(1, 1), vec![vec![1.0]]);
        assert_eq!(coupling_matrix(2, 2), vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]]);
        for row in coupling_matrix(7, 3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn coupled_matches_matrix_form() {
        let cp = CoupledParams::new(ens(3, 6, 2), 5, 3).unwrap();
        let ce = CoupledEngine::new(cp).unwrap();
        let a = coupling_matrix(5, 3);
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![0.9 - 0.05 * i as f64, 0.5 - 0.03 * i as f64]).collect();
        let eps = 0.47;
        let g: Vec<Vec<f64>> = x.iter().map(|r| ce.engine().g(r)).collect();
        let y: Vec<Vec<f64>> = a
            .iter()
            .map(|row| (0..2).map(|c| row.iter().zip(&g).map(|(w, r)| w * r[c]).sum()).collect())
            .collect();
        let fy: Vec<Vec<f64>> = y.iter().map(|r| ce.engine().f(r, eps)).collect();
        let want: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..2).map(|c| (0..5).map(|j| a[j][i] * fy[j][c]).sum()).collect())
            .collect();
        let got = ce.step(&x, eps);
        for (p, q) in got.iter().zip(&want) {
            for (u, v) in p.iter().zip(q) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coupled_boundary_cases() {
        let cfg = DeConfig::default();
        let cp = CoupledParams::new(ens(3, 6, 2), 10, 3).unwrap();
        let r = coupled_de(cp, 0.0, &cfg).unwrap();
        assert!(r.success);
        match r.fixed_point {
            FixedPoint::Coupled(s) => {
                assert_eq!(s.x.len(), 12);
                assert_eq!(s.eps_profile.iter().filter(|e| **e == 0.0).count(), 12);
                assert!(s.x.iter().all(|row| row.entries().iter().all(|v| *v == 0.0)));
            }
            _ => panic!("expected coupled state"),
        }
    }

    #[test]
    fn single_width_reduces_to_uncoupled() {
        let cfg = DeConfig::default();
        let base = ens(3, 6, 2);
        let ce = CoupledEngine::new(CoupledParams::new(base, 4, 1).unwrap()).unwrap();
        let e = DeEngine::new(base).unwrap();
        for eps in [0.3, 0.42, 0.5] {
            let x = vec![vec![1.0, 1.0]; 4];
            let (xs, _, _) = ce.iterate_from(x, eps, &DeConfig { max_iter: 40, ..cfg });
            let it = e.iterate_from(vec![1.0, 1.0], eps, &DeConfig { max_iter: 40, ..cfg });
            for row in xs {
                assert_eq!(row, it.x);
            }
        }
    }

    #[test]
    fn coupled_binary_matches_scalar_oracle() {
        let cfg = DeConfig::default();
        let cp = CoupledParams::new(ens(3, 6, 1), 50, 3).unwrap();
        let ce = CoupledEngine::new(cp).unwrap();
        for eps in [0.45, 0.47, 0.50] {
            assert_eq!(ce.decodes(eps, &cfg), scalar_coupled_decodes(3, 6, 50, 3, eps, &cfg), "eps {eps}");
        }
        assert!(ce.decodes(0.47, &cfg));
        assert!(!DeEngine::new(ens(3, 6, 1)).unwrap().decodes(0.47, &cfg));
    }

    #[test]
    fn exact_backend_agrees() {
        let p = ens(3, 4, 3);
        let fe = DeEngine::new(p).unwrap();
        let ee = DeEngine::with_backend(p, Backend::Exact).unwrap();
        let x = [0.8, 0.55, 0.2];
        for (a, b) in fe.step(&x, 0.6).iter().zip(ee.step(&x, 0.6)) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(Backend::parse("exact").unwrap(), Backend::Exact);
        assert!(Backend::parse("quad").is_err());
    }

    #[test]
    fn input_validation() {
        assert!(EnsembleParams::new(1, 6, 2).is_err());
        assert!(EnsembleParams::new(3, 6, 0).is_err());
        let e = DeEngine::new(ens(3, 6, 2)).unwrap();
        let y = CcdfVector::new(vec![0.5, 0.2, 0.1]).unwrap();
        assert!(matches!(e.f_update(&y, 0.3), Err(DeError::DimensionMismatch { .. })));
        let y = CcdfVector::new(vec![0.5, 0.2]).unwrap();
        assert!(matches!(e.f_update(&y, 1.3), Err(DeError::EpsilonOutOfRange(_))));
    }

    fn ordered_pair() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
        (1usize..=4).prop_flat_map(|m| {
            (Just(m), prop::collection::vec(0.0f64..1.0, m), prop::collection::vec(0.0f64..1.0, m))
        })
        .prop_map(|(m, a, t)| {
            let mut x = a;
            x.sort_by(|p, q| q.partial_cmp(p).unwrap());
            // y = x + t (1 - x) keeps y ⪰ x; take running minimum to restore monotonicity
            let mut y: Vec<f64> = x.iter().zip(&t).map(|(v, s)| v + s * (1.0 - v)).collect();
            for i in 1..m {
                y[i] = y[i].min(y[i - 1]).max(x[i]);
            }
            (m, x, y)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn updates_are_monotone((m, x, y) in ordered_pair(), eps in 0.0f64..1.0, dv in 2usize..5, dc in 2usize..7) {
            let e = DeEngine::new(ens(dv, dc, m)).unwrap();
            let (fx, fy) = (e.f(&x, eps), e.f(&y, eps));
            let (gx, gy) = (e.g(&x), e.g(&y));
            for i in 0..m {
                prop_assert!(fx[i] <= fy[i] + 1e-12);
                prop_assert!(gx[i] <= gy[i] + 1e-12);
            }
        }

        #[test]
        fn de_sequence_is_non_increasing(m in 1usize..=4, eps in 0.0f64..1.0, dv in 2usize..5, dc in 3usize..8) {
            let e = DeEngine::new(ens(dv, dc, m)).unwrap();
            let mut x = vec![1.0; m];
            for _ in 0..50 {
                let next = e.step(&x, eps);
                for i in 0..m {
                    prop_assert!(next[i] <= x[i] + 1e-12);
                }
                x = next;
            }
        }

        #[test]
        fn f_strictly_increasing_in_eps((m, _x, y) in ordered_pair(), eps in 0.05f64..0.9, dv in 2usize..5) {
            prop_assume!(y.iter().all(|v| *v > 1e-3));
            let e = DeEngine::new(ens(dv, 6, m)).unwrap();
            let h = 1e-4;
            let (lo, hi) = (e.f(&y, eps), e.f(&y, eps + h));
            for i in 0..m {
                prop_assert!(hi[i] > lo[i]);
            }
        }

        #[test]
        fn check_jacobian_is_lower_triangular(m in 2usize..=4, dc in 3usize..7, raw in prop::collection::vec(0.05f64..0.95, 4)) {
            let mut x: Vec<f64> = raw[..m].to_vec();
            x.sort_by(|p, q| q.partial_cmp(p).unwrap());
            for i in 1..m {
                if x[i - 1] - x[i] < 1e-3 {
                    x[i] = x[i - 1] - 1e-3;
                }
            }
            prop_assume!(x[m - 1] > 1e-3);
            let e = DeEngine::new(ens(3, dc, m)).unwrap();
            let h = 1e-6;
            for l in 0..m {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[l] += h;
                dn[l] -= h;
                let (gu, gd) = (e.g(&up), e.g(&dn));
                for k in 0..m {
                    let d = (gu[k] - gd[k]) / (2.0 * h);
                    if l > k {
                        prop_assert!(d.abs() < 1e-6, "G_d[{k}][{l}] = {d}");
                    } else if l == k {
                        prop_assert!(d > 0.0);
                    }
                }
            }
        }
    }
}
