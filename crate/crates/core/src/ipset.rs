//! Generator sequences, Følner windows and the multiset of finite sums.
//!
//! A window with index set `Φ` induces `2^|Φ|` subset sums counted with
//! multiplicity (the empty sum 0 included). Enumeration walks a Gray code so
//! each step adds or removes one generator. Sampling draws one fair coin per
//! index, which is exactly uniform over the multiset.

use crate::error::{invalid, Error, Result};
use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::{One, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const DEFAULT_CAP: u64 = 1 << 24;
/// Draws per independently seeded stream; fixes the reduction order of sampled means.
pub const SAMPLE_BLOCK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeneratorSequence {
    /// `n_j = base^(j-1)`.
    Geometric {
        base: u64,
    },
    Explicit {
        terms: Vec<BigUint>,
    },
    /// Output of the divergence-witness constructor for `angle`.
    DivergenceWitness {
        angle: crate::circle::FixedPointAngle,
        terms: Vec<BigUint>,
    },
}

impl GeneratorSequence {
    pub fn geometric(base: u64) -> Result<Self> {
        if base < 2 {
            return invalid("geometric base must be at least 2");
        }
        Ok(Self::Geometric { base })
    }

    pub fn explicit(terms: Vec<BigUint>) -> Result<Self> {
        if terms.iter().any(|t| t.is_zero()) {
            return invalid("generators must be positive");
        }
        Ok(Self::Explicit { terms })
    }

    pub fn explicit_u64(terms: &[u64]) -> Result<Self> {
        Self::explicit(terms.iter().map(|&t| BigUint::from(t)).collect())
    }

    /// Number of available terms; `None` for rules defined at every index.
    pub fn len(&self) -> Option<usize> {
        match self {
            Self::Geometric { .. } => None,
            Self::Explicit { terms } | Self::DivergenceWitness { terms, .. } => Some(terms.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// `n_j` for `j >= 1`.
    pub fn term(&self, j: usize) -> Result<BigUint> {
        if j == 0 {
            return invalid("generator indices start at 1");
        }
        match self {
            Self::Geometric { base } => Ok(num_traits::pow(BigUint::from(*base), j - 1)),
            Self::Explicit { terms } | Self::DivergenceWitness { terms, .. } => {
                terms.get(j - 1).cloned().ok_or(Error::IndexOutOfRange {
                    index: j,
                    len: terms.len(),
                })
            }
        }
    }

    /// `n_j mod q` without forming `n_j` for geometric rules.
    pub fn term_mod(&self, j: usize, q: u64) -> Result<u64> {
        if q == 0 {
            return invalid("modulus must be positive");
        }
        match self {
            Self::Geometric { base } => {
                if j == 0 {
                    return invalid("generator indices start at 1");
                }
                Ok(BigUint::from(*base)
                    .modpow(&BigUint::from(j - 1), &BigUint::from(q))
                    .to_u64()
                    .unwrap_or(0))
            }
            _ => Ok((self.term(j)? % q).to_u64().unwrap_or(0)),
        }
    }
}

/// `a_N = scale * N + offset`; windows `[start, a_N]` for an increasing schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FolnerSchedule {
    Increasing {
        start: usize,
        scale: usize,
        offset: i64,
    },
    /// Arbitrary finite index sets; the Følner property is not checked.
    ExplicitWindows(Vec<Vec<usize>>),
}

impl FolnerSchedule {
    /// `Φ_N = [start, N]`.
    pub fn interval(start: usize) -> Self {
        Self::Increasing {
            start,
            scale: 1,
            offset: 0,
        }
    }

    pub fn increasing(start: usize, scale: usize, offset: i64) -> Result<Self> {
        if start == 0 {
            return invalid("window start index must be at least 1");
        }
        if scale == 0 {
            return invalid("growth a_N = scale*N + offset must be unbounded (scale >= 1)");
        }
        Ok(Self::Increasing { start, scale, offset })
    }

    pub fn is_increasing(&self) -> bool {
        matches!(self, Self::Increasing { .. })
    }

    pub fn start(&self) -> Option<usize> {
        match self {
            Self::Increasing { start, .. } => Some(*start),
            Self::ExplicitWindows(_) => None,
        }
    }

    pub fn indices(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Self::Increasing { start, scale, offset } => {
                let end = *scale as i64 * n as i64 + offset;
                if end < *start as i64 {
                    return Ok(Vec::new());
                }
                Ok((*start..=end as usize).collect())
            }
            Self::ExplicitWindows(ws) => {
                if n == 0 || n > ws.len() {
                    return Err(Error::IndexOutOfRange {
                        index: n,
                        len: ws.len(),
                    });
                }
                let mut w = ws[n - 1].clone();
                w.sort_unstable();
                w.dedup();
                if w.first() == Some(&0) {
                    return invalid("window indices start at 1");
                }
                Ok(w)
            }
        }
    }
}

/// The generators selected by one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IpWindow {
    indices: Vec<usize>,
    terms: Vec<BigUint>,
}

impl IpWindow {
    pub fn new(gens: &GeneratorSequence, indices: Vec<usize>) -> Result<Self> {
        let terms = indices.iter().map(|&j| gens.term(j)).collect::<Result<Vec<_>>>()?;
        Ok(Self { indices, terms })
    }

    pub fn at(gens: &GeneratorSequence, schedule: &FolnerSchedule, n: usize) -> Result<Self> {
        Self::new(gens, schedule.indices(n)?)
    }

    /// Window over the given generators, indexed `1..=terms.len()`.
    pub fn from_terms(terms: Vec<BigUint>) -> Self {
        Self {
            indices: (1..=terms.len()).collect(),
            terms,
        }
    }

    pub fn from_u64(terms: &[u64]) -> Self {
        Self::from_terms(terms.iter().map(|&t| BigUint::from(t)).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn terms(&self) -> &[BigUint] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn sum_of(&self, mask: &Mask) -> BigUint {
        let mut s = BigUint::zero();
        for (i, t) in self.terms.iter().enumerate() {
            if mask.contains(i) {
                s += t;
            }
        }
        s
    }

    /// Residues `n_j mod q` of the selected generators.
    pub fn residues(&self, q: u64) -> Vec<u64> {
        self.terms.iter().map(|t| (t % q).to_u64().unwrap_or(0)).collect()
    }

    pub fn check_cap(&self, cap: u64) -> Result<()> {
        let k = self.len();
        if k >= 64 || (1u64 << k) > cap {
            return Err(Error::CapExceeded { size_log2: k, cap });
        }
        Ok(())
    }
}

pub fn ip_cardinality(w: &IpWindow) -> BigUint {
    BigUint::one() << w.len()
}

/// Calls `visit(None)` for the empty subset, then `visit(Some((i, added)))`
/// once for every later subset of a reflected Gray code on `k` positions.
pub fn gray_walk(k: usize, mut visit: impl FnMut(Option<(usize, bool)>)) {
    visit(None);
    if k == 0 {
        return;
    }
    let total: u64 = 1u64 << k;
    let mut mask = 0u64;
    for i in 1..total {
        let bit = i.trailing_zeros() as usize;
        mask ^= 1 << bit;
        visit(Some((bit, mask & (1 << bit) != 0)));
    }
}

/// Streams `(sum, mask)` over all `2^|Φ|` subsets in Gray-code order.
pub struct SumEnumerator<'a> {
    terms: &'a [BigUint],
    sum: BigUint,
    mask: u64,
    next: u64,
    total: u64,
}

impl Iterator for SumEnumerator<'_> {
    type Item = (BigUint, u64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        if self.next > 0 {
            let bit = self.next.trailing_zeros() as usize;
            self.mask ^= 1 << bit;
            if self.mask & (1 << bit) != 0 {
                self.sum += &self.terms[bit];
            } else {
                self.sum -= &self.terms[bit];
            }
        }
        self.next += 1;
        Some((self.sum.clone(), self.mask))
    }
}

pub fn enumerate_sums(w: &IpWindow, cap: u64) -> Result<SumEnumerator<'_>> {
    w.check_cap(cap)?;
    Ok(SumEnumerator {
        terms: &w.terms,
        sum: BigUint::zero(),
        mask: 0,
        next: 0,
        total: 1u64 << w.len(),
    })
}

/// A subset of window positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    words: Vec<u64>,
}

impl Mask {
    pub fn contains(&self, i: usize) -> bool {
        self.words.get(i / 64).is_some_and(|w| w >> (i % 64) & 1 == 1)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(|(wi, &w)| (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| wi * 64 + b))
    }
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

/// Masks `[block*SAMPLE_BLOCK, block*SAMPLE_BLOCK + len)` of the draw sequence.
pub fn sample_block(k: usize, seed: u64, block: usize, len: usize) -> Vec<Mask> {
    let mut rng = block_rng(seed, block);
    let nw = k.div_ceil(64);
    (0..len)
        .map(|_| {
            let mut words: Vec<u64> = (0..nw).map(|_| rng.next_u64()).collect();
            if !k.is_multiple_of(64) {
                if let Some(last) = words.last_mut() {
                    *last &= (1u64 << (k % 64)) - 1;
                }
            }
            Mask { words }
        })
        .collect()
}

fn blocks(count: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..count.div_ceil(SAMPLE_BLOCK)).map(move |b| (b, SAMPLE_BLOCK.min(count - b * SAMPLE_BLOCK)))
}

pub fn sample_masks(k: usize, count: usize, seed: u64) -> Vec<Mask> {
    blocks(count)
        .flat_map(|(b, len)| sample_block(k, seed, b, len))
        .collect()
}

pub fn sample_sums(w: &IpWindow, count: usize, seed: u64) -> Vec<BigUint> {
    sample_masks(w.len(), count, seed).iter().map(|m| w.sum_of(m)).collect()
}

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: Complex64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(mean: Complex64) -> Self {
        Self { mean, stderr: 0.0 }
    }
}

/// Running mean and sum of squared deviations; blocks merge in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    n: f64,
    mean: Complex64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: Complex64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += (d.conj() * (x - self.mean)).re;
    }

    pub fn merge(&mut self, o: &Accumulator) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * (o.n / n);
        self.m2 += o.m2 + d.norm_sqr() * self.n * o.n / n;
        self.n = n;
    }

    pub fn estimate(&self) -> Estimate {
        let stderr = if self.n < 2.0 {
            0.0
        } else {
            (self.m2.max(0.0) / (self.n - 1.0) / self.n).sqrt()
        };
        Estimate {
            mean: self.mean,
            stderr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VecEstimate {
    pub mean: Vec<Complex64>,
    pub stderr: Vec<f64>,
}

/// Parallel over seed blocks, merged in block order: identical for any thread count.
pub fn sampled_mean<F>(k: usize, count: usize, seed: u64, f: F) -> Estimate
where
    F: Fn(&Mask) -> Complex64 + Sync,
{
    let parts: Vec<Accumulator> = blocks(count)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(b, len)| {
            let mut acc = Accumulator::default();
            for m in sample_block(k, seed, b, len) {
                acc.push(f(&m));
            }
            acc
        })
        .collect();
    let mut acc = Accumulator::default();
    for p in &parts {
        acc.merge(p);
    }
    acc.estimate()
}

pub fn sampled_mean_vec<F>(k: usize, count: usize, seed: u64, dim: usize, f: F) -> VecEstimate
where
    F: Fn(&Mask) -> Vec<Complex64> + Sync,
{
    let parts: Vec<Vec<Accumulator>> = blocks(count)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(b, len)| {
            let mut acc = vec![Accumulator::default(); dim];
            for m in sample_block(k, seed, b, len) {
                for (a, v) in acc.iter_mut().zip(f(&m)) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![Accumulator::default(); dim];
    for p in &parts {
        for (a, b) in acc.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let est: Vec<Estimate> = acc.iter().map(|a| a.estimate()).collect();
    VecEstimate {
        mean: est.iter().map(|e| e.mean).collect(),
        stderr: est.iter().map(|e| e.stderr).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    Exact {
        #[serde(default = "default_cap")]
        cap: u64,
    },
    Sampled {
        count: usize,
        seed: u64,
    },
}

fn default_cap() -> u64 {
    DEFAULT_CAP
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Exact { cap: DEFAULT_CAP }
    }
}

impl Mode {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Exact { .. } => "exact",
            Mode::Sampled { .. } => "sampled",
        }
    }

    /// The same mode with a seed derived from `(seed, n)`, for per-window runs.
    pub fn for_window(&self, n: usize) -> Self {
        match *self {
            Mode::Sampled { count, seed } => Mode::Sampled {
                count,
                seed: seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            },
            m => m,
        }
    }
}

pub fn ip_average<F>(w: &IpWindow, f: F, mode: Mode) -> Result<VecEstimate>
where
    F: Fn(&BigUint) -> Vec<Complex64> + Sync,
{
    match mode {
        Mode::Exact { cap } => {
            let mut acc: Vec<Complex64> = Vec::new();
            let mut count = 0u64;
            for (s, _) in enumerate_sums(w, cap)? {
                let v = f(&s);
                if acc.is_empty() {
                    acc = vec![Complex64::zero(); v.len()];
                }
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                count += 1;
            }
            let n = count as f64;
            Ok(VecEstimate {
                stderr: vec![0.0; acc.len()],
                mean: acc.into_iter().map(|a| a / n).collect(),
            })
        }
        Mode::Sampled { count, seed } => {
            if count == 0 {
                return invalid("sample count must be positive");
            }
            let dim = f(&BigUint::zero()).len();
            Ok(sampled_mean_vec(w.len(), count, seed, dim, |m| f(&w.sum_of(m))))
        }
    }
}

/// Scalar form of [`ip_average`].
pub fn ip_mean<F>(w: &IpWindow, f: F, mode: Mode) -> Result<Estimate>
where
    F: Fn(&BigUint) -> Complex64 + Sync,
{
    match mode {
        Mode::Exact { cap } => {
            let mut acc = Complex64::zero();
            let mut count = 0u64;
            for (s, _) in enumerate_sums(w, cap)? {
                acc += f(&s);
                count += 1;
            }
            Ok(Estimate::exact(acc / count as f64))
        }
        Mode::Sampled { count, seed } => {
            if count == 0 {
                return invalid("sample count must be positive");
            }
            Ok(sampled_mean(w.len(), count, seed, |m| f(&w.sum_of(m))))
        }
    }
}

/// Law of `n mod m` over the multiset, exact while `|Φ| <= 53`.
pub fn residue_distribution(w: &IpWindow, m: u64) -> Vec<f64> {
    let m_us = m as usize;
    let mut p = vec![0.0; m_us];
    p[0] = 1.0;
    for r in w.residues(m) {
        let r = r as usize;
        if r == 0 {
            continue;
        }
        let mut next = vec![0.0; m_us];
        for (x, &px) in p.iter().enumerate() {
            next[x] += 0.5 * px;
            next[(x + r) % m_us] += 0.5 * px;
        }
        p = next;
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityRow {
    pub n: usize,
    pub window_size: usize,
    pub density: f64,
    pub stderr: f64,
    pub mode: &'static str,
}

/// Per-window densities with tail-half min/max as liminf/limsup proxies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub rows: Vec<DensityRow>,
    pub tail_min: f64,
    pub tail_max: f64,
}

impl DensityReport {
    pub fn from_rows(rows: Vec<DensityRow>) -> Self {
        let tail = &rows[rows.len() / 2..];
        let tail_min = tail.iter().map(|r| r.density).fold(f64::INFINITY, f64::min);
        let tail_max = tail.iter().map(|r| r.density).fold(f64::NEG_INFINITY, f64::max);
        Self {
            rows,
            tail_min,
            tail_max,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,window_size,density,stderr,mode\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.n, r.window_size, r.density, r.stderr, r.mode);
        }
        s
    }
}

/// Bernoulli proportion over the window; exact mode has zero standard error.
pub fn window_fraction<P>(w: &IpWindow, pred: P, mode: Mode) -> Result<(f64, f64)>
where
    P: Fn(&BigUint) -> bool + Sync,
{
    let est = ip_mean(w, |n| Complex64::new(if pred(n) { 1.0 } else { 0.0 }, 0.0), mode)?;
    let p = est.mean.re;
    let stderr = match mode {
        Mode::Exact { .. } => 0.0,
        Mode::Sampled { count, .. } => (p * (1.0 - p) / count as f64).sqrt(),
    };
    Ok((p, stderr))
}

pub fn ip_density<P>(
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    pred: P,
    ns: &[usize],
    mode: Mode,
) -> Result<DensityReport>
where
    P: Fn(&BigUint) -> bool + Sync,
{
    if ns.is_empty() {
        return invalid("empty N range");
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let w = IpWindow::at(gens, schedule, n)?;
        let (density, stderr) = window_fraction(&w, &pred, mode.for_window(n))?;
        rows.push(DensityRow {
            n,
            window_size: w.len(),
            density,
            stderr,
            mode: mode.label(),
        });
    }
    Ok(DensityReport::from_rows(rows))
}
