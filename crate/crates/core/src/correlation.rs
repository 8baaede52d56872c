//! Interval correlations on the circle and on the skew-product torus, Behrend
//! sets, and good-return densities along IP windows.

pub use crate::interval::{interval_correlation, IntervalSet};

use crate::circle::{Angle, FixedPointAngle};
use crate::error::{invalid, Error, Result};
use crate::interval::{cis_phase, TURN};
use crate::ipset::{window_fraction, DensityReport, DensityRow, FolnerSchedule, GeneratorSequence, IpWindow, Mode};
use crate::spectral::rational_spectrum_certificate;
use crate::systems::{binom2, SkewProduct};
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::sync::Mutex;

pub const DEFAULT_FOURIER_CUTOFF: usize = 400;

/// Good-return densities for a circle rotation: the fraction of `n` in each window with
/// `μ(A ∩ (A - ℓ₁nα) ∩ (A - ℓ₂nα)) > μ(A)³ - ε`.
#[allow(clippy::too_many_arguments)]
pub fn rotation_good_set_density(
    a: &IntervalSet,
    alpha: &FixedPointAngle,
    l1: i64,
    l2: i64,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    eps: f64,
    ns: &[usize],
    mode: Mode,
) -> Result<DensityReport> {
    if l1.gcd(&l2) != 1 {
        return invalid(format!("multipliers {l1}, {l2} are not coprime"));
    }
    rational_spectrum_certificate(gens)?;
    alpha.check_irrational()?;
    let threshold = a.measure().powi(3) - eps;
    let (b1, b2) = (BigInt::from(l1), BigInt::from(l2));
    good_fraction_trace(gens, schedule, ns, mode, |n| {
        let n = BigInt::from(n.clone());
        let s1 = alpha.scale(&(&n * &b1)).top_u64();
        let s2 = alpha.scale(&(&n * &b2)).top_u64();
        interval_correlation(a, &[0, s1, s2]) > threshold
    })
}

fn good_fraction_trace<P>(
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    ns: &[usize],
    mode: Mode,
    pred: P,
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

/// `∫∫ Π_i 1_B(y + s_i u + c_i) du dy` over the 2-torus, for integer slopes `s_i`
/// and offsets `c_i` given as phases.
///
/// For fixed `u` the inner integral is an interval correlation, and as a function of
/// `u` it is piecewise linear with breaks where two translated endpoints meet, so the
/// trapezoid rule over the breakpoints is exact up to grid rounding.
pub fn fiber_integral(b: &IntervalSet, terms: &[(i64, u64)]) -> f64 {
    let Some(&(s0, c0)) = terms.first() else {
        return 1.0;
    };
    if b.is_empty() {
        return 0.0;
    }
    let rel: Vec<(i64, u64)> = terms.iter().map(|&(s, c)| (s - s0, c.wrapping_sub(c0))).collect();
    let h = |u: u64| -> f64 {
        let shifts: Vec<u64> = rel
            .iter()
            .map(|&(d, c)| (d as u64).wrapping_mul(u).wrapping_add(c))
            .collect();
        interval_correlation(b, &shifts)
    };
    let slopes: HashSet<i64> = rel.iter().map(|t| t.0).collect();
    if slopes.len() == 1 {
        return h(0);
    }
    let mut ends: Vec<u64> = b
        .pieces()
        .iter()
        .flat_map(|&(l, r)| [(l % TURN) as u64, (r % TURN) as u64])
        .collect();
    ends.sort_unstable();
    ends.dedup();
    let mut diffs: Vec<u64> = Vec::with_capacity(ends.len() * ends.len());
    for &x in &ends {
        for &y in &ends {
            diffs.push(x.wrapping_sub(y));
        }
    }
    diffs.sort_unstable();
    diffs.dedup();
    // endpoint e_a of B - d_i u - c_i meets e_b of B - d_j u - c_j when
    // (d_j - d_i) u = e_b - e_a + c_i - c_j
    let mut pairs: BTreeMap<(u64, u64), ()> = BTreeMap::new();
    for (i, &(di, ci)) in rel.iter().enumerate() {
        for &(dj, cj) in &rel[i + 1..] {
            if di == dj {
                continue;
            }
            let (dd, off) = if dj > di {
                (dj - di, ci.wrapping_sub(cj))
            } else {
                (di - dj, cj.wrapping_sub(ci))
            };
            pairs.insert((dd as u64, off), ());
        }
    }
    let mut breaks: Vec<u64> = vec![0];
    for &(dd, off) in pairs.keys() {
        for &e in &diffs {
            let r = e.wrapping_add(off) as u128;
            for k in 0..dd as u128 {
                let u = (r + k * TURN + dd as u128 / 2) / dd as u128;
                breaks.push((u % TURN) as u64);
            }
        }
    }
    breaks.par_sort_unstable();
    breaks.dedup();
    let values: Vec<f64> = breaks.par_iter().map(|&u| h(u)).collect();
    let scale = 1.0 / TURN as f64;
    let mut total = 0.0;
    for k in 0..breaks.len() {
        let (u0, h0) = (breaks[k] as u128, values[k]);
        let (u1, h1) = if k + 1 < breaks.len() {
            (breaks[k + 1] as u128, values[k + 1])
        } else {
            (breaks[0] as u128 + TURN, values[0])
        };
        total += (u1 - u0) as f64 * scale * 0.5 * (h0 + h1);
    }
    total
}

fn skew_offset(alpha: &Angle, m: &BigInt) -> u64 {
    alpha.scale(&binom2(m)).phase_u64()
}

/// `μ(A ∩ T^{-ℓ₁n}A ∩ ...)` for `A = T × B` under the skew product with angle `α`,
/// where the identity term `ℓ = 0` is implicit: `skew_correlation_direct(B, α, n, &[1, 2])`
/// is the triple correlation.
pub fn skew_correlation_direct(b: &IntervalSet, alpha: &Angle, n: &BigInt, ls: &[i64]) -> f64 {
    let mut all = vec![0];
    all.extend_from_slice(ls);
    product_correlation(b, alpha, n, &all)
}

/// `∫∫ Π_i 1_B(y + ℓ_i n x + C(ℓ_i n, 2) α) dx dy`, via the substitution `u = n x`.
fn product_correlation(b: &IntervalSet, alpha: &Angle, n: &BigInt, ls: &[i64]) -> f64 {
    let terms: Vec<(i64, u64)> = ls
        .iter()
        .map(|&l| {
            let m = n * l;
            (if n.is_zero() { 0 } else { l }, skew_offset(alpha, &m))
        })
        .collect();
    fiber_integral(b, &terms)
}

pub(crate) fn skew_correlation_direct_shifts(b: &IntervalSet, s: &SkewProduct, n: &BigInt, ls: &[i64]) -> f64 {
    product_correlation(b, &Angle::Fixed(s.alpha().clone()), n, ls)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkewFourier {
    pub re: f64,
    pub im: f64,
    /// Bound on the discarded modes `|m| > M/2`.
    pub tail_bound: f64,
}

impl SkewFourier {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Fourier side of the triple correlation: `Σ_{|m| <= M/2} a_m² a_{-2m} e(m n² α)` with
/// `a_m = ∫_B e(-mx) dx`. The tail is bounded with `|a_m| <= K/(π|m|)` for `K` arcs.
pub fn skew_correlation_fourier(b: &IntervalSet, cutoff: usize, alpha: &Angle, n: &BigInt) -> Result<SkewFourier> {
    if n.is_zero() {
        return invalid("the Fourier form needs n != 0");
    }
    let phase = alpha.scale(&(n * n)).phase_u64();
    let (value, tail_bound) = triple_fourier(b, cutoff, phase);
    Ok(SkewFourier {
        re: value.re,
        im: value.im,
        tail_bound,
    })
}

fn triple_fourier(b: &IntervalSet, cutoff: usize, phase: u64) -> (Complex64, f64) {
    let half = (cutoff / 2) as i64;
    let coeff: HashMap<i64, Complex64> = (-2 * half..=2 * half).map(|m| (m, b.fourier_coefficient(m))).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for m in -half..=half {
        let am = coeff[&m];
        acc += am * am * coeff[&(-2 * m)] * cis_phase((m as u64).wrapping_mul(phase));
    }
    let k = b.arc_count() as f64;
    let tail = if half == 0 {
        f64::INFINITY
    } else {
        k.powi(3) / (2.0 * PI.powi(3) * (half as f64).powi(2))
    };
    (acc, tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripleAp {
    /// `∫∫ 1_B(t) 1_B(t+s) 1_B(t+2s) ds dt` by the breakpoint sweep.
    pub sweep: f64,
    /// `Σ_{|m| <= M/2} a_m² a_{-2m}`.
    pub fourier_partial: f64,
    pub tail_bound: f64,
}

pub fn triple_ap_integral(b: &IntervalSet) -> TripleAp {
    triple_ap_integral_with_cutoff(b, DEFAULT_FOURIER_CUTOFF)
}

pub fn triple_ap_integral_with_cutoff(b: &IntervalSet, cutoff: usize) -> TripleAp {
    let sweep = fiber_integral(b, &[(0, 0), (1, 0), (2, 0)]);
    let (f, tail_bound) = triple_fourier(b, cutoff, 0);
    TripleAp {
        sweep,
        fourier_partial: f.re,
        tail_bound,
    }
}

/// Members of `{0, .., L-1}` with no three-term progression.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BehrendSet {
    pub l: u64,
    pub members: Vec<u64>,
    /// Digits range over `0..digits`, written in base `2·digits - 1` so sums never carry.
    pub digits: u64,
    pub base: u64,
    pub dim: u32,
    /// Sum of squared digits of every member, or `None` for the full cube (`digits = 2`).
    pub radius: Option<u64>,
}

/// Digit-sphere construction. Members are kept below `L/2` so no progression wraps
/// modulo `L`; the best (digits, dimension, shell) is chosen by size.
pub fn behrend_build(l: u64) -> Result<BehrendSet> {
    if l < 8 {
        return invalid("Behrend construction needs L >= 8");
    }
    let limit = l.div_ceil(2);
    let mut best: Option<BehrendSet> = None;
    let mut k = 2u64;
    while 2 * k - 1 < limit.max(4) {
        let base = 2 * k - 1;
        let mut dim = 1u32;
        while base.checked_pow(dim - 1).is_some_and(|p| p < limit) {
            let mut shells: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            digit_vectors(k, base, dim, limit, &mut |x, r| {
                shells.entry(if k == 2 { 0 } else { r }).or_default().push(x)
            });
            for (r, members) in shells {
                if best.as_ref().is_none_or(|b| members.len() > b.members.len()) {
                    best = Some(BehrendSet {
                        l,
                        members,
                        digits: k,
                        base,
                        dim,
                        radius: (k != 2).then_some(r),
                    });
                }
            }
            dim += 1;
        }
        k += 1;
    }
    let mut set = best.expect("L >= 8 admits a nonempty shell");
    set.members.sort_unstable();
    debug_assert!(is_ap3_free(&set.members));
    Ok(set)
}

fn digit_vectors(k: u64, base: u64, dim: u32, limit: u64, visit: &mut impl FnMut(u64, u64)) {
    #[allow(clippy::too_many_arguments)]
    fn rec(k: u64, base: u64, left: u32, place: u64, x: u64, r: u64, limit: u64, visit: &mut impl FnMut(u64, u64)) {
        if x >= limit {
            return;
        }
        if left == 0 {
            visit(x, r);
            return;
        }
        for d in 0..k {
            let Some(nx) = place.checked_mul(d).and_then(|v| v.checked_add(x)) else {
                break;
            };
            rec(
                k,
                base,
                left - 1,
                place.saturating_mul(base),
                nx,
                r + d * d,
                limit,
                visit,
            );
        }
    }
    rec(k, base, dim, 1, 0, 0, limit, visit);
}

/// Exhaustive check that no `a < b < c` in `members` has `a + c = 2b`.
pub fn is_ap3_free(members: &[u64]) -> bool {
    let set: HashSet<u64> = members.iter().copied().collect();
    members
        .par_iter()
        .all(|&a| members.iter().all(|&b| b <= a || !set.contains(&(2 * b - a))))
}

/// `∪_{s in S} [s/L, s/L + 1/(4L))`.
pub fn behrend_interval_set(s: &BehrendSet) -> Result<IntervalSet> {
    let l = s.l as i64;
    let pairs: Vec<((i64, u64), (i64, u64))> = s
        .members
        .iter()
        .map(|&m| ((4 * m as i64, 4 * l as u64), (4 * m as i64 + 1, 4 * l as u64)))
        .collect();
    IntervalSet::from_rationals(&pairs)
}

/// Indicator of `E ∩ [0, W)`. A declared period `p` means `E + p = E`, so shifts
/// can be reduced modulo `p` before they are applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerSetWindow {
    bits: Vec<bool>,
    period: Option<u64>,
}

impl IntegerSetWindow {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return invalid("integer window needs W >= 1");
        }
        Ok(Self { bits, period: None })
    }

    pub fn from_fn(len: usize, f: impl Fn(u64) -> bool) -> Result<Self> {
        Self::new((0..len as u64).map(f).collect())
    }

    /// Declares `E` periodic; the window must already agree with the period.
    pub fn with_period(mut self, p: u64) -> Result<Self> {
        let p_us = p as usize;
        if p == 0 || p_us >= self.bits.len() {
            return invalid("period must lie in 1..W");
        }
        if (p_us..self.bits.len()).any(|i| self.bits[i] != self.bits[i - p_us]) {
            return invalid(format!("window is not {p}-periodic"));
        }
        self.period = Some(p);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn period(&self) -> Option<u64> {
        self.period
    }

    pub fn contains(&self, x: usize) -> bool {
        self.bits.get(x).copied().unwrap_or(false)
    }

    /// Largest density of `E` over windows `[s, s + w)` inside `[0, W)`.
    pub fn max_window_density(&self, w: usize) -> Result<f64> {
        max_density(&self.bits, w)
    }
}

fn max_density(bits: &[bool], w: usize) -> Result<f64> {
    if w == 0 || w > bits.len() {
        return Err(Error::WindowTooSmall {
            shift: 0,
            window: w,
            len: bits.len(),
        });
    }
    let mut count = bits[..w].iter().filter(|&&b| b).count();
    let mut best = count;
    for i in w..bits.len() {
        count += bits[i] as usize;
        count -= bits[i - w] as usize;
        best = best.max(count);
    }
    Ok(best as f64 / w as f64)
}

/// Integer good-return densities: the fraction of `n` in each window with
/// `d*(E ∩ (E - ℓ₁n) ∩ (E - ℓ₂n) [∩ (E - ℓ₃n)]) > d*(E)^{3 or 4} - ε`, where `d*`
/// is the largest density over windows of length `w`.
#[allow(clippy::too_many_arguments)]
pub fn integer_good_set_density(
    e: &IntegerSetWindow,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    l1: i64,
    l2: i64,
    l3: Option<i64>,
    eps: f64,
    w: usize,
    ns: &[usize],
    mode: Mode,
) -> Result<DensityReport> {
    if l1.gcd(&l2) != 1 {
        return invalid(format!("multipliers {l1}, {l2} are not coprime"));
    }
    let mut ls = vec![l1, l2];
    ls.extend(l3);
    if ls.iter().any(|&l| l < 1) {
        return invalid("multipliers must be positive");
    }
    if w == 0 || 2 * w > e.len() {
        return invalid("window length must satisfy 1 <= w <= W/2");
    }
    let d = e.max_window_density(w)?;
    let threshold = d.powi(ls.len() as i32 + 1) - eps;
    let cache: Mutex<HashMap<Vec<u64>, std::result::Result<bool, Error>>> = Mutex::new(HashMap::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let report = good_fraction_trace(gens, schedule, ns, mode, |n| {
        let shifts: Vec<u64> = ls
            .iter()
            .map(|&l| {
                let s = n * l as u64;
                match e.period {
                    Some(p) => (s % p).to_u64().expect("below period"),
                    None => s.to_u64().unwrap_or(u64::MAX),
                }
            })
            .collect();
        if let Some(r) = cache.lock().expect("cache lock").get(&shifts) {
            return *r.as_ref().unwrap_or(&false);
        }
        let r = intersection_good(e, &shifts, w, threshold);
        let good = match &r {
            Ok(g) => *g,
            Err(err) => {
                failure.lock().expect("failure lock").get_or_insert_with(|| err.clone());
                false
            }
        };
        cache.lock().expect("cache lock").insert(shifts, r);
        good
    })?;
    if let Some(err) = failure.into_inner().expect("failure lock") {
        return Err(err);
    }
    Ok(report)
}

fn intersection_good(e: &IntegerSetWindow, shifts: &[u64], w: usize, threshold: f64) -> Result<bool> {
    let max_shift = shifts.iter().copied().max().unwrap_or(0);
    let len = e.len() as u64;
    if max_shift >= len || ((len - max_shift) as usize) < w {
        return Err(Error::WindowTooSmall {
            shift: max_shift,
            window: w,
            len: e.len(),
        });
    }
    let keep = (len - max_shift) as usize;
    let bits: Vec<bool> = (0..keep)
        .map(|x| e.bits[x] && shifts.iter().all(|&s| e.bits[x + s as usize]))
        .collect();
    Ok(max_density(&bits, w)? > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipset::enumerate_sums;
    use proptest::prelude::*;

    fn half() -> IntervalSet {
        IntervalSet::from_rationals(&[((0, 1), (1, 2))]).unwrap()
    }

    fn geo10() -> GeneratorSequence {
        GeneratorSequence::geometric(10).unwrap()
    }

    #[test]
    fn full_circle_correlations() {
        let f = IntervalSet::full();
        let a = Angle::Fixed(FixedPointAngle::golden(256));
        assert_eq!(skew_correlation_direct(&f, &a, &BigInt::from(7), &[1, 2]), 1.0);
        let sf = skew_correlation_fourier(&f, 400, &a, &BigInt::from(7)).unwrap();
        assert!((sf.value() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(triple_ap_integral(&f).sweep, 1.0);
    }

    #[test]
    fn triple_ap_of_half_circle() {
        // 1_B(t)1_B(t+s)1_B(t+2s) on [0,1/2): the exact value is 1/8
        let t = triple_ap_integral(&half());
        assert!((t.sweep - 0.125).abs() < 1e-15);
        assert!((t.sweep - t.fourier_partial).abs() <= t.tail_bound);
    }

    #[test]
    fn direct_matches_fourier_rational() {
        let a = Angle::rational(1, 5).unwrap();
        for n in [1i64, 2, 3, 5, 10, -4] {
            let n = BigInt::from(n);
            let d = skew_correlation_direct(&half(), &a, &n, &[1, 2]);
            let f = skew_correlation_fourier(&half(), 400, &a, &n).unwrap();
            assert!((d - f.re).abs() <= f.tail_bound + 1e-12, "n={n}: {d} vs {f:?}");
            assert!(f.im.abs() <= f.tail_bound + 1e-12);
        }
        // n ≡ 0 mod 5 kills the phase, leaving the triple-AP integral
        let d = skew_correlation_direct(&half(), &a, &BigInt::from(5), &[1, 2]);
        assert!((d - 0.125).abs() < 1e-12);
    }

    #[test]
    fn quadruple_is_monotone() {
        let a = Angle::Fixed(FixedPointAngle::sqrt2_minus_1(512));
        let small = IntervalSet::from_turns(&[(0.1, 0.3)]).unwrap();
        let big = small.union(&IntervalSet::from_turns(&[(0.5, 0.7)]).unwrap());
        for n in 1..6i64 {
            let n = BigInt::from(n);
            let s = skew_correlation_direct(&small, &a, &n, &[1, 2, 3]);
            let b = skew_correlation_direct(&big, &a, &n, &[1, 2, 3]);
            assert!((0.0..=small.measure() + 1e-15).contains(&s));
            assert!(s <= b + 1e-15);
        }
    }

    #[test]
    fn fiber_integral_brute_force() {
        let b = IntervalSet::from_turns(&[(0.05, 0.4), (0.6, 0.75)]).unwrap();
        let terms = [(0i64, 0u64), (1, 1 << 61), (3, 12345 << 40)];
        let exact = fiber_integral(&b, &terms);
        let steps = 20000u64;
        let mut acc = 0.0;
        for i in 0..steps {
            let u = ((i as u128 * TURN + TURN / 2) / steps as u128) as u64;
            let shifts: Vec<u64> = terms
                .iter()
                .map(|&(s, c)| (s as u64).wrapping_mul(u).wrapping_add(c))
                .collect();
            acc += interval_correlation(&b, &shifts);
        }
        assert!((exact - acc / steps as f64).abs() < 1e-6);
    }

    #[test]
    fn single_arc_triple_ap_scales_like_square() {
        for delta in [0.1, 0.05] {
            let b = IntervalSet::from_turns(&[(0.0, delta)]).unwrap();
            let t = triple_ap_integral(&b);
            // B ∩ (B - s) ∩ (B - 2s) has length δ - 2|s| for |s| < δ/2
            assert!((t.sweep - delta * delta / 2.0).abs() < 1e-12);
            assert!(t.sweep >= delta * delta / 4.0);
        }
    }

    #[test]
    fn behrend_small() {
        let s = behrend_build(1000).unwrap();
        assert!(s.members.len() >= 30);
        assert!(is_ap3_free(&s.members));
        assert!(s.members.iter().all(|&m| m < 500));
        let b = behrend_interval_set(&s).unwrap();
        assert!((b.measure() - s.members.len() as f64 / 4000.0).abs() < 1e-15);
        assert!(!is_ap3_free(&[1, 4, 7]));
    }

    #[test]
    fn behrend_cells_only_contribute_trivial_progressions() {
        let s = behrend_build(200).unwrap();
        let b = behrend_interval_set(&s).unwrap();
        let t = triple_ap_integral(&b);
        let w = 1.0 / 800.0;
        assert!((t.sweep - s.members.len() as f64 * w * w / 2.0).abs() < 1e-12);
    }

    #[test]
    fn integer_density_examples() {
        let s1 = FolnerSchedule::interval(1);
        let all = IntegerSetWindow::from_fn(2000, |_| true)
            .unwrap()
            .with_period(1)
            .unwrap();
        let r = integer_good_set_density(&all, &geo10(), &s1, 1, 2, None, 0.01, 100, &[8], Mode::exact()).unwrap();
        assert_eq!(r.rows[0].density, 1.0);
        let empty = IntegerSetWindow::from_fn(2000, |_| false)
            .unwrap()
            .with_period(1)
            .unwrap();
        let r = integer_good_set_density(&empty, &geo10(), &s1, 1, 2, None, 0.01, 100, &[8], Mode::exact()).unwrap();
        assert_eq!(r.rows[0].density, 1.0);
        let three = IntegerSetWindow::from_fn(3000, |x| x % 3 == 0)
            .unwrap()
            .with_period(3)
            .unwrap();
        for n in [6usize, 10] {
            let r =
                integer_good_set_density(&three, &geo10(), &s1, 1, 2, None, 0.01, 300, &[n], Mode::exact()).unwrap();
            let w = IpWindow::at(&geo10(), &s1, n).unwrap();
            let zero_mod_3 = enumerate_sums(&w, 1 << 20)
                .unwrap()
                .filter(|(s, _)| (s % 3u32).is_zero())
                .count();
            assert_eq!(r.rows[0].density, zero_mod_3 as f64 / (1u64 << n) as f64);
        }
    }

    #[test]
    fn aperiodic_window_overflow_is_reported() {
        let e = IntegerSetWindow::from_fn(1000, |x| x % 3 == 0).unwrap();
        let err = integer_good_set_density(
            &e,
            &geo10(),
            &FolnerSchedule::interval(1),
            1,
            2,
            None,
            0.01,
            100,
            &[6],
            Mode::exact(),
        );
        assert!(matches!(err, Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn rotation_density_vacuous_threshold() {
        let a = IntervalSet::from_rationals(&[((0, 1), (1, 4))]).unwrap();
        let alpha = FixedPointAngle::sqrt2_minus_1(1024);
        let r = rotation_good_set_density(
            &a,
            &alpha,
            1,
            2,
            &geo10(),
            &FolnerSchedule::interval(1),
            0.02,
            &[6],
            Mode::exact(),
        )
        .unwrap();
        assert_eq!(r.rows[0].density, 1.0);
        let r = rotation_good_set_density(
            &IntervalSet::empty(),
            &alpha,
            1,
            2,
            &geo10(),
            &FolnerSchedule::interval(1),
            0.01,
            &[6],
            Mode::exact(),
        )
        .unwrap();
        assert_eq!(r.rows[0].density, 1.0);
        assert!(rotation_good_set_density(
            &a,
            &alpha,
            2,
            4,
            &geo10(),
            &FolnerSchedule::interval(1),
            0.01,
            &[6],
            Mode::exact()
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn direct_and_fourier_agree(l in 0.0f64..1.0, len in 0.01f64..0.6, n in 1i64..40, seed in any::<u64>()) {
            let b = IntervalSet::from_turns(&[(l, l + len)]).unwrap();
            let alpha = Angle::Fixed(FixedPointAngle::from_frac(BigUint::from(seed) << 448, 512).unwrap());
            let n = BigInt::from(n);
            let d = skew_correlation_direct(&b, &alpha, &n, &[1, 2]);
            let f = skew_correlation_fourier(&b, 400, &alpha, &n).unwrap();
            prop_assert!((d - f.re).abs() <= f.tail_bound + 1e-12);
        }
    }
}
