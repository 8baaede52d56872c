//! Finite unions of half-open arcs with endpoints on the grid `2^-64` of a turn.
//!
//! Endpoints are integers in `[0, 2^64]`, so translation, intersection and
//! measure are exact integer operations.

use crate::circle::RationalAngle;
use crate::error::{invalid, Result};
use num_complex::Complex64;
use std::f64::consts::TAU;

pub const TURN: u128 = 1 << 64;

/// Turn fraction `p / 2^64` of a phase as a signed float in `[-1/2, 1/2)`.
pub(crate) fn phase_turns_signed(p: u64) -> f64 {
    (p as i64) as f64 * 2f64.powi(-64)
}

pub(crate) fn cis_phase(p: u64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * phase_turns_signed(p))
}

/// Nearest grid point to a rational turn, in `[0, 2^64]`.
pub fn grid_point(r: (i64, u64)) -> Result<u128> {
    let (num, den) = r;
    if den == 0 {
        return invalid("endpoint with zero denominator");
    }
    let scaled = (num as i128) * (TURN as i128);
    let q = scaled.div_euclid(den as i128);
    let rem = scaled.rem_euclid(den as i128);
    let rounded = if 2 * rem >= den as i128 { q + 1 } else { q };
    Ok(rounded as u128)
}

/// Arc `[l, r)` with endpoints given as `(num, den)` turns.
pub type RationalArc = ((i64, u64), (i64, u64));

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct IntervalSet {
    /// Sorted, disjoint, non-adjacent pieces `[l, r)` with `0 <= l < r <= 2^64`.
    arcs: Vec<(u128, u128)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self { arcs: Vec::new() }
    }

    pub fn full() -> Self {
        Self { arcs: vec![(0, TURN)] }
    }

    /// Arc starting at phase `start` with length `len <= 2^64`, wrapping through 0 if needed.
    pub fn arc(start: u64, len: u128) -> Self {
        let mut s = Self::empty();
        s.push_arc(start as u128, len.min(TURN));
        s.normalize();
        s
    }

    fn push_arc(&mut self, start: u128, len: u128) {
        if len == 0 {
            return;
        }
        if len >= TURN {
            self.arcs.push((0, TURN));
            return;
        }
        let end = start + len;
        if end <= TURN {
            self.arcs.push((start, end));
        } else {
            self.arcs.push((start, TURN));
            self.arcs.push((0, end - TURN));
        }
    }

    /// Arcs given as `(l, r)` in turns with `l <= r <= l + 1`; a piece with `r > 1` wraps.
    pub fn from_turns(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut s = Self::empty();
        for &(l, r) in pairs {
            if !(l.is_finite() && r.is_finite()) || r < l || r - l > 1.0 {
                return invalid(format!("bad arc [{l}, {r})"));
            }
            let lf = l.rem_euclid(1.0);
            let start = (lf * TURN as f64).round() as u128;
            let len = ((r - l) * TURN as f64).round() as u128;
            s.push_arc(start % TURN, len);
        }
        s.normalize();
        Ok(s)
    }

    /// Arcs with rational endpoints `[l, r)`, rounded to the nearest grid point.
    pub fn from_rationals(pairs: &[RationalArc]) -> Result<Self> {
        let mut s = Self::empty();
        for &(l, r) in pairs {
            let lg = grid_point(l)? as i128;
            let rg = grid_point(r)? as i128;
            let len = rg - lg;
            if len < 0 || len > TURN as i128 {
                return invalid("rational arc must satisfy l <= r <= l + 1");
            }
            s.push_arc(lg.rem_euclid(TURN as i128) as u128, len as u128);
        }
        s.normalize();
        Ok(s)
    }

    pub fn from_rational_angles(start: RationalAngle, len: (u64, u64)) -> Result<Self> {
        let l = grid_point((start.num() as i64, start.den()))?;
        let len = grid_point((len.0 as i64, len.1))?;
        Ok(Self::arc((l % TURN) as u64, len))
    }

    fn normalize(&mut self) {
        self.arcs.retain(|&(l, r)| l < r);
        self.arcs.sort_unstable();
        let mut out: Vec<(u128, u128)> = Vec::with_capacity(self.arcs.len());
        for &(l, r) in &self.arcs {
            match out.last_mut() {
                Some(last) if l <= last.1 => last.1 = last.1.max(r),
                _ => out.push((l, r)),
            }
        }
        self.arcs = out;
    }

    pub fn pieces(&self) -> &[(u128, u128)] {
        &self.arcs
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.arcs == [(0, TURN)]
    }

    /// Measure in units of `2^-64` turns.
    pub fn measure_units(&self) -> u128 {
        self.arcs.iter().map(|&(l, r)| r - l).sum()
    }

    pub fn measure(&self) -> f64 {
        self.measure_units() as f64 / TURN as f64
    }

    pub fn contains(&self, x: u64) -> bool {
        let x = x as u128;
        let i = self.arcs.partition_point(|&(l, _)| l <= x);
        i > 0 && x < self.arcs[i - 1].1
    }

    /// `{x + s : x in A}`.
    pub fn translate(&self, s: u64) -> Self {
        let mut out = Self::empty();
        for &(l, r) in &self.arcs {
            out.push_arc((l + s as u128) % TURN, r - l);
        }
        out.normalize();
        out
    }

    pub fn complement(&self) -> Self {
        let mut out = Vec::new();
        let mut cur = 0u128;
        for &(l, r) in &self.arcs {
            if l > cur {
                out.push((cur, l));
            }
            cur = r;
        }
        if cur < TURN {
            out.push((cur, TURN));
        }
        Self { arcs: out }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (a, b) = (&self.arcs, &other.arcs);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let l = a[i].0.max(b[j].0);
            let r = a[i].1.min(b[j].1);
            if l < r {
                out.push((l, r));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { arcs: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut s = Self {
            arcs: self.arcs.iter().chain(other.arcs.iter()).copied().collect(),
        };
        s.normalize();
        s
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.intersect(other).measure_units() == self.measure_units()
    }

    /// `a_m = ∫_A e(-m x) dx`, with phases reduced exactly on the grid.
    pub fn fourier_coefficient(&self, m: i64) -> Complex64 {
        if m == 0 {
            return Complex64::new(self.measure(), 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for &(l, r) in &self.arcs {
            let pl = (l as u64).wrapping_mul(m as u64);
            let pr = ((r % TURN) as u64).wrapping_mul(m as u64);
            acc += cis_phase(pl.wrapping_neg()) - cis_phase(pr.wrapping_neg());
        }
        acc / Complex64::new(0.0, TAU * m as f64)
    }

    /// Number of maximal arcs on the circle (pieces joined across 0 count once).
    pub fn arc_count(&self) -> usize {
        let n = self.arcs.len();
        if n >= 2 && self.arcs[0].0 == 0 && self.arcs[n - 1].1 == TURN {
            n - 1
        } else {
            n
        }
    }
}

/// Exact measure of `∩_i (A - s_i)`.
pub fn interval_correlation(a: &IntervalSet, shifts: &[u64]) -> f64 {
    let mut acc = IntervalSet::full();
    for &s in shifts {
        acc = acc.intersect(&a.translate(s.wrapping_neg()));
        if acc.is_empty() {
            break;
        }
    }
    acc.measure()
}
