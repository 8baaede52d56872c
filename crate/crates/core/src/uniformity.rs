//! Van der Corput checks, fixed-input IP seminorms and cubic integrals on
//! rotations, and the inequalities between them.

use crate::circle::Angle;
use crate::error::{invalid, Error, Result};
use crate::ipset::{enumerate_sums, FolnerSchedule, GeneratorSequence, IpWindow, DEFAULT_CAP};
use crate::spectral::{character_average, omega, rational_spectrum_certificate, OmegaValue};
use crate::systems::{multiple_average_l2, Observable, SystemModel, TorusRotation};
use num_bigint::BigUint;
use num_complex::Complex64;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

/// Slack added to every floating-point comparison.
pub const FLOAT_SLACK: f64 = 1e-10;

/// Highest cubic level supported.
pub const MAX_LEVEL: u32 = 3;

/// Largest tensor expansion built by [`cubic_integral`].
const TENSOR_CAP: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64, tol: f64) -> Self {
        Self {
            lhs,
            rhs,
            tol,
            holds: lhs <= rhs + tol,
        }
    }
}

/// `‖E_{n in IP(Φ_N)} x_n‖² <= E_{n in IP(Φ_N \ Φ_M)} ‖E_{m in IP(Φ_M)} x_{n+m}‖²`,
/// both sides by enumeration. `Φ_M` must be contained in `Φ_N`.
pub fn vdc_finite_check<F>(
    xs: F,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    n: usize,
    m: usize,
) -> Result<InequalityCheck>
where
    F: Fn(&BigUint) -> Vec<Complex64>,
{
    if m >= n {
        return invalid("van der Corput check needs M < N");
    }
    let big = schedule.indices(n)?;
    let small = schedule.indices(m)?;
    if !small.iter().all(|j| big.contains(j)) {
        return invalid("window M is not contained in window N");
    }
    let outer: Vec<usize> = big.iter().copied().filter(|j| !small.contains(j)).collect();
    let w_outer = IpWindow::new(gens, outer)?;
    let w_inner = IpWindow::new(gens, small)?;
    IpWindow::new(gens, big)?.check_cap(DEFAULT_CAP)?;
    let inner: Vec<BigUint> = enumerate_sums(&w_inner, DEFAULT_CAP)?.map(|(s, _)| s).collect();
    let mut total: Vec<Complex64> = Vec::new();
    let mut rhs = 0.0;
    let mut count = 0usize;
    for (a, _) in enumerate_sums(&w_outer, DEFAULT_CAP)? {
        let mut local: Vec<Complex64> = Vec::new();
        for b in &inner {
            let v = xs(&(&a + b));
            if local.is_empty() {
                local = vec![Complex64::new(0.0, 0.0); v.len()];
            }
            for (l, x) in local.iter_mut().zip(v) {
                *l += x;
            }
        }
        let scale = 1.0 / inner.len() as f64;
        rhs += local.iter().map(|z| (z * scale).norm_sqr()).sum::<f64>();
        if total.is_empty() {
            total = vec![Complex64::new(0.0, 0.0); local.len()];
        }
        for (t, l) in total.iter_mut().zip(&local) {
            *t += l;
        }
        count += 1;
    }
    let all = (count * inner.len()) as f64;
    let lhs = total.iter().map(|z| (z / all).norm_sqr()).sum::<f64>();
    Ok(InequalityCheck::new(lhs, rhs / count as f64, FLOAT_SLACK))
}

/// Characters of a rotation: `Z/m` modes are reduced mod `m`, torus modes are vectors.
struct FourierModel {
    modulus: Option<u64>,
    torus: TorusRotation,
}

type Coeffs = BTreeMap<Vec<i64>, Complex64>;

impl FourierModel {
    fn of(sys: &SystemModel) -> Result<Self> {
        match sys {
            SystemModel::Finite(r) => Ok(Self {
                modulus: Some(r.modulus()),
                torus: TorusRotation::from_finite(r),
            }),
            SystemModel::Torus(t) => Ok(Self {
                modulus: None,
                torus: t.clone(),
            }),
            SystemModel::Skew(_) => Err(Error::UnsupportedSystem(
                "the skew product has no discrete spectrum".into(),
            )),
        }
    }

    fn dim(&self) -> usize {
        self.torus.dim()
    }

    fn norm(&self, mut v: Vec<i64>) -> Vec<i64> {
        if let Some(m) = self.modulus {
            for x in &mut v {
                *x = x.rem_euclid(m as i64);
            }
        }
        v
    }

    fn add(&self, a: &[i64], b: &[i64], sign: i64) -> Vec<i64> {
        self.norm(a.iter().zip(b).map(|(x, y)| x + sign * y).collect())
    }

    fn zero(&self) -> Vec<i64> {
        vec![0; self.dim()]
    }

    fn coeffs(&self, sys: &SystemModel, f: &Observable) -> Result<Coeffs> {
        match (sys, f) {
            (SystemModel::Finite(r), Observable::Values(v)) if v.len() as u64 == r.modulus() => Ok(r
                .fourier(v)
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c != Complex64::new(0.0, 0.0))
                .map(|(k, c)| (vec![k as i64], c))
                .collect()),
            (SystemModel::Torus(t), Observable::Trig(p)) if p.dim() == t.dim() => {
                Ok(p.terms().map(|(k, c)| (k.clone(), *c)).collect())
            }
            _ => Err(Error::UnsupportedSystem(
                "observable has no exact Fourier data on this system".into(),
            )),
        }
    }

    /// Coefficients of `conj(f)`.
    fn conj(&self, c: &Coeffs) -> Coeffs {
        c.iter()
            .map(|(k, v)| (self.norm(k.iter().map(|x| -x).collect()), v.conj()))
            .collect()
    }

    fn angle(&self, k: &[i64]) -> Result<Angle> {
        self.torus.mode_angle(k)
    }

    fn is_rational(&self, k: &[i64]) -> bool {
        self.torus.mode_is_rational(k)
    }
}

/// `ω` at mode angles, cached, split into the exact part and the truncated remainder.
struct OmegaTable<'a> {
    model: &'a FourierModel,
    gens: &'a GeneratorSequence,
    schedule: &'a FolnerSchedule,
    horizon: usize,
    cache: HashMap<Vec<i64>, OmegaValue>,
}

impl<'a> OmegaTable<'a> {
    fn new(model: &'a FourierModel, gens: &'a GeneratorSequence, schedule: &'a FolnerSchedule, horizon: usize) -> Self {
        Self {
            model,
            gens,
            schedule,
            horizon,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, k: &[i64]) -> Result<&OmegaValue> {
        if !self.cache.contains_key(k) {
            let a = self.model.angle(k)?;
            let v = omega(self.gens, self.schedule, &a, self.horizon)?;
            self.cache.insert(k.to_vec(), v);
        }
        Ok(&self.cache[k])
    }

    /// `(|ω|², |ω|² if exact else 0)`.
    fn sq(&mut self, k: &[i64]) -> Result<(f64, f64)> {
        let w = self.get(k)?;
        let s = w.value().norm_sqr();
        Ok((s, if w.is_exact() { s } else { 0.0 }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormPoint {
    pub n: usize,
    pub value: f64,
}

/// Seminorm with the suprema over sequences and schedules replaced by the given
/// generators and schedule, so `value` bounds the supremum form from below.
/// Fixed-point eigen-angles use `ω` truncated at window `N`; `residual` is the part of
/// `value^{2^k}` carried by those truncated factors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormReport {
    pub level: u32,
    pub value: f64,
    pub window: usize,
    pub exact: bool,
    pub residual: f64,
    pub trace: Vec<SeminormPoint>,
}

/// `(value^{2^k}, exact part)` at horizon `N`.
fn seminorm_power(model: &FourierModel, c: &Coeffs, k: u32, table: &mut OmegaTable) -> Result<(f64, f64)> {
    match k {
        1 => {
            let (mut full, mut exact) = (0.0, 0.0);
            for (kk, ck) in c {
                let (s, e) = table.sq(kk)?;
                full += s * ck.norm_sqr();
                exact += e * ck.norm_sqr();
            }
            Ok((full, exact))
        }
        2 => {
            // Σ_K |ω(K)|² Σ_{k,k'} c_k c̄_{k-K} c̄_{k'} c_{k'-K} |ω(k-k')|²
            let mut by_diff: BTreeMap<Vec<i64>, Vec<(Vec<i64>, Complex64)>> = BTreeMap::new();
            for (a, ca) in c {
                for (b, cb) in c {
                    by_diff
                        .entry(model.add(a, b, -1))
                        .or_default()
                        .push((a.clone(), ca * cb.conj()));
                }
            }
            let (mut full, mut exact) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for (kk, pairs) in &by_diff {
                let (wk, wk_exact) = table.sq(kk)?;
                if wk == 0.0 {
                    continue;
                }
                for (a, va) in pairs {
                    for (b, vb) in pairs {
                        let (wd, wd_exact) = table.sq(&model.add(a, b, -1))?;
                        let term = va * vb.conj();
                        full += term * (wk * wd);
                        exact += term * (wk_exact * wd_exact);
                    }
                }
            }
            Ok((full.re.max(0.0), exact.re.max(0.0)))
        }
        _ => invalid("fixed seminorms are implemented for k = 1, 2"),
    }
}

pub fn fixed_seminorm(
    sys: &SystemModel,
    f: &Observable,
    k: u32,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    n: usize,
) -> Result<SeminormReport> {
    let model = FourierModel::of(sys)?;
    let c = model.coeffs(sys, f)?;
    let root = 1.0 / f64::from(1u32 << k);
    let mut trace = Vec::new();
    let mut last = (0.0, 0.0);
    let first = schedule.start().ok_or(Error::UnsupportedSchedule)?.max(1);
    for horizon in first.min(n)..=n {
        let mut table = OmegaTable::new(&model, gens, schedule, horizon);
        last = seminorm_power(&model, &c, k, &mut table)?;
        trace.push(SeminormPoint {
            n: horizon,
            value: last.0.powf(root),
        });
    }
    let residual = (last.0 - last.1).abs();
    Ok(SeminormReport {
        level: k,
        value: last.0.powf(root),
        window: n,
        exact: residual == 0.0,
        residual,
        trace,
    })
}

/// `∫ ⊗_{ε in {0,1}^k} C^{|ε|} f dμ̃^{[k]}`, with the cubic measure built by joinings
/// relatively independent over the rational Kronecker factor. Bit `k-1` of `ε`
/// separates the two copies joined at the top level.
pub fn cubic_integral(sys: &SystemModel, f: &Observable, k: u32) -> Result<f64> {
    if k == 0 || k > MAX_LEVEL {
        return invalid(format!("cubic level must be in 1..={MAX_LEVEL}"));
    }
    let model = FourierModel::of(sys)?;
    let c = model.coeffs(sys, f)?;
    let cc = model.conj(&c);
    let copies = 1usize << k;
    let half = copies / 2;
    let size = (c.len().max(1) as f64).powi(copies as i32);
    if size > TENSOR_CAP as f64 {
        return Err(Error::CapExceeded {
            size_log2: size.log2().ceil() as usize,
            cap: TENSOR_CAP as u64,
        });
    }
    let factor = |e: usize| if e.count_ones().is_multiple_of(2) { &c } else { &cc };
    let dim = model.dim();
    // rational-filtered halves of the top-level tensor
    let half_map = |offset: usize| -> HashMap<Vec<i64>, Complex64> {
        let mut acc: HashMap<Vec<i64>, Complex64> = HashMap::from([(Vec::new(), Complex64::new(1.0, 0.0))]);
        for e in offset..offset + half {
            let mut next = HashMap::with_capacity(acc.len() * factor(e).len());
            for (key, v) in &acc {
                for (kk, ck) in factor(e) {
                    let mut key2 = key.clone();
                    key2.extend_from_slice(kk);
                    *next.entry(key2).or_insert(Complex64::new(0.0, 0.0)) += v * ck;
                }
            }
            acc = next;
        }
        acc.retain(|key, _| model.is_rational(&sum_blocks(&model, key, dim)));
        acc
    };
    let (lo, hi) = (half_map(0), half_map(half));
    let mut g: HashMap<Vec<i64>, Complex64> = HashMap::new();
    for (a, va) in &lo {
        for (b, vb) in &hi {
            let key = model.add(a, b, 1);
            *g.entry(key).or_insert(Complex64::new(0.0, 0.0)) += va * vb;
        }
    }
    let mut width = half;
    while width > 1 {
        let w2 = width / 2;
        let mut next: HashMap<Vec<i64>, Complex64> = HashMap::new();
        for (key, v) in g {
            let (a, b) = key.split_at(w2 * dim);
            if model.is_rational(&sum_blocks(&model, a, dim)) && model.is_rational(&sum_blocks(&model, b, dim)) {
                *next.entry(model.add(a, b, 1)).or_insert(Complex64::new(0.0, 0.0)) += v;
            }
        }
        g = next;
        width = w2;
    }
    Ok(g.get(&model.zero()).map(|v| v.re).unwrap_or(0.0))
}

fn sum_blocks(model: &FourierModel, key: &[i64], dim: usize) -> Vec<i64> {
    let mut s = vec![0i64; dim];
    for block in key.chunks(dim) {
        for (a, b) in s.iter_mut().zip(block) {
            *a += b;
        }
    }
    model.norm(s)
}

/// `‖f‖^{2^k}` (fixed input) against the cubic integral. The tolerance is the
/// truncation residual of the seminorm plus [`FLOAT_SLACK`].
pub fn measurecontrol_check(
    sys: &SystemModel,
    f: &Observable,
    k: u32,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    n: usize,
) -> Result<InequalityCheck> {
    let rep = fixed_seminorm(sys, f, k, gens, schedule, n)?;
    let lhs = rep.value.powi(1 << k);
    let rhs = cubic_integral(sys, f, k)?;
    Ok(InequalityCheck::new(lhs, rhs, rep.residual + FLOAT_SLACK))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControlCheck {
    /// `‖E_{n in IP(Φ_N)} Π_i T^{ℓ_i n} f_i‖_{L²}`.
    pub avg_norm: f64,
    /// `min_i cubic_integral(f_i, k)^{1/2^k}`.
    pub bound: f64,
    /// `Σ |Π_i c_i| · |A_N(β) - ω(β)|` over frequency tuples, where `β = Σ ℓ_i k_i · α`:
    /// a certified bound on the distance from window `N` to the limit.
    pub tol: f64,
    pub holds: bool,
}

/// Multiple average at window `N` against the cubic-integral bound with `k = |fs|`.
pub fn average_control_check(
    sys: &SystemModel,
    fs: &[Observable],
    ls: &[i64],
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    n: usize,
) -> Result<ControlCheck> {
    rational_spectrum_certificate(gens)?;
    let k = fs.len() as u32;
    if k == 0 || k > MAX_LEVEL {
        return invalid(format!("need between 1 and {MAX_LEVEL} observables"));
    }
    let model = FourierModel::of(sys)?;
    let coeffs: Vec<Coeffs> = fs.iter().map(|f| model.coeffs(sys, f)).collect::<Result<_>>()?;
    let w = IpWindow::at(gens, schedule, n)?;
    let avg_norm = multiple_average_l2(sys, fs, ls, &w)?;
    let mut bound = f64::INFINITY;
    for f in fs {
        bound = bound.min(cubic_integral(sys, f, k)?.max(0.0).powf(1.0 / f64::from(1u32 << k)));
    }
    // tuples grouped by β = Σ ℓ_i k_i (unreduced: the window average needs the integer mode)
    let dim = model.dim();
    let mut by_beta: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    let mut tuples: Vec<(Vec<i64>, f64)> = vec![(vec![0; dim], 1.0)];
    for (c, &l) in coeffs.iter().zip(ls) {
        let mut next = Vec::with_capacity(tuples.len() * c.len());
        for (beta, mag) in &tuples {
            for (kk, ck) in c {
                let b: Vec<i64> = beta.iter().zip(kk).map(|(x, y)| x + l * y).collect();
                next.push((b, mag * ck.norm()));
            }
        }
        tuples = next;
    }
    for (beta, mag) in tuples {
        *by_beta.entry(beta).or_insert(0.0) += mag;
    }
    let mut tol = 0.0;
    for (beta, mag) in by_beta {
        let ang = model.angle(&beta)?;
        let a_n = character_average(&w, &ang).to_complex();
        let limit = match &ang {
            Angle::Rational(_) => omega(gens, schedule, &ang, n)?.value(),
            // irrational angles lie outside a rational spectrum
            Angle::Fixed(_) => Complex64::new(0.0, 0.0),
        };
        tol += mag * (a_n - limit).norm();
    }
    Ok(ControlCheck {
        avg_norm,
        bound,
        tol,
        holds: avg_norm <= bound + tol + FLOAT_SLACK,
    })
}
