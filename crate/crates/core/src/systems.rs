//! Finite rotations, torus rotations and the skew product `(x, y) -> (x + α, y + x)`,
//! with single, multiple, weighted and pointwise averages along IP windows.

use crate::circle::{Angle, FixedPointAngle, RationalAngle};
use crate::error::{invalid, Error, Result};
use crate::interval::{cis_phase, IntervalSet};
use crate::ipset::{ip_mean, residue_distribution, Estimate, FolnerSchedule, GeneratorSequence, IpWindow, Mode};
use crate::spectral::{character_average, omega, rational_spectrum_certificate, spectrum_contains};
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::TAU;

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// `x -> x + step` on `Z/m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteRotation {
    m: u64,
    step: u64,
}

impl FiniteRotation {
    pub fn new(m: u64, step: u64) -> Result<Self> {
        if m == 0 {
            return invalid("finite rotation needs m >= 1");
        }
        Ok(Self { m, step: step % m })
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `f̂(k) = (1/m) Σ_x f(x) e(-kx/m)`.
    pub fn fourier(&self, f: &[Complex64]) -> Vec<Complex64> {
        let m = self.m as usize;
        (0..m)
            .map(|k| {
                let mut acc = c0();
                for (x, &fx) in f.iter().enumerate() {
                    let r = ((k * x) % m) as f64 / m as f64;
                    acc += fx * Complex64::from_polar(1.0, -TAU * r);
                }
                acc / m as f64
            })
            .collect()
    }

    /// Eigenvalue of the character `e(kx/m)`.
    pub fn eigen_angle(&self, k: u64) -> RationalAngle {
        RationalAngle::new(((k as u128 * self.step as u128) % self.m as u128) as i64, self.m).expect("m >= 1")
    }

    /// `P_t f`: the part of `f` spanned by characters with eigenvalue `t`.
    pub fn projection(&self, f: &[Complex64], t: &RationalAngle) -> Vec<Complex64> {
        let fh = self.fourier(f);
        let m = self.m as usize;
        (0..m)
            .map(|x| {
                (0..m)
                    .filter(|&k| self.eigen_angle(k as u64) == *t)
                    .map(|k| fh[k] * Complex64::from_polar(1.0, TAU * ((k * x) % m) as f64 / m as f64))
                    .sum()
            })
            .collect()
    }

    fn check(&self, f: &[Complex64]) -> Result<()> {
        if f.len() as u64 != self.m {
            return invalid(format!("observable on Z/{} must have {} values", self.m, self.m));
        }
        Ok(())
    }

    /// `x -> E_{n in IP(Φ)} f(x + n step)`, exact through the law of `n mod m`.
    pub fn window_average(&self, f: &[Complex64], w: &IpWindow) -> Vec<Complex64> {
        let m = self.m as usize;
        let p = residue_distribution(w, self.m);
        (0..m)
            .map(|x| {
                p.iter()
                    .enumerate()
                    .filter(|(_, &pr)| pr != 0.0)
                    .map(|(r, &pr)| f[(x + (r * self.step as usize) % m) % m] * pr)
                    .sum()
            })
            .collect()
    }
}

/// `x -> x + α` on `T^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TorusRotation {
    alpha: Vec<Angle>,
}

impl TorusRotation {
    pub fn new(alpha: Vec<Angle>) -> Result<Self> {
        if alpha.is_empty() {
            return invalid("torus rotation needs d >= 1");
        }
        Ok(Self { alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[Angle] {
        &self.alpha
    }

    /// Eigen-angle `k·α` of the character `e(k·x)`.
    pub fn mode_angle(&self, k: &[i64]) -> Result<Angle> {
        let mut acc = Angle::zero();
        // zero coefficients are skipped so a purely rational mode stays rational
        for (a, &ki) in self.alpha.iter().zip(k).filter(|(_, &ki)| ki != 0) {
            acc = acc.add(&a.scale_i64(ki))?;
        }
        Ok(acc)
    }

    /// Whether `k·α` is a root of unity; fixed-point coordinates count as
    /// rationally independent irrationals.
    pub fn mode_is_rational(&self, k: &[i64]) -> bool {
        self.alpha
            .iter()
            .zip(k)
            .all(|(a, &ki)| ki == 0 || matches!(a, Angle::Rational(_)))
    }

    /// Same system with a finite rotation viewed as rotation by `step/m`.
    pub fn from_finite(f: &FiniteRotation) -> Self {
        Self {
            alpha: vec![Angle::Rational(RationalAngle::new(f.step as i64, f.m).expect("m >= 1"))],
        }
    }
}

/// `T(x, y) = (x + α, y + x)` on `T^2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkewProduct {
    alpha: FixedPointAngle,
}

pub fn binom2(n: &BigInt) -> BigInt {
    n * (n - 1) / 2
}

impl SkewProduct {
    pub fn new(alpha: FixedPointAngle) -> Self {
        Self { alpha }
    }

    pub fn alpha(&self) -> &FixedPointAngle {
        &self.alpha
    }

    pub fn step(&self, p: &(FixedPointAngle, FixedPointAngle)) -> (FixedPointAngle, FixedPointAngle) {
        let b = self.alpha.bits();
        let (x, y) = (p.0.with_bits(b), p.1.with_bits(b));
        (x.add(&self.alpha), y.add(&x))
    }

    /// `T^n(x, y) = (x + nα, y + n x + C(n,2) α)`, exact at the precision of `α`.
    pub fn iterate(&self, p: &(FixedPointAngle, FixedPointAngle), n: &BigInt) -> (FixedPointAngle, FixedPointAngle) {
        let b = self.alpha.bits();
        let (x, y) = (p.0.with_bits(b), p.1.with_bits(b));
        let nx = x.add(&self.alpha.scale(n));
        let ny = y.add(&x.scale(n)).add(&self.alpha.scale(&binom2(n)));
        (nx, ny)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SystemModel {
    Finite(FiniteRotation),
    Torus(TorusRotation),
    Skew(SkewProduct),
}

/// Finite Fourier series `Σ c_k e(k·x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPolynomial {
    dim: usize,
    coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl TrigPolynomial {
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        let mut coeffs: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (k, c) in terms {
            if k.len() != dim {
                return invalid(format!("frequency {k:?} does not have dimension {dim}"));
            }
            *coeffs.entry(k).or_insert_with(c0) += c;
        }
        coeffs.retain(|_, c| *c != c0());
        Ok(Self { dim, coeffs })
    }

    pub fn constant(dim: usize, c: Complex64) -> Self {
        Self::new(dim, [(vec![0; dim], c)]).expect("dimension matches")
    }

    /// `e(k x)` in one dimension.
    pub fn character(k: i64) -> Self {
        Self::new(1, [(vec![k], Complex64::new(1.0, 0.0))]).expect("dimension matches")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or_else(c0)
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn conj(&self) -> Self {
        Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .map(|(k, c)| (k.iter().map(|x| -x).collect(), c.conj()))
                .collect(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).sum()
    }

    pub fn l2_norm_sqr(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum()
    }

    /// Value at the point with coordinates `phases[i] / 2^64` turns.
    pub fn eval_phases(&self, phases: &[u64]) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let p = k
                    .iter()
                    .zip(phases)
                    .fold(0u64, |acc, (&ki, &x)| acc.wrapping_add(x.wrapping_mul(ki as u64)));
                c * cis_phase(p)
            })
            .sum()
    }

    pub fn eval(&self, x: &[Angle]) -> Complex64 {
        let ph: Vec<u64> = x.iter().map(|a| a.phase_u64()).collect();
        self.eval_phases(&ph)
    }
}

type Integrand<'a> = Box<dyn Fn(&BigUint) -> Complex64 + Sync + 'a>;

#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// Values on `Z/m`.
    Values(Vec<Complex64>),
    Trig(TrigPolynomial),
    /// Indicator of an arc set: in `x` on a circle rotation, in the fiber `y` on the skew product.
    Indicator(IntervalSet),
}

impl Observable {
    pub fn constant_one(sys: &SystemModel) -> Self {
        match sys {
            SystemModel::Finite(f) => Observable::Values(vec![Complex64::new(1.0, 0.0); f.m as usize]),
            SystemModel::Torus(t) => Observable::Trig(TrigPolynomial::constant(t.dim(), Complex64::new(1.0, 0.0))),
            SystemModel::Skew(_) => Observable::Trig(TrigPolynomial::constant(2, Complex64::new(1.0, 0.0))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Point {
    Residue(u64),
    Torus(Vec<Angle>),
    Skew(FixedPointAngle, FixedPointAngle),
}

/// Pointwise at `x`, or integrated against the invariant measure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evaluation {
    At(Point),
    Mean,
}

fn check_pair(sys: &SystemModel, f: &Observable) -> Result<()> {
    match (sys, f) {
        (SystemModel::Finite(r), Observable::Values(v)) => r.check(v),
        (SystemModel::Torus(t), Observable::Trig(p)) if p.dim() == t.dim() => Ok(()),
        (SystemModel::Torus(t), Observable::Indicator(_)) if t.dim() == 1 => Ok(()),
        (SystemModel::Skew(_), Observable::Trig(p)) if p.dim() == 2 => Ok(()),
        (SystemModel::Skew(_), Observable::Indicator(_)) => Ok(()),
        _ => Err(Error::UnsupportedSystem("observable does not match the system".into())),
    }
}

fn check_point(sys: &SystemModel, x: &Point) -> Result<()> {
    match (sys, x) {
        (SystemModel::Finite(_), Point::Residue(_)) => Ok(()),
        (SystemModel::Torus(t), Point::Torus(v)) if v.len() == t.dim() => Ok(()),
        (SystemModel::Skew(_), Point::Skew(..)) => Ok(()),
        _ => Err(Error::UnsupportedSystem("point does not match the system".into())),
    }
}

/// Phases (top 64 bits) of `T^n x`.
fn orbit_phases(sys: &SystemModel, x: &Point, n: &BigInt) -> Vec<u64> {
    match (sys, x) {
        (SystemModel::Finite(r), Point::Residue(x0)) => {
            let m = BigInt::from(r.m);
            let v = (BigInt::from(*x0) + n * r.step).mod_floor(&m);
            vec![v.to_u64().unwrap_or(0)]
        }
        (SystemModel::Torus(t), Point::Torus(v)) => t
            .alpha
            .iter()
            .zip(v)
            .map(|(a, xi)| xi.add(&a.scale(n)).map(|s| s.phase_u64()).unwrap_or(0))
            .collect(),
        (SystemModel::Skew(s), Point::Skew(px, py)) => {
            let (a, b) = s.iterate(&(px.clone(), py.clone()), n);
            vec![a.top_u64(), b.top_u64()]
        }
        _ => unreachable!("checked by check_point"),
    }
}

fn eval_at_phases(sys: &SystemModel, f: &Observable, ph: &[u64]) -> Complex64 {
    match (sys, f) {
        (SystemModel::Finite(_), Observable::Values(v)) => v[ph[0] as usize],
        (_, Observable::Trig(p)) => p.eval_phases(ph),
        (SystemModel::Torus(_), Observable::Indicator(a)) => indicator(a.contains(ph[0])),
        (SystemModel::Skew(_), Observable::Indicator(b)) => indicator(b.contains(ph[1])),
        _ => unreachable!("checked by check_pair"),
    }
}

fn indicator(b: bool) -> Complex64 {
    Complex64::new(if b { 1.0 } else { 0.0 }, 0.0)
}

/// `E_n f(T^n x)`. Exact mode uses closed forms where they exist: the law of
/// `n mod m` on finite rotations and one product formula per mode for
/// trigonometric polynomials on torus rotations.
pub fn ip_ergodic_average(sys: &SystemModel, f: &Observable, x: &Point, w: &IpWindow, mode: Mode) -> Result<Estimate> {
    multiple_average(sys, std::slice::from_ref(f), &[1], &Evaluation::At(x.clone()), w, mode)
}

/// Validates `fs`/`ℓs` and returns the per-`n` integrand.
fn multiple_integrand<'a>(
    sys: &'a SystemModel,
    fs: &'a [Observable],
    ls: &'a [i64],
    ev: &'a Evaluation,
) -> Result<Integrand<'a>> {
    if fs.is_empty() || fs.len() != ls.len() {
        return invalid("need as many observables as multipliers, at least one");
    }
    let distinct: HashSet<_> = ls.iter().collect();
    if distinct.len() != ls.len() {
        return invalid("multipliers must be distinct");
    }
    for f in fs {
        check_pair(sys, f)?;
    }
    match ev {
        Evaluation::At(x) => {
            check_point(sys, x)?;
            Ok(Box::new(move |n: &BigUint| {
                let n = BigInt::from(n.clone());
                fs.iter()
                    .zip(ls)
                    .map(|(f, &l)| eval_at_phases(sys, f, &orbit_phases(sys, x, &(&n * l))))
                    .product()
            }))
        }
        Evaluation::Mean => mean_integrand(sys, fs, ls),
    }
}

fn mean_integrand<'a>(sys: &'a SystemModel, fs: &'a [Observable], ls: &'a [i64]) -> Result<Integrand<'a>> {
    match sys {
        SystemModel::Finite(r) => Ok(Box::new(move |n: &BigUint| {
            let m = r.m as usize;
            let shifts: Vec<usize> = ls
                .iter()
                .map(|&l| {
                    (BigInt::from(n.clone()) * l * r.step)
                        .mod_floor(&BigInt::from(r.m))
                        .to_usize()
                        .unwrap_or(0)
                })
                .collect();
            let total: Complex64 = (0..m)
                .map(|x| {
                    fs.iter()
                        .zip(&shifts)
                        .map(|(f, &s)| match f {
                            Observable::Values(v) => v[(x + s) % m],
                            _ => unreachable!(),
                        })
                        .product::<Complex64>()
                })
                .sum();
            total / m as f64
        })),
        SystemModel::Torus(t) => {
            if fs.iter().all(|f| matches!(f, Observable::Trig(_))) {
                let polys: Vec<&TrigPolynomial> = fs.iter().map(as_trig).collect();
                let tuples = zero_sum_tuples(&polys);
                let t = t.clone();
                return Ok(Box::new(move |n: &BigUint| {
                    let n = BigInt::from(n.clone());
                    tuples
                        .iter()
                        .map(|(ks, c)| {
                            let mut ang = Angle::zero();
                            for (k, &l) in ks.iter().zip(ls) {
                                let a = t.mode_angle(k).expect("dimension checked").scale(&(&n * l));
                                ang = ang.add(&a).expect("angle sum");
                            }
                            c * ang.to_complex()
                        })
                        .sum()
                }));
            }
            if fs.iter().all(|f| matches!(f, Observable::Indicator(_))) {
                let a = t.alpha[0].clone();
                return Ok(Box::new(move |n: &BigUint| {
                    let n = BigInt::from(n.clone());
                    let mut acc = IntervalSet::full();
                    for (f, &l) in fs.iter().zip(ls) {
                        if let Observable::Indicator(s) = f {
                            acc = acc.intersect(&s.translate(a.scale(&(&n * l)).phase_u64().wrapping_neg()));
                        }
                    }
                    Complex64::new(acc.measure(), 0.0)
                }));
            }
            Err(Error::UnsupportedSystem("mixed observables in mean mode".into()))
        }
        SystemModel::Skew(s) => {
            if fs.iter().all(|f| matches!(f, Observable::Trig(_))) {
                let polys: Vec<&TrigPolynomial> = fs.iter().map(as_trig).collect();
                let s = s.clone();
                return Ok(Box::new(move |n: &BigUint| {
                    skew_trig_mean(&s, &polys, ls, &BigInt::from(n.clone()))
                }));
            }
            if let Some(b) = common_indicator(fs) {
                let s = s.clone();
                return Ok(Box::new(move |n: &BigUint| {
                    let n = BigInt::from(n.clone());
                    let v = crate::correlation::skew_correlation_direct_shifts(b, &s, &n, ls);
                    Complex64::new(v, 0.0)
                }));
            }
            Err(Error::UnsupportedSystem(
                "skew mean mode needs trigonometric observables or one common fiber set".into(),
            ))
        }
    }
}

fn common_indicator(fs: &[Observable]) -> Option<&IntervalSet> {
    let first = match fs.first()? {
        Observable::Indicator(b) => b,
        _ => return None,
    };
    fs.iter()
        .all(|f| matches!(f, Observable::Indicator(b) if b == first))
        .then_some(first)
}

fn as_trig(f: &Observable) -> &TrigPolynomial {
    match f {
        Observable::Trig(p) => p,
        _ => unreachable!("caller checked"),
    }
}

/// Frequency tuples `(k_1..k_r)` over the supports with their coefficient products.
fn all_tuples(polys: &[&TrigPolynomial]) -> Vec<(Vec<Vec<i64>>, Complex64)> {
    let mut out: Vec<(Vec<Vec<i64>>, Complex64)> = vec![(Vec::new(), Complex64::new(1.0, 0.0))];
    for p in polys {
        let mut next = Vec::with_capacity(out.len() * p.support_len());
        for (ks, c) in &out {
            for (k, ck) in p.terms() {
                let mut ks2 = ks.clone();
                ks2.push(k.clone());
                next.push((ks2, c * ck));
            }
        }
        out = next;
    }
    out
}

fn vec_sum(ks: &[Vec<i64>], dim: usize) -> Vec<i64> {
    let mut s = vec![0i64; dim];
    for k in ks {
        for (a, b) in s.iter_mut().zip(k) {
            *a += b;
        }
    }
    s
}

fn weighted_sum(ks: &[Vec<i64>], ls: &[i64], dim: usize) -> Vec<i64> {
    let mut s = vec![0i64; dim];
    for (k, &l) in ks.iter().zip(ls) {
        for (a, b) in s.iter_mut().zip(k) {
            *a += l * b;
        }
    }
    s
}

fn zero_sum_tuples(polys: &[&TrigPolynomial]) -> Vec<(Vec<Vec<i64>>, Complex64)> {
    let dim = polys[0].dim();
    all_tuples(polys)
        .into_iter()
        .filter(|(ks, _)| vec_sum(ks, dim).iter().all(|&v| v == 0))
        .collect()
}

/// `∫∫ Π_i p_i(T^{ℓ_i n}(x, y)) dx dy` in Fourier form.
fn skew_trig_mean(s: &SkewProduct, polys: &[&TrigPolynomial], ls: &[i64], n: &BigInt) -> Complex64 {
    let alpha = Angle::Fixed(s.alpha.clone());
    let mut total = c0();
    for (ks, c) in all_tuples(polys) {
        // frequency of y: Σ k_y; of x: Σ (k_x + ℓ n k_y)
        let ky: i64 = ks.iter().map(|k| k[1]).sum();
        if ky != 0 {
            continue;
        }
        let mut kx = BigInt::zero();
        let mut coef = BigInt::zero();
        for (k, &l) in ks.iter().zip(ls) {
            let ln = n * l;
            kx += BigInt::from(k[0]) + &ln * k[1];
            coef += &ln * k[0] + binom2(&ln) * k[1];
        }
        if kx.is_zero() {
            total += c * alpha.scale(&coef).to_complex();
        }
    }
    total
}

/// `E_{n in IP(Φ)} Π_i f_i(T^{ℓ_i n} x)` or its integral over `x`.
pub fn multiple_average(
    sys: &SystemModel,
    fs: &[Observable],
    ls: &[i64],
    ev: &Evaluation,
    w: &IpWindow,
    mode: Mode,
) -> Result<Estimate> {
    let integrand = multiple_integrand(sys, fs, ls, ev)?;
    if let Mode::Exact { .. } = mode {
        if let Some(v) = closed_form_average(sys, fs, ls, ev, w, None)? {
            return Ok(Estimate::exact(v));
        }
    }
    ip_mean(w, integrand, mode)
}

/// Closed forms on finite rotations and trigonometric torus observables;
/// `weight = Some((r, den))` inserts `1_{r | n} / den`.
fn closed_form_average(
    sys: &SystemModel,
    fs: &[Observable],
    ls: &[i64],
    ev: &Evaluation,
    w: &IpWindow,
    weight: Option<(u64, f64)>,
) -> Result<Option<Complex64>> {
    match sys {
        SystemModel::Finite(r) => {
            let vals: Vec<&Vec<Complex64>> = fs
                .iter()
                .map(|f| match f {
                    Observable::Values(v) => v,
                    _ => unreachable!(),
                })
                .collect();
            let m = r.m;
            let rr = weight.map(|(q, _)| q).unwrap_or(1);
            let big = m.lcm(&rr);
            let p = residue_distribution(w, big);
            let point_value = |x: usize, res: usize| -> Complex64 {
                vals.iter()
                    .zip(ls)
                    .map(|(v, &l)| {
                        let s = (l as i128 * res as i128 * r.step as i128).rem_euclid(m as i128) as usize;
                        v[(x + s) % m as usize]
                    })
                    .product()
            };
            let mut acc = c0();
            for (res, &pr) in p.iter().enumerate() {
                if pr == 0.0 || !(res as u64).is_multiple_of(rr) {
                    continue;
                }
                let v = match ev {
                    Evaluation::At(Point::Residue(x)) => point_value((*x % m) as usize, res),
                    Evaluation::At(_) => unreachable!(),
                    Evaluation::Mean => (0..m as usize).map(|x| point_value(x, res)).sum::<Complex64>() / m as f64,
                };
                acc += v * pr;
            }
            Ok(Some(match weight {
                Some((_, den)) => acc / den,
                None => acc,
            }))
        }
        SystemModel::Torus(t) if fs.iter().all(|f| matches!(f, Observable::Trig(_))) => {
            let polys: Vec<&TrigPolynomial> = fs.iter().map(as_trig).collect();
            let dim = t.dim();
            let tuples = match ev {
                Evaluation::Mean => zero_sum_tuples(&polys),
                Evaluation::At(_) => all_tuples(&polys),
            };
            let mut cache: HashMap<Vec<i64>, Complex64> = HashMap::new();
            let mut acc = c0();
            for (ks, c) in tuples {
                let beta = weighted_sum(&ks, ls, dim);
                let avg = match cache.get(&beta) {
                    Some(v) => *v,
                    None => {
                        let ang = t.mode_angle(&beta)?;
                        let v = match weight {
                            None => character_average(w, &ang).to_complex(),
                            Some((q, den)) => {
                                let mut s = c0();
                                for i in 0..q {
                                    let shifted = ang.add(&Angle::rational(i as i64, q)?)?;
                                    s += character_average(w, &shifted).to_complex();
                                }
                                s / (q as f64 * den)
                            }
                        };
                        cache.insert(beta, v);
                        v
                    }
                };
                let phase = match ev {
                    Evaluation::At(Point::Torus(x)) => {
                        let k = vec_sum(&ks, dim);
                        let mut a = Angle::zero();
                        for (xi, &ki) in x.iter().zip(&k) {
                            a = a.add(&xi.scale_i64(ki))?;
                        }
                        a.to_complex()
                    }
                    _ => Complex64::new(1.0, 0.0),
                };
                acc += c * avg * phase;
            }
            Ok(Some(acc))
        }
        _ => Ok(None),
    }
}

/// `‖E_n Π_i T^{ℓ_i n} f_i‖_{L²}`, exact on finite rotations and trigonometric torus observables.
pub fn multiple_average_l2(sys: &SystemModel, fs: &[Observable], ls: &[i64], w: &IpWindow) -> Result<f64> {
    let _ = multiple_integrand(sys, fs, ls, &Evaluation::Mean)?;
    match sys {
        SystemModel::Finite(r) => {
            let mut s = 0.0;
            for x in 0..r.m {
                let v =
                    closed_form_average(sys, fs, ls, &Evaluation::At(Point::Residue(x)), w, None)?.unwrap_or_default();
                s += v.norm_sqr();
            }
            Ok((s / r.m as f64).sqrt())
        }
        SystemModel::Torus(t) if fs.iter().all(|f| matches!(f, Observable::Trig(_))) => {
            let polys: Vec<&TrigPolynomial> = fs.iter().map(as_trig).collect();
            let dim = t.dim();
            let mut out: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
            let mut cache: HashMap<Vec<i64>, Complex64> = HashMap::new();
            for (ks, c) in all_tuples(&polys) {
                let beta = weighted_sum(&ks, ls, dim);
                let avg = match cache.get(&beta) {
                    Some(v) => *v,
                    None => {
                        let v = character_average(w, &t.mode_angle(&beta)?).to_complex();
                        cache.insert(beta, v);
                        v
                    }
                };
                *out.entry(vec_sum(&ks, dim)).or_insert_with(c0) += c * avg;
            }
            Ok(out.values().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        }
        _ => Err(Error::UnsupportedSystem(
            "L2 norm of averages needs exact Fourier data".into(),
        )),
    }
}

/// `Σ_t ω(t) P_t f` on a finite rotation.
pub fn met_rational_limit(
    sys: &FiniteRotation,
    f: &[Complex64],
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
) -> Result<Vec<Complex64>> {
    sys.check(f)?;
    let m = sys.m as usize;
    let fh = sys.fourier(f);
    let mut omegas: HashMap<RationalAngle, Complex64> = HashMap::new();
    let mut coef = vec![c0(); m];
    for k in 0..m {
        if fh[k] == c0() {
            continue;
        }
        let t = sys.eigen_angle(k as u64);
        let om = match omegas.get(&t) {
            Some(v) => *v,
            None => {
                let v = omega(gens, schedule, &Angle::Rational(t), 1)?.value();
                omegas.insert(t, v);
                v
            }
        };
        coef[k] = om * fh[k];
    }
    Ok((0..m)
        .map(|x| {
            (0..m)
                .map(|k| coef[k] * Complex64::from_polar(1.0, TAU * ((k * x) % m) as f64 / m as f64))
                .sum()
        })
        .collect())
}

/// `|E_{n in IP(Φ_N)} e(n m α)|`.
pub fn equidistribution_defect(
    sys: &TorusRotation,
    m: i64,
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    n: usize,
) -> Result<f64> {
    if sys.dim() != 1 {
        return invalid("equidistribution defect is defined on the circle");
    }
    if !schedule.is_increasing() {
        return Err(Error::UnsupportedSchedule);
    }
    let w = IpWindow::at(gens, schedule, n)?;
    Ok(character_average(&w, &sys.alpha[0].scale_i64(m)).modulus())
}

/// Eigen-angles certified to lie outside the spectrum of a generator sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpectrumClearance {
    cleared: HashSet<Angle>,
    obstructed: Vec<Angle>,
}

impl SpectrumClearance {
    pub fn obstructed(&self) -> &[Angle] {
        &self.obstructed
    }

    pub fn clears(&self, a: &Angle) -> bool {
        a.is_zero() || self.cleared.contains(a)
    }
}

/// Checks every nontrivial eigen-angle `(Σ ℓ_i k_i)·α` of the joint support.
/// Rational angles go through `spectrum_contains`; irrational ones need a
/// rational-spectrum certificate for `gens` and an irrationality check.
pub fn certify_spectrum(
    gens: &GeneratorSequence,
    sys: &TorusRotation,
    fs: &[TrigPolynomial],
    ls: &[i64],
) -> Result<SpectrumClearance> {
    let polys: Vec<&TrigPolynomial> = fs.iter().collect();
    let mut cleared = HashSet::new();
    let mut obstructed = Vec::new();
    for beta in active_betas(sys, &polys, ls)? {
        let ang = sys.mode_angle(&beta)?;
        if ang.is_zero() || cleared.contains(&ang) || obstructed.contains(&ang) {
            continue;
        }
        let ok = match &ang {
            Angle::Rational(r) => !spectrum_contains(gens, r)?.contains,
            Angle::Fixed(f) => rational_spectrum_certificate(gens).is_ok() && f.check_irrational().is_ok(),
        };
        if ok {
            cleared.insert(ang);
        } else {
            obstructed.push(ang);
        }
    }
    Ok(SpectrumClearance { cleared, obstructed })
}

fn active_betas(sys: &TorusRotation, polys: &[&TrigPolynomial], ls: &[i64]) -> Result<Vec<Vec<i64>>> {
    if polys.is_empty() || polys.len() != ls.len() || polys.iter().any(|p| p.dim() != sys.dim()) {
        return invalid("need one polynomial of the system's dimension per multiplier");
    }
    let mut seen = HashSet::new();
    Ok(all_tuples(polys)
        .into_iter()
        .map(|(ks, _)| weighted_sum(&ks, ls, sys.dim()))
        .filter(|b| seen.insert(b.clone()))
        .collect())
}

/// Limit of `E_n Π_i f_i(x + ℓ_i n α)`: the tuples whose eigen-angle is trivial,
/// placed at frequency `Σ k_i`.
pub fn kronecker_limit_formula(
    sys: &TorusRotation,
    fs: &[TrigPolynomial],
    ls: &[i64],
    clearance: &SpectrumClearance,
) -> Result<TrigPolynomial> {
    let polys: Vec<&TrigPolynomial> = fs.iter().collect();
    for beta in active_betas(sys, &polys, ls)? {
        let ang = sys.mode_angle(&beta)?;
        if !clearance.clears(&ang) {
            return Err(Error::SpectrumObstruction(format!(
                "eigen-angle of mode {beta:?} is not certified outside the spectrum"
            )));
        }
    }
    let dim = sys.dim();
    let mut terms = Vec::new();
    for (ks, c) in all_tuples(&polys) {
        if sys.mode_angle(&weighted_sum(&ks, ls, dim))?.is_zero() {
            terms.push((vec_sum(&ks, dim), c));
        }
    }
    TrigPolynomial::new(dim, terms)
}

/// `n -> 1_{r | n} / den` with `den = lim E 1_{r | n} = (1/r) Σ_i ω(ξ_r^i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weight {
    pub r: u64,
    pub denominator: f64,
}

impl Weight {
    pub fn at(&self, n: &BigUint) -> f64 {
        if (n % self.r).is_zero() {
            1.0 / self.denominator
        } else {
            0.0
        }
    }
}

pub fn weight_1r_phi(gens: &GeneratorSequence, schedule: &FolnerSchedule, r: u64) -> Result<Weight> {
    if r == 0 {
        return invalid("r must be at least 1");
    }
    let mut s = c0();
    for i in 0..r {
        s += omega(gens, schedule, &Angle::rational(i as i64, r)?, 1)?.value();
    }
    let denominator = s.re / r as f64;
    if denominator.abs() < 1e-12 {
        return Err(Error::DegenerateWeight(denominator));
    }
    Ok(Weight { r, denominator })
}

/// `E_n w(n) Π_i f_i(T^{ℓ_i n} x)` (or its integral) for a weight from [`weight_1r_phi`].
pub fn weighted_multiple_average(
    sys: &SystemModel,
    fs: &[Observable],
    ls: &[i64],
    weight: &Weight,
    ev: &Evaluation,
    w: &IpWindow,
    mode: Mode,
) -> Result<Estimate> {
    let integrand = multiple_integrand(sys, fs, ls, ev)?;
    if let Mode::Exact { .. } = mode {
        if let Some(v) = closed_form_average(sys, fs, ls, ev, w, Some((weight.r, weight.denominator)))? {
            return Ok(Estimate::exact(v));
        }
    }
    ip_mean(w, |n| integrand(n) * weight.at(n), mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipset::FolnerSchedule;

    fn geo10() -> GeneratorSequence {
        GeneratorSequence::geometric(10).unwrap()
    }

    fn delta0(m: usize) -> Vec<Complex64> {
        let mut v = vec![c0(); m];
        v[0] = Complex64::new(1.0, 0.0);
        v
    }

    #[test]
    fn met_limit_examples() {
        let z3 = FiniteRotation::new(3, 1).unwrap();
        let lim = met_rational_limit(&z3, &delta0(3), &geo10(), &FolnerSchedule::interval(1)).unwrap();
        assert!(lim.iter().all(|v| (v - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-15));
        let c = vec![Complex64::new(0.7, 0.1); 5];
        let z5 = FiniteRotation::new(5, 2).unwrap();
        let lim = met_rational_limit(&z5, &c, &geo10(), &FolnerSchedule::interval(1)).unwrap();
        assert!(lim.iter().all(|v| (v - c[0]).norm() < 1e-15));
        let z4 = FiniteRotation::new(4, 1).unwrap();
        let lim = met_rational_limit(&z4, &delta0(4), &geo10(), &FolnerSchedule::interval(3)).unwrap();
        assert!(lim.iter().zip(delta0(4)).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn projections_sum_to_identity() {
        let r = FiniteRotation::new(6, 2).unwrap();
        let f: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, (i * i) as f64 * 0.1)).collect();
        let mut total = [c0(); 6];
        let mut seen = HashSet::new();
        for k in 0..6 {
            let t = r.eigen_angle(k);
            if seen.insert(t) {
                for (a, b) in total.iter_mut().zip(r.projection(&f, &t)) {
                    *a += b;
                }
            }
        }
        assert!(total.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn skew_iterate_matches_composition() {
        let s = SkewProduct::new(FixedPointAngle::sqrt2_minus_1(256));
        let p = (
            FixedPointAngle::golden(256),
            FixedPointAngle::from_radians(1, 3, 256).unwrap(),
        );
        let mut q = p.clone();
        for n in 1..=10i64 {
            q = s.step(&q);
            assert_eq!(q, s.iterate(&p, &BigInt::from(n)));
        }
        let back = s.iterate(&s.iterate(&p, &BigInt::from(-7)), &BigInt::from(7));
        assert_eq!(back, p);
    }

    #[test]
    fn kronecker_examples() {
        let t = TorusRotation::new(vec![Angle::Fixed(FixedPointAngle::golden(512))]).unwrap();
        let fs = vec![TrigPolynomial::character(2), TrigPolynomial::character(-1)];
        let cl = certify_spectrum(&geo10(), &t, &fs, &[1, 2]).unwrap();
        assert!(cl.obstructed().is_empty());
        let lim = kronecker_limit_formula(&t, &fs, &[1, 2], &cl).unwrap();
        assert_eq!(lim, TrigPolynomial::character(1));
        let c1 = TrigPolynomial::constant(1, Complex64::new(0.5, 0.0));
        let c2 = TrigPolynomial::constant(1, Complex64::new(0.0, 2.0));
        let lim = kronecker_limit_formula(&t, &[c1, c2], &[1, 2], &cl).unwrap();
        assert_eq!(lim, TrigPolynomial::constant(1, Complex64::new(0.0, 1.0)));
        let empty = SpectrumClearance {
            cleared: HashSet::new(),
            obstructed: Vec::new(),
        };
        assert!(matches!(
            kronecker_limit_formula(&t, &fs, &[1, 3], &empty),
            Err(Error::SpectrumObstruction(_))
        ));
    }

    #[test]
    fn rational_eigenvalue_in_spectrum_is_obstructed() {
        let t = TorusRotation::new(vec![Angle::rational(1, 4).unwrap()]).unwrap();
        let fs = vec![TrigPolynomial::character(1)];
        let cl = certify_spectrum(&geo10(), &t, &fs, &[1]).unwrap();
        assert_eq!(cl.obstructed(), &[Angle::rational(1, 4).unwrap()]);
    }

    #[test]
    fn weights() {
        let s1 = FolnerSchedule::interval(1);
        assert_eq!(weight_1r_phi(&geo10(), &s1, 1).unwrap().denominator, 1.0);
        let w3 = weight_1r_phi(&geo10(), &s1, 3).unwrap();
        assert!((w3.denominator - 1.0 / 3.0).abs() < 1e-15);
        assert!((w3.at(&BigUint::from(9u32)) - 3.0).abs() < 1e-12);
        assert_eq!(w3.at(&BigUint::from(10u32)), 0.0);
        let g = GeneratorSequence::explicit_u64(&[6, 12, 18, 24, 30, 36]).unwrap();
        assert!((weight_1r_phi(&g, &s1, 6).unwrap().denominator - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_average_on_z3() {
        let sys = SystemModel::Finite(FiniteRotation::new(3, 1).unwrap());
        let s1 = FolnerSchedule::interval(1);
        let wt = weight_1r_phi(&geo10(), &s1, 3).unwrap();
        let f = vec![Observable::Values(delta0(3))];
        for n in 1..=14 {
            let w = IpWindow::at(&geo10(), &s1, n).unwrap();
            let exact = weighted_multiple_average(
                &sys,
                &f,
                &[1],
                &wt,
                &Evaluation::At(Point::Residue(0)),
                &w,
                Mode::exact(),
            )
            .unwrap();
            let brute = weighted_multiple_average(
                &sys,
                &f,
                &[1],
                &wt,
                &Evaluation::At(Point::Residue(0)),
                &w,
                Mode::Exact { cap: 1 << 20 },
            );
            let brute = brute.unwrap();
            assert_eq!(exact, brute);
            // enumeration oracle: E[1_{3|n} 1_{n ≡ 0}] / (1/3)
            let mut hits = 0u32;
            for (s, _) in crate::ipset::enumerate_sums(&w, 1 << 20).unwrap() {
                if (s % 3u32).is_zero() {
                    hits += 1;
                }
            }
            let oracle = 3.0 * hits as f64 / (1u32 << n) as f64;
            assert!((exact.mean.re - oracle).abs() < 1e-12);
            assert!((exact.mean.re - 1.0).abs() < 2f64.powi(-(n as i32)) * 3.0);
        }
    }

    #[test]
    fn torus_average_factorizes() {
        let a = Angle::Fixed(FixedPointAngle::golden(1024));
        let sys = SystemModel::Torus(TorusRotation::new(vec![a.clone()]).unwrap());
        let x = Angle::Fixed(FixedPointAngle::sqrt2_minus_1(1024));
        let w = IpWindow::at(&geo10(), &FolnerSchedule::interval(1), 12).unwrap();
        let f = Observable::Trig(TrigPolynomial::character(1));
        let exact = ip_ergodic_average(&sys, &f, &Point::Torus(vec![x.clone()]), &w, Mode::exact()).unwrap();
        let expected = x.to_complex() * character_average(&w, &a).to_complex();
        assert!((exact.mean - expected).norm() < 1e-12);
        let sampled = ip_ergodic_average(
            &sys,
            &f,
            &Point::Torus(vec![x]),
            &w,
            Mode::Sampled { count: 20000, seed: 3 },
        )
        .unwrap();
        assert!((sampled.mean - expected).norm() < 5.0 * sampled.stderr + 1e-12);
        let brute = ip_mean(
            &w,
            |n| {
                let ph = orbit_phases(
                    &sys,
                    &Point::Torus(vec![Angle::Fixed(FixedPointAngle::sqrt2_minus_1(1024))]),
                    &BigInt::from(n.clone()),
                );
                cis_phase(ph[0])
            },
            Mode::exact(),
        )
        .unwrap();
        assert!((brute.mean - expected).norm() < 1e-12);
    }

    #[test]
    fn constant_observables_average_to_one() {
        let systems = vec![
            SystemModel::Finite(FiniteRotation::new(5, 2).unwrap()),
            SystemModel::Torus(TorusRotation::new(vec![Angle::Fixed(FixedPointAngle::golden(256))]).unwrap()),
            SystemModel::Skew(SkewProduct::new(FixedPointAngle::golden(256))),
        ];
        let w = IpWindow::at(&geo10(), &FolnerSchedule::interval(1), 8).unwrap();
        for sys in &systems {
            let one = Observable::constant_one(sys);
            let v = multiple_average(sys, &[one.clone(), one], &[1, 2], &Evaluation::Mean, &w, Mode::exact()).unwrap();
            assert!((v.mean - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn skew_character_average_is_bounded() {
        let sys = SystemModel::Skew(SkewProduct::new(FixedPointAngle::golden(1024)));
        let f = Observable::Trig(TrigPolynomial::new(2, [(vec![0, 1], Complex64::new(1.0, 0.0))]).unwrap());
        let p = Point::Skew(FixedPointAngle::zero(1024), FixedPointAngle::zero(1024));
        let w = IpWindow::at(&geo10(), &FolnerSchedule::interval(1), 30).unwrap();
        let v = ip_ergodic_average(&sys, &f, &p, &w, Mode::Sampled { count: 4096, seed: 9 }).unwrap();
        assert!(v.mean.norm() <= 1.0);
    }

    #[test]
    fn skew_trig_mean_matches_pointwise_integral() {
        // ∫∫ e(y) e(-(y + 2n x + C(2n,2)α)) ... only the combination with zero net y-frequency survives
        let s = SkewProduct::new(FixedPointAngle::golden(256));
        let p1 = TrigPolynomial::new(
            2,
            [
                (vec![0, 1], Complex64::new(1.0, 0.0)),
                (vec![3, 0], Complex64::new(0.5, 0.0)),
            ],
        )
        .unwrap();
        let p2 = TrigPolynomial::new(2, [(vec![-2, -1], Complex64::new(1.0, 0.0))]).unwrap();
        let n = BigInt::from(1);
        let v = skew_trig_mean(&s, &[&p1, &p2], &[1, 2], &n);
        // tuple (0,1),(−2,−1): x-frequency 0 + 1·1 + (−2) + 2·(−1)... = 1 − 2 − 2 ≠ 0 → 0
        assert!(v.norm() < 1e-15);
        let p2b = TrigPolynomial::new(2, [(vec![1, -1], Complex64::new(1.0, 0.0))]).unwrap();
        // x-frequency: (0 + 1) + (1 + 2·(−1)) = 0 → coefficient e(α(1·0 + C(1,2)·1 + 2·1 + C(2,2)·(−1))) = e(α)
        let v = skew_trig_mean(&s, &[&p1, &p2b], &[1, 2], &n);
        let expected = Angle::Fixed(s.alpha.clone()).to_complex();
        assert!((v - expected).norm() < 1e-12);
    }
}
