//! Character averages through the product formula, the limit multiplier ω,
//! convergence classification, spectrum membership for rational points, and the
//! divergence-witness constructor.

use crate::circle::{half_sum, logpolar_product, Angle, FixedPointAngle, LogPolar, RationalAngle};
use crate::error::{invalid, Error, Result};
use crate::ipset::{FolnerSchedule, GeneratorSequence, IpWindow};
use num_bigint::BigUint;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;

pub const DEFAULT_WITNESS_BOUND: u64 = 10_000_000;

/// The factors `(1 + α^{n_j})/2` over the window.
pub fn character_factors(w: &IpWindow, alpha: &Angle) -> Vec<LogPolar> {
    w.terms().iter().map(|n| half_sum(&alpha.pow(n))).collect()
}

/// `E_{n in IP(Φ)} α^n` as a product of one factor per generator.
pub fn character_average(w: &IpWindow, alpha: &Angle) -> LogPolar {
    logpolar_product(&character_factors(w, alpha))
}

/// Eventual period of `n_j mod q` from index `start` on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeriodCertificate {
    pub modulus: u64,
    /// First index of the periodic part.
    pub cycle_start: usize,
    pub period: usize,
    pub cycle_residues: Vec<u64>,
}

impl PeriodCertificate {
    pub fn tail_vanishes(&self) -> bool {
        self.cycle_residues.iter().all(|&r| r == 0)
    }
}

/// Geometric rules are followed through their residue map until a state repeats.
/// Finite lists are accepted only when the periodic part is observed for at
/// least two full periods before the list ends.
pub fn detect_period(gens: &GeneratorSequence, q: u64, start: usize) -> Result<PeriodCertificate> {
    if q == 0 || start == 0 {
        return invalid("period detection needs q >= 1 and start >= 1");
    }
    match gens {
        GeneratorSequence::Geometric { base } => {
            let mut seen: HashMap<u64, usize> = HashMap::new();
            let mut r = gens.term_mod(start, q)?;
            let mut j = start;
            let b = base % q;
            let mut trail = Vec::new();
            loop {
                if let Some(&first) = seen.get(&r) {
                    return Ok(PeriodCertificate {
                        modulus: q,
                        cycle_start: first,
                        period: j - first,
                        cycle_residues: trail[first - start..].to_vec(),
                    });
                }
                seen.insert(r, j);
                trail.push(r);
                r = ((r as u128 * b as u128) % q as u128) as u64;
                j += 1;
            }
        }
        _ => {
            let len = gens.len().unwrap_or(0);
            let not_found = Error::PeriodNotFound { modulus: q, terms: len };
            if len < start + 1 {
                return Err(not_found);
            }
            let res: Vec<u64> = (start..=len).map(|j| gens.term_mod(j, q)).collect::<Result<_>>()?;
            let m = res.len();
            for mu in 0..m {
                for lambda in 1..=(m - mu) / 2 {
                    if (mu..m - lambda).all(|i| res[i] == res[i + lambda]) {
                        return Ok(PeriodCertificate {
                            modulus: q,
                            cycle_start: start + mu,
                            period: lambda,
                            cycle_residues: res[mu..mu + lambda].to_vec(),
                        });
                    }
                }
            }
            Err(not_found)
        }
    }
}

/// `ω_Φ(α) = lim_N Π_{j in Φ_N} (1 + α^{n_j})/2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status")]
pub enum OmegaValue {
    /// A nonzero residue recurs forever; those factors have modulus at most `factor_bound < 1`.
    ExactZero {
        certificate: PeriodCertificate,
        factor_bound: f64,
    },
    /// Every factor with `j >= j0` equals one.
    Finite {
        #[serde(serialize_with = "ser_logpolar")]
        value: LogPolar,
        j0: usize,
        certificate: Option<PeriodCertificate>,
    },
    /// Product up to the horizon window; the limit has modulus at most `residual_bound`.
    Truncated {
        #[serde(serialize_with = "ser_logpolar")]
        partial: LogPolar,
        residual_bound: f64,
        horizon: usize,
    },
}

pub(crate) fn ser_logpolar<S: serde::Serializer>(z: &LogPolar, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let c = z.to_complex();
    let mut st = s.serialize_struct("LogPolar", 5)?;
    st.serialize_field("re", &c.re)?;
    st.serialize_field("im", &c.im)?;
    st.serialize_field("modulus", &z.modulus())?;
    st.serialize_field("log_r", &(if z.is_zero() { None } else { Some(z.log_r()) }))?;
    st.serialize_field("arg_unwrapped", &z.arg_unwrapped())?;
    st.end()
}

impl OmegaValue {
    /// Best available value: 0, the finite limit, or the truncated partial product.
    pub fn value(&self) -> Complex64 {
        match self {
            OmegaValue::ExactZero { .. } => Complex64::new(0.0, 0.0),
            OmegaValue::Finite { value, .. } => value.to_complex(),
            OmegaValue::Truncated { partial, .. } => partial.to_complex(),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, OmegaValue::Truncated { .. })
    }

    /// Upper bound on `|ω|`.
    pub fn abs_bound(&self) -> f64 {
        match self {
            OmegaValue::ExactZero { .. } => 0.0,
            OmegaValue::Finite { value, .. } => value.modulus(),
            OmegaValue::Truncated { residual_bound, .. } => *residual_bound,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            OmegaValue::ExactZero { .. } => "ExactZero",
            OmegaValue::Finite { .. } => "Finite",
            OmegaValue::Truncated { .. } => "Truncated",
        }
    }
}

fn increasing_start(schedule: &FolnerSchedule) -> Result<usize> {
    schedule.start().ok_or(Error::UnsupportedSchedule)
}

/// Rational angles are decided exactly; fixed-point angles are truncated at the
/// window `horizon`.
pub fn omega(gens: &GeneratorSequence, schedule: &FolnerSchedule, alpha: &Angle, horizon: usize) -> Result<OmegaValue> {
    let start = increasing_start(schedule)?;
    match alpha {
        Angle::Rational(r) => omega_rational(gens, start, r),
        Angle::Fixed(_) => {
            let w = IpWindow::at(gens, schedule, horizon)?;
            let partial = character_average(&w, alpha);
            Ok(OmegaValue::Truncated {
                residual_bound: partial.modulus(),
                partial,
                horizon,
            })
        }
    }
}

fn omega_rational(gens: &GeneratorSequence, start: usize, r: &RationalAngle) -> Result<OmegaValue> {
    let q = r.den();
    if q == 1 {
        return Ok(OmegaValue::Finite {
            value: LogPolar::ONE,
            j0: start,
            certificate: None,
        });
    }
    let cert = detect_period(gens, q, start)?;
    if !cert.tail_vanishes() {
        return Ok(OmegaValue::ExactZero {
            certificate: cert,
            factor_bound: (PI / q as f64).cos(),
        });
    }
    let factors: Vec<LogPolar> = (start..cert.cycle_start)
        .map(|j| Ok(half_sum(&Angle::Rational(r.pow_u64(gens.term_mod(j, q)?)))))
        .collect::<Result<_>>()?;
    Ok(OmegaValue::Finite {
        value: logpolar_product(&factors),
        j0: cert.cycle_start,
        certificate: Some(cert),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict")]
pub enum ConvergenceVerdict {
    ConvergesToZero,
    ConvergesNonzero {
        limit: Complex64,
    },
    Diverges {
        norm_limit: f64,
        theta_sum: f64,
        harmonic_sum: f64,
        argument_trace: Vec<f64>,
    },
    Inconclusive {
        modulus_trace: Vec<f64>,
        argument_trace: Vec<f64>,
    },
}

impl ConvergenceVerdict {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::ConvergesToZero => "ConvergesToZero",
            Self::ConvergesNonzero { .. } => "ConvergesNonzero",
            Self::Diverges { .. } => "Diverges",
            Self::Inconclusive { .. } => "Inconclusive",
        }
    }
}

pub fn classify_convergence(
    gens: &GeneratorSequence,
    schedule: &FolnerSchedule,
    alpha: &Angle,
    horizon: usize,
) -> Result<ConvergenceVerdict> {
    let om = omega(gens, schedule, alpha, horizon)?;
    match &om {
        OmegaValue::ExactZero { .. } => return Ok(ConvergenceVerdict::ConvergesToZero),
        OmegaValue::Finite { value, .. } => {
            return Ok(if value.is_zero() {
                ConvergenceVerdict::ConvergesToZero
            } else {
                ConvergenceVerdict::ConvergesNonzero {
                    limit: value.to_complex(),
                }
            })
        }
        OmegaValue::Truncated { .. } => {}
    }
    if let (GeneratorSequence::DivergenceWitness { angle, terms }, Angle::Fixed(a)) = (gens, alpha) {
        if angle.with_bits(a.bits()) == *a {
            let w = IpWindow::at(gens, schedule, horizon)?;
            let rep = witness_report_at(a, terms, w.indices());
            if rep.all_in_arc && rep.moduli.iter().all(|&r| r > 0.0) {
                return Ok(ConvergenceVerdict::Diverges {
                    norm_limit: rep.product_r,
                    theta_sum: rep.theta_sum,
                    harmonic_sum: rep.harmonic_sum,
                    argument_trace: rep.theta_partial_sums,
                });
            }
        }
    }
    let mut modulus_trace = Vec::with_capacity(horizon);
    let mut argument_trace = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let z = character_average(&IpWindow::at(gens, schedule, n)?, alpha);
        modulus_trace.push(z.modulus());
        argument_trace.push(z.arg_unwrapped());
    }
    Ok(ConvergenceVerdict::Inconclusive {
        modulus_trace,
        argument_trace,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpectrumDecision {
    pub contains: bool,
    pub certificate: PeriodCertificate,
}

/// `α = p/q` lies in the generating set of the spectrum iff `n_j ≡ 0 (mod q)` for all large `j`.
pub fn spectrum_contains(gens: &GeneratorSequence, alpha: &RationalAngle) -> Result<SpectrumDecision> {
    let q = alpha.den();
    if q == 1 {
        return Ok(SpectrumDecision {
            contains: true,
            certificate: PeriodCertificate {
                modulus: 1,
                cycle_start: 1,
                period: 1,
                cycle_residues: vec![0],
            },
        });
    }
    let certificate = detect_period(gens, q, 1)?;
    Ok(SpectrumDecision {
        contains: certificate.tail_vanishes(),
        certificate,
    })
}

pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut ps = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            ps.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        ps.push(n);
    }
    ps
}

/// The geometric sequence `a^{j-1}` has spectrum generated by `{e(m/q) : rad(q) | a}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RationalSpectrumCertificate {
    pub base: u64,
    pub primes: Vec<u64>,
    pub description: String,
}

impl RationalSpectrumCertificate {
    pub fn contains_den(&self, q: u64) -> bool {
        q >= 1 && prime_factors(q).iter().all(|p| self.primes.contains(p))
    }
}

pub fn rational_spectrum_certificate(gens: &GeneratorSequence) -> Result<RationalSpectrumCertificate> {
    match gens {
        GeneratorSequence::Geometric { base } => {
            let primes = prime_factors(*base);
            let list: Vec<String> = primes.iter().map(|p| p.to_string()).collect();
            Ok(RationalSpectrumCertificate {
                base: *base,
                description: format!("{{e(m/q) : every prime factor of q is in {{{}}}}}", list.join(", ")),
                primes,
            })
        }
        _ => Err(Error::SpectrumObstruction(
            "no rational-spectrum certificate for non-geometric generators".into(),
        )),
    }
}

/// Target interval for `arg α^{n_j}` (radians): `(2/j, min(2/j + 2/j², π))`.
fn witness_arc(j: usize) -> (f64, f64) {
    let jf = j as f64;
    (2.0 / jf, (2.0 / jf + 2.0 / (jf * jf)).min(PI))
}

fn search_witness_term(alpha: &FixedPointAngle, j: usize, bound: u64) -> Result<BigUint> {
    let (lo, hi) = witness_arc(j);
    let step = alpha.top_u128();
    let scale = std::f64::consts::TAU * 2f64.powi(-128);
    let slack = 1e-9;
    let mut phase: u128 = 0;
    for n in 1..=bound {
        phase = phase.wrapping_add(step);
        let arg = (phase as i128) as f64 * scale;
        if arg > lo - slack && arg < hi + slack {
            let nb = BigUint::from(n);
            let phi = 2.0 * half_sum(&Angle::Fixed(alpha.pow(&nb))).arg_unwrapped();
            if phi > lo && phi < hi {
                return Ok(nb);
            }
        }
    }
    Err(Error::SearchBoundExceeded { j, bound })
}

/// First `n >= 1` for each `j <= j_max` with `arg α^n` in `(2/j, 2/j + 2/j²)`.
pub fn construct_divergence_witness(alpha: &FixedPointAngle, j_max: usize, bound: u64) -> Result<Vec<BigUint>> {
    alpha.check_irrational()?;
    (1..=j_max)
        .into_par_iter()
        .map(|j| search_witness_term(alpha, j, bound))
        .collect()
}

/// Replay of a witness list: the half-arguments `θ_j`, moduli `r_j = cos θ_j`, and the bounds they satisfy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessReport {
    pub terms: Vec<String>,
    pub thetas: Vec<f64>,
    pub moduli: Vec<f64>,
    pub all_in_arc: bool,
    pub theta_sum: f64,
    pub theta_partial_sums: Vec<f64>,
    pub harmonic_sum: f64,
    pub theta_sq_sum: f64,
    pub theta_sq_bound: f64,
    pub theta_max: f64,
    pub product_r: f64,
    /// `exp(-(1/2) Σθ² (1 + θ_max²))`.
    pub product_r_lower_bound: f64,
}

pub fn witness_report(alpha: &FixedPointAngle, terms: &[BigUint]) -> WitnessReport {
    let idx: Vec<usize> = (1..=terms.len()).collect();
    witness_report_at(alpha, terms, &idx)
}

fn witness_report_at(alpha: &FixedPointAngle, terms: &[BigUint], indices: &[usize]) -> WitnessReport {
    let mut r = WitnessReport {
        terms: Vec::new(),
        thetas: Vec::new(),
        moduli: Vec::new(),
        all_in_arc: true,
        theta_sum: 0.0,
        theta_partial_sums: Vec::new(),
        harmonic_sum: 0.0,
        theta_sq_sum: 0.0,
        theta_sq_bound: 0.0,
        theta_max: 0.0,
        product_r: 1.0,
        product_r_lower_bound: 1.0,
    };
    let mut log_r = 0.0;
    for &j in indices {
        let Some(n) = terms.get(j - 1) else {
            r.all_in_arc = false;
            break;
        };
        let z = half_sum(&Angle::Fixed(alpha.pow(n)));
        let theta = z.arg_unwrapped();
        let jf = j as f64;
        if !(theta > 1.0 / jf && theta < 1.0 / jf + 1.0 / (jf * jf)) {
            r.all_in_arc = false;
        }
        r.terms.push(n.to_string());
        r.thetas.push(theta);
        r.moduli.push(z.modulus());
        r.theta_sum += theta;
        r.theta_partial_sums.push(r.theta_sum);
        r.harmonic_sum += 1.0 / jf;
        r.theta_sq_sum += theta * theta;
        r.theta_sq_bound += 1.0 / jf.powi(2) + 2.0 / jf.powi(3) + 1.0 / jf.powi(4);
        r.theta_max = r.theta_max.max(theta.abs());
        log_r += z.log_r();
    }
    r.product_r = log_r.exp();
    r.product_r_lower_bound = (-0.5 * r.theta_sq_sum * (1.0 + r.theta_max * r.theta_max)).exp();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn geo10() -> GeneratorSequence {
        GeneratorSequence::geometric(10).unwrap()
    }

    #[test]
    fn character_average_examples() {
        let w = IpWindow::from_u64(&[1, 1]);
        assert_eq!(character_average(&w, &Angle::zero()), LogPolar::ONE);
        let z = character_average(&w, &Angle::rational(1, 3).unwrap());
        let omega = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        let brute = (1.0 + 2.0 * omega + omega * omega) / 4.0;
        assert!((z.to_complex() - brute).norm() < 1e-15);
        assert!((z.modulus() - 0.25).abs() < 1e-15);
        let w = IpWindow::at(&geo10(), &FolnerSchedule::interval(1), 20).unwrap();
        let z = character_average(&w, &Angle::rational(1, 3).unwrap());
        assert!((z.log_r() / 2f64.ln() + 20.0).abs() < 1e-12);
    }

    #[test]
    fn omega_examples() {
        let s1 = FolnerSchedule::interval(1);
        let om = omega(&geo10(), &s1, &Angle::zero(), 10).unwrap();
        assert!(matches!(om, OmegaValue::Finite { .. }));
        assert_eq!(om.value(), Complex64::new(1.0, 0.0));
        let om = omega(&geo10(), &s1, &Angle::rational(1, 3).unwrap(), 10).unwrap();
        assert!(matches!(om, OmegaValue::ExactZero { .. }));
        let om = omega(
            &geo10(),
            &FolnerSchedule::interval(3),
            &Angle::rational(1, 4).unwrap(),
            10,
        )
        .unwrap();
        match om {
            OmegaValue::Finite { value, j0, .. } => {
                assert_eq!(j0, 3);
                assert_eq!(value, LogPolar::ONE);
            }
            other => panic!("{other:?}"),
        }
        // [1, N] with 1/4: factors for j = 1, 2 are (1+i)/2 and (1-1)/2 = 0
        let om = omega(&geo10(), &s1, &Angle::rational(1, 4).unwrap(), 10).unwrap();
        assert_eq!(om.value(), Complex64::new(0.0, 0.0));
        let ew = FolnerSchedule::ExplicitWindows(vec![vec![1]]);
        assert_eq!(omega(&geo10(), &ew, &Angle::zero(), 1), Err(Error::UnsupportedSchedule));
    }

    #[test]
    fn truncation_is_monotone() {
        let a = Angle::Fixed(FixedPointAngle::golden(1024));
        let mut last = 1.0;
        for n in 1..40 {
            let b = omega(&geo10(), &FolnerSchedule::interval(1), &a, n)
                .unwrap()
                .abs_bound();
            assert!(b <= last);
            last = b;
        }
    }

    #[test]
    fn spectrum_examples() {
        let t = |q| {
            spectrum_contains(&geo10(), &RationalAngle::new(1, q).unwrap())
                .unwrap()
                .contains
        };
        assert!(t(8));
        assert!(!t(3));
        assert!(t(1));
        let c = rational_spectrum_certificate(&GeneratorSequence::geometric(12).unwrap()).unwrap();
        assert_eq!(c.primes, vec![2, 3]);
        assert!(
            spectrum_contains(
                &GeneratorSequence::geometric(12).unwrap(),
                &RationalAngle::new(1, 6).unwrap()
            )
            .unwrap()
            .contains
        );
        assert_eq!(rational_spectrum_certificate(&geo10()).unwrap().primes, vec![2, 5]);
        assert_eq!(
            rational_spectrum_certificate(&GeneratorSequence::geometric(2).unwrap())
                .unwrap()
                .primes,
            vec![2]
        );
    }

    #[test]
    fn explicit_period_needs_two_periods() {
        let g = GeneratorSequence::explicit_u64(&[1, 2, 4]).unwrap();
        assert!(matches!(detect_period(&g, 7, 1), Err(Error::PeriodNotFound { .. })));
        let g = GeneratorSequence::explicit_u64(&[5, 1, 2, 4, 1, 2, 4]).unwrap();
        let c = detect_period(&g, 7, 1).unwrap();
        assert_eq!((c.cycle_start, c.period), (2, 3));
    }

    #[test]
    fn witness_first_terms() {
        let a = FixedPointAngle::from_radians(1, 1, 1024).unwrap();
        let t = construct_divergence_witness(&a, 6, DEFAULT_WITNESS_BOUND).unwrap();
        let t: Vec<u64> = t.iter().map(|n| n.to_u64().unwrap()).collect();
        assert_eq!(t, vec![3, 14, 7, 32, 13, 126]);
    }

    #[test]
    fn witness_rejects_rationals() {
        let a = RationalAngle::new(1, 7).unwrap().to_fixed(512);
        assert!(matches!(
            construct_divergence_witness(&a, 3, 1000),
            Err(Error::NotIrrational { .. })
        ));
    }
}
