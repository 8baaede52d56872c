//! Cross-module properties checked against direct computations.

use ipergo::circle::{half_sum, Angle, FixedPointAngle, RationalAngle};
use ipergo::correlation::IntervalSet;
use ipergo::ipset::{FolnerSchedule, GeneratorSequence, IpWindow, Mode};
use ipergo::spectral::spectrum_contains;
use ipergo::systems::{
    certify_spectrum, kronecker_limit_formula, multiple_average, weight_1r_phi, weighted_multiple_average, Evaluation,
    Observable, Point, SkewProduct, SystemModel, TorusRotation, TrigPolynomial,
};
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn half_sum_matches_direct_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..10_000 {
        let a = if i % 2 == 0 {
            Angle::rational(rng.gen_range(-1000..1000), rng.gen_range(1..1000)).unwrap()
        } else {
            Angle::Fixed(FixedPointAngle::from_frac(BigUint::from(rng.gen::<u64>()), 64).unwrap())
        };
        let direct = (c(1.0, 0.0) + Complex64::from_polar(1.0, TAU * a.turns())) / 2.0;
        let got = half_sum(&a).to_complex();
        assert!((got - direct).norm() < 1e-12, "{a:?}: {got} vs {direct}");
    }
}

/// `1/q` is in the spectrum of `a^{j-1}` iff the orbit of `a^j mod q` ends in the cycle `{0}`.
fn cycle_is_zero(a: u64, q: u64) -> bool {
    let mut first = std::collections::HashMap::new();
    let (mut r, mut j) = (1 % q, 0);
    while !first.contains_key(&r) {
        first.insert(r, j);
        r = r * a % q;
        j += 1;
    }
    let mut x = r;
    loop {
        if x != 0 {
            return false;
        }
        x = x * a % q;
        if x == r {
            return true;
        }
    }
}

fn golden_torus() -> TorusRotation {
    TorusRotation::new(vec![
        Angle::Fixed(FixedPointAngle::golden(512)),
        Angle::rational(1, 3).unwrap(),
    ])
    .unwrap()
}

fn trig(terms: &[(i64, i64, f64, f64)]) -> TrigPolynomial {
    TrigPolynomial::new(2, terms.iter().map(|&(a, b, re, im)| (vec![a, b], c(re, im)))).unwrap()
}

#[test]
fn kronecker_limit_matches_large_window() {
    let sys = golden_torus();
    let gens = GeneratorSequence::geometric(10).unwrap();
    let fs = vec![
        trig(&[(0, 0, 0.5, 0.0), (1, 0, 0.3, -0.2), (0, 3, 0.1, 0.4)]),
        trig(&[(-1, 0, 0.7, 0.0), (0, -1, 0.2, 0.2), (2, 2, -0.3, 0.1)]),
    ];
    let ls = [1, 2];
    let clearance = certify_spectrum(&gens, &sys, &fs, &ls).unwrap();
    assert!(clearance.obstructed().is_empty());
    let limit = kronecker_limit_formula(&sys, &fs, &ls, &clearance).unwrap();
    let model = SystemModel::Torus(sys.clone());
    let obs: Vec<Observable> = fs.iter().cloned().map(Observable::Trig).collect();
    let w = IpWindow::at(&gens, &FolnerSchedule::interval(1), 45).unwrap();
    let x = vec![
        Angle::rational(3, 7).unwrap(),
        Angle::Fixed(FixedPointAngle::sqrt2_minus_1(512)),
    ];
    let at = multiple_average(
        &model,
        &obs,
        &ls,
        &Evaluation::At(Point::Torus(x.clone())),
        &w,
        Mode::exact(),
    )
    .unwrap();
    assert!(
        (at.mean - limit.eval(&x)).norm() < 1e-9,
        "{} vs {}",
        at.mean,
        limit.eval(&x)
    );
    let mean = multiple_average(&model, &obs, &ls, &Evaluation::Mean, &w, Mode::exact()).unwrap();
    assert!((mean.mean - limit.coeff(&[0, 0])).norm() < 1e-9);
    let sampled = Mode::Sampled { count: 20_000, seed: 5 };
    let est = multiple_average(&model, &obs, &ls, &Evaluation::At(Point::Torus(x.clone())), &w, sampled).unwrap();
    assert!((est.mean - limit.eval(&x)).norm() < 5.0 * est.stderr.max(1e-12) + 1e-9);
}

#[test]
fn kronecker_limit_refuses_spectral_frequencies() {
    let sys = TorusRotation::new(vec![Angle::rational(1, 8).unwrap()]).unwrap();
    let gens = GeneratorSequence::geometric(10).unwrap();
    let fs = vec![TrigPolynomial::character(1)];
    let clearance = certify_spectrum(&gens, &sys, &fs, &[1]).unwrap();
    assert_eq!(clearance.obstructed().len(), 1);
    assert!(kronecker_limit_formula(&sys, &fs, &[1], &clearance).is_err());
}

#[test]
fn weighted_constant_average_tends_to_one() {
    let gens = GeneratorSequence::geometric(10).unwrap();
    let sch = FolnerSchedule::interval(1);
    let sys = SystemModel::Torus(golden_torus());
    let one = Observable::constant_one(&sys);
    for r in [1, 2, 3, 4, 5, 6, 8, 12] {
        let wt = weight_1r_phi(&gens, &sch, r).unwrap();
        let w = IpWindow::at(&gens, &sch, 20).unwrap();
        let v = weighted_multiple_average(
            &sys,
            std::slice::from_ref(&one),
            &[1],
            &wt,
            &Evaluation::Mean,
            &w,
            Mode::exact(),
        )
        .unwrap();
        assert!((v.mean - c(1.0, 0.0)).norm() < 1e-3, "r = {r}: {}", v.mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spectrum_matches_cycle_oracle(a in 2u64..40, q in 1u64..400) {
        let gens = GeneratorSequence::geometric(a).unwrap();
        let got = spectrum_contains(&gens, &RationalAngle::new(1, q).unwrap()).unwrap().contains;
        prop_assert_eq!(got, cycle_is_zero(a, q));
    }

    #[test]
    fn skew_iterate_is_repeated_step(x in any::<u64>(), y in any::<u64>(), n in 0u32..=64) {
        let s = SkewProduct::new(FixedPointAngle::golden(192));
        let p = (
            FixedPointAngle::from_frac(BigUint::from(x) << 128u32, 192).unwrap(),
            FixedPointAngle::from_frac(BigUint::from(y) << 128u32, 192).unwrap(),
        );
        let mut q = p.clone();
        for _ in 0..n {
            q = s.step(&q);
        }
        prop_assert_eq!(s.iterate(&p, &BigInt::from(n)), q);
    }

    #[test]
    fn rational_pow_is_scaling(num in -500i64..500, den in 1u64..500, n in 0u64..1_000_000) {
        let r = RationalAngle::new(num, den).unwrap();
        prop_assert_eq!(r.pow(&BigUint::from(n)), r.scale(&BigInt::from(n)));
        prop_assert_eq!(r.pow_u64(n), r.scale(&BigInt::from(n)));
    }

    #[test]
    fn interval_algebra(a in 0.0f64..1.0, la in 0.0f64..1.0, b in 0.0f64..1.0, lb in 0.0f64..1.0) {
        let x = IntervalSet::from_turns(&[(a, a + la)]).unwrap();
        let y = IntervalSet::from_turns(&[(b, b + lb)]).unwrap();
        let units = |s: &IntervalSet| s.measure_units();
        prop_assert_eq!(units(&x.union(&y)) + units(&x.intersect(&y)), units(&x) + units(&y));
        prop_assert_eq!(units(&x.complement()), (1u128 << 64) - units(&x));
        prop_assert!(x.intersect(&y).is_subset(&x));
    }
}
