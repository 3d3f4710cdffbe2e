#![allow(dead_code)]

use std::collections::BTreeMap;

use heisenclone_core::qcore::{CMatrix, CVector, QuantumSystem};
use heisenclone_core::{normalize_spectrum, Spectrum};
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nearest f64 to a big rational, exact to about 60 bits before rounding.
pub fn ratio_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    let num = r.numer().abs();
    let den = r.denom().clone();
    let shift = num.bits() as i64 - den.bits() as i64 - 64;
    let scaled = if shift >= 0 {
        num / (den << shift as usize)
    } else {
        (num << (-shift) as usize) / den
    };
    sign * scaled.to_f64().unwrap() * 2f64.powi(shift as i32)
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `C(n, k) / 2^n` for the equal-weight qubit.
pub fn qubit_prob(n: u64, k: i64) -> BigRational {
    if k < 0 || k as u64 > n {
        return BigRational::zero();
    }
    BigRational::new(
        BigInt::from(binomial(n, k as u64)),
        BigInt::from(BigUint::one() << n as usize),
    )
}

/// Calls `visit` with every composition of `n` into `k` nonnegative parts.
pub fn for_each_composition(n: u64, k: usize, visit: &mut impl FnMut(&[u64])) {
    fn rec(rest: u64, slot: usize, buf: &mut Vec<u64>, visit: &mut impl FnMut(&[u64])) {
        if slot + 1 == buf.len() {
            buf[slot] = rest;
            visit(buf);
            return;
        }
        for c in 0..=rest {
            buf[slot] = c;
            rec(rest - c, slot + 1, buf, visit);
        }
    }
    let mut buf = vec![0; k];
    rec(n, 0, &mut buf, visit);
}

fn multinomial_coeff(counts: &[u64]) -> BigUint {
    let mut total = 0u64;
    let mut acc = BigUint::one();
    for &c in counts {
        for i in 1..=c {
            total += 1;
            acc = acc * BigUint::from(total) / BigUint::from(i);
        }
    }
    acc
}

/// `(a, k)` with `x = a / 2^k` exactly.
fn dyadic(x: f64) -> (BigUint, u32) {
    let r = BigRational::from_float(x).unwrap();
    let den = r.denom().to_biguint().unwrap();
    let k = den.bits() as u32 - 1;
    assert_eq!(den, BigUint::one() << k as usize);
    (r.numer().to_biguint().unwrap(), k)
}

/// Exact law of the total grid energy of `n` copies, by enumerating every
/// composition and summing multinomial weights in integer arithmetic over
/// the common denominator `2^(n L)`. Probabilities are taken as the exact
/// binary value of each f64.
pub fn exact_distribution(s: &Spectrum, n: u64) -> BTreeMap<i64, BigRational> {
    let energies = s.int_energies().to_vec();
    let parts: Vec<(BigUint, u32)> = s.probs().iter().map(|&p| dyadic(p)).collect();
    let bits = parts.iter().map(|p| p.1).max().unwrap();
    let scaled: Vec<BigUint> = parts.iter().map(|(a, k)| a << (bits - k) as usize).collect();
    let powers: Vec<Vec<BigUint>> = scaled
        .iter()
        .map(|a| {
            let mut row = vec![BigUint::one()];
            for _ in 0..n {
                let next = row.last().unwrap() * a;
                row.push(next);
            }
            row
        })
        .collect();
    let mut numer: BTreeMap<i64, BigUint> = BTreeMap::new();
    for_each_composition(n, energies.len(), &mut |counts| {
        let mut w = multinomial_coeff(counts);
        let mut e = 0i64;
        for (i, &c) in counts.iter().enumerate() {
            w *= &powers[i][c as usize];
            e += energies[i] * c as i64;
        }
        if !w.is_zero() {
            *numer.entry(e).or_insert_with(BigUint::zero) += w;
        }
    });
    let den = BigInt::from(BigUint::one() << (bits as u64 * n) as usize);
    numer
        .into_iter()
        .map(|(e, a)| (e, BigRational::new(BigInt::from(a), den.clone())))
        .collect()
}

/// Exact super-filter fidelity and success probability. With
/// `π_E² = γ² p_M(E+δ) / p_N(E)` the fidelity collapses to
/// `Σ_E p_M(E+δ)` and `p_yes` to `γ² Σ_E p_M(E+δ)`, both rational.
pub fn exact_super(
    p_n: &BTreeMap<i64, BigRational>,
    p_m: &BTreeMap<i64, BigRational>,
    delta: i64,
) -> (BigRational, BigRational) {
    let zero = BigRational::zero();
    let mut mass = BigRational::zero();
    let mut gamma2: Option<BigRational> = None;
    for (e, pn) in p_n {
        let pm = p_m.get(&(e + delta)).unwrap_or(&zero);
        if pm.is_zero() {
            continue;
        }
        mass += pm;
        let ratio = pn / pm;
        gamma2 = Some(match gamma2 {
            Some(g) if g <= ratio => g,
            _ => ratio,
        });
    }
    let p_yes = gamma2.unwrap_or_else(BigRational::zero) * &mass;
    (mass, p_yes)
}

/// Spectrum with `k` distinct integer energies in `[-3, 4]` and every
/// probability at least `floor`.
pub fn random_spectrum(rng: &mut impl Rng, k: usize, floor: f64) -> Spectrum {
    let mut energies: Vec<i64> = (-3..=4).collect();
    for i in (1..energies.len()).rev() {
        let j = rng.random_range(0..=i);
        energies.swap(i, j);
    }
    energies.truncate(k);
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let free = 1.0 - floor * k as f64;
    let mut probs: Vec<f64> = raw.iter().map(|r| floor + free * r / total).collect();
    let sum: f64 = probs.iter().sum();
    let last = probs.len() - 1;
    probs[last] += 1.0 - sum;
    let strings: Vec<String> = energies.iter().map(|e| e.to_string()).collect();
    let levels: Vec<(&str, f64)> = strings.iter().map(|s| s.as_str()).zip(probs).collect();
    normalize_spectrum(&levels).unwrap()
}

pub fn cplx(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cplx(rng))
}

pub fn random_unitary(rng: &mut impl Rng, d: usize) -> CMatrix {
    random_matrix(rng, d, d).qr().q()
}

pub fn random_state(rng: &mut impl Rng, d: usize) -> CVector {
    let v = CVector::from_fn(d, |_, _| cplx(rng));
    v.unscale(v.norm())
}

/// System with the given energies in a random eigenbasis and a random probe.
pub fn random_system(rng: &mut impl Rng, energies: &[f64]) -> QuantumSystem {
    let d = energies.len();
    let u = random_unitary(rng, d);
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(
        d,
        energies.iter().map(|&e| Complex64::new(e, 0.0)),
    ));
    let h = &u * diag * u.adjoint();
    let h = (&h + h.adjoint()).scale(0.5);
    QuantumSystem::new(h, random_state(rng, d)).unwrap()
}

/// Distinct integer energies drawn from `0..=span`, including both ends.
pub fn random_integer_energies(rng: &mut impl Rng, d: usize, span: i64) -> Vec<f64> {
    let mut pool: Vec<i64> = (1..span).collect();
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    let mut e: Vec<f64> = vec![0.0, span as f64];
    e.extend(pool.iter().take(d - 2).map(|&x| x as f64));
    e.sort_by(f64::total_cmp);
    e
}

pub fn max_abs_entry(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

