//! Brute-force checks over all of `S_n` for small `n`.
//!
//! Each check compares a closed form or fast path against direct
//! enumeration and reports the largest discrepancy it saw.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixing::EulerianTable;
use crate::perm::{enumerate_sn, factorial, lex_rank, Permutation};
use crate::reverse::{delta_gpl, irs_word_to_perm, ReverseKind, ReverseParams};
use crate::rng::stream;
use crate::shuffles::{pmf_one_step, pmf_rs_tstep, pmf_rs_tstep_exact, ShuffleKind};

/// Largest `n` the suite will enumerate.
pub const ORACLE_MAX_N: usize = 6;

/// Largest `t` used by the `t`-step checks.
pub const ORACLE_MAX_T: u32 = 8;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub detail: String,
}

fn check(name: &str, max_error: f64, tol: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: max_error <= tol,
        max_error,
        detail,
    }
}

/// All permutations of `[n]` in lexicographic order.
fn group(n: usize) -> Vec<Permutation> {
    enumerate_sn(n).expect("n within enumeration cap").collect()
}

/// `q^{(t)}` of the riffle shuffle by repeated convolution with the one-step
/// pmf, indexed by lexicographic rank. `out[t]` for `t = 0..=t_max`.
pub fn rs_convolution_powers(n: usize, t_max: u32) -> Vec<Vec<f64>> {
    let all = group(n);
    let step: Vec<(Permutation, f64)> = all
        .iter()
        .map(|s| (s.clone(), pmf_one_step(ShuffleKind::RiffleShuffle, s)))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let mut cur = vec![0.0; all.len()];
    cur[lex_rank(&Permutation::identity(n))] = 1.0;
    let mut out = vec![cur.clone()];
    for _ in 0..t_max {
        let mut next = vec![0.0; all.len()];
        for (a, pa) in all.iter().zip(&cur) {
            if *pa == 0.0 {
                continue;
            }
            for (s, ps) in &step {
                next[lex_rank(&a.compose(s).expect("same n"))] += pa * ps;
            }
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

fn rs_convolution_exact(n: usize, t_max: u32) -> Vec<Vec<BigRational>> {
    let all = group(n);
    let step: Vec<(Permutation, BigRational)> = all
        .iter()
        .map(|s| (s.clone(), pmf_rs_tstep_exact(s, 1)))
        .filter(|(_, p)| !p.is_zero())
        .collect();
    let mut cur = vec![BigRational::zero(); all.len()];
    cur[lex_rank(&Permutation::identity(n))] = BigRational::from_integer(1.into());
    let mut out = vec![cur.clone()];
    for _ in 0..t_max {
        let mut next = vec![BigRational::zero(); all.len()];
        for (a, pa) in all.iter().zip(&cur) {
            if pa.is_zero() {
                continue;
            }
            for (s, ps) in &step {
                next[lex_rank(&a.compose(s).expect("same n"))] += pa * ps;
            }
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

fn random_params(kind: ReverseKind, n: usize, rng: &mut impl Rng) -> ReverseParams {
    let mut v = || {
        (0..n)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    match kind {
        ReverseKind::InverseTransposition => {
            let s = v();
            ReverseParams::inverse_transposition(s, 0.7).unwrap()
        }
        ReverseKind::InverseInsertion => ReverseParams::inverse_insertion(v()).unwrap(),
        ReverseKind::InverseRiffle => ReverseParams::inverse_riffle(v()).unwrap(),
        ReverseKind::PlackettLuce => ReverseParams::plackett_luce(v()).unwrap(),
        ReverseKind::GeneralizedPlackettLuce => {
            ReverseParams::generalized_plackett_luce((0..n).map(|_| v()).collect()).unwrap()
        }
    }
}

fn group_laws(n_max: usize) -> CheckResult {
    let mut failures = 0usize;
    for n in 1..=n_max {
        let all = group(n);
        let id = Permutation::identity(n);
        for a in &all {
            let ai = a.inverse();
            if a.compose(&ai).unwrap() != id || ai.compose(a).unwrap() != id {
                failures += 1;
            }
            if a.compose(&id).unwrap() != *a {
                failures += 1;
            }
        }
        // associativity and the action law on a sample of triples
        let mut rng = stream(0, n as u64);
        let items: Vec<usize> = (0..n).collect();
        for _ in 0..200 {
            let pick = |r: &mut crate::rng::SdRng| all[r.gen_range(0..all.len())].clone();
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            let act = a.compose(&b).unwrap().apply_slice(&items).unwrap();
            let seq = b.apply_slice(&a.apply_slice(&items).unwrap()).unwrap();
            if left != right || act != seq {
                failures += 1;
            }
        }
    }
    check(
        "group_laws",
        failures as f64,
        0.0,
        format!("{failures} violations"),
    )
}

fn one_step_normalization(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for kind in ShuffleKind::ALL {
            let total: f64 = group(n).iter().map(|s| pmf_one_step(kind, s)).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    check(
        "one_step_pmf_normalization",
        worst,
        1e-12,
        "RT, RI, RS summed over S_n".into(),
    )
}

fn rs_support(n_max: usize) -> CheckResult {
    let mut bad = Vec::new();
    for n in 1..=n_max {
        let size = group(n)
            .iter()
            .filter(|s| pmf_one_step(ShuffleKind::RiffleShuffle, s) > 0.0)
            .count();
        if size != (1usize << n) - n {
            bad.push(format!("n={n}: {size}"));
        }
    }
    check(
        "rs_support_size",
        bad.len() as f64,
        0.0,
        if bad.is_empty() {
            "2^n - n".into()
        } else {
            bad.join(", ")
        },
    )
}

fn rs_tstep_matrix_power(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let all = group(n);
        let powers = rs_convolution_powers(n, ORACLE_MAX_T);
        for t in 0..=ORACLE_MAX_T {
            for (s, p) in all.iter().zip(&powers[t as usize]) {
                worst = worst.max((pmf_rs_tstep(s, t) - p).abs());
            }
        }
    }
    check(
        "rs_tstep_vs_matrix_power",
        worst,
        1e-12,
        format!("t <= {ORACLE_MAX_T}"),
    )
}

fn rs_tstep_exact(n_max: usize) -> CheckResult {
    let mut mismatches = 0usize;
    for n in 1..=n_max {
        let all = group(n);
        let powers = rs_convolution_exact(n, ORACLE_MAX_T);
        for t in 0..=ORACLE_MAX_T {
            for (s, p) in all.iter().zip(&powers[t as usize]) {
                if pmf_rs_tstep_exact(s, t) != *p {
                    mismatches += 1;
                }
            }
        }
    }
    check(
        "rs_tstep_exact_rational",
        mismatches as f64,
        0.0,
        format!("{mismatches} rational mismatches"),
    )
}

fn eulerian_histogram(n_max: usize) -> CheckResult {
    let mut bad = 0usize;
    for n in 1..=n_max {
        let mut hist = vec![0u64; n + 1];
        for s in group(n) {
            hist[s.rising_sequences()] += 1;
        }
        let table = EulerianTable::new(n).unwrap();
        let exact = table.exact_counts().unwrap();
        for r in 1..=n {
            if exact[r - 1].to_u64() != Some(hist[r]) {
                bad += 1;
            }
        }
    }
    check(
        "eulerian_vs_rising_sequences",
        bad as f64,
        0.0,
        "A(n, r-1) counts".into(),
    )
}

fn tv_formulas(n_max: usize) -> (CheckResult, CheckResult) {
    let mut worst_u: f64 = 0.0;
    let mut worst_b: f64 = 0.0;
    for n in 2..=n_max {
        let powers = rs_convolution_powers(n, ORACLE_MAX_T);
        let uniform = vec![1.0 / factorial(n) as f64; factorial(n)];
        let table = EulerianTable::new(n).unwrap();
        for t in 0..=ORACLE_MAX_T {
            worst_u =
                worst_u.max((table.tv_to_uniform(t) - tv(&powers[t as usize], &uniform)).abs());
            for t2 in t + 1..=ORACLE_MAX_T {
                let brute = tv(&powers[t as usize], &powers[t2 as usize]);
                worst_b = worst_b.max((table.tv_between(t, t2) - brute).abs());
            }
        }
    }
    (
        check(
            "tv_to_uniform_vs_brute_force",
            worst_u,
            1e-12,
            format!("t <= {ORACLE_MAX_T}"),
        ),
        check(
            "tv_between_vs_brute_force",
            worst_b,
            1e-12,
            format!("t < t' <= {ORACLE_MAX_T}"),
        ),
    )
}

fn reverse_normalization(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = stream(1, 0);
    for n in 1..=n_max {
        for kind in ReverseKind::ALL {
            let params = random_params(kind, n, &mut rng);
            let total: f64 = group(n)
                .iter()
                .map(|s| params.log_prob(s).unwrap().exp())
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    check(
        "reverse_family_normalization",
        worst,
        1e-10,
        "IT, II, IRS, PL, GPL".into(),
    )
}

fn top_k_exact(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = stream(2, 0);
    for n in 1..=n_max.min(5) {
        let all = group(n);
        for kind in ReverseKind::ALL {
            let params = random_params(kind, n, &mut rng);
            let mut brute: Vec<f64> = all
                .iter()
                .map(|s| params.log_prob(s).unwrap())
                .filter(|lp| lp.is_finite())
                .collect();
            brute.sort_by(|a, b| b.total_cmp(a));
            let k = 5.min(brute.len());
            let got = params.top_k(k, factorial(n)).unwrap();
            for (g, b) in got.iter().zip(&brute) {
                worst = worst.max((g.1 - b).abs());
            }
            if got.len() != k {
                worst = f64::INFINITY;
            }
        }
    }
    check(
        "top_k_exactness",
        worst,
        1e-12,
        "top-5 with inner beam n!".into(),
    )
}

fn irs_preimages(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = stream(3, 0);
    for n in 1..=n_max {
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = ReverseParams::inverse_riffle(s.clone()).unwrap();
        let mut mass = vec![0.0; factorial(n)];
        for mask in 0u32..(1 << n) {
            let left: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let p: f64 = (0..n)
                .map(|i| {
                    let q = 1.0 / (1.0 + (-s[i]).exp());
                    if left[i] {
                        q
                    } else {
                        1.0 - q
                    }
                })
                .product();
            mass[lex_rank(&irs_word_to_perm(&left))] += p;
        }
        for sigma in group(n) {
            let lp = params.log_prob(&sigma).unwrap();
            worst = worst.max((lp.exp() - mass[lex_rank(&sigma)]).abs());
        }
    }
    check(
        "irs_preimage_sums",
        worst,
        1e-12,
        "sum over all 2^n pile words".into(),
    )
}

fn irs_uniform_inverse_riffle(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let params = ReverseParams::inverse_riffle(vec![0.0; n]).unwrap();
        for sigma in group(n) {
            let q = pmf_one_step(ShuffleKind::RiffleShuffle, &sigma.inverse());
            worst = worst.max((params.log_prob(&sigma).unwrap().exp() - q).abs());
        }
    }
    check(
        "irs_uniform_is_inverse_riffle",
        worst,
        1e-12,
        "s = 0".into(),
    )
}

fn gpl_equal_rows(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut rng = stream(4, 0);
    for n in 1..=n_max {
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pl = ReverseParams::plackett_luce(s.clone()).unwrap();
        let gpl = ReverseParams::generalized_plackett_luce(vec![s; n]).unwrap();
        for sigma in group(n) {
            worst = worst.max((pl.log_prob(&sigma).unwrap() - gpl.log_prob(&sigma).unwrap()).abs());
        }
    }
    check(
        "gpl_equal_rows_is_pl",
        worst,
        1e-12,
        "log-probabilities".into(),
    )
}

fn delta_concentration(n_max: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for sigma in group(n) {
            let params = delta_gpl(&sigma, 30.0).unwrap();
            let miss = -params.log_prob(&sigma).unwrap().exp_m1();
            worst = worst.max(miss);
        }
    }
    check(
        "delta_gpl_concentration",
        worst,
        1e-9,
        "1 - p(σ) with M = 30".into(),
    )
}

/// Runs every check for `n = 1..=n_max`.
pub fn run_all(n_max: usize) -> Result<Vec<CheckResult>> {
    if !(1..=ORACLE_MAX_N).contains(&n_max) {
        return Err(Error::OutOfRange {
            n: n_max,
            min: 1,
            max: ORACLE_MAX_N,
        });
    }
    let (tvu, tvb) = tv_formulas(n_max);
    Ok(vec![
        group_laws(n_max),
        one_step_normalization(n_max),
        rs_support(n_max),
        rs_tstep_matrix_power(n_max),
        rs_tstep_exact(n_max),
        eulerian_histogram(n_max),
        tvu,
        tvb,
        reverse_normalization(n_max),
        top_k_exact(n_max),
        irs_preimages(n_max),
        irs_uniform_inverse_riffle(n_max),
        gpl_equal_rows(n_max),
        delta_concentration(n_max),
    ])
}
