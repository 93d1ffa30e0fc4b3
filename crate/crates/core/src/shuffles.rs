//! Forward card-shuffling processes on `S_n`.
//!
//! Three one-step shuffles are supported: random transposition (RT), random
//! insertion (RI) and the Gilbert-Shannon-Reeds riffle shuffle (RS). A
//! sampled move `σ` acts on a deck through [`crate::perm::apply`], so the
//! one-line notation of a riffle move is the new deck order read top to
//! bottom (an interleaving of `1..k` with `k+1..n`).

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{ObjectList, Permutation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShuffleKind {
    #[serde(rename = "RT")]
    RandomTransposition,
    #[serde(rename = "RI")]
    RandomInsertion,
    #[serde(rename = "RS")]
    RiffleShuffle,
}

impl ShuffleKind {
    pub const ALL: [ShuffleKind; 3] = [
        ShuffleKind::RandomTransposition,
        ShuffleKind::RandomInsertion,
        ShuffleKind::RiffleShuffle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ShuffleKind::RandomTransposition => "RT",
            ShuffleKind::RandomInsertion => "RI",
            ShuffleKind::RiffleShuffle => "RS",
        }
    }
}

impl fmt::Display for ShuffleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ShuffleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RT" => Ok(ShuffleKind::RandomTransposition),
            "RI" => Ok(ShuffleKind::RandomInsertion),
            "RS" => Ok(ShuffleKind::RiffleShuffle),
            other => Err(Error::InvalidArgument(format!(
                "unknown shuffle kind {other:?}"
            ))),
        }
    }
}

/// `insert_i` (0-based `i`): moves the last card to just before card `i`.
/// `insert_{n-1}` is the identity.
pub fn insert_perm(n: usize, i: usize) -> Permutation {
    let mut map = Vec::with_capacity(n);
    map.extend(0..i);
    map.push(n - 1);
    map.extend(i..n - 1);
    Permutation::from_vec_unchecked(map)
}

/// `inverse_insert_i` (0-based `i`): moves card `i` to the bottom.
pub fn inverse_insert_perm(n: usize, i: usize) -> Permutation {
    let mut map: Vec<usize> = (0..n).filter(|&k| k != i).collect();
    map.push(i);
    Permutation::from_vec_unchecked(map)
}

/// One draw from the one-step distribution of `kind`.
pub fn sample_step<R: Rng + ?Sized>(kind: ShuffleKind, n: usize, rng: &mut R) -> Permutation {
    match kind {
        ShuffleKind::RandomTransposition => {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            Permutation::transposition(n, i, j)
        }
        ShuffleKind::RandomInsertion => insert_perm(n, rng.gen_range(0..n)),
        ShuffleKind::RiffleShuffle => sample_rs_geometric(n, rng),
    }
}

/// GSR riffle shuffle through the geometric description: drop `n` uniform
/// points on `[0, 1)`, label them in increasing order, and read the labels
/// off in the order of the fractional parts of the doubled points.
pub fn sample_rs_geometric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut points: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    points.sort_by(|a, b| a.total_cmp(b));
    let keys: Vec<f64> = points.iter().map(|&x| (2.0 * x).fract()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal keys keep original index order
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    Permutation::from_vec_unchecked(order)
}

/// GSR riffle shuffle through the binomial cut and proportional drops.
pub fn sample_rs_gsr<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let cut = (0..n).filter(|_| rng.gen::<bool>()).count();
    let (mut left, mut right) = (0usize, cut);
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let a = cut - left;
        let b = n - right;
        if rng.gen_range(0..a + b) < a {
            order.push(left);
            left += 1;
        } else {
            order.push(right);
            right += 1;
        }
    }
    Permutation::from_vec_unchecked(order)
}

fn is_transposition_or_identity(sigma: &Permutation) -> bool {
    let moved = sigma
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(i, &v)| *i != v)
        .count();
    moved == 0 || moved == 2
}

/// The 0-based `i` with `sigma == insert_i`, if any.
pub fn as_insertion(sigma: &Permutation) -> Option<usize> {
    let n = sigma.len();
    let i = sigma.as_slice().iter().position(|&v| v == n - 1)?;
    (insert_perm(n, i) == *sigma).then_some(i)
}

/// Exact one-step probability of `sigma` under `kind`.
pub fn pmf_one_step(kind: ShuffleKind, sigma: &Permutation) -> f64 {
    let n = sigma.len();
    let nf = n as f64;
    match kind {
        ShuffleKind::RandomTransposition => {
            if sigma.is_identity() {
                1.0 / nf
            } else if is_transposition_or_identity(sigma) {
                2.0 / (nf * nf)
            } else {
                0.0
            }
        }
        ShuffleKind::RandomInsertion => {
            if as_insertion(sigma).is_some() {
                1.0 / nf
            } else {
                0.0
            }
        }
        ShuffleKind::RiffleShuffle => match sigma.rising_sequences() {
            1 => (nf + 1.0) * 0.5f64.powi(n as i32),
            2 => 0.5f64.powi(n as i32),
            _ => 0.0,
        },
    }
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln(n! · q_RS^{(t)}(σ))` for a permutation with `r` rising sequences.
///
/// Written as `Σ_{j=1..n} ln(1 + (j - r) / 2^t)`, which stays accurate when
/// the t-step law is within rounding of uniform.
pub fn log_ratio_to_uniform(n: usize, r: usize, t: u32) -> f64 {
    let scale = 2f64.powi(t.min(4096) as i32);
    if (r as f64) > scale {
        return f64::NEG_INFINITY;
    }
    (1..=n)
        .map(|j| ((j as f64 - r as f64) / scale).ln_1p())
        .sum()
}

/// `ln q_RS^{(t)}` at a permutation with `r` rising sequences.
pub fn log_pmf_rs_rising(n: usize, r: usize, t: u32) -> f64 {
    log_ratio_to_uniform(n, r, t) - ln_factorial(n)
}

/// t-step riffle-shuffle marginal `C(n + 2^t - r, n) / 2^{tn}`; `t = 0` is
/// the point mass at the identity.
pub fn pmf_rs_tstep(sigma: &Permutation, t: u32) -> f64 {
    log_pmf_rs_rising(sigma.len(), sigma.rising_sequences(), t).exp()
}

pub fn binomial_big(m: &BigUint, k: usize) -> BigUint {
    let mut acc = BigUint::one();
    let kk = BigUint::from(k);
    if *m < kk {
        return BigUint::zero();
    }
    for j in 0..k {
        acc *= m - BigUint::from(j);
        acc /= BigUint::from(j + 1);
    }
    acc
}

/// Exact rational t-step riffle probability for `r` rising sequences in `S_n`.
pub fn pmf_rs_rising_exact(n: usize, r: usize, t: u32) -> BigRational {
    let two_t = BigUint::one() << (t as usize);
    if BigUint::from(r) > two_t {
        return BigRational::zero();
    }
    let m = BigUint::from(n) + two_t - BigUint::from(r);
    let num = binomial_big(&m, n);
    let den = BigUint::one() << (t as usize * n);
    BigRational::new(num.into(), den.into())
}

pub fn pmf_rs_tstep_exact(sigma: &Permutation, t: u32) -> BigRational {
    pmf_rs_rising_exact(sigma.len(), sigma.rising_sequences(), t)
}

/// A forward diffusion record: `states[t] = apply(moves[t-1], states[t-1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: ShuffleKind,
    pub states: Vec<ObjectList>,
    pub moves: Vec<Permutation>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    kind: ShuffleKind,
    #[serde(rename = "T")]
    steps: usize,
    moves: Vec<Permutation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    states: Option<Vec<Vec<Vec<f64>>>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.moves.len()
    }

    pub fn n(&self) -> usize {
        self.states[0].n()
    }

    /// `π_t = σ_1 ∘ .. ∘ σ_t`, so that `states[t] = apply(π_t, states[0])`.
    pub fn cumulative(&self, t: usize) -> Permutation {
        self.moves[..t]
            .iter()
            .fold(Permutation::identity(self.n()), |acc, m| {
                acc.compose(m).expect("moves share n")
            })
    }

    /// The permutation `σ'` with `states[to] = apply(σ', states[from])`.
    pub fn move_between(&self, from: usize, to: usize) -> Permutation {
        let a = self.cumulative(from);
        let b = self.cumulative(to);
        a.inverse().compose(&b).expect("same n")
    }

    pub fn to_json(&self, include_states: bool) -> serde_json::Value {
        let rec = TrajectoryJson {
            kind: self.kind,
            steps: self.horizon(),
            moves: self.moves.clone(),
            states: include_states.then(|| {
                self.states
                    .iter()
                    .map(|s| s.rows().map(|r| r.to_vec()).collect())
                    .collect()
            }),
        };
        serde_json::to_value(rec).expect("trajectory serializes")
    }

    /// Rebuilds a trajectory from JSON; when states are omitted they are
    /// replayed from `x0`.
    pub fn from_json(value: &serde_json::Value, x0: Option<&ObjectList>) -> Result<Self> {
        let rec: TrajectoryJson = serde_json::from_value(value.clone())?;
        if rec.moves.len() != rec.steps {
            return Err(Error::Serde("T does not match number of moves".into()));
        }
        let states = match (rec.states, x0) {
            (Some(states), _) => states
                .into_iter()
                .map(ObjectList::new)
                .collect::<Result<Vec<_>>>()?,
            (None, Some(x0)) => {
                let mut states = vec![x0.clone()];
                for m in &rec.moves {
                    let next = states.last().unwrap().permuted(m)?;
                    states.push(next);
                }
                states
            }
            (None, None) => {
                return Err(Error::Serde(
                    "states omitted and no initial list given".into(),
                ))
            }
        };
        if states.len() != rec.moves.len() + 1 {
            return Err(Error::Serde("states length must be T + 1".into()));
        }
        Ok(Trajectory {
            kind: rec.kind,
            states,
            moves: rec.moves,
        })
    }
}

/// Runs the forward chain for `steps` i.i.d. moves of `kind`.
pub fn forward_trajectory<R: Rng + ?Sized>(
    x0: &ObjectList,
    kind: ShuffleKind,
    steps: usize,
    rng: &mut R,
) -> Trajectory {
    let n = x0.n();
    let mut states = Vec::with_capacity(steps + 1);
    let mut moves = Vec::with_capacity(steps);
    states.push(x0.clone());
    for _ in 0..steps {
        let m = sample_step(kind, n, rng);
        let next = states.last().unwrap().permuted(&m).expect("same n");
        states.push(next);
        moves.push(m);
    }
    Trajectory {
        kind,
        states,
        moves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::{enumerate_sn, factorial, lex_rank};
    use crate::rng::seeded;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    fn empirical_tv<F>(n: usize, draws: usize, mut sample: F, exact: &[f64]) -> f64
    where
        F: FnMut() -> Permutation,
    {
        let mut counts = vec![0usize; factorial(n)];
        for _ in 0..draws {
            counts[lex_rank(&sample())] += 1;
        }
        counts
            .iter()
            .zip(exact)
            .map(|(&c, &q)| (c as f64 / draws as f64 - q).abs())
            .sum::<f64>()
            / 2.0
    }

    #[test]
    fn one_step_examples() {
        let rs = ShuffleKind::RiffleShuffle;
        assert_eq!(pmf_one_step(rs, &Permutation::identity(3)), 0.5);
        assert_eq!(pmf_one_step(rs, &p(&[3, 2, 1])), 0.0);
        assert_eq!(pmf_one_step(rs, &p(&[1, 4, 2, 5, 3])), 1.0 / 32.0);
        let rt = ShuffleKind::RandomTransposition;
        assert!((pmf_one_step(rt, &p(&[2, 1, 3])) - 2.0 / 9.0).abs() < 1e-15);
        assert!((pmf_one_step(rt, &Permutation::identity(3)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pmf_one_step(rt, &p(&[2, 3, 1])), 0.0);
        let ri = ShuffleKind::RandomInsertion;
        // insert_1 on n=3: last card goes to the top
        assert_eq!(pmf_one_step(ri, &p(&[3, 1, 2])), 1.0 / 3.0);
        assert_eq!(pmf_one_step(ri, &p(&[2, 1, 3])), 0.0);
    }

    #[test]
    fn insertion_perms() {
        assert_eq!(insert_perm(4, 0), p(&[4, 1, 2, 3]));
        assert_eq!(insert_perm(4, 2), p(&[1, 2, 4, 3]));
        assert!(insert_perm(4, 3).is_identity());
        assert_eq!(inverse_insert_perm(4, 1), p(&[1, 3, 4, 2]));
        for i in 0..5 {
            assert_eq!(insert_perm(5, i).inverse(), inverse_insert_perm(5, i));
            assert_eq!(as_insertion(&insert_perm(5, i)), Some(i));
        }
    }

    #[test]
    fn one_step_pmfs_normalize_and_rs_support() {
        for n in 1..=6 {
            for kind in ShuffleKind::ALL {
                let total: f64 = enumerate_sn(n)
                    .unwrap()
                    .map(|s| pmf_one_step(kind, &s))
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "{kind} n={n}: {total}");
            }
            let support = enumerate_sn(n)
                .unwrap()
                .filter(|s| pmf_one_step(ShuffleKind::RiffleShuffle, s) > 0.0)
                .count();
            assert_eq!(support, (1usize << n) - n);
        }
    }

    #[test]
    fn rs_support_size_n7() {
        let support = enumerate_sn(7)
            .unwrap()
            .filter(|s| s.rising_sequences() <= 2)
            .count();
        assert_eq!(support, 128 - 7);
    }

    #[test]
    fn tstep_examples() {
        assert!((pmf_rs_tstep(&Permutation::identity(3), 2) - 0.3125).abs() < 1e-15);
        for s in enumerate_sn(4).unwrap() {
            let a = pmf_rs_tstep(&s, 1);
            let b = pmf_one_step(ShuffleKind::RiffleShuffle, &s);
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pmf_rs_tstep(&Permutation::identity(5), 0), 1.0);
        assert_eq!(pmf_rs_tstep(&p(&[2, 1, 3]), 0), 0.0);
        let exact = pmf_rs_tstep_exact(&Permutation::identity(3), 2);
        assert_eq!(exact, BigRational::new(20.into(), 64.into()));
    }

    #[test]
    fn tstep_normalizes() {
        for n in 1..=6 {
            for t in 0..=10 {
                let total: f64 = enumerate_sn(n).unwrap().map(|s| pmf_rs_tstep(&s, t)).sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} t={t}: {total}");
            }
        }
    }

    #[test]
    fn tstep_for_huge_t_is_uniform() {
        let q = pmf_rs_tstep(&p(&[3, 2, 1]), 5000);
        assert!((q - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn samplers_match_exact_pmfs() {
        let mut rng = seeded(11);
        let n = 3;
        for kind in ShuffleKind::ALL {
            let exact: Vec<f64> = enumerate_sn(n)
                .unwrap()
                .map(|s| pmf_one_step(kind, &s))
                .collect();
            let tv = empirical_tv(n, 1_000_000, || sample_step(kind, n, &mut rng), &exact);
            assert!(tv < 0.01, "{kind}: tv = {tv}");
        }
        assert!(sample_rs_geometric(1, &mut rng).is_identity());
        assert!(sample_rs_gsr(1, &mut rng).is_identity());
        assert!(sample_step(ShuffleKind::RiffleShuffle, 1, &mut rng).is_identity());
    }

    #[test]
    fn geometric_sampler_matches_formula_n4() {
        let mut rng = seeded(12);
        let exact: Vec<f64> = enumerate_sn(4)
            .unwrap()
            .map(|s| pmf_one_step(ShuffleKind::RiffleShuffle, &s))
            .collect();
        let tv = empirical_tv(4, 1_000_000, || sample_rs_geometric(4, &mut rng), &exact);
        assert!(tv < 0.01, "tv = {tv}");
    }

    #[test]
    fn trajectory_invariants_and_json() {
        let mut rng = seeded(5);
        let x0 = ObjectList::from_scalars(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let empty = forward_trajectory(&x0, ShuffleKind::RiffleShuffle, 0, &mut rng);
        assert_eq!(empty.states, vec![x0.clone()]);
        assert!(empty.moves.is_empty());

        for kind in ShuffleKind::ALL {
            let tr = forward_trajectory(&x0, kind, 6, &mut rng);
            assert_eq!(tr.states.len(), 7);
            for t in 1..=6 {
                assert_eq!(
                    tr.states[t],
                    tr.states[t - 1].permuted(&tr.moves[t - 1]).unwrap()
                );
                assert_eq!(tr.states[t], x0.permuted(&tr.cumulative(t)).unwrap());
            }
            let back = tr.states[6].permuted(&tr.move_between(6, 2)).unwrap();
            assert_eq!(back, tr.states[2]);

            let slim = tr.to_json(false);
            assert!(slim.get("states").is_none());
            assert_eq!(slim["T"], 6);
            assert_eq!(Trajectory::from_json(&slim, Some(&x0)).unwrap(), tr);
            assert_eq!(Trajectory::from_json(&tr.to_json(true), None).unwrap(), tr);
        }
    }
}
