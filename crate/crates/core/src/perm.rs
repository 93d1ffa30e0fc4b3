//! Permutations of `[n]` in one-line notation and their action on object lists.
//!
//! Internally indices are 0-based; everything that crosses an I/O boundary
//! (JSON, CSV, CLI, `Display`) is 1-based.
//!
//! Conventions:
//! - `compose(a, b)` is function composition, `(a ∘ b)(i) = a(b(i))`.
//! - `apply(σ, X)` produces the list whose row `i` is row `σ(i)` of `X`.
//!
//! With these two choices `apply(a ∘ b, X) == apply(b, apply(a, X))`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest `n` for which [`enumerate_sn`] will enumerate the whole group.
pub const MAX_ENUMERATION_N: usize = 8;

/// A bijection on `{0, .., n-1}` stored in one-line notation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Builds a permutation from a 0-based one-line array, checking bijectivity.
    pub fn from_vec(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("empty permutation".into()));
        }
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(Error::InvalidPermutation(format!(
                    "{:?} is not a bijection on [{}]",
                    map, n
                )));
            }
            seen[v] = true;
        }
        Ok(Permutation { map })
    }

    /// Builds a permutation from 1-based one-line notation, as written on paper.
    pub fn from_one_based(values: &[usize]) -> Result<Self> {
        if values.contains(&0) {
            return Err(Error::InvalidPermutation(format!(
                "{:?} contains 0 in 1-based notation",
                values
            )));
        }
        Self::from_vec(values.iter().map(|v| v - 1).collect())
    }

    pub(crate) fn from_vec_unchecked(map: Vec<usize>) -> Self {
        debug_assert!(Self::from_vec(map.clone()).is_ok());
        Permutation { map }
    }

    /// The transposition swapping `i` and `j` (0-based). `i == j` gives the identity.
    pub fn transposition(n: usize, i: usize, j: usize) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.swap(i, j);
        Permutation { map }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.map.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.map
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.map.iter().map(|v| v + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        check_len(self.len(), other.len())?;
        Ok(Permutation {
            map: other.map.iter().map(|&j| self.map[j]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { map: inv }
    }

    /// Permutes a slice: `out[i] = items[self(i)]`.
    pub fn apply_slice<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        check_len(self.len(), items.len())?;
        Ok(self.map.iter().map(|&j| items[j].clone()).collect())
    }

    /// Number of positions `i` with `σ(i) > σ(i+1)`.
    pub fn descents(&self) -> usize {
        self.map.windows(2).filter(|w| w[0] > w[1]).count()
    }

    /// Number of rising sequences: maximal runs of consecutive values
    /// `v, v+1, ..` that appear at increasing positions.
    pub fn rising_sequences(&self) -> usize {
        // Value v+1 starts a new rising sequence exactly when it sits left of v.
        let pos = self.inverse();
        1 + pos.map.windows(2).filter(|w| w[1] < w[0]).count()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch { expected, got });
    }
    Ok(())
}

/// `a ∘ b`.
pub fn compose(a: &Permutation, b: &Permutation) -> Result<Permutation> {
    a.compose(b)
}

pub fn inverse(a: &Permutation) -> Permutation {
    a.inverse()
}

pub fn rising_sequences(sigma: &Permutation) -> usize {
    sigma.rising_sequences()
}

/// Row action on an object list: row `i` of the result is row `σ(i)` of `x`.
pub fn apply(sigma: &Permutation, x: &ObjectList) -> Result<ObjectList> {
    x.permuted(sigma)
}

/// Draws a uniformly random permutation (Fisher-Yates).
pub fn random_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    Permutation { map }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{:?}", self.to_one_based())
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", v + 1)?;
        }
        write!(f, ")")
    }
}

impl Serialize for Permutation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Permutation::from_one_based(&v).map_err(serde::de::Error::custom)
    }
}

/// Iterator over all of `S_n` in lexicographic order of one-line notation.
pub struct SnIter {
    next: Option<Vec<usize>>,
}

impl Iterator for SnIter {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        if next_lexicographic(&mut succ) {
            self.next = Some(succ);
        }
        Some(Permutation { map: current })
    }
}

fn next_lexicographic(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Enumerates `S_n` for `1 <= n <= 8`.
pub fn enumerate_sn(n: usize) -> Result<SnIter> {
    if n == 0 || n > MAX_ENUMERATION_N {
        return Err(Error::OutOfRange {
            n,
            min: 1,
            max: MAX_ENUMERATION_N,
        });
    }
    Ok(SnIter {
        next: Some((0..n).collect()),
    })
}

/// Dense index of a permutation in lexicographic order (Lehmer code).
/// Matches the position produced by [`enumerate_sn`].
pub fn lex_rank(sigma: &Permutation) -> usize {
    let n = sigma.len();
    let mut rank = 0usize;
    let mut used = vec![false; n];
    for i in 0..n {
        let v = sigma.map[i];
        let smaller = (0..v).filter(|&u| !used[u]).count();
        rank = rank * (n - i) + smaller;
        used[v] = true;
    }
    rank
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// A ranked list of `n` objects, each a `d`-dimensional real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectList {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl ObjectList {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "object list must be non-empty".into(),
            ));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "objects must have dimension >= 1".into(),
            ));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in &rows {
            check_len(d, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(ObjectList { n, d, data })
    }

    /// One scalar feature per object.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(
                "object list must be non-empty".into(),
            ));
        }
        check_len(n * d, data.len())?;
        Ok(ObjectList { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d)
    }

    pub fn permuted(&self, sigma: &Permutation) -> Result<ObjectList> {
        check_len(self.n, sigma.len())?;
        let mut data = Vec::with_capacity(self.data.len());
        for &j in sigma.as_slice() {
            data.extend_from_slice(self.row(j));
        }
        Ok(ObjectList {
            n: self.n,
            d: self.d,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    fn arb_perm(max_n: usize) -> impl Strategy<Value = Permutation> {
        (1..=max_n)
            .prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            .prop_map(|v| Permutation::from_vec(v).unwrap())
    }

    #[test]
    fn compose_examples() {
        let c = p(&[2, 3, 1]);
        assert_eq!(compose(&Permutation::identity(3), &c).unwrap(), c);
        assert_eq!(compose(&c, &c).unwrap(), p(&[3, 1, 2]));
        assert!(compose(&c, &Permutation::identity(4)).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(&Permutation::identity(5)), Permutation::identity(5));
        assert_eq!(inverse(&p(&[2, 3, 1])), p(&[3, 1, 2]));
    }

    #[test]
    fn compose_with_inverse_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..1000 {
            let n = 1 + k % 8;
            let s = random_uniform(n, &mut rng);
            assert!(compose(&s, &inverse(&s)).unwrap().is_identity());
            assert!(compose(&inverse(&s), &s).unwrap().is_identity());
        }
    }

    #[test]
    fn apply_examples() {
        let x = ObjectList::from_scalars(&[1.0, 2.0]).unwrap();
        assert_eq!(apply(&Permutation::identity(2), &x).unwrap(), x);
        let swapped = apply(&p(&[2, 1]), &x).unwrap();
        assert_eq!(swapped.as_flat(), &[2.0, 1.0]);
        assert!(apply(&Permutation::identity(3), &x).is_err());
    }

    #[test]
    fn action_homomorphism_on_s3() {
        // Pins the action order: apply(a ∘ b, X) == apply(b, apply(a, X)).
        let x = ObjectList::new(vec![vec![1.0, -1.0], vec![2.0, -2.0], vec![3.0, -3.0]]).unwrap();
        for a in enumerate_sn(3).unwrap() {
            for b in enumerate_sn(3).unwrap() {
                let lhs = apply(&compose(&a, &b).unwrap(), &x).unwrap();
                let rhs = apply(&b, &apply(&a, &x).unwrap()).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
        // and the other order is genuinely different somewhere
        let a = p(&[2, 1, 3]);
        let b = p(&[1, 3, 2]);
        let ab = apply(&compose(&a, &b).unwrap(), &x).unwrap();
        let a_then_b_other = apply(&a, &apply(&b, &x).unwrap()).unwrap();
        assert_ne!(ab, a_then_b_other);
    }

    #[test]
    fn rising_sequence_examples() {
        assert_eq!(p(&[1, 4, 2, 5, 3]).rising_sequences(), 2);
        assert_eq!(Permutation::identity(6).rising_sequences(), 1);
        assert_eq!(p(&[3, 2, 1]).rising_sequences(), 3);
    }

    #[test]
    fn enumerate_examples() {
        let one: Vec<_> = enumerate_sn(1).unwrap().collect();
        assert_eq!(one, vec![Permutation::identity(1)]);
        assert_eq!(enumerate_sn(4).unwrap().count(), 24);
        assert!(enumerate_sn(0).is_err());
        assert!(enumerate_sn(9).is_err());
        for (k, s) in enumerate_sn(5).unwrap().enumerate() {
            assert_eq!(lex_rank(&s), k);
        }
        let all: std::collections::HashSet<_> = enumerate_sn(6).unwrap().collect();
        assert_eq!(all.len(), 720);
    }

    #[test]
    fn random_uniform_is_uniform_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_uniform(1, &mut rng).is_identity());
        let draws = 1_000_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[lex_rank(&random_uniform(3, &mut rng))] += 1;
        }
        let tv: f64 = counts
            .iter()
            .map(|&c| (c as f64 / draws as f64 - 1.0 / 6.0).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv = {tv}");

        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            assert_eq!(random_uniform(7, &mut a), random_uniform(7, &mut b));
        }
    }

    #[test]
    fn json_is_one_based() {
        let s = p(&[2, 3, 1]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[2,3,1]");
        let back: Permutation = serde_json::from_str("[2,3,1]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Permutation>("[1,1,2]").is_err());
        assert!(serde_json::from_str::<Permutation>("[0,1]").is_err());
    }

    proptest! {
        #[test]
        fn group_laws(a in arb_perm(8), seed in any::<u64>()) {
            let n = a.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_uniform(n, &mut rng);
            let c = random_uniform(n, &mut rng);
            let id = Permutation::identity(n);
            let ab_c = compose(&compose(&a, &b).unwrap(), &c).unwrap();
            let a_bc = compose(&a, &compose(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            prop_assert_eq!(compose(&a, &id).unwrap(), a.clone());
            prop_assert_eq!(compose(&id, &a).unwrap(), a.clone());
            prop_assert_eq!(inverse(&inverse(&a)), a.clone());
        }

        #[test]
        fn rising_sequences_bounds(a in arb_perm(8)) {
            let r = a.rising_sequences();
            prop_assert!(r >= 1 && r <= a.len());
            prop_assert_eq!(r == 1, a.is_identity());
            // rising sequences of σ = 1 + descents of σ⁻¹
            prop_assert_eq!(r, 1 + a.inverse().descents());
        }
    }
}
