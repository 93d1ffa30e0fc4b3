//! Reverse-transition families over `S_n`.
//!
//! | kind | parameters | support |
//! |------|------------|---------|
//! | IT   | `s ∈ R^n`, `τ` | identity and transpositions |
//! | II   | `s ∈ R^n` | `inverse_insert_i` (card `i` to the bottom) |
//! | IRS  | `s ∈ R^n` | concatenations of two increasing runs (≤ 1 descent) |
//! | PL   | `s ∈ R^n` | all of `S_n` |
//! | GPL  | `S ∈ R^{n×n}` | all of `S_n` |
//!
//! A sampled `σ` acts through [`crate::perm::apply`]: position `i` of the
//! result receives object `σ(i)`. For PL, `σ(1)` is drawn first from
//! `softmax(s)`; GPL uses row `i` of `S` for position `i`.
//!
//! All probabilities are accumulated in log space. Scores below
//! [`SCORE_FLOOR`] (including `-inf`) are clamped to it on construction.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;
use crate::shuffles::inverse_insert_perm;

/// Finite stand-in for `-inf` scores.
pub const SCORE_FLOOR: f64 = -1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReverseKind {
    #[serde(rename = "IT")]
    InverseTransposition,
    #[serde(rename = "II")]
    InverseInsertion,
    #[serde(rename = "IRS")]
    InverseRiffle,
    #[serde(rename = "PL")]
    PlackettLuce,
    #[serde(rename = "GPL")]
    GeneralizedPlackettLuce,
}

impl ReverseKind {
    pub const ALL: [ReverseKind; 5] = [
        ReverseKind::InverseTransposition,
        ReverseKind::InverseInsertion,
        ReverseKind::InverseRiffle,
        ReverseKind::PlackettLuce,
        ReverseKind::GeneralizedPlackettLuce,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ReverseKind::InverseTransposition => "IT",
            ReverseKind::InverseInsertion => "II",
            ReverseKind::InverseRiffle => "IRS",
            ReverseKind::PlackettLuce => "PL",
            ReverseKind::GeneralizedPlackettLuce => "GPL",
        }
    }

    /// PL and GPL put mass on every permutation, so merged reverse steps are
    /// admissible only for them.
    pub fn has_full_support(self) -> bool {
        matches!(
            self,
            ReverseKind::PlackettLuce | ReverseKind::GeneralizedPlackettLuce
        )
    }
}

impl fmt::Display for ReverseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ReverseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IT" => Ok(ReverseKind::InverseTransposition),
            "II" => Ok(ReverseKind::InverseInsertion),
            "IRS" => Ok(ReverseKind::InverseRiffle),
            "PL" => Ok(ReverseKind::PlackettLuce),
            "GPL" => Ok(ReverseKind::GeneralizedPlackettLuce),
            other => Err(Error::InvalidArgument(format!(
                "unknown reverse family {other:?}"
            ))),
        }
    }
}

/// Parameters of one reverse-transition distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ReverseParams {
    #[serde(rename = "IT")]
    InverseTransposition { s: Vec<f64>, tau: f64 },
    #[serde(rename = "II")]
    InverseInsertion { s: Vec<f64> },
    #[serde(rename = "IRS")]
    InverseRiffle { s: Vec<f64> },
    #[serde(rename = "PL")]
    PlackettLuce { s: Vec<f64> },
    #[serde(rename = "GPL")]
    GeneralizedPlackettLuce {
        #[serde(rename = "S")]
        scores: Vec<Vec<f64>>,
    },
}

fn sanitize(v: f64) -> Result<f64> {
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::InvalidArgument(format!("score {v} is not allowed")));
    }
    Ok(v.max(SCORE_FLOOR))
}

fn sanitize_vec(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("scores must be non-empty".into()));
    }
    v.into_iter().map(sanitize).collect()
}

pub(crate) fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln φ(x)` for the logistic sigmoid, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sample_logits<R: Rng + ?Sized>(logits: &[f64], candidates: &[usize], rng: &mut R) -> usize {
    let m = candidates
        .iter()
        .map(|&c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = candidates.iter().map(|&c| (logits[c] - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    candidates.len() - 1
}

/// Orders `(σ, log p)` pairs by decreasing probability, ties by one-line order.
fn rank_order(a: &(Permutation, f64), b: &(Permutation, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl ReverseParams {
    pub fn inverse_transposition(s: Vec<f64>, tau: f64) -> Result<Self> {
        Ok(ReverseParams::InverseTransposition {
            s: sanitize_vec(s)?,
            tau: sanitize(tau)?,
        })
    }

    pub fn inverse_insertion(s: Vec<f64>) -> Result<Self> {
        Ok(ReverseParams::InverseInsertion {
            s: sanitize_vec(s)?,
        })
    }

    pub fn inverse_riffle(s: Vec<f64>) -> Result<Self> {
        Ok(ReverseParams::InverseRiffle {
            s: sanitize_vec(s)?,
        })
    }

    pub fn plackett_luce(s: Vec<f64>) -> Result<Self> {
        Ok(ReverseParams::PlackettLuce {
            s: sanitize_vec(s)?,
        })
    }

    /// `scores[i][j]`: preference for placing object `j` at position `i`.
    pub fn generalized_plackett_luce(scores: Vec<Vec<f64>>) -> Result<Self> {
        let n = scores.len();
        if n == 0 || scores.iter().any(|row| row.len() != n) {
            return Err(Error::ShapeMismatch {
                op: "GPL",
                detail: "score matrix must be square and non-empty".into(),
            });
        }
        let scores = scores
            .into_iter()
            .map(sanitize_vec)
            .collect::<Result<Vec<_>>>()?;
        Ok(ReverseParams::GeneralizedPlackettLuce { scores })
    }

    /// Re-applies the construction checks; used after deserialization.
    pub fn validated(self) -> Result<Self> {
        match self {
            ReverseParams::InverseTransposition { s, tau } => Self::inverse_transposition(s, tau),
            ReverseParams::InverseInsertion { s } => Self::inverse_insertion(s),
            ReverseParams::InverseRiffle { s } => Self::inverse_riffle(s),
            ReverseParams::PlackettLuce { s } => Self::plackett_luce(s),
            ReverseParams::GeneralizedPlackettLuce { scores } => {
                Self::generalized_plackett_luce(scores)
            }
        }
    }

    pub fn kind(&self) -> ReverseKind {
        match self {
            ReverseParams::InverseTransposition { .. } => ReverseKind::InverseTransposition,
            ReverseParams::InverseInsertion { .. } => ReverseKind::InverseInsertion,
            ReverseParams::InverseRiffle { .. } => ReverseKind::InverseRiffle,
            ReverseParams::PlackettLuce { .. } => ReverseKind::PlackettLuce,
            ReverseParams::GeneralizedPlackettLuce { .. } => ReverseKind::GeneralizedPlackettLuce,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ReverseParams::InverseTransposition { s, .. }
            | ReverseParams::InverseInsertion { s }
            | ReverseParams::InverseRiffle { s }
            | ReverseParams::PlackettLuce { s } => s.len(),
            ReverseParams::GeneralizedPlackettLuce { scores } => scores.len(),
        }
    }

    /// Exact `ln p(σ)`; `-inf` off the family's support.
    pub fn log_prob(&self, sigma: &Permutation) -> Result<f64> {
        let n = self.n();
        if sigma.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: sigma.len(),
            });
        }
        let perm = sigma.as_slice();
        Ok(match self {
            ReverseParams::InverseTransposition { s, tau } => it_log_prob(s, *tau, sigma),
            ReverseParams::InverseInsertion { s } => match inverse_insertion_index(sigma) {
                Some(i) => s[i] - logsumexp(s.iter().copied()),
                None => f64::NEG_INFINITY,
            },
            ReverseParams::InverseRiffle { s } => irs_log_prob(s, sigma),
            ReverseParams::PlackettLuce { s } => {
                // suffix log-sum-exp accumulated from the back
                let mut acc = 0.0;
                let mut tail = f64::NEG_INFINITY;
                for &v in perm.iter().rev() {
                    tail = log_add_exp(tail, s[v]);
                    acc += s[v] - tail;
                }
                acc
            }
            ReverseParams::GeneralizedPlackettLuce { scores } => {
                let mut acc = 0.0;
                for i in 0..n {
                    let row = &scores[i];
                    let rest = logsumexp(perm[i..].iter().map(|&c| row[c]));
                    acc += row[perm[i]] - rest;
                }
                acc
            }
        })
    }

    /// `ln(1 - p(σ))`, accurate even when `p(σ)` rounds to 1.
    ///
    /// For PL and GPL this is `ln P(some row picks a different object)`,
    /// summed over the first deviating row in log space; other families fall
    /// back to `log1m_exp(log_prob)`.
    pub fn log_prob_complement(&self, sigma: &Permutation) -> Result<f64> {
        let lp = self.log_prob(sigma)?;
        let row_scores = |i: usize, c: usize| -> f64 {
            match self {
                ReverseParams::PlackettLuce { s } => s[c],
                ReverseParams::GeneralizedPlackettLuce { scores } => scores[i][c],
                _ => unreachable!(),
            }
        };
        if !self.kind().has_full_support() {
            return Ok(log1m_exp(lp));
        }
        let perm = sigma.as_slice();
        let n = perm.len();
        let mut prefix_ok = 0.0; // ln P(rows < i all follow σ)
        let mut terms = Vec::with_capacity(n);
        for i in 0..n.saturating_sub(1) {
            let all = logsumexp(
                perm[i..]
                    .iter()
                    .map(|&c| row_scores(i, c))
                    .collect::<Vec<_>>(),
            );
            let others = logsumexp(
                perm[i + 1..]
                    .iter()
                    .map(|&c| row_scores(i, c))
                    .collect::<Vec<_>>(),
            );
            terms.push(prefix_ok + others - all);
            prefix_ok += row_scores(i, perm[i]) - all;
        }
        Ok(logsumexp(terms))
    }

    /// One exact draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Permutation {
        let n = self.n();
        match self {
            ReverseParams::InverseTransposition { s, tau } => {
                if n == 1 || rng.gen::<f64>() >= log_sigmoid(*tau).exp() {
                    return Permutation::identity(n);
                }
                let all: Vec<usize> = (0..n).collect();
                let i = sample_logits(s, &all, rng);
                let rest: Vec<usize> = (0..n).filter(|&k| k != i).collect();
                let j = rest[sample_logits(s, &rest, rng)];
                Permutation::transposition(n, i, j)
            }
            ReverseParams::InverseInsertion { s } => {
                let all: Vec<usize> = (0..n).collect();
                inverse_insert_perm(n, sample_logits(s, &all, rng))
            }
            ReverseParams::InverseRiffle { s } => {
                let left: Vec<bool> = s
                    .iter()
                    .map(|&v| rng.gen::<f64>() < log_sigmoid(v).exp())
                    .collect();
                irs_word_to_perm(&left)
            }
            ReverseParams::PlackettLuce { s } => {
                let mut remaining: Vec<usize> = (0..n).collect();
                let mut out = Vec::with_capacity(n);
                while !remaining.is_empty() {
                    let k = sample_logits(s, &remaining, rng);
                    out.push(remaining.remove(k));
                }
                Permutation::from_vec_unchecked(out)
            }
            ReverseParams::GeneralizedPlackettLuce { scores } => {
                let mut remaining: Vec<usize> = (0..n).collect();
                let mut out = Vec::with_capacity(n);
                for row in scores {
                    let k = sample_logits(row, &remaining, rng);
                    out.push(remaining.remove(k));
                }
                Permutation::from_vec_unchecked(out)
            }
        }
    }

    /// The `k` most probable permutations, most probable first.
    ///
    /// IT, II and IRS are exact. PL and GPL run a beam search over the score
    /// rows that keeps `inner_beam` prefixes per row; it is exact once
    /// `inner_beam` covers every prefix (in particular `inner_beam >= n!`).
    pub fn top_k(&self, k: usize, inner_beam: usize) -> Result<Vec<(Permutation, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if inner_beam < k {
            return Err(Error::InvalidArgument(format!(
                "inner beam {inner_beam} must be >= k = {k}"
            )));
        }
        let n = self.n();
        let mut ranked: Vec<(Permutation, f64)> = match self {
            ReverseParams::InverseTransposition { .. } => {
                let mut support = vec![Permutation::identity(n)];
                for i in 0..n {
                    for j in i + 1..n {
                        support.push(Permutation::transposition(n, i, j));
                    }
                }
                self.score_all(support)
            }
            ReverseParams::InverseInsertion { .. } => {
                self.score_all((0..n).map(|i| inverse_insert_perm(n, i)).collect())
            }
            ReverseParams::InverseRiffle { s } => {
                let mut cands = irs_k_best_words(s, k + n + 1);
                cands.push(Permutation::identity(n));
                cands.sort();
                cands.dedup();
                self.score_all(cands)
            }
            ReverseParams::PlackettLuce { s } => beam_rows(n, |_, c| s[c], inner_beam),
            ReverseParams::GeneralizedPlackettLuce { scores } => {
                beam_rows(n, |i, c| scores[i][c], inner_beam)
            }
        };
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        Ok(ranked)
    }

    fn score_all(&self, perms: Vec<Permutation>) -> Vec<(Permutation, f64)> {
        perms
            .into_iter()
            .map(|p| {
                let lp = self.log_prob(&p).expect("sizes agree");
                (p, lp)
            })
            .collect()
    }
}

fn it_log_prob(s: &[f64], tau: f64, sigma: &Permutation) -> f64 {
    let n = s.len();
    if sigma.is_identity() {
        return if n == 1 { 0.0 } else { log_sigmoid(-tau) };
    }
    let moved: Vec<usize> = (0..n).filter(|&i| sigma.get(i) != i).collect();
    if moved.len() != 2 {
        return f64::NEG_INFINITY;
    }
    let (i, j) = (moved[0], moved[1]);
    let total = logsumexp(s.iter().copied());
    let without = |x: usize| {
        logsumexp(
            s.iter()
                .enumerate()
                .filter(move |(k, _)| *k != x)
                .map(|(_, &v)| v),
        )
    };
    // P(i then j) + P(j then i) = p_i p_j (1/(1-p_i) + 1/(1-p_j))
    let inv_rest_i = total - without(i);
    let inv_rest_j = total - without(j);
    log_sigmoid(tau) + (s[i] - total) + (s[j] - total) + log_add_exp(inv_rest_i, inv_rest_j)
}

/// `Some(i)` when `sigma` is `inverse_insert_i`.
pub fn inverse_insertion_index(sigma: &Permutation) -> Option<usize> {
    let n = sigma.len();
    let i = sigma.get(n - 1);
    (inverse_insert_perm(n, i) == *sigma).then_some(i)
}

/// Stack the left pile (objects flagged `true`, in index order) over the
/// right pile (the rest, in index order).
pub fn irs_word_to_perm(left: &[bool]) -> Permutation {
    let mut order: Vec<usize> = (0..left.len()).filter(|&i| left[i]).collect();
    order.extend((0..left.len()).filter(|&i| !left[i]));
    Permutation::from_vec_unchecked(order)
}

fn irs_log_prob(s: &[f64], sigma: &Permutation) -> f64 {
    let n = s.len();
    let lp_left: Vec<f64> = s.iter().map(|&v| log_sigmoid(v)).collect();
    let lp_right: Vec<f64> = s.iter().map(|&v| log_sigmoid(-v)).collect();
    if sigma.is_identity() {
        // n + 1 monotone words L^a R^{n-a} all stack to the identity
        let words =
            (0..=n).map(|a| lp_left[..a].iter().sum::<f64>() + lp_right[a..].iter().sum::<f64>());
        return logsumexp(words.collect::<Vec<_>>());
    }
    let perm = sigma.as_slice();
    let descents: Vec<usize> = (0..n - 1).filter(|&i| perm[i] > perm[i + 1]).collect();
    if descents.len() != 1 {
        return f64::NEG_INFINITY;
    }
    let cut = descents[0] + 1;
    perm[..cut].iter().map(|&v| lp_left[v]).sum::<f64>()
        + perm[cut..].iter().map(|&v| lp_right[v]).sum::<f64>()
}

#[derive(PartialEq)]
struct FlipSet {
    cost: f64,
    members: Vec<usize>,
}

impl Eq for FlipSet {}

impl PartialOrd for FlipSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FlipSet {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.members.cmp(&self.members))
    }
}

/// Distinct non-identity permutations produced by the `count` most probable
/// binary pile assignments.
///
/// Flipping object `i` away from its preferred pile costs `|s_i|` nats;
/// subsets of flips are generated in increasing total cost (each subset is
/// reached once, from its prefix along the cost order).
fn irs_k_best_words(s: &[f64], count: usize) -> Vec<Permutation> {
    let n = s.len();
    let preferred: Vec<bool> = s.iter().map(|&v| v >= 0.0).collect();
    let mut by_cost: Vec<usize> = (0..n).collect();
    by_cost.sort_by(|&a, &b| s[a].abs().total_cmp(&s[b].abs()).then(a.cmp(&b)));
    let costs: Vec<f64> = by_cost.iter().map(|&i| s[i].abs()).collect();

    let word_of = |members: &[usize]| {
        let mut w = preferred.clone();
        for &m in members {
            let obj = by_cost[m];
            w[obj] = !w[obj];
        }
        irs_word_to_perm(&w)
    };

    let mut out = Vec::new();
    let mut emitted = 0usize;
    let push = |p: Permutation, out: &mut Vec<Permutation>| {
        if !p.is_identity() {
            out.push(p);
        }
    };
    push(word_of(&[]), &mut out);
    emitted += 1;
    let mut heap = BinaryHeap::new();
    if n > 0 {
        heap.push(FlipSet {
            cost: costs[0],
            members: vec![0],
        });
    }
    while emitted < count {
        let Some(top) = heap.pop() else { break };
        push(word_of(&top.members), &mut out);
        emitted += 1;
        let last = *top.members.last().unwrap();
        if last + 1 < n {
            let mut extend = top.members.clone();
            extend.push(last + 1);
            heap.push(FlipSet {
                cost: top.cost + costs[last + 1],
                members: extend,
            });
            let mut shift = top.members;
            *shift.last_mut().unwrap() = last + 1;
            heap.push(FlipSet {
                cost: top.cost - costs[last] + costs[last + 1],
                members: shift,
            });
        }
    }
    out
}

/// Row-by-row beam search for PL/GPL modes. `score(i, c)` is the logit of
/// object `c` at position `i`.
fn beam_rows<F>(n: usize, score: F, width: usize) -> Vec<(Permutation, f64)>
where
    F: Fn(usize, usize) -> f64,
{
    struct Prefix {
        order: Vec<usize>,
        used: Vec<bool>,
        lp: f64,
    }
    let mut beam = vec![Prefix {
        order: Vec::with_capacity(n),
        used: vec![false; n],
        lp: 0.0,
    }];
    for i in 0..n {
        let mut next: Vec<Prefix> = Vec::with_capacity(beam.len() * (n - i));
        for p in &beam {
            let remaining: Vec<usize> = (0..n).filter(|&c| !p.used[c]).collect();
            let norm = logsumexp(remaining.iter().map(|&c| score(i, c)).collect::<Vec<_>>());
            for &c in &remaining {
                let mut order = p.order.clone();
                order.push(c);
                let mut used = p.used.clone();
                used[c] = true;
                next.push(Prefix {
                    order,
                    used,
                    lp: p.lp + score(i, c) - norm,
                });
            }
        }
        next.sort_by(|a, b| b.lp.total_cmp(&a.lp).then_with(|| a.order.cmp(&b.order)));
        next.truncate(width);
        beam = next;
    }
    beam.into_iter()
        .map(|p| (Permutation::from_vec_unchecked(p.order), p.lp))
        .collect()
}

/// GPL parameters concentrated on `sigma`: `S[i][σ(i)] = 0`, every other
/// entry `-m`. The mass at `sigma` is at least `(1 - (n-1) e^{-m})^n`.
pub fn delta_gpl(sigma: &Permutation, m: f64) -> Result<ReverseParams> {
    if m.is_nan() || m < 0.0 {
        return Err(Error::InvalidArgument(format!("M must be >= 0, got {m}")));
    }
    let n = sigma.len();
    let scores = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if j == sigma.get(i) { 0.0 } else { -m })
                .collect()
        })
        .collect();
    ReverseParams::generalized_plackett_luce(scores)
}

/// Merges duplicate permutations keeping the larger log-probability.
pub fn merge_max(items: impl IntoIterator<Item = (Permutation, f64)>) -> Vec<(Permutation, f64)> {
    let mut best: HashMap<Permutation, f64> = HashMap::new();
    for (p, lp) in items {
        best.entry(p)
            .and_modify(|v| {
                if lp > *v {
                    *v = lp
                }
            })
            .or_insert(lp);
    }
    let mut out: Vec<_> = best.into_iter().collect();
    out.sort_by(rank_order);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::{enumerate_sn, factorial, lex_rank};
    use crate::rng::seeded;
    use crate::shuffles::{pmf_one_step, ShuffleKind};
    use rand::Rng;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    fn random_params<R: Rng>(kind: ReverseKind, n: usize, rng: &mut R) -> ReverseParams {
        let mut vec =
            |scale: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        match kind {
            ReverseKind::InverseTransposition => {
                let s = vec(2.0);
                ReverseParams::inverse_transposition(s, 0.7).unwrap()
            }
            ReverseKind::InverseInsertion => ReverseParams::inverse_insertion(vec(2.0)).unwrap(),
            ReverseKind::InverseRiffle => ReverseParams::inverse_riffle(vec(2.0)).unwrap(),
            ReverseKind::PlackettLuce => ReverseParams::plackett_luce(vec(2.0)).unwrap(),
            ReverseKind::GeneralizedPlackettLuce => {
                let rows = (0..n).map(|_| vec(2.0)).collect();
                ReverseParams::generalized_plackett_luce(rows).unwrap()
            }
        }
    }

    fn all_log_probs(params: &ReverseParams) -> Vec<f64> {
        enumerate_sn(params.n())
            .unwrap()
            .map(|s| params.log_prob(&s).unwrap())
            .collect()
    }

    #[test]
    fn log_prob_examples() {
        let tau = 0.4f64;
        let it = ReverseParams::inverse_transposition(vec![0.1, -0.3, 0.5], tau).unwrap();
        let want = (1.0 - 1.0 / (1.0 + (-tau).exp())).ln();
        assert!((it.log_prob(&Permutation::identity(3)).unwrap() - want).abs() < 1e-15);

        let pl = ReverseParams::plackett_luce(vec![0.3; 4]).unwrap();
        for s in enumerate_sn(4).unwrap() {
            assert!((pl.log_prob(&s).unwrap() - (1.0f64 / 24.0).ln()).abs() < 1e-12);
        }

        let irs = ReverseParams::inverse_riffle(vec![0.0; 3]).unwrap();
        let lp = irs.log_prob(&Permutation::identity(3)).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);

        assert!(pl.log_prob(&Permutation::identity(3)).is_err());
    }

    #[test]
    fn normalization_all_families() {
        let mut rng = seeded(3);
        for kind in ReverseKind::ALL {
            for n in 1..=5 {
                for _ in 0..3 {
                    let params = random_params(kind, n, &mut rng);
                    let total = logsumexp(all_log_probs(&params));
                    assert!(total.abs() < 1e-10, "{kind} n={n}: {total}");
                }
            }
        }
    }

    #[test]
    fn support_sets() {
        let n = 5;
        let mut rng = seeded(4);
        for s in enumerate_sn(n).unwrap() {
            let it = random_params(ReverseKind::InverseTransposition, n, &mut rng);
            let moved = (0..n).filter(|&i| s.get(i) != i).count();
            assert_eq!(
                it.log_prob(&s).unwrap() == f64::NEG_INFINITY,
                !(moved == 0 || moved == 2)
            );
            let ii = random_params(ReverseKind::InverseInsertion, n, &mut rng);
            let is_ii = (0..n).any(|i| inverse_insert_perm(n, i) == s);
            assert_eq!(ii.log_prob(&s).unwrap() > f64::NEG_INFINITY, is_ii);
            let irs = random_params(ReverseKind::InverseRiffle, n, &mut rng);
            assert_eq!(
                irs.log_prob(&s).unwrap() > f64::NEG_INFINITY,
                s.inverse().rising_sequences() <= 2
            );
            assert_eq!(s.inverse().rising_sequences() <= 2, s.descents() <= 1);
        }
    }

    #[test]
    fn irs_uniform_is_inverse_riffle() {
        for n in 1..=5 {
            let irs = ReverseParams::inverse_riffle(vec![0.0; n]).unwrap();
            for s in enumerate_sn(n).unwrap() {
                let a = irs.log_prob(&s).unwrap().exp();
                let b = pmf_one_step(ShuffleKind::RiffleShuffle, &s.inverse());
                assert!((a - b).abs() < 1e-15, "n={n} {s}");
            }
        }
    }

    #[test]
    fn irs_matches_word_enumeration() {
        let mut rng = seeded(8);
        for n in 1..=5 {
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let irs = ReverseParams::inverse_riffle(s.clone()).unwrap();
            let mut mass = vec![0.0; factorial(n)];
            for bits in 0u32..(1 << n) {
                let word: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
                let prob: f64 = (0..n)
                    .map(|i| {
                        let q = 1.0 / (1.0 + (-s[i]).exp());
                        if word[i] {
                            q
                        } else {
                            1.0 - q
                        }
                    })
                    .product();
                mass[lex_rank(&irs_word_to_perm(&word))] += prob;
            }
            for sigma in enumerate_sn(n).unwrap() {
                let lp = irs.log_prob(&sigma).unwrap();
                assert!((lp.exp() - mass[lex_rank(&sigma)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gpl_with_equal_rows_is_pl() {
        let mut rng = seeded(9);
        let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let pl = ReverseParams::plackett_luce(s.clone()).unwrap();
        let gpl = ReverseParams::generalized_plackett_luce(vec![s; 5]).unwrap();
        for sigma in enumerate_sn(5).unwrap() {
            let a = pl.log_prob(&sigma).unwrap();
            let b = gpl.log_prob(&sigma).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn samplers_match_pmfs() {
        let mut rng = seeded(10);
        let n = 4;
        for kind in ReverseKind::ALL {
            let params = random_params(kind, n, &mut rng);
            let exact: Vec<f64> = all_log_probs(&params).into_iter().map(f64::exp).collect();
            let draws = 1_000_000;
            let mut counts = vec![0usize; factorial(n)];
            for _ in 0..draws {
                counts[lex_rank(&params.sample(&mut rng))] += 1;
            }
            let tv: f64 = counts
                .iter()
                .zip(&exact)
                .map(|(&c, &q)| (c as f64 / draws as f64 - q).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.01, "{kind}: {tv}");
        }
    }

    #[test]
    fn pl_mode_is_descending_argsort() {
        let pl = ReverseParams::plackett_luce(vec![0.0, 5.0, 2.0]).unwrap();
        let top = pl.top_k(1, 1).unwrap();
        assert_eq!(top[0].0, p(&[2, 3, 1]));
        let mut rng = seeded(1);
        let mut counts = [0usize; 6];
        for _ in 0..20_000 {
            counts[lex_rank(&pl.sample(&mut rng))] += 1;
        }
        let argmax = (0..6).max_by_key(|&i| counts[i]).unwrap();
        assert_eq!(argmax, lex_rank(&p(&[2, 3, 1])));
        let single = ReverseParams::plackett_luce(vec![1.0]).unwrap();
        assert!(single.sample(&mut rng).is_identity());
    }

    #[test]
    fn top_k_exact_with_full_beam() {
        let mut rng = seeded(12);
        for kind in ReverseKind::ALL {
            for n in 1..=5 {
                let params = random_params(kind, n, &mut rng);
                let nf = factorial(n);
                let k = 5.min(nf);
                let got = params.top_k(k, nf.max(k)).unwrap();
                let mut brute: Vec<(Permutation, f64)> = enumerate_sn(n)
                    .unwrap()
                    .map(|s| {
                        let lp = params.log_prob(&s).unwrap();
                        (s, lp)
                    })
                    .filter(|(_, lp)| *lp > f64::NEG_INFINITY)
                    .collect();
                brute.sort_by(rank_order);
                brute.truncate(k);
                assert_eq!(got.len(), brute.len(), "{kind} n={n}");
                for (a, b) in got.iter().zip(&brute) {
                    assert_eq!(a.0, b.0, "{kind} n={n}");
                    assert!((a.1 - b.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn irs_top_k_for_larger_n() {
        let mut rng = seeded(13);
        let n = 8;
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let params = ReverseParams::inverse_riffle(s).unwrap();
        let mut brute: Vec<(Permutation, f64)> = enumerate_sn(n)
            .unwrap()
            .map(|s| {
                let lp = params.log_prob(&s).unwrap();
                (s, lp)
            })
            .filter(|(_, lp)| *lp > f64::NEG_INFINITY)
            .collect();
        brute.sort_by(rank_order);
        let got = params.top_k(30, 30).unwrap();
        for (a, b) in got.iter().zip(&brute) {
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn it_full_support_sums_to_one() {
        let mut rng = seeded(14);
        let params = random_params(ReverseKind::InverseTransposition, 5, &mut rng);
        let all = params.top_k(11, 11).unwrap();
        assert_eq!(all.len(), 11);
        let total: f64 = all.iter().map(|(_, lp)| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn top_k_argument_checks() {
        let pl = ReverseParams::plackett_luce(vec![0.0, 1.0]).unwrap();
        assert!(pl.top_k(0, 1).is_err());
        assert!(pl.top_k(3, 2).is_err());
    }

    #[test]
    fn delta_gpl_concentrates() {
        let mut rng = seeded(15);
        for n in 1..=6 {
            let sigma = crate::perm::random_uniform(n, &mut rng);
            let d = delta_gpl(&sigma, 30.0).unwrap();
            assert!(d.log_prob(&sigma).unwrap().exp() > 1.0 - 1e-9);
        }
        let sigma = p(&[3, 1, 5, 2, 4]);
        let d = delta_gpl(&sigma, 30.0).unwrap();
        for _ in 0..10_000 {
            assert_eq!(d.sample(&mut rng), sigma);
        }
        let flat = delta_gpl(&sigma, 0.0).unwrap();
        for s in enumerate_sn(5).unwrap() {
            assert!((flat.log_prob(&s).unwrap() - (1.0f64 / 120.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn pl_cannot_be_a_delta() {
        for mag in [1.0, 10.0, 100.0, 1000.0] {
            for n in 2..=6 {
                let s: Vec<f64> = (0..n).map(|i| -mag * i as f64).collect();
                let pl = ReverseParams::plackett_luce(s).unwrap();
                let mode = &pl.top_k(1, 1).unwrap()[0];
                let deficit = pl.log_prob_complement(&mode.0).unwrap();
                assert!(deficit > f64::NEG_INFINITY, "mag={mag} n={n}");
                assert!(deficit.is_finite());
            }
        }
    }

    #[test]
    fn complement_agrees_with_log_prob() {
        let mut rng = seeded(16);
        for kind in ReverseKind::ALL {
            let params = random_params(kind, 4, &mut rng);
            for s in enumerate_sn(4).unwrap() {
                let lp = params.log_prob(&s).unwrap();
                let c = params.log_prob_complement(&s).unwrap();
                assert!((c.exp() - (1.0 - lp.exp())).abs() < 1e-12, "{kind} {s}");
            }
        }
        let d = delta_gpl(&p(&[2, 1, 3]), 30.0).unwrap();
        let c = d.log_prob_complement(&p(&[2, 1, 3])).unwrap();
        // row 1 can deviate two ways, row 2 one way: ~3 e^-30
        assert!((c - (3.0f64.ln() - 30.0)).abs() < 1e-9);
    }

    #[test]
    fn sentinel_and_json() {
        let pl = ReverseParams::plackett_luce(vec![f64::NEG_INFINITY, 0.0]).unwrap();
        match &pl {
            ReverseParams::PlackettLuce { s } => assert_eq!(s[0], SCORE_FLOOR),
            _ => unreachable!(),
        }
        assert!(ReverseParams::plackett_luce(vec![f64::NAN]).is_err());
        let it = ReverseParams::inverse_transposition(vec![1.0, 2.0], 0.5).unwrap();
        let j = serde_json::to_string(&it).unwrap();
        assert_eq!(j, r#"{"kind":"IT","s":[1.0,2.0],"tau":0.5}"#);
        let gpl =
            ReverseParams::generalized_plackett_luce(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let j = serde_json::to_string(&gpl).unwrap();
        assert_eq!(j, r#"{"kind":"GPL","S":[[1.0,2.0],[3.0,4.0]]}"#);
        let back: ReverseParams = serde_json::from_str(&j).unwrap();
        assert_eq!(back, gpl);
        assert!(ReverseParams::generalized_plackett_luce(vec![vec![1.0]; 2]).is_err());
    }
}
