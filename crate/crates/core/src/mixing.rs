//! Mixing analytics for the riffle shuffle: Eulerian numbers, exact total
//! variation distances between t-step marginals, cut-off times and the
//! denoising-schedule planner.
//!
//! Probabilities at `n = 100, t = 15` involve `2^1500`, so every quantity is
//! carried as a log ratio to the uniform law (see
//! [`crate::shuffles::log_ratio_to_uniform`]) and differences of nearly equal
//! terms go through `expm1`.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shuffles::{ln_factorial, log_ratio_to_uniform, ShuffleKind};

/// Exact big-integer rows are kept up to this `n`.
pub const MAX_EXACT_EULERIAN_N: usize = 64;

/// Row `n` of the Eulerian triangle: `A(n, r)` = number of permutations of
/// `[n]` with exactly `r` rising sequences, `r = 1..=n`.
#[derive(Clone, Debug)]
pub struct EulerianTable {
    n: usize,
    exact: Option<Vec<BigUint>>,
    ln_counts: Vec<f64>,
    ln_n_factorial: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn exact_row(n: usize) -> Vec<BigUint> {
    let mut row = vec![BigUint::from(1u32)];
    for m in 2..=n {
        let mut next = vec![BigUint::zero(); m];
        for r in 1..=m {
            let mut v = BigUint::zero();
            if r < m {
                v += &row[r - 1] * BigUint::from(r);
            }
            if r >= 2 {
                v += &row[r - 2] * BigUint::from(m - r + 1);
            }
            next[r - 1] = v;
        }
        row = next;
    }
    row
}

fn log_row(n: usize) -> Vec<f64> {
    let mut row = vec![0.0f64];
    for m in 2..=n {
        let mut next = vec![f64::NEG_INFINITY; m];
        for r in 1..=m {
            let stay = if r < m {
                (r as f64).ln() + row[r - 1]
            } else {
                f64::NEG_INFINITY
            };
            let grow = if r >= 2 {
                ((m - r + 1) as f64).ln() + row[r - 2]
            } else {
                f64::NEG_INFINITY
            };
            next[r - 1] = log_add_exp(stay, grow);
        }
        row = next;
    }
    row
}

impl EulerianTable {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::OutOfRange {
                n,
                min: 1,
                max: usize::MAX,
            });
        }
        let (exact, ln_counts) = if n <= MAX_EXACT_EULERIAN_N {
            let exact = exact_row(n);
            let logs = exact
                .iter()
                .map(|a| a.to_f64().expect("64! fits in f64").ln())
                .collect();
            (Some(exact), logs)
        } else {
            (None, log_row(n))
        };
        Ok(EulerianTable {
            n,
            exact,
            ln_counts,
            ln_n_factorial: ln_factorial(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Exact counts; refused above [`MAX_EXACT_EULERIAN_N`].
    pub fn exact_counts(&self) -> Result<&[BigUint]> {
        self.exact.as_deref().ok_or(Error::OutOfRange {
            n: self.n,
            min: 1,
            max: MAX_EXACT_EULERIAN_N,
        })
    }

    /// `ln A(n, r)` for `r = 1..=n` (index `r - 1`).
    pub fn ln_counts(&self) -> &[f64] {
        &self.ln_counts
    }

    /// `ln(A(n, r) / n!)`: the uniform mass of the rising-sequence class `r`.
    pub fn ln_class_weight(&self, r: usize) -> f64 {
        self.ln_counts[r - 1] - self.ln_n_factorial
    }

    /// `D_TV(q_RS^{(t)}, q_RS^{(t')})`, exact up to floating point, `O(n)`.
    pub fn tv_between(&self, t: u32, t_prime: u32) -> f64 {
        if t == t_prime {
            return 0.0;
        }
        let n = self.n;
        self.tv_from_log_ratios(
            |r| log_ratio_to_uniform(n, r, t),
            |r| log_ratio_to_uniform(n, r, t_prime),
        )
    }

    /// `D_TV(q_RS^{(t)}, u)`.
    pub fn tv_to_uniform(&self, t: u32) -> f64 {
        let n = self.n;
        self.tv_from_log_ratios(|r| log_ratio_to_uniform(n, r, t), |_| 0.0)
    }

    /// TV between two class functions given as log ratios to uniform.
    ///
    /// Half the L1 sum is accurate when the distance is small; near 1 it
    /// carries rounding of order `n * eps`, so there the distance is taken as
    /// one minus the overlap `sum min(p, q)`, which is tiny and accurate.
    fn tv_from_log_ratios<F, G>(&self, lhs: F, rhs: G) -> f64
    where
        F: Fn(usize) -> f64,
        G: Fn(usize) -> f64,
    {
        let mut half_l1 = 0.0;
        let mut overlap = 0.0;
        for r in 1..=self.n {
            let (a, b) = (lhs(r), rhs(r));
            let hi = a.max(b);
            if hi == f64::NEG_INFINITY {
                continue;
            }
            let w = self.ln_class_weight(r);
            // |e^a - e^b| = e^hi (1 - e^{-|a-b|})
            half_l1 += (w + hi).exp() * -(-(a - b).abs()).exp_m1();
            overlap += (w + a.min(b)).exp();
        }
        half_l1 *= 0.5;
        let tv = if half_l1 > 0.5 {
            1.0 - overlap
        } else {
            half_l1
        };
        tv.clamp(0.0, 1.0)
    }
}

pub fn eulerian(n: usize) -> Result<EulerianTable> {
    EulerianTable::new(n)
}

pub fn tv_rs_between(n: usize, t: u32, t_prime: u32) -> Result<f64> {
    Ok(EulerianTable::new(n)?.tv_between(t, t_prime))
}

pub fn tv_rs_to_uniform(n: usize, t: u32) -> Result<f64> {
    Ok(EulerianTable::new(n)?.tv_to_uniform(t))
}

/// Analytic cut-off time: `n/2 ln n` (RT), `n ln n` (RI), `3/2 log2 n` (RS).
pub fn cutoff_time(kind: ShuffleKind, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::OutOfRange {
            n,
            min: 2,
            max: usize::MAX,
        });
    }
    let nf = n as f64;
    Ok(match kind {
        ShuffleKind::RandomTransposition => 0.5 * nf * nf.ln(),
        ShuffleKind::RandomInsertion => nf * nf.ln(),
        ShuffleKind::RiffleShuffle => 1.5 * nf.log2(),
    })
}

/// Strictly increasing timesteps `0 = t_0 < .. < t_k = T`, `k >= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct DenoisingSchedule {
    steps: Vec<u32>,
}

impl DenoisingSchedule {
    pub fn new(steps: Vec<u32>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Config(
                "a denoising schedule needs at least two timesteps".into(),
            ));
        }
        if steps[0] != 0 {
            return Err(Error::Config("a denoising schedule must start at 0".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "denoising schedule {steps:?} is not strictly increasing"
            )));
        }
        Ok(DenoisingSchedule { steps })
    }

    /// `[0, 1, .., T]`: no merged steps.
    pub fn unit(horizon: u32) -> Result<Self> {
        Self::new((0..=horizon).collect())
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    /// `T`.
    pub fn horizon(&self) -> u32 {
        *self.steps.last().unwrap()
    }

    /// `k`, the number of reverse transitions.
    pub fn intervals(&self) -> usize {
        self.steps.len() - 1
    }

    /// `(t_{i-1}, t_i)` for `i = 1..=k`.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.steps.windows(2).map(|w| (w[0], w[1]))
    }

    /// True when some reverse transition spans more than one forward step.
    pub fn is_merged(&self) -> bool {
        self.steps.windows(2).any(|w| w[1] - w[0] > 1)
    }
}

impl<'de> Deserialize<'de> for DenoisingSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let steps = Vec::<u32>::deserialize(d)?;
        DenoisingSchedule::new(steps).map_err(serde::de::Error::custom)
    }
}

/// Result of [`plan_schedule`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchedulePlan {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
    pub schedule: DenoisingSchedule,
    pub consecutive_tv: Vec<f64>,
}

/// Upper bound on the horizon search; TV to uniform is far below any
/// admissible threshold long before this.
const MAX_HORIZON: u32 = 4096;

/// Picks `T` and a denoising schedule for riffle shuffles on `n` cards.
///
/// `T` is the first `t` with `D_TV(q^{(t)}, u) <= eps_t`. The schedule is
/// built greedily from `T` down: from `t_i` the next timestep is the
/// `t < t_i` whose `D_TV(q^{(t)}, q^{(t_i)})` is closest to `gap` (ties go to
/// the smaller `t`). The walk jumps straight to 0 when `D_TV(q^{(0)},
/// q^{(t_i)}) <= gap`, when the closest `t` is 0, or when the closest
/// achievable distance already exceeds `2 * gap`; below the cut-off region
/// every split is nearly total, so further intermediate steps buy nothing.
pub fn plan_schedule(n: usize, eps_t: f64, gap: f64) -> Result<SchedulePlan> {
    if n < 2 {
        return Err(Error::OutOfRange {
            n,
            min: 2,
            max: usize::MAX,
        });
    }
    if !(eps_t > 0.0 && eps_t < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_T must lie in (0, 1), got {eps_t}"
        )));
    }
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gap must lie in (0, 1), got {gap}"
        )));
    }
    let table = EulerianTable::new(n)?;
    let horizon = (0..=MAX_HORIZON)
        .find(|&t| table.tv_to_uniform(t) <= eps_t)
        .ok_or_else(|| Error::InvalidArgument(format!("eps_T = {eps_t} not reached")))?;

    let mut rev = vec![horizon];
    let mut current = horizon;
    while current > 0 {
        if table.tv_between(0, current) <= gap {
            rev.push(0);
            break;
        }
        let (best, best_tv) = (0..current)
            .map(|t| (t, table.tv_between(t, current)))
            .min_by(|a, b| {
                (a.1 - gap)
                    .abs()
                    .total_cmp(&(b.1 - gap).abs())
                    .then(a.0.cmp(&b.0))
            })
            .expect("current > 0");
        if best == 0 || best_tv > 2.0 * gap {
            rev.push(0);
            break;
        }
        rev.push(best);
        current = best;
    }
    rev.reverse();
    let schedule = DenoisingSchedule::new(rev)?;
    let consecutive_tv = schedule
        .pairs()
        .map(|(a, b)| table.tv_between(a, b))
        .collect();
    Ok(SchedulePlan {
        n,
        horizon,
        schedule,
        consecutive_tv,
    })
}
