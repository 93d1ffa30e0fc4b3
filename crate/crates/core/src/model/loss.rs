//! Variational training objectives.
//!
//! For a trajectory and schedule `0 = t_0 < .. < t_k = T` the reverse move at
//! step `i` is the `σ'` with `X_{t_{i-1}} = apply(σ', X_{t_i})`. The
//! full-trajectory loss is `Σ_i -ln p_θ(σ'_i | X_{t_i}, t_i)`; the
//! random-timestep loss draws one `i` uniformly and multiplies by `k`.
//!
//! Both are reported without the θ-free part of the bound
//! (`ln n! + Σ_i ln q(X_{t_i} | X_{t_{i-1}})`), which is returned separately
//! as [`LossReport::constant`] when the merged forward kernel is known.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{ScoreNet, StepTerm};
use super::tape::Tensor;
use crate::error::{Error, Result};
use crate::mixing::DenoisingSchedule;
use crate::perm::ObjectList;
use crate::shuffles::{
    forward_trajectory, ln_factorial, pmf_one_step, pmf_rs_tstep, ShuffleKind, Trajectory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    FullTrajectory,
    RandomTimestep,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-trajectory" => Ok(LossKind::FullTrajectory),
            "random-timestep" => Ok(LossKind::RandomTimestep),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    /// Mean over trajectories of the summed reverse-step NLL.
    pub nll: f64,
    /// `ln n!` plus the mean forward log-likelihood; `None` when a merged
    /// step of RT or RI is involved.
    pub constant: Option<f64>,
    /// `k`.
    pub intervals: usize,
    pub trajectories: usize,
}

impl LossReport {
    pub fn nll_per_step(&self) -> f64 {
        self.nll / self.intervals as f64
    }
}

fn check_horizon(traj: &Trajectory, schedule: &DenoisingSchedule) -> Result<()> {
    if traj.horizon() != schedule.horizon() as usize {
        return Err(Error::Config(format!(
            "trajectory has {} steps but the schedule ends at {}",
            traj.horizon(),
            schedule.horizon()
        )));
    }
    Ok(())
}

/// `ln q(X_{t'} | X_t)` for the merged forward kernel, if it is known.
pub fn forward_log_q(traj: &Trajectory, t: u32, t_prime: u32) -> Option<f64> {
    let pi = traj.move_between(t as usize, t_prime as usize);
    let dt = t_prime - t;
    match traj.kind {
        ShuffleKind::RiffleShuffle => Some(pmf_rs_tstep(&pi, dt).ln()),
        _ if dt == 1 => Some(pmf_one_step(traj.kind, &pi).ln()),
        _ => None,
    }
}

/// All `k` reverse-step terms of one trajectory, each with weight 1.
pub fn trajectory_terms(traj: &Trajectory, schedule: &DenoisingSchedule) -> Result<Vec<StepTerm>> {
    check_horizon(traj, schedule)?;
    Ok(schedule
        .pairs()
        .map(|(prev, cur)| StepTerm {
            x: traj.states[cur as usize].clone(),
            t: cur,
            target: traj.move_between(cur as usize, prev as usize),
            weight: 1.0,
        })
        .collect())
}

fn mean_constant(parts: impl Iterator<Item = Option<f64>>, n: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in parts {
        total += p?;
        count += 1;
    }
    Some(ln_factorial(n) + total / count.max(1) as f64)
}

/// Mean NLL (and mean gradient) over groups of terms, evaluated in parallel
/// and reduced in order so the result does not depend on the thread count.
pub fn evaluate_groups(
    net: &ScoreNet,
    groups: &[Vec<StepTerm>],
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let results: Vec<(f64, Option<Vec<Tensor>>)> = groups
        .par_iter()
        .map(|g| net.weighted_nll(g, with_grad))
        .collect::<Result<_>>()?;
    let scale = 1.0 / groups.len() as f64;
    let mut total = 0.0;
    let mut grad: Option<Vec<Tensor>> = None;
    for (value, g) in results {
        total += value;
        if let Some(g) = g {
            match &mut grad {
                None => grad = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.data.iter_mut().zip(&b.data) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
    if let Some(acc) = &mut grad {
        for t in acc.iter_mut() {
            for x in &mut t.data {
                *x *= scale;
            }
        }
    }
    Ok((total * scale, grad))
}

fn full_groups(
    trajectories: &[Trajectory],
    schedule: &DenoisingSchedule,
) -> Result<(Vec<Vec<StepTerm>>, Option<f64>)> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let groups = trajectories
        .iter()
        .map(|tr| trajectory_terms(tr, schedule))
        .collect::<Result<Vec<_>>>()?;
    let constant = mean_constant(
        trajectories.iter().map(|tr| {
            schedule
                .pairs()
                .map(|(a, b)| forward_log_q(tr, a, b))
                .sum::<Option<f64>>()
        }),
        trajectories[0].n(),
    );
    Ok((groups, constant))
}

pub fn loss_full_trajectory(
    net: &ScoreNet,
    trajectories: &[Trajectory],
    schedule: &DenoisingSchedule,
) -> Result<LossReport> {
    let (groups, constant) = full_groups(trajectories, schedule)?;
    let (nll, _) = evaluate_groups(net, &groups, false)?;
    Ok(LossReport {
        nll,
        constant,
        intervals: schedule.intervals(),
        trajectories: groups.len(),
    })
}

pub fn loss_full_trajectory_grad(
    net: &ScoreNet,
    trajectories: &[Trajectory],
    schedule: &DenoisingSchedule,
) -> Result<(LossReport, Vec<Tensor>)> {
    let (groups, constant) = full_groups(trajectories, schedule)?;
    let (nll, grad) = evaluate_groups(net, &groups, true)?;
    let report = LossReport {
        nll,
        constant,
        intervals: schedule.intervals(),
        trajectories: groups.len(),
    };
    Ok((report, grad.expect("requested")))
}

/// Draws one term per list: `i ~ U{1..k}` (no draw when `k = 1`), a forward
/// run of `t_i` steps, and the reverse move from `t_i` to `t_{i-1}` with
/// weight `k`.
pub fn random_timestep_groups<R: Rng + ?Sized>(
    data: &[ObjectList],
    kind: ShuffleKind,
    schedule: &DenoisingSchedule,
    rng: &mut R,
) -> (Vec<Vec<StepTerm>>, Option<f64>) {
    let k = schedule.intervals();
    let steps = schedule.steps();
    let mut groups = Vec::with_capacity(data.len());
    let mut consts = Vec::with_capacity(data.len());
    for x0 in data {
        let i = if k == 1 { 1 } else { rng.gen_range(1..=k) };
        let (prev, cur) = (steps[i - 1], steps[i]);
        let traj = forward_trajectory(x0, kind, cur as usize, rng);
        consts.push(forward_log_q(&traj, prev, cur).map(|v| v * k as f64));
        groups.push(vec![StepTerm {
            x: traj.states[cur as usize].clone(),
            t: cur,
            target: traj.move_between(cur as usize, prev as usize),
            weight: k as f64,
        }]);
    }
    let n = data.first().map_or(1, ObjectList::n);
    (groups, mean_constant(consts.into_iter(), n))
}

pub fn loss_random_timestep<R: Rng + ?Sized>(
    net: &ScoreNet,
    data: &[ObjectList],
    kind: ShuffleKind,
    schedule: &DenoisingSchedule,
    rng: &mut R,
) -> Result<LossReport> {
    let (groups, constant) = random_timestep_groups(data, kind, schedule, rng);
    let (nll, _) = evaluate_groups(net, &groups, false)?;
    Ok(LossReport {
        nll,
        constant,
        intervals: schedule.intervals(),
        trajectories: groups.len(),
    })
}
