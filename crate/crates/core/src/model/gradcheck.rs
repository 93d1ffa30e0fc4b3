use rand::Rng;
use serde::Serialize;

use super::net::{NetConfig, ScoreNet, StepTerm};
use crate::error::Result;
use crate::perm::ObjectList;
use crate::reverse::ReverseKind;
use crate::rng::seeded;

/// Relative errors below this are a pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
const ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub head: ReverseKind,
    pub n: usize,
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub passed: bool,
}

/// Compares the tape gradient of `-ln p_θ(σ' | X, t)` with central
/// differences on a small network, for every parameter entry.
///
/// `σ'` is drawn from the network's own reverse distribution so it lies in
/// the family's support.
pub fn gradcheck(head: ReverseKind, n: usize, seed: u64) -> Result<GradcheckReport> {
    let cfg = NetConfig {
        d_model: 6,
        layers: 1,
        heads: 2,
        d_ff: 8,
        head,
        max_n: n.max(1),
        ..NetConfig::default()
    };
    let net = ScoreNet::new(cfg, seed)?;
    let mut rng = seeded(seed ^ 0x5eed);
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = ObjectList::from_scalars(&values)?;
    let t = rng.gen_range(1..6);
    let target = net.reverse_params(&x, t)?.sample(&mut rng);
    let terms = [StepTerm {
        x,
        t,
        target,
        weight: 1.0,
    }];
    let (_, grads) = net.weighted_nll(&terms, true)?;
    let grads = grads.expect("requested");
    let names = net.param_names();
    let h = 1e-6;
    let mut probe = net.clone();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (p, name) in names.iter().enumerate() {
        for i in 0..net.params()[p].len() {
            let orig = net.params()[p].data[i];
            probe.params_mut()[p].data[i] = orig + h;
            let (up, _) = probe.weighted_nll(&terms, false)?;
            probe.params_mut()[p].data[i] = orig - h;
            let (down, _) = probe.weighted_nll(&terms, false)?;
            probe.params_mut()[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p].data[i];
            let err =
                (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(ERROR_FLOOR);
            checked += 1;
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
        }
    }
    Ok(GradcheckReport {
        head,
        n,
        params_checked: checked,
        max_rel_error: worst.0,
        worst_param: worst.1,
        passed: worst.0 < GRADCHECK_TOLERANCE,
    })
}
