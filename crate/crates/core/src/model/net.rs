//! Permutation-equivariant score network.
//!
//! Objects are encoded independently by a two-layer MLP, a sinusoidal
//! embedding of `t` is added to every token, and a stack of multi-head
//! self-attention blocks (residual attention + residual feed-forward, no
//! positional information) mixes them. The head then reads out the
//! parameters of one reverse family:
//!
//! - PL, II, IRS: one score per object token.
//! - IT: one score per object token plus `τ` from an extra all-zero token.
//! - GPL: `n` extra tokens carry learned position embeddings. Object tokens
//!   attend only to object tokens; position token `i` attends to every object
//!   token and to position tokens `j < i`. `S[i][j] = ⟨z2_i, z1_j⟩` where
//!   `z1` and `z2` are linear maps of the final object and position tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::perm::{ObjectList, Permutation};
use crate::reverse::{inverse_insertion_index, ReverseKind, ReverseParams};
use crate::rng::seeded;

fn default_input_dim() -> usize {
    1
}
fn default_d_model() -> usize {
    32
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_d_ff() -> usize {
    64
}
fn default_head() -> ReverseKind {
    ReverseKind::GeneralizedPlackettLuce
}
fn default_max_n() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_head")]
    pub head: ReverseKind,
    /// Largest list length the GPL position embeddings cover.
    #[serde(default = "default_max_n")]
    pub max_n: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: default_input_dim(),
            d_model: default_d_model(),
            layers: default_layers(),
            heads: default_heads(),
            d_ff: default_d_ff(),
            head: default_head(),
            max_n: default_max_n(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return bad("d_model must be even and >= 2");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("heads must divide d_model");
        }
        if self.d_ff == 0 {
            return bad("d_ff must be >= 1");
        }
        if self.max_n == 0 {
            return bad("max_n must be >= 1");
        }
        Ok(())
    }
}

/// Sinusoidal embedding: `sin(t ω_k)` in the first half, `cos(t ω_k)` in the
/// second, `ω_k = 10000^{-2k/d}`.
pub fn time_embed(t: u32, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for k in 0..half {
        let freq = 10000f64.powf(-2.0 * k as f64 / d as f64);
        let angle = t as f64 * freq;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    out
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zero,
    Embedding,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn layout(c: &NetConfig) -> Vec<Spec> {
    let mut specs = Vec::new();
    let mut add =
        |name: String, shape: Vec<usize>, init: Init| specs.push(Spec { name, shape, init });
    let d = c.d_model;
    let dh = d / c.heads;
    add("enc.w1".into(), vec![c.input_dim, d], Init::Xavier);
    add("enc.b1".into(), vec![d], Init::Zero);
    add("enc.w2".into(), vec![d, d], Init::Xavier);
    add("enc.b2".into(), vec![d], Init::Zero);
    if c.head == ReverseKind::GeneralizedPlackettLuce {
        add("pos.emb".into(), vec![c.max_n, d], Init::Embedding);
    }
    for l in 0..c.layers {
        for h in 0..c.heads {
            for w in ["wq", "wk", "wv"] {
                add(format!("layer{l}.head{h}.{w}"), vec![d, dh], Init::Xavier);
            }
        }
        add(format!("layer{l}.wo"), vec![d, d], Init::Xavier);
        add(format!("layer{l}.bo"), vec![d], Init::Zero);
        add(format!("layer{l}.ff.w1"), vec![d, c.d_ff], Init::Xavier);
        add(format!("layer{l}.ff.b1"), vec![c.d_ff], Init::Zero);
        add(format!("layer{l}.ff.w2"), vec![c.d_ff, d], Init::Xavier);
        add(format!("layer{l}.ff.b2"), vec![d], Init::Zero);
    }
    if c.head == ReverseKind::GeneralizedPlackettLuce {
        add("out.z1".into(), vec![d, d], Init::Xavier);
        add("out.z2".into(), vec![d, d], Init::Xavier);
    } else {
        add("out.w1".into(), vec![d, d], Init::Xavier);
        add("out.b1".into(), vec![d], Init::Zero);
        add("out.w2".into(), vec![d, 1], Init::Xavier);
        add("out.b2".into(), vec![1], Init::Zero);
    }
    specs
}

/// Head outputs as tape variables.
#[derive(Clone, Copy, Debug)]
pub enum HeadOut {
    Transposition { s: Var, tau: Var },
    Vector { s: Var },
    Matrix { scores: Var },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    config: NetConfig,
    params: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoreNetJson {
    config: NetConfig,
    params: Vec<NamedTensor>,
}

impl Serialize for ScoreNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let params = layout(&self.config)
            .into_iter()
            .zip(&self.params)
            .map(|(spec, t)| NamedTensor {
                name: spec.name,
                shape: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect();
        ScoreNetJson {
            config: self.config.clone(),
            params,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ScoreNetJson::deserialize(d)?;
        ScoreNet::from_parts(raw).map_err(serde::de::Error::custom)
    }
}

struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }
}

impl ScoreNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let params = layout(&config)
            .into_iter()
            .map(|spec| {
                let count: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Zero => vec![0.0; count],
                    Init::Xavier => {
                        let a = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                        (0..count).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    Init::Embedding => (0..count).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                };
                Tensor {
                    shape: spec.shape,
                    data,
                }
            })
            .collect();
        Ok(ScoreNet { config, params })
    }

    fn from_parts(raw: ScoreNetJson) -> Result<Self> {
        raw.config.validate()?;
        let specs = layout(&raw.config);
        if specs.len() != raw.params.len() {
            return Err(Error::Serde(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                raw.params.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (spec, p) in specs.into_iter().zip(raw.params) {
            if spec.name != p.name || spec.shape != p.shape {
                return Err(Error::Serde(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name, p.shape, spec.name, spec.shape
                )));
            }
            params.push(Tensor::new(p.shape, p.data)?);
        }
        Ok(ScoreNet {
            config: raw.config,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> ReverseKind {
        self.config.head
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        layout(&self.config).into_iter().map(|s| s.name).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape` as a leaf, in layout order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    fn check_input(&self, x: &ObjectList) -> Result<()> {
        if x.dim() != self.config.input_dim {
            return Err(Error::SizeMismatch {
                expected: self.config.input_dim,
                got: x.dim(),
            });
        }
        if self.config.head == ReverseKind::GeneralizedPlackettLuce && x.n() > self.config.max_n {
            return Err(Error::OutOfRange {
                n: x.n(),
                min: 1,
                max: self.config.max_n,
            });
        }
        Ok(())
    }

    /// Builds the forward pass for list `x` at diffusion time `t`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &ObjectList,
        t: u32,
    ) -> Result<HeadOut> {
        self.check_input(x)?;
        let c = &self.config;
        let n = x.n();
        let d = c.d_model;
        let mut cur = Cursor { vars, pos: 0 };

        let input = tape.leaf(Tensor::new(vec![n, c.input_dim], x.as_flat().to_vec())?);
        let (w1, b1, w2, b2) = (cur.next(), cur.next(), cur.next(), cur.next());
        let h = tape.matmul(input, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let h = tape.matmul(h, w2)?;
        let objects = tape.add_row(h, b2)?;

        let (tokens, mask) = match c.head {
            ReverseKind::InverseTransposition => {
                let extra = tape.leaf(Tensor::zeros(vec![1, d]));
                (tape.concat_rows(&[objects, extra])?, None)
            }
            ReverseKind::GeneralizedPlackettLuce => {
                let emb = cur.next();
                let ids: Vec<usize> = (0..n).collect();
                let positions = tape.embedding(emb, &ids)?;
                (tape.concat_rows(&[objects, positions])?, Some(gpl_mask(n)))
            }
            _ => (objects, None),
        };
        let te = tape.leaf(Tensor::new(vec![d], time_embed(t, d))?);
        let mut tokens = tape.add_row(tokens, te)?;

        for _ in 0..c.layers {
            let mut heads = Vec::with_capacity(c.heads);
            for _ in 0..c.heads {
                let (wq, wk, wv) = (cur.next(), cur.next(), cur.next());
                let q = tape.matmul(tokens, wq)?;
                let k = tape.matmul(tokens, wk)?;
                let v = tape.matmul(tokens, wv)?;
                heads.push(tape.masked_attention(q, k, v, mask.as_ref())?);
            }
            let (wo, bo) = (cur.next(), cur.next());
            let cat = tape.concat_cols(&heads)?;
            let att = tape.matmul(cat, wo)?;
            let att = tape.add_row(att, bo)?;
            tokens = tape.add(tokens, att)?;

            let (f1, fb1, f2, fb2) = (cur.next(), cur.next(), cur.next(), cur.next());
            let f = tape.matmul(tokens, f1)?;
            let f = tape.add_row(f, fb1)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, f2)?;
            let f = tape.add_row(f, fb2)?;
            tokens = tape.add(tokens, f)?;
        }

        let out = if c.head == ReverseKind::GeneralizedPlackettLuce {
            let (z1w, z2w) = (cur.next(), cur.next());
            let obj = tape.slice_rows(tokens, 0, n)?;
            let pos = tape.slice_rows(tokens, n, n)?;
            let z1 = tape.matmul(obj, z1w)?;
            let z2 = tape.matmul(pos, z2w)?;
            let z1t = tape.transpose(z1)?;
            HeadOut::Matrix {
                scores: tape.matmul(z2, z1t)?,
            }
        } else {
            let (o1, ob1, o2, ob2) = (cur.next(), cur.next(), cur.next(), cur.next());
            let h = tape.matmul(tokens, o1)?;
            let h = tape.add_row(h, ob1)?;
            let h = tape.relu(h);
            let h = tape.matmul(h, o2)?;
            let h = tape.add_row(h, ob2)?;
            let rows = tape.shape(h)[0];
            let flat = tape.reshape(h, vec![rows])?;
            let ids: Vec<usize> = (0..n).collect();
            let s = tape.gather(flat, &ids)?;
            if c.head == ReverseKind::InverseTransposition {
                let tau = tape.gather(flat, &[n])?;
                HeadOut::Transposition { s, tau }
            } else {
                HeadOut::Vector { s }
            }
        };
        debug_assert_eq!(cur.pos, vars.len());
        Ok(out)
    }

    /// Reverse-transition parameters for `x` at time `t`.
    pub fn reverse_params(&self, x: &ObjectList, t: u32) -> Result<ReverseParams> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let head = self.forward(&mut tape, &vars, x, t)?;
        head_to_params(&tape, self.config.head, head)
    }

    /// `ln p_θ(σ' | x, t)` evaluated on the tape.
    pub fn log_prob(&self, x: &ObjectList, t: u32, sigma: &Permutation) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let head = self.forward(&mut tape, &vars, x, t)?;
        let lp = log_prob_var(&mut tape, self.config.head, head, sigma)?;
        Ok(tape.value(lp).data[0])
    }

    /// `Σ w·(-ln p_θ(σ' | x, t))` over `terms`, plus its parameter gradient
    /// when `with_grad` is set.
    pub fn weighted_nll(
        &self,
        terms: &[StepTerm],
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut total: Option<Var> = None;
        for term in terms {
            let head = self.forward(&mut tape, &vars, &term.x, term.t)?;
            let lp = log_prob_var(&mut tape, self.config.head, head, &term.target)?;
            let scaled = tape.scale(lp, -term.weight);
            total = Some(match total {
                Some(acc) => tape.add(acc, scaled)?,
                None => scaled,
            });
        }
        let Some(total) = total else {
            let zeros = self
                .params
                .iter()
                .map(|p| Tensor::zeros(p.shape.clone()))
                .collect();
            return Ok((0.0, with_grad.then_some(zeros)));
        };
        let value = tape.value(total).data[0];
        if !with_grad {
            return Ok((value, None));
        }
        let grads = tape.backward(total)?;
        let out = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.get_or_zeros(v, &p.shape))
            .collect();
        Ok((value, Some(out)))
    }
}

/// One reverse-step likelihood term: the network sees `x` at time `t` and is
/// scored on `target` with multiplier `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTerm {
    pub x: ObjectList,
    pub t: u32,
    pub target: Permutation,
    pub weight: f64,
}

fn gpl_mask(n: usize) -> Tensor {
    let m = 2 * n;
    let mut data = vec![f64::NEG_INFINITY; m * m];
    for i in 0..m {
        for j in 0..n {
            data[i * m + j] = 0.0;
        }
    }
    for i in 0..n {
        for j in 0..i {
            data[(n + i) * m + n + j] = 0.0;
        }
    }
    Tensor {
        shape: vec![m, m],
        data,
    }
}

/// Reads head outputs off the tape into distribution parameters.
pub fn head_to_params(tape: &Tape, kind: ReverseKind, head: HeadOut) -> Result<ReverseParams> {
    match (kind, head) {
        (ReverseKind::InverseTransposition, HeadOut::Transposition { s, tau }) => {
            ReverseParams::inverse_transposition(
                tape.value(s).data.clone(),
                tape.value(tau).data[0],
            )
        }
        (ReverseKind::InverseInsertion, HeadOut::Vector { s }) => {
            ReverseParams::inverse_insertion(tape.value(s).data.clone())
        }
        (ReverseKind::InverseRiffle, HeadOut::Vector { s }) => {
            ReverseParams::inverse_riffle(tape.value(s).data.clone())
        }
        (ReverseKind::PlackettLuce, HeadOut::Vector { s }) => {
            ReverseParams::plackett_luce(tape.value(s).data.clone())
        }
        (ReverseKind::GeneralizedPlackettLuce, HeadOut::Matrix { scores }) => {
            let t = tape.value(scores);
            let n = t.shape[0];
            ReverseParams::generalized_plackett_luce(t.data.chunks(n).map(|r| r.to_vec()).collect())
        }
        _ => Err(Error::InvalidArgument(format!(
            "head output does not match {kind}"
        ))),
    }
}

/// `ln p(σ)` for the family `kind` composed from tape primitives, so that it
/// can be differentiated. Off-support permutations are an error: the loss
/// would be infinite.
pub fn log_prob_var(
    tape: &mut Tape,
    kind: ReverseKind,
    head: HeadOut,
    sigma: &Permutation,
) -> Result<Var> {
    let perm = sigma.as_slice();
    let n = perm.len();
    let off_support = || {
        Err(Error::InvalidArgument(format!(
            "{sigma} is outside the support of {kind}"
        )))
    };
    match (kind, head) {
        (ReverseKind::PlackettLuce, HeadOut::Vector { s }) => {
            check_n(tape, s, n)?;
            let mut parts = Vec::with_capacity(n);
            for i in 0..n {
                let sel = tape.gather(s, &perm[i..])?;
                let first = tape.gather(sel, &[0])?;
                let lse = tape.logsumexp(sel);
                parts.push(tape.sub(first, lse)?);
            }
            sum_vars(tape, &parts)
        }
        (ReverseKind::GeneralizedPlackettLuce, HeadOut::Matrix { scores }) => {
            if tape.shape(scores) != [n, n] {
                return Err(Error::SizeMismatch {
                    expected: tape.shape(scores)[0],
                    got: n,
                });
            }
            let mut parts = Vec::with_capacity(n);
            for i in 0..n {
                let idx: Vec<usize> = perm[i..].iter().map(|&c| i * n + c).collect();
                let sel = tape.gather(scores, &idx)?;
                let first = tape.gather(sel, &[0])?;
                let lse = tape.logsumexp(sel);
                parts.push(tape.sub(first, lse)?);
            }
            sum_vars(tape, &parts)
        }
        (ReverseKind::InverseInsertion, HeadOut::Vector { s }) => {
            check_n(tape, s, n)?;
            let Some(i) = inverse_insertion_index(sigma) else {
                return off_support();
            };
            let pick = tape.gather(s, &[i])?;
            let lse = tape.logsumexp(s);
            tape.sub(pick, lse)
        }
        (ReverseKind::InverseRiffle, HeadOut::Vector { s }) => {
            check_n(tape, s, n)?;
            let left = tape.log_sigmoid(s);
            let neg = tape.scale(s, -1.0);
            let right = tape.log_sigmoid(neg);
            let left = tape.reshape(left, vec![n, 1])?;
            let right = tape.reshape(right, vec![n, 1])?;
            // entry v: object v to the left pile; n + v: to the right pile
            let both = tape.concat_rows(&[left, right])?;
            if sigma.is_identity() {
                let mut words = Vec::with_capacity(n + 1);
                for a in 0..=n {
                    let idx: Vec<usize> = (0..a).chain((a..n).map(|v| n + v)).collect();
                    let picked = tape.gather(both, &idx)?;
                    let w = tape.sum(picked);
                    words.push(tape.reshape(w, vec![1, 1])?);
                }
                let stacked = tape.concat_rows(&words)?;
                return Ok(tape.logsumexp(stacked));
            }
            let descents: Vec<usize> = (0..n - 1).filter(|&i| perm[i] > perm[i + 1]).collect();
            if descents.len() != 1 {
                return off_support();
            }
            let cut = descents[0] + 1;
            let idx: Vec<usize> = perm[..cut]
                .iter()
                .copied()
                .chain(perm[cut..].iter().map(|&v| n + v))
                .collect();
            let picked = tape.gather(both, &idx)?;
            Ok(tape.sum(picked))
        }
        (ReverseKind::InverseTransposition, HeadOut::Transposition { s, tau }) => {
            check_n(tape, s, n)?;
            if sigma.is_identity() {
                if n == 1 {
                    return Ok(tape.leaf(Tensor::scalar(0.0)));
                }
                let neg = tape.scale(tau, -1.0);
                return Ok(tape.log_sigmoid(neg));
            }
            let moved: Vec<usize> = (0..n).filter(|&i| perm[i] != i).collect();
            if moved.len() != 2 {
                return off_support();
            }
            let (i, j) = (moved[0], moved[1]);
            let total = tape.logsumexp(s);
            let mut inv_rest = Vec::with_capacity(2);
            for x in [i, j] {
                let others: Vec<usize> = (0..n).filter(|&k| k != x).collect();
                let sel = tape.gather(s, &others)?;
                let without = tape.logsumexp(sel);
                let r = tape.sub(total, without)?;
                inv_rest.push(tape.reshape(r, vec![1, 1])?);
            }
            let stacked = tape.concat_rows(&inv_rest)?;
            let pair = tape.logsumexp(stacked);
            let gate = tape.log_sigmoid(tau);
            let si = tape.gather(s, &[i])?;
            let sj = tape.gather(s, &[j])?;
            let two_total = tape.scale(total, 2.0);
            let acc = tape.add(gate, si)?;
            let acc = tape.add(acc, sj)?;
            let acc = tape.sub(acc, two_total)?;
            tape.add(acc, pair)
        }
        _ => Err(Error::InvalidArgument(format!(
            "head output does not match {kind}"
        ))),
    }
}

fn check_n(tape: &Tape, s: Var, n: usize) -> Result<()> {
    let len = tape.value(s).len();
    if len != n {
        return Err(Error::SizeMismatch {
            expected: len,
            got: n,
        });
    }
    Ok(())
}

fn sum_vars(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}
