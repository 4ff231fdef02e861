use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::tensor::{Tape, Tensor, Var};
use crate::Result;

/// Named parameter tensors, ordered by name.
pub type ParamSet = BTreeMap<String, Tensor>;

/// Parameters bound to a tape.
pub type BoundParams = BTreeMap<String, Var>;

/// Default standard deviation of initial weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every parameter of `cfg` with its shape and initializer, in a fixed order.
fn layout(cfg: &ModelConfig, parts: usize) -> Result<Vec<(String, Vec<usize>, Init)>> {
    let d = cfg.hidden;
    let hd = cfg.head_width()?;
    let inner = cfg.ffn_mult * d;
    let p = cfg.spm.patch;
    let m = cfg.spm.tokens(parts)?;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    if cfg.spm.per_part_projection {
        for i in 0..parts {
            push(format!("spm.part{i}.kernel"), vec![d, p, p, 3], Init::Normal);
            push(format!("spm.part{i}.bias"), vec![d], Init::Zeros);
        }
    } else {
        push("spm.kernel".into(), vec![d, p, p, 3], Init::Normal);
        push("spm.bias".into(), vec![d], Init::Zeros);
    }
    push("spm.posenc".into(), vec![m, d], Init::Normal);

    let ffn = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
        push(format!("{prefix}.ln.gamma"), vec![d], Init::Ones);
        push(format!("{prefix}.ln.beta"), vec![d], Init::Zeros);
        push(format!("{prefix}.w1"), vec![d, inner], Init::Normal);
        push(format!("{prefix}.b1"), vec![inner], Init::Zeros);
        push(format!("{prefix}.w2"), vec![inner, d], Init::Normal);
        push(format!("{prefix}.b2"), vec![d], Init::Zeros);
    };
    for l in 0..cfg.itb_layers {
        let se = format!("itb{l}.se");
        push(format!("{se}.ln.gamma"), vec![d], Init::Ones);
        push(format!("{se}.ln.beta"), vec![d], Init::Zeros);
        for w in ["q", "k", "v", "o"] {
            push(format!("{se}.attn.w_{w}"), vec![d, d], Init::Normal);
            push(format!("{se}.attn.b_{w}"), vec![d], Init::Zeros);
        }
        ffn(&format!("{se}.ffn"), &mut push);
        for h in 0..cfg.heads {
            let g = format!("itb{l}.gimsa.head{h}");
            for w in ["q", "k", "v"] {
                push(format!("{g}.w_{w}"), vec![hd, hd], Init::Normal);
            }
            push(format!("{g}.alpha"), vec![1], Init::Ones);
        }
        push(format!("itb{l}.gimsa.w_m"), vec![d, d], Init::Normal);
        if !cfg.tied_persons {
            push(format!("itb{l}.gimsa.w_n"), vec![d, d], Init::Normal);
        }
        ffn(&format!("itb{l}.out_m"), &mut push);
        if !cfg.tied_persons {
            ffn(&format!("itb{l}.out_n"), &mut push);
        }
    }
    push("head.ln.gamma".into(), vec![d], Init::Ones);
    push("head.ln.beta".into(), vec![d], Init::Zeros);
    push("cls.w".into(), vec![d, cfg.num_classes], Init::Normal);
    push("cls.b".into(), vec![cfg.num_classes], Init::Zeros);
    Ok(out)
}

/// Truncated-normal weights (±2σ), zero biases, unit layer-norm gains and
/// `α = 1`. Deterministic per seed.
pub fn init_params(cfg: &ModelConfig, parts: usize, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.init_std).expect("validated std");
    let mut params = ParamSet::new();
    for (name, shape, init) in layout(cfg, parts)? {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal => (0..n).map(|_| truncated(&normal, cfg.init_std, &mut rng)).collect(),
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

fn truncated(normal: &Normal<f64>, std: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Expected names and shapes, for validating loaded checkpoints.
pub fn param_shapes(cfg: &ModelConfig, parts: usize) -> Result<Vec<(String, Vec<usize>)>> {
    Ok(layout(cfg, parts)?.into_iter().map(|(n, s, _)| (n, s)).collect())
}

pub fn param_count(params: &ParamSet) -> usize {
    params.values().map(Tensor::numel).sum()
}

pub fn bind<'p>(tape: &mut Tape<'p>, params: &'p ParamSet) -> BoundParams {
    params.iter().map(|(k, v)| (k.clone(), tape.param(v))).collect()
}
