//! The end-to-end interaction recognizer.
//!
//! Each person's skeleton goes through the semantic partition module and a
//! learnable positional encoding, then `N` interaction transformer blocks.
//! A block applies one shared self-encoding transformer layer to both
//! persons, exchanges information through graph interaction attention and
//! finishes with a per-person feed-forward residual. Mean-pooled tokens of
//! both persons pass a layer norm into a linear classifier.

mod checkpoint;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use params::{bind, init_params, param_count, param_shapes, BoundParams, ParamSet, INIT_STD};

use crate::dsig::{build_graphs, DistanceGraphConfig, Dsig, InteractionGraphs};
use crate::gimsa::{gi_msa, GiMsaConfig, GiMsaVars, HeadTrace, HeadVars, Layout, SdigScale};
use crate::skeleton::{BodyPartMap, InteractionSample};
use crate::spm::{add_positional, spm_forward, ProjectionVars, SpmConfig};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Which interaction graphs the attention uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    /// Distance graph zeroed.
    SdigOnly,
    /// Semantic graph left out of the fusion.
    DsigOnly,
    /// No cross-person attention at all.
    NoGimsa,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::SdigOnly, Mode::DsigOnly, Mode::NoGimsa];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::SdigOnly => "sdig_only",
            Mode::DsigOnly => "dsig_only",
            Mode::NoGimsa => "no_gimsa",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected full, sdig_only, dsig_only or no_gimsa)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over all `2M` tokens.
    #[default]
    Joint,
    /// Mean per person, then the average of the two.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of interaction transformer blocks, `N`.
    pub itb_layers: usize,
    /// Token width, `D`.
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub num_classes: usize,
    /// Neighbors per token in the distance graph.
    pub k: usize,
    pub mode: Mode,
    /// Share output projection and feed-forward weights between persons.
    pub tied_persons: bool,
    pub dropout: f64,
    pub ln_eps: f64,
    /// Standard deviation of the truncated-normal initial weights.
    pub init_std: f64,
    /// Translate each person so that its own first-frame joint mean is the
    /// origin before the partition module. Distance graphs always use the
    /// untranslated coordinates.
    pub center_input: bool,
    pub sdig_scale: SdigScale,
    pub temporal_context: bool,
    pub spatial_context: bool,
    pub pooling: Pooling,
    pub spm: SpmConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            itb_layers: 3,
            hidden: 768,
            heads: 12,
            ffn_mult: 4,
            num_classes: 11,
            k: 15,
            mode: Mode::Full,
            tied_persons: false,
            dropout: 0.0,
            ln_eps: 1e-6,
            init_std: INIT_STD,
            center_input: true,
            sdig_scale: SdigScale::Head,
            temporal_context: true,
            spatial_context: true,
            pooling: Pooling::Joint,
            spm: SpmConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.itb_layers == 0 {
            return fail("itb_layers must be at least 1".into());
        }
        if self.hidden == 0 || self.ffn_mult == 0 || self.num_classes == 0 {
            return fail("hidden, ffn_mult and num_classes must be positive".into());
        }
        self.head_width()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.ln_eps > 0.0) {
            return fail(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std must be positive, got {}", self.init_std));
        }
        if self.spm.patch == 0 || self.spm.stride == 0 {
            return fail("patch and stride must be positive".into());
        }
        self.spm.steps()?;
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_width(&self) -> Result<usize> {
        self.gimsa_config().head_width(self.hidden)
    }

    pub fn gimsa_config(&self) -> GiMsaConfig {
        GiMsaConfig {
            heads: self.heads,
            scale: self.sdig_scale,
            temporal_context: self.temporal_context,
            spatial_context: self.spatial_context,
            use_sdig: self.mode != Mode::DsigOnly,
        }
    }

    pub fn graph_config(&self) -> Result<DistanceGraphConfig> {
        DistanceGraphConfig::aligned(&self.spm, self.k)
    }
}

/// Per-block, per-head graphs recorded during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelTrace {
    pub blocks: Vec<Vec<HeadTrace>>,
}

/// Optional extras for a forward pass.
#[derive(Default)]
pub struct ForwardOptions<'r> {
    /// Enables dropout when the configured rate is positive.
    pub dropout_rng: Option<&'r mut ChaCha8Rng>,
    pub trace: Option<&'r mut ModelTrace>,
}

fn var(bound: &BoundParams, name: &str) -> Result<Var> {
    bound
        .get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

fn linear(tape: &mut Tape, x: Var, bound: &BoundParams, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, var(bound, w)?)?;
    Ok(tape.add_bias(y, var(bound, b)?)?)
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng.as_deref_mut().filter(|_| rate > 0.0) else {
        return Ok(x);
    };
    let keep = 1.0 - rate;
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, mask)?)
}

/// `x + W₂·GELU(W₁·LN(x) + b₁) + b₂` with parameters under `prefix`.
fn ffn_residual(
    tape: &mut Tape,
    x: Var,
    bound: &BoundParams,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let n = tape.layer_norm(x, var(bound, &format!("{prefix}.ln.gamma"))?, var(bound, &format!("{prefix}.ln.beta"))?, cfg.ln_eps)?;
    let h = linear(tape, n, bound, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = tape.gelu(h)?;
    let h = dropout(tape, h, cfg.dropout, rng)?;
    let y = linear(tape, h, bound, &format!("{prefix}.w2"), &format!("{prefix}.b2"))?;
    let y = dropout(tape, y, cfg.dropout, rng)?;
    Ok(tape.add(x, y)?)
}

/// Pre-norm transformer layer: multi-head self-attention then feed-forward,
/// each with a residual. Parameters live under `prefix`.
pub fn se_layer(
    tape: &mut Tape,
    h: Var,
    bound: &BoundParams,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let d = cfg.head_width()?;
    let n = tape.layer_norm(h, var(bound, &format!("{prefix}.ln.gamma"))?, var(bound, &format!("{prefix}.ln.beta"))?, cfg.ln_eps)?;
    let proj = |tape: &mut Tape, w: &str| linear(tape, n, bound, &format!("{prefix}.attn.w_{w}"), &format!("{prefix}.attn.b_{w}"));
    let (q, k, v) = (proj(tape, "q")?, proj(tape, "k")?, proj(tape, "v")?);
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let qi = tape.narrow_cols(q, i * d, d)?;
        let ki = tape.narrow_cols(k, i * d, d)?;
        let vi = tape.narrow_cols(v, i * d, d)?;
        let kt = tape.transpose(ki)?;
        let scores = tape.matmul(qi, kt)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
        let att = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(att, vi)?);
    }
    let cat = tape.concat_last(&heads)?;
    let out = linear(tape, cat, bound, &format!("{prefix}.attn.w_o"), &format!("{prefix}.attn.b_o"))?;
    let out = dropout(tape, out, cfg.dropout, rng)?;
    let h = tape.add(h, out)?;
    ffn_residual(tape, h, bound, &format!("{prefix}.ffn"), cfg, rng)
}

fn gimsa_vars(bound: &BoundParams, block: usize, cfg: &ModelConfig) -> Result<GiMsaVars> {
    let heads = (0..cfg.heads)
        .map(|h| {
            let p = format!("itb{block}.gimsa.head{h}");
            Ok(HeadVars {
                w_q: var(bound, &format!("{p}.w_q"))?,
                w_k: var(bound, &format!("{p}.w_k"))?,
                w_v: var(bound, &format!("{p}.w_v"))?,
                alpha: var(bound, &format!("{p}.alpha"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let w_m = var(bound, &format!("itb{block}.gimsa.w_m"))?;
    let w_n = if cfg.tied_persons { w_m } else { var(bound, &format!("itb{block}.gimsa.w_n"))? };
    Ok(GiMsaVars { heads, w_m, w_n })
}

/// One interaction transformer block. `graphs` are the `(m→n, n→m)` distance
/// graphs already on the tape.
#[allow(clippy::too_many_arguments)]
pub fn itb_forward(
    tape: &mut Tape,
    h_m: Var,
    h_n: Var,
    graphs: (Var, Var),
    bound: &BoundParams,
    block: usize,
    cfg: &ModelConfig,
    layout: Layout,
    rng: &mut Option<&mut ChaCha8Rng>,
    trace: Option<&mut Vec<HeadTrace>>,
) -> Result<(Var, Var)> {
    let se = format!("itb{block}.se");
    let e_m = se_layer(tape, h_m, bound, &se, cfg, rng)?;
    let e_n = se_layer(tape, h_n, bound, &se, cfg, rng)?;
    let (x_m, x_n) = match cfg.mode {
        Mode::NoGimsa => (e_m, e_n),
        _ => {
            let vars = gimsa_vars(bound, block, cfg)?;
            gi_msa(tape, e_m, e_n, graphs.0, graphs.1, &vars, layout, &cfg.gimsa_config(), trace)?
        }
    };
    let out_n = if cfg.tied_persons { "out_m" } else { "out_n" };
    let o_m = ffn_residual(tape, x_m, bound, &format!("itb{block}.out_m"), cfg, rng)?;
    let o_n = ffn_residual(tape, x_n, bound, &format!("itb{block}.{out_n}"), cfg, rng)?;
    Ok((o_m, o_n))
}

/// Full forward pass to a logit vector of length `num_classes`. The sample
/// must already be padded to the configured frame count.
pub fn igformer_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    map: &BodyPartMap,
    sample: &InteractionSample,
    dsig: &Dsig,
    opts: ForwardOptions,
) -> Result<Var> {
    let ForwardOptions { mut dropout_rng, mut trace } = opts;
    if sample.label >= cfg.num_classes {
        return Err(Error::Config(format!(
            "label {} is outside the {} configured classes",
            sample.label, cfg.num_classes
        )));
    }
    let layout = Layout {
        parts: map.len(),
        steps: cfg.spm.steps()?,
    };
    let m = layout.tokens();
    if dsig.tokens() != m {
        return Err(Error::Config(format!("interaction graphs have {} tokens, model expects {m}", dsig.tokens())));
    }
    let proj = if cfg.spm.per_part_projection {
        ProjectionVars {
            kernels: (0..map.len()).map(|i| var(bound, &format!("spm.part{i}.kernel"))).collect::<Result<_>>()?,
            biases: (0..map.len()).map(|i| var(bound, &format!("spm.part{i}.bias"))).collect::<Result<_>>()?,
        }
    } else {
        ProjectionVars {
            kernels: vec![var(bound, "spm.kernel")?],
            biases: vec![var(bound, "spm.bias")?],
        }
    };
    let posenc = var(bound, "spm.posenc")?;
    let centered;
    let sample = if cfg.center_input {
        centered = sample.centered();
        &centered
    } else {
        sample
    };
    let mut h = Vec::with_capacity(2);
    for person in [&sample.person_a, &sample.person_b] {
        let bpt = spm_forward(tape, person, map, &cfg.spm, &proj)?;
        h.push(add_positional(tape, bpt, posenc)?.tokens);
    }
    let (mut h_m, mut h_n) = (h[0], h[1]);

    let graphs = match cfg.mode {
        Mode::SdigOnly => dsig.zeroed(),
        _ => dsig.clone(),
    };
    let g_mn = tape.constant(graphs.mn);
    let g_nm = tape.constant(graphs.nm);
    for block in 0..cfg.itb_layers {
        let mut heads = trace.as_ref().map(|_| Vec::new());
        (h_m, h_n) = itb_forward(tape, h_m, h_n, (g_mn, g_nm), bound, block, cfg, layout, &mut dropout_rng, heads.as_mut())?;
        if let (Some(t), Some(heads)) = (trace.as_deref_mut(), heads) {
            t.blocks.push(heads);
        }
    }

    let pooled = match cfg.pooling {
        Pooling::Joint => {
            let both = tape.add(h_m, h_n)?;
            let mean = tape.mean_axis(both, 0)?;
            tape.scale(mean, 0.5)?
        }
        Pooling::Separate => {
            let a = tape.mean_axis(h_m, 0)?;
            let b = tape.mean_axis(h_n, 0)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)?
        }
    };
    let row = tape.reshape(pooled, &[1, cfg.hidden])?;
    let row = tape.layer_norm(row, var(bound, "head.ln.gamma")?, var(bound, "head.ln.beta")?, cfg.ln_eps)?;
    let logits = linear(tape, row, bound, "cls.w", "cls.b")?;
    Ok(tape.reshape(logits, &[cfg.num_classes])?)
}

/// Loss, logits and per-parameter gradients of one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: ParamSet,
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IgFormer {
    pub config: ModelConfig,
    pub map: BodyPartMap,
    pub params: ParamSet,
}

impl IgFormer {
    pub fn new(config: ModelConfig, map: BodyPartMap, seed: u64) -> Result<Self> {
        let params = init_params(&config, map.len(), seed)?;
        Ok(Self { config, map, params })
    }

    /// Checks that `params` has exactly the names and shapes `config` needs.
    pub fn from_params(config: ModelConfig, map: BodyPartMap, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config, map.len())?;
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, configuration needs {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(Error::Config(format!("checkpoint lacks parameter {name}"))),
            }
        }
        Ok(Self { config, map, params })
    }

    /// SHA-256 of the serialized configuration and part map.
    pub fn digest(&self) -> [u8; 32] {
        config_digest(&self.config, &self.map)
    }

    pub fn tokens(&self) -> Result<usize> {
        self.config.spm.tokens(self.map.len())
    }

    pub fn graphs(&self, sample: &InteractionSample) -> Result<InteractionGraphs> {
        build_graphs(sample, &self.map, &self.config.graph_config()?)
    }

    pub fn logits(&self, sample: &InteractionSample, dsig: &Dsig) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let out = igformer_forward(&mut tape, &bound, &self.config, &self.map, sample, dsig, ForwardOptions::default())?;
        Ok(tape.value(out).clone())
    }

    pub fn trace(&self, sample: &InteractionSample, dsig: &Dsig) -> Result<(Tensor, ModelTrace)> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let mut trace = ModelTrace::default();
        let opts = ForwardOptions {
            dropout_rng: None,
            trace: Some(&mut trace),
        };
        let out = igformer_forward(&mut tape, &bound, &self.config, &self.map, sample, dsig, opts)?;
        Ok((tape.value(out).clone(), trace))
    }

    /// Cross-entropy against the sample label and its gradient. Parameters
    /// the loss does not depend on get zero gradients.
    pub fn sample_grad(&self, sample: &InteractionSample, dsig: &Dsig, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<SampleGrad> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let opts = ForwardOptions { dropout_rng, trace: None };
        let logits = igformer_forward(&mut tape, &bound, &self.config, &self.map, sample, dsig, opts)?;
        let loss = tape.cross_entropy(logits, sample.label)?;
        let mut g = tape.backward(loss)?;
        let grads = bound
            .iter()
            .map(|(name, &v)| {
                let t = g.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (name.clone(), t)
            })
            .collect();
        Ok(SampleGrad {
            loss: tape.value(loss).item(),
            logits: tape.value(logits).clone(),
            grads,
        })
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        write_checkpoint(&self.params, &self.digest())
    }

    /// Loads parameters, rejecting checkpoints written for another configuration.
    pub fn from_checkpoint(config: ModelConfig, map: BodyPartMap, bytes: &[u8]) -> Result<Self> {
        let (digest, params) = read_checkpoint(bytes)?;
        if digest != config_digest(&config, &map) {
            return Err(Error::Config(
                "checkpoint was written for a different model configuration".into(),
            ));
        }
        Self::from_params(config, map, params)
    }
}

pub fn config_digest(config: &ModelConfig, map: &BodyPartMap) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(toml::to_string(config).expect("model config serializes").as_bytes());
    h.update(map.to_config().as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{builtin_part_map, SkeletonSequence};
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            itb_layers: 2,
            hidden: 8,
            heads: 2,
            num_classes: 3,
            k: 5,
            spm: SpmConfig {
                patch: 4,
                stride: 4,
                padding: 0,
                frames: 32,
                per_part_projection: false,
            },
            ..ModelConfig::default()
        }
    }

    fn sample(seed: u64, frames: usize) -> InteractionSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut person = |x: f64| {
            let c = (0..frames * 45)
                .map(|i| rng.gen_range(-0.3..0.3) + if i % 3 == 0 { x } else { 1.0 })
                .collect();
            SkeletonSequence::new(frames, 15, c, 0).unwrap()
        };
        let (a, b) = (person(-1.0), person(1.0));
        InteractionSample::new(a, b, 1, "s").unwrap()
    }

    /// Parameter total derived from the block structure.
    fn closed_form_count(cfg: &ModelConfig, parts: usize) -> usize {
        let (d, c, p) = (cfg.hidden, cfg.num_classes, cfg.spm.patch);
        let dh = d / cfg.heads;
        let m = parts * cfg.spm.steps().unwrap();
        let ffn = 2 * d + d * cfg.ffn_mult * d + cfg.ffn_mult * d + cfg.ffn_mult * d * d + d;
        let se = 2 * d + 4 * (d * d + d) + ffn;
        let persons = if cfg.tied_persons { 1 } else { 2 };
        let gimsa = cfg.heads * (3 * dh * dh + 1) + persons * d * d;
        let spm = (d * p * p * 3 + d) * if cfg.spm.per_part_projection { parts } else { 1 } + m * d;
        spm + cfg.itb_layers * (se + gimsa + persons * ffn) + 2 * d + d * c + c
    }

    #[test]
    fn defaults_are_reference_values() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.itb_layers, 3);
        assert_eq!(cfg.ffn_mult, 4);
        assert_eq!(cfg.k, 15);
        assert_eq!(cfg.spm.tokens(5).unwrap(), 125);
        cfg.validate().unwrap();
    }

    #[test]
    fn init_contract() {
        let cfg = tiny();
        let a = init_params(&cfg, 5, 11).unwrap();
        assert_eq!(a, init_params(&cfg, 5, 11).unwrap());
        assert_ne!(a, init_params(&cfg, 5, 12).unwrap());
        assert_eq!(a["itb0.gimsa.head1.alpha"].data(), &[1.0]);
        assert!(a["spm.kernel"].data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(a["itb1.out_n.b2"].data().iter().all(|&v| v == 0.0));
        assert!(a["itb1.se.ln.gamma"].data().iter().all(|&v| v == 1.0));
        for variant in [
            cfg.clone(),
            ModelConfig { tied_persons: true, ..cfg.clone() },
            ModelConfig {
                spm: SpmConfig { per_part_projection: true, ..cfg.spm.clone() },
                ..cfg.clone()
            },
            ModelConfig::default(),
        ] {
            let p = init_params(&variant, 5, 0).unwrap();
            assert_eq!(param_count(&p), closed_form_count(&variant, 5));
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let map = builtin_part_map(15).unwrap();
        let model = IgFormer::new(tiny(), map, 3).unwrap();
        let s = sample(1, 32);
        let g = model.graphs(&s).unwrap();
        let a = model.logits(&s, &g.dsig).unwrap();
        assert_eq!(a.shape(), &[3]);
        assert_eq!(a, model.logits(&s, &g.dsig).unwrap());
        assert_eq!(model.tokens().unwrap(), 40);
    }

    #[test]
    fn centering_removes_common_translation() {
        let map = builtin_part_map(15).unwrap();
        let s = sample(2, 32);
        let off = [3.0, -1.5, 0.25];
        let moved = InteractionSample::new(s.person_a.translated(off), s.person_b.translated(off), 1, "s").unwrap();
        let model = IgFormer::new(tiny(), map.clone(), 3).unwrap();
        let g = model.graphs(&s).unwrap();
        let (a, b) = (model.logits(&s, &g.dsig).unwrap(), model.logits(&moved, &g.dsig).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        let raw = IgFormer::new(ModelConfig { center_input: false, ..tiny() }, map, 3).unwrap();
        assert_ne!(raw.logits(&s, &g.dsig).unwrap(), raw.logits(&moved, &g.dsig).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let map = builtin_part_map(15).unwrap();
        let model = IgFormer::new(tiny(), map, 3).unwrap();
        let s = sample(1, 32);
        let g = model.graphs(&s).unwrap();
        let mut wrong = s.clone();
        wrong.label = 7;
        assert!(matches!(model.logits(&wrong, &g.dsig), Err(Error::Config(_))));
        assert!(model.logits(&sample(1, 30), &g.dsig).is_err());
        assert!(ModelConfig { heads: 3, ..tiny() }.validate().is_err());
        assert!(ModelConfig { itb_layers: 0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn no_gimsa_isolates_persons() {
        let map = builtin_part_map(15).unwrap();
        let cfg = ModelConfig { mode: Mode::NoGimsa, ..tiny() };
        let model = IgFormer::new(cfg, map.clone(), 4).unwrap();
        let s = sample(2, 32);
        let g = model.graphs(&s).unwrap();
        let moved = InteractionSample::new(s.person_a.clone(), sample(9, 32).person_b, 1, "x").unwrap();
        // the person-m branch must not see person n, so the full forward
        // differs only through the pooled person-n tokens
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model.params);
        let layout = Layout { parts: 5, steps: 8 };
        let run = |tape: &mut Tape, smp: &InteractionSample| {
            let proj = ProjectionVars {
                kernels: vec![bound["spm.kernel"]],
                biases: vec![bound["spm.bias"]],
            };
            let hm = spm_forward(tape, &smp.person_a, &map, &model.config.spm, &proj).unwrap().tokens;
            let hn = spm_forward(tape, &smp.person_b, &map, &model.config.spm, &proj).unwrap().tokens;
            let gm = tape.constant(g.dsig.mn.clone());
            let (o, _) = itb_forward(tape, hm, hn, (gm, gm), &bound, 0, &model.config, layout, &mut None, None).unwrap();
            tape.value(o).clone()
        };
        let a = run(&mut tape, &s);
        let b = run(&mut tape, &moved);
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_and_digest() {
        let map = builtin_part_map(15).unwrap();
        let model = IgFormer::new(tiny(), map.clone(), 5).unwrap();
        let bytes = model.to_checkpoint();
        assert_eq!(IgFormer::from_checkpoint(tiny(), map.clone(), &bytes).unwrap(), model);
        let other = ModelConfig { k: 6, ..tiny() };
        assert!(IgFormer::from_checkpoint(other, map, &bytes).is_err());
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("both".parse::<Mode>().is_err());
    }
}
