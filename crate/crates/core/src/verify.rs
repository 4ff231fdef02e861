//! Self-check battery behind `igformer verify`.
//!
//! Every check has a stable identifier. Gradient checks compare analytic
//! gradients with central finite differences; the distance-graph oracle
//! recomputes graphs by brute force, sorting every row.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsig::{build_graphs, read_sidecar, write_sidecar, DistanceGraphConfig, Dsig};
use crate::gimsa::{fuse_graphs, gi_msa, sdig, GiMsaConfig, GiMsaVars, HeadVars, Layout};
use crate::model::{bind, igformer_forward, itb_forward, param_count, param_shapes, ForwardOptions, IgFormer, Mode, ModelConfig};
use crate::skeleton::{builtin_part_map, BodyPartMap, InteractionSample, SkeletonSequence};
use crate::spm::{time_major_order, SpmConfig};
use crate::tensor::gradcheck::{check_tampered, numeric_grad, rel_err};
use crate::tensor::{conv_output_len, Tape, Tensor, TensorError, Var};
use crate::trainer::{prepare_examples, synth_dataset, train, TrainConfig};
use crate::Result;

/// Relative error bound for gradient checks.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(id: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(id: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(id, passed, detail),
            Err(e) => Self::new(id, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<28} {}", self.id, self.detail)
    }
}

pub fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape and data agree")
}

/// Fixed non-uniform weighting that turns any output into a scalar.
pub fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>;

/// One random instance of a differentiable operation.
pub struct GradCase {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn case(op: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'static) -> GradCase {
    GradCase {
        op,
        inputs,
        build: Box::new(move |t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y)
        }),
    }
}

fn gimsa_case(rng: &mut ChaCha8Rng) -> GradCase {
    let layout = Layout { parts: 2, steps: 3 };
    let m = layout.tokens();
    let binary = |rng: &mut ChaCha8Rng| {
        Tensor::new(vec![m, m], (0..m * m).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect()).expect("square")
    };
    let (g_mn, g_nm) = (binary(rng), binary(rng));
    let mut inputs = vec![random(rng, &[m, 4]), random(rng, &[m, 4])];
    for _ in 0..2 {
        inputs.extend([random(rng, &[2, 2]), random(rng, &[2, 2]), random(rng, &[2, 2]), random(rng, &[1])]);
    }
    inputs.extend([random(rng, &[4, 4]), random(rng, &[4, 4])]);
    case("gi_msa", inputs, move |t, v| {
        let heads = (0..2)
            .map(|h| HeadVars {
                w_q: v[2 + 4 * h],
                w_k: v[3 + 4 * h],
                w_v: v[4 + 4 * h],
                alpha: v[5 + 4 * h],
            })
            .collect();
        let vars = GiMsaVars { heads, w_m: v[10], w_n: v[11] };
        let (a, b) = (t.constant(g_mn.clone()), t.constant(g_nm.clone()));
        let (o_m, o_n) = gi_msa(t, v[0], v[1], a, b, &vars, layout, &GiMsaConfig::new(2), None).map_err(into_tensor_error)?;
        let n = t.scale(o_n, -0.5)?;
        t.add(o_m, n)
    })
}

fn into_tensor_error(e: crate::Error) -> TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => TensorError::Config {
            op: "check",
            detail: other.to_string(),
        },
    }
}

/// Names of the operations covered by [`op_cases`].
pub const GRAD_OPS: [&str; 24] = [
    "matmul", "add", "sub", "mul", "add_bias", "scale", "scale_by", "transpose", "softmax_rows", "layer_norm", "gelu",
    "concat_last", "concat_rows", "narrow_cols", "gather_rows", "reshape", "mean_axis", "repeat_axis", "conv2d",
    "resize", "sum", "cross_entropy", "fuse_graphs", "gi_msa",
];

/// One random instance of every operation in [`GRAD_OPS`].
pub fn op_cases(rng: &mut ChaCha8Rng) -> Vec<GradCase> {
    let class = rng.gen_range(0..5);
    let mut r = |shape: &[usize]| random(rng, shape);
    let mut cases = vec![
        case("matmul", vec![r(&[3, 4]), r(&[4, 2])], |t, v| t.matmul(v[0], v[1])),
        case("add", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.add(v[0], v[1])),
        case("sub", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.mul(v[0], v[1])),
        case("add_bias", vec![r(&[3, 4]), r(&[4])], |t, v| t.add_bias(v[0], v[1])),
        case("scale", vec![r(&[3, 4])], |t, v| t.scale(v[0], 0.7)),
        case("scale_by", vec![r(&[3, 4]), r(&[1])], |t, v| t.scale_by(v[0], v[1])),
        case("transpose", vec![r(&[3, 4])], |t, v| t.transpose(v[0])),
        case("softmax_rows", vec![r(&[3, 5])], |t, v| t.softmax_rows(v[0])),
        case("layer_norm", vec![r(&[3, 6]), r(&[6]), r(&[6])], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6)),
        case("gelu", vec![r(&[3, 4])], |t, v| t.gelu(v[0])),
        case("concat_last", vec![r(&[3, 2]), r(&[3, 3])], |t, v| t.concat_last(&[v[0], v[1]])),
        case("concat_rows", vec![r(&[2, 3]), r(&[3, 3])], |t, v| t.concat_rows(&[v[0], v[1]])),
        case("narrow_cols", vec![r(&[3, 5])], |t, v| t.narrow_cols(v[0], 1, 3)),
        case("gather_rows", vec![r(&[4, 3])], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3])),
        case("reshape", vec![r(&[3, 4])], |t, v| t.reshape(v[0], &[2, 6])),
        case("mean_axis", vec![r(&[2, 3, 4])], |t, v| t.mean_axis(v[0], 1)),
        case("repeat_axis", vec![r(&[3, 4])], |t, v| t.repeat_axis(v[0], 1, 2)),
        case("conv2d", vec![r(&[10, 4, 3]), r(&[2, 4, 4, 3]), r(&[2])], |t, v| t.conv2d(v[0], v[1], v[2], 2, 1)),
        case("resize", vec![r(&[5, 3, 3])], |t, v| t.resize(v[0], 4)),
        case("sum", vec![r(&[3, 4])], |t, v| t.sum(v[0])),
        case("cross_entropy", vec![r(&[5])], move |t, v| t.cross_entropy(v[0], class)),
    ];
    let g = Tensor::new(vec![3, 3], (0..9).map(|i| f64::from(i % 2 == 0)).collect()).expect("3×3");
    cases.push(case("fuse_graphs", vec![r(&[3, 3]), r(&[1])], move |t, v| {
        let d = t.constant(g.clone());
        fuse_graphs(t, d, Some(v[0]), v[1]).map_err(into_tensor_error)
    }));
    cases.push(gimsa_case(rng));
    cases
}

/// Finite-difference checks of every operation over `instances` random
/// inputs. The op named by `corrupt` gets a perturbed analytic gradient.
pub fn gradient_suite(seed: u64, instances: usize, corrupt: Option<&str>) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0f64; GRAD_OPS.len()];
    let mut errors: Vec<Option<String>> = vec![None; GRAD_OPS.len()];
    for _ in 0..instances {
        for (i, c) in op_cases(&mut rng).into_iter().enumerate() {
            let tamper = corrupt.is_some_and(|name| name == c.op || name == format!("grad.{}", c.op));
            let res = check_tampered(&c.inputs, &c.build, |g: &mut [Tensor]| {
                if tamper {
                    g[0].data_mut()[0] += 1e-2;
                }
            });
            match res {
                Ok(results) => {
                    for r in results {
                        worst[i] = worst[i].max(if r.max_rel_err.is_nan() { f64::INFINITY } else { r.max_rel_err });
                    }
                }
                Err(e) => errors[i] = Some(e.to_string()),
            }
        }
    }
    GRAD_OPS
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let id = format!("grad.{op}");
            match &errors[i] {
                Some(e) => Outcome::new(&id, false, format!("error: {e}")),
                None => Outcome::new(&id, worst[i] < GRAD_TOL, format!("max rel err {:.2e} over {instances} instances", worst[i])),
            }
        })
        .collect()
}

/// The small end-to-end configuration used for model-level checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        itb_layers: 2,
        hidden: 8,
        heads: 2,
        num_classes: 3,
        k: 4,
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

pub fn random_sample(rng: &mut impl Rng, frames: usize, joints: usize, label: usize) -> InteractionSample {
    let mut person = |index| {
        let coords = (0..frames * joints * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SkeletonSequence::new(frames, joints, coords, index).expect("consistent sizes")
    };
    let (a, b) = (person(0), person(1));
    InteractionSample::new(a, b, label, "random").expect("matching persons")
}

fn loss_of(model: &IgFormer, sample: &InteractionSample, dsig: &Dsig) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &model.params);
    let logits = igformer_forward(&mut tape, &bound, &model.config, &model.map, sample, dsig, ForwardOptions::default())?;
    let loss = tape.cross_entropy(logits, sample.label)?;
    Ok(tape.value(loss).item())
}

/// Largest relative error between backpropagated and finite-difference
/// gradients over every parameter of `model`.
pub fn end_to_end_grad_error(model: &IgFormer, sample: &InteractionSample) -> Result<f64> {
    let dsig = model.graphs(sample)?.dsig;
    let analytic = model.sample_grad(sample, &dsig, None)?.grads;
    let mut worst: f64 = 0.0;
    for (name, value) in &model.params {
        let numeric = numeric_grad(value, |probe| {
            let mut m = model.clone();
            m.params.insert(name.clone(), probe.clone());
            loss_of(&m, sample, &dsig).map_err(into_tensor_error)
        })?;
        for (&a, &n) in analytic[name].data().iter().zip(numeric.data()) {
            worst = worst.max(rel_err(a, n));
        }
    }
    Ok(worst)
}

/// Distance graphs recomputed the slow way: per-frame part centroids, means
/// over clipped windows, all pairwise distances, then a full sort of every
/// row with ties at the k-th distance included.
pub fn brute_force_dsig(sample: &InteractionSample, map: &BodyPartMap, cfg: &DistanceGraphConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let tokens = |seq: &SkeletonSequence| {
        let frames = seq.frames();
        let mut out = Vec::new();
        for t in 0..cfg.steps {
            let start = (t * cfg.stride).saturating_sub(cfg.padding);
            let end = (t * cfg.stride + cfg.window).saturating_sub(cfg.padding).min(frames);
            for (_, joints) in map.iter() {
                let mut acc = [0.0; 3];
                for f in start..end {
                    let mut c = [0.0; 3];
                    for &j in joints {
                        let p = seq.joint(f, j);
                        for x in 0..3 {
                            c[x] += p[x];
                        }
                    }
                    for x in 0..3 {
                        acc[x] += c[x] / joints.len() as f64;
                    }
                }
                out.push(acc.map(|v| v / (end - start) as f64));
            }
        }
        out
    };
    let (tm, tn) = (tokens(&sample.person_a), tokens(&sample.person_b));
    let graph = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        from.iter()
            .map(|a| {
                let d: Vec<f64> = to
                    .iter()
                    .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                    .collect();
                let mut sorted = d.clone();
                sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
                let kth = sorted[cfg.k - 1];
                d.iter().map(|&v| if v <= kth { 1.0 } else { 0.0 }).collect()
            })
            .collect()
    };
    (graph(&tm, &tn), graph(&tn, &tm))
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (_, cols) = t.rows_cols();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn dsig_oracle(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = builtin_part_map(15)?;
    let spm = SpmConfig {
        patch: 8,
        stride: 4,
        padding: 2,
        frames: 40,
        per_part_projection: false,
    };
    let cfg = DistanceGraphConfig::aligned(&spm, 15)?;
    let mut mismatches = 0;
    for i in 0..100 {
        let s = random_sample(&mut rng, 40, 15, 0);
        let g = build_graphs(&s, &map, &cfg)?.dsig;
        let (mn, nm) = brute_force_dsig(&s, &map, &cfg);
        if rows(&g.mn) != mn || rows(&g.nm) != nm {
            mismatches += 1;
            log::warn!("distance graph of random sample {i} differs from the oracle");
        }
    }
    Ok((mismatches == 0, format!("{mismatches} of 100 samples differ (T=40, J=15, M=50, k=15)")))
}

fn dsig_translation(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = builtin_part_map(15)?;
    let cfg = tiny_config().graph_config()?;
    for _ in 0..20 {
        let s = random_sample(&mut rng, 32, 15, 0);
        let offset = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let moved = InteractionSample::new(s.person_a.translated(offset), s.person_b.translated(offset), 0, "moved")?;
        if build_graphs(&s, &map, &cfg)?.dsig != build_graphs(&moved, &map, &cfg)?.dsig {
            return Ok((false, format!("graphs changed under translation by {offset:?}")));
        }
    }
    Ok((true, "20 random rigid translations".into()))
}

fn dsig_row_sums(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = builtin_part_map(15)?;
    for k in [1, 3, 7] {
        let cfg = DistanceGraphConfig { k, ..tiny_config().graph_config()? };
        let s = random_sample(&mut rng, 32, 15, 0);
        let g = build_graphs(&s, &map, &cfg)?;
        for (graph, dist) in [(&g.dsig.mn, &g.dist_mn), (&g.dsig.nm, &g.dist_nm)] {
            for (row, drow) in rows(graph).iter().zip(rows(dist)) {
                let sum: f64 = row.iter().sum();
                let mut sorted = drow.clone();
                sorted.sort_by(f64::total_cmp);
                let distinct = sorted.windows(2).all(|w| w[0] < w[1]);
                if sum < k as f64 || (distinct && sum != k as f64) {
                    return Ok((false, format!("row sum {sum} with k={k}")));
                }
            }
        }
        // duplicated persons give exact ties on every row
        let dup = InteractionSample::new(s.person_a.clone(), s.person_a.clone(), 0, "dup")?;
        let g = build_graphs(&dup, &map, &DistanceGraphConfig { k: 1, ..cfg })?;
        if rows(&g.dsig.mn).iter().enumerate().any(|(i, r)| r[i] != 1.0) {
            return Ok((false, "identical persons with k=1 miss the diagonal".into()));
        }
    }
    Ok((true, "rows sum to k on distinct distances, ≥ k otherwise".into()))
}

fn dsig_sidecar(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = builtin_part_map(15)?;
    let g = build_graphs(&random_sample(&mut rng, 32, 15, 0), &map, &tiny_config().graph_config()?)?.dsig;
    let back = read_sidecar(&write_sidecar(&g))?;
    Ok((back == g, "sidecar write/read round trip".into()))
}

fn gimsa_row_stochastic(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = IgFormer::new(ModelConfig { init_std: 0.5, ..tiny_config() }, builtin_part_map(15)?, seed)?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let s = random_sample(&mut rng, 32, 15, 0);
        let dsig = model.graphs(&s)?.dsig;
        let (_, trace) = model.trace(&s, &dsig)?;
        for head in trace.blocks.iter().flatten() {
            for r in [&head.r_mn, &head.r_nm] {
                for row in rows(r) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    Ok((worst <= 1e-6, format!("max |row sum - 1| = {worst:.2e}")))
}

fn gimsa_sdig_oracle(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (parts, steps) in [(2, 3), (4, 2), (1, 8), (2, 4)] {
        let layout = Layout { parts, steps };
        let m = layout.tokens();
        let d = 3;
        let (hm, hn, wq, wk) = (random(&mut rng, &[m, d]), random(&mut rng, &[m, d]), random(&mut rng, &[d, d]), random(&mut rng, &[d, d]));
        let mut tape = Tape::new();
        let v = [&hm, &hn, &wq, &wk].map(|t| tape.constant(t.clone()));
        let s = sdig(&mut tape, v[0], v[1], v[2], v[3], layout, &GiMsaConfig::new(1), (d as f64).sqrt())?;
        for a in 0..m {
            let q: Vec<f64> = (0..d).map(|c| (0..d).map(|e| hm.at2(a, e) * wq.at2(e, c)).sum()).collect();
            for b in 0..m {
                let (tb, pb) = (b / parts, b % parts);
                let key_in: Vec<f64> = (0..d)
                    .map(|c| {
                        let tc = (0..steps).map(|s| hn.at2(s * parts + pb, c)).sum::<f64>() / steps as f64;
                        let sc = (0..parts).map(|p| hn.at2(tb * parts + p, c)).sum::<f64>() / parts as f64;
                        hn.at2(b, c) + tc + sc
                    })
                    .collect();
                let key: Vec<f64> = (0..d).map(|c| (0..d).map(|e| key_in[e] * wk.at2(e, c)).sum()).collect();
                let want = q.iter().zip(&key).map(|(x, y)| x * y).sum::<f64>() / (d as f64).sqrt();
                worst = worst.max((tape.value(s).at2(a, b) - want).abs());
            }
        }
    }
    Ok((worst < 1e-12, format!("max abs err {worst:.2e} on M ≤ 8")))
}

fn spm_steps_formula(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let (frames, patch, stride, padding): (usize, usize, usize, usize) = (rng.gen_range(1..60), rng.gen_range(1..9), rng.gen_range(1..6), rng.gen_range(0..4));
        let formula = (frames + 2 * padding).checked_sub(patch).map(|n| n / stride + 1);
        let counted = (0..).take_while(|t| t * stride + patch <= frames + 2 * padding).count();
        let counted = (counted > 0).then_some(counted);
        if conv_output_len(frames, patch, stride, padding) != formula || formula != counted {
            return Ok((false, format!("T={frames} P={patch} stride={stride} padding={padding}")));
        }
        if let Some(l) = formula {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::zeros(&[frames, patch]));
            let k = tape.constant(Tensor::zeros(&[1, patch, patch]));
            let b = tape.constant(Tensor::zeros(&[1]));
            let y = tape.conv2d(x, k, b, stride, padding)?;
            if tape.shape(y)[0] != l {
                return Ok((false, format!("convolution output length differs for T={frames}")));
            }
        }
    }
    Ok((true, "200 random (T, P, stride, padding)".into()))
}

fn spm_shared_projection() -> Result<(bool, String)> {
    let cfg = ModelConfig::default();
    let shapes = param_shapes(&cfg, 5)?;
    let kernels: Vec<_> = shapes.iter().filter(|(n, _)| n.starts_with("spm.") && n.ends_with("kernel")).collect();
    let ok = kernels.len() == 1 && kernels[0].1 == [cfg.hidden, cfg.spm.patch, cfg.spm.patch, 3];
    Ok((ok, format!("{} projection kernel(s) for 5 parts and 2 persons", kernels.len())))
}

fn spm_layout() -> Result<(bool, String)> {
    for (parts, steps) in [(5, 25), (3, 4), (1, 7)] {
        let order = time_major_order(parts, steps);
        for t in 0..steps {
            for p in 0..parts {
                if order[t * parts + p] != p * steps + t {
                    return Ok((false, format!("token {t}·{parts}+{p} is not part {p} at step {t}")));
                }
            }
        }
    }
    Ok((true, "token t·B+p holds part p at step t".into()))
}

fn model_swap_tied(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = IgFormer::new(ModelConfig { tied_persons: true, ..tiny_config() }, builtin_part_map(15)?, seed)?;
    for _ in 0..5 {
        let s = random_sample(&mut rng, 32, 15, 1);
        let g = model.graphs(&s)?.dsig;
        if model.logits(&s, &g)? != model.logits(&s.swapped(), &g.swapped())? {
            return Ok((false, "swapping persons changed the logits".into()));
        }
    }
    Ok((true, "logits bit-identical under person swap".into()))
}

/// Gradient of a weighted sum of person m's block outputs with respect to
/// person n's input tokens.
pub fn cross_person_gradient(mode: Mode, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig { mode, init_std: 0.2, ..tiny_config() };
    let model = IgFormer::new(cfg.clone(), builtin_part_map(15)?, seed)?;
    let layout = Layout {
        parts: 5,
        steps: cfg.spm.steps()?,
    };
    let m = layout.tokens();
    let s = random_sample(&mut rng, 32, 15, 0);
    let dsig = model.graphs(&s)?.dsig;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &model.params);
    let hm = tape.leaf(random(&mut rng, &[m, cfg.hidden]), true);
    let hn = tape.leaf(random(&mut rng, &[m, cfg.hidden]), true);
    let graphs = (tape.constant(dsig.mn.clone()), tape.constant(dsig.nm.clone()));
    let (mut a, mut b) = (hm, hn);
    for block in 0..cfg.itb_layers {
        (a, b) = itb_forward(&mut tape, a, b, graphs, &bound, block, &cfg, layout, &mut None, None)?;
    }
    let loss = weighted_sum(&mut tape, a)?;
    let grads = tape.backward(loss)?;
    Ok(grads.get(hn).cloned().unwrap_or_else(|| Tensor::zeros(&[m, cfg.hidden])))
}

fn model_cross_gradients(seed: u64) -> Result<(bool, String)> {
    let isolated = cross_person_gradient(Mode::NoGimsa, seed)?;
    let coupled = cross_person_gradient(Mode::Full, seed)?;
    let zero = isolated.data().iter().all(|&v| v == 0.0);
    let norm = coupled.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((zero && norm > 0.0, format!("no_gimsa exactly zero: {zero}, full norm {norm:.3e}")))
}

fn model_deterministic(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = IgFormer::new(tiny_config(), builtin_part_map(15)?, seed)?;
    let again = IgFormer::new(tiny_config(), builtin_part_map(15)?, seed)?;
    let s = random_sample(&mut rng, 32, 15, 0);
    let g = model.graphs(&s)?.dsig;
    let ok = model == again && model.logits(&s, &g)? == again.logits(&s, &g)?;
    Ok((ok, "same seed gives identical parameters and logits".into()))
}

fn checkpoint_round_trip(seed: u64) -> Result<(bool, String)> {
    let model = IgFormer::new(tiny_config(), builtin_part_map(15)?, seed)?;
    let back = IgFormer::from_checkpoint(tiny_config(), model.map.clone(), &model.to_checkpoint())?;
    let other = ModelConfig { k: 5, ..tiny_config() };
    let rejected = IgFormer::from_checkpoint(other, model.map.clone(), &model.to_checkpoint()).is_err();
    Ok((back == model && rejected, "round trip exact; other configuration rejected".into()))
}

fn config_defaults() -> Result<(bool, String)> {
    let m = ModelConfig::default();
    let t = TrainConfig::default();
    let steps = m.spm.steps()?;
    let ok = m.spm.frames == 256
        && m.spm.patch == 16
        && m.spm.stride == 10
        && m.spm.padding == 2
        && steps == 25
        && m.spm.tokens(5)? == 125
        && m.k == 15
        && m.itb_layers == 3
        && m.ffn_mult == 4
        && t.lr == 0.01
        && t.momentum == 0.9
        && t.milestones == [30, 40]
        && t.batch_size == 32;
    Ok((ok, format!("T=256 P=16 stride=10 padding=2 L={steps} M=125 k=15 N=3 lr=0.01 batch=32")))
}

fn train_determinism(seed: u64) -> Result<(bool, String)> {
    let run = || -> Result<(String, Vec<u8>)> {
        let cfg = ModelConfig {
            itb_layers: 1,
            num_classes: 4,
            spm: SpmConfig { frames: 16, ..tiny_config().spm },
            ..tiny_config()
        };
        let mut model = IgFormer::new(cfg, builtin_part_map(15)?, seed)?;
        let data = prepare_examples(&synth_dataset(8, 4, 16, seed)?, &model)?;
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            milestones: vec![1],
            noise_sigma_m: 0.01,
            seed,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &tcfg, &data[..6], &data[6..], |_| {})?;
        Ok((report.metrics_log(), model.to_checkpoint()))
    };
    let (a, b) = (run()?, run()?);
    Ok((a == b, "two seeded runs give byte-identical logs and checkpoints".into()))
}

fn tensor_finite() -> Result<(bool, String)> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![f64::NAN, 1.0]));
    let caught = matches!(tape.softmax_rows(x), Err(TensorError::NonFinite { .. }));
    Ok((caught, "non-finite values are rejected".into()))
}

/// Every check, in report order.
pub fn run_all(seed: u64, corrupt_grad: Option<&str>) -> Vec<Outcome> {
    let mut out = gradient_suite(seed, 20, corrupt_grad);
    let e2e = (|| -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = IgFormer::new(tiny_config(), builtin_part_map(15)?, seed)?;
        let err = end_to_end_grad_error(&model, &random_sample(&mut rng, 32, 15, 1))?;
        Ok((err < GRAD_TOL, format!("max rel err {err:.2e} over {} parameters", param_count(&model.params))))
    })();
    out.push(Outcome::from_result("grad.end_to_end", e2e));
    let checks: [(&str, fn(u64) -> Result<(bool, String)>); 11] = [
        ("dsig.oracle", dsig_oracle),
        ("dsig.translation", dsig_translation),
        ("dsig.row_sums", dsig_row_sums),
        ("dsig.sidecar", dsig_sidecar),
        ("gimsa.row_stochastic", gimsa_row_stochastic),
        ("gimsa.sdig_oracle", gimsa_sdig_oracle),
        ("spm.steps_formula", spm_steps_formula),
        ("model.person_swap", model_swap_tied),
        ("model.cross_person_grad", model_cross_gradients),
        ("model.deterministic", model_deterministic),
        ("checkpoint.round_trip", checkpoint_round_trip),
    ];
    for (id, f) in checks {
        out.push(Outcome::from_result(id, f(seed)));
    }
    out.push(Outcome::from_result("spm.shared_projection", spm_shared_projection()));
    out.push(Outcome::from_result("spm.layout", spm_layout()));
    out.push(Outcome::from_result("config.defaults", config_defaults()));
    out.push(Outcome::from_result("tensor.finite", tensor_finite()));
    out.push(Outcome::from_result("train.determinism", train_determinism(seed)));
    out
}
