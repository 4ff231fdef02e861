//! Acceptance criteria, one PASS/FAIL line each.
//!
//! ```text
//! cargo test --release -p igformer --test acceptance
//! ```

use std::time::{Duration, Instant};

use igformer::config::RunConfig;
use igformer::dsig::{build_graphs, DistanceGraphConfig, Dsig};
use igformer::gimsa::{sdig, GiMsaConfig, Layout};
use igformer::model::{IgFormer, Mode, ModelConfig};
use igformer::skeleton::{builtin_part_map, BodyPartMap, InteractionSample, SkeletonSequence};
use igformer::spm::SpmConfig;
use igformer::tensor::{Tape, Tensor};
use igformer::trainer::{evaluate, evaluate_noisy, prepare_examples, synth_dataset, train, Example, TrainConfig};
use igformer::verify::{cross_person_gradient, end_to_end_grad_error, gradient_suite, tiny_config, GRAD_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn random_sample(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> InteractionSample {
    let mut person = |i| {
        let coords = (0..frames * joints * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SkeletonSequence::new(frames, joints, coords, i).unwrap()
    };
    let (a, b) = (person(0), person(1));
    InteractionSample::new(a, b, 0, "random").unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn config_fidelity() -> Outcome {
    let m = ModelConfig::default();
    let t = TrainConfig::default();
    let map = builtin_part_map(25)?;
    let steps = m.spm.steps()?;
    let tokens = m.spm.tokens(map.len())?;
    let checks = [
        ("T", m.spm.frames, 256),
        ("P", m.spm.patch, 16),
        ("stride", m.spm.stride, 10),
        ("padding", m.spm.padding, 2),
        ("B", map.len(), 5),
        ("L", steps, 25),
        ("M", tokens, 125),
        ("k", m.k, 15),
        ("N", m.itb_layers, 3),
        ("ffn", m.ffn_mult, 4),
        ("batch", t.batch_size, 32),
    ];
    let mut bad: Vec<String> = checks.iter().filter(|(_, got, want)| got != want).map(|(n, got, want)| format!("{n}={got}≠{want}")).collect();
    if t.lr != 0.01 || t.momentum != 0.9 || t.milestones != [30, 40] {
        bad.push(format!("lr {} momentum {} milestones {:?}", t.lr, t.momentum, t.milestones));
    }
    if RunConfig::parse("")? != RunConfig::default() {
        bad.push("empty configuration file differs from defaults".into());
    }
    let detail = if bad.is_empty() {
        "T=256 P=16 stride=10 padding=2 B=5 L=25 M=125 k=15 N=3 FFN 4D lr 0.01 momentum 0.9 milestones {30,40} batch 32".to_string()
    } else {
        bad.join(", ")
    };
    Ok((bad.is_empty(), detail))
}

fn gradient_suite_criterion() -> Outcome {
    let ops = gradient_suite(11, 3, None);
    let failed: Vec<String> = ops.iter().filter(|o| !o.passed).map(|o| format!("{} ({})", o.id, o.detail)).collect();
    let cfg = tiny_config();
    let model = IgFormer::new(ModelConfig { init_std: 0.2, ..cfg.clone() }, builtin_part_map(15)?, 5)?;
    let tokens = model.tokens()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sample = random_sample(&mut rng, cfg.spm.frames, 15);
    sample.label = 1;
    let e2e = end_to_end_grad_error(&model, &sample)?;
    let shape_ok = (cfg.hidden, cfg.heads, cfg.itb_layers, cfg.spm.frames, tokens) == (8, 2, 2, 32, 40);
    let ok = failed.is_empty() && e2e < GRAD_TOL && shape_ok;
    let detail = format!(
        "{} ops, {} failed{}; end-to-end D=8 h=2 N=2 T=32 M={tokens} max rel err {e2e:.2e}",
        ops.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(": {}", failed.join("; ")) }
    );
    Ok((ok, detail))
}

/// Per-frame part centroids, window means with the window clipped to the
/// sequence, Euclidean distances and a rank count per row: an entry is set
/// when fewer than `k` distances in its row are strictly smaller.
fn oracle_graphs(sample: &InteractionSample, map: &BodyPartMap, spm: &SpmConfig, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let frames = sample.frames() as isize;
    let steps = ((frames + 2 * spm.padding as isize - spm.patch as isize) / spm.stride as isize + 1) as usize;
    let parts: Vec<Vec<usize>> = map.iter().map(|(_, j)| j.to_vec()).collect();
    let tokens = |seq: &SkeletonSequence| -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for t in 0..steps {
            let lo = (t * spm.stride) as isize - spm.padding as isize;
            let hi = lo + spm.patch as isize;
            let window: Vec<usize> = (lo.max(0)..hi.min(frames)).map(|f| f as usize).collect();
            for joints in &parts {
                let centroid = |f: usize| {
                    let mut c = [0.0; 3];
                    for &j in joints {
                        let p = seq.joint(f, j);
                        for x in 0..3 {
                            c[x] += p[x];
                        }
                    }
                    c.map(|v| v / joints.len() as f64)
                };
                let mut acc = [0.0; 3];
                for &f in &window {
                    let c = centroid(f);
                    for x in 0..3 {
                        acc[x] += c[x];
                    }
                }
                out.push(acc.map(|v| v / window.len() as f64));
            }
        }
        out
    };
    let (a, b) = (tokens(&sample.person_a), tokens(&sample.person_b));
    let graph = |from: &[[f64; 3]], to: &[[f64; 3]]| -> Vec<Vec<f64>> {
        from.iter()
            .map(|p| {
                let d: Vec<f64> = to.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()).collect();
                d.iter().map(|&x| if d.iter().filter(|&&y| y < x).count() < k { 1.0 } else { 0.0 }).collect()
            })
            .collect()
    };
    (graph(&a, &b), graph(&b, &a))
}

fn dsig_oracle() -> Outcome {
    let map = builtin_part_map(15)?;
    let spm = SpmConfig { patch: 8, stride: 4, padding: 2, frames: 40, per_part_projection: false };
    let k = 15;
    let cfg = DistanceGraphConfig::aligned(&spm, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut differ = 0;
    for _ in 0..100 {
        let s = random_sample(&mut rng, 40, 15);
        let g = build_graphs(&s, &map, &cfg)?.dsig;
        let (mn, nm) = oracle_graphs(&s, &map, &spm, k);
        if rows(&g.mn) != mn || rows(&g.nm) != nm {
            differ += 1;
        }
    }
    Ok((differ == 0, format!("{differ} of 100 samples differ (T=40, J=15, M={}, k={k})", cfg.steps * map.len())))
}

/// Query-key scores with temporal and spatial context computed entry by
/// entry.
fn sdig_entrywise(hm: &Tensor, hn: &Tensor, wq: &Tensor, wk: &Tensor, parts: usize, steps: usize) -> Vec<Vec<f64>> {
    let m = parts * steps;
    let d = hm.shape()[1];
    let at = |t: &Tensor, r: usize, c: usize| t.data()[r * t.shape()[1] + c];
    (0..m)
        .map(|a| {
            let q: Vec<f64> = (0..d).map(|c| (0..d).map(|e| at(hm, a, e) * at(wq, e, c)).sum()).collect();
            (0..m)
                .map(|b| {
                    let (t, p) = (b / parts, b % parts);
                    let key: Vec<f64> = (0..d)
                        .map(|c| {
                            (0..d)
                                .map(|e| {
                                    let same_part = (0..steps).map(|s| at(hn, s * parts + p, e)).sum::<f64>() / steps as f64;
                                    let same_time = (0..parts).map(|r| at(hn, t * parts + r, e)).sum::<f64>() / parts as f64;
                                    (at(hn, b, e) + same_part + same_time) * at(wk, e, c)
                                })
                                .sum()
                        })
                        .collect();
                    q.iter().zip(&key).map(|(x, y)| x * y).sum::<f64>() / (d as f64).sqrt()
                })
                .collect()
        })
        .collect()
}

fn graph_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let map = builtin_part_map(15)?;

    let model = IgFormer::new(ModelConfig { init_std: 0.5, ..tiny_config() }, map.clone(), 3)?;
    let mut worst_row: f64 = 0.0;
    for _ in 0..5 {
        let s = random_sample(&mut rng, 32, 15);
        let dsig = model.graphs(&s)?.dsig;
        let (_, trace) = model.trace(&s, &dsig)?;
        for head in trace.blocks.iter().flatten() {
            for r in [&head.r_mn, &head.r_nm] {
                for row in rows(r) {
                    worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }

    let cfg = model.config.graph_config()?;
    let mut translation_ok = true;
    let mut sums_exact = true;
    let mut sums_at_least = true;
    for i in 0..20 {
        let s = random_sample(&mut rng, 32, 15);
        let g = build_graphs(&s, &map, &cfg)?.dsig;
        let offset = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let moved = InteractionSample::new(s.person_a.translated(offset), s.person_b.translated(offset), 0, "moved")?;
        translation_ok &= build_graphs(&moved, &map, &cfg)?.dsig == g;
        sums_exact &= row_sums(&g).iter().all(|&r| r == cfg.k as f64);
        // quantized coordinates force tied distances
        let coarse = |seq: &SkeletonSequence| {
            let c = seq.coords().iter().map(|v| (v * 2.0).round() / 2.0).collect();
            SkeletonSequence::new(seq.frames(), seq.joints(), c, 0).unwrap()
        };
        let tied = InteractionSample::new(coarse(&s.person_a), coarse(&s.person_a), 0, format!("tied{i}"))?;
        sums_at_least &= row_sums(&build_graphs(&tied, &map, &cfg)?.dsig).iter().all(|&r| r >= cfg.k as f64);
    }

    let mut worst_sdig: f64 = 0.0;
    for (parts, steps) in [(2, 3), (4, 2), (1, 8), (2, 4), (3, 2)] {
        let m = parts * steps;
        let d = 4;
        let mut t = |shape: &[usize]| Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (hm, hn, wq, wk) = (t(&[m, d]), t(&[m, d]), t(&[d, d]), t(&[d, d]));
        let mut tape = Tape::new();
        let v = [&hm, &hn, &wq, &wk].map(|x| tape.constant(x.clone()));
        let out = sdig(&mut tape, v[0], v[1], v[2], v[3], Layout { parts, steps }, &GiMsaConfig::new(1), (d as f64).sqrt())?;
        let want = sdig_entrywise(&hm, &hn, &wq, &wk, parts, steps);
        for (got, want) in rows(tape.value(out)).iter().zip(&want) {
            for (g, w) in got.iter().zip(want) {
                worst_sdig = worst_sdig.max((g - w).abs());
            }
        }
    }

    let ok = worst_row <= 1e-6 && translation_ok && sums_exact && sums_at_least && worst_sdig <= 1e-12;
    Ok((
        ok,
        format!(
            "max |row sum - 1| {worst_row:.1e}; translation bit-identical {translation_ok}; row sums = k {sums_exact}, ≥ k with ties {sums_at_least}; entrywise score error {worst_sdig:.1e}"
        ),
    ))
}

fn row_sums(g: &Dsig) -> Vec<f64> {
    [&g.mn, &g.nm].iter().flat_map(|t| rows(t).into_iter().map(|r| r.iter().sum::<f64>())).collect()
}

fn symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let model = IgFormer::new(ModelConfig { tied_persons: true, init_std: 0.2, ..tiny_config() }, builtin_part_map(15)?, 9)?;
    let mut swap_ok = true;
    for _ in 0..5 {
        let s = random_sample(&mut rng, 32, 15);
        let g = model.graphs(&s)?.dsig;
        swap_ok &= model.logits(&s, &g)?.data() == model.logits(&s.swapped(), &g.swapped())?.data();
    }
    let isolated = cross_person_gradient(Mode::NoGimsa, 41)?;
    let coupled = cross_person_gradient(Mode::Full, 41)?;
    let zero = isolated.data().iter().all(|&v| v == 0.0);
    let norm = coupled.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((
        swap_ok && zero && norm > 0.0,
        format!("tied swap bit-identical {swap_ok}; no_gimsa cross gradient exactly zero {zero}; full cross gradient norm {norm:.2e}"),
    ))
}

/// Tiny configuration and schedule shared by the learnability and noise
/// criteria.
fn learnability_setup(mode: Mode) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        itb_layers: 2,
        hidden: 32,
        heads: 4,
        num_classes: 4,
        k: 8,
        mode,
        init_std: 0.1,
        spm: SpmConfig { patch: 4, stride: 4, padding: 0, frames: 32, per_part_projection: false },
        ..ModelConfig::default()
    };
    let train = TrainConfig { epochs: 60, lr: 0.002, batch_size: 8, milestones: vec![50], seed: 3, ..TrainConfig::default() };
    (model, train)
}

fn train_mode(mode: Mode, train_raw: &[InteractionSample], val_raw: &[InteractionSample]) -> Result<(IgFormer, Vec<Example>, f64), Box<dyn std::error::Error>> {
    let (mcfg, tcfg) = learnability_setup(mode);
    let mut model = IgFormer::new(mcfg, builtin_part_map(15)?, 7)?;
    let train_set = prepare_examples(train_raw, &model)?;
    let val_set = prepare_examples(val_raw, &model)?;
    train(&mut model, &tcfg, &train_set, &val_set, |_| {})?;
    let acc = evaluate(&model, &val_set)?.accuracy;
    Ok((model, val_set, acc))
}

fn learnability(trained: &mut Option<(IgFormer, Vec<Example>)>) -> Outcome {
    let start = Instant::now();
    let train_raw = synth_dataset(200, 4, 32, 1)?;
    let val_raw = synth_dataset(80, 4, 32, 2)?;
    let (model, val_set, full) = train_mode(Mode::Full, &train_raw, &val_raw)?;
    let (_, _, isolated) = train_mode(Mode::NoGimsa, &train_raw, &val_raw)?;
    let elapsed = start.elapsed();
    *trained = Some((model, val_set));
    let ok = full >= 0.95 && isolated < full && elapsed <= Duration::from_secs(15 * 60);
    Ok((ok, format!("200/80 samples, 60 epochs: full {full:.4}, no_gimsa {isolated:.4}, {:.0}s", elapsed.as_secs_f64())))
}

fn noise_direction(trained: &Option<(IgFormer, Vec<Example>)>) -> Outcome {
    let Some((model, val)) = trained else {
        return Ok((false, "no trained model".into()));
    };
    let clean = evaluate_noisy(model, val, 0.0, 0)?.accuracy;
    let noisy = evaluate_noisy(model, val, 0.04, 0)?.accuracy;
    Ok((clean >= noisy, format!("val accuracy σ=0 {clean:.4}, σ=4 cm {noisy:.4}")))
}

fn determinism() -> Outcome {
    let run = || -> Result<(String, Vec<u8>), Box<dyn std::error::Error>> {
        let (mut mcfg, _) = learnability_setup(Mode::Full);
        mcfg.hidden = 16;
        let mut model = IgFormer::new(mcfg, builtin_part_map(15)?, 13)?;
        let data = prepare_examples(&synth_dataset(24, 4, 32, 17)?, &model)?;
        let tcfg = TrainConfig { epochs: 3, lr: 0.002, batch_size: 4, milestones: vec![2], seed: 13, noise_sigma_m: 0.01, ..TrainConfig::default() };
        let report = train(&mut model, &tcfg, &data[..16], &data[16..], |_| {})?;
        Ok((report.metrics_log(), model.to_checkpoint()))
    };
    let (a, b) = (run()?, run()?);
    Ok((a == b, format!("metric logs identical {}, checkpoints identical {} ({} bytes)", a.0 == b.0, a.1 == b.1, a.1.len())))
}

fn main() {
    let mut trained = None;
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome, took: Duration| {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!("{}  {name}  {detail}  [{:.1}s]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    };
    macro_rules! criterion {
        ($name:expr, $e:expr) => {{
            let start = Instant::now();
            let outcome = $e;
            report($name, outcome, start.elapsed());
        }};
    }
    criterion!("configuration_fidelity", config_fidelity());
    criterion!("gradient_suite", gradient_suite_criterion());
    criterion!("dsig_oracle", dsig_oracle());
    criterion!("graph_invariants", graph_invariants());
    criterion!("symmetry", symmetry());
    criterion!("learnability", learnability(&mut trained));
    criterion!("noise_direction", noise_direction(&trained));
    criterion!("determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
