//! Traces one forward pass of a small model and summarises the per-head
//! fused attention of every block: row sums, the share of attention that
//! lands on distance-graph neighbours and the logits.
//!
//! ```text
//! cargo run --release --example attention_maps
//! ```

use igformer::gimsa::format_matrix;
use igformer::model::{IgFormer, ModelConfig};
use igformer::skeleton::builtin_part_map;
use igformer::spm::SpmConfig;
use igformer::trainer::{synth_generate, SynthClass, SynthSpec};

fn main() -> igformer::Result<()> {
    let cfg = ModelConfig {
        itb_layers: 2,
        hidden: 16,
        heads: 2,
        num_classes: 4,
        k: 6,
        init_std: 0.1,
        spm: SpmConfig { patch: 4, stride: 4, padding: 0, frames: 32, per_part_projection: false },
        ..ModelConfig::default()
    };
    let model = IgFormer::new(cfg, builtin_part_map(15)?, 2)?;
    let sample = synth_generate(&SynthSpec::new(SynthClass::RightHandShake, 32, 5))?;
    let dsig = model.graphs(&sample)?.dsig;
    let (logits, trace) = model.trace(&sample, &dsig)?;

    let m = dsig.tokens();
    for (b, heads) in trace.blocks.iter().enumerate() {
        for (h, head) in heads.iter().enumerate() {
            let r = &head.r_mn;
            let worst = (0..m).map(|i| (r.row(i).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
            let on_graph: f64 = (0..m)
                .map(|i| r.row(i).iter().zip(dsig.mn.row(i)).map(|(a, g)| a * g).sum::<f64>())
                .sum::<f64>()
                / m as f64;
            println!("block {b} head {h}: max |row sum - 1| {worst:.1e}, attention on graph neighbours {on_graph:.3}");
        }
    }
    let corner = &trace.blocks[0][0].r_mn;
    let text = format_matrix(corner);
    println!("first rows of block 0 head 0 (text dump format):");
    for line in text.lines().take(3) {
        let short: Vec<&str> = line.split_whitespace().take(6).collect();
        println!("  {} ...", short.join(" "));
    }
    println!("logits {:?}", logits.data());
    Ok(())
}
