//! Runs the semantic partition module on one synthetic sample and prints the
//! body-part token layout.
//!
//! ```text
//! cargo run --release --example partition_tokens
//! ```

use igformer::model::{bind, IgFormer, ModelConfig};
use igformer::skeleton::builtin_part_map;
use igformer::spm::{spm_forward, time_major_order, ProjectionVars, SpmConfig};
use igformer::tensor::Tape;
use igformer::trainer::{synth_generate, SynthClass, SynthSpec};

fn main() -> igformer::Result<()> {
    let spm = SpmConfig { patch: 8, stride: 4, padding: 2, frames: 48, per_part_projection: false };
    let cfg = ModelConfig { hidden: 16, heads: 2, spm: spm.clone(), ..ModelConfig::default() };
    let map = builtin_part_map(15)?;
    for (name, joints) in map.iter() {
        println!("part {name:<10} joints {joints:?}");
    }
    let steps = spm.steps()?;
    println!("T={} P={} stride={} padding={} -> L={steps} steps, M={} tokens", spm.frames, spm.patch, spm.stride, spm.padding, spm.tokens(map.len())?);

    let sample = synth_generate(&SynthSpec::new(SynthClass::RightLegKick, spm.frames, 4))?;
    let model = IgFormer::new(cfg, map.clone(), 1)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &model.params);
    let proj = ProjectionVars { kernels: vec![bound["spm.kernel"]], biases: vec![bound["spm.bias"]] };
    let bpt = spm_forward(&mut tape, &sample.person_a, &map, &spm, &proj)?;
    let tokens = tape.value(bpt.tokens);
    println!("person A tokens: {:?}", tokens.shape());

    // row t·B + p holds part p at step t
    let order = time_major_order(bpt.parts, bpt.steps);
    for (row, &part_major) in order.iter().enumerate().take(2 * bpt.parts) {
        let (t, p) = (row / bpt.parts, row % bpt.parts);
        let head: Vec<String> = tokens.row(row)[..4].iter().map(|v| format!("{v:+.3}")).collect();
        println!("row {row:>2}: step {t} part {p} (part-major index {part_major:>2})  [{} ...]", head.join(" "));
    }
    Ok(())
}
