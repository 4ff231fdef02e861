//! Builds the distance-based interaction graphs of an approach and a depart
//! sample, shows where each token's neighbours lie in time and round-trips
//! the graphs through the sidecar format.
//!
//! ```text
//! cargo run --release --example interaction_graphs
//! ```

use igformer::dsig::{build_graphs, read_sidecar, write_sidecar, DistanceGraphConfig};
use igformer::skeleton::builtin_part_map;
use igformer::spm::SpmConfig;
use igformer::trainer::{synth_generate, SynthClass, SynthSpec};

fn main() -> igformer::Result<()> {
    let spm = SpmConfig { patch: 4, stride: 4, padding: 0, frames: 32, per_part_projection: false };
    let cfg = DistanceGraphConfig::aligned(&spm, 8)?;
    let map = builtin_part_map(15)?;
    let parts = map.len();

    for class in [SynthClass::Approach, SynthClass::Depart] {
        let sample = synth_generate(&SynthSpec::new(class, spm.frames, 11))?;
        let graphs = build_graphs(&sample, &map, &cfg)?;
        let m = graphs.dsig.tokens();
        let first = graphs.dist_mn.row(0).iter().cloned().fold(f64::INFINITY, f64::min);
        let last = graphs.dist_mn.row(m - 1).iter().cloned().fold(f64::INFINITY, f64::min);
        println!("{class}: {m} tokens per person, k={}", graphs.dsig.k);
        println!("  nearest cross-person distance: first token {first:.3} m, last token {last:.3} m");

        // mean step of the neighbours of person A's tokens at each step
        let mut line = Vec::new();
        for t in 0..cfg.steps {
            let (mut sum, mut count) = (0.0, 0.0);
            for p in 0..parts {
                for (c, &v) in graphs.dsig.mn.row(t * parts + p).iter().enumerate() {
                    if v > 0.0 {
                        sum += (c / parts) as f64;
                        count += 1.0;
                    }
                }
            }
            line.push(format!("{:.1}", sum / count));
        }
        println!("  mean neighbour step per step of A: {}", line.join(" "));

        let bytes = write_sidecar(&graphs.dsig);
        println!("  sidecar {} bytes, round trip exact: {}", bytes.len(), read_sidecar(&bytes)? == graphs.dsig);
    }
    Ok(())
}
