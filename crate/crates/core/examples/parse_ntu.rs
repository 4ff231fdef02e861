//! Parses an NTU RGB+D `.skeleton` file into a two-person sample and writes
//! the canonical binary form. Without an argument a small recording is
//! generated in memory.
//!
//! ```text
//! cargo run --release --example parse_ntu -- [S001C001P001R001A050.skeleton]
//! ```

use std::path::Path;

use igformer::skeleton::{ntu_label_from_name, parse_ntu, read_canonical, write_canonical, NTU_JOINTS};

/// One body block: id line, joint count, then one line per joint with the
/// position first.
fn body(id: u64, x0: f64) -> String {
    let mut s = format!("{id} 0 1 1 0 0 0 0 0 2\n{NTU_JOINTS}\n");
    for j in 0..NTU_JOINTS {
        let y = j as f64 * 0.06;
        s += &format!("{x0} {y} 3.0 0 0 0 0 0 0 0 0 2\n");
    }
    s
}

fn recording(frames: usize) -> String {
    let mut s = format!("{frames}\n");
    for t in 0..frames {
        let step = t as f64 * 0.01;
        s += "2\n";
        s += &body(72057594037931101, -0.5 + step);
        s += &body(72057594037931102, 0.5 - step);
    }
    s
}

fn main() -> igformer::Result<()> {
    let (name, bytes) = match std::env::args().nth(1) {
        Some(path) => {
            let name = Path::new(&path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let bytes = std::fs::read(&path).map_err(|e| igformer::Error::io(&path, e))?;
            (name, bytes)
        }
        None => ("S001C001P001R001A058.skeleton".to_string(), recording(40).into_bytes()),
    };
    let rec = parse_ntu(&bytes)?;
    println!("{name}: {} frames, {} tracked bodies", rec.frames, rec.bodies.len());
    for b in &rec.bodies {
        println!("  body {} present in {} frames", b.id, b.presence);
    }
    let label = ntu_label_from_name(&name)?;
    let sample = rec.into_sample(label, name.trim_end_matches(".skeleton"))?;
    println!("label {label}, {} frames × {} joints per person", sample.frames(), sample.joints());
    println!("person A joint 0 at frame 0: {:?}", sample.person_a.joint(0, 0));
    println!("person B joint 0 at frame 0: {:?}", sample.person_b.joint(0, 0));

    let bytes = write_canonical(&sample);
    let back = read_canonical(&bytes)?;
    println!("canonical form: {} bytes, round trip exact: {}", bytes.len(), back == sample);
    Ok(())
}
