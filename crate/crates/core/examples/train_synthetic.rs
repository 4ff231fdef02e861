//! Trains the small model on the synthetic interaction set and compares modes.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [modes...]
//! ```

use igformer::model::{IgFormer, Mode, ModelConfig};
use igformer::skeleton::builtin_part_map;
use igformer::spm::SpmConfig;
use igformer::trainer::{evaluate, prepare_examples, synth_dataset, train, TrainConfig, METRICS_HEADER};

fn main() -> igformer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|a| a.parse().ok()).unwrap_or(60);
    let modes: Vec<Mode> = if args.len() > 1 {
        args[1..].iter().map(|m| m.parse()).collect::<igformer::Result<_>>()?
    } else {
        vec![Mode::Full, Mode::NoGimsa]
    };

    let train_raw = synth_dataset(200, 4, 32, 1)?;
    let val_raw = synth_dataset(80, 4, 32, 2)?;
    for mode in modes {
        let cfg = ModelConfig {
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
        let mut model = IgFormer::new(cfg, builtin_part_map(15)?, 7)?;
        let train_set = prepare_examples(&train_raw, &model)?;
        let val_set = prepare_examples(&val_raw, &model)?;
        let tcfg = TrainConfig {
            epochs,
            lr: 0.002,
            batch_size: 8,
            milestones: vec![epochs * 5 / 6],
            seed: 3,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        println!("mode\t{METRICS_HEADER}");
        train(&mut model, &tcfg, &train_set, &val_set, |m| println!("{mode}\t{m}"))?;
        let report = evaluate(&model, &val_set)?;
        println!("{mode}: val accuracy {:.4} in {:.1}s", report.accuracy, start.elapsed().as_secs_f64());
        print!("{report}");
    }
    Ok(())
}
