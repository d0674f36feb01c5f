//! Memorise eight synthetic clips with the full-size transformer settings.
//!
//! `cargo run --release --example overfit -- [steps] [stgcn_layers]`

use std::time::Instant;

use slt_core::pipeline::{ModelConfig, Sample, Trainer};
use slt_core::synthetic::synthetic_corpus;
use slt_core::text::Vocabulary;

fn main() -> slt_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(300, |s| s.parse().expect("steps"));
    let stgcn_layers: usize = args.next().map_or(1, |s| s.parse().expect("stgcn_layers"));

    let data = synthetic_corpus(8, 16, 7)?;
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocabulary::train(&texts, 200)?;

    let config = ModelConfig {
        batch_size: 8,
        epochs: steps as usize,
        max_steps: steps,
        stgcn_layers,
        warmup_steps: 30,
        label_smoothing: 0.0,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut trainer = Trainer::new(config, vocab)?;
    trainer.total_steps = trainer.schedule_length(data.len());
    println!("parameters: {}", trainer.parameter_count());
    let start = Instant::now();
    let refs: Vec<&Sample> = data.iter().collect();
    for step in 0..steps {
        let loss = trainer.train_step(&refs)?;
        if step % 10 == 0 || step + 1 == steps {
            println!("step {step:4} loss {loss:.5} ({:.1}s)", start.elapsed().as_secs_f64());
        }
    }
    let report = trainer.evaluate_bleu(&data, 1)?;
    println!("{report}");
    for s in &data {
        println!("{:>40} | {}", s.text, trainer.translate(s, 1)?);
    }
    Ok(())
}
