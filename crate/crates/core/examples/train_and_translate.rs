//! Train a small model on synthetic clips, checkpoint it, reload, translate.
//!
//! `cargo run --release --example train_and_translate -- [epochs]`

use slt_core::fusion::FusionKind;
use slt_core::gradsuite::tiny_config;
use slt_core::pipeline::{ModelConfig, Trainer};
use slt_core::synthetic::synthetic_corpus;
use slt_core::text::Vocabulary;

fn main() -> slt_core::Result<()> {
    let epochs = std::env::args().nth(1).map_or(300, |s| s.parse().expect("epochs"));
    let data = synthetic_corpus(6, 16, 1)?;
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocabulary::train(&texts, 80)?;
    let config = ModelConfig {
        embed_dim: 16,
        ffn_dim: 32,
        batch_size: 3,
        epochs,
        validate_every: epochs / 4,
        lr: 3e-3,
        label_smoothing: 0.0,
        ..tiny_config(FusionKind::Lstm)
    };
    let dir = std::env::temp_dir().join("slt-example");
    let mut trainer = Trainer::new(config, vocab)?;
    println!("parameters: {}", trainer.parameter_count());
    trainer.fit(&data, &data, Some(&dir), &mut |line| println!("{line}"))?;

    let reloaded = Trainer::load(&dir.join("last.ckpt"))?;
    for s in &data {
        println!("{:>40} | {}", s.text, reloaded.translate(s, 3)?);
    }
    Ok(())
}
