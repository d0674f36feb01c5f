//! Greedy, beam and sampled decoding of an untrained model.
//!
//! `cargo run --release --example beam_search`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slt_core::fusion::FusionKind;
use slt_core::gradsuite::tiny_config;
use slt_core::pipeline::{beam_search, greedy_decode, sample_decode, ModelStepper, Trainer};
use slt_core::synthetic::synthetic_corpus;
use slt_core::text::{Tokenizer, Vocabulary};

fn main() -> slt_core::Result<()> {
    let data = synthetic_corpus(2, 12, 5)?;
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocabulary::train(&texts, 30)?;
    let trainer = Trainer::new(tiny_config(FusionKind::Summation), vocab)?;
    let stepper = ModelStepper::new(&trainer.model, &trainer.store, &data[0])?;
    let show = |name: &str, tokens: &[usize], lp: f64| {
        println!("{name:<8} {lp:8.3}  {:?}", trainer.vocab.decode(tokens));
    };
    let g = greedy_decode(&stepper, 8)?;
    show("greedy", &g.tokens, g.log_prob);
    for width in [2, 5, 10] {
        let b = beam_search(&stepper, width, 8, true)?;
        show(&format!("beam {width}"), &b.tokens, b.log_prob);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = sample_decode(&stepper, 8, &mut rng)?;
    show("sample", &s.tokens, s.log_prob);
    Ok(())
}
