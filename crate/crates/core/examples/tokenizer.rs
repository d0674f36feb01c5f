//! Learn a byte-pair vocabulary and watch sentences split into pieces.
//!
//! `cargo run --example tokenizer -- [vocab_size]`

use slt_core::text::{Tokenizer, Vocabulary};

const CORPUS: &str = "\
morgen regnet es im norden
im süden scheint die sonne
am abend regnet es im süden
in der nacht kühlt es ab
morgen scheint im norden die sonne";

fn main() -> slt_core::Result<()> {
    let size = std::env::args().nth(1).map_or(60, |s| s.parse().expect("vocab_size"));
    let lines: Vec<&str> = CORPUS.lines().collect();
    let vocab = Vocabulary::train(&lines, size)?;
    println!("{} tokens, {} merges", vocab.len(), vocab.merges().len());
    for (a, b) in vocab.merges().iter().take(8) {
        println!("  merge {a:?} + {b:?}");
    }
    for s in ["morgen regnet es", "die sonne scheint im westen"] {
        let ids = vocab.encode(s);
        println!("{s:?} -> {:?} -> {ids:?} -> {:?}", vocab.segment(s), vocab.decode(&ids));
    }
    Ok(())
}
