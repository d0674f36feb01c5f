//! Corpus BLEU and the reduced variant that ignores frequent words.
//!
//! `cargo run --example bleu`

use slt_core::metrics::{corpus_bleu, reduced_bleu};
use slt_core::text::Blacklist;

fn main() -> slt_core::Result<()> {
    let refs = [
        "am montag regnet es im norden und im osten",
        "im süden bleibt es trocken und sonnig",
        "der wind weht schwach aus west",
    ];
    let hyps = [
        "am montag regnet es im osten",
        "im süden ist es sonnig und trocken",
        "der wind weht mäßig aus west",
    ];
    let report = corpus_bleu(&hyps, &refs)?;
    println!("{report}");

    let blacklist = Blacklist::build(&refs, 3, "references")?;
    println!("ignoring {:?}", blacklist.words());
    for n in 1..=4 {
        println!("rBLEU-{n}: {:.2}", reduced_bleu(&hyps, &refs, &blacklist, n)?);
    }
    Ok(())
}
