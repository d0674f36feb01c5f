//! Corpus BLEU with clipped n-gram precision, and reduced BLEU.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::text::Blacklist;

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches over hypothesis n-grams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Precision {
    pub matched: u64,
    pub total: u64,
}

impl Precision {
    /// `true` when the hypothesis had no n-grams of this order.
    pub fn zero_denominator(&self) -> bool {
        self.total == 0
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    fn add(&mut self, other: Precision) {
        self.matched += other.matched;
        self.total += other.total;
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Each hypothesis n-gram is credited at most as often as it occurs in the reference.
pub fn clipped_precision(hyp: &[&str], reference: &[&str], n: usize) -> Precision {
    assert!(n >= 1, "n-gram order must be positive");
    let total = hyp.len().saturating_sub(n - 1) as u64;
    if total == 0 {
        return Precision::default();
    }
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Precision { matched, total }
}

/// `1` if the hypothesis is longer, else `exp(1 − ref/mt)`; `0` for an empty hypothesis.
pub fn brevity_penalty(mt_len: usize, ref_len: usize) -> f64 {
    if mt_len == 0 {
        0.0
    } else if mt_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / mt_len as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// `scores[k]` is BLEU-(k+1) on a 0–100 scale.
    pub scores: [f64; MAX_ORDER],
    pub precisions: [Precision; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// References that were empty (e.g. after blacklist filtering).
    pub empty_references: usize,
}

impl BleuReport {
    pub fn bleu(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.scores.iter().enumerate() {
            writeln!(f, "BLEU-{}: {s:.2}", k + 1)?;
        }
        writeln!(f, "BP: {:.6}", self.brevity_penalty)?;
        write!(f, "hyp_len: {}\nref_len: {}", self.hyp_len, self.ref_len)
    }
}

fn combine(precisions: &[Precision], bp: f64, n: usize) -> f64 {
    let ps = &precisions[..n];
    if ps.iter().any(|p| p.matched == 0) {
        return 0.0;
    }
    let log_mean = ps.iter().map(|p| p.value().ln()).sum::<f64>() / n as f64;
    100.0 * bp * log_mean.exp()
}

/// Corpus BLEU-1..4 over pre-tokenised sentences (counts summed over the corpus).
pub fn corpus_bleu_tokens<H, R>(hyps: &[H], refs: &[R]) -> Result<BleuReport>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    let mut precisions = [Precision::default(); MAX_ORDER];
    let (mut hyp_len, mut ref_len, mut empty_references) = (0, 0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().iter().map(String::as_str).collect();
        let r: Vec<&str> = r.as_ref().iter().map(String::as_str).collect();
        hyp_len += h.len();
        ref_len += r.len();
        if r.is_empty() {
            empty_references += 1;
        }
        for (k, p) in precisions.iter_mut().enumerate() {
            p.add(clipped_precision(&h, &r, k + 1));
        }
    }
    let bp = brevity_penalty(hyp_len, ref_len);
    let mut scores = [0.0; MAX_ORDER];
    for (k, s) in scores.iter_mut().enumerate() {
        *s = combine(&precisions, bp, k + 1);
    }
    Ok(BleuReport {
        scores,
        precisions,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
        empty_references,
    })
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Corpus BLEU-1..4 over whitespace-tokenised sentences.
pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T]) -> Result<BleuReport> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize(s.as_ref())).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize(s.as_ref())).collect();
    corpus_bleu_tokens(&h, &r)
}

/// Corpus BLEU-n for `1 ≤ n ≤ 4`.
pub fn bleu_n<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T], n: usize) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::invalid(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(corpus_bleu(hyps, refs)?.bleu(n))
}

/// BLEU after deleting blacklisted words from both sides.
pub fn reduced_bleu_report<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[S],
    refs: &[T],
    blacklist: &Blacklist,
) -> Result<BleuReport> {
    let filter = |s: &str| -> Vec<String> {
        s.split_whitespace()
            .filter(|w| !blacklist.contains(w))
            .map(String::from)
            .collect()
    };
    let h: Vec<Vec<String>> = hyps.iter().map(|s| filter(s.as_ref())).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| filter(s.as_ref())).collect();
    corpus_bleu_tokens(&h, &r)
}

pub fn reduced_bleu<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[S],
    refs: &[T],
    blacklist: &Blacklist,
    n: usize,
) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::invalid(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(reduced_bleu_report(hyps, refs, blacklist)?.bleu(n))
}
