//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slt_core::pipeline::StepModel;
use slt_core::Result;

/// Textbook triple loop, summing `k` in ascending order from zero.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// All-pairs hop distances by breadth-first search over an edge list.
pub fn bfs_distances(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|s| {
            let mut d = vec![None; n];
            d[s] = Some(0);
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v].is_none() {
                        d[v] = Some(d[u].unwrap() + 1);
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

/// Clipped n-gram matches and hypothesis n-gram count by brute-force
/// enumeration: each hypothesis n-gram is paired with an unused equal
/// reference n-gram if one remains.
pub fn brute_ngram_counts(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let total = hyp.len() - n + 1;
    let ref_count = reference.len().saturating_sub(n - 1);
    let mut used = vec![false; ref_count];
    let mut matched = 0;
    for i in 0..total {
        for j in 0..ref_count {
            if !used[j] && hyp[i..i + n] == reference[j..j + n] {
                used[j] = true;
                matched += 1;
                break;
            }
        }
    }
    (matched, total)
}

/// Corpus BLEU-1..4 on a 0–100 scale from the brute-force counts.
pub fn brute_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> [f64; 4] {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            let (m, t) = brute_ngram_counts(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let bp = if hl == 0 {
        0.0
    } else if hl > rl {
        1.0
    } else {
        (1.0 - rl as f64 / hl as f64).exp()
    };
    let mut out = [0.0; 4];
    for n in 1..=4 {
        if (0..n).any(|i| matched[i] == 0) {
            continue;
        }
        let mut log_sum = 0.0;
        for i in 0..n {
            log_sum += (matched[i] as f64 / total[i] as f64).ln();
        }
        out[n - 1] = 100.0 * bp * (log_sum / n as f64).exp();
    }
    out
}

/// Next-token distributions drawn at random for every prefix.
pub struct RandomModel {
    pub vocab: usize,
    pub eos: usize,
    pub seed: u64,
}

impl RandomModel {
    pub fn probs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed ^ 0x51_7cc1_b727_220a;
        for &t in prefix {
            h = h.wrapping_mul(0x100_0000_01b3) ^ (t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let raw: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    }
}

impl StepModel for RandomModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn eos(&self) -> usize {
        self.eos
    }
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.probs(prefix).into_iter().map(f64::ln).collect())
    }
}

/// Best complete sequence by enumeration: every sequence that ends in eos
/// within `max_len` tokens, or has exactly `max_len` tokens.
pub fn exhaustive_best(model: &RandomModel, start: usize, max_len: usize, length_norm: bool) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        let mut prefix = vec![start];
        prefix.extend(&tokens);
        let probs = model.probs(&prefix);
        for (t, p) in probs.iter().enumerate() {
            let mut next = tokens.clone();
            next.push(t);
            let l = lp + p.ln();
            if t == model.eos || next.len() == max_len {
                let score = if length_norm { l / next.len() as f64 } else { l };
                let better = match &best {
                    None => true,
                    Some((bt, bs)) => score > *bs || (score == *bs && next < *bt),
                };
                if better {
                    best = Some((next, score));
                }
            } else {
                stack.push((next, l));
            }
        }
    }
    best.expect("at least one sequence")
}

/// Zipf-distributed synthetic corpus over `vocab` words.
pub fn zipf_corpus(sentences: usize, vocab: usize, len: std::ops::Range<usize>, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=vocab).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(vocab);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        cdf.partition_point(|&c| c < u).min(vocab - 1)
    };
    (0..sentences)
        .map(|_| {
            let n = rng.gen_range(len.clone());
            (0..n).map(|_| format!("w{}", draw(&mut rng))).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}
