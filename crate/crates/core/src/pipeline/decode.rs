use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::pipeline::model::{Model, Sample};
use crate::text::{BOS, EOS};

/// Anything that yields next-token log-probabilities for a prefix that
/// starts with bos.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> usize {
        EOS
    }
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A decoded sequence (bos excluded, eos included when generated).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// `log_prob / len` when `length_norm`, else `log_prob`.
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }

    /// Tokens with a trailing eos removed.
    pub fn content(&self, eos: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }
}

fn prefixed(start: usize, tokens: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(start);
    p.extend_from_slice(tokens);
    p
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode(model: &dyn StepModel, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let lp = model.next_log_probs(&prefixed(BOS, &h.tokens))?;
        let t = argmax(&lp);
        h.tokens.push(t);
        h.log_prob += lp[t];
        if t == model.eos() {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Draws each next token from the model distribution.
pub fn sample_decode(model: &dyn StepModel, max_len: usize, rng: &mut impl Rng) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let lp = model.next_log_probs(&prefixed(BOS, &h.tokens))?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut t = lp.len() - 1;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                t = i;
                break;
            }
        }
        h.tokens.push(t);
        h.log_prob += lp[t];
        if t == model.eos() {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

fn by_score(length_norm: bool) -> impl Fn(&Hypothesis, &Hypothesis) -> Ordering {
    move |a, b| {
        b.score(length_norm)
            .total_cmp(&a.score(length_norm))
            .then_with(|| a.tokens.cmp(&b.tokens))
    }
}

/// Beam search from bos.
///
/// Each step expands every live beam by every token and walks the candidates
/// best-first: eos-terminated ones retire to the finished pool, others become
/// live until `beam_size` are live, and the rest are discarded. At `max_len`
/// every candidate retires. Search ends when nothing is live or when
/// `beam_size` hypotheses have finished and the best of them scores at least
/// as well as the best live one. Returns the best finished hypothesis.
pub fn beam_search(
    model: &dyn StepModel,
    beam_size: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Hypothesis> {
    if beam_size == 0 {
        return Err(Error::invalid("beam_size must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let eos = model.eos();
    let cmp = by_score(length_norm);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=max_len {
        let mut candidates = Vec::with_capacity(live.len() * model.vocab_size());
        for h in &live {
            let lp = model.next_log_probs(&prefixed(BOS, &h.tokens))?;
            for (t, &l) in lp.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + l,
                    finished: t == eos,
                });
            }
        }
        candidates.sort_by(&cmp);
        live.clear();
        if step == max_len {
            finished.extend(candidates);
            break;
        }
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
                if live.len() == beam_size {
                    break;
                }
            }
        }
        if live.is_empty() {
            break;
        }
        if finished.len() >= beam_size {
            let best_done = finished.iter().map(|h| h.score(length_norm)).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live[0].score(length_norm);
            if best_done >= best_live {
                break;
            }
        }
    }
    finished.sort_by(&cmp);
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("beam search produced no hypothesis"))
}

/// Adapter decoding one sample with a trained [`Model`]; the encoder memory
/// is computed once.
pub struct ModelStepper<'m> {
    model: &'m Model,
    store: &'m ParamStore,
    memory: Tensor,
}

impl<'m> ModelStepper<'m> {
    pub fn new(model: &'m Model, store: &'m ParamStore, sample: &Sample) -> Result<Self> {
        let mut g = Graph::new();
        let m = model.encode(&mut g, store, &sample.keypoints, sample.features.as_ref(), None)?;
        Ok(ModelStepper {
            model,
            store,
            memory: g.value(m).clone(),
        })
    }
}

impl StepModel for ModelStepper<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let memory = g.constant_ref(&self.memory);
        let logits = self.model.decode_logits(&mut g, self.store, memory, prefix, None)?;
        let last = g.slice(logits, 0, prefix.len() - 1, 1)?;
        let lp = g.log_softmax(last, 1)?;
        Ok(g.value(lp).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed next-token table indexed by prefix length.
    struct Table(Vec<Vec<f64>>);

    impl StepModel for Table {
        fn vocab_size(&self) -> usize {
            3
        }
        fn eos(&self) -> usize {
            2
        }
        fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            Ok(self.0[prefix.len() - 1].iter().map(|p: &f64| p.ln()).collect())
        }
    }

    #[test]
    fn greedy_stops_at_eos() {
        let m = Table(vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4]]);
        let h = greedy_decode(&m, 5).unwrap();
        assert_eq!(h.tokens, vec![0, 2]);
        assert!(h.finished);
        assert_eq!(beam_search(&m, 1, 5, true).unwrap().tokens, h.tokens);
    }

    #[test]
    fn zero_sizes_rejected() {
        let m = Table(vec![vec![0.5, 0.25, 0.25]]);
        assert!(beam_search(&m, 0, 3, true).is_err());
        assert!(beam_search(&m, 2, 0, true).is_err());
        assert!(greedy_decode(&m, 0).is_err());
    }
}
