//! Sub-word vocabulary, target embedding and frequency blacklists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::transformer::positional_encoding_table;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Stand-in for a space inside sub-word tokens.
pub const SPACE_MARK: char = '▁';
/// What `decode` prints for an unknown-character token.
pub const UNK_PLACEHOLDER: &str = "⁇";

const MERGES_SENTINEL: &str = "#MERGES";

pub trait Tokenizer {
    fn encode(&self, sentence: &str) -> Vec<usize>;
    fn decode(&self, ids: &[usize]) -> String;
    fn vocab_size(&self) -> usize;
}

/// Byte-pair style vocabulary: specials, characters, then learned merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

/// Splits text into merge domains: a piece starts at the beginning or at a
/// space marker, so merges never cross word boundaries.
fn pieces(sentence: &str) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for c in sentence.chars() {
        let c = if c == ' ' { SPACE_MARK } else { c };
        if c == SPACE_MARK || out.is_empty() {
            out.push(Vec::new());
        }
        out.last_mut().expect("piece exists").push(c.to_string());
    }
    out
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

impl Vocabulary {
    fn with_tokens(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::invalid(format!("vocabulary id {i} must be {s}")));
            }
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(r, p)| (p.clone(), r))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            merges,
            merge_rank,
        })
    }

    /// Learns merges by repeatedly fusing the most frequent adjacent pair
    /// (ties: lexicographically smallest pair) until `vocab_size` tokens exist
    /// or no pair occurs twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(Error::invalid("cannot learn a vocabulary from an empty corpus"));
        }
        let mut words: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut chars: Vec<String> = Vec::new();
        for s in corpus {
            for p in pieces(s.as_ref()) {
                chars.extend(p.iter().cloned());
                *words.entry(p).or_default() += 1;
            }
        }
        chars.sort();
        chars.dedup();
        let base = chars.len() + SPECIALS.len();
        if vocab_size < base {
            return Err(Error::invalid(format!(
                "vocab size {vocab_size} is below the {base} specials and characters of the corpus"
            )));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(chars);
        let mut known: HashSet<String> = tokens.iter().cloned().collect();
        let mut merges = Vec::new();
        let mut words: Vec<(Vec<String>, usize)> = words.into_iter().collect();

        while tokens.len() < vocab_size {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, f) in &words {
                for w in syms.windows(2) {
                    *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
                }
            }
            let best = counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some(((l, r), freq)) = best else { break };
            if freq < 2 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in &mut words {
                merge_pair(syms, &l, &r);
            }
            let joined = format!("{l}{r}");
            if known.insert(joined.clone()) {
                tokens.push(joined);
            }
            merges.push((l, r));
        }
        Self::with_tokens(tokens, merges)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Sub-word tokens of `sentence` without bos/eos.
    pub fn segment(&self, sentence: &str) -> Vec<String> {
        let mut out = Vec::new();
        for mut syms in pieces(sentence) {
            loop {
                let best = syms
                    .windows(2)
                    .filter_map(|w| self.merge_rank.get(&(w[0].clone(), w[1].clone())))
                    .min()
                    .copied();
                let Some(rank) = best else { break };
                let (l, r) = &self.merges[rank];
                merge_pair(&mut syms, l, r);
            }
            out.extend(syms);
        }
        out
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{}\t{i}", escape(t));
        }
        s.push_str(MERGES_SENTINEL);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{}\t{}", escape(l), escape(r));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut tokens: Vec<String> = Vec::new();
        let mut merges = Vec::new();
        let mut in_merges = false;
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line == MERGES_SENTINEL {
                in_merges = true;
                continue;
            }
            let Some((a, b)) = line.split_once('\t') else {
                return Err(parse_err(lineno, "expected two tab-separated fields".into()));
            };
            let a = unescape(a).map_err(|m| parse_err(lineno, m))?;
            if in_merges {
                let b = unescape(b).map_err(|m| parse_err(lineno, m))?;
                merges.push((a, b));
            } else {
                let id: usize = b
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad token id {b:?}")))?;
                if id != tokens.len() {
                    return Err(parse_err(lineno, format!("expected id {}, found {id}", tokens.len())));
                }
                tokens.push(a);
            }
        }
        let vocab = Self::with_tokens(tokens, merges).map_err(|e| parse_err(0, e.to_string()))?;
        for (l, r) in &vocab.merges {
            if vocab.id(&format!("{l}{r}")).is_none() {
                return Err(parse_err(0, format!("merge {l:?} {r:?} yields no known token")));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

impl Tokenizer for Vocabulary {
    /// `[bos, sub-words…, eos]`; characters outside the inventory become unk.
    fn encode(&self, sentence: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(self.segment(sentence).iter().map(|t| self.id(t).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    fn decode(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => s.push_str(UNK_PLACEHOLDER),
                _ => match self.tokens.get(id) {
                    Some(t) => s.push_str(t),
                    None => s.push_str(UNK_PLACEHOLDER),
                },
            }
        }
        s.replace(SPACE_MARK, " ")
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }
}

fn escape(t: &str) -> String {
    let mut s = String::with_capacity(t.len());
    for c in t.chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            '\t' => s.push_str("\\t"),
            '\n' => s.push_str("\\n"),
            '\r' => s.push_str("\\r"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(t: &str) -> std::result::Result<String, String> {
    let mut s = String::with_capacity(t.len());
    let mut it = t.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            s.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => s.push('\\'),
            Some('t') => s.push('\t'),
            Some('n') => s.push('\n'),
            Some('r') => s.push('\r'),
            other => return Err(format!("bad escape \\{}", other.map_or(String::new(), String::from))),
        }
    }
    Ok(s)
}

/// Token embeddings plus sinusoidal positions, `[n × d]`.
pub fn embed_target(g: &mut Graph<'_>, table: Var, ids: &[usize]) -> Result<Var> {
    let e = g.embedding(table, ids)?;
    let (n, d) = g.value(e).dims2()?;
    let pe = g.constant(positional_encoding_table(n, d)?);
    g.add(e, pe)
}

fn is_latin(c: char) -> bool {
    c.is_ascii() || ('\u{00C0}'..='\u{024F}').contains(&c) || ('\u{1E00}'..='\u{1EFF}').contains(&c)
}

/// Lowercases words written entirely in Latin script; other scripts pass
/// through unchanged.
pub fn normalize_word(w: &str) -> String {
    if w.chars().all(is_latin) {
        w.to_lowercase()
    } else {
        w.to_string()
    }
}

/// Word counts sorted by descending frequency, then lexicographically.
pub fn word_frequencies<S: AsRef<str>>(corpus: &[S]) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in corpus {
        for w in s.as_ref().split_whitespace() {
            *counts.entry(normalize_word(w)).or_default() += 1;
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// The `K` most frequent words of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blacklist {
    words: Vec<String>,
    set: HashSet<String>,
    source: String,
    k: usize,
}

impl Blacklist {
    pub fn build<S: AsRef<str>>(corpus: &[S], k: usize, source: impl Into<String>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("blacklist size must be at least 1"));
        }
        let words: Vec<String> = word_frequencies(corpus)
            .into_iter()
            .take(k)
            .map(|(w, _)| w)
            .collect();
        Ok(Self::from_words(words, source, k))
    }

    pub fn from_words(words: Vec<String>, source: impl Into<String>, k: usize) -> Self {
        let set = words.iter().map(|w| normalize_word(w)).collect();
        Blacklist {
            words,
            set,
            source: source.into(),
            k,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.set.contains(&normalize_word(word))
    }

    pub fn to_file_string(&self) -> String {
        self.words.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let k = words.len();
        Ok(Self::from_words(words, path.display().to_string(), k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aa_merged_first() {
        let v = Vocabulary::train(&["aaab aaab"], 100).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn character_level_at_boundary() {
        let corpus = ["ab ba"];
        // a, b, space marker
        let v = Vocabulary::train(&corpus, 7).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), 7);
        assert!(Vocabulary::train(&corpus, 6).is_err());
    }

    #[test]
    fn encode_empty_and_unknown() {
        let v = Vocabulary::train(&["guten abend"], 40).unwrap();
        assert_eq!(v.encode(""), vec![BOS, EOS]);
        assert_eq!(v.decode(&v.encode("guten abend")), "guten abend");
        let ids = v.encode("gutez");
        assert!(ids.contains(&UNK));
        assert_eq!(v.decode(&ids), "gute⁇");
    }

    #[test]
    fn blacklist_examples() {
        let corpus = ["a b a", "a c"];
        let b1 = Blacklist::build(&corpus, 1, "t").unwrap();
        assert_eq!(b1.words(), &["a"]);
        let b2 = Blacklist::build(&corpus, 2, "t").unwrap();
        assert_eq!(b2.words(), &["a", "b"]);
        assert_eq!(Blacklist::build(&corpus, 10, "t").unwrap().len(), 3);
        assert!(Blacklist::build(&corpus, 0, "t").is_err());
    }

    #[test]
    fn escape_roundtrip() {
        for t in ["a\tb", "x\\n", "\n", "plain"] {
            assert_eq!(unescape(&escape(t)).unwrap(), t);
        }
    }
}
