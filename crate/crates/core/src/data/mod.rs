//! Synthetic translation tasks: vocabularies, seeded generators and batching.

mod batch;
pub mod escan;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use batch::{one_hot, to_batch, SeqBatch};
pub use escan::{enumerate_subphrases, escan_oracle, oracle_with_sources};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const SPECIALS: [&str; 3] = ["<pad>", "<sos>", "<eos>"];

/// Token/id bijection with the three special tokens at ids 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    side: &'static str,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: AsRef<str>>(side: &'static str, words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate token {t:?} in {side} vocabulary")));
            }
        }
        Ok(Self { side, tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken {
            side: self.side,
            token: token.to_string(),
        })
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange { id, size: self.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of the non-special words.
    pub fn content_ids(&self) -> std::ops::Range<usize> {
        SPECIALS.len()..self.len()
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Token strings for `ids`, stopping before the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    OneToOne,
    Reversed,
    Sort,
    Escan,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::OneToOne => "one-to-one",
            TaskKind::Reversed => "reversed",
            TaskKind::Sort => "sort",
            TaskKind::Escan => "escan",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "one-to-one" | "onetoone" => Ok(TaskKind::OneToOne),
            "reversed" | "reverse" => Ok(TaskKind::Reversed),
            "sort" => Ok(TaskKind::Sort),
            "escan" => Ok(TaskKind::Escan),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Task definition. Lengths count content words, before EOS is appended.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Dictionary size for the one-to-one family; ignored by eSCAN.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn one_to_one(vocab_size: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::OneToOne,
            vocab_size,
            min_len,
            max_len,
            seed,
        }
    }

    pub fn escan(min_len: usize, max_len: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::Escan,
            vocab_size: escan::OUTPUT_WORDS.len(),
            min_len,
            max_len,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len > self.max_len {
            return Err(Error::Invalid(format!(
                "length range [{}, {}] is empty",
                self.min_len, self.max_len
            )));
        }
        match self.kind {
            TaskKind::Escan => {
                // The shortest subphrase plus its separator has two tokens.
                if self.max_len < 2 {
                    return Err(Error::Invalid(format!(
                        "eSCAN phrases have at least 2 tokens, max length {} is unattainable",
                        self.max_len
                    )));
                }
            }
            _ => {
                if self.vocab_size == 0 {
                    return Err(Error::Invalid("vocabulary size must be positive".into()));
                }
                if self.min_len == 0 {
                    return Err(Error::Invalid("phrases need at least one word".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_words(&self) -> Vec<String> {
        match self.kind {
            TaskKind::Escan => escan::INPUT_WORDS.iter().map(|s| s.to_string()).collect(),
            _ => (0..self.vocab_size).map(letter).collect(),
        }
    }

    pub fn output_words(&self) -> Vec<String> {
        match self.kind {
            TaskKind::Escan => escan::OUTPUT_WORDS.iter().map(|s| s.to_string()).collect(),
            TaskKind::Sort => self.input_words(),
            _ => (1..=self.vocab_size).map(|i| i.to_string()).collect(),
        }
    }

    pub fn input_vocab(&self) -> Vocab {
        Vocab::new("input", &self.input_words()).expect("generated words are distinct")
    }

    pub fn output_vocab(&self) -> Vocab {
        Vocab::new("output", &self.output_words()).expect("generated words are distinct")
    }

    /// Longest encoder sequence, EOS included.
    pub fn max_input_steps(&self) -> usize {
        self.max_len + 1
    }

    /// Longest decoder sequence, EOS included. eSCAN outputs never outgrow their inputs.
    pub fn max_output_steps(&self) -> usize {
        self.max_len + 1
    }

    /// Seeded stream of samples.
    pub fn generator(&self, seed: u64) -> Result<Generator> {
        self.validate()?;
        Ok(Generator {
            spec: *self,
            input: self.input_vocab(),
            output: self.output_vocab(),
            subphrases: enumerate_subphrases(),
            rng: seed::rng(seed),
        })
    }

    /// Target words for an input phrase under this task's rule.
    pub fn target_for<S: AsRef<str>>(&self, input: &[S]) -> Result<Vec<String>> {
        let words: Vec<&str> = input.iter().map(AsRef::as_ref).collect();
        if self.kind == TaskKind::Escan {
            return Ok(escan_oracle(&words)?.into_iter().map(String::from).collect());
        }
        let vocab = self.input_vocab();
        let mut idx: Vec<usize> = words
            .iter()
            .map(|w| vocab.id(w).map(|i| i - SPECIALS.len()))
            .collect::<Result<_>>()?;
        match self.kind {
            TaskKind::OneToOne => {}
            TaskKind::Reversed => idx.reverse(),
            TaskKind::Sort => {
                idx.sort_unstable();
                return Ok(idx.into_iter().map(letter).collect());
            }
            TaskKind::Escan => unreachable!(),
        }
        Ok(idx.into_iter().map(|i| (i + 1).to_string()).collect())
    }
}

/// Name of dictionary word `i`: `A`..`Z`, then `W26`, `W27`, ...
fn letter(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("W{i}")
    }
}

/// Token ids of one sample; both sides end with EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

pub struct Generator {
    spec: TaskSpec,
    input: Vocab,
    output: Vocab,
    subphrases: Vec<Vec<&'static str>>,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn input_vocab(&self) -> &Vocab {
        &self.input
    }

    pub fn output_vocab(&self) -> &Vocab {
        &self.output
    }

    fn words(&mut self) -> Vec<String> {
        let spec = self.spec;
        if spec.kind == TaskKind::Escan {
            loop {
                let mut words: Vec<&str> = Vec::new();
                while words.len() < spec.min_len.max(1) {
                    let p = self.subphrases.choose(&mut self.rng).expect("non-empty list");
                    words.extend(p);
                    words.push(escan::SEPARATOR);
                }
                if words.len() <= spec.max_len {
                    return words.into_iter().map(String::from).collect();
                }
            }
        }
        let len = self.rng.random_range(spec.min_len..=spec.max_len);
        (0..len)
            .map(|_| letter(self.rng.random_range(0..spec.vocab_size)))
            .collect()
    }

    pub fn next_sample(&mut self) -> Sample {
        let words = self.words();
        let target = self.spec.target_for(&words).expect("generated phrases are legal");
        let mut input = self.input.encode(&words).expect("generated words are in vocabulary");
        let mut target = self.output.encode(&target).expect("oracle words are in vocabulary");
        input.push(EOS);
        target.push(EOS);
        Sample { input, target }
    }

    pub fn take_samples(&mut self, n: usize) -> Vec<Sample> {
        (0..n).map(|_| self.next_sample()).collect()
    }
}

impl Iterator for Generator {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        Some(self.next_sample())
    }
}

/// One sample per line: input words, a tab, output words. EOS is omitted.
pub fn write_tsv(out: &mut impl Write, samples: &[Sample], input: &Vocab, output: &Vocab) -> Result<()> {
    let io = |e| Error::io("<tsv>", e);
    for s in samples {
        writeln!(out, "{}\t{}", input.decode(&s.input)?.join(" "), output.decode(&s.target)?.join(" ")).map_err(io)?;
    }
    Ok(())
}

/// Parses lines written by [`write_tsv`] back into word lists.
pub fn read_tsv(text: &str) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::Invalid(format!("line {} has no tab", i + 1)))?;
            let split = |s: &str| s.split_whitespace().map(String::from).collect();
            Ok((split(a), split(b)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &Vocab, ids: &[usize]) -> String {
        v.decode(ids).unwrap().join(" ")
    }

    #[test]
    fn task_rule_examples() {
        let mut spec = TaskSpec::one_to_one(4, 4, 5, 0);
        let input = ["B", "A", "C", "A", "D"];
        assert_eq!(spec.target_for(&input).unwrap().join(" "), "2 1 3 1 4");
        spec.kind = TaskKind::Reversed;
        assert_eq!(spec.target_for(&input).unwrap().join(" "), "4 1 3 1 2");
        spec.kind = TaskKind::Sort;
        assert_eq!(spec.target_for(&["B", "C", "A", "D"]).unwrap().join(" "), "A B C D");
        assert_eq!(spec.target_for(&["A", "B", "B", "D"]).unwrap().join(" "), "A B B D");
    }

    #[test]
    fn single_word_dictionary() {
        let spec = TaskSpec::one_to_one(1, 3, 3, 0);
        let mut g = spec.generator(1).unwrap();
        let s = g.next_sample();
        assert_eq!(words(g.output_vocab(), &s.target), "1 1 1");
    }

    #[test]
    fn unknown_token_is_an_error() {
        let spec = TaskSpec::one_to_one(3, 1, 3, 0);
        assert!(matches!(spec.target_for(&["Z"]), Err(Error::UnknownToken { .. })));
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = TaskSpec::escan(10, 15, 0);
        let a = spec.generator(42).unwrap().take_samples(50);
        let b = spec.generator(42).unwrap().take_samples(50);
        let c = spec.generator(43).unwrap().take_samples(50);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn escan_lengths_in_range() {
        let spec = TaskSpec::escan(10, 15, 0);
        for s in spec.generator(5).unwrap().take(2000) {
            let n = s.input.len() - 1;
            assert!((10..=15).contains(&n), "length {n}");
            assert!(s.target.len() <= s.input.len());
        }
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(TaskSpec::escan(10, 1, 0).generator(0).is_err());
        assert!(TaskSpec::escan(1, 1, 0).generator(0).is_err());
        assert!(TaskSpec::one_to_one(3, 5, 4, 0).generator(0).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let spec = TaskSpec::escan(10, 15, 0);
        let mut g = spec.generator(3).unwrap();
        let samples = g.take_samples(20);
        let mut buf = Vec::new();
        write_tsv(&mut buf, &samples, g.input_vocab(), g.output_vocab()).unwrap();
        let parsed = read_tsv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), 20);
        for ((inp, out), s) in parsed.iter().zip(&samples) {
            assert_eq!(spec.target_for(inp).unwrap(), *out);
            assert_eq!(g.input_vocab().encode(inp).unwrap(), s.input[..s.input.len() - 1]);
        }
    }
}
