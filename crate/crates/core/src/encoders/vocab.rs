use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [(&str, u32); 4] = [("<pad>", PAD), ("<bos>", BOS), ("<eos>", EOS), ("<unk>", UNK)];

/// Word-level vocabulary over lowercased whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocab {
    tokens: BTreeMap<String, u32>,
}

impl Vocab {
    /// Reserved entries plus every distinct word of `texts`, indexed in
    /// lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| t.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .collect();
        let mut tokens: BTreeMap<String, u32> = RESERVED.iter().map(|(s, i)| (s.to_string(), *i)).collect();
        for (i, w) in words.into_iter().enumerate() {
            tokens.insert(w, RESERVED.len() as u32 + i as u32);
        }
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, word: &str) -> u32 {
        self.tokens.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.tokens.contains_key(word)
    }

    /// Checks reserved indices and that indices are a bijection onto 0..len.
    pub fn validate(&self) -> Result<()> {
        for (s, i) in RESERVED {
            if self.tokens.get(s) != Some(&i) {
                return Err(Error::config(format!("vocab must map {s} to {i}")));
            }
        }
        let mut seen: Vec<u32> = self.tokens.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(k, &v)| v as usize != k) {
            return Err(Error::config("vocab indices are not a bijection onto 0..len"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Vocab = serde_json::from_str(&s)?;
        v.validate()?;
        Ok(v)
    }
}

/// Fixed-length token sequence: BOS, words, EOS, then PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub indices: Vec<u32>,
    pub eos_pos: usize,
}

/// Lowercases and splits on whitespace. Overlong input is truncated so EOS
/// lands on the last slot.
pub fn tokenize(text: &str, vocab: &Vocab, len: usize) -> TokenSeq {
    assert!(len >= 2, "sequence length must hold BOS and EOS");
    let mut indices = Vec::with_capacity(len);
    indices.push(BOS);
    for word in text.split_whitespace().take(len - 2) {
        indices.push(vocab.index(&word.to_lowercase()));
    }
    let eos_pos = indices.len();
    indices.push(EOS);
    indices.resize(len, PAD);
    TokenSeq { indices, eos_pos }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["a photo of a chair", "This is a Sphere"])
    }

    #[test]
    fn five_words_between_bos_and_eos() {
        let t = tokenize("a photo of a chair", &vocab(), 16);
        assert_eq!(t.indices.len(), 16);
        assert_eq!(t.indices[0], BOS);
        assert_eq!(t.eos_pos, 6);
        assert_eq!(t.indices[6], EOS);
        assert!(t.indices[1..6].iter().all(|&i| i > UNK));
        assert!(t.indices[7..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let t = tokenize("a photo of a teapot", &vocab(), 16);
        assert_eq!(t.indices[5], UNK);
    }

    #[test]
    fn overlong_text_keeps_eos_last() {
        let text = vec!["a"; 30].join(" ");
        let t = tokenize(&text, &vocab(), 16);
        assert_eq!(t.eos_pos, 15);
        assert_eq!(t.indices.iter().filter(|&&i| i == EOS).count(), 1);
    }

    #[test]
    fn empty_text_is_bos_eos_pad() {
        let t = tokenize("", &vocab(), 4);
        assert_eq!(t.indices, vec![BOS, EOS, PAD, PAD]);
    }

    #[test]
    fn vocab_is_lowercased_bijective_and_round_trips() {
        let v = vocab();
        v.validate().unwrap();
        assert!(v.contains("sphere"));
        assert!(!v.contains("Sphere"));
        let back: Vocab = serde_json::from_str(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }
}
