//! Fixed word-level vocabulary for instruction and caption text.
//!
//! Ids are dense from 0 with PAD=0; the file format is one word per line,
//! line number = id. The built-in list covers every word the instruction
//! and caption templates can emit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

const BUILTIN_WORDS: &[&str] = &[
    "<pad>",
    "<bos>",
    "<eos>",
    "a",
    "the",
    "to",
    "for",
    "at",
    "and",
    "in",
    "on",
    "add",
    "remove",
    "swap",
    "recolor",
    "apply",
    "make",
    "red",
    "green",
    "blue",
    "yellow",
    "cyan",
    "magenta",
    "orange",
    "purple",
    "square",
    "circle",
    "triangle",
    "top",
    "bottom",
    "left",
    "right",
    "middle",
    "style",
    "scene",
    "object",
    "reference",
    "background",
    "grayscale",
    "inverted",
    "brighter",
    "darker",
    "warmer",
    "cooler",
];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Vocabulary {
    pub fn builtin() -> Self {
        Self::from_words(BUILTIN_WORDS.iter().map(|s| s.to_string()).collect())
            .expect("builtin vocabulary is well-formed")
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word '{w}'")));
            }
        }
        Ok(Vocabulary { words, ids })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_words(text.lines().map(|l| l.trim().to_string()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::Vocab(word.to_string()))
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(|s| s.as_str())
    }

    /// BOS + word ids + EOS. Words are lowercased and split on whitespace;
    /// an out-of-vocabulary word is an error naming the word.
    pub fn tokenize(&self, instruction: &str) -> Result<Vec<usize>> {
        let mut out = vec![BOS];
        for w in instruction.split_whitespace() {
            out.push(self.id(&w.to_lowercase())?);
        }
        out.push(EOS);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_example() {
        let v = Vocabulary::builtin();
        let toks = v.tokenize("remove the red square").unwrap();
        assert_eq!(toks.len(), 6);
        assert_eq!(toks[0], BOS);
        assert_eq!(*toks.last().unwrap(), EOS);
        assert_eq!(toks[1], v.id("remove").unwrap());
        assert_eq!(toks[4], v.id("square").unwrap());
    }

    #[test]
    fn empty_instruction_is_bos_eos() {
        let v = Vocabulary::builtin();
        assert_eq!(v.tokenize("").unwrap(), vec![BOS, EOS]);
    }

    #[test]
    fn oov_names_the_word() {
        let v = Vocabulary::builtin();
        let err = v.tokenize("purple dodecahedron").unwrap_err();
        assert!(err.to_string().contains("dodecahedron"));
    }

    #[test]
    fn ids_are_dense_and_bijective() {
        let v = Vocabulary::builtin();
        assert_eq!(v.id("<pad>").unwrap(), PAD);
        for i in 0..v.len() {
            let w = v.word(i).unwrap().to_string();
            assert_eq!(v.id(&w).unwrap(), i);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::builtin();
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back.len(), v.len());
        assert_eq!(back.id("recolor").unwrap(), v.id("recolor").unwrap());
    }
}
