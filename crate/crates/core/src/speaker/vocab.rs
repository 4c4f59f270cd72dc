use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Default lexicon: reserved tokens, the scene grammar, navigation phrases and
/// a handful of common words an annotator is likely to type.
const DEFAULT_TOKENS: &[&str] = &[
    PAD, BOS, EOS, // reserved
    "red", "green", "blue", "yellow", "purple", "white", "magenta", // colors
    "box", "ball", "pyramid", // shapes
    "top", "middle", "bottom", "left", "center", "right", // grid
    "at", "on", "background", "and", // scene template
    "i", "am", "in", "the", "door", "of", "target", "room", "not", "near", // navigation
    "kitchen", "bedroom", "bathroom", "hall", // room names
    "a", "is", "there", "with", "object", "image", "small", "large", "next", "to",
    "one", "it", "this", "see", "go", "wait", "enter", "now", "ready", "here", "upper",
    "lower", "corner",
];

/// Ordered token list with dense ids. Serialized as a JSON array of strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad: usize,
    bos: usize,
    eos: usize,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(DEFAULT_TOKENS.iter().map(|s| s.to_string()).collect())
            .expect("default vocabulary is well formed")
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        let find = |t: &str| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks reserved token `{t}`")))
        };
        let (pad, bos, eos) = (find(PAD)?, find(BOS)?, find(EOS)?);
        if tokens.len() < 4 {
            return Err(Error::Config("vocabulary needs at least 4 tokens".into()));
        }
        Ok(Self {
            tokens,
            index,
            pad,
            bos,
            eos,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.tokens)?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id == self.pad || id == self.bos || id == self.eos
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Words to ids; unknown or reserved words are an annotation error naming the word.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                let w = w.as_ref();
                match self.id(w) {
                    Some(id) if !self.is_reserved(id) => Ok(id),
                    _ => Err(Error::UnknownToken {
                        token: w.to_string(),
                    }),
                }
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Splits free text on whitespace, lowercases, and keeps only known
    /// non-reserved words. Returns `(kept ids, dropped words)`.
    pub fn filter_text(&self, text: &str) -> (Vec<usize>, Vec<String>) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for w in text.split_whitespace() {
            let w = w.to_lowercase();
            match self.id(&w) {
                Some(id) if !self.is_reserved(id) => kept.push(id),
                _ => dropped.push(w),
            }
        }
        (kept, dropped)
    }
}
