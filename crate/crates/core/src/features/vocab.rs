use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::TokenSeq;

/// Token index with corpus and document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    freq: Vec<u64>,
    df: Vec<u64>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    freq: Vec<u64>,
    df: Vec<u64>,
    n_docs: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            index,
            tokens: r.tokens,
            freq: r.freq,
            df: r.df,
            n_docs: r.n_docs,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            freq: v.freq,
            df: v.df,
            n_docs: v.n_docs,
        }
    }
}

impl Vocabulary {
    /// A vocabulary over an explicit token list, e.g. from an imported embedding file.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate token `{t}`")));
            }
        }
        let n = tokens.len();
        Ok(Vocabulary {
            index,
            tokens,
            freq: vec![0; n],
            df: vec![0; n],
            n_docs: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freq(&self, index: usize) -> u64 {
        self.freq[index]
    }

    pub fn df(&self, index: usize) -> u64 {
        self.df[index]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }
}

/// Keeps tokens with corpus frequency at least `min_freq`, most frequent first.
pub fn build_vocab(docs: &[TokenSeq], min_freq: u64) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::precondition("min_freq must be at least 1"));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut df: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        let mut seen = HashSet::new();
        for t in doc.iter() {
            *freq.entry(t).or_default() += 1;
            if seen.insert(t) {
                *df.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, f)| f >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary {
        index,
        freq: kept.iter().map(|&(_, f)| f).collect(),
        df: kept.iter().map(|(t, _)| df[t]).collect(),
        tokens,
        n_docs: docs.len(),
    })
}
