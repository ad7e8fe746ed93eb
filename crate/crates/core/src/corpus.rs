//! Emotion-labelled sentence corpora: the label space, JSON Lines
//! persistence, majority-vote annotation and stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Number of emotion categories.
pub const NUM_CLASSES: usize = 8;

/// Votes needed before a label is derived automatically.
pub const VOTE_QUORUM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Anger,
    Sadness,
    Happiness,
    Disgust,
    Sarcastic,
    Fear,
    Surprise,
    Disappointed,
}

impl EmotionLabel {
    /// All labels in their stable encoding order.
    pub const ALL: [EmotionLabel; NUM_CLASSES] = [
        EmotionLabel::Anger,
        EmotionLabel::Sadness,
        EmotionLabel::Happiness,
        EmotionLabel::Disgust,
        EmotionLabel::Sarcastic,
        EmotionLabel::Fear,
        EmotionLabel::Surprise,
        EmotionLabel::Disappointed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::Index {
            index,
            len: NUM_CLASSES,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Sarcastic => "sarcastic",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Disappointed => "disappointed",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown label `{s}`")))
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Facebook,
    Twitter,
    News,
    Ecommerce,
    #[default]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One annotated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub label: Option<EmotionLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, EmotionLabel>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub adjudicated: bool,
    /// Keys this crate does not know about, kept verbatim for round-trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            source: Source::Other,
            label: None,
            votes: BTreeMap::new(),
            split: None,
            adjudicated: false,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: EmotionLabel) -> Self {
        self.label = Some(label);
        self
    }
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(format!("duplicate id `{}`", s.id)));
            }
        }
        Ok(Corpus { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.samples
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }

    /// Number of keys that were not recognised while loading.
    pub fn unknown_field_count(&self) -> usize {
        self.samples.iter().map(|s| s.extra.len()).sum()
    }

    /// Samples assigned to `split`, in corpus order.
    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    /// Returns a new corpus with a text transformation applied to every sample.
    pub fn map_text(&self, mut f: impl FnMut(&str) -> String) -> Corpus {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                text: f(&s.text),
                ..s.clone()
            })
            .collect();
        Corpus { samples }
    }

    /// Records `annotator`'s vote and recomputes the label once the quorum is reached.
    pub fn record_vote(&self, sample_id: &str, annotator: &str, vote: EmotionLabel) -> Result<Corpus> {
        let idx = self.position(sample_id)?;
        let mut next = self.clone();
        let sample = &mut next.samples[idx];
        sample.votes.insert(annotator.to_string(), vote);
        if !sample.adjudicated {
            sample.label = if sample.votes.len() >= VOTE_QUORUM {
                majority_vote(&sample.votes)?.label()
            } else {
                None
            };
        }
        Ok(next)
    }

    /// Sets a label directly. Only a lead annotator may do this.
    pub fn adjudicate(&self, sample_id: &str, role: AnnotatorRole, label: EmotionLabel) -> Result<Corpus> {
        if role != AnnotatorRole::Lead {
            return Err(Error::precondition("only a lead annotator may adjudicate"));
        }
        let idx = self.position(sample_id)?;
        let mut next = self.clone();
        let sample = &mut next.samples[idx];
        sample.label = Some(label);
        sample.adjudicated = true;
        Ok(next)
    }

    /// True when the sample has reached the quorum without a strict majority.
    pub fn is_unresolved(sample: &Sample) -> bool {
        !sample.adjudicated
            && sample.label.is_none()
            && sample.votes.len() >= VOTE_QUORUM
            && matches!(majority_vote(&sample.votes), Ok(VoteOutcome::Unresolved))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotatorRole {
    Annotator,
    Lead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteOutcome {
    Label(EmotionLabel),
    Unresolved,
}

impl VoteOutcome {
    pub fn label(self) -> Option<EmotionLabel> {
        match self {
            VoteOutcome::Label(l) => Some(l),
            VoteOutcome::Unresolved => None,
        }
    }
}

/// The label with strictly more votes than any other, or `Unresolved` on a tie.
pub fn majority_vote(votes: &BTreeMap<String, EmotionLabel>) -> Result<VoteOutcome> {
    if votes.is_empty() {
        return Err(Error::precondition("majority vote over zero votes"));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for label in votes.values() {
        counts[label.index()] += 1;
    }
    let best = *counts.iter().max().unwrap_or(&0);
    let mut leaders = counts.iter().enumerate().filter(|(_, &c)| c == best);
    let (first, _) = leaders.next().expect("at least one vote");
    if leaders.next().is_some() {
        Ok(VoteOutcome::Unresolved)
    } else {
        Ok(VoteOutcome::Label(EmotionLabel::ALL[first]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.70, 0.15, 0.15],
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::precondition(format!(
                "split ratios must lie in (0,1), got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::precondition(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` items over the three splits.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let exact: Vec<f64> = self.ratios.iter().map(|r| r * n as f64).collect();
        let mut counts: [usize; 3] = [0; 3];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = (e + 1e-9).floor() as usize;
        }
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        // Stable sort keeps the earlier split first among equal remainders.
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// Assigns train/val/test per label with a seeded shuffle followed by prefix assignment.
pub fn stratified_split(corpus: &Corpus, spec: &SplitSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in corpus.samples.iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| Error::precondition(format!("sample `{}` has no label", s.id)))?;
        by_class[label.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut next = corpus.clone();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = spec.allocate(members.len());
        for (rank, &i) in members.iter().enumerate() {
            next.samples[i].split = Some(if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub words: usize,
    pub histogram: BTreeMap<String, usize>,
    pub labeled: usize,
}

/// Whitespace-delimited word count after NFC normalization.
pub fn word_count(text: &str) -> usize {
    let normalized: String = text.nfc().collect();
    normalized.split_whitespace().count()
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut histogram: BTreeMap<String, usize> = EmotionLabel::ALL
        .iter()
        .map(|l| (l.as_str().to_string(), 0))
        .collect();
    let mut labeled = 0;
    for s in &corpus.samples {
        if let Some(l) = s.label {
            *histogram.get_mut(l.as_str()).expect("all labels present") += 1;
            labeled += 1;
        }
    }
    CorpusStats {
        sentences: corpus.samples.len(),
        words: corpus.samples.iter().map(|s| word_count(&s.text)).sum(),
        histogram,
        labeled,
    }
}

pub fn parse_corpus(content: &str) -> Result<Corpus> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line).map_err(|e| {
            let msg = e.to_string();
            if let Some(rest) = msg.strip_prefix("unknown label") {
                let label = rest.split(" at line").next().unwrap_or("").trim();
                Error::data(format!("unknown label {label} at line {lineno}"))
            } else {
                Error::data(format!("malformed record at line {lineno}: {msg}"))
            }
        })?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::data(format!("duplicate id `{}` at line {lineno}", sample.id)));
        }
        samples.push(sample);
    }
    Ok(Corpus { samples })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content)
}

pub fn corpus_to_jsonl(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for s in &corpus.samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = corpus_to_jsonl(corpus)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(payload.as_bytes()).map_err(|e| Error::io(path, e))
}
