//! Seeded synthetic corpora with planted class keywords.
//!
//! Classes 2 to 7 each own a keyword set drawn with Zipf-like frequencies; a
//! keyword token can be leaked from another of these classes, and every class
//! tilts the noise words its own way. Both leak and keyword-free sentences
//! default to off. Classes 0 and 1 share topic and modifier words and differ
//! only in how they combine: class 0 pairs topic P with a modifier or uses
//! topic Q bare, class 1 the other way round. Per-token statistics therefore
//! cannot separate 0 from 1.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmotionLabel, Sample, Source, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::textprep::StopWordList;

const CONSONANTS: &[char] = &[
    'ক', 'খ', 'গ', 'ঘ', 'চ', 'ছ', 'জ', 'ঝ', 'ট', 'ঠ', 'ড', 'ত', 'থ', 'দ', 'ধ', 'ন', 'প', 'ফ', 'ব', 'ভ', 'ম', 'র', 'ল', 'শ',
    'স', 'হ',
];
const SIGNS: &[&str] = &["", "া", "ি", "ী", "ু", "ূ", "ে", "ো"];

const KEYWORDS_PER_CLASS: usize = 6;
/// Classes with their own keyword sets start here; the two below form the pair.
const FIRST_PLANTED: usize = 2;
const PLANTED: usize = NUM_CLASSES - FIRST_PLANTED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Sentences per class, in label-index order.
    pub per_class: Vec<usize>,
    pub noise_vocab: usize,
    /// Probability that a keyword token comes from another planted class.
    pub leak: f64,
    /// Probability that a planted sentence has no keywords at all, leaving only
    /// its class's noise tilt as evidence.
    pub bare: f64,
    /// Inclusive range of keyword tokens per sentence of classes 2 to 7.
    pub keywords: (usize, usize),
    /// Per-class noise words are drawn with weights exp(tilt * u), u uniform in [-1, 1].
    pub noise_tilt: f64,
    /// Size of each of the two topic word sets shared by classes 0 and 1.
    pub topic_words: usize,
    pub modifier_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: vec![100; NUM_CLASSES],
            noise_vocab: 40,
            leak: 0.0,
            bare: 0.0,
            keywords: (2, 3),
            noise_tilt: 0.5,
            topic_words: 2,
            modifier_words: 1,
            seed: 2024,
        }
    }
}

impl SynthConfig {
    /// 200 down to 25 sentences per class.
    pub fn skewed(seed: u64) -> Self {
        SynthConfig {
            per_class: vec![200, 175, 150, 125, 100, 75, 50, 25],
            seed,
            ..SynthConfig::default()
        }
    }
}

fn pseudo_words(n: usize, rng: &mut ChaCha8Rng, stop: &StopWordList) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", CONSONANTS.choose(rng).unwrap(), SIGNS.choose(rng).unwrap()))
            .collect();
        if !stop.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    if cfg.per_class.len() != NUM_CLASSES {
        return Err(Error::precondition(format!("need {NUM_CLASSES} class sizes, got {}", cfg.per_class.len())));
    }
    if !(0.0..1.0).contains(&cfg.leak) || !(0.0..=1.0).contains(&cfg.bare) || cfg.keywords.0 == 0 || cfg.keywords.0 > cfg.keywords.1 {
        return Err(Error::precondition("leak must lie in [0,1), bare in [0,1] and the keyword range be non-empty"));
    }
    if cfg.noise_vocab == 0 || cfg.topic_words == 0 || cfg.modifier_words == 0 {
        return Err(Error::precondition("noise, topic and modifier word sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stop = StopWordList::embedded();
    let planted = PLANTED * KEYWORDS_PER_CLASS + 2 * cfg.topic_words + cfg.modifier_words;
    let words = pseudo_words(planted + cfg.noise_vocab, &mut rng, &stop);
    let (keywords, rest) = words.split_at(PLANTED * KEYWORDS_PER_CLASS);
    let (topic_p, rest) = rest.split_at(cfg.topic_words);
    let (topic_q, rest) = rest.split_at(cfg.topic_words);
    let (modifiers, noise) = rest.split_at(cfg.modifier_words);
    let class_words: Vec<&[String]> = keywords.chunks(KEYWORDS_PER_CLASS).collect();
    let zipf = WeightedIndex::new((1..=KEYWORDS_PER_CLASS).map(|r| 1.0 / r as f64)).expect("positive weights");

    let noise_dist: Vec<WeightedIndex<f64>> = (0..NUM_CLASSES)
        .map(|_| {
            let w: Vec<f64> = (0..noise.len()).map(|_| (cfg.noise_tilt * rng.gen_range(-1.0..=1.0)).exp()).collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();

    let mut samples = Vec::new();
    for (class, &count) in cfg.per_class.iter().enumerate() {
        for i in 0..count {
            let mut toks: Vec<&str> = Vec::new();
            if class >= FIRST_PLANTED {
                let own = class - FIRST_PLANTED;
                let n = if rng.gen_bool(cfg.bare) { 0 } else { rng.gen_range(cfg.keywords.0..=cfg.keywords.1) };
                for _ in 0..n {
                    let from = if rng.gen_bool(cfg.leak) {
                        (own + rng.gen_range(1..PLANTED)) % PLANTED
                    } else {
                        own
                    };
                    toks.push(&class_words[from][zipf.sample(&mut rng)]);
                }
            } else {
                let use_p = rng.gen_bool(0.5);
                let with_modifier = use_p == (class == 0);
                let topic = if use_p { topic_p } else { topic_q };
                for _ in 0..rng.gen_range(1..=2) {
                    toks.push(topic.choose(&mut rng).unwrap());
                }
                if with_modifier {
                    toks.push(modifiers.choose(&mut rng).unwrap());
                }
            }
            for _ in 0..rng.gen_range(2..=4) {
                toks.push(&noise[noise_dist[class].sample(&mut rng)]);
            }
            toks.shuffle(&mut rng);
            let mut text = toks.join(" ");
            if rng.gen_bool(0.2) {
                text.push_str(" !");
            }
            let mut s = Sample::new(format!("syn-{class}-{i:04}"), text)
                .with_label(EmotionLabel::from_index(class).expect("class index in range"));
            s.source = Source::Other;
            samples.push(s);
        }
    }
    samples.shuffle(&mut rng);
    Corpus::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let cfg = SynthConfig::default();
        let a = synth_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 800);
        assert_eq!(a, synth_corpus(&cfg).unwrap());
        let skew = synth_corpus(&SynthConfig::skewed(1)).unwrap();
        assert_eq!(skew.len(), 900);
        let last = skew.samples().iter().filter(|s| s.label == Some(EmotionLabel::ALL[7])).count();
        assert_eq!(last, 25);
    }

    #[test]
    fn pair_classes_share_token_statistics() {
        let c = synth_corpus(&SynthConfig::default()).unwrap();
        let vocab = |k: usize| -> BTreeSet<String> {
            c.samples()
                .iter()
                .filter(|s| s.label.map(|l| l.index()) == Some(k))
                .flat_map(|s| s.text.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .collect()
        };
        let (a, b) = (vocab(0), vocab(1));
        assert_eq!(a, b);
    }
}
