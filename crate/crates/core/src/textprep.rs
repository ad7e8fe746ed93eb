//! Text normalization: emoji mapping, cleaning, tokenization and stop-word
//! removal, applied in that fixed order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../resources/stopwords.txt");
const DEFAULT_EMOJI_MAP: &str = include_str!("../resources/emoji_map.tsv");

const ZWJ: char = '\u{200D}';
const VARIATION_SELECTOR: char = '\u{FE0F}';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    pub strip_html: bool,
    pub strip_urls: bool,
    /// Covers ASCII 0-9 and Bengali ০-৯.
    pub strip_digits: bool,
    pub strip_punct: bool,
    pub combining_marks_to_strip: BTreeSet<char>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            strip_html: true,
            strip_urls: true,
            strip_digits: true,
            strip_punct: true,
            combining_marks_to_strip: BTreeSet::new(),
        }
    }
}

pub fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || ('\u{09E6}'..='\u{09EF}').contains(&c)
}

/// Punctuation and symbol code points removed by cleaning and treated as separators by tokenization.
pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}'..='\u{00BF}'
            | '\u{00D7}'
            | '\u{00F7}'
            | '\u{0964}'
            | '\u{0965}'
            | '\u{09F2}'..='\u{09FB}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{20A0}'..='\u{20CF}'
            | '\u{2100}'..='\u{2BFF}'
            | '\u{3000}'..='\u{303F}'
            | '\u{FE10}'..='\u{FE1F}'
            | '\u{FE30}'..='\u{FE6F}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

/// Pictographic code points and emoji modifiers.
pub fn is_emoji(c: char) -> bool {
    matches!(c,
        '\u{1F000}'..='\u{1FAFF}'
        | '\u{2600}'..='\u{27BF}'
        | '\u{2B00}'..='\u{2BFF}'
        | '\u{2300}'..='\u{23FF}'
        | '\u{E0020}'..='\u{E007F}')
}

fn strip_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        match rest[start..].find('>') {
            Some(len) => {
                out.push_str(&rest[..start]);
                out.push(' ');
                rest = &rest[start + len + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn url_start(s: &str) -> bool {
    const PREFIXES: [&str; 4] = ["http://", "https://", "ftp://", "www."];
    PREFIXES.iter().any(|p| {
        s.len() >= p.len() && s.is_char_boundary(p.len()) && s[..p.len()].eq_ignore_ascii_case(p)
    })
}

fn strip_url_spans(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if url_start(&text[i..]) {
            out.push(' ');
            while let Some(&(_, n)) = chars.peek() {
                if n.is_whitespace() {
                    break;
                }
                chars.next();
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes markup, links, digits and punctuation, then collapses whitespace.
pub fn clean_text(raw: &str, config: &CleanConfig) -> String {
    let mut text: String = raw.nfc().collect();
    if config.strip_html {
        text = strip_tags(&text);
    }
    if config.strip_urls {
        text = strip_url_spans(&text);
    }
    let mut filtered = String::with_capacity(text.len());
    for c in text.chars() {
        if config.combining_marks_to_strip.contains(&c) {
            continue;
        }
        if (config.strip_digits && is_digit(c)) || (config.strip_punct && is_punct(c)) {
            filtered.push(' ');
        } else {
            filtered.push(c);
        }
    }
    let normalized: String = filtered.nfc().collect();
    collapse_whitespace(&normalized)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct EmojiMap {
    entries: BTreeMap<String, String>,
    max_key_chars: usize,
}

impl From<BTreeMap<String, String>> for EmojiMap {
    fn from(entries: BTreeMap<String, String>) -> Self {
        Self::from_map(entries)
    }
}

impl From<EmojiMap> for BTreeMap<String, String> {
    fn from(m: EmojiMap) -> Self {
        m.entries
    }
}

impl EmojiMap {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            if k.is_empty() {
                return Err(Error::data("emoji map keys must be non-empty"));
            }
            map.insert(k, v.nfc().collect::<String>());
        }
        Ok(Self::from_map(map))
    }

    fn from_map(entries: BTreeMap<String, String>) -> Self {
        let max_key_chars = entries.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        EmojiMap {
            entries,
            max_key_chars,
        }
    }

    /// Parses the tab-separated `emoji<TAB>word` format.
    pub fn parse(content: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("emoji map line {} lacks a tab", lineno + 1)))?;
            entries.push((k.to_string(), v.trim().to_string()));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn embedded() -> Self {
        Self::parse(DEFAULT_EMOJI_MAP).expect("embedded emoji map is well-formed")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn longest_match(&self, chars: &[char]) -> Option<(usize, &str)> {
        for len in (1..=self.max_key_chars.min(chars.len())).rev() {
            let key: String = chars[..len].iter().collect();
            if let Some(word) = self.entries.get(&key) {
                return Some((len, word.as_str()));
            }
        }
        None
    }
}

/// Number of trailing code points that belong to the emoji sequence started just before `rest`.
fn sequence_tail(rest: &[char]) -> usize {
    let mut i = 0;
    while i < rest.len() {
        match rest[i] {
            VARIATION_SELECTOR | '\u{1F3FB}'..='\u{1F3FF}' => i += 1,
            ZWJ if rest.get(i + 1).is_some_and(|&c| is_emoji(c)) => i += 2,
            _ => break,
        }
    }
    i
}

/// Replaces mapped emoji sequences by their word and drops unmapped emoji.
pub fn map_emojis(text: &str, map: &EmojiMap) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    let mut i = 0;
    while i < chars.len() {
        if let Some((len, word)) = map.longest_match(&chars[i..]) {
            if out.chars().last().is_some_and(|c| !c.is_whitespace()) {
                out.push(' ');
            }
            out.push_str(word);
            pending_space = true;
            i += len;
            i += sequence_tail(&chars[i..]);
            continue;
        }
        let c = chars[i];
        if is_emoji(c) {
            i += 1;
            i += sequence_tail(&chars[i..]);
            continue;
        }
        if pending_space && !c.is_whitespace() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
        i += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StopWordList {
    words: BTreeSet<String>,
}

impl StopWordList {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        StopWordList {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().nfc().collect::<String>())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn parse(content: &str) -> Self {
        Self::new(content.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?))
    }

    pub fn embedded() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// A tokenized sentence. Tokens are NFC-normalized, non-empty and whitespace-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(
            iter.into_iter()
                .flat_map(|s| {
                    let n: String = s.as_ref().nfc().collect();
                    n.split_whitespace().map(str::to_string).collect::<Vec<_>>()
                })
                .collect(),
        )
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let normalized: String = text.nfc().collect();
    TokenSeq(
        normalized
            .split(|c: char| c.is_whitespace() || is_punct(c))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

pub fn remove_stopwords(tokens: &TokenSeq, list: &StopWordList) -> TokenSeq {
    TokenSeq(tokens.0.iter().filter(|t| !list.contains(t)).cloned().collect())
}

/// The full preprocessing chain with its resources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub clean: CleanConfig,
    pub emoji: EmojiMap,
    pub stopwords: StopWordList,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            clean: CleanConfig::default(),
            emoji: EmojiMap::embedded(),
            stopwords: StopWordList::embedded(),
        }
    }
}

impl Preprocessor {
    pub fn tokens(&self, raw: &str) -> TokenSeq {
        let mapped = map_emojis(raw, &self.emoji);
        let cleaned = clean_text(&mapped, &self.clean);
        remove_stopwords(&tokenize(&cleaned), &self.stopwords)
    }

    /// Preprocessed text with tokens joined by single spaces.
    pub fn process(&self, raw: &str) -> String {
        self.tokens(raw).join()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn preprocessor_survives_serde() {
        let p = Preprocessor::default();
        let back: Preprocessor = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.process("ভাল 😊"), p.process("ভাল 😊"));
    }

    fn toks(words: &[&str]) -> TokenSeq {
        words.iter().collect()
    }

    #[test]
    fn clean_example() {
        let out = clean_text("দাম 500 টাকা! <b>ভাল</b> https://x.com", &CleanConfig::default());
        assert_eq!(out, "দাম টাকা ভাল");
        assert_eq!(clean_text("", &CleanConfig::default()), "");
    }

    #[test]
    fn clean_handles_bengali_digits_and_www() {
        let out = clean_text("মূল্য ৫০০ www.daraz.com.bd।ভাল", &CleanConfig::default());
        assert_eq!(out, "মূল্য");
        let out = clean_text("দাম ৫০০।ভাল", &CleanConfig::default());
        assert_eq!(out, "দাম ভাল");
    }

    #[test]
    fn clean_keeps_matras() {
        let s = "তুমি কেমন আছো? ভালোবাসা";
        let out = clean_text(s, &CleanConfig::default());
        assert_eq!(out, "তুমি কেমন আছো ভালোবাসা");
    }

    #[test]
    fn configured_marks_are_stripped() {
        let mut cfg = CleanConfig::default();
        cfg.combining_marks_to_strip.insert('\u{09BF}');
        assert_eq!(clean_text("আমি", &cfg), "আম");
    }

    #[test]
    fn flags_disable_rules() {
        let cfg = CleanConfig {
            strip_digits: false,
            strip_punct: false,
            ..CleanConfig::default()
        };
        assert_eq!(clean_text("a1 b!", &cfg), "a1 b!");
    }

    #[test]
    fn emoji_examples() {
        let map = EmojiMap::embedded();
        let happy: String = "আনন্দময়".nfc().collect();
        assert_eq!(map_emojis("😊", &map), happy);
        assert_eq!(map_emojis("কোনো ইমোজি নেই", &map), "কোনো ইমোজি নেই");
        let thanks: String = "কৃতজ্ঞতা".nfc().collect();
        assert_eq!(map_emojis("🙏", &map), thanks);
        assert_eq!(map.get("🙏").unwrap(), thanks);
    }

    #[test]
    fn emoji_longest_match_and_drop() {
        let map = EmojiMap::new([
            ("❤".to_string(), "x".to_string()),
            ("❤\u{FE0F}".to_string(), "love".to_string()),
        ])
        .unwrap();
        assert_eq!(map_emojis("a❤\u{FE0F}b", &map), "a love b");
        assert_eq!(map_emojis("a❤b", &map), "a x b");
        assert_eq!(map_emojis("a🦀b", &map), "ab");
        assert_eq!(map_emojis("a 👍🏽 b", &map), "a  b");
        assert!(EmojiMap::new([(String::new(), "x".to_string())]).is_err());
    }

    #[test]
    fn emoji_before_cleaning_survives() {
        let p = Preprocessor::default();
        let happy: String = "আনন্দময়".nfc().collect();
        assert_eq!(p.process("দারুণ!😊"), format!("দারুণ {happy}"));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("আমি ভাল"), toks(&["আমি", "ভাল"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  ক   খ "), toks(&["ক", "খ"]));
        assert_eq!(tokenize("ক,খ।গ"), toks(&["ক", "খ", "গ"]));
    }

    #[test]
    fn stopword_examples() {
        let list = StopWordList::embedded();
        assert_eq!(
            remove_stopwords(&toks(&["এই", "বই", "ভাল"]), &list),
            toks(&["বই", "ভাল"])
        );
        assert!(remove_stopwords(&TokenSeq::default(), &list).is_empty());
        let t = toks(&["এই", "বই"]);
        assert_eq!(remove_stopwords(&t, &StopWordList::default()), t);
    }

    #[test]
    fn embedded_stopwords_cover_table() {
        let list = StopWordList::embedded();
        let table = [
            "এ", "যায়", "এর", "হয়", "িক", "বা", "যাক", "য", "ক", "সব", "উপর", "হেব", "এই", "একই",
            "তাকে", "আগ", "বা", "কখন", "আছে", "তাই", "স", "সই", "হয়", "তার", "যি", "অধীন", "কর",
            "িছিল", "আমি", "এবং", "তারা", "কার", "এটি", "গুলি", "হেতু", "সেটা", "আরও", "খুব", "পের",
            "কোন", "কেন", "সকল", "ঠিক", "যারা", "কোন", "তুমি",
        ];
        assert_eq!(table.len(), 46);
        for w in table {
            let n: String = w.nfc().collect();
            assert!(list.contains(&n), "missing {w}");
        }
        for w in ["কি", "হবে", "ছিল", "পরে"] {
            assert!(list.contains(w));
        }
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "\\PC{0,40}") {
            let cfg = CleanConfig::default();
            let once = clean_text(&s, &cfg);
            prop_assert_eq!(clean_text(&once, &cfg), once);
        }

        #[test]
        fn pipeline_is_idempotent(s in "[a-z0-9 <>/:.!😊🙏ক-হা-ৌ]{0,40}") {
            let p = Preprocessor::default();
            let once = p.process(&s);
            prop_assert_eq!(p.process(&once), once);
        }

        #[test]
        fn stopword_survivors_form_subsequence(words in proptest::collection::vec("[কখগএই]{1,2}", 0..12)) {
            let t: TokenSeq = words.iter().collect();
            let out = remove_stopwords(&t, &StopWordList::embedded());
            prop_assert!(out.len() <= t.len());
            let mut it = t.iter();
            for w in out.iter() {
                prop_assert!(it.any(|x| x == w));
            }
        }

        #[test]
        fn cleaning_adds_no_code_points(s in "\\PC{0,40}") {
            let out = clean_text(&s, &CleanConfig::default());
            let input: std::collections::HashSet<char> = s.nfc().chain(s.chars()).collect();
            for c in out.chars() {
                prop_assert!(c == ' ' || input.contains(&c));
            }
        }
    }
}
