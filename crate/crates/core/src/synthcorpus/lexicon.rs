//! Closed vocabulary, token-id mapping, and the homograph pronunciation table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const MASK: u32 = 3;
pub const NUM_SPECIAL: usize = 4;
pub const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClass {
    Determiner,
    Preposition,
    Conjunction,
    Noun,
    Verb,
    Adjective,
    Homograph,
    Month,
    Scale,
    Meridiem,
    /// Placeholder standing for every surface of one written shape.
    Shape,
}

/// Surface shape of tokens outside the word list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Number,
    Money,
    Clock,
    Caps,
}

impl Shape {
    pub fn placeholder(self) -> &'static str {
        match self {
            Shape::Number => "<num>",
            Shape::Money => "<money>",
            Shape::Clock => "<time>",
            Shape::Caps => "<caps>",
        }
    }

    pub fn of(surface: &str) -> Option<Shape> {
        let digits_or_commas =
            |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || b == b',');
        if digits_or_commas(surface) {
            return Some(Shape::Number);
        }
        if let Some(rest) = surface.strip_prefix('$') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit() || b == b',' || b == b'.') {
                return Some(Shape::Money);
            }
        }
        if let Some((h, m)) = surface.split_once(':') {
            if !h.is_empty() && h.len() <= 2 && m.len() == 2 && digits_or_commas(h) && digits_or_commas(m) {
                return Some(Shape::Clock);
            }
        }
        if surface.len() >= 2 && surface.bytes().all(|b| b.is_ascii_uppercase()) {
            return Some(Shape::Caps);
        }
        None
    }
}

const BASE: &[(&str, WordClass)] = {
    use WordClass::*;
    &[
        ("the", Determiner),
        ("a", Determiner),
        ("in", Preposition),
        ("since", Preposition),
        ("at", Preposition),
        ("of", Preposition),
        ("to", Preposition),
        ("and", Conjunction),
        ("cat", Noun),
        ("dog", Noun),
        ("city", Noun),
        ("river", Noun),
        ("house", Noun),
        ("king", Noun),
        ("price", Noun),
        ("pipe", Noun),
        ("storm", Noun),
        ("table", Noun),
        ("people", Noun),
        ("saw", Verb),
        ("made", Verb),
        ("found", Verb),
        ("paid", Verb),
        ("left", Verb),
        ("old", Adjective),
        ("big", Adjective),
        ("green", Adjective),
        ("lead", Homograph),
        ("live", Homograph),
        ("wind", Homograph),
        ("close", Homograph),
        ("tear", Homograph),
        ("march", Month),
        ("june", Month),
        ("million", Scale),
        ("pm", Meridiem),
        ("<num>", Shape),
        ("<money>", Shape),
        ("<time>", Shape),
        ("<caps>", Shape),
    ]
};

/// Homograph readings: index 0 before a determiner (verb use), index 1
/// before a noun (modifier use).
pub const HOMOGRAPHS: &[(&str, [&str; 2])] = &[
    ("lead", ["L IY1 D", "L EH1 D"]),
    ("live", ["L IH1 V", "L AY1 V"]),
    ("wind", ["W AY1 N D", "W IH1 N D"]),
    ("close", ["K L OW1 Z", "K L OW1 S"]),
    ("tear", ["T EH1 R", "T IH1 R"]),
];

pub fn homograph_readings(word: &str) -> Option<[&'static str; 2]> {
    HOMOGRAPHS.iter().find(|(w, _)| *w == word).map(|(_, r)| *r)
}

/// Every pronunciation in [`HOMOGRAPHS`], in table order.
pub fn pronunciation_inventory() -> Vec<String> {
    HOMOGRAPHS.iter().flat_map(|(_, r)| r.iter().map(|s| s.to_string())).collect()
}

/// The words of the synthetic language. Token ids below [`NUM_SPECIAL`] are
/// reserved for `[PAD] [UNK] [CLS] [MASK]`; word `k` has id `NUM_SPECIAL + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LexiconParts")]
pub struct Lexicon {
    words: Vec<String>,
    classes: Vec<WordClass>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconParts {
    words: Vec<String>,
    classes: Vec<WordClass>,
}

impl From<LexiconParts> for Lexicon {
    fn from(p: LexiconParts) -> Self {
        Lexicon::from_parts(p.words, p.classes)
    }
}

impl Lexicon {
    /// Smallest vocabulary the sentence grammar can be written in.
    pub const MIN_SIZE: usize = BASE.len();

    /// The base word list, padded with extra nouns up to `vocab_size` words.
    pub fn standard(vocab_size: usize) -> Result<Lexicon> {
        if vocab_size < Self::MIN_SIZE {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} is below the {} words the task grammar uses",
                Self::MIN_SIZE
            )));
        }
        let mut words: Vec<String> = BASE.iter().map(|(w, _)| w.to_string()).collect();
        let mut classes: Vec<WordClass> = BASE.iter().map(|(_, c)| *c).collect();
        for k in BASE.len()..vocab_size {
            words.push(format!("noun{k}"));
            classes.push(WordClass::Noun);
        }
        Ok(Lexicon::from_parts(words, classes))
    }

    fn from_parts(words: Vec<String>, classes: Vec<WordClass>) -> Lexicon {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), (i + NUM_SPECIAL) as u32)).collect();
        Lexicon { words, classes, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// Embedding rows needed: words plus specials.
    pub fn num_ids(&self) -> usize {
        self.words.len() + NUM_SPECIAL
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn words_of(&self, class: WordClass) -> Vec<&str> {
        self.words
            .iter()
            .zip(&self.classes)
            .filter(|(_, c)| **c == class)
            .map(|(w, _)| w.as_str())
            .collect()
    }

    /// Id of a surface token: exact word, else its shape placeholder, else `[UNK]`.
    pub fn token_id(&self, surface: &str) -> u32 {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        if let Some(shape) = Shape::of(surface) {
            if let Some(&id) = self.index.get(shape.placeholder()) {
                return id;
            }
        }
        let lower = surface.to_lowercase();
        self.index.get(&lower).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Class of a token id; `None` for specials.
    pub fn class_of(&self, id: u32) -> Option<WordClass> {
        (id as usize).checked_sub(NUM_SPECIAL).and_then(|k| self.classes.get(k)).copied()
    }

    pub fn id_name(&self, id: u32) -> &str {
        match (id as usize).checked_sub(NUM_SPECIAL) {
            None => SPECIAL_NAMES[id as usize],
            Some(k) => &self.words[k],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_lexicon_has_forty_words() {
        let lex = Lexicon::standard(40).unwrap();
        assert_eq!(lex.vocab_size(), 40);
        assert_eq!(lex.num_ids(), 44);
        assert!(Lexicon::standard(39).is_err());
        assert_eq!(Lexicon::standard(45).unwrap().words()[44], "noun44");
    }

    #[test]
    fn shapes_map_to_placeholders() {
        let lex = Lexicon::standard(40).unwrap();
        let num = lex.token_id("<num>");
        assert_eq!(lex.token_id("123"), num);
        assert_eq!(lex.token_id("1,990"), num);
        assert_eq!(lex.token_id("$5.50"), lex.token_id("<money>"));
        assert_eq!(lex.token_id("3:15"), lex.token_id("<time>"));
        assert_eq!(lex.token_id("NASA"), lex.token_id("<caps>"));
        assert_eq!(lex.token_id("The"), lex.token_id("the"));
        assert_eq!(lex.token_id("zebra"), UNK);
    }

    #[test]
    fn homograph_table_is_consistent() {
        let lex = Lexicon::standard(40).unwrap();
        let hs = lex.words_of(WordClass::Homograph);
        assert_eq!(hs.len(), HOMOGRAPHS.len());
        for h in hs {
            assert!(homograph_readings(h).is_some());
        }
        assert_eq!(pronunciation_inventory().len(), 10);
    }
}
