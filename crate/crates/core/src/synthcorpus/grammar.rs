//! Stochastic sentence grammar with the annotations every task derives from.
//!
//! A sentence is one to three clauses joined by "and":
//! `subject verb object [pp]`. Non-standard words appear as cardinal
//! counts, money amounts, years, month-day dates, clock times and
//! abbreviations. Labels are deterministic functions of the token sequence:
//!
//! * prosody: `IPH` after the last token of a clause; after a noun-like token
//!   (noun, abbreviation, or the end of a non-standard word) `PPH` when at
//!   least three tokens have passed since the previous `PPH`/`IPH`, else `PW`;
//!   `N` everywhere else.
//! * homographs: reading 0 when followed by a determiner, reading 1 when
//!   followed by a noun.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::lexicon::{Lexicon, WordClass};
use crate::labels::{spans_to_tags, BioTag, Boundary, NswClass, NswSpan};

const ABBREVIATIONS: [&str; 6] = ["NASA", "UK", "BBC", "USA", "FBI", "EU"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub nsw: Vec<NswSpan>,
    /// Index of the last token of each clause.
    pub clause_ends: Vec<usize>,
    /// Positions with their gold reading index.
    pub homographs: Vec<(usize, usize)>,
    noun_like: Vec<bool>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tags(&self) -> Vec<BioTag> {
        spans_to_tags(self.tokens.len(), &self.nsw)
    }

    pub fn boundaries(&self) -> Vec<Boundary> {
        let n = self.tokens.len();
        let mut inside = vec![false; n];
        for s in &self.nsw {
            for f in &mut inside[s.start..s.end - 1] {
                *f = true;
            }
        }
        let mut out = Vec::with_capacity(n);
        let mut since = 0usize;
        for i in 0..n {
            since += 1;
            let b = if self.clause_ends.contains(&i) {
                Boundary::IPH
            } else if inside[i] || !self.noun_like[i] {
                Boundary::N
            } else if since >= 3 {
                Boundary::PPH
            } else {
                Boundary::PW
            };
            if b >= Boundary::PPH {
                since = 0;
            }
            out.push(b);
        }
        out
    }
}

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    nsw: Vec<NswSpan>,
    clause_ends: Vec<usize>,
    noun_like: Vec<bool>,
    pending_homograph: Vec<usize>,
}

impl Builder {
    fn word(&mut self, w: &str, noun_like: bool) {
        self.tokens.push(w.to_string());
        self.noun_like.push(noun_like);
    }

    fn nsw(&mut self, parts: &[String], class: NswClass) {
        let start = self.tokens.len();
        for (k, p) in parts.iter().enumerate() {
            self.tokens.push(p.clone());
            self.noun_like.push(k + 1 == parts.len());
        }
        self.nsw.push(NswSpan { start, end: self.tokens.len(), class });
    }
}

/// Sentence generator over a [`Lexicon`].
pub struct Grammar<'a> {
    lex: &'a Lexicon,
    dets: Vec<&'a str>,
    nouns: Vec<&'a str>,
    verbs: Vec<&'a str>,
    adjs: Vec<&'a str>,
    homographs: Vec<&'a str>,
    months: Vec<&'a str>,
    /// Chance that a slot able to hold a homograph gets one.
    pub homograph_rate: f64,
}

impl<'a> Grammar<'a> {
    pub fn new(lex: &'a Lexicon) -> Self {
        Grammar {
            lex,
            dets: lex.words_of(WordClass::Determiner),
            nouns: lex.words_of(WordClass::Noun),
            verbs: lex.words_of(WordClass::Verb),
            adjs: lex.words_of(WordClass::Adjective),
            homographs: lex.words_of(WordClass::Homograph),
            months: lex.words_of(WordClass::Month),
            homograph_rate: 0.15,
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        self.lex
    }

    /// Draws sentences until one fits in `max_len` tokens.
    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R, max_len: usize) -> Sentence {
        loop {
            let s = self.draw(rng);
            if s.len() <= max_len {
                return s;
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let mut b = Builder::default();
        let clauses = match rng.random_range(0..10) {
            0..=4 => 1,
            5..=8 => 2,
            _ => 3,
        };
        for c in 0..clauses {
            if c > 0 {
                b.word("and", false);
            }
            self.clause(&mut b, rng);
            b.clause_ends.push(b.tokens.len() - 1);
        }
        let mut homographs = Vec::new();
        for &p in &b.pending_homograph {
            let next = self.lex.class_of(self.lex.token_id(&b.tokens[p + 1]));
            let reading = match next {
                Some(WordClass::Determiner) => 0,
                Some(WordClass::Noun) => 1,
                other => unreachable!("homograph followed by {other:?}"),
            };
            homographs.push((p, reading));
        }
        Sentence {
            tokens: b.tokens,
            nsw: b.nsw,
            clause_ends: b.clause_ends,
            homographs,
            noun_like: b.noun_like,
        }
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R, words: &[&'a str]) -> &'a str {
        words.choose(rng).copied().expect("non-empty word class")
    }

    fn clause<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        // subject
        match rng.random_range(0..20) {
            0..=13 => self.noun_phrase(b, rng),
            14..=16 => self.abbreviation(b, rng),
            _ => self.counted_noun(b, rng),
        }
        // verb; a homograph verb forces a determiner-led object
        let homograph_verb = rng.random_bool(self.homograph_rate);
        if homograph_verb {
            b.pending_homograph.push(b.tokens.len());
            let h = self.pick(rng, &self.homographs);
            b.word(h, false);
            self.noun_phrase(b, rng);
        } else {
            let v = self.pick(rng, &self.verbs);
            b.word(v, false);
            match rng.random_range(0..20) {
                0..=9 => self.noun_phrase(b, rng),
                10..=12 => self.counted_noun(b, rng),
                13..=16 => self.money(b, rng),
                _ => self.abbreviation(b, rng),
            }
        }
        if rng.random_bool(0.5) {
            self.prepositional(b, rng);
        }
    }

    fn noun_phrase<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        let d = self.pick(rng, &self.dets);
        b.word(d, false);
        let r: f64 = rng.random();
        if r < self.homograph_rate {
            b.pending_homograph.push(b.tokens.len());
            let h = self.pick(rng, &self.homographs);
            b.word(h, false);
        } else if r < self.homograph_rate + 0.3 {
            let a = self.pick(rng, &self.adjs);
            b.word(a, false);
        }
        let n = self.pick(rng, &self.nouns);
        b.word(n, true);
    }

    fn counted_noun<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        let n: u32 = if rng.random_bool(0.7) { rng.random_range(2..1000) } else { rng.random_range(1000..10000) };
        b.nsw(&[n.to_string()], NswClass::Cardinal);
        let noun = self.pick(rng, &self.nouns);
        b.word(noun, true);
    }

    fn abbreviation<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        let a = ABBREVIATIONS.choose(rng).expect("abbreviations");
        b.nsw(&[a.to_string()], NswClass::Letters);
    }

    fn money<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        let dollars: u32 = rng.random_range(1..1000);
        match rng.random_range(0..10) {
            0..=4 => b.nsw(&[format!("${dollars}")], NswClass::Money),
            5..=7 => {
                let cents: u32 = rng.random_range(1..100);
                b.nsw(&[format!("${dollars}.{cents:02}")], NswClass::Money);
            }
            _ => {
                let d: u32 = rng.random_range(1..100);
                b.nsw(&[format!("${d}"), "million".to_string()], NswClass::Money);
            }
        }
    }

    fn prepositional<R: Rng + ?Sized>(&self, b: &mut Builder, rng: &mut R) {
        match rng.random_range(0..5) {
            0 => {
                b.word("at", false);
                let h: u32 = rng.random_range(1..13);
                let m: u32 = *[0, 5, 15, 30, 45, rng.random_range(0..60)].choose(rng).expect("minutes");
                let clock = format!("{h}:{m:02}");
                if rng.random_bool(0.4) {
                    b.nsw(&[clock, "pm".to_string()], NswClass::Time);
                } else {
                    b.nsw(&[clock], NswClass::Time);
                }
            }
            1 => {
                b.word(if rng.random_bool(0.5) { "in" } else { "since" }, false);
                let y: u32 = rng.random_range(1900..2030);
                b.nsw(&[y.to_string()], NswClass::Date);
            }
            2 => {
                b.word("in", false);
                let m = self.pick(rng, &self.months);
                let d: u32 = rng.random_range(1..31);
                b.nsw(&[m.to_string(), d.to_string()], NswClass::Date);
            }
            _ => {
                b.word(if rng.random_bool(0.5) { "of" } else { "to" }, false);
                self.noun_phrase(b, rng);
            }
        }
    }
}
