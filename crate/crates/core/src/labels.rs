//! Label vocabularies shared by the datasets and the frontend heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Non-standard-word class. Plain words carry the `O` tag instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NswClass {
    Cardinal,
    Date,
    Money,
    Time,
    Letters,
}

impl NswClass {
    pub const ALL: [NswClass; 5] =
        [NswClass::Cardinal, NswClass::Date, NswClass::Money, NswClass::Time, NswClass::Letters];

    pub fn name(self) -> &'static str {
        match self {
            NswClass::Cardinal => "CARDINAL",
            NswClass::Date => "DATE",
            NswClass::Money => "MONEY",
            NswClass::Time => "TIME",
            NswClass::Letters => "LETTERS",
        }
    }
}

impl FromStr for NswClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NswClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown NSW class {s:?}"))
    }
}

impl fmt::Display for NswClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One BIO tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    O,
    B(NswClass),
    I(NswClass),
}

impl BioTag {
    /// `O` followed by `B-X, I-X` for every class, in [`NswClass::ALL`] order.
    pub fn all() -> Vec<BioTag> {
        let mut v = vec![BioTag::O];
        for c in NswClass::ALL {
            v.push(BioTag::B(c));
            v.push(BioTag::I(c));
        }
        v
    }

    pub fn class(self) -> Option<NswClass> {
        match self {
            BioTag::O => None,
            BioTag::B(c) | BioTag::I(c) => Some(c),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(c) => write!(f, "B-{c}"),
            BioTag::I(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        match s.split_once('-') {
            Some(("B", c)) => Ok(BioTag::B(c.parse()?)),
            Some(("I", c)) => Ok(BioTag::I(c.parse()?)),
            _ => Err(format!("malformed BIO tag {s:?}")),
        }
    }
}

impl Serialize for BioTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks BIO well-formedness; on failure returns the offending position.
pub fn validate_bio(tags: &[BioTag]) -> Result<(), (usize, String)> {
    let mut prev = BioTag::O;
    for (i, &t) in tags.iter().enumerate() {
        if let BioTag::I(c) = t {
            match prev {
                BioTag::B(p) | BioTag::I(p) if p == c => {}
                _ => return Err((i, format!("I- without B-: {t} at position {i}"))),
            }
        }
        prev = t;
    }
    Ok(())
}

/// Half-open token span of one non-standard word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NswSpan {
    pub start: usize,
    pub end: usize,
    pub class: NswClass,
}

/// Extracts spans from a tag sequence. An `I-X` that does not continue a span
/// of class X opens a new one, so any sequence decodes.
pub fn bio_spans(tags: &[BioTag]) -> Vec<NswSpan> {
    let mut spans: Vec<NswSpan> = Vec::new();
    let mut open: Option<NswSpan> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            BioTag::O => {
                spans.extend(open.take());
            }
            BioTag::B(c) => {
                spans.extend(open.take());
                open = Some(NswSpan { start: i, end: i + 1, class: c });
            }
            BioTag::I(c) => match &mut open {
                Some(s) if s.class == c => s.end = i + 1,
                _ => {
                    spans.extend(open.take());
                    open = Some(NswSpan { start: i, end: i + 1, class: c });
                }
            },
        }
    }
    spans.extend(open);
    spans
}

pub fn spans_to_tags(len: usize, spans: &[NswSpan]) -> Vec<BioTag> {
    let mut tags = vec![BioTag::O; len];
    for s in spans {
        tags[s.start] = BioTag::B(s.class);
        for t in &mut tags[s.start + 1..s.end] {
            *t = BioTag::I(s.class);
        }
    }
    tags
}

/// Prosodic boundary after a token, ordered by strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Boundary {
    N,
    PW,
    PPH,
    IPH,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [Boundary::N, Boundary::PW, Boundary::PPH, Boundary::IPH];
    /// Levels scored by the boundary F1 metrics.
    pub const LEVELS: [Boundary; 3] = [Boundary::PW, Boundary::PPH, Boundary::IPH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Boundary {
        Boundary::ALL[i]
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::N => "N",
            Boundary::PW => "PW",
            Boundary::PPH => "PPH",
            Boundary::IPH => "IPH",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip_through_strings() {
        for t in BioTag::all() {
            assert_eq!(t.to_string().parse::<BioTag>().unwrap(), t);
        }
        assert!("B-PLAIN".parse::<BioTag>().is_err());
        assert!("X".parse::<BioTag>().is_err());
    }

    #[test]
    fn bio_validation() {
        let ok: Vec<BioTag> = ["O", "B-DATE", "I-DATE", "O"].iter().map(|s| s.parse().unwrap()).collect();
        assert!(validate_bio(&ok).is_ok());
        let bad: Vec<BioTag> = ["O", "I-DATE"].iter().map(|s| s.parse().unwrap()).collect();
        let (pos, msg) = validate_bio(&bad).unwrap_err();
        assert_eq!(pos, 1);
        assert!(msg.contains("I- without B-"));
        let cross: Vec<BioTag> = ["B-MONEY", "I-DATE"].iter().map(|s| s.parse().unwrap()).collect();
        assert!(validate_bio(&cross).is_err());
    }

    #[test]
    fn spans_and_tags_agree() {
        let spans = vec![
            NswSpan { start: 1, end: 3, class: NswClass::Date },
            NswSpan { start: 3, end: 4, class: NswClass::Money },
        ];
        let tags = spans_to_tags(5, &spans);
        assert_eq!(bio_spans(&tags), spans);
    }
}
