//! ResultMerge: reconciles the three task outputs around non-standard words.
//!
//! 1. Each NSW span is replaced by its verbalization.
//! 2. A boundary predicted inside a span moves to the span's last spoken
//!    word; the strongest displaced level wins. Other spoken words of the
//!    span get `N`.
//! 3. Polyphone choices inside a span are dropped.
//! 4. Tokens outside spans pass through unchanged.
//!
//! Polyphone positions in [`FrontendOutput`] index the spoken words, so the
//! output converts back into a merge input with [`FrontendOutput::to_merge_input`]
//! and merging again changes nothing.

use serde::{Deserialize, Serialize};

use super::verbalize::verbalize;
use crate::error::{Error, Result};
use crate::labels::{bio_spans, validate_bio, BioTag, Boundary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polyphone {
    pub position: usize,
    pub pronunciation: String,
}

/// Per-token predictions over one input token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeInput {
    pub tokens: Vec<String>,
    pub tn_tags: Vec<BioTag>,
    /// Boundary after each token.
    pub boundaries: Vec<Boundary>,
    pub polyphones: Vec<Polyphone>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendOutput {
    pub tokens: Vec<String>,
    pub tn_tags: Vec<BioTag>,
    pub spoken: Vec<String>,
    /// Boundary after each spoken word.
    pub boundaries: Vec<Boundary>,
    /// Positions index `spoken`.
    pub polyphones: Vec<Polyphone>,
}

impl FrontendOutput {
    /// The spoken words as a fresh input with no NSW spans.
    pub fn to_merge_input(&self) -> MergeInput {
        MergeInput {
            tokens: self.spoken.clone(),
            tn_tags: vec![BioTag::O; self.spoken.len()],
            boundaries: self.boundaries.clone(),
            polyphones: self.polyphones.clone(),
        }
    }
}

pub fn result_merge(input: &MergeInput) -> Result<FrontendOutput> {
    let n = input.tokens.len();
    if input.tn_tags.len() != n || input.boundaries.len() != n {
        return Err(Error::Data(format!(
            "{} tokens, {} tags, {} boundaries",
            n,
            input.tn_tags.len(),
            input.boundaries.len()
        )));
    }
    validate_bio(&input.tn_tags).map_err(|(pos, msg)| Error::Data(format!("tag {pos}: {msg}")))?;
    if let Some(p) = input.polyphones.iter().find(|p| p.position >= n) {
        return Err(Error::Data(format!("polyphone position {} outside {n} tokens", p.position)));
    }
    let spans = bio_spans(&input.tn_tags);
    for w in spans.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Data("overlapping NSW spans".into()));
        }
    }

    // output index of each input token, None inside spans
    let mut out_pos: Vec<Option<usize>> = vec![None; n];
    let mut spoken = Vec::with_capacity(n);
    let mut boundaries = Vec::with_capacity(n);
    let mut i = 0;
    let mut next_span = spans.iter().peekable();
    while i < n {
        if let Some(span) = next_span.next_if(|s| s.start == i) {
            let text = input.tokens[span.start..span.end].join(" ");
            let words = match verbalize(&text, span.class) {
                Ok(w) => w,
                Err(_) => input.tokens[span.start..span.end].to_vec(),
            };
            let strongest = input.boundaries[span.start..span.end].iter().copied().max().unwrap_or(Boundary::N);
            let count = words.len();
            spoken.extend(words);
            boundaries.extend(std::iter::repeat_n(Boundary::N, count - 1));
            boundaries.push(strongest);
            i = span.end;
        } else {
            out_pos[i] = Some(spoken.len());
            spoken.push(input.tokens[i].clone());
            boundaries.push(input.boundaries[i]);
            i += 1;
        }
    }
    let polyphones = input
        .polyphones
        .iter()
        .filter_map(|p| {
            out_pos[p.position].map(|position| Polyphone { position, pronunciation: p.pronunciation.clone() })
        })
        .collect();
    Ok(FrontendOutput {
        tokens: input.tokens.clone(),
        tn_tags: input.tn_tags.clone(),
        spoken,
        boundaries,
        polyphones,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::NswClass;
    use Boundary::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn plain_input_passes_through() {
        let input = MergeInput {
            tokens: toks("the dog saw a cat"),
            tn_tags: vec![BioTag::O; 5],
            boundaries: vec![N, PW, N, N, IPH],
            polyphones: vec![Polyphone { position: 2, pronunciation: "S AO1".into() }],
        };
        let out = result_merge(&input).unwrap();
        assert_eq!(out.spoken, input.tokens);
        assert_eq!(out.boundaries, input.boundaries);
        assert_eq!(out.polyphones, input.polyphones);
    }

    #[test]
    fn inner_boundary_moves_to_span_end() {
        let d = NswClass::Date;
        let input = MergeInput {
            tokens: toks("it was in june 5 1999 ok"),
            tn_tags: vec![BioTag::O, BioTag::O, BioTag::O, BioTag::B(d), BioTag::I(d), BioTag::I(d), BioTag::O],
            boundaries: vec![N, N, N, N, PPH, N, IPH],
            polyphones: vec![],
        };
        let out = result_merge(&input).unwrap();
        assert_eq!(out.spoken.join(" "), "it was in june fifth nineteen ninety nine ok");
        assert_eq!(out.boundaries, vec![N, N, N, N, N, N, N, PPH, IPH]);
    }

    #[test]
    fn polyphone_inside_span_is_dropped() {
        let input = MergeInput {
            tokens: toks("a NASA live feed"),
            tn_tags: vec![BioTag::O, BioTag::B(NswClass::Letters), BioTag::O, BioTag::O],
            boundaries: vec![N, PW, N, IPH],
            polyphones: vec![
                Polyphone { position: 1, pronunciation: "X".into() },
                Polyphone { position: 2, pronunciation: "L AY1 V".into() },
            ],
        };
        let out = result_merge(&input).unwrap();
        assert_eq!(out.spoken, toks("a n a s a live feed"));
        assert_eq!(out.polyphones, vec![Polyphone { position: 5, pronunciation: "L AY1 V".into() }]);
        assert_eq!(result_merge(&out.to_merge_input()).unwrap().spoken, out.spoken);
    }

    #[test]
    fn unverbalizable_span_keeps_its_tokens() {
        let input = MergeInput {
            tokens: toks("at noonish"),
            tn_tags: vec![BioTag::O, BioTag::B(NswClass::Time)],
            boundaries: vec![N, IPH],
            polyphones: vec![],
        };
        assert_eq!(result_merge(&input).unwrap().spoken, input.tokens);
    }

    #[test]
    fn malformed_inputs() {
        let bad = MergeInput {
            tokens: toks("a b"),
            tn_tags: vec![BioTag::O, BioTag::I(NswClass::Cardinal)],
            boundaries: vec![N, N],
            polyphones: vec![],
        };
        assert!(result_merge(&bad).is_err());
        let short = MergeInput { tn_tags: vec![BioTag::O], ..bad };
        assert!(result_merge(&short).is_err());
    }
}
