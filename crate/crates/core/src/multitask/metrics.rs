use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FrontendModel, PdQuery};
use crate::labels::{bio_spans, BioTag, Boundary};
use crate::numerics::ParamStore;
use crate::synthcorpus::lexicon::Lexicon;
use crate::synthcorpus::{PbpExample, PdExample, TnExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbpF1 {
    #[serde(rename = "PW")]
    pub pw: f64,
    #[serde(rename = "PPH")]
    pub pph: f64,
    #[serde(rename = "IPH")]
    pub iph: f64,
}

impl PbpF1 {
    pub fn macro_avg(&self) -> f64 {
        (self.pw + self.pph + self.iph) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub tn_span_f1: f64,
    pub tn_sentence_acc: f64,
    pub pbp_f1: PbpF1,
    pub pd_acc: f64,
}

impl MetricsReport {
    /// Per-task convergence metric: TN span F1, PBP macro F1, PD accuracy.
    pub fn task_scores(&self) -> [f64; 3] {
        [self.tn_span_f1, self.pbp_f1.macro_avg(), self.pd_acc]
    }
}

/// F1 from counts; 1.0 when there is nothing to find and nothing predicted.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn check_pairs<T>(gold: &[Vec<T>], pred: &[Vec<T>]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if gold.len() != pred.len() || gold.iter().zip(pred).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::Data("predictions do not line up with the gold sequences".into()));
    }
    Ok(())
}

/// Micro F1 over (sentence, class, start, end) spans, and exact-match sentence accuracy.
pub fn tn_scores(gold: &[Vec<BioTag>], pred: &[Vec<BioTag>]) -> Result<(f64, f64)> {
    check_pairs(gold, pred)?;
    let (mut tp, mut fp, mut fn_, mut exact) = (0, 0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gs = bio_spans(g);
        let ps = bio_spans(p);
        let hits = ps.iter().filter(|s| gs.contains(s)).count();
        tp += hits;
        fp += ps.len() - hits;
        fn_ += gs.len() - hits;
        exact += usize::from(g == p);
    }
    Ok((f1(tp, fp, fn_), exact as f64 / gold.len() as f64))
}

/// F1 at each level; a token is positive at level `l` when its boundary is at least `l`.
pub fn pbp_scores(gold: &[Vec<Boundary>], pred: &[Vec<Boundary>]) -> Result<PbpF1> {
    check_pairs(gold, pred)?;
    let level = |lv: Boundary| {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (g, p) in gold.iter().flatten().zip(pred.iter().flatten()) {
            match (*g >= lv, *p >= lv) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        f1(tp, fp, fn_)
    };
    Ok(PbpF1 { pw: level(Boundary::PW), pph: level(Boundary::PPH), iph: level(Boundary::IPH) })
}

pub fn accuracy(gold: &[usize], pred: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Data("predictions do not line up with the gold labels".into()));
    }
    Ok(gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64)
}

/// Candidate set of a PD example as inventory indexes, plus the gold index.
pub fn pd_query(model: &FrontendModel, ex: &PdExample) -> Result<(PdQuery, usize)> {
    let candidates = ex.candidates.iter().map(|c| model.pronunciation_index(c)).collect::<Result<Vec<_>>>()?;
    let gold = model.pronunciation_index(&ex.gold)?;
    if !candidates.contains(&gold) {
        return Err(Error::Data(format!("gold {:?} is not among the candidates", ex.gold)));
    }
    Ok((PdQuery { position: ex.position, candidates }, gold))
}

/// Decodes every example and scores the three tasks.
pub fn evaluate_metrics(
    store: &ParamStore,
    model: &FrontendModel,
    lex: &Lexicon,
    tn: &[TnExample],
    pbp: &[PbpExample],
    pd: &[PdExample],
) -> Result<MetricsReport> {
    if tn.is_empty() || pbp.is_empty() || pd.is_empty() {
        return Err(Error::Data("every evaluation set must be nonempty".into()));
    }
    let tn_pred = tn.par_iter().map(|ex| model.decode_tn(store, &lex.encode(&ex.tokens))).collect::<Result<Vec<_>>>()?;
    let tn_gold: Vec<Vec<BioTag>> = tn.iter().map(|ex| ex.tags.clone()).collect();
    let pbp_pred =
        pbp.par_iter().map(|ex| model.decode_pbp(store, &lex.encode(&ex.tokens))).collect::<Result<Vec<_>>>()?;
    let pbp_gold: Vec<Vec<Boundary>> = pbp.iter().map(|ex| ex.boundaries.clone()).collect();
    let pd_pairs = pd
        .par_iter()
        .map(|ex| {
            let (q, gold) = pd_query(model, ex)?;
            let choice = model.decode_pd(store, &lex.encode(&ex.tokens), std::slice::from_ref(&q))?[0];
            Ok((gold, choice))
        })
        .collect::<Result<Vec<_>>>()?;
    let (pd_gold, pd_pred): (Vec<usize>, Vec<usize>) = pd_pairs.into_iter().unzip();
    let (tn_span_f1, tn_sentence_acc) = tn_scores(&tn_gold, &tn_pred)?;
    Ok(MetricsReport {
        tn_span_f1,
        tn_sentence_acc,
        pbp_f1: pbp_scores(&pbp_gold, &pbp_pred)?,
        pd_acc: accuracy(&pd_gold, &pd_pred)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::NswClass;
    use Boundary::*;

    #[test]
    fn perfect_predictions_score_one() {
        let tags = vec![vec![BioTag::O, BioTag::B(NswClass::Date), BioTag::I(NswClass::Date)]];
        assert_eq!(tn_scores(&tags, &tags).unwrap(), (1.0, 1.0));
        let b = vec![vec![N, PW, PPH, IPH]];
        let f = pbp_scores(&b, &b).unwrap();
        assert_eq!(f.macro_avg(), 1.0);
    }

    #[test]
    fn missing_spans_give_zero_f1() {
        let gold = vec![vec![BioTag::B(NswClass::Money), BioTag::O]];
        let pred = vec![vec![BioTag::O, BioTag::O]];
        assert_eq!(tn_scores(&gold, &pred).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn pph_fixture() {
        // 3 gold PPH-or-stronger, 2 predicted, both hits: P = 1, R = 2/3
        let gold = vec![vec![N, PPH, IPH], vec![PW, N], vec![PPH, N, PW]];
        let pred = vec![vec![N, PPH, PW], vec![PW, N], vec![IPH, N, PW]];
        let f = pbp_scores(&gold, &pred).unwrap();
        assert!((f.pph - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert!(tn_scores(&[], &[]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }
}
