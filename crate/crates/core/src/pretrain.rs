//! Stage-1 contrastive text/audio pretraining: pair sampling, the three
//! objectives, the training loop, and alignment evaluation.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{argmax_candidates, pairing_logits, span_contrastive_loss, Direction, PairingMatrix};
use crate::encoders::{spans, slide_windows, EncoderConfig, MctapModel, WindowSpec};
use crate::error::{Error, Result};
use crate::numerics::{stream_for, AdamWConfig, Graph, ParamGrads, ParamStore, Precision, RngStream, Tensor, Var};
use crate::synthcorpus::lexicon::MASK;
use crate::synthcorpus::Utterance;

/// Sentinel MLM target for unmasked positions.
pub const NOT_MASKED: i64 = -1;

fn default_optimizer() -> AdamWConfig {
    AdamWConfig::with_lr(2e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub logit_scale: f64,
    pub text_window: WindowSpec,
    pub audio_window: WindowSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub mlm_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: AdamWConfig,
    pub precision: Precision,
    pub span_on: bool,
    pub sentence_on: bool,
    pub mlm_on: bool,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 42,
            alpha: 0.5,
            beta: 0.5,
            logit_scale: 10.0,
            text_window: WindowSpec { size: 3, stride: 1 },
            audio_window: WindowSpec { size: 33, stride: 11 },
            epochs: 8,
            batch_size: 8,
            mlm_rate: 0.15,
            optimizer: default_optimizer(),
            precision: Precision::F64,
            span_on: true,
            sentence_on: true,
            mlm_on: true,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("alpha and beta must be >= 0 (got {}, {})", self.alpha, self.beta)));
        }
        if !(self.logit_scale > 0.0) {
            return Err(Error::Config("logit_scale must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mlm_rate) {
            return Err(Error::Config(format!("mlm_rate {} not in [0, 1]", self.mlm_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.span_on || self.sentence_on || self.mlm_on) {
            return Err(Error::Config("no active objective".into()));
        }
        self.text_window.validate()?;
        self.audio_window.validate()?;
        self.encoder.validate()
    }

    /// `L_span + α·L_sen + β·L_mlm`, with disabled terms left out.
    pub fn combine(&self, span: f64, sen: f64, mlm: f64) -> f64 {
        let mut total = 0.0;
        if self.span_on {
            total += span;
        }
        if self.sentence_on {
            total += self.alpha * sen;
        }
        if self.mlm_on {
            total += self.beta * mlm;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub span: f64,
    pub sen: f64,
    pub mlm: f64,
}

/// Utterance indexes grouped by speaker.
#[derive(Debug, Clone)]
pub struct SpeakerIndex {
    by_speaker: BTreeMap<u32, Vec<usize>>,
}

impl SpeakerIndex {
    /// Requires at least two speakers, each with at least two utterances.
    pub fn new(utts: &[Utterance]) -> Result<Self> {
        let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, u) in utts.iter().enumerate() {
            by_speaker.entry(u.speaker).or_default().push(i);
        }
        if by_speaker.len() < 2 {
            return Err(Error::Data(format!(
                "insufficient speaker coverage: {} speaker(s), need >= 2",
                by_speaker.len()
            )));
        }
        if let Some((s, v)) = by_speaker.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Data(format!(
                "insufficient speaker coverage: speaker {s} has {} utterance(s), need >= 2",
                v.len()
            )));
        }
        Ok(SpeakerIndex { by_speaker })
    }

    /// `(positive, negative)` for the utterance at `anchor`: uniform over other
    /// utterances of the same speaker, and over all utterances of other speakers.
    pub fn sample_pair<R: Rng + ?Sized>(&self, utts: &[Utterance], anchor: usize, rng: &mut R) -> (usize, usize) {
        let speaker = utts[anchor].speaker;
        let same = &self.by_speaker[&speaker];
        let positives: Vec<usize> = same.iter().copied().filter(|&i| i != anchor).collect();
        let pos = *positives.choose(rng).expect("speaker has >= 2 utterances");
        let others = utts.len() - same.len();
        let mut k = rng.random_range(0..others);
        let mut neg = None;
        for (&s, idx) in &self.by_speaker {
            if s == speaker {
                continue;
            }
            if k < idx.len() {
                neg = Some(idx[k]);
                break;
            }
            k -= idx.len();
        }
        (pos, neg.expect("index within other speakers"))
    }
}

/// `2 − cos(P_t, Q_pos) + cos(P_t, Q_neg)`.
pub fn sentence_loss(g: &mut Graph, p_t: Var, q_pos: Var, q_neg: Var) -> Result<Var> {
    for v in [p_t, q_pos, q_neg] {
        if g.min_row_norm(v) < crate::numerics::graph::MIN_NORM {
            return Err(Error::Numeric("zero-norm vector in sentence loss".into()));
        }
    }
    let cp = g.cosine(p_t, q_pos);
    let cn = g.cosine(p_t, q_neg);
    let d = g.sub(cn, cp);
    let two = g.constant(Tensor::scalar(2.0));
    Ok(g.add(two, d))
}

/// Replaces each position by `[MASK]` with probability `rate`. Targets hold
/// the original id at masked positions and [`NOT_MASKED`] elsewhere. When
/// `rate > 0` and no position was drawn, one uniformly chosen position is
/// masked.
pub fn apply_mlm_mask<R: Rng + ?Sized>(ids: &[u32], rate: f64, rng: &mut R) -> (Vec<u32>, Vec<i64>) {
    let mut masked = ids.to_vec();
    let mut targets = vec![NOT_MASKED; ids.len()];
    if rate <= 0.0 || ids.is_empty() {
        return (masked, targets);
    }
    for i in 0..ids.len() {
        if rng.random_bool(rate) {
            masked[i] = MASK;
            targets[i] = i64::from(ids[i]);
        }
    }
    if targets.iter().all(|&t| t == NOT_MASKED) {
        let i = rng.random_range(0..ids.len());
        masked[i] = MASK;
        targets[i] = i64::from(ids[i]);
    }
    (masked, targets)
}

/// One training example: anchor with its sampled contrast clips and mask.
#[derive(Debug, Clone)]
pub struct PretrainItem<'a> {
    pub anchor: &'a Utterance,
    pub positive: &'a Utterance,
    pub negative: &'a Utterance,
    pub masked_ids: Vec<u32>,
    pub mlm_targets: Vec<i64>,
}

/// Graph nodes of one example's objectives.
pub struct Objective {
    pub total: Var,
    pub span: Option<Var>,
    pub sen: Option<Var>,
    pub mlm: Option<Var>,
}

/// Builds the per-example objective `span + α·sen + β·mlm` on `g`.
pub fn example_objective(
    g: &mut Graph,
    store: &ParamStore,
    model: &MctapModel,
    item: &PretrainItem<'_>,
    cfg: &PretrainConfig,
) -> Result<Objective> {
    let mut terms = Vec::new();
    let (mut span, mut sen, mut mlm) = (None, None, None);
    if cfg.span_on || cfg.sentence_on {
        let (p_t, e_t) = model.text.encode(g, store, &item.anchor.token_ids)?;
        if cfg.span_on {
            let (s_t, _) = spans(g, store, &model.span_text, e_t, cfg.text_window)?;
            let e_a = model.audio.frames(g, store, &item.anchor.frames)?;
            let (s_a, _) = spans(g, store, &model.span_audio, e_a, cfg.audio_window)?;
            let logits = pairing_logits(g, s_t, s_a)?;
            let l = span_contrastive_loss(g, logits, cfg.logit_scale)?.loss;
            terms.push(l);
            span = Some(l);
        }
        if cfg.sentence_on {
            let (q_pos, _) = model.audio.encode(g, store, &item.positive.frames)?;
            let (q_neg, _) = model.audio.encode(g, store, &item.negative.frames)?;
            let l = sentence_loss(g, p_t, q_pos, q_neg)?;
            terms.push(g.scale(l, cfg.alpha));
            sen = Some(l);
        }
    }
    if cfg.mlm_on {
        let (_, e_m) = model.text.encode(g, store, &item.masked_ids)?;
        let logits = model.text.mlm_logits(g, store, e_m);
        let targets: Vec<Option<usize>> =
            item.mlm_targets.iter().map(|&t| (t != NOT_MASKED).then_some(t as usize)).collect();
        if let Some(l) = g.cross_entropy(logits, &targets) {
            terms.push(g.scale(l, cfg.beta));
            mlm = Some(l);
        }
    }
    let mut total = *terms.first().ok_or_else(|| Error::Config("no active objective".into()))?;
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    Ok(Objective { total, span, sen, mlm })
}

/// Mean gradients and loss breakdown of one batch; examples run in parallel
/// and are reduced in order.
pub fn batch_gradients(
    store: &ParamStore,
    model: &MctapModel,
    items: &[PretrainItem<'_>],
    cfg: &PretrainConfig,
) -> Result<(ParamGrads, LossBreakdown)> {
    let results: Vec<Result<(ParamGrads, [f64; 3])>> = items
        .par_iter()
        .map(|item| {
            let mut g = Graph::new();
            let obj = example_objective(&mut g, store, model, item, cfg)?;
            let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar_value(v));
            let parts = [val(obj.span), val(obj.sen), val(obj.mlm)];
            Ok((g.backward(obj.total).param_grads(store), parts))
        })
        .collect();
    let scale = 1.0 / items.len() as f64;
    let mut grads = ParamGrads::empty(store.len());
    let mut sums = [0.0; 3];
    for r in results {
        let (g, parts) = r?;
        grads.accumulate(&g, scale);
        for k in 0..3 {
            sums[k] += parts[k];
        }
    }
    let [span, sen, mlm] = sums.map(|s| s * scale);
    Ok((grads, LossBreakdown { total: cfg.combine(span, sen, mlm), span, sen, mlm }))
}

/// Gradient step on one batch.
pub fn pretrain_step(
    store: &mut ParamStore,
    model: &MctapModel,
    items: &[PretrainItem<'_>],
    cfg: &PretrainConfig,
) -> Result<LossBreakdown> {
    let (grads, losses) = batch_gradients(store, model, items, cfg)?;
    if !losses.total.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite pretraining loss at step {}: span {} sen {} mlm {}",
            store.step_count() + 1,
            losses.span,
            losses.sen,
            losses.mlm
        )));
    }
    store.adamw_step(&grads, &cfg.optimizer, cfg.precision);
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub total: f64,
    pub span: f64,
    pub sen: f64,
    pub mlm: f64,
    pub dev_top1: Option<f64>,
    pub dev_matched: Option<f64>,
}

pub struct Pretrained {
    pub store: ParamStore,
    pub model: MctapModel,
    pub report: Vec<EpochReport>,
}

/// Fresh parameters for `num_ids` token ids.
pub fn init_model(cfg: &PretrainConfig, num_ids: usize) -> Result<(ParamStore, MctapModel)> {
    let mut store = ParamStore::new();
    let model = MctapModel::new(&mut store, &cfg.encoder, num_ids, &mut stream_for(cfg.seed, "pretrain.init", 0))?;
    if cfg.precision == Precision::F32 {
        store.quantize_f32();
    }
    Ok((store, model))
}

fn check_utterances(utts: &[Utterance], cfg: &PretrainConfig, num_ids: usize) -> Result<()> {
    for u in utts {
        if u.token_ids.len() + 1 > cfg.encoder.max_positions {
            return Err(Error::Data(format!("utterance {} has {} tokens, model allows {}", u.id, u.token_ids.len(), cfg.encoder.max_positions - 1)));
        }
        if u.frames.cols() != cfg.encoder.audio_dim {
            return Err(Error::Data(format!(
                "utterance {} has {}-dim frames, model expects {}",
                u.id,
                u.frames.cols(),
                cfg.encoder.audio_dim
            )));
        }
        if let Some(&bad) = u.token_ids.iter().find(|&&t| t as usize >= num_ids) {
            return Err(Error::Data(format!("utterance {} has token id {bad} outside the vocabulary", u.id)));
        }
    }
    Ok(())
}

/// Items of one epoch's batches, in order.
fn epoch_batches<'a>(
    utts: &'a [Utterance],
    speakers: &SpeakerIndex,
    cfg: &PretrainConfig,
    epoch: usize,
) -> Vec<Vec<PretrainItem<'a>>> {
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.shuffle(&mut stream_for(cfg.seed, "pretrain.shuffle", epoch as u64));
    let mut rng: RngStream = stream_for(cfg.seed, "pretrain.sample", epoch as u64);
    let items: Vec<PretrainItem<'a>> = order
        .iter()
        .map(|&i| {
            let (p, n) = speakers.sample_pair(utts, i, &mut rng);
            let (masked_ids, mlm_targets) = apply_mlm_mask(&utts[i].token_ids, cfg.mlm_rate, &mut rng);
            PretrainItem { anchor: &utts[i], positive: &utts[p], negative: &utts[n], masked_ids, mlm_targets }
        })
        .collect();
    let mut batches = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(cfg.batch_size).collect());
    }
    batches
}

/// Trains from `start` (or fresh parameters) for `cfg.epochs` epochs.
/// `on_epoch` sees each report row as it is produced.
pub fn run_pretraining(
    cfg: &PretrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    num_ids: usize,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Pretrained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    check_utterances(train, cfg, num_ids)?;
    check_utterances(dev, cfg, num_ids)?;
    let speakers = SpeakerIndex::new(train)?;
    let (mut store, model) = init_model(cfg, num_ids)?;
    let mut report = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train, &speakers, cfg, epoch);
        let mut sums = [0.0; 3];
        for batch in &batches {
            let l = pretrain_step(&mut store, &model, batch, cfg)?;
            let w = batch.len() as f64;
            sums[0] += l.span * w;
            sums[1] += l.sen * w;
            sums[2] += l.mlm * w;
        }
        let [span, sen, mlm] = sums.map(|s| s / train.len() as f64);
        let (dev_top1, dev_matched) = if dev.is_empty() {
            (None, None)
        } else {
            let r = eval_alignment(&store, &model, dev, cfg.text_window, cfg.audio_window)?;
            (Some(r.top1), Some(r.mean_matched))
        };
        let row = EpochReport { epoch, total: cfg.combine(span, sen, mlm), span, sen, mlm, dev_top1, dev_matched };
        on_epoch(&row);
        report.push(row);
    }
    Ok(Pretrained { store, model, report })
}

/// Alignment of one utterance under the current encoders.
#[derive(Debug, Clone)]
pub struct UtteranceAlignment {
    pub id: String,
    pub matrix: PairingMatrix,
    /// Gold audio window of each text window.
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimilarityReport {
    pub utterances: usize,
    pub text_spans: usize,
    pub mean_matched: f64,
    pub mean_mismatched: f64,
    pub top1: f64,
    pub per_utterance: Vec<UtteranceAlignment>,
}

/// The scalar part of a [`SimilarityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilaritySummary {
    pub utterances: usize,
    pub text_spans: usize,
    pub mean_matched: f64,
    pub mean_mismatched: f64,
    pub top1: f64,
}

impl SimilarityReport {
    pub fn summary(&self) -> SimilaritySummary {
        SimilaritySummary {
            utterances: self.utterances,
            text_spans: self.text_spans,
            mean_matched: self.mean_matched,
            mean_mismatched: self.mean_mismatched,
            top1: self.top1,
        }
    }
}

/// Audio window with the largest overlap with each text window's frame
/// interval; ties go to the lower index.
pub fn gold_audio_windows(
    alignment: &[(usize, usize)],
    text_windows: &[(usize, usize)],
    audio_windows: &[(usize, usize)],
) -> Vec<usize> {
    text_windows
        .iter()
        .map(|&(a, b)| {
            let (fs, fe) = (alignment[a].0, alignment[b - 1].1);
            let mut best = (0, 0);
            for (k, &(s, e)) in audio_windows.iter().enumerate() {
                let ov = e.min(fe).saturating_sub(s.max(fs));
                if ov > best.1 {
                    best = (k, ov);
                }
            }
            best.0
        })
        .collect()
}

pub fn align_utterance(
    store: &ParamStore,
    model: &MctapModel,
    utt: &Utterance,
    text_window: WindowSpec,
    audio_window: WindowSpec,
) -> Result<UtteranceAlignment> {
    let mut g = Graph::new();
    let (_, e_t) = model.text.encode(&mut g, store, &utt.token_ids)?;
    let (s_t, tw) = spans(&mut g, store, &model.span_text, e_t, text_window)?;
    let e_a = model.audio.frames(&mut g, store, &utt.frames)?;
    let (s_a, aw) = spans(&mut g, store, &model.span_audio, e_a, audio_window)?;
    let logits = pairing_logits(&mut g, s_t, s_a)?;
    let gold = gold_audio_windows(&utt.alignment, &tw, &aw);
    debug_assert_eq!(aw, slide_windows(utt.frames.rows(), audio_window));
    Ok(UtteranceAlignment { id: utt.id.clone(), matrix: PairingMatrix { logits: g.value(logits).clone() }, gold })
}

/// Matched/mismatched cosine means and top-1 text-to-audio retrieval over a split.
pub fn eval_alignment(
    store: &ParamStore,
    model: &MctapModel,
    utts: &[Utterance],
    text_window: WindowSpec,
    audio_window: WindowSpec,
) -> Result<SimilarityReport> {
    if utts.is_empty() {
        return Err(Error::Data("empty evaluation split".into()));
    }
    let per_utterance = utts
        .par_iter()
        .map(|u| align_utterance(store, model, u, text_window, audio_window))
        .collect::<Result<Vec<_>>>()?;
    let (mut matched, mut mismatched, mut n_mis, mut hits, mut n) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for ua in &per_utterance {
        let m = &ua.matrix.logits;
        let picks = argmax_candidates(m, Direction::T2A);
        for (r, &gold) in ua.gold.iter().enumerate() {
            for c in 0..m.cols() {
                if c == gold {
                    matched += m.get(r, c);
                } else {
                    mismatched += m.get(r, c);
                    n_mis += 1;
                }
            }
            hits += usize::from(picks[r] == gold);
            n += 1;
        }
    }
    Ok(SimilarityReport {
        utterances: utts.len(),
        text_spans: n,
        mean_matched: matched / n as f64,
        mean_mismatched: if n_mis == 0 { 0.0 } else { mismatched / n_mis as f64 },
        top1: hits as f64 / n as f64,
        per_utterance,
    })
}
