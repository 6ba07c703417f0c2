use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conformer::ResConformer;
use super::crf::{build_transition_mask, crf_nll_var, crf_viterbi, CrfMask, CrfScores, CrfVars, MASK_PENALTY};
use super::merge::{result_merge, FrontendOutput, MergeInput, Polyphone};
use crate::encoders::{CellKind, EncoderConfig, SpanExtractor, TextEncoder};
use crate::error::{Error, Result};
use crate::labels::{BioTag, Boundary};
use crate::numerics::{stream_for, Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::synthcorpus::lexicon::{homograph_readings, pronunciation_inventory, Lexicon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub encoder: EncoderConfig,
    /// Stacked ResConformer blocks; 0 feeds the encoder output straight to the heads.
    pub conformer_blocks: usize,
    pub conformer_hidden: usize,
    pub detach_skip: bool,
    /// Width of the PBP and PD recurrent layers (both directions).
    pub head_hidden: usize,
    pub head_cell: CellKind,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            encoder: EncoderConfig::default(),
            conformer_blocks: 1,
            conformer_hidden: 64,
            detach_skip: true,
            head_hidden: 32,
            head_cell: CellKind::Lstm,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.conformer_blocks > 0 && self.conformer_hidden == 0 {
            return Err(Error::Config("conformer_hidden must be >= 1".into()));
        }
        if self.head_hidden < 2 || self.head_hidden % 2 != 0 {
            return Err(Error::Config(format!("head_hidden must be even and >= 2 (got {})", self.head_hidden)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, p: &str, i: usize, o: usize, rng: &mut R) -> Result<Self> {
        Ok(Linear {
            w: store.get_or_init(&format!("{p}.w"), i, o, Init::Xavier, rng)?,
            b: store.get_or_init(&format!("{p}.b"), 1, o, Init::Zeros, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
struct CrfParams {
    transitions: ParamId,
    start: ParamId,
    end: ParamId,
}

impl CrfParams {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, p: &str, k: usize, rng: &mut R) -> Result<Self> {
        Ok(CrfParams {
            transitions: store.get_or_init(&format!("{p}.trans"), k, k, Init::Zeros, rng)?,
            start: store.get_or_init(&format!("{p}.start"), 1, k, Init::Zeros, rng)?,
            end: store.get_or_init(&format!("{p}.end"), 1, k, Init::Zeros, rng)?,
        })
    }

    fn vars(&self, g: &mut Graph, store: &ParamStore) -> CrfVars {
        CrfVars {
            transitions: g.param(store, self.transitions),
            start: g.param(store, self.start),
            end: g.param(store, self.end),
        }
    }

    fn decode(&self, store: &ParamStore, emissions: &Tensor, mask: &CrfMask) -> Result<Vec<usize>> {
        crf_viterbi(&CrfScores {
            emissions,
            transitions: store.value(self.transitions),
            start: store.value(self.start),
            end: store.value(self.end),
            mask,
        })
    }
}

/// Head outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    /// `n x 11`, BIO tags in [`BioTag::all`] order.
    pub tn: Var,
    /// `n x 4`, boundaries in [`Boundary::ALL`] order.
    pub pbp: Var,
    /// `n x P` unmasked scores over the pronunciation inventory.
    pub pd: Var,
}

/// One polyphone query: token position and candidate inventory indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdQuery {
    pub position: usize,
    pub candidates: Vec<usize>,
}

/// Shared text encoder and ResConformer stack feeding the TN, PBP and PD heads.
#[derive(Debug, Clone)]
pub struct FrontendModel {
    pub config: FrontendConfig,
    text: TextEncoder,
    blocks: Vec<ResConformer>,
    out_ln: (ParamId, ParamId),
    tn: Linear,
    tn_crf: CrfParams,
    tn_mask: CrfMask,
    pbp_rnn: SpanExtractor,
    pbp: Linear,
    pbp_crf: CrfParams,
    pbp_mask: CrfMask,
    pd_rnn: SpanExtractor,
    pd: Linear,
    inventory: Vec<String>,
}

impl FrontendModel {
    /// Registers (or reuses) every parameter. Parts already in `store`, such
    /// as a pretrained `text.` encoder, keep their values. Each part draws from
    /// its own stream so heads start identically with or without pretraining.
    pub fn new(store: &mut ParamStore, cfg: &FrontendConfig, num_ids: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder.dim;
        let text = TextEncoder::new(store, "text", &cfg.encoder, num_ids, &mut stream_for(seed, "frontend.text", 0))?;
        let mut blocks = Vec::with_capacity(cfg.conformer_blocks);
        for k in 0..cfg.conformer_blocks {
            let mut rng = stream_for(seed, "frontend.conformer", k as u64);
            let mut b = ResConformer::new(store, &format!("conf.b{k}"), d, cfg.conformer_hidden, &mut rng)?;
            b.detach_skip = cfg.detach_skip;
            blocks.push(b);
        }
        let out_ln = (
            store.get_or_init("shared.ln.g", 1, d, Init::Const(1.0), &mut stream_for(seed, "frontend.ln", 0))?,
            store.get_or_init("shared.ln.b", 1, d, Init::Zeros, &mut stream_for(seed, "frontend.ln", 0))?,
        );
        let tn_labels: Vec<String> = BioTag::all().iter().map(ToString::to_string).collect();
        let inventory = pronunciation_inventory();
        let h = cfg.head_hidden;

        let rng = &mut stream_for(seed, "frontend.tn", 0);
        let tn = Linear::new(store, "tn.out", d, tn_labels.len(), rng)?;
        let tn_crf = CrfParams::new(store, "tn.crf", tn_labels.len(), rng)?;

        let rng = &mut stream_for(seed, "frontend.pbp", 0);
        let pbp_rnn = SpanExtractor::new(store, "pbp.rnn", d, h, cfg.head_cell, rng)?;
        let pbp = Linear::new(store, "pbp.out", h, Boundary::ALL.len(), rng)?;
        let pbp_crf = CrfParams::new(store, "pbp.crf", Boundary::ALL.len(), rng)?;

        let rng = &mut stream_for(seed, "frontend.pd", 0);
        let pd_rnn = SpanExtractor::new(store, "pd.rnn", d, h, cfg.head_cell, rng)?;
        let pd = Linear::new(store, "pd.out", h, inventory.len(), rng)?;

        Ok(FrontendModel {
            config: cfg.clone(),
            text,
            blocks,
            out_ln,
            tn,
            tn_crf,
            tn_mask: build_transition_mask(&tn_labels)?,
            pbp_rnn,
            pbp,
            pbp_crf,
            pbp_mask: CrfMask::permissive(Boundary::ALL.len()),
            pd_rnn,
            pd,
            inventory,
        })
    }

    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    pub fn tn_mask(&self) -> &CrfMask {
        &self.tn_mask
    }

    /// Inventory index of a pronunciation.
    pub fn pronunciation_index(&self, p: &str) -> Result<usize> {
        self.inventory
            .iter()
            .position(|q| q == p)
            .ok_or_else(|| Error::Data(format!("pronunciation {p:?} is not in the inventory")))
    }

    /// Encoder, ResConformer stack and a layer norm, `n x D`. The norm keeps
    /// head inputs on one scale whether the encoder is pretrained or fresh.
    pub fn shared(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        let hidden = self.text.hidden(g, store, ids)?;
        let (_, mut h) = TextEncoder::split(g, hidden);
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        let (gain, bias) = (g.param(store, self.out_ln.0), g.param(store, self.out_ln.1));
        Ok(g.layer_norm(h, gain, bias))
    }

    pub fn tn_emissions(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Var {
        self.tn.forward(g, store, h)
    }

    pub fn pbp_emissions(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let r = self.pbp_rnn.sequence(g, store, h)?;
        Ok(self.pbp.forward(g, store, r))
    }

    pub fn pd_scores(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let r = self.pd_rnn.sequence(g, store, h)?;
        Ok(self.pd.forward(g, store, r))
    }

    /// All three heads over one shared pass.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> Result<HeadOutputs> {
        let h = self.shared(g, store, ids)?;
        Ok(HeadOutputs {
            tn: self.tn_emissions(g, store, h),
            pbp: self.pbp_emissions(g, store, h)?,
            pd: self.pd_scores(g, store, h)?,
        })
    }

    /// `1 x P` scores at one position with non-candidates pushed down by the mask penalty.
    pub fn masked_pd_row(&self, g: &mut Graph, pd: Var, q: &PdQuery) -> Result<Var> {
        let n = g.value(pd).rows();
        if q.position >= n {
            return Err(Error::Data(format!("polyphone position {} outside {n} tokens", q.position)));
        }
        if q.candidates.is_empty() || q.candidates.iter().any(|&c| c >= self.inventory.len()) {
            return Err(Error::Data(format!("bad candidate set {:?}", q.candidates)));
        }
        let mut mask = Tensor::filled(1, self.inventory.len(), MASK_PENALTY);
        for &c in &q.candidates {
            mask.set(0, c, 0.0);
        }
        let row = g.row(pd, q.position);
        let m = g.constant(mask);
        Ok(g.add(row, m))
    }

    pub fn tn_loss(&self, g: &mut Graph, store: &ParamStore, h: Var, gold: &[usize]) -> Result<Var> {
        let em = self.tn_emissions(g, store, h);
        let crf = self.tn_crf.vars(g, store);
        crf_nll_var(g, em, crf, &self.tn_mask, gold)
    }

    pub fn pbp_loss(&self, g: &mut Graph, store: &ParamStore, h: Var, gold: &[usize]) -> Result<Var> {
        let em = self.pbp_emissions(g, store, h)?;
        let crf = self.pbp_crf.vars(g, store);
        crf_nll_var(g, em, crf, &self.pbp_mask, gold)
    }

    pub fn pd_loss(&self, g: &mut Graph, store: &ParamStore, h: Var, q: &PdQuery, gold: usize) -> Result<Var> {
        if !q.candidates.contains(&gold) {
            return Err(Error::Data(format!("gold pronunciation {gold} is not among the candidates")));
        }
        let scores = self.pd_scores(g, store, h)?;
        let row = self.masked_pd_row(g, scores, q)?;
        Ok(g.cross_entropy(row, &[Some(gold)]).expect("one target"))
    }

    pub fn decode_tn(&self, store: &ParamStore, ids: &[u32]) -> Result<Vec<BioTag>> {
        let mut g = Graph::new();
        let h = self.shared(&mut g, store, ids)?;
        let em = self.tn_emissions(&mut g, store, h);
        let all = BioTag::all();
        Ok(self.tn_crf.decode(store, g.value(em), &self.tn_mask)?.into_iter().map(|i| all[i]).collect())
    }

    pub fn decode_pbp(&self, store: &ParamStore, ids: &[u32]) -> Result<Vec<Boundary>> {
        let mut g = Graph::new();
        let h = self.shared(&mut g, store, ids)?;
        let em = self.pbp_emissions(&mut g, store, h)?;
        Ok(self.pbp_crf.decode(store, g.value(em), &self.pbp_mask)?.into_iter().map(Boundary::from_index).collect())
    }

    /// Chosen inventory index per query; ties go to the lower index.
    pub fn decode_pd(&self, store: &ParamStore, ids: &[u32], queries: &[PdQuery]) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let h = self.shared(&mut g, store, ids)?;
        let scores = self.pd_scores(&mut g, store, h)?;
        queries.iter().map(|q| Ok(argmax_candidate(g.value(scores), q))).collect()
    }

    /// Full pipeline on one tokenized sentence: one shared pass, all heads,
    /// then ResultMerge. Polyphones are the tokens listed as homographs.
    pub fn predict(&self, store: &ParamStore, lex: &Lexicon, tokens: &[String]) -> Result<FrontendOutput> {
        let ids = lex.encode(tokens);
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, &ids)?;
        let all = BioTag::all();
        let tn_tags = self.tn_crf.decode(store, g.value(out.tn), &self.tn_mask)?.into_iter().map(|i| all[i]).collect();
        let boundaries =
            self.pbp_crf.decode(store, g.value(out.pbp), &self.pbp_mask)?.into_iter().map(Boundary::from_index).collect();
        let mut polyphones = Vec::new();
        for (position, tok) in tokens.iter().enumerate() {
            let Some(readings) = homograph_readings(&tok.to_lowercase()) else { continue };
            let candidates = readings.iter().map(|r| self.pronunciation_index(r)).collect::<Result<Vec<_>>>()?;
            let choice = argmax_candidate(g.value(out.pd), &PdQuery { position, candidates });
            polyphones.push(Polyphone { position, pronunciation: self.inventory[choice].clone() });
        }
        result_merge(&MergeInput { tokens: tokens.to_vec(), tn_tags, boundaries, polyphones })
    }
}

fn argmax_candidate(scores: &Tensor, q: &PdQuery) -> usize {
    let mut best = q.candidates[0];
    for &c in &q.candidates[1..] {
        let (v, b) = (scores.get(q.position, c), scores.get(q.position, best));
        if v > b || (v == b && c < best) {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::validate_bio;
    use crate::numerics::grad_check;

    fn small() -> FrontendConfig {
        FrontendConfig {
            encoder: EncoderConfig { dim: 8, layers: 1, ffn_hidden: 8, max_positions: 16, ..EncoderConfig::default() },
            conformer_hidden: 8,
            head_hidden: 6,
            ..FrontendConfig::default()
        }
    }

    fn model() -> (ParamStore, FrontendModel) {
        let mut store = ParamStore::new();
        let m = FrontendModel::new(&mut store, &small(), 12, 5).unwrap();
        (store, m)
    }

    #[test]
    fn head_shapes() {
        let (store, m) = model();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &store, &[4, 5, 6, 7]).unwrap();
        assert_eq!(g.value(out.tn).shape(), [4, 11]);
        assert_eq!(g.value(out.pbp).shape(), [4, 4]);
        assert_eq!(g.value(out.pd).shape(), [4, m.inventory().len()]);
    }

    #[test]
    fn pd_mask_pushes_non_candidates_down() {
        let (store, m) = model();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &store, &[4, 5, 6]).unwrap();
        let row = m.masked_pd_row(&mut g, out.pd, &PdQuery { position: 1, candidates: vec![2, 3] }).unwrap();
        for (c, &v) in g.value(row).data().iter().enumerate() {
            if c != 2 && c != 3 {
                assert!(v <= -1e4 + 10.0);
            }
        }
    }

    #[test]
    fn heads_do_not_share_parameters() {
        let (store, m) = model();
        let ids = [4, 9, 6, 5];
        let mut g = Graph::new();
        let before = m.forward(&mut g, &store, &ids).unwrap();
        let mut other = store.clone();
        for name in ["pd.out.w", "pd.rnn.fwd.wx"] {
            let id = other.id(name).unwrap();
            other.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g2 = Graph::new();
        let after = m.forward(&mut g2, &other, &ids).unwrap();
        assert_eq!(g.value(before.tn), g2.value(after.tn));
        assert_eq!(g.value(before.pbp), g2.value(after.pbp));
        assert_ne!(g.value(before.pd), g2.value(after.pd));
    }

    #[test]
    fn untrained_tn_decodes_valid_bio() {
        let (mut store, m) = model();
        let id = store.id("tn.out.w").unwrap();
        *store.value_mut(id) = crate::numerics::params::normal_tensor(8, 11, 3.0, &mut crate::numerics::seeded_rng(1, 0));
        for seq in [[4u32, 5, 6, 7, 8], [11, 10, 9, 8, 7], [4, 4, 4, 4, 4]] {
            let tags = m.decode_tn(&store, &seq).unwrap();
            assert!(validate_bio(&tags).is_ok());
        }
    }

    #[test]
    fn pd_loss_gradients() {
        // a detached skip hides the true encoder gradient from finite differences
        let cfg = FrontendConfig { detach_skip: false, ..small() };
        let mut store = ParamStore::new();
        let m = FrontendModel::new(&mut store, &cfg, 12, 5).unwrap();
        let q = PdQuery { position: 1, candidates: vec![4, 5] };
        let report = grad_check(
            |g, s| {
                let h = m.shared(g, s, &[4, 6, 7])?;
                m.pd_loss(g, s, h, &q, 5)
            },
            &store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
