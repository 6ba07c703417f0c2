use rand::Rng;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Init, ParamId, ParamStore, Var};
use crate::synthcorpus::lexicon::CLS;

#[derive(Debug, Clone)]
struct Layer {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm single-head transformer over token ids with a `[CLS]` row
/// prepended, plus a masked-token prediction head.
///
/// Attention and feed-forward output projections start at zero, so a fresh
/// encoder returns its layer-normed embeddings.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    dim: usize,
    num_ids: usize,
    max_positions: usize,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<Layer>,
    ln_f: (ParamId, ParamId),
    mlm_w: ParamId,
    mlm_b: ParamId,
}

fn layer_norm_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    dim: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    Ok((
        store.get_or_init(&format!("{name}.g"), 1, dim, Init::Const(1.0), rng)?,
        store.get_or_init(&format!("{name}.b"), 1, dim, Init::Zeros, rng)?,
    ))
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        num_ids: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.dim;
        let h = cfg.ffn_hidden;
        let p = |s: &str| format!("{prefix}.{s}");
        let tok_emb = store.get_or_init(&p("tok_emb"), num_ids, d, Init::Normal(cfg.embedding_std), rng)?;
        let pos_emb =
            store.get_or_init(&p("pos_emb"), cfg.max_positions, d, Init::Normal(cfg.embedding_std * 0.2), rng)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let q = |s: &str| format!("{prefix}.l{l}.{s}");
            layers.push(Layer {
                ln1: layer_norm_params(store, &q("ln1"), d, rng)?,
                wq: store.get_or_init(&q("wq"), d, d, Init::Xavier, rng)?,
                wk: store.get_or_init(&q("wk"), d, d, Init::Xavier, rng)?,
                wv: store.get_or_init(&q("wv"), d, d, Init::Xavier, rng)?,
                wo: store.get_or_init(&q("wo"), d, d, Init::Zeros, rng)?,
                bo: store.get_or_init(&q("bo"), 1, d, Init::Zeros, rng)?,
                ln2: layer_norm_params(store, &q("ln2"), d, rng)?,
                w1: store.get_or_init(&q("w1"), d, h, Init::Xavier, rng)?,
                b1: store.get_or_init(&q("b1"), 1, h, Init::Zeros, rng)?,
                w2: store.get_or_init(&q("w2"), h, d, Init::Zeros, rng)?,
                b2: store.get_or_init(&q("b2"), 1, d, Init::Zeros, rng)?,
            });
        }
        Ok(TextEncoder {
            dim: d,
            num_ids,
            max_positions: cfg.max_positions,
            tok_emb,
            pos_emb,
            layers,
            ln_f: layer_norm_params(store, &p("ln_f"), d, rng)?,
            mlm_w: store.get_or_init(&p("mlm.w"), d, num_ids, Init::Xavier, rng)?,
            mlm_b: store.get_or_init(&p("mlm.b"), 1, num_ids, Init::Zeros, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Hidden states of `[CLS] ids...`, shape `(n + 1) x D`.
    pub fn hidden(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        if ids.len() + 1 > self.max_positions {
            return Err(Error::Data(format!(
                "sequence of {} tokens exceeds the {} positions of the text encoder",
                ids.len(),
                self.max_positions - 1
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.num_ids) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", self.num_ids)));
        }
        let mut idx = Vec::with_capacity(ids.len() + 1);
        idx.push(CLS as usize);
        idx.extend(ids.iter().map(|&i| i as usize));
        let n = idx.len();
        let tok = g.param(store, self.tok_emb);
        let pos = g.param(store, self.pos_emb);
        let te = g.gather_rows(tok, idx);
        let pe = g.gather_rows(pos, (0..n).collect());
        let mut x = g.add(te, pe);
        let inv_sqrt_d = 1.0 / (self.dim as f64).sqrt();
        for l in &self.layers {
            let (lg, lb) = (g.param(store, l.ln1.0), g.param(store, l.ln1.1));
            let a = g.layer_norm(x, lg, lb);
            let (wq, wk, wv) = (g.param(store, l.wq), g.param(store, l.wk), g.param(store, l.wv));
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let v = g.matmul(a, wv);
            let scores = g.matmul_t(q, k);
            let scores = g.scale(scores, inv_sqrt_d);
            let attn = g.softmax_rows(scores);
            let ctx = g.matmul(attn, v);
            let (wo, bo) = (g.param(store, l.wo), g.param(store, l.bo));
            let o = g.matmul(ctx, wo);
            let o = g.add_row(o, bo);
            x = g.add(x, o);

            let (lg, lb) = (g.param(store, l.ln2.0), g.param(store, l.ln2.1));
            let a = g.layer_norm(x, lg, lb);
            let (w1, b1) = (g.param(store, l.w1), g.param(store, l.b1));
            let hdn = g.matmul(a, w1);
            let hdn = g.add_row(hdn, b1);
            let hdn = g.gelu(hdn);
            let (w2, b2) = (g.param(store, l.w2), g.param(store, l.b2));
            let f = g.matmul(hdn, w2);
            let f = g.add_row(f, b2);
            x = g.add(x, f);
        }
        let (lg, lb) = (g.param(store, self.ln_f.0), g.param(store, self.ln_f.1));
        Ok(g.layer_norm(x, lg, lb))
    }

    /// `(P_t, E_t)`: the `[CLS]` row (`1 x D`) and the token rows (`n x D`).
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> Result<(Var, Var)> {
        let h = self.hidden(g, store, ids)?;
        Ok(Self::split(g, h))
    }

    pub fn split(g: &mut Graph, hidden: Var) -> (Var, Var) {
        let n = g.value(hidden).rows();
        let p = g.row(hidden, 0);
        let e = g.gather_rows(hidden, (1..n).collect());
        (p, e)
    }

    /// Vocabulary logits for every row of `e_t`.
    pub fn mlm_logits(&self, g: &mut Graph, store: &ParamStore, e_t: Var) -> Var {
        let (w, b) = (g.param(store, self.mlm_w), g.param(store, self.mlm_b));
        let l = g.matmul(e_t, w);
        g.add_row(l, b)
    }
}
