use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, Init, ParamId, ParamStore, Var};

/// Conformer-style block whose skip connection carries no gradient:
/// `Y = detach(X) + branch(X)`.
///
/// The branch is layer norm, feed-forward, single-head self-attention,
/// depthwise convolution (kernel 3), feed-forward, layer norm and a final
/// linear projection. Each inner module is residual within the branch. The
/// final projection starts at zero, so a fresh block is the identity.
#[derive(Debug, Clone)]
pub struct ResConformer {
    dim: usize,
    /// When false the skip path is an ordinary residual (reference variant).
    pub detach_skip: bool,
    ln_in: (ParamId, ParamId),
    ffn1: Ffn,
    ln_att: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln_conv: (ParamId, ParamId),
    conv: [ParamId; 3],
    conv_b: ParamId,
    ffn2: Ffn,
    ln_out: (ParamId, ParamId),
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Ffn {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, p: &str, d: usize, h: usize, rng: &mut R) -> Result<Self> {
        Ok(Ffn {
            w1: store.get_or_init(&format!("{p}.w1"), d, h, Init::Xavier, rng)?,
            b1: store.get_or_init(&format!("{p}.b1"), 1, h, Init::Zeros, rng)?,
            w2: store.get_or_init(&format!("{p}.w2"), h, d, Init::Xavier, rng)?,
            b2: store.get_or_init(&format!("{p}.b2"), 1, d, Init::Zeros, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (w1, b1, w2, b2) =
            (g.param(store, self.w1), g.param(store, self.b1), g.param(store, self.w2), g.param(store, self.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }
}

fn ln<R: Rng + ?Sized>(store: &mut ParamStore, p: &str, d: usize, rng: &mut R) -> Result<(ParamId, ParamId)> {
    Ok((
        store.get_or_init(&format!("{p}.g"), 1, d, Init::Const(1.0), rng)?,
        store.get_or_init(&format!("{p}.b"), 1, d, Init::Zeros, rng)?,
    ))
}

fn apply_ln(g: &mut Graph, store: &ParamStore, p: (ParamId, ParamId), x: Var) -> Var {
    let (gain, bias) = (g.param(store, p.0), g.param(store, p.1));
    g.layer_norm(x, gain, bias)
}

impl ResConformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        ffn_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        let d = dim;
        Ok(ResConformer {
            dim,
            detach_skip: true,
            ln_in: ln(store, &p("ln_in"), d, rng)?,
            ffn1: Ffn::new(store, &p("ffn1"), d, ffn_hidden, rng)?,
            ln_att: ln(store, &p("ln_att"), d, rng)?,
            wq: store.get_or_init(&p("att.wq"), d, d, Init::Xavier, rng)?,
            wk: store.get_or_init(&p("att.wk"), d, d, Init::Xavier, rng)?,
            wv: store.get_or_init(&p("att.wv"), d, d, Init::Xavier, rng)?,
            wo: store.get_or_init(&p("att.wo"), d, d, Init::Xavier, rng)?,
            ln_conv: ln(store, &p("ln_conv"), d, rng)?,
            conv: [
                store.get_or_init(&p("conv.k0"), 1, d, Init::Normal(0.3), rng)?,
                store.get_or_init(&p("conv.k1"), 1, d, Init::Normal(0.3), rng)?,
                store.get_or_init(&p("conv.k2"), 1, d, Init::Normal(0.3), rng)?,
            ],
            conv_b: store.get_or_init(&p("conv.b"), 1, d, Init::Zeros, rng)?,
            ffn2: Ffn::new(store, &p("ffn2"), d, ffn_hidden, rng)?,
            ln_out: ln(store, &p("ln_out"), d, rng)?,
            proj_w: store.get_or_init(&p("proj.w"), d, d, Init::Zeros, rng)?,
            proj_b: store.get_or_init(&p("proj.b"), 1, d, Init::Zeros, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The residual branch alone.
    pub fn branch(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = apply_ln(g, store, self.ln_in, x);
        let f = self.ffn1.forward(g, store, h);
        let f = g.scale(f, 0.5);
        let h = g.add(h, f);

        let a = apply_ln(g, store, self.ln_att, h);
        let (wq, wk, wv, wo) =
            (g.param(store, self.wq), g.param(store, self.wk), g.param(store, self.wv), g.param(store, self.wo));
        let q = g.matmul(a, wq);
        let k = g.matmul(a, wk);
        let v = g.matmul(a, wv);
        let s = g.matmul_t(q, k);
        let s = g.scale(s, 1.0 / (self.dim as f64).sqrt());
        let att = g.softmax_rows(s);
        let ctx = g.matmul(att, v);
        let o = g.matmul(ctx, wo);
        let h = g.add(h, o);

        let c = apply_ln(g, store, self.ln_conv, h);
        let prev = g.shift_rows(c, 1);
        let next = g.shift_rows(c, -1);
        let (k0, k1, k2) = (g.param(store, self.conv[0]), g.param(store, self.conv[1]), g.param(store, self.conv[2]));
        let t0 = g.mul_row(prev, k0);
        let t1 = g.mul_row(c, k1);
        let t2 = g.mul_row(next, k2);
        let conv = g.add(t0, t1);
        let conv = g.add(conv, t2);
        let cb = g.param(store, self.conv_b);
        let conv = g.add_row(conv, cb);
        let conv = g.gelu(conv);
        let h = g.add(h, conv);

        let f = self.ffn2.forward(g, store, h);
        let f = g.scale(f, 0.5);
        let h = g.add(h, f);
        let h = apply_ln(g, store, self.ln_out, h);
        let (pw, pb) = (g.param(store, self.proj_w), g.param(store, self.proj_b));
        let o = g.matmul(h, pw);
        g.add_row(o, pb)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let skip = if self.detach_skip { g.detach(x) } else { x };
        let b = self.branch(g, store, x);
        g.add(skip, b)
    }
}
