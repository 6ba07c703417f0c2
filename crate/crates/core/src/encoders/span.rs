use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Init, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Debug, Clone)]
struct Cell {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

/// Bidirectional recurrent network with `out_dim / 2` hidden units per
/// direction. A window's span vector is the forward cell's last state
/// concatenated with the backward cell's last state.
#[derive(Debug, Clone)]
pub struct SpanExtractor {
    kind: CellKind,
    hidden: usize,
    in_dim: usize,
    fwd: Cell,
    bwd: Cell,
}

impl SpanExtractor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        kind: CellKind,
        rng: &mut R,
    ) -> Result<Self> {
        if out_dim < 2 || out_dim % 2 != 0 {
            return Err(Error::Config(format!("span width must be even (got {out_dim})")));
        }
        let hidden = out_dim / 2;
        let width = kind.gates() * hidden;
        let mut cell = |dir: &str| -> Result<Cell> {
            let p = |s: &str| format!("{prefix}.{dir}.{s}");
            let fresh_bias = store.id(&p("b")).is_none();
            let b = store.get_or_init(&p("b"), 1, width, Init::Zeros, rng)?;
            if fresh_bias && kind == CellKind::Lstm {
                // forget gate starts open
                for v in &mut store.value_mut(b).data_mut()[hidden..2 * hidden] {
                    *v = 1.0;
                }
            }
            Ok(Cell {
                wx: store.get_or_init(&p("wx"), in_dim, width, Init::Xavier, rng)?,
                wh: store.get_or_init(&p("wh"), hidden, width, Init::Xavier, rng)?,
                b,
            })
        };
        let fwd = cell("fwd")?;
        let bwd = cell("bwd")?;
        Ok(SpanExtractor { kind, hidden, in_dim, fwd, bwd })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    fn step(&self, g: &mut Graph, store: &ParamStore, cell: &Cell, xw: Var, h: Option<(Var, Var)>) -> (Var, Var) {
        let hd = self.hidden;
        let pre = match h {
            Some((h, _)) => {
                let wh = g.param(store, cell.wh);
                let hw = g.matmul(h, wh);
                match self.kind {
                    CellKind::Lstm => g.add(xw, hw),
                    CellKind::Gru => hw,
                }
            }
            None => xw,
        };
        match self.kind {
            CellKind::Lstm => {
                let i = g.slice_cols(pre, 0, hd);
                let f = g.slice_cols(pre, hd, 2 * hd);
                let c_in = g.slice_cols(pre, 2 * hd, 3 * hd);
                let o = g.slice_cols(pre, 3 * hd, 4 * hd);
                let i = g.sigmoid(i);
                let c_in = g.tanh(c_in);
                let o = g.sigmoid(o);
                let mut c = g.mul(i, c_in);
                if let Some((_, c_prev)) = h {
                    let f = g.sigmoid(f);
                    let keep = g.mul(f, c_prev);
                    c = g.add(c, keep);
                }
                let tc = g.tanh(c);
                (g.mul(o, tc), c)
            }
            CellKind::Gru => {
                // r = σ(x_r + h W_r), z = σ(x_z + h W_z), n = tanh(x_n + r ⊙ h W_n),
                // h' = n + z ⊙ (h - n)
                let xr = g.slice_cols(xw, 0, hd);
                let xz = g.slice_cols(xw, hd, 2 * hd);
                let xn = g.slice_cols(xw, 2 * hd, 3 * hd);
                let (z_pre, n_pre) = match h {
                    Some(_) => {
                        let hr = g.slice_cols(pre, 0, hd);
                        let hz = g.slice_cols(pre, hd, 2 * hd);
                        let hn = g.slice_cols(pre, 2 * hd, 3 * hd);
                        let r = g.add(xr, hr);
                        let r = g.sigmoid(r);
                        let rn = g.mul(r, hn);
                        (g.add(xz, hz), g.add(xn, rn))
                    }
                    None => (xz, xn),
                };
                let z = g.sigmoid(z_pre);
                let n = g.tanh(n_pre);
                let h_new = match h {
                    Some((h_prev, _)) => {
                        let d = g.sub(h_prev, n);
                        let zd = g.mul(z, d);
                        g.add(n, zd)
                    }
                    None => {
                        let zn = g.mul(z, n);
                        g.sub(n, zn)
                    }
                };
                (h_new, h_new)
            }
        }
    }

    /// Runs one direction over equal-length windows in parallel; returns the
    /// state after every step (step order, not position order).
    fn run(&self, g: &mut Graph, store: &ParamStore, cell: &Cell, x: Var, starts: &[usize], len: usize, reverse: bool) -> Vec<Var> {
        let wx = g.param(store, cell.wx);
        let b = g.param(store, cell.b);
        let xw = g.matmul(x, wx);
        let xw = g.add_row(xw, b);
        let mut state = None;
        let mut outs = Vec::with_capacity(len);
        for t in 0..len {
            let off = if reverse { len - 1 - t } else { t };
            let rows = g.gather_rows(xw, starts.iter().map(|s| s + off).collect());
            let (h, c) = self.step(g, store, cell, rows, state);
            outs.push(h);
            state = Some((h, c));
        }
        outs
    }

    /// Span vectors, one row per window (`N x out_dim`).
    pub fn extract(&self, g: &mut Graph, store: &ParamStore, seq: Var, windows: &[(usize, usize)]) -> Result<Var> {
        let (n, d) = (g.value(seq).rows(), g.value(seq).cols());
        if d != self.in_dim {
            return Err(Error::Data(format!("span input width {d}, extractor expects {}", self.in_dim)));
        }
        if windows.is_empty() {
            return Err(Error::Data("no windows".into()));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &(a, b)) in windows.iter().enumerate() {
            if a >= b || b > n {
                return Err(Error::Data(format!("window [{a}, {b}) outside sequence of length {n}")));
            }
            groups.entry(b - a).or_default().push(k);
        }
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(windows.len());
        for (len, members) in &groups {
            let starts: Vec<usize> = members.iter().map(|&k| windows[k].0).collect();
            let f = *self.run(g, store, &self.fwd, seq, &starts, *len, false).last().expect("len >= 1");
            let bk = *self.run(g, store, &self.bwd, seq, &starts, *len, true).last().expect("len >= 1");
            parts.push(g.concat_cols(&[f, bk]));
            order.extend(members.iter().copied());
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        if order.iter().enumerate().all(|(i, &k)| i == k) {
            return Ok(stacked);
        }
        let mut inverse = vec![0; order.len()];
        for (row, &k) in order.iter().enumerate() {
            inverse[k] = row;
        }
        Ok(g.gather_rows(stacked, inverse))
    }

    /// Per-position outputs over the whole sequence (`n x out_dim`).
    pub fn sequence(&self, g: &mut Graph, store: &ParamStore, seq: Var) -> Result<Var> {
        let (n, d) = (g.value(seq).rows(), g.value(seq).cols());
        if n == 0 || d != self.in_dim {
            return Err(Error::Data(format!("bad recurrent input {n}x{d}")));
        }
        let f = self.run(g, store, &self.fwd, seq, &[0], n, false);
        let mut bk = self.run(g, store, &self.bwd, seq, &[0], n, true);
        bk.reverse();
        let f = g.concat_rows(&f);
        let bk = g.concat_rows(&bk);
        Ok(g.concat_cols(&[f, bk]))
    }
}

/// Reference single-window computation used by tests: plain loops, no tape.
#[cfg(test)]
pub(crate) fn reference_lstm_span(store: &ParamStore, prefix: &str, x: &crate::numerics::Tensor, window: (usize, usize)) -> Vec<f64> {
    use crate::numerics::graph::sigmoid;
    let dir = |name: &str, reverse: bool| -> Vec<f64> {
        let wx = store.value(store.id(&format!("{prefix}.{name}.wx")).unwrap());
        let wh = store.value(store.id(&format!("{prefix}.{name}.wh")).unwrap());
        let b = store.value(store.id(&format!("{prefix}.{name}.b")).unwrap());
        let hd = wh.rows();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut pos: Vec<usize> = (window.0..window.1).collect();
        if reverse {
            pos.reverse();
        }
        for p in pos {
            let mut pre = b.row(0).to_vec();
            for (j, v) in pre.iter_mut().enumerate() {
                for k in 0..x.cols() {
                    *v += x.get(p, k) * wx.get(k, j);
                }
                for k in 0..hd {
                    *v += h[k] * wh.get(k, j);
                }
            }
            for u in 0..hd {
                let (i, f, gc, o) = (sigmoid(pre[u]), sigmoid(pre[hd + u]), pre[2 * hd + u].tanh(), sigmoid(pre[3 * hd + u]));
                c[u] = f * c[u] + i * gc;
                h[u] = o * c[u].tanh();
            }
        }
        h
    };
    let mut out = dir("fwd", false);
    out.extend(dir("bwd", true));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, params::normal_tensor, seeded_rng, Tensor};

    fn setup(kind: CellKind) -> (ParamStore, SpanExtractor, Tensor) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(5, 0);
        let e = SpanExtractor::new(&mut store, "span", 6, 8, kind, &mut rng).unwrap();
        let x = normal_tensor(7, 6, 1.0, &mut rng);
        (store, e, x)
    }

    #[test]
    fn matches_loop_reference() {
        let (store, e, x) = setup(CellKind::Lstm);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let windows = [(0, 3), (2, 5), (4, 7), (6, 7)];
        let s = e.extract(&mut g, &store, xv, &windows).unwrap();
        assert_eq!(g.value(s).shape(), [4, 8]);
        for (r, &w) in windows.iter().enumerate() {
            let want = reference_lstm_span(&store, "span", &x, w);
            for c in 0..8 {
                assert!((g.value(s).get(r, c) - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_order_permutes_rows() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let (store, e, x) = setup(kind);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let a = e.extract(&mut g, &store, xv, &[(0, 3), (1, 2), (4, 7)]).unwrap();
            let b = e.extract(&mut g, &store, xv, &[(4, 7), (0, 3), (1, 2)]).unwrap();
            let (a, b) = (g.value(a).clone(), g.value(b).clone());
            assert_eq!(a.row(0), b.row(1));
            assert_eq!(a.row(1), b.row(2));
            assert_eq!(a.row(2), b.row(0));
        }
    }

    #[test]
    fn sequence_ends_match_full_window() {
        let (store, e, x) = setup(CellKind::Gru);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let seq = e.sequence(&mut g, &store, xv).unwrap();
        let span = e.extract(&mut g, &store, xv, &[(0, 7)]).unwrap();
        let (sq, sp) = (g.value(seq), g.value(span));
        assert_eq!(&sq.row(6)[..4], &sp.row(0)[..4]);
        assert_eq!(&sq.row(0)[4..], &sp.row(0)[4..]);
    }

    #[test]
    fn rejects_bad_windows() {
        let (store, e, x) = setup(CellKind::Lstm);
        let mut g = Graph::new();
        let xv = g.constant(x);
        assert!(e.extract(&mut g, &store, xv, &[(5, 9)]).is_err());
        assert!(e.extract(&mut g, &store, xv, &[(3, 3)]).is_err());
        assert!(e.extract(&mut g, &store, xv, &[]).is_err());
    }

    #[test]
    fn gradients_check_out() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let (store, e, x) = setup(kind);
            let report = grad_check(
                |g, s| {
                    let xv = g.constant(x.clone());
                    let sp = e.extract(g, s, xv, &[(0, 3), (2, 7), (5, 6)])?;
                    let sq = e.sequence(g, s, xv)?;
                    let a = g.sum_all(sp);
                    let m = g.mul(sq, sq);
                    let b = g.sum_all(m);
                    Ok(g.add(a, b))
                },
                &store,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{kind:?}: {report:?}");
        }
    }
}
