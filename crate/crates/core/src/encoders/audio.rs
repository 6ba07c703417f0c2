use rand::Rng;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Frame projection (two-layer perceptron `d_a -> D`) and attention pooling
/// `score_i = v · tanh(W E_a[i] + b)` for the utterance vector `Q_a`.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    audio_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pool_w: ParamId,
    pool_b: ParamId,
    pool_v: ParamId,
}

impl AudioEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        let (da, h, d) = (cfg.audio_dim, cfg.audio_hidden, cfg.dim);
        Ok(AudioEncoder {
            audio_dim: da,
            w1: store.get_or_init(&p("fc1.w"), da, h, Init::Xavier, rng)?,
            b1: store.get_or_init(&p("fc1.b"), 1, h, Init::Zeros, rng)?,
            w2: store.get_or_init(&p("fc2.w"), h, d, Init::Xavier, rng)?,
            b2: store.get_or_init(&p("fc2.b"), 1, d, Init::Zeros, rng)?,
            pool_w: store.get_or_init(&p("pool.w"), d, d, Init::Xavier, rng)?,
            pool_b: store.get_or_init(&p("pool.b"), 1, d, Init::Zeros, rng)?,
            pool_v: store.get_or_init(&p("pool.v"), d, 1, Init::Xavier, rng)?,
        })
    }

    /// `E_a`, one row per frame.
    pub fn frames(&self, g: &mut Graph, store: &ParamStore, frames: &Tensor) -> Result<Var> {
        if frames.rows() == 0 {
            return Err(Error::Data("empty frame sequence".into()));
        }
        if frames.cols() != self.audio_dim {
            return Err(Error::Data(format!(
                "frames have {} features, audio encoder expects {}",
                frames.cols(),
                self.audio_dim
            )));
        }
        let x = g.constant(frames.clone());
        let (w1, b1) = (g.param(store, self.w1), g.param(store, self.b1));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.tanh(h);
        let (w2, b2) = (g.param(store, self.w2), g.param(store, self.b2));
        let e = g.matmul(h, w2);
        Ok(g.add_row(e, b2))
    }

    /// Attention weights over the rows of `e_a`, as a `1 x T` row.
    pub fn pool_weights(&self, g: &mut Graph, store: &ParamStore, e_a: Var) -> Var {
        let (w, b, v) = (g.param(store, self.pool_w), g.param(store, self.pool_b), g.param(store, self.pool_v));
        let u = g.matmul(e_a, w);
        let u = g.add_row(u, b);
        let u = g.tanh(u);
        let scores = g.matmul(u, v);
        let scores = g.transpose(scores);
        g.softmax_rows(scores)
    }

    /// `(Q_a, E_a)` with `Q_a` the attention-pooled `1 x D` row.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, frames: &Tensor) -> Result<(Var, Var)> {
        let e = self.frames(g, store, frames)?;
        let w = self.pool_weights(g, store, e);
        Ok((g.matmul(w, e), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{params::normal_tensor, seeded_rng};

    fn enc() -> (ParamStore, AudioEncoder) {
        let mut store = ParamStore::new();
        let e = AudioEncoder::new(&mut store, "audio", &EncoderConfig::default(), &mut seeded_rng(2, 0)).unwrap();
        (store, e)
    }

    #[test]
    fn shapes_and_weights() {
        let (store, e) = enc();
        let mut g = Graph::new();
        let x = normal_tensor(20, 16, 1.0, &mut seeded_rng(3, 0));
        let (q, ea) = e.encode(&mut g, &store, &x).unwrap();
        assert_eq!(g.value(q).shape(), [1, 32]);
        assert_eq!(g.value(ea).shape(), [20, 32]);
        let w = e.pool_weights(&mut g, &store, ea);
        let wv = g.value(w);
        assert!((wv.sum() - 1.0).abs() < 1e-12);
        assert!(wv.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn identical_frames_pool_to_their_projection() {
        let (store, e) = enc();
        let mut g = Graph::new();
        let row = normal_tensor(1, 16, 1.0, &mut seeded_rng(4, 0));
        let x = Tensor::from_rows(&vec![row.row(0).to_vec(); 6]);
        let (q, ea) = e.encode(&mut g, &store, &x).unwrap();
        for c in 0..32 {
            assert!((g.value(q).get(0, c) - g.value(ea).get(0, c)).abs() < 1e-12);
        }
        let (q1, ea1) = e.encode(&mut g, &store, &row).unwrap();
        assert_eq!(g.value(q1), g.value(ea1));
    }

    #[test]
    fn rejects_empty_and_wrong_width() {
        let (store, e) = enc();
        let mut g = Graph::new();
        assert!(e.encode(&mut g, &store, &Tensor::zeros(0, 16)).is_err());
        assert!(e.encode(&mut g, &store, &Tensor::zeros(3, 5)).is_err());
    }
}
