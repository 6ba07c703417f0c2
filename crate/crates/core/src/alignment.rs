//! Span-level automatic alignment: pairing matrix, argmax candidates, the
//! longest-increasing-subsequence filter, label generation and the
//! bidirectional span contrastive loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::MIN_NORM;
use crate::numerics::{Graph, Tensor, Var};

/// Label value excluded from the loss.
pub const IGNORE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Each text span picks an audio span (rows of the pairing matrix).
    T2A,
    /// Each audio span picks a text span (columns).
    A2T,
}

/// Cosines between every text span (rows) and audio span (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct PairingMatrix {
    pub logits: Tensor,
}

impl PairingMatrix {
    pub fn text_spans(&self) -> usize {
        self.logits.rows()
    }

    pub fn audio_spans(&self) -> usize {
        self.logits.cols()
    }

    /// CSV with one line per text span.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.logits.rows() {
            let line: Vec<String> = self.logits.row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_rows(g: &Graph, v: Var, what: &str) -> Result<()> {
    let t = g.value(v);
    if t.rows() == 0 {
        return Err(Error::Data(format!("no {what} spans")));
    }
    if g.min_row_norm(v) < MIN_NORM {
        return Err(Error::Numeric(format!("degenerate span vector among {what} spans")));
    }
    Ok(())
}

/// `rownorm(S_t) · rownorm(S_a)ᵀ` on the tape.
pub fn pairing_logits(g: &mut Graph, s_t: Var, s_a: Var) -> Result<Var> {
    check_rows(g, s_t, "text")?;
    check_rows(g, s_a, "audio")?;
    let a = g.l2_normalize_rows(s_t);
    let b = g.l2_normalize_rows(s_a);
    Ok(g.matmul_t(a, b))
}

pub fn pairing_matrix(s_t: &Tensor, s_a: &Tensor) -> Result<PairingMatrix> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(s_t.clone()), g.constant(s_a.clone()));
    let l = pairing_logits(&mut g, a, b)?;
    Ok(PairingMatrix { logits: g.value(l).clone() })
}

/// Per-row (T2A) or per-column (A2T) argmax, ties to the lowest index.
pub fn argmax_candidates(logits: &Tensor, direction: Direction) -> Vec<usize> {
    match direction {
        Direction::T2A => (0..logits.rows()).map(|r| logits.row_argmax(r)).collect(),
        Direction::A2T => argmax_candidates(&logits.transpose(), Direction::T2A),
    }
}

/// A longest strictly increasing subsequence as `(indexes, values)`.
///
/// Among all longest ones the value sequence is lexicographically smallest,
/// and among those the index sequence is.
pub fn find_lis(candidates: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = candidates.len();
    // best[j]: length of the longest strictly increasing run starting at j
    let mut best = vec![1usize; n];
    for j in (0..n).rev() {
        for k in j + 1..n {
            if candidates[k] > candidates[j] && best[k] + 1 > best[j] {
                best[j] = best[k] + 1;
            }
        }
    }
    let mut remaining = best.iter().copied().max().unwrap_or(0);
    let (mut indexes, mut values) = (Vec::with_capacity(remaining), Vec::with_capacity(remaining));
    let mut from = 0;
    while remaining > 0 {
        let prev = values.last().copied();
        let pick = (from..n)
            .filter(|&j| best[j] == remaining && prev.is_none_or(|p| candidates[j] > p))
            .min_by_key(|&j| (candidates[j], j))
            .expect("a continuation exists while remaining > 0");
        indexes.push(pick);
        values.push(candidates[pick]);
        from = pick + 1;
        remaining -= 1;
    }
    (indexes, values)
}

/// Round-half-up of `(min(last + 1, v_max) + i · v_max / L) / 2`, exactly.
fn interpolate(last: i64, i: usize, len: usize, v_max: usize) -> i64 {
    let a = (last + 1).min(v_max as i64);
    let (l, i, v) = (len as i64, i as i64, v_max as i64);
    (a * l + i * v + l).div_euclid(2 * l)
}

/// Alignment labels from argmax candidates.
///
/// Positions on the LIS keep their candidate; others get an interpolated
/// value or [`IGNORE`]. Position 0 is never visited and stays 0; the last
/// position is forced to `v_max`.
pub fn generate_span_labels(candidates: &[usize], v_max: usize) -> Result<Vec<i64>> {
    if candidates.is_empty() {
        return Err(Error::Data("empty candidate list".into()));
    }
    if let Some(&c) = candidates.iter().find(|&&c| c > v_max) {
        return Err(Error::Data(format!("candidate {c} exceeds v_max {v_max}")));
    }
    let len = candidates.len();
    let mut labels = vec![0i64; len];
    if v_max == 0 {
        return Ok(labels);
    }
    let (indexes, values) = find_lis(candidates);
    let mut last = 0i64;
    for i in 1..len {
        if indexes.binary_search(&i).is_ok() {
            labels[i] = candidates[i] as i64;
        } else {
            let temp = interpolate(last, i, len, v_max);
            let on_lis = values.binary_search(&(temp as usize)).is_ok();
            labels[i] = if on_lis || temp < last { IGNORE } else { temp };
        }
        last = last.max(labels[i]);
    }
    labels[len - 1] = v_max as i64;
    Ok(labels)
}

/// Labels for both directions of one pairing matrix.
pub fn labels_for(logits: &Tensor) -> Result<(Vec<i64>, Vec<i64>)> {
    let (n, m) = (logits.rows(), logits.cols());
    let t2a = generate_span_labels(&argmax_candidates(logits, Direction::T2A), m - 1)?;
    let a2t = generate_span_labels(&argmax_candidates(logits, Direction::A2T), n - 1)?;
    Ok((t2a, a2t))
}

fn targets(labels: &[i64]) -> Vec<Option<usize>> {
    labels.iter().map(|&l| (l != IGNORE).then_some(l as usize)).collect()
}

/// Result of [`span_contrastive_loss`].
#[derive(Debug, Clone)]
pub struct SpanLoss {
    pub loss: Var,
    pub t2a: f64,
    pub a2t: f64,
    pub labels_t2a: Vec<i64>,
    pub labels_a2t: Vec<i64>,
    /// Directions in which every label was ignored (they contribute 0).
    pub empty_directions: Vec<Direction>,
}

/// `(CE_T2A + CE_A2T) / 2` over `scale · logits`, labels from the current
/// logits via [`generate_span_labels`].
pub fn span_contrastive_loss(g: &mut Graph, logits: Var, scale: f64) -> Result<SpanLoss> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("logit scale must be > 0 (got {scale})")));
    }
    let (labels_t2a, labels_a2t) = labels_for(g.value(logits))?;
    let scaled = g.scale(logits, scale);
    let t2a = g.cross_entropy(scaled, &targets(&labels_t2a));
    let transposed = g.transpose(scaled);
    let a2t = g.cross_entropy(transposed, &targets(&labels_a2t));
    let mut empty_directions = Vec::new();
    if t2a.is_none() {
        empty_directions.push(Direction::T2A);
    }
    if a2t.is_none() {
        empty_directions.push(Direction::A2T);
    }
    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.scalar_value(v));
    let (t2a_v, a2t_v) = (value(g, t2a), value(g, a2t));
    let sum = match (t2a, a2t) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => g.constant(Tensor::scalar(0.0)),
    };
    let loss = g.scale(sum, 0.5);
    Ok(SpanLoss { loss, t2a: t2a_v, a2t: a2t_v, labels_t2a, labels_a2t, empty_directions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, params::normal_tensor, seeded_rng, Init, ParamStore};

    #[test]
    fn lis_examples() {
        assert_eq!(find_lis(&[0, 1, 2]), (vec![0, 1, 2], vec![0, 1, 2]));
        assert_eq!(find_lis(&[2, 2, 2]), (vec![0], vec![2]));
        assert_eq!(find_lis(&[3, 1, 2, 5, 4]), (vec![1, 2, 4], vec![1, 2, 4]));
        assert_eq!(find_lis(&[1, 0, 1, 2]), (vec![1, 2, 3], vec![0, 1, 2]));
    }

    #[test]
    fn label_examples() {
        assert_eq!(generate_span_labels(&[0, 1, 2], 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(generate_span_labels(&[0, 3, 1, 2, 5], 5).unwrap(), vec![0, -1, 1, 2, 5]);
        assert_eq!(generate_span_labels(&[0, 0, 0], 0).unwrap(), vec![0, 0, 0]);
        assert_eq!(generate_span_labels(&[3], 3).unwrap(), vec![3]);
        assert!(generate_span_labels(&[4], 3).is_err());
        assert!(generate_span_labels(&[], 3).is_err());
    }

    #[test]
    fn interpolation_rounds_half_up() {
        // (1 + 1/2)/2 = 0.75 -> 1; (1 + 2·3/4)/2 = 1.25 -> 1; (2 + 3)/2 = 2.5 -> 3
        assert_eq!(interpolate(0, 1, 2, 1), 1);
        assert_eq!(interpolate(0, 2, 4, 3), 1);
        assert_eq!(interpolate(1, 3, 3, 3), 3);
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
        assert_eq!(argmax_candidates(&m, Direction::T2A), vec![0, 1]);
        let tie = Tensor::from_rows(&[vec![0.5, 0.5]]);
        assert_eq!(argmax_candidates(&tie, Direction::T2A), vec![0]);
        assert_eq!(argmax_candidates(&tie, Direction::A2T), vec![0, 0]);
    }

    #[test]
    fn pairing_matrix_basics() {
        let s = normal_tensor(4, 8, 1.0, &mut seeded_rng(1, 0));
        let pm = pairing_matrix(&s, &s).unwrap();
        for i in 0..4 {
            assert!((pm.logits.get(i, i) - 1.0).abs() < 1e-12);
        }
        assert!(pm.logits.data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let e = pairing_matrix(&Tensor::zeros(1, 8), &s).unwrap_err();
        assert!(e.to_string().contains("degenerate span vector"));
        assert_eq!(pm.to_csv().lines().count(), 4);
    }

    #[test]
    fn single_span_loss_is_zero() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let a = g.constant(Tensor::row_vector(vec![0.5, -1.0]));
        let l = pairing_logits(&mut g, s, a).unwrap();
        let out = span_contrastive_loss(&mut g, l, 10.0).unwrap();
        assert_eq!(g.scalar_value(out.loss), 0.0);
        assert_eq!((out.labels_t2a, out.labels_a2t), (vec![0], vec![0]));
    }

    #[test]
    fn loss_matches_direct_formula() {
        let logits = normal_tensor(4, 6, 0.4, &mut seeded_rng(9, 0));
        let mut g = Graph::new();
        let l = g.constant(logits.clone());
        let out = span_contrastive_loss(&mut g, l, 10.0).unwrap();
        let ce = |rows: &Tensor, labels: &[i64]| {
            let mut total = 0.0;
            let mut count = 0.0;
            for (r, &lab) in labels.iter().enumerate() {
                if lab < 0 {
                    continue;
                }
                let xs: Vec<f64> = rows.row(r).iter().map(|x| 10.0 * x).collect();
                let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
                total += m + z.ln() - xs[lab as usize];
                count += 1.0;
            }
            total / count
        };
        let t2a = ce(&logits, &out.labels_t2a);
        let a2t = ce(&logits.transpose(), &out.labels_a2t);
        assert!((out.t2a - t2a).abs() < 1e-12);
        assert!((out.a2t - a2t).abs() < 1e-12);
        assert!((g.scalar_value(out.loss) - (t2a + a2t) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_checks() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(4, 0);
        let st = store.get_or_init("st", 5, 6, Init::Normal(1.0), &mut rng).unwrap();
        let sa = store.get_or_init("sa", 4, 6, Init::Normal(1.0), &mut rng).unwrap();
        let report = grad_check(
            |g, s| {
                let (a, b) = (g.param(s, st), g.param(s, sa));
                let l = pairing_logits(g, a, b)?;
                Ok(span_contrastive_loss(g, l, 10.0)?.loss)
            },
            &store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
