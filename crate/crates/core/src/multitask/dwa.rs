//! Dynamic weight averaging and its convergence-aware extension.
//!
//! Iterations are 1-based. `λ(l)` looks at the loss ratio between
//! iterations `l-1` and `l-2`; `ε(l)` at how far each task's metric at
//! `l-1` is from its best attainable score. Until that history exists the
//! factors are all ones.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DwaState {
    k: usize,
    temperature: f64,
    best: Vec<f64>,
    losses: Vec<Vec<f64>>,
    metrics: Vec<Vec<f64>>,
}

impl DwaState {
    pub fn new(k: usize, temperature: f64, best: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("at least one task is needed".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0 (got {temperature})")));
        }
        if best.len() != k {
            return Err(Error::Config(format!("{} best-metric values for {k} tasks", best.len())));
        }
        if let Some(b) = best.iter().find(|&&b| !(b > 0.0)) {
            return Err(Error::Config(format!("best metric score must be > 0 (got {b})")));
        }
        Ok(DwaState { k, temperature, best, losses: Vec::new(), metrics: Vec::new() })
    }

    pub fn tasks(&self) -> usize {
        self.k
    }

    /// Records the mean per-task loss of the iteration just finished.
    pub fn push_losses(&mut self, l: &[f64]) -> Result<()> {
        self.check_len(l)?;
        self.losses.push(l.to_vec());
        Ok(())
    }

    /// Records per-task metrics of the iteration just finished.
    pub fn push_metrics(&mut self, m: &[f64]) -> Result<()> {
        self.check_len(m)?;
        self.metrics.push(m.to_vec());
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.k {
            return Err(Error::Config(format!("{} values for {} tasks", v.len(), self.k)));
        }
        Ok(())
    }
}

/// `K * softmax(x / T)`.
fn scaled_softmax(x: &[f64], t: f64) -> Vec<f64> {
    let k = x.len() as f64;
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| k * v / z).collect()
}

pub fn dwa_lambda(state: &DwaState, l: usize) -> Vec<f64> {
    if l <= 2 || state.losses.len() < l - 1 {
        return vec![1.0; state.k];
    }
    let (prev, prev2) = (&state.losses[l - 2], &state.losses[l - 3]);
    let r: Vec<f64> = prev.iter().zip(prev2).map(|(&a, &b)| if b == 0.0 { 1.0 } else { a / b }).collect();
    scaled_softmax(&r, state.temperature)
}

pub fn dwa_plus_epsilon(state: &DwaState, l: usize) -> Vec<f64> {
    if l <= 1 || state.metrics.len() < l - 1 {
        return vec![1.0; state.k];
    }
    let h = &state.metrics[l - 2];
    let d: Vec<f64> = h.iter().zip(&state.best).map(|(&h, &hm)| (hm - h) / hm).collect();
    scaled_softmax(&d, state.temperature)
}

pub fn combined_weights(lambda: &[f64], epsilon: &[f64]) -> Result<Vec<f64>> {
    if lambda.len() != epsilon.len() {
        return Err(Error::Config(format!("{} lambda values vs {} epsilon values", lambda.len(), epsilon.len())));
    }
    Ok(lambda.iter().zip(epsilon).map(|(a, b)| (a + b) / 2.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(losses: &[[f64; 2]], metrics: &[[f64; 2]]) -> DwaState {
        let mut s = DwaState::new(2, 2.0, vec![1.0, 1.0]).unwrap();
        for l in losses {
            s.push_losses(l).unwrap();
        }
        for m in metrics {
            s.push_metrics(m).unwrap();
        }
        s
    }

    #[test]
    fn closed_form_fixtures() {
        let e = 0.5f64.exp();
        // losses (1, 1) then (1, 0): r = (1, 0), exponents r/T = (0.5, 0)
        let s = state_with(&[[1.0, 1.0], [1.0, 0.0]], &[[1.0, 0.0]]);
        let lam = dwa_lambda(&s, 3);
        assert!((lam[0] - 2.0 * e / (e + 1.0)).abs() < 1e-12);
        assert!((lam[0] - 1.2449).abs() < 1e-4 && (lam[1] - 0.7551).abs() < 1e-4);
        let eps = dwa_plus_epsilon(&s, 2);
        assert!((eps[0] - 0.7551).abs() < 1e-4 && (eps[1] - 1.2449).abs() < 1e-4);
        let w = combined_weights(&lam, &eps).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
        // r = (2, 0): exponents (1, 0)
        let s = state_with(&[[1.0, 1.0], [2.0, 0.0]], &[]);
        let lam = dwa_lambda(&s, 3);
        let e1 = 1f64.exp();
        assert!((lam[0] - 2.0 * e1 / (e1 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_and_degenerate_cases() {
        let s = state_with(&[[1.0, 0.0], [2.0, 3.0]], &[]);
        assert_eq!(dwa_lambda(&s, 1), vec![1.0, 1.0]);
        assert_eq!(dwa_lambda(&s, 2), vec![1.0, 1.0]);
        assert_eq!(dwa_plus_epsilon(&s, 3), vec![1.0, 1.0]);
        // second task had zero loss two steps back: r = 1
        let lam = dwa_lambda(&s, 3);
        let want = scaled_softmax(&[2.0, 1.0], 2.0);
        assert_eq!(lam, want);
    }

    #[test]
    fn bad_configs() {
        assert!(DwaState::new(2, 2.0, vec![1.0, 0.0]).is_err());
        assert!(DwaState::new(2, 0.0, vec![1.0, 1.0]).is_err());
        assert!(combined_weights(&[1.0], &[1.0, 1.0]).is_err());
    }
}
