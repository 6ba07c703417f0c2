//! Linear-chain CRF with a transition mask.
//!
//! Forbidden transitions (and forbidden start/end labels) add [`MASK_PENALTY`]
//! in log space during training. Decoding excludes them outright, so a
//! decoded path never crosses a forbidden transition.

use crate::error::{Error, Result};
use crate::numerics::tensor::log_sum_exp;
use crate::numerics::{Graph, Tensor, Var};

pub const MASK_PENALTY: f64 = -1e4;

/// Allowed transitions between `k` labels plus allowed first and last labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrfMask {
    k: usize,
    trans: Vec<bool>,
    start: Vec<bool>,
    end: Vec<bool>,
}

impl CrfMask {
    pub fn permissive(k: usize) -> Self {
        CrfMask { k, trans: vec![true; k * k], start: vec![true; k], end: vec![true; k] }
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.trans[from * self.k + to]
    }

    pub fn start_allowed(&self, label: usize) -> bool {
        self.start[label]
    }

    pub fn end_allowed(&self, label: usize) -> bool {
        self.end[label]
    }

    pub fn forbid(&mut self, from: usize, to: usize) {
        self.trans[from * self.k + to] = false;
    }

    pub fn forbid_start(&mut self, label: usize) {
        self.start[label] = false;
    }

    pub fn forbid_end(&mut self, label: usize) {
        self.end[label] = false;
    }

    /// Whether `path` avoids every forbidden transition.
    pub fn feasible(&self, path: &[usize]) -> bool {
        match (path.first(), path.last()) {
            (Some(&a), Some(&z)) => {
                self.start[a] && self.end[z] && path.windows(2).all(|w| self.allowed(w[0], w[1]))
            }
            _ => false,
        }
    }

    fn penalty(&self, from: usize, to: usize) -> f64 {
        if self.allowed(from, to) {
            0.0
        } else {
            MASK_PENALTY
        }
    }
}

/// BIO constraints over label names `O`, `B-X`, `I-X`: forbids `O -> I-X`,
/// `B-X -> I-Y` and `I-X -> I-Y` for `X != Y`, and starting on `I-X`.
pub fn build_transition_mask<S: AsRef<str>>(labels: &[S]) -> Result<CrfMask> {
    enum Kind<'a> {
        Outside,
        Begin(&'a str),
        Inside(&'a str),
    }
    let parsed = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            if l == "O" {
                return Ok(Kind::Outside);
            }
            match l.split_once('-') {
                Some(("B", c)) if !c.is_empty() => Ok(Kind::Begin(c)),
                Some(("I", c)) if !c.is_empty() => Ok(Kind::Inside(c)),
                _ => Err(Error::Config(format!("malformed BIO label {l:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mask = CrfMask::permissive(labels.len());
    for (to, t) in parsed.iter().enumerate() {
        let Kind::Inside(class) = t else { continue };
        mask.forbid_start(to);
        for (from, f) in parsed.iter().enumerate() {
            let ok = match f {
                Kind::Outside => false,
                Kind::Begin(c) | Kind::Inside(c) => c == class,
            };
            if !ok {
                mask.forbid(from, to);
            }
        }
    }
    Ok(mask)
}

/// Emission and transition scores of one sequence.
#[derive(Debug, Clone, Copy)]
pub struct CrfScores<'a> {
    /// `n x K`
    pub emissions: &'a Tensor,
    /// `K x K`, row = previous label
    pub transitions: &'a Tensor,
    /// `1 x K`
    pub start: &'a Tensor,
    /// `1 x K`
    pub end: &'a Tensor,
    pub mask: &'a CrfMask,
}

impl CrfScores<'_> {
    fn k(&self) -> usize {
        self.mask.k
    }

    fn n(&self) -> usize {
        self.emissions.rows()
    }

    fn check(&self) -> Result<()> {
        let k = self.k();
        if self.n() == 0 {
            return Err(Error::Data("empty sequence".into()));
        }
        let ok = self.emissions.cols() == k
            && self.transitions.shape() == [k, k]
            && self.start.shape() == [1, k]
            && self.end.shape() == [1, k];
        if !ok {
            return Err(Error::Data(format!("CRF score shapes do not match {k} labels")));
        }
        if !self.has_feasible_path() {
            return Err(Error::Data("no feasible path".into()));
        }
        Ok(())
    }

    fn has_feasible_path(&self) -> bool {
        let k = self.k();
        let mut reach: Vec<bool> = (0..k).map(|y| self.mask.start[y]).collect();
        for _ in 1..self.n() {
            reach = (0..k).map(|y| (0..k).any(|p| reach[p] && self.mask.allowed(p, y))).collect();
        }
        (0..k).any(|y| reach[y] && self.mask.end[y])
    }

    fn start_score(&self, y: usize) -> f64 {
        self.start.get(0, y) + if self.mask.start[y] { 0.0 } else { MASK_PENALTY }
    }

    fn end_score(&self, y: usize) -> f64 {
        self.end.get(0, y) + if self.mask.end[y] { 0.0 } else { MASK_PENALTY }
    }

    fn trans_score(&self, a: usize, b: usize) -> f64 {
        self.transitions.get(a, b) + self.mask.penalty(a, b)
    }

    /// Score of a path with mask penalties included.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        let mut s = self.start_score(path[0]) + self.emissions.get(0, path[0]);
        for i in 1..path.len() {
            s += self.trans_score(path[i - 1], path[i]) + self.emissions.get(i, path[i]);
        }
        s + self.end_score(path[path.len() - 1])
    }

    /// Forward log-messages `alpha[i][y]`.
    fn forward(&self) -> Vec<Vec<f64>> {
        let (n, k) = (self.n(), self.k());
        let mut alpha = vec![vec![0.0; k]; n];
        for y in 0..k {
            alpha[0][y] = self.start_score(y) + self.emissions.get(0, y);
        }
        let mut buf = vec![0.0; k];
        for i in 1..n {
            for y in 0..k {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = alpha[i - 1][p] + self.trans_score(p, y);
                }
                alpha[i][y] = log_sum_exp(&buf) + self.emissions.get(i, y);
            }
        }
        alpha
    }

    /// Backward log-messages `beta[i][y]` (end score included).
    fn backward(&self) -> Vec<Vec<f64>> {
        let (n, k) = (self.n(), self.k());
        let mut beta = vec![vec![0.0; k]; n];
        for y in 0..k {
            beta[n - 1][y] = self.end_score(y);
        }
        let mut buf = vec![0.0; k];
        for i in (0..n - 1).rev() {
            for y in 0..k {
                for (q, b) in buf.iter_mut().enumerate() {
                    *b = self.trans_score(y, q) + self.emissions.get(i + 1, q) + beta[i + 1][q];
                }
                beta[i][y] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_z_from(&self, alpha: &[Vec<f64>]) -> f64 {
        let last = &alpha[self.n() - 1];
        let terms: Vec<f64> = (0..self.k()).map(|y| last[y] + self.end_score(y)).collect();
        log_sum_exp(&terms)
    }
}

pub fn crf_log_partition(s: &CrfScores<'_>) -> Result<f64> {
    s.check()?;
    Ok(s.log_z_from(&s.forward()))
}

fn check_gold(s: &CrfScores<'_>, gold: &[usize]) -> Result<()> {
    if gold.len() != s.n() || gold.iter().any(|&y| y >= s.k()) {
        return Err(Error::Data(format!("gold path of length {} for {} positions", gold.len(), s.n())));
    }
    if !s.mask.feasible(gold) {
        return Err(Error::Data("gold path crosses a masked transition".into()));
    }
    Ok(())
}

pub fn crf_nll(s: &CrfScores<'_>, gold: &[usize]) -> Result<f64> {
    s.check()?;
    check_gold(s, gold)?;
    Ok(crf_log_partition(s)? - s.path_score(gold))
}

/// Gradients of the NLL with respect to emissions, transitions, start, end.
#[derive(Debug, Clone)]
pub struct CrfGrads {
    pub emissions: Tensor,
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

/// NLL and its gradients (expected minus observed feature counts).
pub fn crf_nll_grads(s: &CrfScores<'_>, gold: &[usize]) -> Result<(f64, CrfGrads)> {
    s.check()?;
    check_gold(s, gold)?;
    let (n, k) = (s.n(), s.k());
    let alpha = s.forward();
    let beta = s.backward();
    let log_z = s.log_z_from(&alpha);
    let mut g = CrfGrads {
        emissions: Tensor::zeros(n, k),
        transitions: Tensor::zeros(k, k),
        start: Tensor::zeros(1, k),
        end: Tensor::zeros(1, k),
    };
    for i in 0..n {
        for y in 0..k {
            let p = (alpha[i][y] + beta[i][y] - log_z).exp();
            g.emissions.set(i, y, p);
            if i == 0 {
                g.start.set(0, y, p);
            }
            if i == n - 1 {
                g.end.set(0, y, p);
            }
        }
    }
    for i in 1..n {
        for a in 0..k {
            for b in 0..k {
                let p = (alpha[i - 1][a] + s.trans_score(a, b) + s.emissions.get(i, b) + beta[i][b] - log_z).exp();
                let cur = g.transitions.get(a, b);
                g.transitions.set(a, b, cur + p);
            }
        }
    }
    for i in 0..n {
        let cur = g.emissions.get(i, gold[i]);
        g.emissions.set(i, gold[i], cur - 1.0);
    }
    for i in 1..n {
        let cur = g.transitions.get(gold[i - 1], gold[i]);
        g.transitions.set(gold[i - 1], gold[i], cur - 1.0);
    }
    let cur = g.start.get(0, gold[0]);
    g.start.set(0, gold[0], cur - 1.0);
    let cur = g.end.get(0, gold[n - 1]);
    g.end.set(0, gold[n - 1], cur - 1.0);
    Ok((log_z - s.path_score(gold), g))
}

/// Highest-scoring feasible path; among equal scores the lexicographically
/// smallest label sequence.
pub fn crf_viterbi(s: &CrfScores<'_>) -> Result<Vec<usize>> {
    s.check()?;
    let (n, k) = (s.n(), s.k());
    let trans = |a: usize, b: usize| {
        if s.mask.allowed(a, b) {
            s.transitions.get(a, b)
        } else {
            f64::NEG_INFINITY
        }
    };
    // suffix[i][y]: best score of positions i.. given label y at i
    let mut suffix = vec![vec![f64::NEG_INFINITY; k]; n];
    for y in 0..k {
        if s.mask.end[y] {
            suffix[n - 1][y] = s.emissions.get(n - 1, y) + s.end.get(0, y);
        }
    }
    let next_value = |suffix: &[Vec<f64>], i: usize, y: usize, q: usize| trans(y, q) + suffix[i + 1][q];
    for i in (0..n - 1).rev() {
        for y in 0..k {
            let best = (0..k).map(|q| next_value(&suffix, i, y, q)).fold(f64::NEG_INFINITY, f64::max);
            suffix[i][y] = s.emissions.get(i, y) + best;
        }
    }
    let first_value = |y: usize| {
        if s.mask.start[y] {
            s.start.get(0, y) + suffix[0][y]
        } else {
            f64::NEG_INFINITY
        }
    };
    let pick = |vals: Vec<f64>| {
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter().position(|&v| v == best).expect("non-empty")
    };
    let mut path = Vec::with_capacity(n);
    path.push(pick((0..k).map(first_value).collect()));
    for i in 0..n - 1 {
        let y = path[i];
        path.push(pick((0..k).map(|q| next_value(&suffix, i, y, q)).collect()));
    }
    Ok(path)
}

/// CRF parameters on the tape.
#[derive(Debug, Clone, Copy)]
pub struct CrfVars {
    pub transitions: Var,
    pub start: Var,
    pub end: Var,
}

/// NLL of `gold` recorded on the tape as one fused node.
pub fn crf_nll_var(g: &mut Graph, emissions: Var, crf: CrfVars, mask: &CrfMask, gold: &[usize]) -> Result<Var> {
    let (value, grads) = {
        let scores = CrfScores {
            emissions: g.value(emissions),
            transitions: g.value(crf.transitions),
            start: g.value(crf.start),
            end: g.value(crf.end),
            mask,
        };
        crf_nll_grads(&scores, gold)?
    };
    Ok(g.fused(
        value,
        vec![
            (emissions, grads.emissions),
            (crf.transitions, grads.transitions),
            (crf.start, grads.start),
            (crf.end, grads.end),
        ],
    ))
}
