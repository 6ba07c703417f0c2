use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dwa::{combined_weights, dwa_lambda, dwa_plus_epsilon, DwaState};
use super::metrics::{evaluate_metrics, pd_query, MetricsReport};
use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, FrontendModel, PdQuery};
use crate::labels::BioTag;
use crate::numerics::{stream_for, AdamWConfig, Graph, ParamGrads, ParamStore, Precision, Var};
use crate::synthcorpus::lexicon::Lexicon;
use crate::synthcorpus::{PbpExample, PdExample, TnExample};

pub const TASKS: [&str; 3] = ["tn", "pbp", "pd"];

/// How the three task losses are weighted each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// All weights 1.
    Uniform,
    /// Loss-ratio factor only.
    Dwa,
    /// Mean of the loss-ratio and convergence factors.
    #[default]
    DwaPlus,
}

fn default_optimizer() -> AdamWConfig {
    AdamWConfig::with_lr(2e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Examples per task per iteration.
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: AdamWConfig,
    pub precision: Precision,
    pub weighting: Weighting,
    pub temperature: f64,
    /// Best attainable score per task (TN, PBP, PD).
    pub best_metric: [f64; 3],
    pub frontend: FrontendConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            seed: 42,
            epochs: 10,
            batch_size: 16,
            optimizer: default_optimizer(),
            precision: Precision::F64,
            weighting: Weighting::DwaPlus,
            temperature: 2.0,
            best_metric: [1.0; 3],
            frontend: FrontendConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        DwaState::new(3, self.temperature, self.best_metric.to_vec())?;
        self.frontend.validate()
    }
}

/// Train and dev splits of the three task datasets.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub tn_train: Vec<TnExample>,
    pub tn_dev: Vec<TnExample>,
    pub pbp_train: Vec<PbpExample>,
    pub pbp_dev: Vec<PbpExample>,
    pub pd_train: Vec<PdExample>,
    pub pd_dev: Vec<PdExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRow {
    pub epoch: usize,
    /// Mean training loss per task, in [`TASKS`] order.
    pub losses: [f64; 3],
    pub weights: [f64; 3],
    pub metrics: MetricsReport,
}

pub struct Finetuned {
    pub store: ParamStore,
    pub model: FrontendModel,
    pub report: Vec<FinetuneRow>,
}

#[derive(Debug, Clone)]
enum Item {
    Tn { ids: Vec<u32>, gold: Vec<usize> },
    Pbp { ids: Vec<u32>, gold: Vec<usize> },
    Pd { ids: Vec<u32>, query: PdQuery, gold: usize },
}

fn check_ids(ids: &[u32], labels: usize, cfg: &FrontendConfig) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Data("empty token sequence".into()));
    }
    if ids.len() != labels {
        return Err(Error::Data(format!("{} tokens but {labels} labels", ids.len())));
    }
    if ids.len() + 1 > cfg.encoder.max_positions {
        return Err(Error::Data(format!("{} tokens exceed the encoder's {} positions", ids.len(), cfg.encoder.max_positions - 1)));
    }
    Ok(())
}

fn prepare(model: &FrontendModel, lex: &Lexicon, data: &TaskData) -> Result<[Vec<Item>; 3]> {
    let cfg = &model.config;
    let all = BioTag::all();
    let tn = data
        .tn_train
        .iter()
        .map(|ex| {
            let ids = lex.encode(&ex.tokens);
            check_ids(&ids, ex.tags.len(), cfg)?;
            let gold = ex.tags.iter().map(|t| all.iter().position(|a| a == t).expect("closed tag set")).collect();
            Ok(Item::Tn { ids, gold })
        })
        .collect::<Result<Vec<_>>>()?;
    let pbp = data
        .pbp_train
        .iter()
        .map(|ex| {
            let ids = lex.encode(&ex.tokens);
            check_ids(&ids, ex.boundaries.len(), cfg)?;
            Ok(Item::Pbp { ids, gold: ex.boundaries.iter().map(|b| b.index()).collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    let pd = data
        .pd_train
        .iter()
        .map(|ex| {
            let ids = lex.encode(&ex.tokens);
            check_ids(&ids, ids.len(), cfg)?;
            let (query, gold) = pd_query(model, ex)?;
            Ok(Item::Pd { ids, query, gold })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok([tn, pbp, pd])
}

fn item_loss(g: &mut Graph, store: &ParamStore, model: &FrontendModel, item: &Item) -> Result<Var> {
    match item {
        Item::Tn { ids, gold } => {
            let h = model.shared(g, store, ids)?;
            model.tn_loss(g, store, h, gold)
        }
        Item::Pbp { ids, gold } => {
            let h = model.shared(g, store, ids)?;
            model.pbp_loss(g, store, h, gold)
        }
        Item::Pd { ids, query, gold } => {
            let h = model.shared(g, store, ids)?;
            model.pd_loss(g, store, h, query, *gold)
        }
    }
}

/// Weighted gradient of one round-robin iteration and the per-task mean losses.
fn iteration_gradients(
    store: &ParamStore,
    model: &FrontendModel,
    batches: &[Vec<&Item>; 3],
    weights: &[f64; 3],
) -> Result<(ParamGrads, [f64; 3])> {
    let flat: Vec<(usize, &Item)> =
        batches.iter().enumerate().flat_map(|(k, b)| b.iter().map(move |&it| (k, it))).collect();
    let results: Vec<Result<(usize, ParamGrads, f64)>> = flat
        .par_iter()
        .map(|&(k, item)| {
            let mut g = Graph::new();
            let loss = item_loss(&mut g, store, model, item)?;
            Ok((k, g.backward(loss).param_grads(store), g.scalar_value(loss)))
        })
        .collect();
    let mut grads = ParamGrads::empty(store.len());
    let mut sums = [0.0; 3];
    for r in results {
        let (k, g, l) = r?;
        let n = batches[k].len() as f64;
        grads.accumulate(&g, weights[k] / n);
        sums[k] += l / n;
    }
    Ok((grads, sums))
}

fn epoch_weights(state: &DwaState, cfg: &FinetuneConfig, epoch: usize) -> Result<[f64; 3]> {
    let w = match cfg.weighting {
        Weighting::Uniform => vec![1.0; 3],
        Weighting::Dwa => dwa_lambda(state, epoch),
        Weighting::DwaPlus => combined_weights(&dwa_lambda(state, epoch), &dwa_plus_epsilon(state, epoch))?,
    };
    Ok([w[0], w[1], w[2]])
}

/// Joint training of the three heads. With `pretrained`, its `text.`
/// parameters seed the shared encoder; otherwise the encoder starts fresh.
pub fn joint_finetune(
    cfg: &FinetuneConfig,
    data: &TaskData,
    lex: &Lexicon,
    pretrained: Option<&ParamStore>,
    mut on_epoch: impl FnMut(&FinetuneRow),
) -> Result<Finetuned> {
    cfg.validate()?;
    for (name, n) in [
        ("tn train", data.tn_train.len()),
        ("tn dev", data.tn_dev.len()),
        ("pbp train", data.pbp_train.len()),
        ("pbp dev", data.pbp_dev.len()),
        ("pd train", data.pd_train.len()),
        ("pd dev", data.pd_dev.len()),
    ] {
        if n == 0 {
            return Err(Error::Data(format!("{name} set is empty")));
        }
    }
    let mut store = pretrained.map_or_else(ParamStore::new, |p| p.retain_prefix("text."));
    let model = FrontendModel::new(&mut store, &cfg.frontend, lex.num_ids(), cfg.seed)?;
    if cfg.precision == Precision::F32 {
        store.quantize_f32();
    }
    let items = prepare(&model, lex, data)?;
    let iterations = items.iter().map(Vec::len).max().unwrap_or(0).div_ceil(cfg.batch_size);
    let mut state = DwaState::new(3, cfg.temperature, cfg.best_metric.to_vec())?;
    let mut report = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let weights = epoch_weights(&state, cfg, epoch)?;
        let orders: Vec<Vec<usize>> = (0..3)
            .map(|k| {
                let mut o: Vec<usize> = (0..items[k].len()).collect();
                o.shuffle(&mut stream_for(cfg.seed, "finetune.shuffle", (epoch * 3 + k) as u64));
                o
            })
            .collect();
        let mut sums = [0.0; 3];
        for it in 0..iterations {
            let batches: [Vec<&Item>; 3] = std::array::from_fn(|k| {
                let n = items[k].len();
                (0..cfg.batch_size.min(n)).map(|j| &items[k][orders[k][(it * cfg.batch_size + j) % n]]).collect()
            });
            let (grads, losses) = iteration_gradients(&store, &model, &batches, &weights)?;
            if losses.iter().any(|l| !l.is_finite()) || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite finetuning loss at step {}: tn {} pbp {} pd {}",
                    store.step_count() + 1,
                    losses[0],
                    losses[1],
                    losses[2]
                )));
            }
            store.adamw_step(&grads, &cfg.optimizer, cfg.precision);
            for k in 0..3 {
                sums[k] += losses[k];
            }
        }
        let losses = sums.map(|s| s / iterations as f64);
        let metrics = evaluate_metrics(&store, &model, lex, &data.tn_dev, &data.pbp_dev, &data.pd_dev)?;
        state.push_losses(&losses)?;
        state.push_metrics(&metrics.task_scores())?;
        let row = FinetuneRow { epoch, losses, weights, metrics };
        on_epoch(&row);
        report.push(row);
    }
    Ok(Finetuned { store, model, report })
}
