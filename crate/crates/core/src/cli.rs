//! Command-line front end. Every failure is reported on stderr as
//! `E:<exit code>: <message>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FrontendMeta, ModelMeta, PretrainMeta};
use crate::config::{seed_override, RunConfig};
use crate::encoders::MctapModel;
use crate::error::{Error, Result};
use crate::frontend::FrontendModel;
use crate::multitask::{evaluate_metrics, joint_finetune, TaskData, Weighting};
use crate::numerics::stream_for;
use crate::pretrain::{eval_alignment, run_pretraining};
use crate::synthcorpus::lexicon::Lexicon;
use crate::synthcorpus::{
    dataset_path, generate_all, load_pbp, load_pd, load_tn, load_utterances, write_jsonl, DatasetKind, Split,
};

#[derive(Debug, Parser)]
#[command(name = "tapfm", version, about = "Two-stage text/audio pretraining and multi-task TTS frontend")]
struct Cli {
    /// Overrides every seed in the config (also read from TAPFM_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic paired corpus and the three task datasets.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's corpus_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage-1 contrastive text/audio pretraining.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch report (JSONL); defaults to `<out>.report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        no_span: bool,
        #[arg(long)]
        no_sentence: bool,
        #[arg(long)]
        no_mlm: bool,
    },
    /// Text/audio span similarity of a pretrained checkpoint.
    EvalAlign {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "dev")]
        split: Split,
        /// Writes one pairing-matrix CSV per utterance.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Stage-2 joint finetuning of the frontend heads.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Stage-1 checkpoint; without it the encoder starts fresh.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Uniform task weights instead of DWA+.
        #[arg(long)]
        no_dwa_plus: bool,
        /// Feed the encoder output straight to the heads.
        #[arg(long)]
        no_resconformer: bool,
        /// Ignore the checkpoint's weights (its vocabulary and encoder shape still apply).
        #[arg(long)]
        fresh_encoder: bool,
    },
    /// Run the frontend on sentences, one JSON object per line.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Task metrics of a frontend checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tn: PathBuf,
        #[arg(long)]
        pbp: PathBuf,
        #[arg(long)]
        pd: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Config whose corpus_dir holds the data.
    #[arg(long, conflicts_with = "corpus")]
    config: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

/// One input line for `predict`: pre-split tokens or whitespace-separated text.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PredictInput {
    tokens: Option<Vec<String>>,
    text: Option<String>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("E:1: {e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("E:{}: {e}", e.exit_code());
            e.exit_code()
        }
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", to_json(v)).map_err(|e| Error::io("<stdout>", e))
}

fn report_path(out: &Path, report: Option<PathBuf>) -> PathBuf {
    report.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".report.jsonl");
        PathBuf::from(s)
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = seed_override(cli.seed)?;
    match cli.command {
        Command::GenCorpus { config, out } => {
            let cfg = RunConfig::load(&config, seed)?;
            let dir = out.unwrap_or(cfg.paths.corpus_dir);
            let report = generate_all(&cfg.corpus, &dir)?;
            log(format!("wrote corpus to {}", dir.display()));
            print_json(&report)
        }
        Command::Pretrain { config, out, report, no_span, no_sentence, no_mlm } => {
            let cfg = RunConfig::load(&config, seed)?;
            let mut pc = cfg.pretrain.clone();
            pc.span_on &= !no_span;
            pc.sentence_on &= !no_sentence;
            pc.mlm_on &= !no_mlm;
            let lex = Lexicon::standard(cfg.corpus.vocab_size)?;
            let dir = &cfg.paths.corpus_dir;
            let train = load_utterances(&dataset_path(dir, DatasetKind::Pretrain, Split::Train), &lex)?;
            let dev = load_utterances(&dataset_path(dir, DatasetKind::Pretrain, Split::Dev), &lex)?;
            let rows = std::cell::RefCell::new(Vec::new());
            let trained = run_pretraining(&pc, &train, &dev, lex.num_ids(), |row| {
                log(format!("pretrain {}", to_json(row)));
                rows.borrow_mut().push(row.clone());
            })?;
            let meta = PretrainMeta {
                lexicon: lex,
                encoder: pc.encoder.clone(),
                text_window: pc.text_window,
                audio_window: pc.audio_window,
            };
            Checkpoint { model: ModelMeta::Pretrain(meta), store: trained.store }.save(&out)?;
            write_jsonl(&report_path(&out, report), &rows.into_inner())
        }
        Command::EvalAlign { ckpt, corpus, split, csv_dir } => {
            let dir = match (corpus.corpus, corpus.config) {
                (Some(d), _) => d,
                (None, Some(c)) => RunConfig::load(&c, seed)?.paths.corpus_dir,
                (None, None) => return Err(Error::Usage("eval-align needs --corpus or --config".into())),
            };
            let ck = Checkpoint::load(&ckpt)?;
            let ModelMeta::Pretrain(meta) = ck.model else {
                return Err(Error::Checkpoint(format!("{} is not a pretraining checkpoint", ckpt.display())));
            };
            let mut store = ck.store;
            // every parameter is already in the store, so the rng is never drawn from
            let model = MctapModel::new(&mut store, &meta.encoder, meta.lexicon.num_ids(), &mut stream_for(0, "unused", 0))?;
            let utts = load_utterances(&dataset_path(&dir, DatasetKind::Pretrain, split), &meta.lexicon)?;
            let rep = eval_alignment(&store, &model, &utts, meta.text_window, meta.audio_window)?;
            if let Some(d) = csv_dir {
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                for ua in &rep.per_utterance {
                    let p = d.join(format!("{}.csv", ua.id));
                    std::fs::write(&p, ua.matrix.to_csv()).map_err(|e| Error::io(&p, e))?;
                }
            }
            print_json(&rep.summary())
        }
        Command::Finetune { config, ckpt, out, report, no_dwa_plus, no_resconformer, fresh_encoder } => {
            let cfg = RunConfig::load(&config, seed)?;
            let mut fc = cfg.finetune.clone();
            if no_dwa_plus {
                fc.weighting = Weighting::Uniform;
            }
            if no_resconformer {
                fc.frontend.conformer_blocks = 0;
            }
            let (lex, pretrained) = match ckpt {
                Some(p) => {
                    let ck = Checkpoint::load(&p)?;
                    let ModelMeta::Pretrain(meta) = ck.model else {
                        return Err(Error::Checkpoint(format!("{} is not a pretraining checkpoint", p.display())));
                    };
                    fc.frontend.encoder = meta.encoder;
                    (meta.lexicon, (!fresh_encoder).then_some(ck.store))
                }
                None => {
                    fc.frontend.encoder = cfg.pretrain.encoder.clone();
                    (Lexicon::standard(cfg.corpus.vocab_size)?, None)
                }
            };
            let dir = &cfg.paths.corpus_dir;
            let path = |k, s| dataset_path(dir, k, s);
            let data = TaskData {
                tn_train: load_tn(&path(DatasetKind::Tn, Split::Train))?,
                tn_dev: load_tn(&path(DatasetKind::Tn, Split::Dev))?,
                pbp_train: load_pbp(&path(DatasetKind::Pbp, Split::Train))?,
                pbp_dev: load_pbp(&path(DatasetKind::Pbp, Split::Dev))?,
                pd_train: load_pd(&path(DatasetKind::Pd, Split::Train))?,
                pd_dev: load_pd(&path(DatasetKind::Pd, Split::Dev))?,
            };
            let rows = std::cell::RefCell::new(Vec::new());
            let tuned = joint_finetune(&fc, &data, &lex, pretrained.as_ref(), |row| {
                log(format!("finetune {}", to_json(row)));
                rows.borrow_mut().push(row.clone());
            })?;
            let meta = FrontendMeta { lexicon: lex, frontend: tuned.model.config.clone() };
            Checkpoint { model: ModelMeta::Frontend(meta), store: tuned.store }.save(&out)?;
            write_jsonl(&report_path(&out, report), &rows.into_inner())
        }
        Command::Predict { ckpt, input, out } => {
            let (meta, store, model) = load_frontend(&ckpt)?;
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let mut outputs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record = |reason: String| Error::Record { path: input.clone(), line: i + 1, reason };
                let rec: PredictInput = serde_json::from_str(line).map_err(|e| record(e.to_string()))?;
                let tokens = match (rec.tokens, rec.text) {
                    (Some(t), None) => t,
                    (None, Some(s)) => s.split_whitespace().map(String::from).collect(),
                    _ => return Err(record("give exactly one of \"tokens\" or \"text\"".into())),
                };
                if tokens.is_empty() {
                    return Err(record("empty sentence".into()));
                }
                outputs.push(model.predict(&store, &meta.lexicon, &tokens).map_err(|e| record(e.to_string()))?);
            }
            write_jsonl(&out, &outputs)
        }
        Command::Eval { ckpt, tn, pbp, pd } => {
            let (meta, store, model) = load_frontend(&ckpt)?;
            let report =
                evaluate_metrics(&store, &model, &meta.lexicon, &load_tn(&tn)?, &load_pbp(&pbp)?, &load_pd(&pd)?)?;
            print_json(&report)
        }
    }
}

fn load_frontend(path: &Path) -> Result<(FrontendMeta, crate::numerics::ParamStore, FrontendModel)> {
    let ck = Checkpoint::load(path)?;
    let ModelMeta::Frontend(meta) = ck.model else {
        return Err(Error::Checkpoint(format!("{} is not a frontend checkpoint", path.display())));
    };
    let mut store = ck.store;
    let before = store.len();
    let model = FrontendModel::new(&mut store, &meta.frontend, meta.lexicon.num_ids(), 0)?;
    if store.len() != before {
        return Err(Error::Checkpoint(format!("{} lacks frontend parameters", path.display())));
    }
    Ok((meta, store, model))
}
