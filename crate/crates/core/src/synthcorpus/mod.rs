//! Synthetic paired text/"audio" corpus and the three labeled task datasets.
//!
//! Every token has a fixed acoustic template; an utterance's frames are the
//! concatenation of its tokens' templates plus a per-speaker offset and
//! Gaussian noise, so the token-to-frame alignment is known exactly and is
//! monotone by construction.

pub mod bank;
pub mod grammar;
pub mod lexicon;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bank::{build_symbol_bank, synthesize_utterance, AudioFrames, SymbolBank};
pub use grammar::{Grammar, Sentence};
pub use lexicon::Lexicon;

use crate::error::{Error, Result};
use crate::frontend::verbalize::verbalize;
use crate::labels::{bio_spans, validate_bio, BioTag, Boundary};
use crate::numerics::{stream_for, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub audio_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub speakers: u32,
    pub utterances_per_speaker: u32,
    pub max_len: usize,
    pub noise_std: f64,
    pub offset_scale: f64,
    pub dev_fraction: f64,
    pub tn_examples: usize,
    pub pbp_examples: usize,
    pub pd_examples: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 42,
            vocab_size: 40,
            audio_dim: 16,
            frames_min: 10,
            frames_max: 12,
            speakers: 3,
            utterances_per_speaker: 167,
            max_len: 24,
            noise_std: 0.1,
            offset_scale: 0.5,
            dev_fraction: 0.1,
            tn_examples: 900,
            pbp_examples: 500,
            pd_examples: 400,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers < 3 {
            return Err(Error::Config(format!(
                "sentence-level contrast needs >=2 speakers for negatives; >=3 required by default (got {})",
                self.speakers
            )));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Config(
                "each speaker needs >= 2 utterances for positive sampling".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config(format!("dev_fraction {} not in [0, 1)", self.dev_fraction)));
        }
        if self.max_len < 8 {
            return Err(Error::Config(format!("max_len {} too short for the grammar", self.max_len)));
        }
        if self.noise_std < 0.0 || self.offset_scale < 0.0 {
            return Err(Error::Config("noise_std and offset_scale must be >= 0".into()));
        }
        Lexicon::standard(self.vocab_size)?;
        Ok(())
    }

    pub fn total_utterances(&self) -> usize {
        (self.speakers * self.utterances_per_speaker) as usize
    }
}

/// Whether item `i` lands in the held-out split. Spreads `floor(n · f)` items
/// evenly over the index range.
pub fn is_dev(i: usize, fraction: f64) -> bool {
    let bucket = |k: usize| (k as f64 * fraction + 1e-9).floor() as u64;
    bucket(i + 1) > bucket(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            _ => Err(Error::Usage(format!("unknown split {s:?} (train|dev)"))),
        }
    }
}

// ---- on-disk records ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainRecord {
    pub id: String,
    pub speaker: u32,
    pub tokens: Vec<String>,
    pub frames: Vec<Vec<f32>>,
    pub alignment: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbalizedSpan {
    pub span: [usize; 2],
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TnExample {
    pub tokens: Vec<String>,
    pub tags: Vec<BioTag>,
    pub verbalized: Vec<VerbalizedSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbpExample {
    pub tokens: Vec<String>,
    pub boundaries: Vec<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdExample {
    pub tokens: Vec<String>,
    pub position: usize,
    pub candidates: Vec<String>,
    pub gold: String,
}

/// In-memory utterance with frames as a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: u32,
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub frames: Tensor,
    pub alignment: Vec<(usize, usize)>,
}

impl Utterance {
    pub fn from_record(rec: &PretrainRecord, lex: &Lexicon) -> Utterance {
        let cols = rec.frames.first().map_or(0, Vec::len);
        let data = rec.frames.iter().flatten().map(|&x| f64::from(x)).collect();
        Utterance {
            id: rec.id.clone(),
            speaker: rec.speaker,
            tokens: rec.tokens.clone(),
            token_ids: lex.encode(&rec.tokens),
            frames: Tensor::new(rec.frames.len(), cols, data),
            alignment: rec.alignment.iter().map(|a| (a[0], a[1])).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Pretrain,
    Tn,
    Pbp,
    Pd,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Pretrain => "pretrain",
            DatasetKind::Tn => "tn",
            DatasetKind::Pbp => "pbp",
            DatasetKind::Pd => "pd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Pretrain(Vec<PretrainRecord>),
    Tn(Vec<TnExample>),
    Pbp(Vec<PbpExample>),
    Pd(Vec<PdExample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Pretrain(v) => v.len(),
            Dataset::Tn(v) => v.len(),
            Dataset::Pbp(v) => v.len(),
            Dataset::Pd(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// File name of one split of one dataset inside a corpus directory.
pub fn dataset_path(dir: &Path, kind: DatasetKind, split: Split) -> PathBuf {
    dir.join(format!("{}.{}.jsonl", kind.name(), split.name()))
}

// ---- validation ----

fn check_pretrain(r: &PretrainRecord) -> std::result::Result<(), String> {
    if r.tokens.is_empty() {
        return Err("empty token list".into());
    }
    if r.alignment.len() != r.tokens.len() {
        return Err(format!("{} alignment intervals for {} tokens", r.alignment.len(), r.tokens.len()));
    }
    let mut t = 0;
    for (k, a) in r.alignment.iter().enumerate() {
        if a[0] != t || a[1] <= a[0] {
            return Err(format!("alignment interval {k} {a:?} does not continue at frame {t}"));
        }
        t = a[1];
    }
    if t != r.frames.len() {
        return Err(format!("alignment covers {t} frames, record has {}", r.frames.len()));
    }
    let width = r.frames[0].len();
    if width == 0 || r.frames.iter().any(|f| f.len() != width) {
        return Err("frames are ragged or empty".into());
    }
    if r.frames.iter().flatten().any(|x| !x.is_finite()) {
        return Err("non-finite frame value".into());
    }
    Ok(())
}

fn check_tn(r: &TnExample) -> std::result::Result<(), String> {
    if r.tokens.is_empty() || r.tags.len() != r.tokens.len() {
        return Err(format!("{} tags for {} tokens", r.tags.len(), r.tokens.len()));
    }
    validate_bio(&r.tags).map_err(|(_, m)| m)?;
    let spans = bio_spans(&r.tags);
    if spans.len() != r.verbalized.len() {
        return Err(format!("{} NSW spans but {} verbalizations", spans.len(), r.verbalized.len()));
    }
    for (s, v) in spans.iter().zip(&r.verbalized) {
        if v.span != [s.start, s.end] {
            return Err(format!("verbalization span {:?} does not match tag span [{}, {}]", v.span, s.start, s.end));
        }
    }
    Ok(())
}

fn check_pbp(r: &PbpExample) -> std::result::Result<(), String> {
    if r.tokens.is_empty() || r.boundaries.len() != r.tokens.len() {
        return Err(format!("{} boundaries for {} tokens", r.boundaries.len(), r.tokens.len()));
    }
    Ok(())
}

fn check_pd(r: &PdExample) -> std::result::Result<(), String> {
    if r.position >= r.tokens.len() {
        return Err(format!("position {} outside {} tokens", r.position, r.tokens.len()));
    }
    if r.candidates.len() < 2 {
        return Err("fewer than 2 candidates".into());
    }
    if !r.candidates.contains(&r.gold) {
        return Err(format!("gold {:?} not among candidates", r.gold));
    }
    Ok(())
}

fn read_jsonl<T, F>(path: &Path, check: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("malformed record: {e}"),
        })?;
        check(&rec).map_err(|reason| Error::Record { path: path.to_path_buf(), line: i + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and validates a JSONL dataset.
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    Ok(match kind {
        DatasetKind::Pretrain => Dataset::Pretrain(read_jsonl(path, check_pretrain)?),
        DatasetKind::Tn => Dataset::Tn(read_jsonl(path, check_tn)?),
        DatasetKind::Pbp => Dataset::Pbp(read_jsonl(path, check_pbp)?),
        DatasetKind::Pd => Dataset::Pd(read_jsonl(path, check_pd)?),
    })
}

pub fn load_tn(path: &Path) -> Result<Vec<TnExample>> {
    read_jsonl(path, check_tn)
}

pub fn load_pbp(path: &Path) -> Result<Vec<PbpExample>> {
    read_jsonl(path, check_pbp)
}

pub fn load_pd(path: &Path) -> Result<Vec<PdExample>> {
    read_jsonl(path, check_pd)
}

pub fn load_utterances(path: &Path, lex: &Lexicon) -> Result<Vec<Utterance>> {
    let recs: Vec<PretrainRecord> = read_jsonl(path, check_pretrain)?;
    Ok(recs.iter().map(|r| Utterance::from_record(r, lex)).collect())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---- generation ----

/// Renders every utterance of the pretraining corpus, in index order.
pub fn render_pretrain_corpus(config: &CorpusConfig) -> Result<Vec<PretrainRecord>> {
    config.validate()?;
    let lex = Lexicon::standard(config.vocab_size)?;
    let bank = build_symbol_bank(config, &mut stream_for(config.seed, "bank", 0))?;
    let grammar = Grammar::new(&lex);
    (0..config.total_utterances())
        .into_par_iter()
        .map(|i| {
            let speaker = i as u32 / config.utterances_per_speaker;
            let local = i as u32 % config.utterances_per_speaker;
            let sentence = grammar.sentence(&mut stream_for(config.seed, "sentence", i as u64), config.max_len);
            let ids = lex.encode(&sentence.tokens);
            let audio = synthesize_utterance(
                &ids,
                speaker,
                &bank,
                config,
                &mut stream_for(config.seed, "noise", i as u64),
            )?;
            Ok(PretrainRecord {
                id: format!("s{speaker}_u{local:03}"),
                speaker,
                tokens: sentence.tokens,
                frames: audio.frames.to_rows().into_iter().map(|r| r.into_iter().map(|x| x as f32).collect()).collect(),
                alignment: audio.alignment.iter().map(|&(a, b)| [a, b]).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub utterances: usize,
    pub train: usize,
    pub dev: usize,
    pub speakers: u32,
    pub vocab_size: usize,
    pub total_frames: usize,
    pub tn: [usize; 2],
    pub pbp: [usize; 2],
    pub pd: [usize; 2],
    pub config: CorpusConfig,
}

/// Writes `pretrain.{train,dev}.jsonl` and returns the split sizes.
pub fn generate_pretrain_corpus(config: &CorpusConfig, dir: &Path) -> Result<(usize, usize, usize)> {
    let records = render_pretrain_corpus(config)?;
    let total_frames = records.iter().map(|r| r.frames.len()).sum();
    let (dev, train): (Vec<_>, Vec<_>) =
        records.into_iter().enumerate().partition(|(i, _)| is_dev(*i, config.dev_fraction));
    let train: Vec<PretrainRecord> = train.into_iter().map(|(_, r)| r).collect();
    let dev: Vec<PretrainRecord> = dev.into_iter().map(|(_, r)| r).collect();
    for s in 0..config.speakers {
        if train.iter().filter(|r| r.speaker == s).count() < 2 {
            return Err(Error::Config(format!("speaker {s} keeps fewer than 2 training utterances")));
        }
    }
    write_jsonl(&dataset_path(dir, DatasetKind::Pretrain, Split::Train), &train)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Pretrain, Split::Dev), &dev)?;
    Ok((train.len(), dev.len(), total_frames))
}

pub struct TaskDatasets {
    pub tn: Vec<TnExample>,
    pub pbp: Vec<PbpExample>,
    pub pd: Vec<PdExample>,
}

fn tn_example(s: &Sentence) -> Result<TnExample> {
    let verbalized = s
        .nsw
        .iter()
        .map(|span| {
            let text = s.tokens[span.start..span.end].join(" ");
            let words = verbalize(&text, span.class).map_err(|e| Error::Data(e.to_string()))?;
            Ok(VerbalizedSpan { span: [span.start, span.end], words })
        })
        .collect::<Result<_>>()?;
    Ok(TnExample { tokens: s.tokens.clone(), tags: s.tags(), verbalized })
}

/// Draws all three task datasets (train and dev together, in index order).
pub fn render_task_datasets(config: &CorpusConfig) -> Result<TaskDatasets> {
    config.validate()?;
    let lex = Lexicon::standard(config.vocab_size)?;
    let grammar = Grammar::new(&lex);
    let tn = (0..config.tn_examples)
        .into_par_iter()
        .map(|i| tn_example(&grammar.sentence(&mut stream_for(config.seed, "tn", i as u64), config.max_len)))
        .collect::<Result<Vec<_>>>()?;
    let pbp = (0..config.pbp_examples)
        .into_par_iter()
        .map(|i| {
            let s = grammar.sentence(&mut stream_for(config.seed, "pbp", i as u64), config.max_len);
            PbpExample { boundaries: s.boundaries(), tokens: s.tokens }
        })
        .collect();
    let mut pd_grammar = Grammar::new(&lex);
    pd_grammar.homograph_rate = 0.35;
    let pd = (0..config.pd_examples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_for(config.seed, "pd", i as u64);
            let s = loop {
                let s = pd_grammar.sentence(&mut rng, config.max_len);
                if !s.homographs.is_empty() {
                    break s;
                }
            };
            let (position, reading) = s.homographs[rng.random_range(0..s.homographs.len())];
            let readings = lexicon::homograph_readings(&s.tokens[position]).expect("homograph in table");
            PdExample {
                tokens: s.tokens,
                position,
                candidates: readings.iter().map(|r| r.to_string()).collect(),
                gold: readings[reading].to_string(),
            }
        })
        .collect();
    Ok(TaskDatasets { tn, pbp, pd })
}

fn split<T: Clone>(items: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, x) in items.iter().enumerate() {
        if is_dev(i, fraction) {
            dev.push(x.clone());
        } else {
            train.push(x.clone());
        }
    }
    (train, dev)
}

/// Writes `{tn,pbp,pd}.{train,dev}.jsonl`; returns `[train, dev]` sizes.
pub fn generate_task_datasets(config: &CorpusConfig, dir: &Path) -> Result<[[usize; 2]; 3]> {
    let data = render_task_datasets(config)?;
    let f = config.dev_fraction;
    let (tn_t, tn_d) = split(&data.tn, f);
    let (pbp_t, pbp_d) = split(&data.pbp, f);
    let (pd_t, pd_d) = split(&data.pd, f);
    write_jsonl(&dataset_path(dir, DatasetKind::Tn, Split::Train), &tn_t)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Tn, Split::Dev), &tn_d)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Pbp, Split::Train), &pbp_t)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Pbp, Split::Dev), &pbp_d)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Pd, Split::Train), &pd_t)?;
    write_jsonl(&dataset_path(dir, DatasetKind::Pd, Split::Dev), &pd_d)?;
    Ok([[tn_t.len(), tn_d.len()], [pbp_t.len(), pbp_d.len()], [pd_t.len(), pd_d.len()]])
}

/// Generates the whole corpus directory, including `corpus_report.json`.
pub fn generate_all(config: &CorpusConfig, dir: &Path) -> Result<CorpusReport> {
    let (train, dev, total_frames) = generate_pretrain_corpus(config, dir)?;
    let [tn, pbp, pd] = generate_task_datasets(config, dir)?;
    let report = CorpusReport {
        utterances: train + dev,
        train,
        dev,
        speakers: config.speakers,
        vocab_size: config.vocab_size,
        total_frames,
        tn,
        pbp,
        pd,
        config: config.clone(),
    };
    let path = dir.join("corpus_report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            utterances_per_speaker: 10,
            tn_examples: 40,
            pbp_examples: 20,
            pd_examples: 20,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn dev_split_counts() {
        let dev = (0..501).filter(|&i| is_dev(i, 0.1)).count();
        assert_eq!(dev, 50);
        assert_eq!((0..10).filter(|&i| is_dev(i, 0.0)).count(), 0);
    }

    #[test]
    fn preconditions() {
        let e = CorpusConfig { speakers: 1, ..small() }.validate().unwrap_err();
        assert!(e.to_string().contains("sentence-level contrast needs"));
        assert!(CorpusConfig { utterances_per_speaker: 1, ..small() }.validate().is_err());
    }

    #[test]
    fn alignment_covers_every_frame() {
        for r in render_pretrain_corpus(&small()).unwrap() {
            assert!(check_pretrain(&r).is_ok());
        }
    }

    #[test]
    fn task_rules_hold() {
        let d = render_task_datasets(&small()).unwrap();
        for ex in &d.pbp {
            assert_eq!(*ex.boundaries.last().unwrap(), Boundary::IPH);
        }
        for ex in &d.pd {
            assert!(check_pd(ex).is_ok());
            let next = &ex.tokens[ex.position + 1];
            let readings = lexicon::homograph_readings(&ex.tokens[ex.position]).unwrap();
            let expect = if next == "the" || next == "a" { readings[0] } else { readings[1] };
            assert_eq!(ex.gold, expect);
        }
        for ex in &d.tn {
            assert!(check_tn(ex).is_ok());
        }
    }

    #[test]
    fn tn_example_verbalizes_cardinals() {
        let lex = Lexicon::standard(40).unwrap();
        let g = Grammar::new(&lex);
        let mut rng = stream_for(1, "t", 0);
        let s = loop {
            let s = g.sentence(&mut rng, 24);
            if s.nsw.iter().any(|n| n.class == crate::labels::NswClass::Cardinal) {
                break s;
            }
        };
        let ex = tn_example(&s).unwrap();
        let span = s.nsw.iter().find(|n| n.class == crate::labels::NswClass::Cardinal).unwrap();
        assert_eq!(ex.tags[span.start], BioTag::B(crate::labels::NswClass::Cardinal));
        let v = ex.verbalized.iter().find(|v| v.span[0] == span.start).unwrap();
        let n: u64 = s.tokens[span.start].parse().unwrap();
        assert_eq!(v.words.join(" "), crate::frontend::verbalize::number_words(n).join(" "));
    }
}
