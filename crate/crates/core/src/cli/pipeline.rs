//! The staged experiment runner: every stage records the hashes of what it
//! read and wrote in `manifest.json`, so an interrupted or partly deleted
//! experiment can be resumed by re-running only the stages whose records no
//! longer verify.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{RunConfig, VocabMode};
use crate::bpe::{encode_corpus, joint_word_counts, learn_merges, MergeTable, PieceVocab, Segmenter};
use crate::corpus::{bootstrap_corpus, count_words, load_lines, load_parallel, ParallelCorpus, SentencePair, Side, Vocabulary};
use crate::decode::{Ensemble, Translator};
use crate::eval::{average_runs, bleu, BleuScore, RunAverage};
use crate::lexicon::{
    align_corpus, extract_corpus_phrases, extract_dictionary, learn_model1, reversed, Dictionary, TranslationTable,
    DEFAULT_MAX_PHRASE_LEN,
};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, LexiconPrior, Model, ModelConfig};
use crate::train::{train_run, EncodedPair};
use crate::util::{file_sha256, sha256_hex};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("experiment config differs from its manifest:\n{diff}")]
    ConfigChanged { diff: String },
    #[error("stage {stage}: {source:#}")]
    Stage {
        stage: String,
        #[source]
        source: anyhow::Error,
    },
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigChanged { .. } => 2,
            Self::Stage { .. } => 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config and of every upstream output this stage read.
    pub inputs: String,
    /// Relative path to sha256 of each file written.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub deskmt_version: String,
    pub config_hash: String,
    /// Canonical config text, kept for diffing on resume.
    pub config: String,
    pub data: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    fn new(config_text: &str) -> Self {
        Self {
            version: MANIFEST_VERSION,
            deskmt_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config_text.as_bytes()),
            config: config_text.to_string(),
            data: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

/// What a run or resume did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    /// sha256 of the final manifest file.
    pub manifest_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Stage {
    Lexicon,
    Bootstrap,
    Vocab,
    Bias,
    Train(u64),
    Translate(u64),
    Ensemble,
    Evaluate,
}

impl Stage {
    fn name(&self) -> String {
        match self {
            Self::Lexicon => "lexicon".into(),
            Self::Bootstrap => "bootstrap".into(),
            Self::Vocab => "vocab".into(),
            Self::Bias => "bias".into(),
            Self::Train(s) => format!("train.seed{s}"),
            Self::Translate(s) => format!("translate.seed{s}"),
            Self::Ensemble => "translate.ensemble".into(),
            Self::Evaluate => "evaluate".into(),
        }
    }
}

fn plan(c: &RunConfig) -> Vec<Stage> {
    let mut p = Vec::new();
    if c.needs_lexicon() {
        p.push(Stage::Lexicon);
    }
    if c.extensions.bootstrap.is_some() {
        p.push(Stage::Bootstrap);
    }
    p.push(Stage::Vocab);
    if c.extensions.lexicon_bias {
        p.push(Stage::Bias);
    }
    p.extend(c.seeds.iter().map(|&s| Stage::Train(s)));
    p.extend(c.seeds.iter().map(|&s| Stage::Translate(s)));
    if c.ensemble_seeds().len() > 1 {
        p.push(Stage::Ensemble);
    }
    p.push(Stage::Evaluate);
    p
}

/// Stages whose outputs `stage` reads.
fn upstream(c: &RunConfig, stage: &Stage) -> Vec<Stage> {
    let mut up = Vec::new();
    let lexicon = c.needs_lexicon();
    let boot = c.extensions.bootstrap.is_some();
    match stage {
        Stage::Lexicon => {}
        Stage::Bootstrap => up.push(Stage::Lexicon),
        Stage::Vocab | Stage::Bias => {
            if boot {
                up.push(Stage::Bootstrap);
            }
            if matches!(stage, Stage::Bias) {
                up.push(Stage::Vocab);
            }
        }
        Stage::Train(_) => {
            if boot {
                up.push(Stage::Bootstrap);
            }
            up.push(Stage::Vocab);
            if c.extensions.lexicon_bias {
                up.push(Stage::Bias);
            }
        }
        Stage::Translate(s) => {
            up.push(Stage::Vocab);
            if lexicon && c.decode.unk_replace {
                up.push(Stage::Lexicon);
            }
            up.push(Stage::Train(*s));
        }
        Stage::Ensemble => {
            up.push(Stage::Vocab);
            if lexicon && c.decode.unk_replace {
                up.push(Stage::Lexicon);
            }
            up.extend(c.ensemble_seeds().into_iter().map(Stage::Train));
        }
        Stage::Evaluate => {
            up.extend(c.seeds.iter().map(|&s| Stage::Translate(s)));
            if c.ensemble_seeds().len() > 1 {
                up.push(Stage::Ensemble);
            }
        }
    }
    up
}

pub fn model_path(seed: u64) -> String {
    format!("models/seed{seed}.nmtb")
}

pub fn translation_path(seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("out/test.seed{s}.txt"),
        None => "out/test.ensemble.txt".into(),
    }
}

pub const REPORT_TSV: &str = "reports/eval.tsv";
pub const REPORT_JSON: &str = "reports/eval.json";

/// BLEU of every single-seed system, their average and the ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub systems: Vec<(String, BleuScore)>,
    pub average: RunAverage,
    pub ensemble: Option<BleuScore>,
}

impl ExperimentReport {
    pub const ENSEMBLE_LABEL: &'static str = "+Ensemble";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tbleu\n");
        for (label, b) in &self.systems {
            let _ = writeln!(out, "{label}\t{:.2}", b.score);
        }
        let _ = writeln!(out, "average\t{:.2}", self.average.mean);
        if let Some(e) = &self.ensemble {
            let _ = writeln!(out, "{}\t{:.2}", Self::ENSEMBLE_LABEL, e.score);
        }
        out
    }
}

/// Writes `config.toml` into `dir` and runs every stage not already
/// complete there.
pub fn run_experiment(config: &RunConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<RunSummary, PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    let text = config.to_toml();
    if dir.join(MANIFEST).exists() {
        let m = Manifest::load(dir)?;
        if m.config != text {
            return Err(PipelineError::ConfigChanged { diff: line_diff(&m.config, &text) });
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join(CONFIG), &text).map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
    Runner::new(config.clone(), dir, text).execute(log)
}

/// Re-runs the stages of an existing experiment whose records do not verify.
/// Refuses when `config.toml` no longer matches the manifest.
pub fn resume(dir: &Path, log: &mut dyn FnMut(&str)) -> Result<RunSummary, PipelineError> {
    let manifest = Manifest::load(dir)?;
    let config = RunConfig::load(&dir.join(CONFIG)).map_err(PipelineError::Config)?;
    let text = config.to_toml();
    if manifest.config != text {
        return Err(PipelineError::ConfigChanged {
            diff: line_diff(&manifest.config, &text),
        });
    }
    config.validate().map_err(PipelineError::Config)?;
    Runner::new(config, dir, text).execute(log)
}

/// `-` lines recorded in the manifest, `+` lines in the current config.
pub fn line_diff(old: &str, new: &str) -> String {
    let mut out = String::new();
    let old_lines: Vec<&str> = old.lines().collect();
    let new_lines: Vec<&str> = new.lines().collect();
    for l in &old_lines {
        if !new_lines.contains(l) {
            let _ = writeln!(out, "- {l}");
        }
    }
    for l in &new_lines {
        if !old_lines.contains(l) {
            let _ = writeln!(out, "+ {l}");
        }
    }
    out
}

/// Model-side tokens and vocabularies shared by training and translation.
struct Vocabs {
    source: Vocabulary,
    target: Vocabulary,
    merges: Option<MergeTable>,
    pieces: Option<PieceVocab>,
    map_singletons: bool,
}

impl Vocabs {
    fn tokens(&self, sentences: &[Vec<String>]) -> Vec<Vec<String>> {
        match (&self.merges, &self.pieces) {
            (Some(m), Some(p)) => encode_corpus(sentences, m, p, self.map_singletons),
            _ => sentences.to_vec(),
        }
    }

    fn encode(&self, corpus: &ParallelCorpus) -> Vec<EncodedPair> {
        let src: Vec<Vec<String>> = corpus.side(Side::Source).map(<[String]>::to_vec).collect();
        let tgt: Vec<Vec<String>> = corpus.side(Side::Target).map(<[String]>::to_vec).collect();
        self.tokens(&src)
            .iter()
            .zip(self.tokens(&tgt))
            .map(|(s, t)| (self.source.encode(s), self.target.encode(&t)))
            .collect()
    }

    fn token_corpus(&self, corpus: &ParallelCorpus) -> ParallelCorpus {
        let src: Vec<Vec<String>> = corpus.side(Side::Source).map(<[String]>::to_vec).collect();
        let tgt: Vec<Vec<String>> = corpus.side(Side::Target).map(<[String]>::to_vec).collect();
        ParallelCorpus::new(
            self.tokens(&src)
                .into_iter()
                .zip(self.tokens(&tgt))
                .map(|(source, target)| SentencePair { source, target })
                .collect(),
        )
    }
}

struct Runner<'a> {
    config: RunConfig,
    dir: &'a Path,
    manifest: Manifest,
}

impl<'a> Runner<'a> {
    fn new(config: RunConfig, dir: &'a Path, text: String) -> Self {
        let fresh = Manifest::new(&text);
        let manifest = match Manifest::load(dir) {
            Ok(m) if m.config_hash == fresh.config_hash => m,
            _ => fresh,
        };
        Self { config, dir, manifest }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write_manifest(&self) -> Result<()> {
        std::fs::write(self.path(MANIFEST), self.manifest.to_json()).context("writing manifest")
    }

    fn digest(&self, stage: &Stage) -> String {
        let mut s = format!("config {}\n", self.manifest.config_hash);
        for (k, v) in &self.manifest.data {
            let _ = writeln!(s, "data {k} {v}");
        }
        for up in upstream(&self.config, stage) {
            let name = up.name();
            if let Some(r) = self.manifest.stages.get(&name) {
                for (p, h) in &r.outputs {
                    let _ = writeln!(s, "{name} {p} {h}");
                }
            }
        }
        sha256_hex(s.as_bytes())
    }

    fn verified(&self, name: &str, digest: &str) -> bool {
        let Some(r) = self.manifest.stages.get(name) else {
            return false;
        };
        r.inputs == digest
            && r.outputs
                .iter()
                .all(|(p, h)| file_sha256(&self.path(p)).is_ok_and(|actual| &actual == h))
    }

    fn execute(mut self, log: &mut dyn FnMut(&str)) -> Result<RunSummary, PipelineError> {
        let mut data = BTreeMap::new();
        for (name, p) in self.config.data.paths() {
            let h = file_sha256(p).map_err(|e| PipelineError::Config(format!("data.{name}: {}: {e}", p.display())))?;
            data.insert(name.to_string(), h);
        }
        self.manifest.data = data;
        let mut summary = RunSummary::default();
        for stage in plan(&self.config) {
            let name = stage.name();
            let digest = self.digest(&stage);
            if self.verified(&name, &digest) {
                log(&format!("{name}: up to date"));
                summary.skipped.push(name);
                continue;
            }
            let start = Instant::now();
            let wrap = |source: anyhow::Error| PipelineError::Stage {
                stage: name.clone(),
                source,
            };
            let written = self.run_stage(&stage, log).map_err(wrap)?;
            let mut outputs = BTreeMap::new();
            for rel in written {
                let h = file_sha256(&self.path(&rel)).with_context(|| format!("hashing {rel}")).map_err(wrap)?;
                outputs.insert(rel, h);
            }
            self.manifest.stages.insert(name.clone(), StageRecord { inputs: digest, outputs });
            self.write_manifest().map_err(wrap)?;
            log(&format!("{name}: done in {:.1}s", start.elapsed().as_secs_f64()));
            summary.executed.push(name);
        }
        let live: Vec<String> = plan(&self.config).iter().map(Stage::name).collect();
        self.manifest.stages.retain(|k, _| live.contains(k));
        self.write_manifest().map_err(|source| PipelineError::Stage {
            stage: "manifest".into(),
            source,
        })?;
        summary.manifest_hash = file_sha256(&self.path(MANIFEST)).map_err(|e| PipelineError::Stage {
            stage: "manifest".into(),
            source: e.into(),
        })?;
        Ok(summary)
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    fn training_corpus(&self) -> Result<ParallelCorpus> {
        let (src, tgt) = if self.config.extensions.bootstrap.is_some() {
            (self.path("data/bootstrap.src"), self.path("data/bootstrap.tgt"))
        } else {
            (self.config.data.train_source.clone(), self.config.data.train_target.clone())
        };
        let (corpus, _) = load_parallel(&src, &tgt, self.config.data.max_len)?;
        if corpus.is_empty() {
            bail!("training corpus is empty after length filtering");
        }
        Ok(corpus)
    }

    fn vocabs(&self) -> Result<Vocabs> {
        let source = Vocabulary::load(&self.path("vocab/source.tsv"))?;
        let target = Vocabulary::load(&self.path("vocab/target.tsv"))?;
        Ok(match self.config.vocab {
            VocabMode::FullWord { .. } => Vocabs {
                source,
                target,
                merges: None,
                pieces: None,
                map_singletons: false,
            },
            VocabMode::Bpe { map_singletons, .. } => {
                let pieces_text = std::fs::read_to_string(self.path("vocab/pieces.tsv"))?;
                Vocabs {
                    source,
                    target,
                    merges: Some(MergeTable::load(&self.path("vocab/merges.txt"))?),
                    pieces: Some(PieceVocab::from_tsv(&pieces_text)?),
                    map_singletons,
                }
            }
        })
    }

    fn run_stage(&self, stage: &Stage, log: &mut dyn FnMut(&str)) -> Result<Vec<String>> {
        let c = &self.config;
        match stage {
            Stage::Lexicon => {
                let corpus = self.training_corpus_raw()?;
                let iters = c.extensions.lexicon_iterations;
                let forward = learn_model1(&corpus, iters)?;
                let reverse = learn_model1(&reversed(&corpus), iters)?;
                let dict = extract_dictionary(&forward, c.extensions.dictionary_min_prob);
                forward.save(&self.ensure_dir("lexicon/forward.tsv")?)?;
                reverse.save(&self.path("lexicon/reverse.tsv"))?;
                dict.save(&self.path("lexicon/dictionary.tsv"))?;
                Ok(vec!["lexicon/forward.tsv".into(), "lexicon/reverse.tsv".into(), "lexicon/dictionary.tsv".into()])
            }
            Stage::Bootstrap => {
                let corpus = self.training_corpus_raw()?;
                let forward = TranslationTable::load(&self.path("lexicon/forward.tsv"))?;
                let reverse = TranslationTable::load(&self.path("lexicon/reverse.tsv"))?;
                let alignments = align_corpus(&corpus, &forward, &reverse);
                let phrases = extract_corpus_phrases(&corpus, &alignments, DEFAULT_MAX_PHRASE_LEN);
                let max_added = c.extensions.bootstrap.unwrap_or(0);
                let boot = bootstrap_corpus(&corpus, &phrases, max_added);
                log(&format!("bootstrap: {} pairs added", boot.len() - corpus.len()));
                boot.write(&self.ensure_dir("data/bootstrap.src")?, &self.path("data/bootstrap.tgt"))?;
                Ok(vec!["data/bootstrap.src".into(), "data/bootstrap.tgt".into()])
            }
            Stage::Vocab => {
                let corpus = self.training_corpus()?;
                self.ensure_dir("vocab/x")?;
                let mut written = vec!["vocab/source.tsv".to_string(), "vocab/target.tsv".to_string()];
                let (source, target) = match c.vocab {
                    VocabMode::FullWord { limit } => (
                        Vocabulary::from_counts(&count_words(corpus.side(Side::Source)), limit),
                        Vocabulary::from_counts(&count_words(corpus.side(Side::Target)), limit),
                    ),
                    VocabMode::Bpe { merges, map_singletons } => {
                        let table = learn_merges(&joint_word_counts(&corpus), merges)?;
                        let words = |side| corpus.side(side).map(<[String]>::to_vec).collect::<Vec<_>>();
                        let (src_words, tgt_words) = (words(Side::Source), words(Side::Target));
                        let pieces = PieceVocab::build(&[src_words.clone(), tgt_words.clone()].concat(), &table);
                        let src = encode_corpus(&src_words, &table, &pieces, map_singletons);
                        let tgt = encode_corpus(&tgt_words, &table, &pieces, map_singletons);
                        table.save(&self.path("vocab/merges.txt"))?;
                        std::fs::write(self.path("vocab/pieces.tsv"), pieces.to_tsv())?;
                        written.push("vocab/merges.txt".into());
                        written.push("vocab/pieces.tsv".into());
                        (
                            Vocabulary::from_counts(&count_words(src.iter().map(Vec::as_slice)), usize::MAX),
                            Vocabulary::from_counts(&count_words(tgt.iter().map(Vec::as_slice)), usize::MAX),
                        )
                    }
                };
                log(&format!("vocab: {} source, {} target entries", source.len(), target.len()));
                source.save(&self.path("vocab/source.tsv"))?;
                target.save(&self.path("vocab/target.tsv"))?;
                Ok(written)
            }
            Stage::Bias => {
                let vocabs = self.vocabs()?;
                let tokens = vocabs.token_corpus(&self.training_corpus()?);
                let table = learn_model1(&tokens, c.extensions.lexicon_iterations)?;
                table.save(&self.ensure_dir("lexicon/bias.tsv")?)?;
                Ok(vec!["lexicon/bias.tsv".into()])
            }
            Stage::Train(seed) => self.train(*seed, log),
            Stage::Translate(seed) => self.translate(&[*seed], &translation_path(Some(*seed))),
            Stage::Ensemble => self.translate(&c.ensemble_seeds(), &translation_path(None)),
            Stage::Evaluate => self.evaluate(),
        }
    }

    /// The original training corpus, before any bootstrapping.
    fn training_corpus_raw(&self) -> Result<ParallelCorpus> {
        let d = &self.config.data;
        Ok(load_parallel(&d.train_source, &d.train_target, d.max_len)?.0)
    }

    fn train(&self, seed: u64, log: &mut dyn FnMut(&str)) -> Result<Vec<String>> {
        let c = &self.config;
        let vocabs = self.vocabs()?;
        let train = vocabs.encode(&self.training_corpus()?);
        let (dev, _) = load_parallel(&c.data.dev_source, &c.data.dev_target, c.data.max_len)?;
        let dev = vocabs.encode(&dev);
        let mc = ModelConfig {
            source_vocab: vocabs.source.len(),
            target_vocab: vocabs.target.len(),
            embed: c.model.embed,
            hidden: c.model.hidden,
            attention: c.model.attention,
            dropout: c.extensions.dropout,
            lexicon_epsilon: None,
            seed,
        };
        let mut model = Model::new(mc)?;
        if c.extensions.lexicon_bias {
            let table = TranslationTable::load(&self.path("lexicon/bias.tsv"))?;
            model = model.with_lexicon(
                LexiconPrior::from_table(&table, &vocabs.source, &vocabs.target),
                c.extensions.lexicon_epsilon,
            );
        }
        let out = train_run(model, &train, &dev, &c.train.train_config(seed), |e| {
            log(&format!(
                "train.seed{seed}: run {} sentences {} rate {} dev ppl {:.3}",
                e.run, e.sentences, e.rate, e.dev_ppl
            ))
        })?;
        let rel = model_path(seed);
        let mut meta = CheckpointMeta::default();
        meta.provenance.insert("seed".into(), seed.to_string());
        meta.provenance.insert("source_vocab".into(), vocabs.source.hash());
        meta.provenance.insert("target_vocab".into(), vocabs.target.hash());
        meta.provenance.insert("dev_ppl".into(), format!("{:e}", out.best_ppl));
        save_checkpoint(&self.ensure_dir(&rel)?, &out.best, &meta)?;
        // The training log carries wall-clock seconds, so it is written but
        // not hashed into the manifest.
        let logs = self.ensure_dir(&format!("logs/seed{seed}.train.tsv"))?;
        std::fs::write(&logs, out.log.to_tsv())?;
        std::fs::write(logs.with_extension("events.tsv"), out.log.events_tsv())?;
        let mut written = vec![rel.clone(), format!("{rel}.meta")];
        if c.extensions.lexicon_bias {
            written.push(format!("{rel}.lex"));
        }
        Ok(written)
    }

    fn translate(&self, seeds: &[u64], rel: &str) -> Result<Vec<String>> {
        let c = &self.config;
        let vocabs = self.vocabs()?;
        let models = seeds
            .iter()
            .map(|&s| Ok(load_checkpoint(&self.path(&model_path(s)))?.0))
            .collect::<Result<Vec<Model>>>()?;
        let mut ensemble = Ensemble::new(models)?;
        ensemble.averaging = c.decode.averaging;
        let dict = if c.decode.unk_replace {
            Some(Dictionary::load(&self.path("lexicon/dictionary.tsv"))?)
        } else {
            None
        };
        let mut translator = Translator {
            ensemble: &ensemble,
            source_vocab: &vocabs.source,
            target_vocab: &vocabs.target,
            segmenter: vocabs.merges.as_ref().map(Segmenter::new),
            unk_dictionary: dict.as_ref(),
            beam_size: c.decode.beam,
            max_len: c.decode.max_len,
        };
        let source = load_lines(&c.data.test_source)?;
        let mut out = String::new();
        for t in translator.translate_corpus(&source)? {
            out.push_str(&t.words.join(" "));
            out.push('\n');
        }
        std::fs::write(self.ensure_dir(rel)?, out)?;
        Ok(vec![rel.to_string()])
    }

    fn evaluate(&self) -> Result<Vec<String>> {
        let c = &self.config;
        let refs = load_lines(&c.data.test_target)?;
        let mut systems = Vec::new();
        for &s in &c.seeds {
            let hyps = load_lines(&self.path(&translation_path(Some(s))))?;
            systems.push((format!("seed{s}"), bleu(&pad(hyps, refs.len()), &refs)?));
        }
        let average = average_runs(&systems.iter().map(|(_, b)| b.score).collect::<Vec<_>>())?;
        let ensemble = if c.ensemble_seeds().len() > 1 {
            let hyps = load_lines(&self.path(&translation_path(None)))?;
            Some(bleu(&pad(hyps, refs.len()), &refs)?)
        } else {
            None
        };
        let report = ExperimentReport { systems, average, ensemble };
        std::fs::write(self.ensure_dir(REPORT_TSV)?, report.to_tsv())?;
        std::fs::write(self.path(REPORT_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(vec![REPORT_TSV.into(), REPORT_JSON.into()])
    }
}

/// Restores trailing empty translations dropped by line splitting.
fn pad(mut lines: Vec<Vec<String>>, n: usize) -> Vec<Vec<String>> {
    lines.resize(n.max(lines.len()), Vec::new());
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::DataConfig;

    #[test]
    fn plan_shape() {
        let c = RunConfig::vanilla(DataConfig::in_dir(Path::new("/d")));
        let names: Vec<String> = plan(&c).iter().map(Stage::name).collect();
        assert_eq!(names.first().map(String::as_str), Some("lexicon"));
        assert_eq!(names.iter().filter(|n| n.starts_with("train.")).count(), 3);
        assert!(names.contains(&"translate.ensemble".to_string()));
        assert_eq!(names.last().map(String::as_str), Some("evaluate"));
    }

    #[test]
    fn diff_marks_both_sides() {
        let d = line_diff("a = 1\nb = 2\n", "a = 1\nb = 3\n");
        assert_eq!(d, "- b = 2\n+ b = 3\n");
    }
}
