//! Command-line front end: one subcommand per pipeline step plus `run` and
//! `resume` for whole experiments.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors and 3
//! when a stage fails.

pub mod config;
pub mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::bpe::{encode_corpus, joint_word_counts, learn_merges, MergeTable, PieceVocab};
use crate::corpus::{count_words, load_lines, load_parallel, Vocabulary, DEFAULT_MAX_LEN, DEFAULT_VOCAB_LIMIT};
use crate::decode::{Averaging, Ensemble, Translator, DEFAULT_BEAM};
use crate::eval::{average_runs, bleu, classwise_f1, vocab_coverage, ClassArtifacts, EvalReport};
use crate::lexicon::{extract_dictionary, learn_model1, Dictionary};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model, ModelConfig};
use crate::train::{train_run, AnnealConfig, OptimizerKind, TrainConfig, CLIP_NORM, PATIENCE};

pub use config::{DataConfig, Preset, RunConfig};
pub use pipeline::{resume, run_experiment, PipelineError, RunSummary};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "deskmt", version, about = "Desk-scale neural machine translation workbench")]
pub struct Cli {
    /// Directory that relative experiment directories are resolved against.
    #[arg(long, global = true, env = "DESKMT_ROOT", default_value = ".")]
    pub root: PathBuf,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn joint BPE merge operations from a parallel corpus.
    LearnBpe {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = crate::bpe::RECOMMENDED_MERGES)]
        merges: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Segment a tokenized file into BPE pieces.
    ApplyBpe {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Piece counts of the training data; with --map-singletons, rare or
        /// unseen pieces become unk.
        #[arg(long)]
        pieces: Option<PathBuf>,
        #[arg(long, requires = "pieces")]
        map_singletons: bool,
        /// Also write the piece counts of this input here.
        #[arg(long)]
        write_pieces: Option<PathBuf>,
    },
    /// Build a frequency-ranked vocabulary from a tokenized file.
    BuildVocab {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_LIMIT)]
        limit: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Train a word translation table and extract the unk dictionary.
    TrainLexicon {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = config::DEFAULT_LEXICON_ITERATIONS)]
        iterations: usize,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        min_prob: f64,
    },
    /// Train one model on already tokenized (and possibly segmented) data.
    Train(TrainArgs),
    /// Translate with one model or an ensemble.
    Translate(TranslateArgs),
    /// Corpus BLEU of one or more hypothesis files against a reference.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        hypothesis: Vec<PathBuf>,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Class-wise unigram F1 and vocabulary coverage.
    Analyze {
        #[arg(long)]
        hypothesis: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// Vocabulary of the full-word system.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        /// Vocabulary size at which coverage is reported.
        #[arg(long, default_value_t = DEFAULT_VOCAB_LIMIT)]
        coverage_limit: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a full experiment from a config file or a preset.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, requires = "data")]
        preset: Option<Preset>,
        /// With --preset: directory holding train/dev/test .src and .tgt files.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Experiment directory, relative to --root.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Continue an experiment, re-running only incomplete stages.
    Resume {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    train_source: PathBuf,
    #[arg(long)]
    train_target: PathBuf,
    #[arg(long)]
    dev_source: PathBuf,
    #[arg(long)]
    dev_target: PathBuf,
    #[arg(long)]
    source_vocab: PathBuf,
    #[arg(long)]
    target_vocab: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_parser = parse_optimizer, default_value = "adam")]
    optimizer: OptimizerKind,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    max_runs: usize,
    #[arg(long, default_value_t = PATIENCE)]
    patience: usize,
    #[arg(long, default_value_t = config::DEFAULT_EVAL_INTERVAL)]
    eval_interval: usize,
    #[arg(long, default_value_t = crate::corpus::DEFAULT_BATCH_WORDS)]
    batch_words: usize,
    #[arg(long, default_value_t = 32)]
    embed: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    attention: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Write the training log TSV here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Checkpoint; repeat for an ensemble.
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    #[arg(long)]
    source_vocab: PathBuf,
    #[arg(long)]
    target_vocab: PathBuf,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Merge table for models trained on BPE pieces.
    #[arg(long)]
    merges: Option<PathBuf>,
    /// Enables unk replacement with this dictionary.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Enables unk replacement by copying the attended source word.
    #[arg(long, conflicts_with = "dictionary")]
    copy_unks: bool,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    beam: usize,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_parser = parse_averaging, default_value = "probability")]
    averaging: Averaging,
    /// Also write score and attention per line.
    #[arg(long)]
    details: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer {s:?} (sgd or adam)")),
    }
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "probability" => Ok(Averaging::Probability),
        "log" => Ok(Averaging::Log),
        _ => Err(format!("unknown averaging {s:?} (probability or log)")),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<PipelineError>() {
                Some(p) => p.exit_code(),
                None if e.is::<ConfigError>() => EXIT_CONFIG,
                None => EXIT_STAGE,
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn write_lines(path: &Path, lines: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    let mut log = |m: &str| {
        if !quiet {
            eprintln!("{m}");
        }
    };
    match cli.command {
        Command::LearnBpe { source, target, merges, output } => {
            let (corpus, _) = load_parallel(&source, &target, usize::MAX)?;
            let table = learn_merges(&joint_word_counts(&corpus), merges)?;
            log(&format!("learned {} merges", table.len()));
            table.save(&output)?;
        }
        Command::ApplyBpe {
            merges,
            input,
            output,
            pieces,
            map_singletons,
            write_pieces,
        } => {
            let table = MergeTable::load(&merges)?;
            let lines = load_lines(&input)?;
            let vocab = match &pieces {
                Some(p) => PieceVocab::from_tsv(&std::fs::read_to_string(p)?)?,
                None => PieceVocab::build(&lines, &table),
            };
            let encoded = encode_corpus(&lines, &table, &vocab, map_singletons);
            write_lines(&output, &encoded)?;
            if let Some(p) = write_pieces {
                std::fs::write(p, PieceVocab::build(&lines, &table).to_tsv())?;
            }
        }
        Command::BuildVocab { input, limit, output } => {
            if limit == 0 {
                return Err(config_err("--limit must be positive"));
            }
            let lines = load_lines(&input)?;
            let v = Vocabulary::from_counts(&count_words(lines.iter().map(Vec::as_slice)), limit);
            log(&format!("{} entries", v.len()));
            v.save(&output)?;
        }
        Command::TrainLexicon {
            source,
            target,
            iterations,
            table,
            dictionary,
            min_prob,
        } => {
            let (corpus, _) = load_parallel(&source, &target, DEFAULT_MAX_LEN)?;
            let t = learn_model1(&corpus, iterations)?;
            t.save(&table)?;
            if let Some(d) = dictionary {
                extract_dictionary(&t, min_prob).save(&d)?;
            }
        }
        Command::Train(a) => train(a, &mut log)?,
        Command::Translate(a) => translate(a)?,
        Command::Evaluate { hypothesis, reference, json } => {
            let refs = load_lines(&reference)?;
            let mut scores = Vec::new();
            let mut first = None;
            for h in &hypothesis {
                let hyps = load_lines(h)?;
                let b = bleu(&hyps, &refs)?;
                println!("{}\t{:.2}", h.display(), b.score);
                scores.push(b.score);
                first.get_or_insert(b);
            }
            let report = EvalReport {
                bleu: if hypothesis.len() == 1 { first } else { None },
                runs: (hypothesis.len() > 1).then(|| average_runs(&scores)).transpose()?,
                ..EvalReport::default()
            };
            print!("{}", report.to_tsv());
            if let Some(j) = json {
                std::fs::write(j, report.to_json())?;
            }
        }
        Command::Analyze {
            hypothesis,
            reference,
            source,
            vocab,
            merges,
            dictionary,
            coverage_limit,
            json,
        } => {
            let hyps = load_lines(&hypothesis)?;
            let refs = load_lines(&reference)?;
            let srcs = load_lines(&source)?;
            let full_vocab = Vocabulary::load(&vocab)?;
            let merges = MergeTable::load(&merges)?;
            let dict = Dictionary::load(&dictionary)?;
            let artifacts = ClassArtifacts {
                full_vocab: &full_vocab,
                merges: &merges,
                dictionary: &dict,
            };
            let report = EvalReport {
                bleu: Some(bleu(&hyps, &refs)?),
                classes: Some(classwise_f1(&hyps, &refs, &srcs, &artifacts)?),
                coverage: vec![
                    ("source".into(), vocab_coverage(&srcs, coverage_limit)),
                    ("reference".into(), vocab_coverage(&refs, coverage_limit)),
                ],
                runs: None,
            };
            print!("{}", report.to_tsv());
            if let Some(j) = json {
                std::fs::write(j, report.to_json())?;
            }
        }
        Command::Run { config, preset, data, dir } => {
            let cfg = match (config, preset, data) {
                (Some(path), _, _) => RunConfig::load(&path).map_err(config_err)?,
                (None, Some(p), Some(d)) => RunConfig::preset(p, DataConfig::in_dir(&std::path::absolute(&d)?)),
                _ => bail!(config_err("either --config or --preset with --data is required")),
            };
            let s = run_experiment(&cfg, &cli.root.join(dir), &mut log)?;
            log(&format!("{} stages run, {} up to date, manifest {}", s.executed.len(), s.skipped.len(), s.manifest_hash));
        }
        Command::Resume { dir } => {
            let s = resume(&cli.root.join(dir), &mut log)?;
            log(&format!("{} stages run, {} up to date, manifest {}", s.executed.len(), s.skipped.len(), s.manifest_hash));
        }
    }
    Ok(())
}

fn train(a: TrainArgs, log: &mut dyn FnMut(&str)) -> Result<()> {
    let source = Vocabulary::load(&a.source_vocab)?;
    let target = Vocabulary::load(&a.target_vocab)?;
    let encode = |s: &Path, t: &Path| -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
        let (c, _) = load_parallel(s, t, a.max_len)?;
        Ok(c.pairs().iter().map(|p| (source.encode(&p.source), target.encode(&p.target))).collect())
    };
    let train_data = encode(&a.train_source, &a.train_target)?;
    let dev = encode(&a.dev_source, &a.dev_target)?;
    let mc = ModelConfig {
        source_vocab: source.len(),
        target_vocab: target.len(),
        embed: a.embed,
        hidden: a.hidden,
        attention: a.attention,
        dropout: a.dropout,
        lexicon_epsilon: None,
        seed: a.seed,
    };
    let model = Model::new(mc).map_err(|e| config_err(e.to_string()))?;
    let tc = TrainConfig {
        optimizer: a.optimizer,
        rate: a.rate,
        anneal: AnnealConfig {
            max_runs: a.max_runs,
            patience: a.patience,
            eval_intervals: vec![a.eval_interval, (a.eval_interval / 2).max(1)],
        },
        batch_words: a.batch_words,
        clip_norm: Some(CLIP_NORM),
        max_evals_per_run: None,
        seed: a.seed,
    };
    tc.anneal.validate().map_err(|e| config_err(e.to_string()))?;
    let out = train_run(model, &train_data, &dev, &tc, |e| {
        log(&format!("run {} sentences {} rate {} dev ppl {:.3}", e.run, e.sentences, e.rate, e.dev_ppl))
    })?;
    let mut meta = CheckpointMeta::default();
    meta.provenance.insert("seed".into(), a.seed.to_string());
    meta.provenance.insert("source_vocab".into(), source.hash());
    meta.provenance.insert("target_vocab".into(), target.hash());
    save_checkpoint(&a.output, &out.best, &meta)?;
    if let Some(p) = a.log {
        std::fs::write(p, out.log.to_tsv())?;
    }
    log(&format!("best dev perplexity {:.3}", out.best_ppl));
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let source = Vocabulary::load(&a.source_vocab)?;
    let target = Vocabulary::load(&a.target_vocab)?;
    let models = a
        .model
        .iter()
        .map(|p| Ok(load_checkpoint(p)?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = Ensemble::new(models)?;
    ensemble.averaging = a.averaging;
    let merges = a.merges.as_deref().map(MergeTable::load).transpose()?;
    let empty = Dictionary::default();
    let dict = a.dictionary.as_deref().map(Dictionary::load).transpose()?;
    let unk_dictionary = match (&dict, a.copy_unks) {
        (Some(d), _) => Some(d),
        (None, true) => Some(&empty),
        (None, false) => None,
    };
    if a.beam == 0 {
        return Err(config_err("--beam must be positive"));
    }
    let mut translator = Translator {
        ensemble: &ensemble,
        source_vocab: &source,
        target_vocab: &target,
        segmenter: merges.as_ref().map(crate::bpe::Segmenter::new),
        unk_dictionary,
        beam_size: a.beam,
        max_len: a.max_len,
    };
    let input = load_lines(&a.input)?;
    let out = translator.translate_corpus(&input)?;
    write_lines(&a.output, &out.iter().map(|t| t.words.clone()).collect::<Vec<_>>())?;
    if let Some(p) = a.details {
        let rows: String = out.iter().enumerate().map(|(i, t)| t.to_tsv_row(i) + "\n").collect();
        std::fs::write(p, rows)?;
    }
    Ok(())
}
