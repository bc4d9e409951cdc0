//! SGD and Adam updates, the halve-and-restart annealing controller, and the
//! training loop that drives them from dev-set perplexity.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, ParamSet};
use crate::corpus::{make_batches_by_lengths, DEFAULT_BATCH_WORDS};
use crate::model::{batch_loss, Dropout, Model, ModelError, SentenceMasks};

pub const SGD_RATE: f64 = 0.5;
pub const ADAM_RATE: f64 = 0.0002;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const PATIENCE: usize = 20;
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient for parameter {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("training diverged at {sentences} sentences (run {run}): {source}")]
    Diverged {
        sentences: u64,
        run: usize,
        #[source]
        source: ModelError,
    },
    #[error("empty {0} set")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn default_rate(self) -> f64 {
        match self {
            Self::Sgd => SGD_RATE,
            Self::Adam => ADAM_RATE,
        }
    }
}

/// Learning rate plus, for Adam, per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// SGD learning rate, or Adam's maximum step size.
    pub rate: f64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn sgd(rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            rate,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn adam(rate: f64, params: &ParamSet) -> Self {
        let zeros: Vec<Array> = params.iter().map(|(_, a)| Array::zeros(a.shape())).collect();
        Self {
            kind: OptimizerKind::Adam,
            m: zeros.clone(),
            v: zeros,
            ..Self::sgd(rate)
        }
    }

    pub fn new(kind: OptimizerKind, rate: f64, params: &ParamSet) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(rate),
            OptimizerKind::Adam => Self::adam(rate, params),
        }
    }

    /// Zeroes the moments and the step counter.
    pub fn reset_moments(&mut self) {
        for a in self.m.iter_mut().chain(self.v.iter_mut()) {
            a.data_mut().fill(0.0);
        }
        self.t = 0;
    }
}

fn check_finite(grads: &[Array]) -> Result<(), TrainError> {
    match grads.iter().position(|g| !g.all_finite()) {
        Some(index) => Err(TrainError::NonFiniteGradient { index }),
        None => Ok(()),
    }
}

fn check_shapes(params: &ParamSet, grads: &[Array]) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    for (i, g) in grads.iter().enumerate() {
        assert_eq!(params.get(i).shape(), g.shape(), "gradient shape for {}", params.name(i));
    }
}

/// `p ← p − rate·g`. Parameters are untouched when any gradient is not
/// finite.
pub fn sgd_step(params: &mut ParamSet, grads: &[Array], rate: f64) -> Result<(), TrainError> {
    check_shapes(params, grads);
    check_finite(grads)?;
    for (i, g) in grads.iter().enumerate() {
        for (p, d) in params.get_mut(i).data_mut().iter_mut().zip(g.data()) {
            *p -= rate * d;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &[Array], state: &mut OptimizerState) -> Result<(), TrainError> {
    assert_eq!(state.kind, OptimizerKind::Adam);
    check_shapes(params, grads);
    check_finite(grads)?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, &d), mi), vi) in params.get_mut(i).data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * d;
            *vi = b2 * *vi + (1.0 - b2) * d * d;
            *p -= state.rate * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

pub fn optimizer_step(params: &mut ParamSet, grads: &[Array], state: &mut OptimizerState) -> Result<(), TrainError> {
    match state.kind {
        OptimizerKind::Sgd => sgd_step(params, grads, state.rate),
        OptimizerKind::Adam => adam_step(params, grads, state),
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the original norm when clipping happened.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> Option<f64> {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
        Some(norm)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// 1 disables annealing; otherwise the rate halves between runs.
    pub max_runs: usize,
    pub patience: usize,
    /// Sentences between dev evaluations, per run; the last entry repeats.
    pub eval_intervals: Vec<usize>,
}

impl AnnealConfig {
    /// First run evaluates every `interval` sentences, later runs every
    /// `interval / 2`.
    pub fn halving_schedule(max_runs: usize, interval: usize) -> Self {
        Self {
            max_runs,
            patience: PATIENCE,
            eval_intervals: vec![interval, (interval / 2).max(1)],
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_runs == 0 || self.patience == 0 {
            return Err(TrainError::Config("max_runs and patience must be at least 1".into()));
        }
        if self.eval_intervals.is_empty() || self.eval_intervals.contains(&0) {
            return Err(TrainError::Config("eval intervals must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn interval(&self, run: usize) -> usize {
        self.eval_intervals[run.min(self.eval_intervals.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Keep training; `improved` marks a new best (and a checkpoint).
    Continue { improved: bool },
    EndRun,
    Stop,
}

/// Pure state machine deciding when a run has converged.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealState {
    pub run_index: usize,
    pub max_runs: usize,
    pub rate: f64,
    pub best_dev_ppl: f64,
    pub evals_since_improvement: usize,
    pub patience: usize,
}

impl AnnealState {
    pub fn new(config: &AnnealConfig, rate: f64) -> Self {
        Self {
            run_index: 0,
            max_runs: config.max_runs,
            rate,
            best_dev_ppl: f64::INFINITY,
            evals_since_improvement: 0,
            patience: config.patience,
        }
    }

    /// Strict improvement resets the counter; reaching `patience`
    /// non-improving evaluations ends the run, or stops on the last run.
    pub fn observe(&mut self, dev_ppl: f64) -> Action {
        if dev_ppl < self.best_dev_ppl {
            self.best_dev_ppl = dev_ppl;
            self.evals_since_improvement = 0;
            return Action::Continue { improved: true };
        }
        self.evals_since_improvement += 1;
        if self.evals_since_improvement >= self.patience {
            self.end_run()
        } else {
            Action::Continue { improved: false }
        }
    }

    pub fn end_run(&self) -> Action {
        if self.run_index + 1 >= self.max_runs {
            Action::Stop
        } else {
            Action::EndRun
        }
    }

    /// Starts the next run at half the rate. SGD keeps nothing else; Adam
    /// forgets its moments. The caller reloads the best parameters.
    pub fn restart(&mut self, optimizer: &mut OptimizerState) {
        assert!(self.run_index + 1 < self.max_runs, "no runs left");
        self.run_index += 1;
        self.rate /= 2.0;
        self.evals_since_improvement = 0;
        optimizer.rate = self.rate;
        if optimizer.kind == OptimizerKind::Adam {
            optimizer.reset_moments();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Defaults to 0.5 for SGD and 0.0002 for Adam.
    pub rate: Option<f64>,
    pub anneal: AnnealConfig,
    pub batch_words: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Safety cap on dev evaluations in one run; reaching it ends the run.
    pub max_evals_per_run: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, anneal: AnnealConfig) -> Self {
        Self {
            optimizer,
            rate: None,
            anneal,
            batch_words: DEFAULT_BATCH_WORDS,
            clip_norm: Some(CLIP_NORM),
            max_evals_per_run: None,
            seed: 1,
        }
    }

    pub fn initial_rate(&self) -> f64 {
        self.rate.unwrap_or_else(|| self.optimizer.default_rate())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub sentences: u64,
    pub run: usize,
    pub rate: f64,
    pub dev_ppl: f64,
    pub seconds: f64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Clipped { sentences: u64, norm: f64 },
    SkippedBatch { sentences: u64, parameter: usize },
    EvalCapReached { run: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub events: Vec<TrainEvent>,
}

impl TrainLog {
    /// `sentences<TAB>run<TAB>rate<TAB>dev_ppl<TAB>seconds` with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sentences\trun\trate\tdev_ppl\tseconds\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:.3}", e.sentences, e.run, e.rate, e.dev_ppl, e.seconds);
        }
        out
    }

    pub fn events_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = match e {
                TrainEvent::Clipped { sentences, norm } => writeln!(out, "{sentences}\tclipped\t{norm}"),
                TrainEvent::SkippedBatch { sentences, parameter } => {
                    writeln!(out, "{sentences}\tskipped_batch\tnon-finite gradient in parameter {parameter}")
                }
                TrainEvent::EvalCapReached { run } => writeln!(out, "-\teval_cap\trun {run}"),
            };
        }
        out
    }

    pub fn best_ppl(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.dev_ppl).min_by(f64::total_cmp)
    }

    /// Distinct rates in run order.
    pub fn rates(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            if out.last() != Some(&e.rate) {
                out.push(e.rate);
            }
        }
        out
    }

    /// Entries recorded during `run`.
    pub fn run(&self, run: usize) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.run == run)
    }

    pub fn clip_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, TrainEvent::Clipped { .. })).count()
    }
}

/// Sentence pairs as vocabulary ids; targets exclude `</s>`.
pub type EncodedPair = (Vec<u32>, Vec<u32>);

/// `exp(total NLL / total target tokens)`, counting `</s>`, dropout off.
pub fn dev_perplexity(model: &Model, dev: &[EncodedPair]) -> Result<f64, ModelError> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (s, t) in dev {
        nll += model.sentence_nll(s, t, Dropout::Off)?;
        tokens += t.len() + 1;
    }
    Ok((nll / tokens as f64).exp())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the lowest dev perplexity seen in any run.
    pub best: Model,
    pub best_ppl: f64,
    pub log: TrainLog,
}

/// Trains until the controller stops, evaluating dev perplexity every
/// scheduled interval and restarting from the best parameters at half the
/// rate after each converged run. Deterministic for a fixed seed.
///
/// `progress` sees every log entry as it is recorded.
pub fn train_run(
    model: Model,
    train: &[EncodedPair],
    dev: &[EncodedPair],
    config: &TrainConfig,
    progress: impl FnMut(&LogEntry),
) -> Result<TrainOutcome, TrainError> {
    struct Progress<F>(F);
    impl<F: FnMut(&LogEntry)> TrainObserver for Progress<F> {
        fn entry(&mut self, entry: &LogEntry) {
            (self.0)(entry)
        }
    }
    train_run_observed(model, train, dev, config, &mut Progress(progress))
}

/// Callbacks from inside [`train_run_observed`].
pub trait TrainObserver {
    fn entry(&mut self, _entry: &LogEntry) {}
    /// Called right after a restart, with the reloaded model, the best
    /// model it was reloaded from and the reset optimizer.
    fn restarted(&mut self, _model: &Model, _best: &Model, _optimizer: &OptimizerState) {}
}

/// [`train_run`] with an observer that also sees restarts.
pub fn train_run_observed(
    model: Model,
    train: &[EncodedPair],
    dev: &[EncodedPair],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyData("dev"));
    }
    config.anneal.validate()?;
    let rate = config.initial_rate();
    if !(rate > 0.0) {
        return Err(TrainError::Config(format!("rate {rate} must be positive")));
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model;
    let mut best = model.clone();
    let mut opt = OptimizerState::new(config.optimizer, rate, &model.params);
    let mut anneal = AnnealState::new(&config.anneal, rate);
    let mut log = TrainLog::default();
    let lengths: Vec<usize> = train.iter().map(|(_, t)| t.len() + 1).collect();
    let mut sentences = 0u64;
    let mut since_eval = 0usize;
    let mut evals_in_run = 0usize;
    let mut batch_id = 0usize;
    let dropout = model.config.dropout > 0.0;

    'outer: loop {
        for batch in make_batches_by_lengths(&lengths, config.batch_words, rng.gen()) {
            let pairs: Vec<(&[u32], &[u32])> = batch
                .indices
                .iter()
                .map(|&i| (train[i].0.as_slice(), train[i].1.as_slice()))
                .collect();
            let masks: Option<Vec<SentenceMasks>> =
                dropout.then(|| pairs.iter().map(|_| SentenceMasks::sample(&model.config, &mut rng)).collect());
            let mut out = batch_loss(&model, &pairs, masks.as_deref(), batch_id).map_err(|source| TrainError::Diverged {
                sentences,
                run: anneal.run_index,
                source,
            })?;
            batch_id += 1;
            sentences += pairs.len() as u64;
            since_eval += pairs.len();
            if let Some(norm) = config.clip_norm.and_then(|c| clip_global_norm(&mut out.grads, c)) {
                log.events.push(TrainEvent::Clipped { sentences, norm });
            }
            match optimizer_step(&mut model.params, &out.grads, &mut opt) {
                Err(TrainError::NonFiniteGradient { index }) => {
                    log.events.push(TrainEvent::SkippedBatch { sentences, parameter: index })
                }
                other => other?,
            }

            if since_eval < config.anneal.interval(anneal.run_index) {
                continue;
            }
            since_eval = 0;
            evals_in_run += 1;
            let ppl = dev_perplexity(&model, dev)?;
            let mut action = anneal.observe(ppl);
            if action == (Action::Continue { improved: true }) {
                best = model.clone();
            }
            if matches!(action, Action::Continue { .. }) && config.max_evals_per_run.is_some_and(|cap| evals_in_run >= cap) {
                log.events.push(TrainEvent::EvalCapReached { run: anneal.run_index });
                action = anneal.end_run();
            }
            let entry = LogEntry {
                sentences,
                run: anneal.run_index,
                rate: anneal.rate,
                dev_ppl: ppl,
                seconds: start.elapsed().as_secs_f64(),
                action,
            };
            observer.entry(&entry);
            log.entries.push(entry);
            match action {
                Action::Continue { .. } => {}
                Action::EndRun => {
                    model.params = best.params.clone();
                    anneal.restart(&mut opt);
                    evals_in_run = 0;
                    observer.restarted(&model, &best, &opt);
                }
                Action::Stop => break 'outer,
            }
        }
    }
    Ok(TrainOutcome {
        best_ppl: anneal.best_dev_ppl,
        best,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("p", Array::scalar(v));
        p
    }

    #[test]
    fn sgd_examples() {
        let mut p = one(1.0);
        sgd_step(&mut p, &[Array::scalar(0.5)], 0.5).unwrap();
        assert_eq!(p.get(0).item(), 0.75);
        sgd_step(&mut p, &[Array::scalar(0.0)], 0.5).unwrap();
        assert_eq!(p.get(0).item(), 0.75);
        assert!(sgd_step(&mut p, &[Array::scalar(f64::NAN)], 0.5).is_err());
        assert_eq!(p.get(0).item(), 0.75);
    }

    #[test]
    fn first_adam_step_moves_by_rate() {
        let mut p = one(0.0);
        let mut s = OptimizerState::adam(0.1, &p);
        adam_step(&mut p, &[Array::scalar(1.0)], &mut s).unwrap();
        assert!((p.get(0).item() + 0.1).abs() < 1e-8);
        assert_eq!(s.t, 1);

        let mut q = one(2.0);
        let mut s = OptimizerState::adam(0.1, &q);
        adam_step(&mut q, &[Array::scalar(0.0)], &mut s).unwrap();
        assert_eq!(q.get(0).item(), 2.0);
    }

    #[test]
    fn controller_examples() {
        let cfg = AnnealConfig {
            max_runs: 2,
            patience: 20,
            eval_intervals: vec![10],
        };
        let mut a = AnnealState::new(&cfg, 0.5);
        let improved: Vec<Action> = [10.0, 9.0, 8.0].iter().map(|&p| a.observe(p)).collect();
        assert!(improved.iter().all(|&x| x == Action::Continue { improved: true }));
        for _ in 0..19 {
            assert_eq!(a.observe(8.0), Action::Continue { improved: false });
        }
        assert_eq!(a.observe(8.5), Action::EndRun);
        let mut opt = OptimizerState::sgd(0.5);
        a.restart(&mut opt);
        assert_eq!((a.rate, opt.rate, a.run_index), (0.25, 0.25, 1));
        for _ in 0..19 {
            a.observe(9.0);
        }
        assert_eq!(a.observe(9.0), Action::Stop);
    }

    #[test]
    fn adam_restart_forgets_moments() {
        let mut p = one(0.0);
        let mut s = OptimizerState::adam(0.1, &p);
        adam_step(&mut p, &[Array::scalar(1.0)], &mut s).unwrap();
        let mut a = AnnealState::new(&AnnealConfig::halving_schedule(3, 100), 0.1);
        a.restart(&mut s);
        assert_eq!(s.t, 0);
        assert!(s.m.iter().chain(&s.v).all(|x| x.data().iter().all(|&v| v == 0.0)));
        assert_eq!(s.rate, 0.05);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Array::vector(vec![3.0, 4.0]), Array::scalar(0.0)];
        assert_eq!(clip_global_norm(&mut g, 5.0), None);
        assert_eq!(clip_global_norm(&mut g, 1.0), Some(5.0));
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn schedule_defaults() {
        let c = AnnealConfig::halving_schedule(3, 1000);
        assert_eq!((c.interval(0), c.interval(1), c.interval(2)), (1000, 500, 500));
        assert_eq!(c.patience, 20);
    }
}
