//! Mini-batch Adam training with dev-loss early stopping, and random
//! hyperparameter search over rank, learning rate and dropout.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::graph::DepTree;
use crate::losses::{batch_objective, ModelKind};
use crate::model::{apply_dropout, ProbeParams};
use crate::rng;

/// A training example: embeddings paired with the gold tree.
pub type Example<'a> = (&'a EmbeddingSequence, &'a DepTree);

/// Minimum relative dev-loss decrease that counts as an improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    /// `r = d`.
    Full,
    Fixed(usize),
}

impl Rank {
    pub fn resolve(self, dim: usize) -> Result<usize> {
        match self {
            Rank::Full => Ok(dim),
            Rank::Fixed(0) => Err(Error::config("rank", "rank must be at least 1")),
            Rank::Fixed(r) if r > dim => Err(Error::config(
                "rank",
                format!("rank {r} exceeds embedding dim {dim}"),
            )),
            Rank::Fixed(r) => Ok(r),
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Full => f.write_str("full"),
            Rank::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for Rank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "full" {
            return Ok(Rank::Full);
        }
        s.trim()
            .parse()
            .map(Rank::Fixed)
            .map_err(|_| Error::config("rank", format!("'{s}' is not an integer or 'full'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub rank: Rank,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// `None` picks the model kind's default.
    pub squared: Option<bool>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Probe,
            rank: Rank::Full,
            learning_rate: 1e-3,
            dropout_rate: 0.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            squared: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn squared(&self) -> bool {
        self.squared.unwrap_or(self.model_kind.default_squared())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if let Rank::Fixed(0) = self.rank {
            return Err(Error::config("rank", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub rank_choices: Vec<Rank>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub dropout_min: f64,
    pub dropout_max: f64,
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            rank_choices: vec![
                Rank::Fixed(32),
                Rank::Fixed(64),
                Rank::Fixed(128),
                Rank::Fixed(256),
                Rank::Full,
            ],
            lr_min: 1e-4,
            lr_max: 1e-2,
            dropout_min: 0.0,
            dropout_max: 0.5,
            trials: 10,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.rank_choices.is_empty() {
            return Err(Error::config("rank_choices", "must not be empty"));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::config("lr_min", "need 0 < lr_min <= lr_max"));
        }
        if !(0.0 <= self.dropout_min
            && self.dropout_min <= self.dropout_max
            && self.dropout_max < 1.0)
        {
            return Err(Error::config(
                "dropout_min",
                "need 0 <= dropout_min <= dropout_max < 1",
            ));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        Ok(())
    }

    /// Draws `trials` configurations from the `search` stream of `base.seed`.
    /// Rank choices larger than `dim` are skipped.
    pub fn sample(&self, base: &TrainConfig, dim: usize) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let ranks: Vec<Rank> = self
            .rank_choices
            .iter()
            .copied()
            .filter(|r| r.resolve(dim).is_ok())
            .collect();
        if ranks.is_empty() {
            return Err(Error::config(
                "rank_choices",
                format!("no choice fits embedding dim {dim}"),
            ));
        }
        let mut r = rng::stream(base.seed, "search");
        Ok((0..self.trials)
            .map(|_| {
                let rank = ranks[r.random_range(0..ranks.len())];
                let learning_rate = if self.lr_min == self.lr_max {
                    self.lr_min
                } else {
                    r.random_range(self.lr_min.ln()..self.lr_max.ln()).exp()
                };
                let dropout_rate = if self.dropout_min == self.dropout_max {
                    self.dropout_min
                } else {
                    r.random_range(self.dropout_min..self.dropout_max)
                };
                TrainConfig {
                    rank,
                    learning_rate,
                    dropout_rate,
                    ..base.clone()
                }
            })
            .collect())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Array2<f64>,
    second: Array2<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, shape: (usize, usize)) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Array2::zeros(shape),
            second: Array2::zeros(shape),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = 1.0 - b1.powi(self.steps);
        let correction2 = 1.0 - b2.powi(self.steps);
        ndarray::Zip::from(params)
            .and(&mut self.first)
            .and(&mut self.second)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            });
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sentence objective seen during the epoch (with dropout).
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainRecord {
    pub config: TrainConfig,
    pub rank: usize,
    pub dim: usize,
    pub squared: bool,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub stop_reason: StopReason,
    /// Parameters after the best dev epoch.
    pub params: ProbeParams,
    pub wall_clock: Duration,
}

impl TrainRecord {
    /// Key/value header followed by the per-epoch table. Wall-clock time is
    /// left out so reruns produce identical bytes.
    pub fn to_report(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let kv = [
            ("model_kind", c.model_kind.to_string()),
            ("rank", c.rank.to_string()),
            ("resolved_rank", self.rank.to_string()),
            ("dim", self.dim.to_string()),
            ("learning_rate", c.learning_rate.to_string()),
            ("dropout_rate", c.dropout_rate.to_string()),
            ("batch_size", c.batch_size.to_string()),
            ("max_epochs", c.max_epochs.to_string()),
            ("patience", c.patience.to_string()),
            ("squared", self.squared.to_string()),
            ("seed", c.seed.to_string()),
            ("epochs_run", self.epochs.len().to_string()),
            ("best_epoch", self.best_epoch.to_string()),
            ("best_dev_loss", self.best_dev_loss.to_string()),
            ("stop_reason", self.stop_reason.to_string()),
        ];
        for (key, value) in kv {
            let _ = writeln!(out, "{key}\t{value}");
        }
        out.push('\n');
        out.push_str("epoch\ttrain_loss\tdev_loss\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{}\t{}", e.epoch, e.train_loss, e.dev_loss);
        }
        out
    }
}

fn check_examples(what: &str, examples: &[Example<'_>]) -> Result<usize> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Data(format!("{what} split is empty")))?;
    let dim = first.0.dim();
    for (index, (emb, tree)) in examples.iter().enumerate() {
        if emb.dim() != dim {
            return Err(Error::dimension(
                format!("{what} embedding dim at sentence {index}"),
                dim,
                emb.dim(),
            ));
        }
        if emb.n() != tree.n() {
            return Err(Error::Alignment {
                index,
                message: format!("{what}: {} embedding rows for {} words", emb.n(), tree.n()),
            });
        }
    }
    Ok(dim)
}

/// Mean objective over a whole split, without dropout.
pub fn evaluate_loss(
    kind: ModelKind,
    params: &ProbeParams,
    examples: &[Example<'_>],
    squared: bool,
) -> Result<f64> {
    Ok(batch_objective(kind, params, examples, squared)?.value)
}

/// Trains one model; see [`train_with_progress`].
pub fn train(
    config: &TrainConfig,
    train: &[Example<'_>],
    dev: &[Example<'_>],
) -> Result<TrainRecord> {
    train_with_progress(config, train, dev, |_| {})
}

/// Trains with Adam, evaluating the dev objective after every epoch and
/// stopping once it has not improved for `patience` consecutive epochs.
/// The returned parameters are those of the best dev epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    train: &[Example<'_>],
    dev: &[Example<'_>],
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainRecord> {
    let started = Instant::now();
    config.validate()?;
    let dim = check_examples("train", train)?;
    let dev_dim = check_examples("dev", dev)?;
    if dev_dim != dim {
        return Err(Error::dimension("dev embedding dim", dim, dev_dim));
    }
    let rank = config.rank.resolve(dim)?;
    let squared = config.squared();
    let kind = config.model_kind;

    let mut params = ProbeParams::init_uniform(rank, dim, config.seed)?;
    let mut optimiser = Adam::new(config.learning_rate, (rank, dim));
    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut dropout_rng = rng::stream(config.seed, "dropout");

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ProbeParams)> = None;
    let mut since_improvement = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut seen_loss = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let dropped: Vec<EmbeddingSequence> = chunk
                .iter()
                .map(|&k| apply_dropout(train[k].0, config.dropout_rate, &mut dropout_rng))
                .collect::<Result<_>>()?;
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .zip(&dropped)
                .map(|(&k, emb)| (emb, train[k].1))
                .collect();
            let loss = batch_objective(kind, &params, &batch, squared)?;
            if !loss.value.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index + 1,
                    loss: loss.value,
                });
            }
            seen_loss += loss.value * chunk.len() as f64;
            optimiser.step(params.matrix_mut(), &loss.grad);
        }

        let dev_loss = evaluate_loss(kind, &params, dev, squared)?;
        if !dev_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                loss: dev_loss,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: seen_loss / train.len() as f64,
            dev_loss,
        };
        progress(&stats);
        epochs.push(stats);

        let improved = match &best {
            None => true,
            Some((_, best_loss, _)) => {
                dev_loss < best_loss - IMPROVEMENT_TOLERANCE * best_loss.abs()
            }
        };
        if improved {
            best = Some((epoch, dev_loss, params.clone()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (best_epoch, best_dev_loss, best_params) = match best {
        Some(b) => b,
        // max_epochs == 0: report the initial parameters.
        None => (0, evaluate_loss(kind, &params, dev, squared)?, params),
    };

    Ok(TrainRecord {
        config: config.clone(),
        rank,
        dim,
        squared,
        epochs,
        best_epoch,
        best_dev_loss,
        stop_reason,
        params: best_params,
        wall_clock: started.elapsed(),
    })
}

#[derive(Debug)]
pub struct Trial {
    pub index: usize,
    pub config: TrainConfig,
    pub outcome: std::result::Result<TrainRecord, String>,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn best(&self) -> (&TrainConfig, &TrainRecord) {
        let trial = &self.trials[self.best_index];
        let record = trial.outcome.as_ref().expect("best trial succeeded");
        (&trial.config, record)
    }

    /// One row per trial: index, rank, learning rate, dropout, best dev loss.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "best_trial\t{}", self.best_index);
        let _ = writeln!(out, "trials\t{}", self.trials.len());
        out.push('\n');
        out.push_str(
            "trial\trank\tlearning_rate\tdropout_rate\tbest_epoch\tbest_dev_loss\tstatus\n",
        );
        for t in &self.trials {
            let (epoch, loss, status) = match &t.outcome {
                Ok(r) => (
                    r.best_epoch.to_string(),
                    r.best_dev_loss.to_string(),
                    "ok".to_string(),
                ),
                Err(e) => ("-".into(), "-".into(), format!("aborted: {e}")),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.index,
                t.config.rank,
                t.config.learning_rate,
                t.config.dropout_rate,
                epoch,
                loss,
                status
            );
        }
        out
    }
}

/// Trains every sampled configuration (up to `jobs` at a time) and keeps the
/// one with the lowest best dev loss; ties go to the earliest trial.
pub fn random_search(
    space: &SearchSpace,
    base: &TrainConfig,
    train_set: &[Example<'_>],
    dev_set: &[Example<'_>],
    jobs: usize,
) -> Result<SearchOutcome> {
    let dim = check_examples("train", train_set)?;
    let configs = space.sample(base, dim)?;

    let run = |(index, config): (usize, TrainConfig)| {
        let outcome = train(&config, train_set, dev_set).map_err(|e| e.to_string());
        Trial {
            index,
            config,
            outcome,
        }
    };
    let indexed: Vec<(usize, TrainConfig)> = configs.into_iter().enumerate().collect();
    let trials: Vec<Trial> = if jobs <= 1 {
        indexed.into_iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config("jobs", e.to_string()))?;
        pool.install(|| indexed.into_par_iter().map(run).collect())
    };

    let mut best: Option<(usize, f64)> = None;
    for t in &trials {
        if let Ok(record) = &t.outcome {
            if best.is_none_or(|(_, loss)| record.best_dev_loss < loss) {
                best = Some((t.index, record.best_dev_loss));
            }
        }
    }
    match best {
        Some((best_index, _)) => Ok(SearchOutcome { best_index, trials }),
        None => Err(Error::SearchFailed(
            trials
                .iter()
                .map(|t| format!("trial {}: {}", t.index, t.outcome.as_ref().err().unwrap()))
                .collect(),
        )),
    }
}
