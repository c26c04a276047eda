//! Random hyperparameter search over encoder width, head width, dropout and
//! weight decay.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, Result, TrainConfig, TrainError, TrainHistory};
use crate::data::{sha256_hex, Dataset};
use crate::models::{EncoderKind, Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub d_model: Vec<usize>,
    pub fc_width: Vec<usize>,
    pub dropout: Vec<f64>,
    /// Log-uniform range for the L2 coefficient.
    pub weight_decay: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            d_model: vec![32, 64, 128],
            fc_width: vec![256, 512, 1024],
            dropout: vec![0.0, 0.1, 0.3],
            weight_decay: (1e-7, 1e-4),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.d_model.is_empty() || self.fc_width.is_empty() || self.dropout.is_empty() {
            return Err(TrainError::Config("search space has an empty axis".into()));
        }
        let (lo, hi) = self.weight_decay;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(TrainError::Config(format!("weight_decay range ({lo}, {hi}) is not a positive interval")));
        }
        Ok(())
    }

    pub fn sample(&self, encoder: EncoderKind, code_vocab: usize, rng: &mut ChaCha8Rng) -> ModelConfig {
        let d = self.d_model[rng.random_range(0..self.d_model.len())];
        let fc = self.fc_width[rng.random_range(0..self.fc_width.len())];
        let mut cfg = ModelConfig::new(encoder, if encoder == EncoderKind::Bow { 0 } else { d }, fc);
        cfg.dropout = self.dropout[rng.random_range(0..self.dropout.len())];
        let (lo, hi) = self.weight_decay;
        cfg.weight_decay = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        cfg.code_vocab = code_vocab;
        cfg.seed = rng.random();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: ModelConfig,
    pub config_hash: String,
    pub val_loss: f64,
    pub history: TrainHistory,
}

#[derive(Debug)]
pub struct SearchResult {
    /// Sorted by validation loss, ties broken by config hash.
    pub leaderboard: Vec<Trial>,
    pub best: Model,
}

pub fn config_hash(cfg: &ModelConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

/// Trains `trials` sampled configs on up to `jobs` threads. The leaderboard
/// does not depend on `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    encoder: EncoderKind,
    space: &SearchSpace,
    code_vocab: usize,
    trials: usize,
    train: &Dataset,
    val: &Dataset,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<SearchResult> {
    space.validate()?;
    if trials == 0 {
        return Err(TrainError::Config("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let configs: Vec<ModelConfig> = (0..trials).map(|_| space.sample(encoder, code_vocab, &mut rng)).collect();

    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<(Trial, Model)>>>> = Mutex::new((0..trials).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, trials) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= trials {
                    break;
                }
                let cfg = configs[i].clone();
                let out = Model::build(cfg.clone())
                    .map_err(TrainError::from)
                    .and_then(|m| fit(m, train, val, train_cfg))
                    .map(|(model, history)| {
                        let trial = Trial {
                            config_hash: config_hash(&cfg),
                            val_loss: model.meta.best_val_loss.unwrap_or(f64::INFINITY),
                            config: cfg,
                            history,
                        };
                        (trial, model)
                    });
                results.lock().expect("lock")[i] = Some(out);
            });
        }
    });

    let mut done = Vec::with_capacity(trials);
    for r in results.into_inner().expect("lock") {
        done.push(r.expect("every trial ran")?);
    }
    done.sort_by(|(a, _), (b, _)| {
        a.val_loss
            .total_cmp(&b.val_loss)
            .then_with(|| a.config_hash.cmp(&b.config_hash))
    });
    let mut iter = done.into_iter();
    let (first, best) = iter.next().expect("at least one trial");
    let mut leaderboard = vec![first];
    leaderboard.extend(iter.map(|(t, _)| t));
    Ok(SearchResult { leaderboard, best })
}
