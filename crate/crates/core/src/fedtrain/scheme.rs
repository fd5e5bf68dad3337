use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::quantize::quantize_params;
use super::{aggregate, draw_batch, local_gradient, pool_stats, TrainConfig};
use crate::cnn::{ModelState, Network, NormStats, ParamSet};
use crate::dataset::ShardedDataset;
use crate::rng::domain;
use crate::{Error, Result};

/// Everything a scheme may read while producing one round's update.
pub struct RoundContext<'a> {
    pub net: &'a Network,
    pub params: &'a ParamSet,
    pub state: &'a ModelState,
    pub dataset: &'a ShardedDataset,
    pub cfg: &'a TrainConfig,
    /// Zero-based.
    pub round: usize,
}

/// Descent direction handed to the momentum update.
#[derive(Debug, Clone)]
pub struct RoundUpdate {
    pub grad: ParamSet,
    pub loss: f64,
    pub stats: Vec<Option<NormStats>>,
}

pub trait TrainingScheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn round_update(&self, ctx: &RoundContext<'_>) -> Result<RoundUpdate>;

    /// Real numbers sent from the users to the base station in `round`.
    fn uplink(&self, dataset: &ShardedDataset, param_count: usize, round: usize) -> u64;
}

/// Training at the base station on the pooled shards.
#[derive(Debug, Clone, Copy, Default)]
pub struct Centralized;

impl TrainingScheme for Centralized {
    fn name(&self) -> &'static str {
        "cml"
    }

    fn round_update(&self, ctx: &RoundContext<'_>) -> Result<RoundUpdate> {
        let pool = ctx.dataset.pooled_train();
        if pool.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let batch = draw_batch(
            &pool,
            ctx.cfg.cml_batch,
            ctx.cfg.seed,
            &[domain::MINIBATCH, ctx.round as u64, 0],
        );
        let lg = ctx
            .net
            .loss_and_grad(ctx.params, ctx.state, &batch, ctx.cfg.dropout_seed(ctx.round))?;
        Ok(RoundUpdate {
            grad: lg.grad,
            loss: lg.loss,
            stats: lg.stats,
        })
    }

    /// The whole raw dataset is shipped once, before the first round.
    fn uplink(&self, dataset: &ShardedDataset, _param_count: usize, round: usize) -> u64 {
        if round == 0 {
            dataset.total_elements()
        } else {
            0
        }
    }
}

/// Synchronous federated averaging of per-user gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct Federated;

impl TrainingScheme for Federated {
    fn name(&self) -> &'static str {
        "fl"
    }

    fn round_update(&self, ctx: &RoundContext<'_>) -> Result<RoundUpdate> {
        let bits = ctx.cfg.quant_bits;
        let broadcast = match bits {
            Some(b) => quantize_params(ctx.params, b)?,
            None => ctx.params.clone(),
        };
        let per_user: Vec<Result<(ParamSet, f64, Vec<Option<NormStats>>)>> = ctx
            .dataset
            .shards
            .par_iter()
            .enumerate()
            .map(|(k, shard)| {
                let lg = local_gradient(ctx.net, &broadcast, ctx.state, shard, ctx.cfg, ctx.round, k)?;
                let grad = match bits {
                    Some(b) => quantize_params(&lg.grad, b)?,
                    None => lg.grad,
                };
                Ok((grad, lg.loss, lg.stats))
            })
            .collect();
        let mut grads = Vec::with_capacity(per_user.len());
        let mut stats = Vec::with_capacity(per_user.len());
        let mut loss = 0.0;
        for r in per_user {
            let (g, l, s) = r?;
            grads.push(g);
            loss += l;
            stats.push(s);
        }
        loss /= grads.len().max(1) as f64;
        Ok(RoundUpdate {
            grad: aggregate(&grads)?,
            loss,
            stats: pool_stats(&stats),
        })
    }

    fn uplink(&self, dataset: &ShardedDataset, param_count: usize, _round: usize) -> u64 {
        (dataset.k_users * param_count) as u64
    }
}

/// Training schemes addressable by name.
#[derive(Clone, Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<&'static str, Arc<dyn TrainingScheme>>,
}

impl SchemeRegistry {
    pub fn with_builtin() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(Centralized));
        r.register(Arc::new(Federated));
        r
    }

    /// Adds `scheme`, replacing any scheme already registered under its name.
    pub fn register(&mut self, scheme: Arc<dyn TrainingScheme>) {
        self.schemes.insert(scheme.name(), scheme);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TrainingScheme>> {
        self.schemes.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown training mode {name:?}; expected one of {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.schemes.keys().copied().collect()
    }
}
