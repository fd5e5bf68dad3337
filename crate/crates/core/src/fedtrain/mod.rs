//! Centralized and federated training.
//!
//! Both loops share one momentum update at the base station,
//! `theta_{t+1} = theta_t - eta * g_t + gamma * (theta_t - theta_{t-1})`,
//! and differ only in how the descent direction `g_t` is obtained. That
//! difference is a [`TrainingScheme`], looked up by name in a
//! [`SchemeRegistry`].

pub mod metrics;
pub mod quantize;
mod scheme;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cnn::{LossGrad, ModelSpec, ModelState, Network, NormStats, ParamSet};
use crate::dataset::{Sample, ShardedDataset};
use crate::rng::{derive_seed, domain, substream};
use crate::{Error, Result};
pub use metrics::RoundMetrics;
pub use scheme::{Centralized, Federated, RoundContext, RoundUpdate, SchemeRegistry, TrainingScheme};

/// How much of its shard a user feeds into one local gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalBatch {
    FullShard,
    /// One mini-batch of `min(size, shard)` samples drawn without
    /// replacement each round.
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Registered scheme name, `"cml"` or `"fl"` out of the box.
    pub mode: String,
    pub eta: f64,
    pub gamma: f64,
    pub rounds: usize,
    /// Mini-batch size for centralized training; batches at least as large
    /// as the pooled dataset use all of it.
    pub cml_batch: usize,
    pub fl_local_batch: LocalBatch,
    pub quant_bits: Option<u32>,
    pub seed: u64,
    /// Weight of the previous value in the running normalization averages.
    pub norm_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: "fl".into(),
            eta: 0.001,
            gamma: 0.9,
            rounds: 30,
            cml_batch: 256,
            fl_local_batch: LocalBatch::Size(256),
            quant_bits: None,
            seed: 1,
            norm_momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.cml_batch == 0 || self.fl_local_batch == LocalBatch::Size(0) {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            return Err(Error::Config("norm_momentum must lie in [0, 1]".into()));
        }
        if let Some(bits) = self.quant_bits {
            quantize::check_bits(bits)?;
        }
        Ok(())
    }

    /// Seed of the dropout masks used in `round`.
    pub fn dropout_seed(&self, round: usize) -> u64 {
        derive_seed(self.seed, &[domain::DROPOUT, round as u64])
    }
}

/// Draws `size` distinct samples (or all of them) for one gradient.
pub(crate) fn draw_batch<'a>(pool: &[&'a Sample], size: usize, seed: u64, path: &[u64]) -> Vec<&'a Sample> {
    if size >= pool.len() {
        return pool.to_vec();
    }
    let mut rng = substream(seed, path);
    let mut picked = index::sample(&mut rng, pool.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

/// Mean gradient of user `user` (0-based) at `params` over its shard, or
/// over one seeded mini-batch of it.
pub fn local_gradient(
    net: &Network,
    params: &ParamSet,
    state: &ModelState,
    shard: &[Sample],
    cfg: &TrainConfig,
    round: usize,
    user: usize,
) -> Result<LossGrad> {
    if shard.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pool: Vec<&Sample> = shard.iter().collect();
    let batch = match cfg.fl_local_batch {
        LocalBatch::FullShard => pool,
        LocalBatch::Size(b) => draw_batch(&pool, b, cfg.seed, &[domain::MINIBATCH, round as u64, user as u64 + 1]),
    };
    net.loss_and_grad(params, state, &batch, cfg.dropout_seed(round))
}

/// Elementwise mean, summed in user order.
pub fn aggregate(gradients: &[ParamSet]) -> Result<ParamSet> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    let mut sum = first.clone();
    for g in &gradients[1..] {
        sum.check_shape(g)?;
        sum.values.iter_mut().zip(&g.values).for_each(|(s, v)| *s += v);
    }
    let k = gradients.len() as f64;
    sum.values.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

/// `theta - eta * grad + gamma * (theta - prev)`.
pub fn momentum_update(theta: &ParamSet, prev: &ParamSet, grad: &ParamSet, eta: f64, gamma: f64) -> Result<ParamSet> {
    theta.check_shape(prev)?;
    theta.check_shape(grad)?;
    let values = theta
        .values
        .iter()
        .zip(&prev.values)
        .zip(&grad.values)
        .map(|((&t, &p), &g)| t - eta * g + gamma * (t - p))
        .collect();
    theta.with_values(values)
}

/// Pools per-user normalization statistics layer by layer.
pub(crate) fn pool_stats(parts: &[Vec<Option<NormStats>>]) -> Vec<Option<NormStats>> {
    let layers = parts.first().map_or(0, Vec::len);
    (0..layers)
        .map(|l| {
            let stats: Vec<&NormStats> = parts.iter().filter_map(|p| p[l].as_ref()).collect();
            NormStats::pool(&stats)
        })
        .collect()
}

/// Parameters at the current and previous round plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ParamSet,
    pub prev: ParamSet,
    pub state: ModelState,
}

impl Trajectory {
    /// Starts with zero momentum: `theta_{-1} = theta_0`.
    pub fn start(params: ParamSet, state: ModelState) -> Self {
        Self {
            prev: params.clone(),
            params,
            state,
        }
    }

    /// Applies one scheme round and returns its update.
    pub fn advance(
        &mut self,
        scheme: &dyn TrainingScheme,
        net: &Network,
        dataset: &ShardedDataset,
        cfg: &TrainConfig,
        round: usize,
    ) -> Result<RoundUpdate> {
        let update = scheme.round_update(&RoundContext {
            net,
            params: &self.params,
            state: &self.state,
            dataset,
            cfg,
            round,
        })?;
        if update.grad.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in round {}", round + 1)));
        }
        let next = momentum_update(&self.params, &self.prev, &update.grad, cfg.eta, cfg.gamma)?;
        net.update_running(&mut self.state, &update.stats, cfg.norm_momentum);
        self.prev = std::mem::replace(&mut self.params, next);
        Ok(update)
    }
}

/// One centralized momentum-SGD step on a seeded mini-batch of the pooled
/// training data.
pub fn cml_step(
    net: &Network,
    trajectory: &mut Trajectory,
    dataset: &ShardedDataset,
    cfg: &TrainConfig,
    round: usize,
) -> Result<RoundUpdate> {
    trajectory.advance(&Centralized, net, dataset, cfg, round)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub state: ModelState,
    pub history: Vec<RoundMetrics>,
}

/// Drives a scheme round by round and records metrics after each update.
pub struct Trainer<'a> {
    scheme: std::sync::Arc<dyn TrainingScheme>,
    net: &'a Network,
    dataset: &'a ShardedDataset,
    cfg: &'a TrainConfig,
    trajectory: Trajectory,
    round: usize,
    uplink: u64,
    history: Vec<RoundMetrics>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        registry: &SchemeRegistry,
        net: &'a Network,
        dataset: &'a ShardedDataset,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let scheme = registry.get(&cfg.mode)?;
        check_compatible(net, dataset)?;
        let (params, state) = net.init(cfg.seed);
        Ok(Self {
            scheme,
            net,
            dataset,
            cfg,
            trajectory: Trajectory::start(params, state),
            round: 0,
            uplink: 0,
            history: Vec::new(),
        })
    }

    pub fn with_start(mut self, params: ParamSet, state: ModelState) -> Self {
        self.trajectory = Trajectory::start(params, state);
        self
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.history
    }

    /// Advances one round without evaluating on the validation set.
    pub fn step_quiet(&mut self) -> Result<RoundUpdate> {
        let update = self
            .trajectory
            .advance(self.scheme.as_ref(), self.net, self.dataset, self.cfg, self.round)?;
        self.uplink += self.scheme.uplink(self.dataset, self.net.param_count(), self.round);
        self.round += 1;
        Ok(update)
    }

    pub fn step(&mut self) -> Result<&RoundMetrics> {
        let update = self.step_quiet()?;
        let (val_acc, user_accs) = metrics::validation_accuracy(
            self.net,
            &self.trajectory.params,
            &self.trajectory.state,
            self.dataset,
        )?;
        self.history.push(RoundMetrics {
            round: self.round,
            mode: self.scheme.name().to_string(),
            k_users: self.dataset.k_users,
            loss: update.loss,
            val_acc,
            user_accs,
            uplink_elems: self.uplink,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.round < self.cfg.rounds {
            self.step()?;
        }
        Ok(TrainOutcome {
            params: self.trajectory.params,
            state: self.trajectory.state,
            history: self.history,
        })
    }
}

fn check_compatible(net: &Network, dataset: &ShardedDataset) -> Result<()> {
    let shape = net.input_shape();
    if shape.channels != 3 || shape.height != dataset.rows || shape.width != dataset.cols {
        return Err(Error::Dimension(format!(
            "network input {}x{}x{} does not match {}x{}x3 tensors",
            shape.height, shape.width, shape.channels, dataset.rows, dataset.cols
        )));
    }
    if net.classes() != dataset.q_classes {
        return Err(Error::Dimension(format!(
            "network predicts {} classes, dataset has {}",
            net.classes(),
            dataset.q_classes
        )));
    }
    Ok(())
}

/// Trains `model` on `dataset` with the built-in schemes.
pub fn train(dataset: &ShardedDataset, model: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = Network::new(model)?;
    Trainer::new(&SchemeRegistry::with_builtin(), &net, dataset, cfg)?.run()
}

/// Largest relative gap `|theta_FL - theta_CML|_inf / |theta_CML|_inf` over
/// `rounds` full-batch rounds on equal shards. The micro network has no
/// normalization layer, since per-user batch statistics would make the two
/// schemes differ by design.
pub fn cross_mode_gap(k_users: usize, gamma: f64, rounds: usize, seed: u64) -> Result<f64> {
    use crate::cnn::LayerSpec::*;
    use crate::dataset::{build_dataset, DatasetSpec};
    let dataset = build_dataset(&DatasetSpec {
        n_realizations: 5,
        g_noisy_copies: 2,
        k_users,
        q_classes: 8,
        master_seed: seed,
        ..DatasetSpec::default()
    })?;
    let model = ModelSpec::new(vec![
        Input {
            rows: dataset.rows,
            cols: dataset.cols,
            channels: 3,
        },
        Conv2d {
            filters: 3,
            kernel_h: 3,
            kernel_w: 3,
        },
        Relu,
        FullyConnected { units: 8 },
        Dropout { p: 0.25 },
        FullyConnected { units: 8 },
        Softmax,
        Classification { classes: 8 },
    ])?;
    let net = Network::new(&model)?;
    let registry = SchemeRegistry::with_builtin();
    let cfg = |mode: &str| TrainConfig {
        mode: mode.into(),
        eta: 0.05,
        gamma,
        rounds,
        cml_batch: usize::MAX,
        fl_local_batch: LocalBatch::FullShard,
        seed,
        ..TrainConfig::default()
    };
    let (cml_cfg, fl_cfg) = (cfg("cml"), cfg("fl"));
    let mut cml = Trainer::new(&registry, &net, &dataset, &cml_cfg)?;
    let mut fl = Trainer::new(&registry, &net, &dataset, &fl_cfg)?;
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        cml.step_quiet()?;
        fl.step_quiet()?;
        let reference = &cml.trajectory().params;
        worst = worst.max(fl.trajectory().params.max_abs_diff(reference) / reference.max_abs());
    }
    Ok(worst)
}

/// Real numbers exchanged on the uplink by each approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    pub fl_elements: u64,
    pub cml_elements: u64,
    pub ratio: f64,
}

/// Federated cost is `rounds * p_model`, centralized cost is the raw
/// dataset `3 * N * G * K * N_T`.
pub fn overhead(n_real: u64, g_copies: u64, k_users: u64, n_t: u64, rounds: u64, p_model: u64) -> Result<OverheadReport> {
    if [n_real, g_copies, k_users, n_t, rounds, p_model].contains(&0) {
        return Err(Error::Config("overhead arguments must be positive".into()));
    }
    let fl_elements = rounds * p_model;
    let cml_elements = 3 * n_real * g_copies * k_users * n_t;
    Ok(OverheadReport {
        fl_elements,
        cml_elements,
        ratio: cml_elements as f64 / fl_elements as f64,
    })
}
