//! Sum-rate evaluation of beamforming methods over multi-user drops.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::{hybrid_from_labels, identity_fallback, sector_dictionary, somp_precoder, sum_rate};
use super::{BeamformerSet, MultiUserChannel, RateFormula};
use crate::channel::{add_channel_noise_with, normalize_to, ArrayConfig};
use crate::cnn::{ModelState, Network, ParamSet};
use crate::dataset::{channel_from_tensor, make_tensor, reshape_pi_into, ShardedDataset};
use crate::rng::{derive_seed, domain, substream};
use crate::{Error, Result};

/// `K` simultaneously served users, one validation sample each.
#[derive(Debug, Clone)]
pub struct EvalDrop {
    pub index: usize,
    /// Reference channels, each rescaled to energy `N_T`.
    pub channels: Vec<Vec<Complex64>>,
    pub labels: Vec<usize>,
}

/// Groups the validation set into drops: drop `i` holds the `i`-th
/// validation sample of every user, so each user keeps its own angular
/// region. Users with more samples than the smallest user leave the rest
/// unused.
pub fn drops_from_validation(dataset: &ShardedDataset) -> Result<Vec<EvalDrop>> {
    let mut per_user: Vec<Vec<_>> = vec![Vec::new(); dataset.k_users];
    for s in &dataset.validation {
        if s.user_id == 0 || s.user_id > dataset.k_users {
            return Err(Error::Format(format!("validation sample with user id {}", s.user_id)));
        }
        per_user[s.user_id - 1].push(s);
    }
    let count = per_user.iter().map(Vec::len).min().unwrap_or(0);
    (0..count)
        .map(|i| {
            let mut channels = Vec::with_capacity(dataset.k_users);
            let mut labels = Vec::with_capacity(dataset.k_users);
            for user in &per_user {
                let s = user[i];
                let mut h = channel_from_tensor(&s.x, dataset.rows, dataset.cols)?;
                normalize_to(&mut h, dataset.n_t as f64)?;
                channels.push(h);
                labels.push(s.label);
            }
            Ok(EvalDrop {
                index: i,
                channels,
                labels,
            })
        })
        .collect()
}

/// Settings shared by every method in one evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub array: ArrayConfig,
    pub rows: usize,
    pub cols: usize,
    pub q_classes: usize,
    pub sigma2: f64,
    pub formula: RateFormula,
    pub seed: u64,
}

impl EvalContext {
    pub fn for_dataset(dataset: &ShardedDataset, sigma2: f64, formula: RateFormula, seed: u64) -> Result<Self> {
        Ok(Self {
            array: ArrayConfig::half_wavelength(dataset.n_t)?,
            rows: dataset.rows,
            cols: dataset.cols,
            q_classes: dataset.q_classes,
            sigma2,
            formula,
            seed,
        })
    }
}

/// One drop as observed at the base station at a test SNR.
pub struct Observation<'a> {
    pub drop: &'a EvalDrop,
    pub snr_db: f64,
    /// Noisy channels rescaled to energy `N_T`.
    pub noisy_channels: Vec<Vec<Complex64>>,
    pub noisy_tensors: Vec<Vec<f64>>,
}

/// What a method proposes for one drop.
#[derive(Debug, Clone)]
pub struct Design {
    pub beamformer: BeamformerSet,
    /// Labels scored against the drop's true labels.
    pub labels: Vec<usize>,
    pub fallback: bool,
}

pub trait BeamformingMethod: Send + Sync {
    fn name(&self) -> &str;

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> Result<Design>;

    /// Whether this method's accuracy counts exact per-user label matches
    /// (`true`) or membership of true labels in an unordered atom set.
    fn ordered_labels(&self) -> bool {
        true
    }

    /// Whether frequent zero-forcing failures indicate a numeric fault.
    fn strict(&self) -> bool {
        false
    }
}

/// Steering columns from `labels`, ZF on the reference channels, identity
/// baseband when ZF is impossible.
pub fn design_from_labels(obs: &Observation<'_>, ctx: &EvalContext, labels: Vec<usize>) -> Result<Design> {
    let ch = MultiUserChannel::new(&obs.drop.channels, ctx.sigma2)?;
    match hybrid_from_labels(&ch, &labels, ctx.q_classes, &ctx.array) {
        Ok(beamformer) => Ok(Design {
            beamformer,
            labels,
            fallback: false,
        }),
        Err(Error::Singular(_)) => Ok(Design {
            beamformer: identity_fallback(&labels, ctx.q_classes, &ctx.array)?,
            labels,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

/// Labels predicted by a trained network from the noisy tensors.
pub struct LearnedMethod {
    name: String,
    net: Network,
    params: ParamSet,
    state: ModelState,
}

impl LearnedMethod {
    pub fn new(name: impl Into<String>, net: Network, params: ParamSet, state: ModelState) -> Self {
        Self {
            name: name.into(),
            net,
            params,
            state,
        }
    }
}

impl BeamformingMethod for LearnedMethod {
    fn name(&self) -> &str {
        &self.name
    }

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> Result<Design> {
        let inputs: Vec<&[f64]> = obs.noisy_tensors.iter().map(Vec::as_slice).collect();
        let labels = self.net.predict_many(&self.params, &self.state, &inputs)?;
        design_from_labels(obs, ctx, labels)
    }
}

/// True sector labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleLabels;

impl BeamformingMethod for OracleLabels {
    fn name(&self) -> &str {
        "oracle"
    }

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> Result<Design> {
        design_from_labels(obs, ctx, obs.drop.labels.clone())
    }

    fn strict(&self) -> bool {
        true
    }
}

/// Uniformly random labels, seeded per drop and test SNR.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomLabels;

impl BeamformingMethod for RandomLabels {
    fn name(&self) -> &str {
        "random"
    }

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> Result<Design> {
        let mut rng = substream(
            ctx.seed,
            &[domain::RANDOM_LABELS, obs.snr_db.to_bits(), obs.drop.index as u64],
        );
        let labels = (0..obs.drop.labels.len())
            .map(|_| rng.random_range(1..=ctx.q_classes))
            .collect();
        design_from_labels(obs, ctx, labels)
    }
}

/// Model-based baseline: SOMP over the sector dictionary, fitted to the
/// ZF precoder of the noisy channel estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct Somp;

impl BeamformingMethod for Somp {
    fn name(&self) -> &str {
        "somp"
    }

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> Result<Design> {
        let estimate = MultiUserChannel::new(&obs.noisy_channels, ctx.sigma2)?;
        let dictionary = sector_dictionary(ctx.q_classes, &ctx.array)?;
        match somp_precoder(&estimate, &dictionary) {
            Ok(out) => Ok(Design {
                beamformer: out.beamformer,
                labels: out.atoms.iter().map(|a| a + 1).collect(),
                fallback: false,
            }),
            Err(Error::Singular(_)) => {
                let labels = obs.drop.labels.iter().map(|_| 1).collect::<Vec<_>>();
                Ok(Design {
                    beamformer: identity_fallback(&labels, ctx.q_classes, &ctx.array)?,
                    labels,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    fn ordered_labels(&self) -> bool {
        false
    }
}

/// Beamforming methods in reporting order, unique by name.
#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: Vec<Arc<dyn BeamformingMethod>>,
}

impl MethodRegistry {
    /// SOMP, oracle and random-label references.
    pub fn with_references() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(Somp));
        r.register(Arc::new(OracleLabels));
        r.register(Arc::new(RandomLabels));
        r
    }

    /// Appends `method`, or replaces the one with the same name in place.
    pub fn register(&mut self, method: Arc<dyn BeamformingMethod>) {
        match self.methods.iter().position(|m| m.name() == method.name()) {
            Some(i) => self.methods[i] = method,
            None => self.methods.push(method),
        }
    }

    /// Puts `method` ahead of everything registered so far.
    pub fn register_first(&mut self, method: Arc<dyn BeamformingMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.insert(0, method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn BeamformingMethod>> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown beamforming method {name:?}")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name()).collect()
    }

    pub fn methods(&self) -> &[Arc<dyn BeamformingMethod>] {
        &self.methods
    }
}

/// Test-SNR corrupted view of `drop`.
pub fn observe<'a>(drop: &'a EvalDrop, snr_db: f64, ctx: &EvalContext) -> Result<Observation<'a>> {
    let mut noisy_channels = Vec::with_capacity(drop.channels.len());
    let mut noisy_tensors = Vec::with_capacity(drop.channels.len());
    for (k, h) in drop.channels.iter().enumerate() {
        let mut rng = substream(
            ctx.seed,
            &[domain::TEST_NOISE, snr_db.to_bits(), drop.index as u64, k as u64],
        );
        let noisy = add_channel_noise_with(h, snr_db, &mut rng);
        noisy_tensors.push(make_tensor(&reshape_pi_into(&noisy, ctx.rows, ctx.cols)?));
        let mut scaled = noisy;
        normalize_to(&mut scaled, h.len() as f64)?;
        noisy_channels.push(scaled);
    }
    Ok(Observation {
        drop,
        snr_db,
        noisy_channels,
        noisy_tensors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub mean_sum_rate: f64,
    pub accuracy: f64,
    pub fallbacks: usize,
    pub drops: usize,
}

fn label_hits(design: &[usize], truth: &[usize], ordered: bool) -> usize {
    if ordered {
        design.iter().zip(truth).filter(|(a, b)| a == b).count()
    } else {
        let mut pool = design.to_vec();
        truth
            .iter()
            .filter(|t| match pool.iter().position(|p| p == *t) {
                Some(i) => {
                    pool.swap_remove(i);
                    true
                }
                None => false,
            })
            .count()
    }
}

/// Scores one method over all drops at one test SNR.
pub fn score_method(
    method: &dyn BeamformingMethod,
    observations: &[Observation<'_>],
    ctx: &EvalContext,
) -> Result<MethodScore> {
    let per_drop: Vec<Result<(f64, usize, usize, bool)>> = observations
        .par_iter()
        .map(|obs| {
            let design = method.design(obs, ctx)?;
            let ch = MultiUserChannel::new(&obs.drop.channels, ctx.sigma2)?;
            let rate = sum_rate(&ch, &design.beamformer, ctx.formula)?;
            let hits = label_hits(&design.labels, &obs.drop.labels, method.ordered_labels());
            Ok((rate, hits, obs.drop.labels.len(), design.fallback))
        })
        .collect();
    let (mut rate, mut hits, mut users, mut fallbacks) = (0.0, 0, 0, 0);
    for r in per_drop {
        let (r_, h, u, f) = r?;
        rate += r_;
        hits += h;
        users += u;
        fallbacks += usize::from(f);
    }
    let drops = observations.len();
    if method.strict() && 2 * fallbacks > drops {
        return Err(Error::Singular(format!(
            "{}: zero forcing failed on {fallbacks} of {drops} drops",
            method.name()
        )));
    }
    Ok(MethodScore {
        mean_sum_rate: if drops == 0 { 0.0 } else { rate / drops as f64 },
        accuracy: if users == 0 { 0.0 } else { hits as f64 / users as f64 },
        fallbacks,
        drops,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub snr_db: f64,
    pub method: String,
    pub score: MethodScore,
}

/// Mean sum-rate and label accuracy of every registered method at every
/// test SNR. Predictions use test-SNR corrupted tensors while zero forcing
/// and scoring use the reference channels.
pub fn evaluate_beamforming(
    methods: &MethodRegistry,
    drops: &[EvalDrop],
    snr_test_db: &[f64],
    ctx: &EvalContext,
) -> Result<Vec<RateRow>> {
    if drops.is_empty() {
        return Err(Error::Config("no evaluation drops: validation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(snr_test_db.len() * methods.methods().len());
    for &snr in snr_test_db {
        if snr.is_nan() {
            return Err(Error::Config("test SNR is NaN".into()));
        }
        let observations = drops
            .iter()
            .map(|d| observe(d, snr, ctx))
            .collect::<Result<Vec<_>>>()?;
        for m in methods.methods() {
            rows.push(RateRow {
                snr_db: snr,
                method: m.name().to_string(),
                score: score_method(m.as_ref(), &observations, ctx)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_rate_csv<W: Write>(rows: &[RateRow], mut w: W) -> Result<()> {
    writeln!(w, "snr_db,method,mean_sum_rate,accuracy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6}",
            r.snr_db, r.method, r.score.mean_sum_rate, r.score.accuracy
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Seed used for test noise and random labels when none is configured.
pub fn default_eval_seed(master: u64) -> u64 {
    derive_seed(master, &[domain::TEST_NOISE])
}
