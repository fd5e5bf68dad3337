//! Flat experiment configuration.
//!
//! A config file is one TOML table with no sections. Every key is optional
//! and falls back to the desk profile; unknown keys are rejected. Command
//! line overrides are applied to the parsed table before validation, so a
//! flag and the matching file key behave identically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flhb::beamform::RateFormula;
use flhb::channel::{ArrayConfig, Scenario};
use flhb::cnn::ModelSpec;
use flhb::dataset::DatasetSpec;
use flhb::fedtrain::{LocalBatch, TrainConfig};
use flhb::{Error, Result};

/// Local batch as written in a config: a size or `"full-shard"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSetting {
    Size(usize),
    Named(String),
}

impl BatchSetting {
    fn resolve(&self) -> Result<LocalBatch> {
        match self {
            Self::Size(0) => Err(Error::Config("fl_local_batch must be at least 1".into())),
            Self::Size(n) => Ok(LocalBatch::Size(*n)),
            Self::Named(s) if s == "full-shard" => Ok(LocalBatch::FullShard),
            Self::Named(s) => Err(Error::Config(format!(
                "fl_local_batch must be a size or \"full-shard\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // dataset
    pub n_t: usize,
    pub d_over_lambda: f64,
    pub n_realizations: usize,
    pub g_noisy_copies: usize,
    pub k_users: usize,
    pub q_classes: usize,
    pub snr_train_db: Vec<f64>,
    pub scenario: u32,
    pub split_fraction: f64,
    pub seed: u64,
    pub l_paths: usize,
    pub angle_spread_deg: f64,

    // model
    pub model: String,
    pub filters: usize,
    pub kernel: usize,
    pub fc_units: usize,
    pub dropout: f64,
    pub mlp_hidden: Vec<usize>,

    // training
    pub mode: String,
    pub eta: f64,
    pub gamma: f64,
    pub rounds: usize,
    pub cml_batch: usize,
    pub fl_local_batch: BatchSetting,
    pub quant_bits: Option<u32>,
    pub norm_momentum: f64,
    pub train_seed: Option<u64>,

    // evaluation
    pub snr_test_db: Vec<f64>,
    pub sigma2: f64,
    pub rate_formula: RateFormula,
    pub eval_seed: Option<u64>,

    // quantization sweep
    pub sweep_bits: Vec<u32>,

    // outputs
    pub data_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub rates_path: PathBuf,
    pub overhead_path: PathBuf,
    pub quant_path: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ds = DatasetSpec::default();
        Self {
            n_t: ds.array.n_t,
            d_over_lambda: ds.array.d_over_lambda,
            n_realizations: ds.n_realizations,
            g_noisy_copies: ds.g_noisy_copies,
            k_users: ds.k_users,
            q_classes: ds.q_classes,
            snr_train_db: ds.snr_train_db,
            scenario: ds.scenario.index(),
            split_fraction: ds.split_fraction,
            seed: ds.master_seed,
            l_paths: ds.l_paths,
            angle_spread_deg: ds.angle_spread_deg,
            model: "cnn".into(),
            filters: 32,
            kernel: 3,
            fc_units: 128,
            dropout: 0.5,
            mlp_hidden: vec![128],
            mode: "fl".into(),
            eta: 0.01,
            gamma: 0.9,
            rounds: 50,
            cml_batch: 256,
            fl_local_batch: BatchSetting::Size(256),
            quant_bits: None,
            norm_momentum: 0.9,
            train_seed: None,
            snr_test_db: (-4..=4).map(|i| f64::from(i * 5)).collect(),
            sigma2: 1.0,
            rate_formula: RateFormula::Standard,
            eval_seed: None,
            sweep_bits: (1..=8).collect(),
            data_path: "out/dataset.bin".into(),
            checkpoint_path: "out/model.ckpt".into(),
            metrics_path: "out/metrics.csv".into(),
            rates_path: "out/rates.csv".into(),
            overhead_path: "out/overhead.csv".into(),
            quant_path: "out/quant.csv".into(),
        }
    }
}

/// Parses `key=value`, reading the value as TOML and falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let key = key.trim().to_string();
    if key.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults), applies overrides in order
    /// and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec()?.validate()?;
        self.model_spec(&self.model, self.grid(), self.q_classes)?;
        self.train_config()?.validate()?;
        flhb::fedtrain::SchemeRegistry::with_builtin().get(&self.mode)?;
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.snr_test_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("snr_test_db contains NaN".into()));
        }
        for &b in &self.sweep_bits {
            flhb::fedtrain::quantize::check_bits(b)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        flhb::dataset::grid_shape(self.n_t)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let spec = DatasetSpec {
            array: ArrayConfig::new(self.n_t, self.d_over_lambda)?,
            n_realizations: self.n_realizations,
            g_noisy_copies: self.g_noisy_copies,
            k_users: self.k_users,
            q_classes: self.q_classes,
            snr_train_db: self.snr_train_db.clone(),
            scenario: Scenario::from_index(self.scenario)?,
            split_fraction: self.split_fraction,
            master_seed: self.seed,
            l_paths: self.l_paths,
            angle_spread_deg: self.angle_spread_deg,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Architecture `kind` (`cnn` or `mlp`) for a `rows x cols` grid.
    pub fn model_spec(&self, kind: &str, (rows, cols): (usize, usize), classes: usize) -> Result<ModelSpec> {
        match kind {
            "cnn" => ModelSpec::cnn(rows, cols, classes, self.filters, self.kernel, self.fc_units, self.dropout),
            "mlp" => ModelSpec::mlp(rows, cols, classes, &self.mlp_hidden),
            other => Err(Error::Config(format!("unknown model {other:?}; expected cnn or mlp"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            mode: self.mode.clone(),
            eta: self.eta,
            gamma: self.gamma,
            rounds: self.rounds,
            cml_batch: self.cml_batch,
            fl_local_batch: self.fl_local_batch.resolve()?,
            quant_bits: self.quant_bits,
            seed: self.train_seed.unwrap_or(self.seed),
            norm_momentum: self.norm_momentum,
        })
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed
            .unwrap_or_else(|| flhb::beamform::default_eval_seed(self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
        assert_eq!(ExperimentConfig::load(None, &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_parse_as_toml() {
        assert_eq!(parse_override("rounds=7").unwrap().1, toml::Value::Integer(7));
        assert_eq!(parse_override("mode=cml").unwrap().1, toml::Value::String("cml".into()));
        assert_eq!(
            parse_override("fl_local_batch=full-shard").unwrap().1,
            toml::Value::String("full-shard".into())
        );
        assert!(matches!(
            parse_override("snr_test_db=[1, 2.5]").unwrap().1,
            toml::Value::Array(_)
        ));
        assert!(parse_override("rounds").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for o in ["colour=1", "eta=-1", "quant_bits=17", "scenario=3", "model=\"rnn\"", "fl_local_batch=half"] {
            let ov = parse_override(o).unwrap();
            assert!(matches!(ExperimentConfig::load(None, &[ov]), Err(Error::Config(_))), "{o}");
        }
    }

    #[test]
    fn full_shard_resolves() {
        let ov = parse_override("fl_local_batch=full-shard").unwrap();
        let cfg = ExperimentConfig::load(None, &[ov]).unwrap();
        assert_eq!(cfg.train_config().unwrap().fl_local_batch, LocalBatch::FullShard);
    }
}
