use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flhb::beamform::{
    drops_from_validation, evaluate_beamforming, write_rate_csv, EvalContext, LearnedMethod, MethodRegistry,
    RateFormula,
};
use flhb::cnn::{checkpoint, gradcheck, param_count_paper, ModelSpec, Network};
use flhb::dataset::{archive, generate, ShardedDataset};
use flhb::fedtrain::{self, metrics, overhead as overhead_report, SchemeRegistry, TrainConfig, Trainer};
use flhb::{Error, Result};

use crate::config::{parse_override, ExperimentConfig};
use crate::ConfigArgs;

fn load_config(args: &ConfigArgs, extra: Vec<(String, toml::Value)>) -> Result<ExperimentConfig> {
    let mut overrides = args
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    overrides.extend(extra);
    ExperimentConfig::load(args.config.as_deref(), &overrides)
}

/// Prefixes I/O errors with the offending path.
fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    at_path(path, (|| {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    })())
}

/// Loads an archive and checks it against the configured geometry.
fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<ShardedDataset> {
    let data = at_path(path, archive::load(path))?;
    if data.n_t != cfg.n_t || data.q_classes != cfg.q_classes || data.k_users != cfg.k_users {
        return Err(Error::Config(format!(
            "{} holds n_t={}, Q={}, K={} but the config says n_t={}, Q={}, K={}",
            path.display(),
            data.n_t,
            data.q_classes,
            data.k_users,
            cfg.n_t,
            cfg.q_classes,
            cfg.k_users
        )));
    }
    data.split(cfg.split_fraction)
}

fn model_for(cfg: &ExperimentConfig, ds: &ShardedDataset) -> Result<ModelSpec> {
    cfg.model_spec(&cfg.model, (ds.rows, ds.cols), ds.q_classes)
}

pub fn gen_data(args: &ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(args, Vec::new())?;
    let path = out.unwrap_or_else(|| cfg.data_path.clone());
    let data = generate(&cfg.dataset_spec()?)?;
    archive::write_archive(&data, create(&path)?)?;
    println!(
        "wrote {} samples ({}x{}x3, Q={}, K={}) to {}",
        data.sample_count(),
        data.rows,
        data.cols,
        data.q_classes,
        data.k_users,
        path.display()
    );
    Ok(())
}

fn train_with(cfg: &ExperimentConfig, ds: &ShardedDataset, tc: &TrainConfig) -> Result<(Network, fedtrain::TrainOutcome)> {
    let net = Network::new(&model_for(cfg, ds)?)?;
    let outcome = Trainer::new(&SchemeRegistry::with_builtin(), &net, ds, tc)?.run()?;
    Ok((net, outcome))
}

pub fn train(
    args: &ConfigArgs,
    data: Option<PathBuf>,
    mode: Option<String>,
    out_checkpoint: Option<PathBuf>,
    out_metrics: Option<PathBuf>,
    quant_bits: Option<u32>,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(m) = mode {
        extra.push(("mode".to_string(), toml::Value::String(m)));
    }
    if let Some(b) = quant_bits {
        extra.push(("quant_bits".to_string(), toml::Value::Integer(i64::from(b))));
    }
    let cfg = load_config(args, extra)?;
    let ds = load_dataset(&cfg, &data.unwrap_or_else(|| cfg.data_path.clone()))?;
    let tc = cfg.train_config()?;
    let (net, outcome) = train_with(&cfg, &ds, &tc)?;
    let ckpt = out_checkpoint.unwrap_or_else(|| cfg.checkpoint_path.clone());
    let csv = out_metrics.unwrap_or_else(|| cfg.metrics_path.clone());
    checkpoint::write_checkpoint(&net, &outcome.params, &outcome.state, create(&ckpt)?)?;
    metrics::write_csv(&outcome.history, ds.k_users, create(&csv)?)?;
    let last = outcome.history.last().expect("at least one round");
    println!(
        "{} training: {} rounds, final val_acc {:.4}, uplink {} reals; wrote {} and {}",
        tc.mode,
        last.round,
        last.val_acc,
        last.uplink_elems,
        ckpt.display(),
        csv.display()
    );
    Ok(())
}

fn default_method_name(cfg: &ExperimentConfig) -> &'static str {
    match (cfg.model.as_str(), cfg.mode.as_str()) {
        ("mlp", _) => "mlp",
        (_, "cml") => "cml_cnn",
        _ => "flhb",
    }
}

/// Builds whichever configured architecture matches the checkpoint digest.
fn network_for_checkpoint(cfg: &ExperimentConfig, ds: &ShardedDataset, path: &Path) -> Result<Network> {
    let file = at_path(path, File::open(path).map_err(Error::from))?;
    let digest = checkpoint::peek_digest(std::io::BufReader::new(file))?;
    for kind in ["cnn", "mlp"] {
        let spec = cfg.model_spec(kind, (ds.rows, ds.cols), ds.q_classes)?;
        if spec.digest() == digest {
            return Network::new(&spec);
        }
    }
    Err(Error::Format(format!(
        "{} was not written by the cnn or mlp architecture in this config",
        path.display()
    )))
}

pub fn eval(
    args: &ConfigArgs,
    checkpoints: &[String],
    data: Option<PathBuf>,
    snr_test: Option<Vec<f64>>,
    sigma2: Option<f64>,
    rate_formula: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(list) = snr_test {
        extra.push((
            "snr_test_db".to_string(),
            toml::Value::Array(list.into_iter().map(toml::Value::Float).collect()),
        ));
    }
    if let Some(s) = sigma2 {
        extra.push(("sigma2".to_string(), toml::Value::Float(s)));
    }
    if let Some(f) = rate_formula {
        f.parse::<RateFormula>()?;
        extra.push(("rate_formula".to_string(), toml::Value::String(f)));
    }
    let cfg = load_config(args, extra)?;
    let ds = load_dataset(&cfg, &data.unwrap_or_else(|| cfg.data_path.clone()))?;
    let mut entries: Vec<(String, PathBuf)> = checkpoints
        .iter()
        .map(|c| match c.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => (default_method_name(&cfg).to_string(), PathBuf::from(c)),
        })
        .collect();
    if entries.is_empty() {
        entries.push((default_method_name(&cfg).to_string(), cfg.checkpoint_path.clone()));
    }
    let mut registry = MethodRegistry::with_references();
    for (name, path) in entries.iter().rev() {
        let net = network_for_checkpoint(&cfg, &ds, path)?;
        let (params, state) = at_path(path, checkpoint::load(&net, path))?;
        registry.register_first(Arc::new(LearnedMethod::new(name.clone(), net, params, state)));
    }
    let drops = drops_from_validation(&ds)?;
    let ctx = EvalContext::for_dataset(&ds, cfg.sigma2, cfg.rate_formula, cfg.eval_seed())?;
    let rows = evaluate_beamforming(&registry, &drops, &cfg.snr_test_db, &ctx)?;
    let path = out.unwrap_or_else(|| cfg.rates_path.clone());
    write_rate_csv(&rows, create(&path)?)?;
    println!(
        "evaluated {} methods over {} drops at {} test SNRs; wrote {}",
        registry.names().len(),
        drops.len(),
        cfg.snr_test_db.len(),
        path.display()
    );
    Ok(())
}

/// Closed-form parameter count of the full-size network.
pub fn full_size_param_count() -> Result<u64> {
    param_count_paper(3, 256, 3, 3, 0.5, 512)
}

pub fn overhead(
    n: u64,
    g: &[u64],
    k: u64,
    n_t: &[u64],
    rounds: u64,
    p_model: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let p = match p_model {
        Some(p) => p,
        None => full_size_param_count()?,
    };
    if g.is_empty() || n_t.is_empty() {
        return Err(Error::Config("--g and --n-t need at least one value".into()));
    }
    let mut lines = vec!["n,g,k,n_t,rounds,p_model,fl_elements,cml_elements,ratio".to_string()];
    for &gi in g {
        for &nt in n_t {
            let r = overhead_report(n, gi, k, nt, rounds, p)?;
            lines.push(format!(
                "{n},{gi},{k},{nt},{rounds},{p},{},{},{:.6}",
                r.fl_elements, r.cml_elements, r.ratio
            ));
        }
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(path) => {
            let mut w = create(&path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Parses `1,2,4` or `1..8` (inclusive).
pub fn parse_bits(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::Config(format!("cannot parse bit list {s:?}"));
    let bits: Vec<u32> = match s.split_once("..") {
        Some((lo, hi)) => {
            let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            (lo..=hi).collect()
        }
        None => s
            .split(',')
            .map(|b| b.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
    };
    for &b in &bits {
        fedtrain::quantize::check_bits(b)?;
    }
    Ok(bits)
}

pub fn quant_sweep(args: &ConfigArgs, data: Option<PathBuf>, bits: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let mut extra = vec![("mode".to_string(), toml::Value::String("fl".into()))];
    if let Some(b) = bits {
        let list = parse_bits(&b)?;
        extra.push((
            "sweep_bits".to_string(),
            toml::Value::Array(list.into_iter().map(|v| toml::Value::Integer(i64::from(v))).collect()),
        ));
    }
    let cfg = load_config(args, extra)?;
    let ds = load_dataset(&cfg, &data.unwrap_or_else(|| cfg.data_path.clone()))?;
    let path = out.unwrap_or_else(|| cfg.quant_path.clone());
    let mut w = create(&path)?;
    writeln!(w, "bits,{}", metrics::csv_header(ds.k_users))?;
    let depths = std::iter::once(None).chain(cfg.sweep_bits.iter().map(|&b| Some(b)));
    for bits in depths {
        let tc = TrainConfig {
            quant_bits: bits,
            ..cfg.train_config()?
        };
        let (_, outcome) = train_with(&cfg, &ds, &tc)?;
        let label = bits.map_or_else(|| "none".to_string(), |b| b.to_string());
        for m in &outcome.history {
            writeln!(w, "{label},{}", metrics::csv_row(m))?;
        }
        let last = outcome.history.last().expect("at least one round");
        println!("bits {label}: final val_acc {:.4}", last.val_acc);
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn verify(seeds: u64) -> Result<()> {
    let mut failures = 0;
    for seed in 0..seeds {
        let (_, report) = gradcheck::check_micro(seed)?;
        let ok = report.max_rel_error < 1e-5;
        failures += usize::from(!ok);
        println!(
            "gradient check {seed:>2}: max rel error {:.3e} over {} parameters {}",
            report.max_rel_error,
            report.checked,
            if ok { "ok" } else { "FAIL" }
        );
    }
    for k in [1, 2, 4] {
        for gamma in [0.0, 0.9] {
            let gap = fedtrain::cross_mode_gap(k, gamma, 5, 1)?;
            let ok = gap < 1e-10;
            failures += usize::from(!ok);
            println!(
                "fl/cml equivalence K={k} gamma={gamma}: max rel gap {gap:.3e} {}",
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} oracle checks failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_lists() {
        assert_eq!(parse_bits("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_bits("2, 8,16").unwrap(), vec![2, 8, 16]);
        assert!(matches!(parse_bits("0..3"), Err(Error::Config(_))));
        assert!(matches!(parse_bits("17"), Err(Error::Config(_))));
        assert!(parse_bits("4..2").is_err());
        assert!(parse_bits("x").is_err());
    }

    #[test]
    fn full_size_count() {
        assert_eq!(full_size_param_count().unwrap(), 603_648);
    }
}
