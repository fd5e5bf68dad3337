//! Labelled three-channel tensors built from synthetic channels, sharded
//! across users.

pub mod archive;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    add_channel_noise_with, draw_direction, gen_channel, ArrayConfig, PathCluster, Scenario,
};
use crate::rng::{domain, substream};
use crate::{Error, Result};

/// One training example: a `3 x rows x cols` tensor stored channel-major
/// (real part, imaginary part, phase) with its sector label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// Sector label in `1..=Q`.
    pub label: usize,
    /// User index in `1..=K`.
    pub user_id: usize,
    /// Position of the sample in generation order; keys dropout masks.
    pub id: u64,
}

impl Sample {
    /// Zero-based class index.
    pub fn class(&self) -> usize {
        self.label - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub array: ArrayConfig,
    pub n_realizations: usize,
    pub g_noisy_copies: usize,
    pub k_users: usize,
    pub q_classes: usize,
    pub snr_train_db: Vec<f64>,
    pub scenario: Scenario,
    pub split_fraction: f64,
    pub master_seed: u64,
    pub l_paths: usize,
    pub angle_spread_deg: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            array: ArrayConfig {
                n_t: 16,
                d_over_lambda: 0.5,
            },
            n_realizations: 50,
            g_noisy_copies: 10,
            k_users: 4,
            q_classes: 16,
            snr_train_db: vec![15.0, 20.0, 25.0],
            scenario: Scenario::Sectored,
            split_fraction: 0.8,
            master_seed: 1,
            l_paths: 5,
            angle_spread_deg: 3.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        ArrayConfig::new(self.array.n_t, self.array.d_over_lambda)?;
        for (name, v) in [
            ("n_realizations", self.n_realizations),
            ("g_noisy_copies", self.g_noisy_copies),
            ("k_users", self.k_users),
            ("q_classes", self.q_classes),
            ("l_paths", self.l_paths),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.snr_train_db.is_empty() {
            return Err(Error::Config("snr_train_db must list at least one SNR".into()));
        }
        if self.snr_train_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("snr_train_db contains NaN".into()));
        }
        Ok(())
    }

    /// Number of stored tensors, `N * G * K`.
    pub fn sample_count(&self) -> usize {
        self.n_realizations * self.g_noisy_copies * self.k_users
    }

    /// Dataset size in the convention that counts the three input
    /// channels separately, `3 * N * G * K`.
    pub fn paper_dataset_size(&self) -> usize {
        3 * self.sample_count()
    }
}

/// Most-square factorization `rows x cols = n` with `rows <= cols`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && n % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

/// Stacks consecutive `rows`-long pieces of `h` as the columns of a matrix.
pub fn reshape_pi(h: &[Complex64]) -> Result<DMatrix<Complex64>> {
    if h.is_empty() {
        return Err(Error::Dimension("cannot reshape an empty channel".into()));
    }
    let (rows, cols) = grid_shape(h.len());
    reshape_pi_into(h, rows, cols)
}

pub fn reshape_pi_into(h: &[Complex64], rows: usize, cols: usize) -> Result<DMatrix<Complex64>> {
    if rows * cols != h.len() || h.is_empty() {
        return Err(Error::Dimension(format!(
            "channel of length {} does not fill a {rows}x{cols} grid",
            h.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, h))
}

/// Inverse of [`reshape_pi`].
pub fn unreshape_pi(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    m.as_slice().to_vec()
}

fn phase(z: Complex64) -> f64 {
    let a = z.arg();
    // atan2 with a negative-zero imaginary part lands on -pi.
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Real part, imaginary part and phase of `m`, channel-major and
/// row-major within each channel.
pub fn make_tensor(m: &DMatrix<Complex64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let plane = rows * cols;
    let mut x = vec![0.0; 3 * plane];
    for r in 0..rows {
        for c in 0..cols {
            let z = m[(r, c)];
            let i = r * cols + c;
            x[i] = z.re;
            x[plane + i] = z.im;
            x[2 * plane + i] = phase(z);
        }
    }
    x
}

/// Recovers the complex channel from the first two tensor channels.
pub fn channel_from_tensor(x: &[f64], rows: usize, cols: usize) -> Result<Vec<Complex64>> {
    let plane = rows * cols;
    if x.len() != 3 * plane {
        return Err(Error::Dimension(format!(
            "tensor of length {} is not 3x{rows}x{cols}",
            x.len()
        )));
    }
    let mut m = DMatrix::from_element(rows, cols, Complex64::new(0.0, 0.0));
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            m[(r, c)] = Complex64::new(x[i], x[plane + i]);
        }
    }
    Ok(unreshape_pi(&m))
}

/// Sector of `phi` among `q_classes` equal half-open sectors of
/// `[-pi/2, pi/2]`; the last sector is closed.
pub fn label_of(phi: f64, q_classes: usize) -> Result<usize> {
    if !(phi.is_finite() && phi.abs() <= FRAC_PI_2) {
        return Err(Error::InvalidAngle(phi));
    }
    if q_classes == 0 {
        return Err(Error::Config("q_classes must be at least 1".into()));
    }
    let width = PI / q_classes as f64;
    let q = ((phi + FRAC_PI_2) / width).floor() as usize + 1;
    Ok(q.min(q_classes))
}

pub fn sector_midpoint(q: usize, q_classes: usize) -> Result<f64> {
    if q == 0 || q > q_classes {
        return Err(Error::LabelOutOfRange {
            label: q,
            classes: q_classes,
        });
    }
    let width = PI / q_classes as f64;
    Ok(-FRAC_PI_2 + (q as f64 - 0.5) * width)
}

/// All samples in generation order, grouped by user, before the split.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub n_t: usize,
    pub rows: usize,
    pub cols: usize,
    pub q_classes: usize,
    pub k_users: usize,
    pub seed: u64,
    pub per_user: Vec<Vec<Sample>>,
}

impl GeneratedDataset {
    pub fn sample_count(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }

    pub fn tensor_len(&self) -> usize {
        3 * self.rows * self.cols
    }

    /// Shuffles each user's samples under the master seed and keeps the
    /// first `floor(fraction * n)` as that user's shard; the rest is pooled
    /// into the validation set.
    pub fn split(self, fraction: f64) -> Result<ShardedDataset> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let mut shards = Vec::with_capacity(self.k_users);
        let mut validation = Vec::new();
        for (k, mut samples) in self.per_user.into_iter().enumerate() {
            let mut rng = substream(self.seed, &[domain::SPLIT, k as u64]);
            samples.shuffle(&mut rng);
            let n_train = (fraction * samples.len() as f64).floor() as usize;
            let rest = samples.split_off(n_train);
            shards.push(samples);
            validation.extend(rest);
        }
        Ok(ShardedDataset {
            n_t: self.n_t,
            rows: self.rows,
            cols: self.cols,
            q_classes: self.q_classes,
            k_users: self.k_users,
            seed: self.seed,
            shards,
            validation,
        })
    }
}

/// Per-user training shards plus a validation set pooled at the base
/// station.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedDataset {
    pub n_t: usize,
    pub rows: usize,
    pub cols: usize,
    pub q_classes: usize,
    pub k_users: usize,
    pub seed: u64,
    pub shards: Vec<Vec<Sample>>,
    pub validation: Vec<Sample>,
}

impl ShardedDataset {
    pub fn tensor_len(&self) -> usize {
        3 * self.rows * self.cols
    }

    pub fn train_len(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn sample_count(&self) -> usize {
        self.train_len() + self.validation.len()
    }

    /// Real numbers a user population uploads when shipping every raw
    /// tensor to the base station.
    pub fn total_elements(&self) -> u64 {
        (self.sample_count() * self.tensor_len()) as u64
    }

    /// The union of all shards in user order.
    pub fn pooled_train(&self) -> Vec<&Sample> {
        self.shards.iter().flatten().collect()
    }
}

fn generate_user(spec: &DatasetSpec, k: usize, rows: usize, cols: usize) -> Result<Vec<Sample>> {
    let n = spec.n_realizations;
    let g = spec.g_noisy_copies;
    let per_realization: Vec<Result<Vec<Sample>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.master_seed, &[domain::CLUSTER, k as u64, i as u64]);
            let mean = draw_direction(spec.scenario, k, spec.k_users, &mut rng);
            let cluster = PathCluster::draw(mean, spec.l_paths, spec.angle_spread_deg, &mut rng)?;
            let h = gen_channel(&cluster, &spec.array)?;
            let label = label_of(cluster.mean_angle, spec.q_classes)?;
            (0..g)
                .map(|copy| {
                    let snr = spec.snr_train_db[copy % spec.snr_train_db.len()];
                    let mut noise_rng = substream(
                        spec.master_seed,
                        &[domain::TRAIN_NOISE, k as u64, i as u64, copy as u64],
                    );
                    let noisy = add_channel_noise_with(&h, snr, &mut noise_rng);
                    let m = reshape_pi_into(&noisy, rows, cols)?;
                    Ok(Sample {
                        x: make_tensor(&m),
                        label,
                        user_id: k + 1,
                        id: ((k * n + i) * g + copy) as u64,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n * g);
    for chunk in per_realization {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Generates `N` clean channels per user, corrupts each into `G` noisy
/// copies cycling through the training SNRs, and tensorizes them.
pub fn generate(spec: &DatasetSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let (rows, cols) = grid_shape(spec.array.n_t);
    let per_user = (0..spec.k_users)
        .map(|k| generate_user(spec, k, rows, cols))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedDataset {
        n_t: spec.array.n_t,
        rows,
        cols,
        q_classes: spec.q_classes,
        k_users: spec.k_users,
        seed: spec.master_seed,
        per_user,
    })
}

pub fn build_dataset(spec: &DatasetSpec) -> Result<ShardedDataset> {
    generate(spec)?.split(spec.split_fraction)
}
