//! Clustered mm-Wave channels for a uniform linear array.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{domain, substream};
use crate::{Error, Result};

/// Slack allowed when checking that an angle lies in `[-pi/2, pi/2]`.
const ANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_t: usize,
    pub d_over_lambda: f64,
}

impl ArrayConfig {
    pub fn new(n_t: usize, d_over_lambda: f64) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::Config("array needs at least one antenna".into()));
        }
        if !(d_over_lambda > 0.0 && d_over_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got {d_over_lambda}"
            )));
        }
        Ok(Self { n_t, d_over_lambda })
    }

    /// Half-wavelength spacing.
    pub fn half_wavelength(n_t: usize) -> Result<Self> {
        Self::new(n_t, 0.5)
    }
}

/// A cluster of `L` line-of-sight rays around a mean direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCluster {
    pub mean_angle: f64,
    pub angle_spread_deg: f64,
    pub gains: Vec<Complex64>,
    pub path_angles: Vec<f64>,
}

impl PathCluster {
    /// Draws `l_paths` rays with CN(0, 1) gains and Gaussian angular spread
    /// around `mean_angle`, clipped to the visible half-space.
    pub fn draw<R: Rng + ?Sized>(
        mean_angle: f64,
        l_paths: usize,
        angle_spread_deg: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_angle(mean_angle)?;
        if l_paths == 0 {
            return Err(Error::Config("cluster needs at least one path".into()));
        }
        if !(angle_spread_deg >= 0.0 && angle_spread_deg.is_finite()) {
            return Err(Error::Config(format!(
                "angle spread must be nonnegative, got {angle_spread_deg}"
            )));
        }
        let spread = Normal::new(0.0, angle_spread_deg.to_radians())
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut gains = Vec::with_capacity(l_paths);
        let mut path_angles = Vec::with_capacity(l_paths);
        for _ in 0..l_paths {
            gains.push(complex_gaussian(rng, 1.0));
            let phi: f64 = mean_angle + spread.sample(rng);
            path_angles.push(phi.clamp(-FRAC_PI_2, FRAC_PI_2));
        }
        Ok(Self {
            mean_angle,
            angle_spread_deg,
            gains,
            path_angles,
        })
    }

    pub fn l_paths(&self) -> usize {
        self.gains.len()
    }
}

/// One user's channel together with the cluster that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub user_id: usize,
    pub cluster: PathCluster,
    pub h: Vec<Complex64>,
    pub label: usize,
}

/// User placement law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Every direction uniform over the whole half-space.
    Uniform,
    /// User `k` is confined to the `k`-th of `K` equal contiguous sectors.
    Sectored,
}

impl Scenario {
    pub fn from_index(index: u32) -> Result<Self> {
        match index {
            1 => Ok(Scenario::Uniform),
            2 => Ok(Scenario::Sectored),
            other => Err(Error::Config(format!("scenario must be 1 or 2, got {other}"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Scenario::Uniform => 1,
            Scenario::Sectored => 2,
        }
    }
}

fn check_angle(phi: f64) -> Result<()> {
    if phi.is_finite() && phi.abs() <= FRAC_PI_2 + ANGLE_SLACK {
        Ok(())
    } else {
        Err(Error::InvalidAngle(phi))
    }
}

/// Circularly-symmetric complex Gaussian with total variance `variance`.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// ULA response toward `phi`; element `m` (0-based) is
/// `exp(-j 2 pi (d/lambda) m sin(phi))`.
pub fn steering_vector(phi: f64, cfg: &ArrayConfig) -> Result<Vec<Complex64>> {
    check_angle(phi)?;
    let k = -2.0 * PI * cfg.d_over_lambda * phi.sin();
    Ok((0..cfg.n_t)
        .map(|m| Complex64::from_polar(1.0, k * m as f64))
        .collect())
}

/// Squared Euclidean norm.
pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Rescales `h` in place so that `|h|^2 = target`.
pub(crate) fn normalize_to(h: &mut [Complex64], target: f64) -> Result<()> {
    let energy = norm_sqr(h);
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::Synthesis(format!(
            "channel energy {energy} cannot be normalized"
        )));
    }
    let s = (target / energy).sqrt();
    h.iter_mut().for_each(|z| *z *= s);
    Ok(())
}

/// Sums the cluster's rays into `h = beta * sum_l alpha_l a(phi_l)` with
/// `beta = sqrt(N_T / L)`, then rescales to `|h|^2 = N_T`.
pub fn gen_channel(cluster: &PathCluster, cfg: &ArrayConfig) -> Result<Vec<Complex64>> {
    if cluster.gains.len() != cluster.path_angles.len() || cluster.gains.is_empty() {
        return Err(Error::Synthesis(format!(
            "cluster has {} gains for {} path angles",
            cluster.gains.len(),
            cluster.path_angles.len()
        )));
    }
    if cluster.gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
        return Err(Error::Synthesis("non-finite path gain".into()));
    }
    let beta = (cfg.n_t as f64 / cluster.l_paths() as f64).sqrt();
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.n_t];
    for (&alpha, &phi) in cluster.gains.iter().zip(&cluster.path_angles) {
        if alpha == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a = steering_vector(phi, cfg)?;
        for (hm, am) in h.iter_mut().zip(a) {
            *hm += beta * alpha * am;
        }
    }
    normalize_to(&mut h, cfg.n_t as f64)?;
    Ok(h)
}

/// Angular interval assigned to user `k` (0-based) out of `k_users`.
pub fn subregion(k: usize, k_users: usize) -> (f64, f64) {
    let width = PI / k_users as f64;
    let start = -FRAC_PI_2 + k as f64 * width;
    let end = if k + 1 == k_users {
        FRAC_PI_2
    } else {
        -FRAC_PI_2 + (k + 1) as f64 * width
    };
    (start, end)
}

/// Draws one mean direction for user `k` (0-based) under `scenario`.
pub fn draw_direction<R: Rng + ?Sized>(
    scenario: Scenario,
    k: usize,
    k_users: usize,
    rng: &mut R,
) -> f64 {
    let (lo, hi) = match scenario {
        Scenario::Uniform => (-FRAC_PI_2, FRAC_PI_2),
        Scenario::Sectored => subregion(k, k_users),
    };
    lo + (hi - lo) * rng.random::<f64>()
}

/// Mean directions for `k_users` users, one substream per user.
pub fn draw_user_directions(scenario: Scenario, k_users: usize, seed: u64) -> Result<Vec<f64>> {
    if k_users == 0 {
        return Err(Error::Config("need at least one user".into()));
    }
    Ok((0..k_users)
        .map(|k| {
            let mut rng = substream(seed, &[domain::DIRECTION, k as u64]);
            draw_direction(scenario, k, k_users, &mut rng)
        })
        .collect())
}

/// Noise variance per complex element for a target SNR in dB, relative to
/// the mean element power of `h`.
pub fn noise_variance(h: &[Complex64], snr_db: f64) -> f64 {
    let mean_power = norm_sqr(h) / h.len().max(1) as f64;
    mean_power * 10f64.powf(-snr_db / 10.0)
}

/// Returns `h + n` with i.i.d. circular Gaussian `n`. An SNR of `+inf`
/// returns `h` unchanged.
pub fn add_channel_noise(h: &[Complex64], snr_db: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = substream(seed, &[domain::TRAIN_NOISE]);
    add_channel_noise_with(h, snr_db, &mut rng)
}

pub fn add_channel_noise_with<R: Rng + ?Sized>(
    h: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> Vec<Complex64> {
    if snr_db == f64::INFINITY {
        return h.to_vec();
    }
    let variance = noise_variance(h, snr_db);
    h.iter().map(|&z| z + complex_gaussian(rng, variance)).collect()
}
