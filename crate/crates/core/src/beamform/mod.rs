//! Hybrid precoders: analog steering columns picked from sector labels,
//! a zero-forcing baseband stage, sum-rate scoring, and the SOMP baseline.

mod eval;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{norm_sqr, steering_vector, ArrayConfig};
use crate::dataset::sector_midpoint;
use crate::{Error, Result};
pub use eval::{
    default_eval_seed, design_from_labels, drops_from_validation, evaluate_beamforming, observe,
    score_method, write_rate_csv, BeamformingMethod, Design, EvalContext, EvalDrop, LearnedMethod,
    MethodRegistry, MethodScore, Observation, OracleLabels, RandomLabels, RateRow, Somp,
};

pub type CMatrix = DMatrix<Complex64>;

/// Effective channels whose condition number reaches this are treated as
/// singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Analog and baseband precoders, `N_T x K` and `K x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub f_rf: CMatrix,
    pub f_bb: CMatrix,
}

impl BeamformerSet {
    /// `F_RF F_BB`.
    pub fn precoder(&self) -> CMatrix {
        &self.f_rf * &self.f_bb
    }

    /// `|F_RF F_BB|_F^2`.
    pub fn power(&self) -> f64 {
        self.precoder().norm_squared()
    }
}

/// Column `k` of `h` is user `k`'s channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserChannel {
    pub h: CMatrix,
    pub sigma2: f64,
}

impl MultiUserChannel {
    /// Builds the channel matrix from per-user vectors, each of which must
    /// carry energy `N_T`.
    pub fn new(columns: &[Vec<Complex64>], sigma2: f64) -> Result<Self> {
        let n_t = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || n_t == 0 {
            return Err(Error::Dimension("channel needs at least one nonempty user column".into()));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Config(format!("noise power must be positive, got {sigma2}")));
        }
        for (k, c) in columns.iter().enumerate() {
            if c.len() != n_t {
                return Err(Error::Dimension(format!("user {} has {} antennas, expected {n_t}", k + 1, c.len())));
            }
            let e = norm_sqr(c);
            if (e - n_t as f64).abs() > 1e-6 * n_t as f64 {
                return Err(Error::Dimension(format!("user {} channel energy {e} differs from {n_t}", k + 1)));
            }
        }
        let h = CMatrix::from_fn(n_t, columns.len(), |i, k| columns[k][i]);
        Ok(Self { h, sigma2 })
    }

    pub fn users(&self) -> usize {
        self.h.ncols()
    }

    pub fn antennas(&self) -> usize {
        self.h.nrows()
    }
}

/// Column `k` steers toward the midpoint of sector `labels[k]`.
pub fn rf_from_labels(labels: &[usize], q_classes: usize, array: &ArrayConfig) -> Result<CMatrix> {
    let columns = labels
        .iter()
        .map(|&q| {
            if q == 0 || q > q_classes {
                return Err(Error::LabelOutOfRange {
                    label: q,
                    classes: q_classes,
                });
            }
            steering_vector(sector_midpoint(q, q_classes)?, array)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CMatrix::from_fn(array.n_t, labels.len(), |i, k| columns[k][i]))
}

/// Ratio of the largest to the smallest singular value; infinite when the
/// matrix is rank deficient.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Scales `f_bb` by one scalar so that `|F_RF F_BB|_F^2 = K`.
fn normalize_power(f_rf: &CMatrix, f_bb: CMatrix) -> Result<CMatrix> {
    let k = f_bb.ncols() as f64;
    let power = (f_rf * &f_bb).norm_squared();
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Singular(format!("precoder power {power} cannot be normalized")));
    }
    Ok(f_bb * Complex64::from((k / power).sqrt()))
}

/// `F_BB = (H^H F_RF)^-1`, rescaled to the total power constraint.
pub fn zf_baseband(ch: &MultiUserChannel, f_rf: &CMatrix) -> Result<CMatrix> {
    if f_rf.nrows() != ch.antennas() || f_rf.ncols() != ch.users() {
        return Err(Error::Dimension(format!(
            "F_RF is {}x{}, channel is {}x{}",
            f_rf.nrows(),
            f_rf.ncols(),
            ch.antennas(),
            ch.users()
        )));
    }
    let a = ch.h.adjoint() * f_rf;
    let cond = condition_number(&a);
    if cond >= MAX_CONDITION {
        return Err(Error::Singular(format!(
            "effective channel has condition number {cond:e}; interference cannot be nulled"
        )));
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::Singular("effective channel is not invertible".into()))?;
    normalize_power(f_rf, inv)
}

/// Complete hybrid design from labels: steering columns plus ZF baseband.
pub fn hybrid_from_labels(
    ch: &MultiUserChannel,
    labels: &[usize],
    q_classes: usize,
    array: &ArrayConfig,
) -> Result<BeamformerSet> {
    let f_rf = rf_from_labels(labels, q_classes, array)?;
    let f_bb = zf_baseband(ch, &f_rf)?;
    Ok(BeamformerSet { f_rf, f_bb })
}

/// Same analog stage with an identity baseband, rescaled to the power
/// constraint. Used when zero forcing is impossible.
pub fn identity_fallback(labels: &[usize], q_classes: usize, array: &ArrayConfig) -> Result<BeamformerSet> {
    let f_rf = rf_from_labels(labels, q_classes, array)?;
    let f_bb = normalize_power(&f_rf, CMatrix::identity(labels.len(), labels.len()))?;
    Ok(BeamformerSet { f_rf, f_bb })
}

/// Which interference sum enters the SINR of user `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateFormula {
    /// `(1/K) sum_{n != k} |h_k^H F_RF f_BB,n|^2`.
    #[default]
    Standard,
    /// `(1/K) sum_{n != k} |h_n^H F_RF f_BB,n|^2`, taken literally.
    Paper,
}

impl std::str::FromStr for RateFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!(
                "unknown rate formula {other:?}; expected standard or paper"
            ))),
        }
    }
}

/// `sum_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn sum_rate(ch: &MultiUserChannel, bf: &BeamformerSet, formula: RateFormula) -> Result<f64> {
    let f = bf.precoder();
    if f.nrows() != ch.antennas() || f.ncols() != ch.users() {
        return Err(Error::Dimension(format!(
            "precoder is {}x{}, channel is {}x{}",
            f.nrows(),
            f.ncols(),
            ch.antennas(),
            ch.users()
        )));
    }
    // g[(k, n)] = h_k^H F_RF f_BB,n
    let g = ch.h.adjoint() * f;
    let k_users = ch.users();
    let inv_k = 1.0 / k_users as f64;
    let mut total = 0.0;
    for k in 0..k_users {
        let signal = inv_k * g[(k, k)].norm_sqr();
        let interference: f64 = (0..k_users)
            .filter(|&n| n != k)
            .map(|n| match formula {
                RateFormula::Standard => g[(k, n)].norm_sqr(),
                RateFormula::Paper => g[(n, n)].norm_sqr(),
            })
            .sum::<f64>()
            * inv_k;
        total += (1.0 + signal / (interference + ch.sigma2)).log2();
    }
    Ok(total)
}

/// Full-digital zero-forcing precoder `H (H^H H)^-1` at total power `K`.
pub fn zf_full_digital(ch: &MultiUserChannel) -> Result<CMatrix> {
    let gram = ch.h.adjoint() * &ch.h;
    let cond = condition_number(&gram);
    if cond >= MAX_CONDITION {
        return Err(Error::Singular(format!("channel Gram matrix has condition number {cond:e}")));
    }
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Singular("channel Gram matrix is not invertible".into()))?;
    let f = &ch.h * inv;
    let k = ch.users() as f64;
    let power = f.norm_squared();
    Ok(f * Complex64::from((k / power).sqrt()))
}

/// Steering atoms at the `Q` sector midpoints.
pub fn sector_dictionary(q_classes: usize, array: &ArrayConfig) -> Result<CMatrix> {
    let labels: Vec<usize> = (1..=q_classes).collect();
    rf_from_labels(&labels, q_classes, array)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SompOutcome {
    pub beamformer: BeamformerSet,
    /// Zero-based dictionary columns in selection order.
    pub atoms: Vec<usize>,
    /// `|F_opt - F_RF F_BB|_F` after each selection.
    pub residual_norms: Vec<f64>,
}

/// Least-squares coefficients of `target` on the columns of `basis`.
fn least_squares(basis: &CMatrix, target: &CMatrix) -> Result<CMatrix> {
    let gram = basis.adjoint() * basis;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Singular("selected atoms are linearly dependent".into()))?;
    Ok(inv * basis.adjoint() * target)
}

/// Greedily picks `K` atoms of `dictionary` that best explain the
/// full-digital ZF precoder, refitting the baseband by least squares after
/// every pick.
pub fn somp_precoder(ch: &MultiUserChannel, dictionary: &CMatrix) -> Result<SompOutcome> {
    let k_users = ch.users();
    if dictionary.nrows() != ch.antennas() {
        return Err(Error::Dimension(format!(
            "dictionary atoms have {} entries, channel has {} antennas",
            dictionary.nrows(),
            ch.antennas()
        )));
    }
    if dictionary.ncols() < k_users {
        return Err(Error::Dimension(format!(
            "dictionary has {} atoms, need at least {k_users}",
            dictionary.ncols()
        )));
    }
    let f_opt = zf_full_digital(ch)?;
    let mut residual = f_opt.clone();
    let mut atoms: Vec<usize> = Vec::with_capacity(k_users);
    let mut residual_norms = Vec::with_capacity(k_users);
    let mut f_bb = CMatrix::zeros(0, k_users);
    for _ in 0..k_users {
        let corr = dictionary.adjoint() * &residual;
        let best = (0..dictionary.ncols())
            .filter(|j| !atoms.contains(j))
            .map(|j| (j, corr.row(j).norm_squared()))
            .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            })
            .expect("dictionary has unused atoms")
            .0;
        atoms.push(best);
        let f_rf = dictionary.select_columns(&atoms);
        f_bb = least_squares(&f_rf, &f_opt)?;
        residual = &f_opt - &f_rf * &f_bb;
        residual_norms.push(residual.norm());
    }
    let f_rf = dictionary.select_columns(&atoms);
    let f_bb = normalize_power(&f_rf, f_bb)?;
    Ok(SompOutcome {
        beamformer: BeamformerSet { f_rf, f_bb },
        atoms,
        residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::steering_vector;

    fn arr(n: usize) -> ArrayConfig {
        ArrayConfig::half_wavelength(n).unwrap()
    }

    #[test]
    fn rf_columns_are_sector_steering_vectors() {
        let f = rf_from_labels(&[2], 4, &arr(4)).unwrap();
        let a = steering_vector((-22.5f64).to_radians(), &arr(4)).unwrap();
        for i in 0..4 {
            assert!((f[(i, 0)] - a[i]).norm() < 1e-15);
        }
        let f = rf_from_labels(&[1, 3, 16, 7], 16, &arr(16)).unwrap();
        assert!(f.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let same = rf_from_labels(&[5, 5], 8, &arr(8)).unwrap();
        assert_eq!(same.column(0), same.column(1));
        assert!(matches!(
            rf_from_labels(&[0], 4, &arr(4)),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(rf_from_labels(&[5], 4, &arr(4)).is_err());
    }

    #[test]
    fn single_user_zf_meets_power() {
        let h = steering_vector(0.3, &arr(16)).unwrap();
        let ch = MultiUserChannel::new(&[h], 1.0).unwrap();
        let f_rf = rf_from_labels(&[10], 16, &arr(16)).unwrap();
        let f_bb = zf_baseband(&ch, &f_rf).unwrap();
        assert_eq!(f_bb.shape(), (1, 1));
        let bf = BeamformerSet { f_rf, f_bb };
        assert!((bf.power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_users_are_singular() {
        let h = steering_vector(0.3, &arr(8)).unwrap();
        let ch = MultiUserChannel::new(&[h.clone(), h], 1.0).unwrap();
        let f_rf = rf_from_labels(&[3, 6], 8, &arr(8)).unwrap();
        assert!(matches!(zf_baseband(&ch, &f_rf), Err(Error::Singular(_))));
        let fallback = identity_fallback(&[3, 6], 8, &arr(8)).unwrap();
        assert!((fallback.power() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matched_single_user_rate() {
        let n = 16;
        let h = steering_vector(-0.4, &arr(n)).unwrap();
        let ch = MultiUserChannel::new(&[h.clone()], 1.0).unwrap();
        let scale = 1.0 / (n as f64).sqrt();
        let bf = BeamformerSet {
            f_rf: CMatrix::from_fn(n, 1, |i, _| h[i] * scale),
            f_bb: CMatrix::identity(1, 1),
        };
        let r = sum_rate(&ch, &bf, RateFormula::Standard).unwrap();
        assert!((r - 17f64.log2()).abs() < 1e-12);
        assert!((r - 4.087_462_841_250_339).abs() < 1e-12);
    }

    #[test]
    fn zero_baseband_gives_zero_rate() {
        let h = steering_vector(0.1, &arr(4)).unwrap();
        let g = steering_vector(-0.9, &arr(4)).unwrap();
        let ch = MultiUserChannel::new(&[h, g], 1.0).unwrap();
        let bf = BeamformerSet {
            f_rf: rf_from_labels(&[1, 2], 4, &arr(4)).unwrap(),
            f_bb: CMatrix::zeros(2, 2),
        };
        assert_eq!(sum_rate(&ch, &bf, RateFormula::Standard).unwrap(), 0.0);
        assert_eq!(sum_rate(&ch, &bf, RateFormula::Paper).unwrap(), 0.0);
    }

    #[test]
    fn rate_formulas_differ_only_with_interference() {
        let h = steering_vector(0.1, &arr(8)).unwrap();
        let g = steering_vector(-0.9, &arr(8)).unwrap();
        let ch = MultiUserChannel::new(&[h, g], 0.5).unwrap();
        let bf = identity_fallback(&[5, 2], 8, &arr(8)).unwrap();
        let standard = sum_rate(&ch, &bf, RateFormula::Standard).unwrap();
        let paper = sum_rate(&ch, &bf, RateFormula::Paper).unwrap();
        assert!((standard - paper).abs() > 1e-6);
        assert_eq!("paper".parse::<RateFormula>().unwrap(), RateFormula::Paper);
        assert!("other".parse::<RateFormula>().is_err());
    }

    #[test]
    fn channel_validation() {
        let h = steering_vector(0.1, &arr(4)).unwrap();
        assert!(MultiUserChannel::new(&[h.clone()], 0.0).is_err());
        assert!(MultiUserChannel::new(&[vec![Complex64::new(1.0, 0.0); 4]], 1.0).is_ok());
        assert!(MultiUserChannel::new(&[vec![Complex64::new(2.0, 0.0); 4]], 1.0).is_err());
        assert!(MultiUserChannel::new(&[h, vec![Complex64::new(1.0, 0.0); 3]], 1.0).is_err());
    }

    #[test]
    fn somp_rejects_small_dictionary() {
        let h = steering_vector(0.1, &arr(4)).unwrap();
        let g = steering_vector(-0.9, &arr(4)).unwrap();
        let ch = MultiUserChannel::new(&[h, g], 1.0).unwrap();
        let dict = sector_dictionary(1, &arr(4)).unwrap();
        assert!(matches!(somp_precoder(&ch, &dict), Err(Error::Dimension(_))));
    }
}
