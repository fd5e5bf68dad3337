use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use flhb::beamform::*;
use flhb::channel::{gen_channel, steering_vector, subregion, ArrayConfig, PathCluster};
use flhb::dataset::{build_dataset, label_of, sector_midpoint, DatasetSpec};
use flhb::rng::substream;

fn arr(n: usize) -> ArrayConfig {
    ArrayConfig::half_wavelength(n).unwrap()
}

/// Users in distinct quarter regions with clustered channels.
fn random_drop(seed: u64, k_users: usize, q: usize, n_t: usize) -> (MultiUserChannel, Vec<usize>) {
    let mut rng = substream(seed, &[77]);
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for k in 0..k_users {
        let (lo, hi) = subregion(k, k_users);
        let mean = rng.random_range(lo..hi);
        let cluster = PathCluster::draw(mean, 5, 3.0, &mut rng).unwrap();
        cols.push(gen_channel(&cluster, &arr(n_t)).unwrap());
        labels.push(label_of(mean, q).unwrap());
    }
    (MultiUserChannel::new(&cols, 1.0).unwrap(), labels)
}

/// Direct products `h_n^H F_RF f_BB,k` in a plain triple loop.
fn cross_terms(ch: &MultiUserChannel, bf: &BeamformerSet) -> Vec<Vec<Complex64>> {
    let (n_t, k_users) = (ch.antennas(), ch.users());
    let mut f = vec![vec![Complex64::new(0.0, 0.0); k_users]; n_t];
    for i in 0..n_t {
        for k in 0..k_users {
            for j in 0..k_users {
                f[i][k] += bf.f_rf[(i, j)] * bf.f_bb[(j, k)];
            }
        }
    }
    (0..k_users)
        .map(|n| {
            (0..k_users)
                .map(|k| (0..n_t).map(|i| ch.h[(i, n)].conj() * f[i][k]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn zf_nulls_interference_on_random_four_user_drops() {
    for seed in 0..100 {
        let (ch, labels) = random_drop(seed, 4, 16, 16);
        let mut sorted = labels.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        let bf = hybrid_from_labels(&ch, &labels, 16, &arr(16)).unwrap();
        assert!((bf.power() - 4.0).abs() < 1e-9);
        let g = cross_terms(&ch, &bf);
        for k in 0..4 {
            for n in 0..4 {
                if n != k {
                    assert!(g[n][k].norm() <= 1e-9 * g[k][k].norm(), "seed {seed}");
                }
            }
        }
        assert!(bf.f_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn two_separated_users_are_nulled() {
    let q = 8;
    let cols: Vec<_> = [2, 7]
        .iter()
        .map(|&l| steering_vector(sector_midpoint(l, q).unwrap(), &arr(16)).unwrap())
        .collect();
    let ch = MultiUserChannel::new(&cols, 1.0).unwrap();
    let bf = hybrid_from_labels(&ch, &[2, 7], q, &arr(16)).unwrap();
    let g = cross_terms(&ch, &bf);
    assert!(g[0][1].norm() < 1e-9 * g[1][1].norm());
    assert!(g[1][0].norm() < 1e-9 * g[0][0].norm());
}

#[test]
fn oracle_rate_approaches_beamforming_gain_for_fine_sectors() {
    let n_t = 16;
    let sigma2 = 1.0;
    let limit = (1.0 + n_t as f64 / sigma2).log2();
    let mut rng = substream(3, &[1]);
    for _ in 0..50 {
        let q = 360;
        let label = rng.random_range(1..=q);
        let phi = sector_midpoint(label, q).unwrap();
        let h = steering_vector(phi, &arr(n_t)).unwrap();
        let ch = MultiUserChannel::new(&[h], sigma2).unwrap();
        let bf = hybrid_from_labels(&ch, &[label_of(phi, q).unwrap()], q, &arr(n_t)).unwrap();
        let r = sum_rate(&ch, &bf, RateFormula::Standard).unwrap();
        assert!((r - limit).abs() < 0.05);
        // Off-midpoint angles inside the same sector stay close too.
        let (lo, hi) = (-FRAC_PI_2 + (label - 1) as f64 * std::f64::consts::PI / q as f64, phi);
        let off = rng.random_range(lo..hi);
        let h = steering_vector(off, &arr(n_t)).unwrap();
        let ch = MultiUserChannel::new(&[h], sigma2).unwrap();
        let bf = hybrid_from_labels(&ch, &[label_of(off, q).unwrap()], q, &arr(n_t)).unwrap();
        assert!((sum_rate(&ch, &bf, RateFormula::Standard).unwrap() - limit).abs() < 0.05);
    }
}

#[test]
fn somp_single_user_matches_exhaustive_search() {
    let q = 16;
    let dict = sector_dictionary(q, &arr(16)).unwrap();
    for label in 1..=q {
        let h = steering_vector(sector_midpoint(label, q).unwrap(), &arr(16)).unwrap();
        let ch = MultiUserChannel::new(&[h.clone()], 1.0).unwrap();
        let out = somp_precoder(&ch, &dict).unwrap();
        // Oracle: correlate every atom with h directly.
        let best = (0..q)
            .max_by(|&a, &b| {
                let ca: Complex64 = (0..16).map(|i| dict[(i, a)].conj() * h[i]).sum();
                let cb: Complex64 = (0..16).map(|i| dict[(i, b)].conj() * h[i]).sum();
                ca.norm().partial_cmp(&cb.norm()).unwrap()
            })
            .unwrap();
        assert_eq!(out.atoms, vec![best]);
        assert_eq!(best, label - 1);
        assert!((out.beamformer.power() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn somp_residuals_shrink_and_atoms_are_distinct() {
    let dict = sector_dictionary(32, &arr(16)).unwrap();
    for seed in 0..30 {
        let (ch, _) = random_drop(seed, 4, 32, 16);
        let out = somp_precoder(&ch, &dict).unwrap();
        for w in out.residual_norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let mut atoms = out.atoms.clone();
        atoms.sort_unstable();
        atoms.dedup();
        assert_eq!(atoms.len(), 4);
        assert!((out.beamformer.power() - 4.0).abs() < 1e-9);
    }
}

#[test]
fn somp_recovers_oracle_atoms() {
    for trial in 0..100u64 {
        let mut rng = substream(trial, &[2]);
        let k_users = rng.random_range(1..=4);
        let angles: Vec<f64> = (0..k_users)
            .map(|k| {
                let (lo, hi) = subregion(k, k_users);
                let w = hi - lo;
                rng.random_range(lo + 0.1 * w..hi - 0.1 * w)
            })
            .collect();
        let cols: Vec<_> = angles.iter().map(|&a| steering_vector(a, &arr(16)).unwrap()).collect();
        let ch = MultiUserChannel::new(&cols, 1.0).unwrap();
        let dict = DMatrix::from_fn(16, k_users, |i, k| cols[k][i]);
        let out = somp_precoder(&ch, &dict).unwrap();
        let mut atoms = out.atoms.clone();
        atoms.sort_unstable();
        assert_eq!(atoms, (0..k_users).collect::<Vec<_>>());
        assert!(out.residual_norms.last().unwrap() < &1e-8);
    }
}

proptest! {
    #[test]
    fn prop_rate_nonincreasing_in_noise(seed in 0u64..1000, s1 in 0.01f64..10.0, factor in 1.0f64..100.0) {
        let (mut ch, labels) = random_drop(seed, 3, 16, 16);
        let bf = identity_fallback(&labels, 16, &arr(16)).unwrap();
        for formula in [RateFormula::Standard, RateFormula::Paper] {
            ch.sigma2 = s1;
            let a = sum_rate(&ch, &bf, formula).unwrap();
            ch.sigma2 = s1 * factor;
            let b = sum_rate(&ch, &bf, formula).unwrap();
            prop_assert!(b <= a + 1e-12);
            prop_assert!(b >= 0.0);
        }
    }

    #[test]
    fn prop_power_constraint_on_every_path(seed in 0u64..1000) {
        let (ch, labels) = random_drop(seed, 4, 16, 16);
        let zf = hybrid_from_labels(&ch, &labels, 16, &arr(16)).unwrap();
        prop_assert!((zf.power() - 4.0).abs() < 1e-9);
        let fb = identity_fallback(&labels, 16, &arr(16)).unwrap();
        prop_assert!((fb.power() - 4.0).abs() < 1e-9);
        let somp = somp_precoder(&ch, &sector_dictionary(16, &arr(16)).unwrap()).unwrap();
        prop_assert!((somp.beamformer.power() - 4.0).abs() < 1e-9);
    }
}

#[test]
fn rate_vanishes_as_noise_grows() {
    let (mut ch, labels) = random_drop(5, 2, 16, 16);
    let bf = hybrid_from_labels(&ch, &labels, 16, &arr(16)).unwrap();
    ch.sigma2 = 1e12;
    assert!(sum_rate(&ch, &bf, RateFormula::Standard).unwrap() < 1e-9);
}

struct EchoTruth;

impl BeamformingMethod for EchoTruth {
    fn name(&self) -> &str {
        "echo"
    }

    fn design(&self, obs: &Observation<'_>, ctx: &EvalContext) -> flhb::Result<Design> {
        design_from_labels(obs, ctx, obs.drop.labels.clone())
    }
}

fn eval_dataset() -> flhb::dataset::ShardedDataset {
    build_dataset(&DatasetSpec {
        n_realizations: 30,
        g_noisy_copies: 2,
        ..DatasetSpec::default()
    })
    .unwrap()
}

#[test]
fn drops_group_one_sample_per_user() {
    let ds = eval_dataset();
    let drops = drops_from_validation(&ds).unwrap();
    let per_user = ds.validation.iter().filter(|s| s.user_id == 1).count();
    assert!(drops.len() <= per_user && !drops.is_empty());
    for d in &drops {
        assert_eq!(d.channels.len(), 4);
        for (k, h) in d.channels.iter().enumerate() {
            assert!((flhb::channel::norm_sqr(h) - 16.0).abs() < 1e-9);
            let (lo, hi) = subregion(k, 4);
            let mid = sector_midpoint(d.labels[k], 16).unwrap();
            assert!(mid > lo - 0.2 && mid < hi + 0.2);
        }
    }
}

#[test]
fn evaluation_reports_every_method_and_snr() {
    let ds = eval_dataset();
    let drops = drops_from_validation(&ds).unwrap();
    let ctx = EvalContext::for_dataset(&ds, 1.0, RateFormula::Standard, 9).unwrap();
    let mut reg = MethodRegistry::with_references();
    reg.register_first(Arc::new(EchoTruth));
    let snrs = [-20.0, 5.0, f64::INFINITY];
    let rows = evaluate_beamforming(&reg, &drops, &snrs, &ctx).unwrap();
    assert_eq!(rows.len(), 3 * 4);
    assert_eq!(reg.names(), vec!["echo", "somp", "oracle", "random"]);
    for chunk in rows.chunks(4) {
        let (echo, oracle, random) = (&chunk[0], &chunk[2], &chunk[3]);
        assert_eq!(echo.score, oracle.score);
        assert_eq!(oracle.score.accuracy, 1.0);
        assert!(oracle.score.mean_sum_rate > random.score.mean_sum_rate);
        assert!((0.0..=1.0).contains(&random.score.accuracy));
    }
    let again = evaluate_beamforming(&reg, &drops, &snrs, &ctx).unwrap();
    assert_eq!(rows, again);
    let mut csv = Vec::new();
    write_rate_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("snr_db,method,mean_sum_rate,accuracy\n-20,echo,"));
    assert_eq!(text.lines().count(), 13);
}
