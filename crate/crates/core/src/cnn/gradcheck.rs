//! Central finite-difference verification of backpropagated gradients.
//!
//! The checker only ever calls [`Network::loss`], so it shares no code with
//! the backward passes it verifies.

use rand::Rng;

use super::{LayerSpec, ModelSpec, ModelState, Network, ParamSet};
use crate::dataset::Sample;
use crate::rng::substream;
use crate::Result;

/// Denominator floor for the elementwise relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients with the fourth-order central difference
/// `(8 (L(t+h) - L(t-h)) - (L(t+2h) - L(t-2h))) / 12h` for every parameter,
/// returning the largest `|g - fd| / max(|g|, |fd|, REL_FLOOR)`.
pub fn check_gradients(
    net: &Network,
    params: &ParamSet,
    state: &ModelState,
    batch: &[&Sample],
    dropout_seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = net.loss_and_grad(params, state, batch, dropout_seed)?.grad;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for i in 0..params.len() {
        let orig = probe.values[i];
        let mut at = |offset: f64| {
            probe.values[i] = orig + offset;
            net.loss(&probe, state, batch, dropout_seed)
        };
        let (up2, up, down, down2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
        probe.values[i] = orig;
        let fd = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
        let g = analytic.values[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// A small random network containing every layer kind.
pub fn random_micro_spec(seed: u64) -> ModelSpec {
    let mut rng = substream(seed, &[0x6772_6164]);
    let rows = rng.random_range(2..=4);
    let cols = rng.random_range(2..=4);
    let channels = rng.random_range(1..=3);
    let kernel = |rng: &mut rand_chacha::ChaCha8Rng| [1, 3, 3, 5][rng.random_range(0..4)];
    let classes = rng.random_range(2..=5);
    let mut layers = vec![
        LayerSpec::Input { rows, cols, channels },
        LayerSpec::Conv2d {
            filters: rng.random_range(2..=4),
            kernel_h: kernel(&mut rng),
            kernel_w: kernel(&mut rng),
        },
        LayerSpec::Norm,
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            filters: rng.random_range(2..=4),
            kernel_h: kernel(&mut rng),
            kernel_w: kernel(&mut rng),
        },
        LayerSpec::Norm,
        LayerSpec::Relu,
        LayerSpec::FullyConnected {
            units: rng.random_range(3..=8),
        },
    ];
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::Norm);
    }
    layers.extend([
        LayerSpec::Dropout {
            p: rng.random_range(0.2..0.6),
        },
        LayerSpec::FullyConnected { units: classes },
        LayerSpec::Softmax,
        LayerSpec::Classification { classes },
    ]);
    ModelSpec::new(layers).expect("micro spec is valid")
}

/// Random inputs and labels sized for `spec`.
pub fn random_batch(spec: &ModelSpec, seed: u64, n: usize) -> Vec<Sample> {
    let shape = spec.input_shape().expect("valid spec");
    let classes = spec.classes().expect("valid spec");
    let mut rng = substream(seed, &[0x6261_7463]);
    (0..n)
        .map(|i| Sample {
            x: (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: rng.random_range(1..=classes),
            user_id: 1,
            id: i as u64,
        })
        .collect()
}

/// Runs the checker on a fresh micro network; returns the spec for reporting.
pub fn check_micro(seed: u64) -> Result<(ModelSpec, GradCheckReport)> {
    let spec = random_micro_spec(seed);
    let net = Network::new(&spec)?;
    let (mut params, state) = net.init(seed);
    // Perturb scales and shifts away from their trivial initial values.
    let mut rng = substream(seed, &[0x7065_7274]);
    for seg in &params.layout.segments.clone() {
        if matches!(seg.name, "scale" | "shift" | "bias") {
            for v in &mut params.values[seg.range.clone()] {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let batch = random_batch(&spec, seed, 4);
    let refs: Vec<&Sample> = batch.iter().collect();
    let report = check_gradients(&net, &params, &state, &refs, seed, 1e-4)?;
    Ok((spec, report))
}
