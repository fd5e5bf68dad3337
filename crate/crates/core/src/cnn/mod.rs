//! Feedforward networks with exact backpropagation.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod spec;

use std::ops::Range;
use std::sync::Arc;

use crate::dataset::Sample;
use crate::rng::{domain, substream};
use crate::{Error, Result};
pub use layers::{Batch, Mode, NormStats};
use layers::{build_layer, cross_entropy, Cache, ForwardCtx, Layer};
pub use spec::{param_count_actual, param_count_paper, LayerSpec, ModelSpec, Shape};

/// Samples evaluated per forward call in evaluation mode.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub layer: usize,
    pub name: &'static str,
    pub range: Range<usize>,
}

/// Where each layer's parameters live inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
    /// `(layer index, range)` for every layer that owns parameters.
    pub layers: Vec<(usize, Range<usize>)>,
}

/// Flat parameter vector with per-layer segment views. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub layout: Arc<ParamLayout>,
}

impl ParamSet {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let len = layout.layers.last().map_or(0, |(_, r)| r.end);
        Self {
            values: vec![0.0; len],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "{} values for a parameter set of {}",
                values.len(),
                self.values.len()
            )));
        }
        Ok(Self {
            values,
            layout: Arc::clone(&self.layout),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.values.len() == other.values.len()
            && (Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout)
    }

    pub fn check_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "parameter sets of length {} and {} differ in shape",
                self.len(),
                other.len()
            )))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Running normalization statistics, owned by whoever drives training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub running: Vec<f64>,
}

pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamSet,
    /// Batch statistics of each normalization layer, indexed by layer.
    pub stats: Vec<Option<NormStats>>,
}

struct Pass {
    activations: Vec<Batch>,
    caches: Vec<Cache>,
}

#[derive(Debug)]
pub struct Network {
    spec: ModelSpec,
    input: Shape,
    classes: usize,
    /// Compute layers; index `i` here is layer `i + 1` of the spec.
    layers: Vec<Box<dyn Layer>>,
    param_ranges: Vec<Range<usize>>,
    state_ranges: Vec<Range<usize>>,
    layout: Arc<ParamLayout>,
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::new();
        let mut param_ranges = Vec::new();
        let mut state_ranges = Vec::new();
        let mut segments = Vec::new();
        let mut layer_ranges = Vec::new();
        let (mut p, mut s) = (0, 0);
        for (i, ls) in spec.layers.iter().enumerate().skip(1) {
            let layer = build_layer(ls, shapes[i - 1])?;
            debug_assert_eq!(layer.output_shape(), shapes[i]);
            let start = p;
            for (name, len) in layer.param_segments() {
                segments.push(Segment {
                    layer: i,
                    name,
                    range: p..p + len,
                });
                p += len;
            }
            if p > start {
                layer_ranges.push((i, start..p));
            }
            param_ranges.push(start..p);
            state_ranges.push(s..s + layer.state_len());
            s += layer.state_len();
            layers.push(layer);
        }
        Ok(Self {
            spec: spec.clone(),
            input: shapes[0],
            classes: spec.classes()?,
            layers,
            param_ranges,
            state_ranges,
            layout: Arc::new(ParamLayout {
                segments,
                layers: layer_ranges,
            }),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layout(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    pub fn param_count(&self) -> usize {
        self.param_ranges.last().map_or(0, |r| r.end)
    }

    pub fn state_len(&self) -> usize {
        self.state_ranges.last().map_or(0, |r| r.end)
    }

    /// He-normal weights, zero biases, unit scales and zero shifts.
    pub fn init(&self, seed: u64) -> (ParamSet, ModelState) {
        let mut params = ParamSet::zeros(self.layout());
        let mut state = vec![0.0; self.state_len()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut rng = substream(seed, &[domain::INIT, i as u64 + 1]);
            layer.init(
                &mut params.values[self.param_ranges[i].clone()],
                &mut state[self.state_ranges[i].clone()],
                &mut rng,
            );
        }
        (params, ModelState { running: state })
    }

    pub fn fresh_state(&self) -> ModelState {
        self.init(0).1
    }

    fn check_params(&self, params: &ParamSet, state: &ModelState) -> Result<()> {
        if params.len() != self.param_count() || state.running.len() != self.state_len() {
            return Err(Error::Dimension(format!(
                "network expects {} parameters and {} state values, got {} and {}",
                self.param_count(),
                self.state_len(),
                params.len(),
                state.running.len()
            )));
        }
        Ok(())
    }

    fn stack(&self, inputs: &[&[f64]]) -> Result<Batch> {
        let dim = self.input.len();
        let mut data = Vec::with_capacity(inputs.len() * dim);
        for x in inputs {
            if x.len() != dim {
                return Err(Error::Dimension(format!(
                    "input of length {} for a network expecting {dim}",
                    x.len()
                )));
            }
            data.extend_from_slice(x);
        }
        Ok(Batch::new(inputs.len(), dim, data))
    }

    fn run(
        &self,
        params: &ParamSet,
        state: &ModelState,
        input: Batch,
        mode: Mode,
        dropout_seed: u64,
        keys: &[u64],
    ) -> Pass {
        let mut activations = vec![input];
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ctx = ForwardCtx {
                mode,
                dropout_seed,
                keys,
                layer_index: i + 1,
            };
            let (out, cache) = layer.forward(
                &params.values[self.param_ranges[i].clone()],
                &state.running[self.state_ranges[i].clone()],
                activations.last().expect("input present"),
                &ctx,
            );
            activations.push(out);
            caches.push(cache);
        }
        Pass {
            activations,
            caches,
        }
    }

    /// Class probabilities for one input tensor.
    pub fn forward(
        &self,
        params: &ParamSet,
        state: &ModelState,
        x: &[f64],
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Vec<f64>> {
        self.check_params(params, state)?;
        let batch = self.stack(&[x])?;
        let pass = self.run(params, state, batch, mode, dropout_seed, &[0]);
        Ok(pass.activations.last().expect("output").data.clone())
    }

    /// Evaluation-mode probabilities for many inputs.
    pub fn probabilities(&self, params: &ParamSet, state: &ModelState, inputs: &[&[f64]]) -> Result<Batch> {
        self.check_params(params, state)?;
        let mut data = Vec::with_capacity(inputs.len() * self.classes);
        for chunk in inputs.chunks(EVAL_CHUNK) {
            let keys = vec![0; chunk.len()];
            let pass = self.run(params, state, self.stack(chunk)?, Mode::Eval, 0, &keys);
            data.extend_from_slice(&pass.activations.last().expect("output").data);
        }
        Ok(Batch::new(inputs.len(), self.classes, data))
    }

    /// Label in `1..=Q` of the most probable class; ties go to the
    /// smallest index.
    pub fn predict(&self, params: &ParamSet, state: &ModelState, x: &[f64]) -> Result<usize> {
        let probs = self.forward(params, state, x, Mode::Eval, 0)?;
        Ok(argmax(&probs) + 1)
    }

    pub fn predict_many(&self, params: &ParamSet, state: &ModelState, inputs: &[&[f64]]) -> Result<Vec<usize>> {
        let probs = self.probabilities(params, state, inputs)?;
        Ok((0..probs.n).map(|s| argmax(probs.row(s)) + 1).collect())
    }

    /// Fraction of `samples` whose label is predicted exactly.
    pub fn accuracy(&self, params: &ParamSet, state: &ModelState, samples: &[&Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let inputs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
        let predicted = self.predict_many(params, state, &inputs)?;
        let hits = predicted.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    fn classes_of(&self, batch: &[&Sample]) -> Result<Vec<usize>> {
        batch
            .iter()
            .map(|s| {
                if s.label == 0 || s.label > self.classes {
                    Err(Error::LabelOutOfRange {
                        label: s.label,
                        classes: self.classes,
                    })
                } else {
                    Ok(s.class())
                }
            })
            .collect()
    }

    /// Training-mode mean cross-entropy over `batch`.
    pub fn loss(&self, params: &ParamSet, state: &ModelState, batch: &[&Sample], dropout_seed: u64) -> Result<f64> {
        self.check_params(params, state)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let classes = self.classes_of(batch)?;
        let inputs: Vec<&[f64]> = batch.iter().map(|s| s.x.as_slice()).collect();
        let keys: Vec<u64> = batch.iter().map(|s| s.id).collect();
        let pass = self.run(params, state, self.stack(&inputs)?, Mode::Train, dropout_seed, &keys);
        Ok(cross_entropy(pass.activations.last().expect("output"), &classes).0)
    }

    /// Training-mode mean cross-entropy and its exact gradient under the
    /// dropout masks drawn from `dropout_seed` and the sample ids.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        state: &ModelState,
        batch: &[&Sample],
        dropout_seed: u64,
    ) -> Result<LossGrad> {
        self.check_params(params, state)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let classes = self.classes_of(batch)?;
        let inputs: Vec<&[f64]> = batch.iter().map(|s| s.x.as_slice()).collect();
        let keys: Vec<u64> = batch.iter().map(|s| s.id).collect();
        let pass = self.run(params, state, self.stack(&inputs)?, Mode::Train, dropout_seed, &keys);
        let (loss, mut grad_out) = cross_entropy(pass.activations.last().expect("output"), &classes);
        let mut grad = params.zeros_like();
        for i in (0..self.layers.len()).rev() {
            let range = self.param_ranges[i].clone();
            let next = self.layers[i].backward(
                &params.values[range.clone()],
                &state.running[self.state_ranges[i].clone()],
                &pass.activations[i],
                &pass.activations[i + 1],
                &pass.caches[i],
                &grad_out,
                &mut grad.values[range],
                i > 0,
            );
            match next {
                Some(g) => grad_out = g,
                None => break,
            }
        }
        let stats = std::iter::once(None)
            .chain(pass.caches.into_iter().map(|c| c.stats))
            .collect();
        Ok(LossGrad { loss, grad, stats })
    }

    /// Exponential moving average of normalization statistics.
    pub fn update_running(&self, state: &mut ModelState, stats: &[Option<NormStats>], momentum: f64) {
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(Some(s)) = stats.get(i + 1) {
                layer.update_state(&mut state.running[self.state_ranges[i].clone()], s, momentum);
            }
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Convenience wrapper around [`Network::init`].
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    Ok(Network::new(spec)?.init(seed).0)
}
