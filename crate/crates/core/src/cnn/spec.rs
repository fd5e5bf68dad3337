use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Activation shape of one sample: `channels x height x width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn flat(units: usize) -> Self {
        Self::new(units, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Input {
        rows: usize,
        cols: usize,
        channels: usize,
    },
    /// Stride-1 convolution with "same" zero padding.
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    /// Batch normalization with a learned per-channel scale and shift.
    Norm,
    Relu,
    FullyConnected {
        units: usize,
    },
    Dropout {
        p: f64,
    },
    Softmax,
    Classification {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Norm => "norm",
            LayerSpec::Relu => "relu",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Classification { .. } => "classification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Two conv/norm/relu stages, one hidden fully connected layer with
    /// dropout, and a `Q`-way softmax output head.
    pub fn cnn(
        rows: usize,
        cols: usize,
        classes: usize,
        filters: usize,
        kernel: usize,
        fc_units: usize,
        dropout: f64,
    ) -> Result<Self> {
        use LayerSpec::*;
        let conv = Conv2d {
            filters,
            kernel_h: kernel,
            kernel_w: kernel,
        };
        Self::new(vec![
            Input {
                rows,
                cols,
                channels: 3,
            },
            conv.clone(),
            Norm,
            Relu,
            conv,
            Norm,
            Relu,
            FullyConnected { units: fc_units },
            Dropout { p: dropout },
            FullyConnected { units: classes },
            Softmax,
            Classification { classes },
        ])
    }

    /// The full-size network: 256 filters of 3x3 and 512 hidden units.
    pub fn paper(rows: usize, cols: usize, classes: usize) -> Result<Self> {
        Self::cnn(rows, cols, classes, 256, 3, 512, 0.5)
    }

    /// The scaled-down network used for quick experiments on a 4x4 grid.
    pub fn desk(classes: usize) -> Result<Self> {
        Self::cnn(4, 4, classes, 32, 3, 128, 0.5)
    }

    /// Flatten, then `hidden` fully connected ReLU layers and a softmax head.
    pub fn mlp(rows: usize, cols: usize, classes: usize, hidden: &[usize]) -> Result<Self> {
        use LayerSpec::*;
        let mut layers = vec![Input {
            rows,
            cols,
            channels: 3,
        }];
        for &units in hidden {
            layers.push(FullyConnected { units });
            layers.push(Relu);
        }
        layers.push(FullyConnected { units: classes });
        layers.push(Softmax);
        layers.push(Classification { classes });
        Self::new(layers)
    }

    pub fn input_shape(&self) -> Result<Shape> {
        match self.layers.first() {
            Some(LayerSpec::Input {
                rows,
                cols,
                channels,
            }) => Ok(Shape::new(*channels, *rows, *cols)),
            _ => Err(Error::Config("first layer must be an input layer".into())),
        }
    }

    pub fn classes(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Classification { classes }) => Ok(*classes),
            _ => Err(Error::Config("last layer must be a classification layer".into())),
        }
    }

    /// Output shape of every layer, validating the stack on the way.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "a model needs at least an input and a classification layer".into(),
            ));
        }
        let mut shape = self.input_shape()?;
        let classes = self.classes()?;
        if shape.is_empty() {
            return Err(Error::Config("input layer has zero size".into()));
        }
        let mut shapes = vec![shape];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            shape = match *layer {
                LayerSpec::Input { .. } => {
                    return Err(Error::Config(format!("layer {i}: input layer must come first")))
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                } => {
                    if filters == 0 {
                        return Err(Error::Config(format!("layer {i}: zero filters")));
                    }
                    if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: kernel {kernel_h}x{kernel_w} must be odd and positive"
                        )));
                    }
                    Shape::new(filters, shape.height, shape.width)
                }
                LayerSpec::FullyConnected { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: zero units")));
                    }
                    Shape::flat(units)
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout probability {p} outside [0, 1)"
                        )));
                    }
                    shape
                }
                LayerSpec::Classification { classes: q } => {
                    if i != last {
                        return Err(Error::Config(format!(
                            "layer {i}: classification must be the last layer"
                        )));
                    }
                    if shape.len() != q || q != classes {
                        return Err(Error::Config(format!(
                            "classification over {q} classes fed with {} values",
                            shape.len()
                        )));
                    }
                    shape
                }
                LayerSpec::Norm | LayerSpec::Relu | LayerSpec::Softmax => shape,
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        Sha256::digest(&json).into()
    }
}

/// Learnable parameter census: weights, biases and normalization
/// scale/shift.
pub fn param_count_actual(spec: &ModelSpec) -> Result<usize> {
    let shapes = spec.shapes()?;
    let mut total = 0;
    for (i, layer) in spec.layers.iter().enumerate().skip(1) {
        let input = shapes[i - 1];
        total += match *layer {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
            } => filters * input.channels * kernel_h * kernel_w + filters,
            LayerSpec::FullyConnected { units } => units * input.len() + units,
            LayerSpec::Norm => 2 * input.channels,
            _ => 0,
        };
    }
    Ok(total)
}

/// Closed-form size used for overhead accounting:
/// `2 C N_CL W_x W_y + zeta N_CL W_x W_y N_FCL`.
pub fn param_count_paper(
    channels: u64,
    n_cl: u64,
    w_x: u64,
    w_y: u64,
    zeta: f64,
    n_fcl: u64,
) -> Result<u64> {
    if channels == 0 || n_cl == 0 || w_x == 0 || w_y == 0 || n_fcl == 0 || !(zeta > 0.0) {
        return Err(Error::Config("parameter formula needs positive sizes".into()));
    }
    let conv = 2 * channels * n_cl * w_x * w_y;
    let fc = (zeta * (n_cl * w_x * w_y * n_fcl) as f64).round() as u64;
    Ok(conv + fc)
}
