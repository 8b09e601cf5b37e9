//! Densely-connected CNN regressors with a single sigmoid output.
//!
//! Layout: stem convolution, then dense blocks separated by transition
//! layers, then ReLU, global average pooling, a one-neuron fully connected
//! layer and a sigmoid. Inside a dense block every layer sees the channel
//! concatenation of the block input and all earlier layer outputs, and adds
//! `growth_rate` channels of its own.
//!
//! There is no batch normalization anywhere: each composite layer is
//! `ReLU → conv` with a per-channel bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::dataset::MAX_AGE_YEARS;
use crate::error::{Error, Result};
use crate::ops::window_output_len;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stem {
    /// One 3×3 convolution, stride 1, padding 1.
    Compact,
    /// 7×7 convolution with stride 2 and padding 3, then 2×2 average pooling.
    Imagenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (H, W)
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub initial_channels: usize,
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    /// Channel multiplier applied by each transition layer, in (0, 1].
    pub compression: f64,
    /// Insert a 1×1 convolution to `4 × growth_rate` channels before each 3×3.
    pub bottleneck: bool,
    pub stem: Stem,
    pub seed: u64,
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Two blocks of two layers, growth 4, 64×64 grayscale input.
    DenseTiny,
    /// DenseNet-169 block layout (6, 12, 32, 32), growth 32, 224×224 input.
    Dense169Shape,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["dense-tiny", "dense169"];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dense-tiny" => Some(Preset::DenseTiny),
            "dense169" => Some(Preset::Dense169Shape),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::DenseTiny => "dense-tiny",
            Preset::Dense169Shape => "dense169",
        }
    }

    pub fn spec(self, seed: u64) -> NetworkSpec {
        match self {
            Preset::DenseTiny => NetworkSpec {
                input_size: (64, 64),
                input_channels: 1,
                initial_channels: 8,
                growth_rate: 4,
                block_layers: vec![2, 2],
                compression: 0.5,
                bottleneck: false,
                stem: Stem::Compact,
                seed,
            },
            Preset::Dense169Shape => NetworkSpec {
                input_size: (224, 224),
                input_channels: 1,
                initial_channels: 64,
                growth_rate: 32,
                block_layers: vec![6, 12, 32, 32],
                compression: 0.5,
                bottleneck: true,
                stem: Stem::Imagenet,
                seed,
            },
        }
    }
}

/// Channel and spatial bookkeeping derived from a spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// (channels, H, W) after the stem.
    pub stem_out: (usize, usize, usize),
    pub blocks: Vec<BlockLayout>,
    /// Channels leaving the last block, i.e. the head's input width.
    pub head_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub channels_in: usize,
    pub channels_out: usize,
    pub height: usize,
    pub width: usize,
    /// Channels after the following transition layer, if any.
    pub transition_out: Option<usize>,
}

impl NetworkSpec {
    pub fn bottleneck_width(&self) -> usize {
        4 * self.growth_rate
    }

    /// Checks every structural constraint and returns the resulting layout.
    pub fn layout(&self) -> Result<Layout> {
        let (h, w) = self.input_size;
        let positive = [
            ("input height", h),
            ("input width", w),
            ("input_channels", self.input_channels),
            ("initial_channels", self.initial_channels),
            ("growth_rate", self.growth_rate),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.block_layers.is_empty() {
            return Err(Error::InvalidSpec("block_layers must not be empty".into()));
        }
        if let Some(i) = self.block_layers.iter().position(|&l| l == 0) {
            return Err(Error::InvalidSpec(format!("block {i} has zero layers")));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "compression {} outside (0, 1]",
                self.compression
            )));
        }

        let (mut h, mut w) = (h, w);
        match self.stem {
            Stem::Compact => {}
            Stem::Imagenet => {
                if h + 6 < 7 || w + 6 < 7 {
                    return Err(Error::InvalidSpec("input too small for 7×7 stem".into()));
                }
                h = window_output_len(h, 7, 2, 3);
                w = window_output_len(w, 7, 2, 3);
                if h < 2 || w < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "spatial dims {h}×{w} after stem convolution too small for 2×2 pooling"
                    )));
                }
                h /= 2;
                w /= 2;
            }
        }
        let stem_out = (self.initial_channels, h, w);

        let mut channels = self.initial_channels;
        let mut blocks = Vec::with_capacity(self.block_layers.len());
        for (b, &layers) in self.block_layers.iter().enumerate() {
            let out = channels + layers * self.growth_rate;
            let last = b + 1 == self.block_layers.len();
            let transition_out = if last {
                None
            } else {
                let compressed = (self.compression * out as f64).floor() as usize;
                if compressed < 1 {
                    return Err(Error::InvalidSpec(format!(
                        "transition {b}: floor({} × {out}) = 0 channels",
                        self.compression
                    )));
                }
                if h < 2 || w < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "transition {b}: spatial dims {h}×{w} cannot be halved"
                    )));
                }
                Some(compressed)
            };
            blocks.push(BlockLayout {
                channels_in: channels,
                channels_out: out,
                height: h,
                width: w,
                transition_out,
            });
            if let Some(c) = transition_out {
                channels = c;
                h /= 2;
                w /= 2;
            } else {
                channels = out;
            }
        }
        Ok(Layout {
            stem_out,
            blocks,
            head_in: channels,
        })
    }

    /// Parameter names and shapes in the order [`Network`] stores them.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let layout = self.layout()?;
        let mut shapes = Vec::new();
        let mut conv = |name: String, o: usize, c: usize, k: usize| {
            shapes.push((format!("{name}.weight"), vec![o, c, k, k]));
            shapes.push((format!("{name}.bias"), vec![o]));
        };
        let stem_k = match self.stem {
            Stem::Compact => 3,
            Stem::Imagenet => 7,
        };
        conv("stem".into(), self.initial_channels, self.input_channels, stem_k);
        for (b, block) in layout.blocks.iter().enumerate() {
            for l in 0..self.block_layers[b] {
                let c = block.channels_in + l * self.growth_rate;
                if self.bottleneck {
                    conv(format!("block{b}.layer{l}.bottleneck"), self.bottleneck_width(), c, 1);
                    conv(
                        format!("block{b}.layer{l}.conv"),
                        self.growth_rate,
                        self.bottleneck_width(),
                        3,
                    );
                } else {
                    conv(format!("block{b}.layer{l}.conv"), self.growth_rate, c, 3);
                }
            }
            if let Some(out) = block.transition_out {
                conv(format!("transition{b}"), out, block.channels_out, 1);
            }
        }
        shapes.push(("head.weight".into(), vec![1, layout.head_in]));
        shapes.push(("head.bias".into(), vec![1]));
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Channel counts observed on activations while running one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockTrace {
    pub channels_in: usize,
    pub channels_out: usize,
    pub layers: usize,
}

/// Nodes produced by recording a network onto a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    /// One leaf per parameter, in [`Network::parameters`] order.
    pub params: Vec<NodeId>,
    /// N×1 sigmoid output.
    pub output: NodeId,
    pub blocks: Vec<BlockTrace>,
}

/// Anything that can record a scalar-per-sample forward pass onto a graph.
pub trait GraphModel<T: Real> {
    /// Per-sample input dims (C, H, W).
    fn input_dims(&self) -> [usize; 3];

    /// Records the forward pass for `input` (N×C×H×W) and returns the N×1
    /// output node.
    fn record(&self, graph: &mut Graph<T>, input: NodeId) -> Result<NodeId>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<NamedTensor<T>>,
}

impl<T: Real> Network<T> {
    /// Builds a network with Kaiming-uniform weights and zero biases, drawn
    /// deterministically from `spec.seed`.
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.parameter_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = shapes
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| T::from_f64_lossy((2.0 * rng.random::<f64>() - 1.0) * bound))
                        .collect();
                    Tensor::from_parts(shape, data)
                };
                NamedTensor { name, tensor }
            })
            .collect();
        Ok(Network { spec, params })
    }

    /// Reassembles a network from stored parameters, checking names and
    /// shapes against what `spec` implies.
    pub fn from_parameters(spec: NetworkSpec, params: Vec<NamedTensor<T>>) -> Result<Self> {
        let shapes = spec.parameter_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "spec implies {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::InvalidSpec(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn into_parameters(self) -> Vec<NamedTensor<T>> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = batch.dims4("forward")?;
        let [ec, eh, ew] = self.input_dims();
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::shape(
                "forward (batch vs network input)",
                batch.shape(),
                &[0, ec, eh, ew],
            ));
        }
        Ok(())
    }

    /// Records the network on `graph`, adding every parameter as a leaf.
    pub fn bind(&self, graph: &mut Graph<T>, input: NodeId) -> Result<Bound> {
        self.check_input(graph.value(input))?;
        let params: Vec<NodeId> = self.params.iter().map(|p| graph.leaf(p.tensor.clone())).collect();
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter list matches spec");

        let spec = &self.spec;
        let layout = spec.layout()?;
        let mut x = match spec.stem {
            Stem::Compact => {
                let (w, b) = (take(), take());
                graph.conv2d(input, w, b, 1, 1)?
            }
            Stem::Imagenet => {
                let (w, b) = (take(), take());
                let y = graph.conv2d(input, w, b, 2, 3)?;
                graph.avg_pool2d(y, 2, 2)?
            }
        };

        let mut traces = Vec::with_capacity(layout.blocks.len());
        for (bi, block) in layout.blocks.iter().enumerate() {
            let channels_in = graph.value(x).shape()[1];
            let mut features = vec![x];
            for _ in 0..spec.block_layers[bi] {
                let joined = if features.len() == 1 {
                    features[0]
                } else {
                    graph.concat_channels(&features)?
                };
                let mut h = graph.relu(joined);
                if spec.bottleneck {
                    let (w, b) = (take(), take());
                    let y = graph.conv2d(h, w, b, 1, 0)?;
                    h = graph.relu(y);
                }
                let (w, b) = (take(), take());
                features.push(graph.conv2d(h, w, b, 1, 1)?);
            }
            x = graph.concat_channels(&features)?;
            let channels_out = graph.value(x).shape()[1];
            let layers = spec.block_layers[bi];
            assert_eq!(
                channels_out,
                channels_in + layers * spec.growth_rate,
                "dense block {bi} channel bookkeeping"
            );
            traces.push(BlockTrace {
                channels_in,
                channels_out,
                layers,
            });
            if block.transition_out.is_some() {
                let h = graph.relu(x);
                let (w, b) = (take(), take());
                let y = graph.conv2d(h, w, b, 1, 0)?;
                x = graph.avg_pool2d(y, 2, 2)?;
            }
        }

        let h = graph.relu(x);
        let pooled = graph.global_avg_pool(h)?;
        let (w, b) = (take(), take());
        let logit = graph.fully_connected(pooled, w, b)?;
        let output = graph.sigmoid(logit);
        Ok(Bound {
            params,
            output,
            blocks: traces,
        })
    }

    /// Sigmoid outputs in (0, 1), shape N×1.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(batch)?.0)
    }

    pub fn forward_traced(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<BlockTrace>)> {
        let mut graph = Graph::new();
        let input = graph.leaf(batch.clone());
        let bound = self.bind(&mut graph, input)?;
        Ok((graph.value(bound.output).clone(), bound.blocks))
    }

    /// Forward outputs mapped back to years (× 90).
    pub fn predict_age(&self, batch: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self
            .forward(batch)?
            .data()
            .iter()
            .map(|y| y.as_f64() * MAX_AGE_YEARS)
            .collect())
    }
}

impl<T: Real> GraphModel<T> for Network<T> {
    fn input_dims(&self) -> [usize; 3] {
        [self.spec.input_channels, self.spec.input_size.0, self.spec.input_size.1]
    }

    fn record(&self, graph: &mut Graph<T>, input: NodeId) -> Result<NodeId> {
        Ok(self.bind(graph, input)?.output)
    }
}
