//! Layered recognition model: named layers, per-layer parameters, and the
//! forward/backward plumbing the uncertainty and attribution code needs.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{ComputeGraph, Forward, Gradients, GraphBuilder, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize },
    Activation { function: Activation },
    /// 2×2 max pooling.
    Pool,
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }

    pub fn trainable(&self) -> bool {
        matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv { .. })
    }

    /// `(weight shape, bias shape)` for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameters aligned with the layer specs; `None` for layers
/// without parameters.
pub type ParamSet = Vec<Option<LayerParams>>;

/// Graph compiled from a layer list plus the node ids we read back.
#[derive(Clone, Debug)]
struct Network {
    graph: ComputeGraph,
    layer_nodes: Vec<NodeId>,
    logits: NodeId,
    selected_logit: NodeId,
    loss: NodeId,
    input: NodeId,
}

impl Network {
    fn build(input_shape: [usize; 3], specs: &[LayerSpec], class_count: usize) -> Result<Self> {
        let mut b = GraphBuilder::new();
        let input = b.input(&input_shape);
        let target = b.input(&[class_count]);
        let mut cur = input;
        let mut layer_nodes = Vec::with_capacity(specs.len());
        for spec in specs {
            cur = match spec.kind {
                LayerKind::Dense { .. } | LayerKind::Conv { .. } => {
                    let (ws, bs) = spec.param_shapes().expect("parametric");
                    let w = b.input(&ws);
                    let bias = b.input(&bs);
                    if matches!(spec.kind, LayerKind::Dense { .. }) {
                        b.dense(cur, w, bias)
                    } else {
                        b.conv2d(cur, w, bias)
                    }
                }
                LayerKind::Activation { function: Activation::Relu } => b.relu(cur),
                LayerKind::Activation { function: Activation::Tanh } => b.tanh(cur),
                LayerKind::Pool => b.max_pool2(cur),
                LayerKind::Flatten => b.flatten(cur),
            }
            .map_err(|e| Error::Shape(format!("layer '{}': {e}", spec.name)))?;
            layer_nodes.push(cur);
        }
        let logits = cur;
        if b.shape(logits) != Some(&[class_count][..]) {
            return Err(Error::Shape(format!(
                "final layer must output {class_count} logits"
            )));
        }
        let picked = b.mul(logits, target)?;
        let selected_logit = b.sum(picked)?;
        let loss = b.softmax_cross_entropy(logits, target)?;
        Ok(Self {
            graph: b.build(),
            layer_nodes,
            logits,
            selected_logit,
            loss,
            input,
        })
    }
}

/// Per-layer outputs of one clean forward pass.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub activations: Vec<Tensor>,
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub predicted_logit: f64,
}

/// Gradients of the selected-class logit, for one (possibly perturbed)
/// parameter set.
#[derive(Clone, Debug)]
pub struct ClassGradients {
    forward: Forward,
    grads: Gradients,
}

#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: f64,
    pub predicted_class: usize,
    pub params: ParamSet,
}

#[derive(Clone, Debug)]
pub struct LayeredModel {
    input_shape: [usize; 3],
    specs: Vec<LayerSpec>,
    params: ParamSet,
    class_count: usize,
    net: Network,
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl LayeredModel {
    pub fn new(
        input_shape: [usize; 3],
        specs: Vec<LayerSpec>,
        params: ParamSet,
        class_count: usize,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name '{}'", s.name)));
            }
        }
        if params.len() != specs.len() {
            return Err(Error::Shape(format!(
                "{} layers but {} parameter slots",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(&params) {
            match (spec.param_shapes(), p) {
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(Error::Shape(format!(
                            "layer '{}' expects weight {:?} and bias {:?}",
                            spec.name, ws, bs
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "parameter presence does not match layer '{}'",
                        spec.name
                    )))
                }
            }
        }
        let net = Network::build(input_shape, &specs, class_count)?;
        Ok(Self {
            input_shape,
            specs,
            params,
            class_count,
            net,
        })
    }

    /// He-normal weights, zero biases.
    pub fn initialized(
        input_shape: [usize; 3],
        specs: Vec<LayerSpec>,
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| {
                s.param_shapes().map(|(ws, bs)| {
                    let fan_in: usize = ws[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                    let n: usize = ws.iter().product();
                    let w = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    LayerParams {
                        weight: Tensor::new(ws, w).expect("shape"),
                        bias: Tensor::zeros(&bs),
                    }
                })
            })
            .collect();
        Self::new(input_shape, specs, params, class_count)
    }

    /// `flatten → 64 → 32 → classes` with ReLU.
    pub fn reference_mlp(input_shape: [usize; 3], class_count: usize, seed: u64) -> Result<Self> {
        let n: usize = input_shape.iter().product();
        let relu = || LayerKind::Activation { function: Activation::Relu };
        let specs = vec![
            LayerSpec::new("flatten", LayerKind::Flatten),
            LayerSpec::new("fc1", LayerKind::Dense { inputs: n, outputs: 64 }),
            LayerSpec::new("relu1", relu()),
            LayerSpec::new("fc2", LayerKind::Dense { inputs: 64, outputs: 32 }),
            LayerSpec::new("relu2", relu()),
            LayerSpec::new("fc3", LayerKind::Dense { inputs: 32, outputs: class_count }),
        ];
        Self::initialized(input_shape, specs, class_count, seed)
    }

    /// `conv 8 → pool → conv 16 → pool → dense 32 → classes`, 3×3 kernels, ReLU.
    pub fn reference_cnn(input_shape: [usize; 3], class_count: usize, seed: u64) -> Result<Self> {
        let [c, h, w] = input_shape;
        let relu = || LayerKind::Activation { function: Activation::Relu };
        let flat = 16 * (h / 4) * (w / 4);
        let specs = vec![
            LayerSpec::new("conv1", LayerKind::Conv { in_channels: c, out_channels: 8, kernel: 3 }),
            LayerSpec::new("relu1", relu()),
            LayerSpec::new("pool1", LayerKind::Pool),
            LayerSpec::new("conv2", LayerKind::Conv { in_channels: 8, out_channels: 16, kernel: 3 }),
            LayerSpec::new("relu2", relu()),
            LayerSpec::new("pool2", LayerKind::Pool),
            LayerSpec::new("flatten", LayerKind::Flatten),
            LayerSpec::new("fc1", LayerKind::Dense { inputs: flat, outputs: 32 }),
            LayerSpec::new("relu3", relu()),
            LayerSpec::new("fc2", LayerKind::Dense { inputs: 32, outputs: class_count }),
        ];
        Self::initialized(input_shape, specs, class_count, seed)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn graph(&self) -> &ComputeGraph {
        &self.net.graph
    }

    /// Graph node holding the output of layer `index`.
    pub fn layer_node(&self, index: usize) -> NodeId {
        self.net.layer_nodes[index]
    }

    pub fn input_node(&self) -> NodeId {
        self.net.input
    }

    pub fn selected_logit_node(&self) -> NodeId {
        self.net.selected_logit
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("unknown layer '{name}'")))
    }

    pub fn parametric_layers(&self) -> Vec<String> {
        self.specs
            .iter()
            .filter(|s| s.trainable())
            .map(|s| s.name.clone())
            .collect()
    }

    /// Replaces all parameters, keeping the architecture.
    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        Self::new(self.input_shape, self.specs.clone(), params, self.class_count)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?} input, image is {:?}",
                self.input_shape,
                image.shape()
            )));
        }
        Ok(())
    }

    /// Graph input list: image, target distribution, then each layer's
    /// weight and bias in order.
    pub fn graph_inputs<'a>(
        &self,
        image: &'a Tensor,
        target: &'a Tensor,
        params: &'a [Option<LayerParams>],
    ) -> Vec<&'a Tensor> {
        let mut inputs = vec![image, target];
        for p in params.iter().flatten() {
            inputs.push(&p.weight);
            inputs.push(&p.bias);
        }
        inputs
    }

    fn run(&self, image: &Image, target: &Tensor, params: &[Option<LayerParams>]) -> Result<Forward> {
        self.check_image(image)?;
        let x = image.to_tensor();
        self.net.graph.forward(&self.graph_inputs(&x, target, params))
    }

    pub fn forward_with_activations(&self, image: &Image) -> Result<ForwardRecord> {
        let fwd = self.run(image, &Tensor::zeros(&[self.class_count]), &self.params)?;
        Ok(self.record(&fwd))
    }

    fn record(&self, fwd: &Forward) -> ForwardRecord {
        let logits = fwd.value(self.net.logits).data().to_vec();
        let predicted_class = argmax_lowest(&logits);
        ForwardRecord {
            activations: self
                .net
                .layer_nodes
                .iter()
                .map(|&n| fwd.value(n).clone())
                .collect(),
            predicted_logit: logits[predicted_class],
            predicted_class,
            logits,
        }
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        let fwd = self.run(image, &Tensor::zeros(&[self.class_count]), &self.params)?;
        Ok(fwd.value(self.net.logits).data().to_vec())
    }

    pub fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(crate::tensor::softmax(&self.logits(image)?))
    }

    pub fn predict(&self, image: &Image) -> Result<usize> {
        Ok(argmax_lowest(&self.logits(image)?))
    }

    /// Index of the layer whose output feeds the final classifier.
    fn penultimate_index(&self) -> Result<usize> {
        if self.specs.iter().filter(|s| s.trainable()).count() < 2 {
            return Err(Error::Config(
                "penultimate features need at least two parametric layers".into(),
            ));
        }
        Ok(self.specs.len() - 2)
    }

    pub fn penultimate_feature(&self, image: &Image) -> Result<Vec<f64>> {
        let idx = self.penultimate_index()?;
        let fwd = self.run(image, &Tensor::zeros(&[self.class_count]), &self.params)?;
        Ok(fwd.value(self.net.layer_nodes[idx]).data().to_vec())
    }

    /// Penultimate feature and logits from a single pass.
    pub fn feature_and_logits(&self, image: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
        let idx = self.penultimate_index()?;
        let fwd = self.run(image, &Tensor::zeros(&[self.class_count]), &self.params)?;
        Ok((
            fwd.value(self.net.layer_nodes[idx]).data().to_vec(),
            fwd.value(self.net.logits).data().to_vec(),
        ))
    }

    /// Population standard deviation of a parametric layer's weights
    /// (biases excluded).
    pub fn layer_weight_std(&self, layer: &str) -> Result<f64> {
        let idx = self.layer_index(layer)?;
        let p = self.params[idx]
            .as_ref()
            .ok_or_else(|| Error::Config(format!("layer '{layer}' has no weights")))?;
        Ok(population_std(p.weight.data()))
    }

    /// Forward and backward of the class-`class` logit under `params`.
    pub fn class_gradients(
        &self,
        image: &Image,
        class: usize,
        params: &[Option<LayerParams>],
    ) -> Result<ClassGradients> {
        if class >= self.class_count {
            return Err(Error::InvalidInput(format!("class {class} out of range")));
        }
        let forward = self.run(image, &Tensor::one_hot(self.class_count, class), params)?;
        let grads = self.net.graph.backward(&forward, self.net.selected_logit)?;
        Ok(ClassGradients { forward, grads })
    }

    /// Cross-entropy loss and parameter gradients for one labelled image.
    pub fn loss_gradients(&self, image: &Image, label: usize) -> Result<LossGradients> {
        if label >= self.class_count {
            return Err(Error::InvalidInput(format!("label {label} out of range")));
        }
        let forward = self.run(image, &Tensor::one_hot(self.class_count, label), &self.params)?;
        let grads = self.net.graph.backward(&forward, self.net.loss)?;
        let logits = forward.value(self.net.logits).data();
        let mut inputs = self.net.graph.input_nodes().iter().skip(2);
        let params = self
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|_| {
                    let w = *inputs.next().expect("weight node");
                    let b = *inputs.next().expect("bias node");
                    LayerParams {
                        weight: grads.wrt(w).clone(),
                        bias: grads.wrt(b).clone(),
                    }
                })
            })
            .collect();
        Ok(LossGradients {
            loss: forward.value(self.net.loss).item()?,
            predicted_class: argmax_lowest(logits),
            params,
        })
    }
}

impl ClassGradients {
    /// `‖∂ŷ/∂a_k‖₂` for the output of layer `layer_index`.
    pub fn activation_grad_norm(&self, model: &LayeredModel, layer_index: usize) -> f64 {
        self.grads.wrt(model.layer_node(layer_index)).l2_norm()
    }

    pub fn input_gradient(&self, model: &LayeredModel) -> &Tensor {
        self.grads.wrt(model.input_node())
    }

    pub fn logits(&self, model: &LayeredModel) -> &[f64] {
        self.forward.value(model.net.logits).data()
    }

    pub fn forward(&self) -> &Forward {
        &self.forward
    }
}

pub(crate) fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}
