//! Layer descriptors, the `Network` container, and its forward/backward
//! entry points.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::{softmax_row, Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One layer of the network. Conv and linear layers carry a name that keys
/// their parameter tensors (`<name>.weight` / `<name>.bias`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv2d { name: String, in_channels: usize, out_channels: usize, kernel: usize, padding: usize },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Linear { name: String, in_features: usize, out_features: usize },
}

impl Layer {
    fn label(&self) -> String {
        match self {
            Layer::Conv2d { name, .. } | Layer::Linear { name, .. } => name.clone(),
            Layer::Relu => "relu".into(),
            Layer::MaxPool2x2 => "maxpool".into(),
            Layer::GlobalAvgPool => "gap".into(),
        }
    }
}

/// Feed-forward CNN: ordered layers, named parameters, optional binary
/// masks aligned to parameters. Masked parameter entries are exactly zero
/// and stay zero through every optimizer step.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor>,
    masks: BTreeMap<String, Tensor>,
    input_channels: usize,
}

/// A recorded forward pass, ready to be differentiated once.
pub struct Forward {
    graph: Graph,
    input: NodeId,
    output: NodeId,
    layer_outputs: Vec<NodeId>,
    param_ids: BTreeMap<String, NodeId>,
}

/// Gradients produced by [`Forward::backward`]: one tensor per parameter
/// plus the gradient with respect to the network input.
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub input: Tensor,
}

impl Network {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn masks(&self) -> &BTreeMap<String, Tensor> {
        &self.masks
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub(crate) fn from_parts(
        layers: Vec<Layer>,
        params: BTreeMap<String, Tensor>,
        masks: BTreeMap<String, Tensor>,
        input_channels: usize,
    ) -> Result<Self> {
        let net = Network { layers, params, masks, input_channels };
        net.validate_masks()?;
        Ok(net)
    }

    /// Install a binary mask for a parameter tensor and zero the masked
    /// entries. The mask must match the parameter shape exactly.
    pub fn set_mask(&mut self, name: &str, mask: Tensor) -> Result<()> {
        let param = self.params.get_mut(name).ok_or_else(|| {
            Error::InvalidArgument(format!("no parameter named '{name}'"))
        })?;
        if mask.shape() != param.shape() {
            return Err(Error::Shape {
                context: format!("mask for '{name}'"),
                detail: format!("mask shape {:?} != param shape {:?}", mask.shape(), param.shape()),
            });
        }
        if !mask.is_binary() {
            return Err(Error::InvalidArgument(format!("mask for '{name}' is not binary")));
        }
        for (p, m) in param.data_mut().iter_mut().zip(mask.data()) {
            *p *= m;
        }
        self.masks.insert(name.to_string(), mask);
        Ok(())
    }

    fn validate_masks(&self) -> Result<()> {
        for (name, mask) in &self.masks {
            let param = self.params.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("mask '{name}' has no matching parameter"))
            })?;
            if mask.shape() != param.shape() {
                return Err(Error::Shape {
                    context: format!("mask for '{name}'"),
                    detail: "mask/param shape mismatch".into(),
                });
            }
            if !mask.is_binary() {
                return Err(Error::InvalidArgument(format!("mask for '{name}' is not binary")));
            }
        }
        Ok(())
    }

    /// Re-zero masked parameter entries (idempotent).
    pub fn enforce_masks(&mut self) {
        for (name, mask) in &self.masks {
            if let Some(param) = self.params.get_mut(name) {
                for (p, m) in param.data_mut().iter_mut().zip(mask.data()) {
                    *p *= m;
                }
            }
        }
    }

    /// Shapes of the prunable tensors: convolution and linear weights.
    /// Biases are excluded.
    pub fn prunable_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.params
            .iter()
            .filter(|(name, _)| name.ends_with(".weight"))
            .map(|(name, t)| (name.clone(), t.shape().to_vec()))
            .collect()
    }

    /// Number of channels in the output of layer `index`, when that output
    /// is spatial (conv / relu / pool).
    pub fn output_channels_at(&self, index: usize) -> Option<usize> {
        if index >= self.layers.len() {
            return None;
        }
        let mut channels = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d { out_channels, .. } => channels = *out_channels,
                Layer::Relu | Layer::MaxPool2x2 => {}
                Layer::GlobalAvgPool | Layer::Linear { .. } => {
                    if i <= index {
                        return None;
                    }
                }
            }
            if i == index {
                return Some(channels);
            }
        }
        None
    }

    /// Index of the last convolution layer.
    pub fn final_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv2d { .. }))
    }

    /// Record layers `0..=upto` (or all when `None`) on an existing graph,
    /// starting from `input`. Returns per-layer output nodes and the node
    /// ids of the parameters that were loaded.
    pub fn forward_on(
        &self,
        graph: &mut Graph,
        input: NodeId,
        upto: Option<usize>,
    ) -> Result<(Vec<NodeId>, BTreeMap<String, NodeId>)> {
        let last = upto.unwrap_or(self.layers.len().saturating_sub(1));
        if last >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer index {last} out of range for {} layers",
                self.layers.len()
            )));
        }
        if graph.shape(input).len() == 4 && graph.shape(input)[1] != self.input_channels {
            return Err(Error::Shape {
                context: self.layers[0].label(),
                detail: format!(
                    "input has {} channels, network expects {}",
                    graph.shape(input)[1],
                    self.input_channels
                ),
            });
        }
        let mut param_ids = BTreeMap::new();
        let mut outputs = Vec::with_capacity(last + 1);
        let mut current = input;
        for layer in &self.layers[..=last] {
            current = match layer {
                Layer::Conv2d { name, padding, .. } => {
                    let w = self.load_param(graph, &mut param_ids, &format!("{name}.weight"))?;
                    let b = self.load_param(graph, &mut param_ids, &format!("{name}.bias"))?;
                    graph.conv2d(current, w, b, *padding, name)?
                }
                Layer::Relu => graph.relu(current),
                Layer::MaxPool2x2 => graph.maxpool2x2(current, "maxpool")?,
                Layer::GlobalAvgPool => graph.global_avg_pool(current, "gap")?,
                Layer::Linear { name, .. } => {
                    let w = self.load_param(graph, &mut param_ids, &format!("{name}.weight"))?;
                    let b = self.load_param(graph, &mut param_ids, &format!("{name}.bias"))?;
                    graph.linear(current, w, b, name)?
                }
            };
            outputs.push(current);
        }
        Ok((outputs, param_ids))
    }

    fn load_param(
        &self,
        graph: &mut Graph,
        ids: &mut BTreeMap<String, NodeId>,
        name: &str,
    ) -> Result<NodeId> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))?;
        let id = graph.leaf(t);
        ids.insert(name.to_string(), id);
        Ok(id)
    }

    /// Run the full network on a `[B, C, H, W]` batch, recording the graph.
    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        if x.shape().len() != 4 {
            return Err(Error::Shape {
                context: "forward".into(),
                detail: format!("input must be [B,C,H,W], got {:?}", x.shape()),
            });
        }
        let mut graph = Graph::new();
        let input = graph.leaf(x);
        let (layer_outputs, param_ids) = self.forward_on(&mut graph, input, None)?;
        let output = *layer_outputs.last().expect("network has at least one layer");
        Ok(Forward { graph, input, output, layer_outputs, param_ids })
    }

    /// Class probabilities for a batch: forward pass plus a softmax over the
    /// final logits. No gradient bookkeeping survives the call.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let fwd = self.forward(x)?;
        let logits = fwd.output_tensor();
        let shape = logits.shape().to_vec();
        let k = shape[1];
        let mut out = vec![0.0; logits.len()];
        for (orow, irow) in out.chunks_mut(k).zip(logits.data().chunks(k)) {
            softmax_row(irow, orow);
        }
        Tensor::new(shape, out)
    }
}

impl Forward {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn input_id(&self) -> NodeId {
        self.input
    }

    pub fn layer_output_id(&self, layer: usize) -> Option<NodeId> {
        self.layer_outputs.get(layer).copied()
    }

    /// Tape node a named parameter was loaded onto during this pass.
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.param_ids.get(name).copied()
    }

    pub fn output_tensor(&self) -> Tensor {
        Tensor::new(self.graph.shape(self.output).to_vec(), self.graph.data(self.output).to_vec())
            .expect("recorded node is consistent")
    }

    pub fn layer_output_tensor(&self, layer: usize) -> Option<Tensor> {
        let id = self.layer_output_id(layer)?;
        Some(
            Tensor::new(self.graph.shape(id).to_vec(), self.graph.data(id).to_vec())
                .expect("recorded node is consistent"),
        )
    }

    /// Differentiate `seed . output`: fills every parameter gradient and
    /// returns the input gradient separately. A second call errors.
    pub fn backward(&mut self, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.graph.shape(self.output) {
            return Err(Error::Shape {
                context: "backward".into(),
                detail: format!(
                    "seed shape {:?} != output shape {:?}",
                    seed.shape(),
                    self.graph.shape(self.output)
                ),
            });
        }
        self.graph.backward(self.output, seed.data())?;
        let mut params = BTreeMap::new();
        for (name, id) in &self.param_ids {
            let g = self.graph.grad(*id).expect("backward filled all gradients");
            params.insert(
                name.clone(),
                Tensor::new(self.graph.shape(*id).to_vec(), g.to_vec())?,
            );
        }
        let input = Tensor::new(
            self.graph.shape(self.input).to_vec(),
            self.graph.grad(self.input).expect("backward filled all gradients").to_vec(),
        )?;
        Ok(Gradients { params, input })
    }
}

/// Incremental network builder; tracks the running channel count and names
/// conv/linear layers `conv1`, `conv2`, ..., `fc1`, ...
pub struct NetworkBuilder {
    layers: Vec<Layer>,
    input_channels: usize,
    channels: usize,
    conv_count: usize,
    fc_count: usize,
    after_gap: bool,
    error: Option<Error>,
}

impl Network {
    pub fn builder(input_channels: usize) -> NetworkBuilder {
        NetworkBuilder {
            layers: Vec::new(),
            input_channels,
            channels: input_channels,
            conv_count: 0,
            fc_count: 0,
            after_gap: false,
            error: if input_channels == 0 {
                Some(Error::InvalidArgument("input channels must be positive".into()))
            } else {
                None
            },
        }
    }

    /// The default desk-scale classifier:
    /// conv(3->8)/relu/pool, conv(8->16)/relu/pool, conv(16->32)/relu,
    /// global-avg-pool, linear(32->10). The 32-channel final conv layer is
    /// the visualization target.
    pub fn desk32(seed: u64) -> Network {
        Network::builder(3)
            .conv(8, 3, Padding::Same)
            .relu()
            .maxpool()
            .conv(16, 3, Padding::Same)
            .relu()
            .maxpool()
            .conv(32, 3, Padding::Same)
            .relu()
            .global_avg_pool()
            .linear(10)
            .build(seed)
            .expect("static architecture is valid")
    }
}

/// Zero padding policy for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size equals input size (odd kernels).
    Same,
    /// No padding.
    Valid,
}

impl NetworkBuilder {
    pub fn conv(mut self, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        if self.error.is_some() {
            return self;
        }
        if out_channels == 0 || kernel == 0 {
            self.error = Some(Error::InvalidArgument("conv dimensions must be positive".into()));
            return self;
        }
        if self.after_gap {
            self.error = Some(Error::InvalidArgument("conv after global pooling".into()));
            return self;
        }
        let pad = match padding {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        };
        self.conv_count += 1;
        self.layers.push(Layer::Conv2d {
            name: format!("conv{}", self.conv_count),
            in_channels: self.channels,
            out_channels,
            kernel,
            padding: pad,
        });
        self.channels = out_channels;
        self
    }

    pub fn relu(mut self) -> Self {
        if self.error.is_none() {
            self.layers.push(Layer::Relu);
        }
        self
    }

    pub fn maxpool(mut self) -> Self {
        if self.error.is_none() {
            self.layers.push(Layer::MaxPool2x2);
        }
        self
    }

    pub fn global_avg_pool(mut self) -> Self {
        if self.error.is_none() {
            self.layers.push(Layer::GlobalAvgPool);
            self.after_gap = true;
        }
        self
    }

    pub fn linear(mut self, out_features: usize) -> Self {
        if self.error.is_some() {
            return self;
        }
        if out_features == 0 {
            self.error = Some(Error::InvalidArgument("linear dimensions must be positive".into()));
            return self;
        }
        if !self.after_gap {
            self.error = Some(Error::InvalidArgument(
                "linear layers must follow global average pooling".into(),
            ));
            return self;
        }
        self.fc_count += 1;
        self.layers.push(Layer::Linear {
            name: format!("fc{}", self.fc_count),
            in_features: self.channels,
            out_features,
        });
        self.channels = out_features;
        self
    }

    /// He-normal initialization of all weights, zero biases, seeded.
    pub fn build(self, seed: u64) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { name, in_channels, out_channels, kernel, .. } => {
                    let fan_in = in_channels * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let n = out_channels * in_channels * kernel * kernel;
                    let data: Vec<f64> =
                        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
                    params.insert(
                        format!("{name}.weight"),
                        Tensor::new(vec![*out_channels, *in_channels, *kernel, *kernel], data)?,
                    );
                    params.insert(format!("{name}.bias"), Tensor::zeros(vec![*out_channels]));
                }
                Layer::Linear { name, in_features, out_features } => {
                    let std = (2.0 / *in_features as f64).sqrt();
                    let n = out_features * in_features;
                    let data: Vec<f64> =
                        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
                    params.insert(
                        format!("{name}.weight"),
                        Tensor::new(vec![*out_features, *in_features], data)?,
                    );
                    params.insert(format!("{name}.bias"), Tensor::zeros(vec![*out_features]));
                }
                _ => {}
            }
        }
        Network::from_parts(self.layers, params, BTreeMap::new(), self.input_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_network_gives_zero_logits() {
        let mut net = Network::desk32(1);
        for (_, t) in net.params_mut().iter_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::filled(vec![1, 3, 32, 32], 0.37);
        let fwd = net.forward(&x).unwrap();
        assert!(fwd.output_tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_conv_passes_input_through() {
        // 1-channel input, one 1x1 conv with unit weight and zero bias
        let mut net = Network::builder(1)
            .conv(1, 1, Padding::Valid)
            .global_avg_pool()
            .build(3)
            .unwrap();
        net.params_mut().get_mut("conv1.weight").unwrap().data_mut()[0] = 1.0;
        let data: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let x = Tensor::new(vec![1, 1, 3, 3], data.clone()).unwrap();
        let fwd = net.forward(&x).unwrap();
        let conv_out = fwd.layer_output_tensor(0).unwrap();
        assert_eq!(conv_out.data(), data.as_slice());
    }

    #[test]
    fn forward_rejects_wrong_channel_count() {
        let net = Network::desk32(1);
        let x = Tensor::zeros(vec![1, 4, 32, 32]);
        let err = match net.forward(&x) {
            Err(e) => e,
            Ok(_) => panic!("mismatched channels must fail"),
        };
        assert!(err.to_string().contains("conv1"), "error should name the layer: {err}");
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // conv(1->2, 3x3, valid) -> relu -> gap -> linear(2->2) on a 3x3
        // image, checked against a straight-line evaluation of the same
        // arithmetic below.
        let mut net = Network::builder(1)
            .conv(2, 3, Padding::Valid)
            .relu()
            .global_avg_pool()
            .linear(2)
            .build(11)
            .unwrap();
        let w0: Vec<f64> = vec![
            0.2, -0.1, 0.4, 0.0, 0.3, -0.5, 0.1, 0.2, -0.2, // filter 0
            -0.3, 0.5, 0.1, 0.2, -0.4, 0.0, 0.3, -0.1, 0.2, // filter 1
        ];
        let b0 = vec![0.05, -0.6];
        let w1 = vec![1.5, -2.0, 0.5, 1.0];
        let b1 = vec![0.1, -0.2];
        let x: Vec<f64> = vec![1.0, 2.0, -1.0, 0.5, 0.0, 1.5, -0.5, 1.0, 2.0];
        {
            let p = net.params_mut();
            *p.get_mut("conv1.weight").unwrap() = Tensor::new(vec![2, 1, 3, 3], w0.clone()).unwrap();
            *p.get_mut("conv1.bias").unwrap() = Tensor::new(vec![2], b0.clone()).unwrap();
            *p.get_mut("fc1.weight").unwrap() = Tensor::new(vec![2, 2], w1.clone()).unwrap();
            *p.get_mut("fc1.bias").unwrap() = Tensor::new(vec![2], b1.clone()).unwrap();
        }

        // independent evaluation: valid 3x3 conv on a 3x3 image is a dot product
        let conv0: f64 = x.iter().zip(&w0[0..9]).map(|(a, b)| a * b).sum::<f64>() + b0[0];
        let conv1: f64 = x.iter().zip(&w0[9..18]).map(|(a, b)| a * b).sum::<f64>() + b0[1];
        let (h0, h1) = (conv0.max(0.0), conv1.max(0.0));
        // gap of a 1x1 map is the value itself
        let y0 = w1[0] * h0 + w1[1] * h1 + b1[0];
        let y1 = w1[2] * h0 + w1[3] * h1 + b1[1];

        let input = Tensor::new(vec![1, 1, 3, 3], x).unwrap();
        let fwd = net.forward(&input).unwrap();
        let logits = fwd.output_tensor();
        assert!((logits.data()[0] - y0).abs() < 1e-12);
        assert!((logits.data()[1] - y1).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_without_new_forward_errors() {
        let net = Network::desk32(5);
        let x = Tensor::filled(vec![1, 3, 8, 8], 0.1);
        let mut fwd = net.forward(&x).unwrap();
        let seed = Tensor::filled(vec![1, 10], 1.0);
        fwd.backward(&seed).unwrap();
        assert!(matches!(fwd.backward(&seed), Err(Error::GraphConsumed)));
    }

    #[test]
    fn output_channels_at_tracks_conv_layers() {
        let net = Network::desk32(0);
        assert_eq!(net.output_channels_at(0), Some(8));
        assert_eq!(net.output_channels_at(6), Some(32));
        assert_eq!(net.output_channels_at(7), Some(32)); // relu after final conv
        assert_eq!(net.output_channels_at(9), None); // linear output is not spatial
        assert_eq!(net.final_conv_layer(), Some(6));
    }

    #[test]
    fn builder_rejects_bad_shapes() {
        assert!(Network::builder(3).linear(10).build(0).is_err());
        assert!(Network::builder(3).conv(0, 3, Padding::Same).build(0).is_err());
        assert!(Network::builder(0).conv(4, 3, Padding::Same).build(0).is_err());
    }
}
