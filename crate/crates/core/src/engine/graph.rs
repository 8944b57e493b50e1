//! Reverse-mode tape: records operations during a forward pass and replays
//! them backwards to accumulate gradients.
//!
//! Every operation returns a [`NodeId`]. Gradients are computed once per
//! recorded graph; a second `backward` call errors until a new forward pass
//! records a fresh graph.

use rustfft::num_complex::Complex;

use super::fft::{fft2_forward, fft2_inverse};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Affine map from output pixel coordinates to input pixel coordinates:
/// `xs = m[0]*x + m[1]*y + m[2]`, `ys = m[3]*x + m[4]*y + m[5]`.
#[derive(Debug, Clone, Copy)]
pub struct AffineCoeffs(pub [f64; 6]);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, padding: usize },
    Relu { input: NodeId },
    MaxPool2x2 { input: NodeId, argmax: Vec<u32> },
    GlobalAvgPool { input: NodeId },
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    Softmax { input: NodeId },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    ChannelMean { input: NodeId, channel: usize },
    Sum { input: NodeId },
    WeightedSum { input: NodeId, weights: Vec<f64> },
    Square { input: NodeId },
    Neg { input: NodeId },
    Sigmoid { input: NodeId },
    ColorMix { input: NodeId, matrix: Vec<f64>, channels: usize },
    SpectrumDecode { input: NodeId, scales: Vec<f64>, height: usize, width: usize },
    AffineWarp { input: NodeId, coeffs: AffineCoeffs },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recorded computation graph. Topological order is insertion order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(context: &str, detail: String) -> Error {
    Error::Shape { context: context.to_string(), detail }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { data, shape, grad: None, op });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.node(id).data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Gradient of the last `backward` seed with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    /// Convenience accessor for 1-element nodes.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.node(id).data[0]
    }

    // ── Recording ───────────────────────────────────────────────────

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf)
    }

    pub fn leaf_raw(&mut self, data: Vec<f64>, shape: Vec<usize>) -> NodeId {
        self.push(data, shape, Op::Leaf)
    }

    /// 2D convolution, stride 1, zero padding. `input` is `[B, Cin, H, W]`,
    /// `weight` `[Cout, Cin, Kh, Kw]`, `bias` `[Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        padding: usize,
        ctx: &str,
    ) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let bshape = self.shape(bias).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("conv input must be [B,C,H,W], got {ishape:?}")));
        }
        if wshape.len() != 4 {
            return Err(shape_err(ctx, format!("conv weight must be [O,I,Kh,Kw], got {wshape:?}")));
        }
        let (b, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (cout, wcin, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        if wcin != cin {
            return Err(shape_err(
                ctx,
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if bshape != [cout] {
            return Err(shape_err(ctx, format!("bias shape {bshape:?} != [{cout}]")));
        }
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if hp + 1 < kh || wp + 1 < kw {
            return Err(shape_err(
                ctx,
                format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
            ));
        }
        let (oh, ow) = (hp - kh + 1, wp - kw + 1);

        let wgt = &self.node(weight).data;
        let bia = &self.node(bias).data;
        let inp = &self.node(input).data;
        let mut out = vec![0.0; b * cout * oh * ow];
        let mut padded = vec![0.0; cin * hp * wp];
        for bi in 0..b {
            pad_image(&inp[bi * cin * h * w..][..cin * h * w], cin, h, w, padding, &mut padded);
            for co in 0..cout {
                let out_img = &mut out[(bi * cout + co) * oh * ow..][..oh * ow];
                out_img.fill(bia[co]);
                for ci in 0..cin {
                    let pimg = &padded[ci * hp * wp..][..hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wgt[((co * cin + ci) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let src = &pimg[(oy + ky) * wp + kx..][..ow];
                                let dst = &mut out_img[oy * ow..][..ow];
                                for x in 0..ow {
                                    dst[x] += wv * src[x];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, vec![b, cout, oh, ow], Op::Conv2d { input, weight, bias, padding }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let data: Vec<f64> = self.node(input).data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        self.push(data, shape, Op::Relu { input })
    }

    /// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, input: NodeId, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("maxpool input must be [B,C,H,W], got {ishape:?}")));
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        if h < 2 || w < 2 {
            return Err(shape_err(ctx, format!("maxpool needs H,W >= 2, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let inp = &self.node(input).data;
        let mut out = vec![0.0; b * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for bc in 0..b * c {
            let img = &inp[bc * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (2 * oy + dy) * w + 2 * ox + dx;
                            // ties keep the first candidate in scan order
                            if img[idx] > best {
                                best = img[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = bc * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = (bc * h * w + best_idx) as u32;
                }
            }
        }
        Ok(self.push(out, vec![b, c, oh, ow], Op::MaxPool2x2 { input, argmax }))
    }

    pub fn global_avg_pool(&mut self, input: NodeId, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("gap input must be [B,C,H,W], got {ishape:?}")));
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let inp = &self.node(input).data;
        let inv = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; b * c];
        for bc in 0..b * c {
            out[bc] = inp[bc * h * w..][..h * w].iter().sum::<f64>() * inv;
        }
        Ok(self.push(out, vec![b, c], Op::GlobalAvgPool { input }))
    }

    /// Fully connected layer: `input` `[B, F]`, `weight` `[O, F]`, `bias` `[O]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 2 || wshape.len() != 2 {
            return Err(shape_err(
                ctx,
                format!("linear expects input [B,F] and weight [O,F], got {ishape:?} / {wshape:?}"),
            ));
        }
        let (b, f) = (ishape[0], ishape[1]);
        let (o, wf) = (wshape[0], wshape[1]);
        if wf != f {
            return Err(shape_err(ctx, format!("input features {f} != weight features {wf}")));
        }
        if self.shape(bias) != [o] {
            return Err(shape_err(ctx, format!("bias shape {:?} != [{o}]", self.shape(bias))));
        }
        let inp = &self.node(input).data;
        let wgt = &self.node(weight).data;
        let bia = &self.node(bias).data;
        let mut out = vec![0.0; b * o];
        for bi in 0..b {
            let row = &inp[bi * f..][..f];
            for oi in 0..o {
                let wrow = &wgt[oi * f..][..f];
                let mut acc = bia[oi];
                for k in 0..f {
                    acc += row[k] * wrow[k];
                }
                out[bi * o + oi] = acc;
            }
        }
        Ok(self.push(out, vec![b, o], Op::Linear { input, weight, bias }))
    }

    /// Row-wise softmax of `[B, K]` logits.
    pub fn softmax(&mut self, input: NodeId, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 2 {
            return Err(shape_err(ctx, format!("softmax input must be [B,K], got {ishape:?}")));
        }
        let (b, k) = (ishape[0], ishape[1]);
        let inp = &self.node(input).data;
        let mut out = vec![0.0; b * k];
        for bi in 0..b {
            softmax_row(&inp[bi * k..][..k], &mut out[bi * k..][..k]);
        }
        Ok(self.push(out, vec![b, k], Op::Softmax { input }))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize], ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(logits).to_vec();
        if ishape.len() != 2 {
            return Err(shape_err(ctx, format!("cross_entropy expects [B,K] logits, got {ishape:?}")));
        }
        let (b, k) = (ishape[0], ishape[1]);
        if labels.len() != b {
            return Err(shape_err(ctx, format!("{} labels for batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
        }
        let inp = &self.node(logits).data;
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for bi in 0..b {
            let row = &inp[bi * k..][..k];
            let prow = &mut probs[bi * k..][..k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            // -log softmax[label] computed stably from the logits
            loss += max + sum.ln() - row[labels[bi]];
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        Ok(self.push(vec![loss], vec![1], Op::CrossEntropy { logits, labels, probs }))
    }

    /// Mean of one channel over batch and spatial positions: scalar output.
    pub fn channel_mean(&mut self, input: NodeId, channel: usize, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("channel_mean input must be [B,C,H,W], got {ishape:?}")));
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        if channel >= c {
            return Err(Error::InvalidArgument(format!("channel {channel} out of range for {c} channels")));
        }
        let inp = &self.node(input).data;
        let mut acc = 0.0;
        for bi in 0..b {
            acc += inp[(bi * c + channel) * h * w..][..h * w].iter().sum::<f64>();
        }
        let mean = acc / (b * h * w) as f64;
        Ok(self.push(vec![mean], vec![1], Op::ChannelMean { input, channel }))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.node(input).data.iter().sum();
        self.push(vec![s], vec![1], Op::Sum { input })
    }

    /// Scalar dot product with fixed weights (handy loss head for checks).
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<f64>, ctx: &str) -> Result<NodeId> {
        if weights.len() != self.node(input).data.len() {
            return Err(shape_err(ctx, "weighted_sum length mismatch".into()));
        }
        let s: f64 = self.node(input).data.iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(vec![s], vec![1], Op::WeightedSum { input, weights }))
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let data: Vec<f64> = self.node(input).data.iter().map(|&x| x * x).collect();
        let shape = self.shape(input).to_vec();
        self.push(data, shape, Op::Square { input })
    }

    pub fn neg(&mut self, input: NodeId) -> NodeId {
        let data: Vec<f64> = self.node(input).data.iter().map(|&x| -x).collect();
        let shape = self.shape(input).to_vec();
        self.push(data, shape, Op::Neg { input })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let data: Vec<f64> = self.node(input).data.iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = self.shape(input).to_vec();
        self.push(data, shape, Op::Sigmoid { input })
    }

    /// Per-pixel channel mixing of a `[B, C, H, W]` image by a row-major
    /// `C x C` matrix: `out[i] = sum_j m[i][j] * in[j]`.
    pub fn color_mix(&mut self, input: NodeId, matrix: &[f64], ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("color_mix input must be [B,C,H,W], got {ishape:?}")));
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        if matrix.len() != c * c {
            return Err(shape_err(ctx, format!("matrix length {} != {c}x{c}", matrix.len())));
        }
        let inp = &self.node(input).data;
        let hw = h * w;
        let mut out = vec![0.0; inp.len()];
        for bi in 0..b {
            for i in 0..c {
                let dst = &mut out[(bi * c + i) * hw..][..hw];
                for j in 0..c {
                    let m = matrix[i * c + j];
                    if m == 0.0 {
                        continue;
                    }
                    let src = &inp[(bi * c + j) * hw..][..hw];
                    for p in 0..hw {
                        dst[p] += m * src[p];
                    }
                }
            }
        }
        Ok(self.push(out, ishape, Op::ColorMix { input, matrix: matrix.to_vec(), channels: c }))
    }

    /// Decode half-spectrum parameters `[C, 2, H, Wh]` (real/imag planes,
    /// `Wh = W/2 + 1`) into a spatial image `[1, C, H, W]`.
    ///
    /// Each stored coefficient is multiplied by its frequency scale, the full
    /// spectrum is completed by conjugate symmetry, and the normalized inverse
    /// DFT's real part is taken. The adjoint is a forward DFT of the incoming
    /// gradient with the same scales and a weight of 2 on bins that own a
    /// mirrored twin.
    pub fn spectrum_decode(
        &mut self,
        input: NodeId,
        scales: &[f64],
        height: usize,
        width: usize,
        ctx: &str,
    ) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        let wh = width / 2 + 1;
        if ishape.len() != 4 || ishape[1] != 2 || ishape[2] != height || ishape[3] != wh {
            return Err(shape_err(
                ctx,
                format!("spectrum params must be [C,2,{height},{wh}], got {ishape:?}"),
            ));
        }
        if scales.len() != height * wh {
            return Err(shape_err(ctx, format!("scale table length {} != {}", scales.len(), height * wh)));
        }
        let channels = ishape[0];
        let params = &self.node(input).data;
        let mut out = vec![0.0; channels * height * width];
        let mut grid = vec![Complex::new(0.0, 0.0); height * width];
        for ch in 0..channels {
            let re = &params[(ch * 2) * height * wh..][..height * wh];
            let im = &params[(ch * 2 + 1) * height * wh..][..height * wh];
            fill_full_spectrum(re, im, scales, height, width, wh, &mut grid);
            fft2_inverse(&mut grid, height, width);
            let norm = 1.0 / (height * width) as f64;
            let dst = &mut out[ch * height * width..][..height * width];
            for (d, g) in dst.iter_mut().zip(&grid) {
                *d = g.re * norm;
            }
        }
        Ok(self.push(
            out,
            vec![1, channels, height, width],
            Op::SpectrumDecode { input, scales: scales.to_vec(), height, width },
        ))
    }

    /// Bilinear resampling of `[B, C, H, W]` through an affine coordinate
    /// map with reflected borders. Gradients flow through the interpolation
    /// weights exactly; the affine coefficients are constants.
    pub fn affine_warp(&mut self, input: NodeId, coeffs: AffineCoeffs, ctx: &str) -> Result<NodeId> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(shape_err(ctx, format!("affine_warp input must be [B,C,H,W], got {ishape:?}")));
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let inp = &self.node(input).data;
        let mut out = vec![0.0; inp.len()];
        let taps = warp_taps(coeffs, h, w);
        for bc in 0..b * c {
            let img = &inp[bc * h * w..][..h * w];
            let dst = &mut out[bc * h * w..][..h * w];
            for (d, tap) in dst.iter_mut().zip(&taps) {
                *d = tap.weights[0] * img[tap.idx[0]]
                    + tap.weights[1] * img[tap.idx[1]]
                    + tap.weights[2] * img[tap.idx[2]]
                    + tap.weights[3] * img[tap.idx[3]];
            }
        }
        Ok(self.push(out, ishape, Op::AffineWarp { input, coeffs }))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Accumulate gradients of `seed . output` into every node. Errors when
    /// the graph was already consumed or the seed shape disagrees with the
    /// output.
    pub fn backward(&mut self, output: NodeId, seed: &[f64]) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if seed.len() != self.node(output).data.len() {
            return Err(shape_err(
                "backward",
                format!("seed length {} != output length {}", seed.len(), self.node(output).data.len()),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        grads[output.0].copy_from_slice(seed);

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if !g.is_empty() {
                self.backward_one(i, &g, &mut grads);
            }
            grads[i] = g;
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = Some(g);
        }
        Ok(())
    }

    fn backward_one(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, padding } => {
                self.conv2d_backward(*input, *weight, *bias, *padding, &node.shape, g, grads);
            }
            Op::Relu { input } => {
                let x = &self.nodes[input.0].data;
                let gin = &mut grads[input.0];
                for k in 0..g.len() {
                    if x[k] > 0.0 {
                        gin[k] += g[k];
                    }
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                let gin = &mut grads[input.0];
                for (k, &src) in argmax.iter().enumerate() {
                    gin[src as usize] += g[k];
                }
            }
            Op::GlobalAvgPool { input } => {
                let ishape = &self.nodes[input.0].shape;
                let (h, w) = (ishape[2], ishape[3]);
                let inv = 1.0 / (h * w) as f64;
                let gin = &mut grads[input.0];
                for bc in 0..g.len() {
                    let gv = g[bc] * inv;
                    for p in &mut gin[bc * h * w..][..h * w] {
                        *p += gv;
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let ishape = &self.nodes[input.0].shape;
                let (b, f) = (ishape[0], ishape[1]);
                let o = self.nodes[weight.0].shape[0];
                let x = &self.nodes[input.0].data;
                let wgt = &self.nodes[weight.0].data;
                {
                    let gin = &mut grads[input.0];
                    for bi in 0..b {
                        for oi in 0..o {
                            let gv = g[bi * o + oi];
                            let wrow = &wgt[oi * f..][..f];
                            let grow = &mut gin[bi * f..][..f];
                            for k in 0..f {
                                grow[k] += gv * wrow[k];
                            }
                        }
                    }
                }
                {
                    let gw = &mut grads[weight.0];
                    for bi in 0..b {
                        let xrow = &x[bi * f..][..f];
                        for oi in 0..o {
                            let gv = g[bi * o + oi];
                            let grow = &mut gw[oi * f..][..f];
                            for k in 0..f {
                                grow[k] += gv * xrow[k];
                            }
                        }
                    }
                }
                {
                    let gb = &mut grads[bias.0];
                    for bi in 0..b {
                        for oi in 0..o {
                            gb[oi] += g[bi * o + oi];
                        }
                    }
                }
            }
            Op::Softmax { input } => {
                let shape = &node.shape;
                let (b, k) = (shape[0], shape[1]);
                let s = &node.data;
                let gin = &mut grads[input.0];
                for bi in 0..b {
                    let srow = &s[bi * k..][..k];
                    let grow = &g[bi * k..][..k];
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    let out = &mut gin[bi * k..][..k];
                    for c in 0..k {
                        out[c] += srow[c] * (grow[c] - dot);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let gin = &mut grads[logits.0];
                for bi in 0..b {
                    for c in 0..k {
                        let target = if c == labels[bi] { 1.0 } else { 0.0 };
                        gin[bi * k + c] += scale * (probs[bi * k + c] - target);
                    }
                }
            }
            Op::ChannelMean { input, channel } => {
                let ishape = &self.nodes[input.0].shape;
                let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
                let gv = g[0] / (b * h * w) as f64;
                let gin = &mut grads[input.0];
                for bi in 0..b {
                    for p in &mut gin[(bi * c + channel) * h * w..][..h * w] {
                        *p += gv;
                    }
                }
            }
            Op::Sum { input } => {
                let gin = &mut grads[input.0];
                for p in gin.iter_mut() {
                    *p += g[0];
                }
            }
            Op::WeightedSum { input, weights } => {
                let gin = &mut grads[input.0];
                for (p, w) in gin.iter_mut().zip(weights) {
                    *p += g[0] * w;
                }
            }
            Op::Square { input } => {
                let x = &self.nodes[input.0].data;
                let gin = &mut grads[input.0];
                for k in 0..g.len() {
                    gin[k] += 2.0 * x[k] * g[k];
                }
            }
            Op::Neg { input } => {
                let gin = &mut grads[input.0];
                for k in 0..g.len() {
                    gin[k] -= g[k];
                }
            }
            Op::Sigmoid { input } => {
                let s = &node.data;
                let gin = &mut grads[input.0];
                for k in 0..g.len() {
                    gin[k] += g[k] * s[k] * (1.0 - s[k]);
                }
            }
            Op::ColorMix { input, matrix, channels } => {
                let ishape = &self.nodes[input.0].shape;
                let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
                debug_assert_eq!(c, *channels);
                let hw = h * w;
                let gin = &mut grads[input.0];
                for bi in 0..b {
                    for i_ch in 0..c {
                        let gsrc = &g[(bi * c + i_ch) * hw..][..hw];
                        for j in 0..c {
                            let m = matrix[i_ch * c + j];
                            if m == 0.0 {
                                continue;
                            }
                            let dst = &mut gin[(bi * c + j) * hw..][..hw];
                            for p in 0..hw {
                                dst[p] += m * gsrc[p];
                            }
                        }
                    }
                }
            }
            Op::SpectrumDecode { input, scales, height, width } => {
                let (h, w) = (*height, *width);
                let wh = w / 2 + 1;
                let channels = self.nodes[input.0].shape[0];
                let norm = 1.0 / (h * w) as f64;
                let mut grid = vec![Complex::new(0.0, 0.0); h * w];
                let gin = &mut grads[input.0];
                for ch in 0..channels {
                    let gimg = &g[ch * h * w..][..h * w];
                    for (cell, &gv) in grid.iter_mut().zip(gimg) {
                        *cell = Complex::new(gv, 0.0);
                    }
                    fft2_forward(&mut grid, h, w);
                    let gre = ch * 2 * h * wh;
                    let gim = (ch * 2 + 1) * h * wh;
                    for v in 0..h {
                        for u in 0..wh {
                            let mult = mirror_weight(u, w) * scales[v * wh + u] * norm;
                            let f = grid[v * w + u];
                            gin[gre + v * wh + u] += mult * f.re;
                            gin[gim + v * wh + u] += mult * f.im;
                        }
                    }
                }
            }
            Op::AffineWarp { input, coeffs } => {
                let ishape = &self.nodes[input.0].shape;
                let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
                let taps = warp_taps(*coeffs, h, w);
                let gin = &mut grads[input.0];
                for bc in 0..b * c {
                    let gsrc = &g[bc * h * w..][..h * w];
                    let dst = &mut gin[bc * h * w..][..h * w];
                    for (gv, tap) in gsrc.iter().zip(&taps) {
                        for t in 0..4 {
                            dst[tap.idx[t]] += gv * tap.weights[t];
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        padding: usize,
        oshape: &[usize],
        g: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        let ishape = &self.nodes[input.0].shape;
        let wshape = &self.nodes[weight.0].shape;
        let (b, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (cout, _, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        let (oh, ow) = (oshape[2], oshape[3]);
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        let inp = &self.nodes[input.0].data;
        let wgt = &self.nodes[weight.0].data;

        // bias: plain sums over spatial and batch
        {
            let gb = &mut grads[bias.0];
            for bi in 0..b {
                for co in 0..cout {
                    gb[co] += g[(bi * cout + co) * oh * ow..][..oh * ow].iter().sum::<f64>();
                }
            }
        }
        // weight and input gradients share the padded-input walk
        let mut padded = vec![0.0; cin * hp * wp];
        let mut gpad = vec![0.0; cin * hp * wp];
        for bi in 0..b {
            pad_image(&inp[bi * cin * h * w..][..cin * h * w], cin, h, w, padding, &mut padded);
            gpad.fill(0.0);
            for co in 0..cout {
                let gout = &g[(bi * cout + co) * oh * ow..][..oh * ow];
                for ci in 0..cin {
                    let pimg = &padded[ci * hp * wp..][..hp * wp];
                    let gimg = &mut gpad[ci * hp * wp..][..hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                            let wv = wgt[widx];
                            let mut wacc = 0.0;
                            for oy in 0..oh {
                                let grow = &gout[oy * ow..][..ow];
                                let prow = &pimg[(oy + ky) * wp + kx..][..ow];
                                let gprow = &mut gimg[(oy + ky) * wp + kx..][..ow];
                                for x in 0..ow {
                                    wacc += grow[x] * prow[x];
                                    gprow[x] += wv * grow[x];
                                }
                            }
                            grads[weight.0][widx] += wacc;
                        }
                    }
                }
            }
            // crop padded gradient back to the input window
            let gin = &mut grads[input.0][bi * cin * h * w..][..cin * h * w];
            for ci in 0..cin {
                for y in 0..h {
                    let src = &gpad[ci * hp * wp + (y + padding) * wp + padding..][..w];
                    let dst = &mut gin[ci * h * w + y * w..][..w];
                    for x in 0..w {
                        dst[x] += src[x];
                    }
                }
            }
        }
    }
}

/// Zero-pad all channels of one image into `dst` (`[C, H+2p, W+2p]`).
fn pad_image(src: &[f64], c: usize, h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    if p == 0 {
        dst.copy_from_slice(src);
        return;
    }
    dst.fill(0.0);
    for ci in 0..c {
        for y in 0..h {
            let s = &src[ci * h * w + y * w..][..w];
            let d = &mut dst[ci * hp * wp + (y + p) * wp + p..][..w];
            d.copy_from_slice(s);
        }
    }
}

/// Stable softmax of one row into `out`.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &x) in out.iter_mut().zip(row) {
        *p = (x - max).exp();
        sum += *p;
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stored bins in columns 0 and W/2 (even W) have no mirrored twin; all other
/// stored columns contribute twice to the real output.
fn mirror_weight(u: usize, width: usize) -> f64 {
    if u == 0 || (width % 2 == 0 && u == width / 2) {
        1.0
    } else {
        2.0
    }
}

/// Complete an `h x w` complex grid from scaled half-spectrum planes.
fn fill_full_spectrum(
    re: &[f64],
    im: &[f64],
    scales: &[f64],
    h: usize,
    w: usize,
    wh: usize,
    grid: &mut [Complex<f64>],
) {
    for v in 0..h {
        for u in 0..wh {
            let s = scales[v * wh + u];
            grid[v * w + u] = Complex::new(re[v * wh + u] * s, im[v * wh + u] * s);
        }
    }
    for v in 0..h {
        for u in wh..w {
            let vm = (h - v) % h;
            let um = w - u;
            grid[v * w + u] = grid[vm * w + um].conj();
        }
    }
}

#[derive(Clone, Copy)]
struct Tap {
    idx: [usize; 4],
    weights: [f64; 4],
}

/// Precompute bilinear taps (reflected indices + weights) for every output
/// pixel of an `h x w` image under the affine map.
fn warp_taps(coeffs: AffineCoeffs, h: usize, w: usize) -> Vec<Tap> {
    let m = coeffs.0;
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let xs = m[0] * xf + m[1] * yf + m[2];
            let ys = m[3] * xf + m[4] * yf + m[5];
            let x0 = xs.floor();
            let y0 = ys.floor();
            let fx = xs - x0;
            let fy = ys - y0;
            let (x0i, y0i) = (x0 as i64, y0 as i64);
            let xa = reflect_index(x0i, w as i64);
            let xb = reflect_index(x0i + 1, w as i64);
            let ya = reflect_index(y0i, h as i64);
            let yb = reflect_index(y0i + 1, h as i64);
            taps.push(Tap {
                idx: [ya * w + xa, ya * w + xb, yb * w + xa, yb * w + xb],
                weights: [
                    (1.0 - fx) * (1.0 - fy),
                    fx * (1.0 - fy),
                    (1.0 - fx) * fy,
                    fx * fy,
                ],
            });
        }
    }
    taps
}

/// Reflect an index into `[0, n)` duplicating the edge sample
/// (-1 -> 0, -2 -> 1, n -> n-1, ...).
fn reflect_index(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}
