//! Gradient-based interpretability: activation-maximization feature
//! visualization with Fourier preconditioning and transformation
//! robustness, plus vanilla saliency maps and SmoothGrad.

mod spectrum;
mod warp;

pub use spectrum::{
    decode_raw, encode, fourier_param_init, zero_spectrum, ColorMatrix, SpectrumImage,
};
pub use warp::{sample_augmentation, Affine, AugmentSpec};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::engine::{AdamState, Graph, Network, Tensor};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::phash::RasterImage;
use crate::seeds;

/// Whether a visualization drives a channel's activation up or down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Maximize,
    Minimize,
}

/// Target of a feature visualization: the mean activation of `channel` in
/// the output of layer `layer`.
#[derive(Debug, Clone, Copy)]
pub struct VizObjective {
    pub layer: usize,
    pub channel: usize,
    pub sign: Sign,
}

/// Optimization settings for one visualization job.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VizConfig {
    pub steps: usize,
    pub lr: f64,
    /// First jitter magnitude in pixels.
    pub jitter1: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Rotation range in degrees (symmetric about zero).
    pub rotate_deg: f64,
    /// Second jitter magnitude in pixels.
    pub jitter2: usize,
    pub seed: u64,
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            steps: 128,
            lr: 0.05,
            jitter1: 8,
            scale_min: 0.95,
            scale_max: 1.05,
            rotate_deg: 5.0,
            jitter2: 4,
            seed: 0,
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidArgument("visualization needs steps >= 1".into()));
        }
        if !(self.scale_min <= 1.0 && 1.0 <= self.scale_max) {
            return Err(Error::InvalidArgument(format!(
                "scale range [{}, {}] must bracket 1.0",
                self.scale_min, self.scale_max
            )));
        }
        if self.lr < 0.0 {
            return Err(Error::InvalidArgument("learning rate must be nonnegative".into()));
        }
        Ok(())
    }

    fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            jitter1: self.jitter1,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            rotate_deg: self.rotate_deg,
            jitter2: self.jitter2,
        }
    }
}

/// SmoothGrad settings.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SaliencyConfig {
    /// Number of Gaussian-perturbed samples.
    pub samples: usize,
    /// Noise standard deviation as a fraction of the input value range.
    pub sigma_frac: f64,
    pub seed: u64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig { samples: 25, sigma_frac: 0.10, seed: 0 }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::InvalidArgument("smoothgrad needs samples >= 1".into()));
        }
        if self.sigma_frac < 0.0 {
            return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Outcome of a visualization run: the decoded image and the channel-mean
/// activation before and after optimization (measured on the unaugmented
/// decode).
#[derive(Debug, Clone)]
pub struct VizResult {
    pub image: Tensor,
    pub objective_start: f64,
    pub objective_end: f64,
}

/// Mean activation of the objective's channel on an unaugmented image.
pub fn objective_value(net: &Network, obj: &VizObjective, image: &Tensor) -> Result<f64> {
    let mut graph = Graph::new();
    let input = graph.leaf(image);
    let (outputs, _) = net.forward_on(&mut graph, input, Some(obj.layer))?;
    let mean = graph.channel_mean(outputs[obj.layer], obj.channel, "objective")?;
    Ok(graph.scalar(mean))
}

fn validate_objective(net: &Network, obj: &VizObjective) -> Result<()> {
    let channels = net.output_channels_at(obj.layer).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer {} has no spatial channel output to visualize",
            obj.layer
        ))
    })?;
    if obj.channel >= channels {
        return Err(Error::InvalidArgument(format!(
            "channel {} out of range: layer {} has {channels} channels",
            obj.channel, obj.layer
        )));
    }
    Ok(())
}

/// Optimize a Fourier-parameterized input so the objective channel's mean
/// activation rises (or falls, for `Sign::Minimize`).
///
/// Each Adam step decodes the spectrum, applies a random
/// jitter/scale/rotate/jitter augmentation inside the recorded graph, runs
/// the network to the target layer and differentiates the channel mean back
/// to the spectrum coefficients.
pub fn visualize(
    net: &Network,
    obj: &VizObjective,
    cfg: &VizConfig,
    color: &ColorMatrix,
    height: usize,
    width: usize,
) -> Result<VizResult> {
    cfg.validate()?;
    validate_objective(net, obj)?;
    let mut spectrum = fourier_param_init(height, width, net.input_channels(), cfg.seed)?;
    let mut adam = AdamState::new(spectrum.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "augment"));
    let spec = cfg.augment_spec();

    let objective_start = objective_value(net, obj, &spectrum.decode(color)?)?;
    for step in 0..cfg.steps {
        let mut graph = Graph::new();
        let (leaf, image) = spectrum.decode_on(&mut graph, color)?;
        let aug = sample_augmentation(&spec, height, width, &mut rng);
        let warped = graph.affine_warp(image, aug.coeffs(), "augment")?;
        let (outputs, _) = net.forward_on(&mut graph, warped, Some(obj.layer))?;
        let mean = graph.channel_mean(outputs[obj.layer], obj.channel, "objective")?;
        // minimizing -mean drives the activation up
        let loss = match obj.sign {
            Sign::Maximize => graph.neg(mean),
            Sign::Minimize => mean,
        };
        let value = graph.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "visualization objective became non-finite at step {step}"
            )));
        }
        graph.backward(loss, &[1.0])?;
        let grad = graph.grad(leaf).expect("leaf gradient filled").to_vec();
        if cfg.lr > 0.0 {
            adam.step(spectrum.params_mut(), &grad, cfg.lr)?;
        }
    }
    let image = spectrum.decode(color)?;
    let objective_end = objective_value(net, obj, &image)?;
    Ok(VizResult { image, objective_start, objective_end })
}

/// Gradient of the predicted class's logit with respect to the input.
fn class_input_gradient(net: &Network, x: &Tensor, class: usize) -> Result<Vec<f64>> {
    let mut fwd = net.forward(x)?;
    let out_shape = fwd.output_tensor().shape().to_vec();
    let mut seed = Tensor::zeros(out_shape);
    seed.data_mut()[class] = 1.0;
    let grads = fwd.backward(&seed)?;
    Ok(grads.input.into_data())
}

fn predicted_class(net: &Network, x: &Tensor) -> Result<usize> {
    let fwd = net.forward(x)?;
    let logits = fwd.output_tensor();
    Ok(argmax(logits.data()))
}

/// Reduce a `[1, C, H, W]` input gradient to a `[H, W]` heatmap: max of
/// absolute values over channels, then divide by the maximum (an all-zero
/// map stays zero).
fn reduce_and_normalize(grad: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut heat = vec![0.0f64; hw];
    for c in 0..channels {
        for p in 0..hw {
            heat[p] = heat[p].max(grad[c * hw + p].abs());
        }
    }
    let max = heat.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut heat {
            *v /= max;
        }
    }
    heat
}

fn single_image_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::Shape {
            context: "saliency".into(),
            detail: format!("expected a single [1,C,H,W] image, got {s:?}"),
        });
    }
    Ok((s[1], s[2], s[3]))
}

/// Vanilla saliency: forward pass picks the predicted class, the gradient
/// of that class's logit with respect to the input is reduced over channels
/// by max-abs and normalized to `[0, 1]`. Returns an `[H, W]` tensor.
pub fn saliency(net: &Network, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = single_image_dims(x)?;
    let class = predicted_class(net, x)?;
    let grad = class_input_gradient(net, x, class)?;
    Tensor::new(vec![h, w], reduce_and_normalize(&grad, c, h, w))
}

/// SmoothGrad: average the class-logit input gradient over `cfg.samples`
/// Gaussian-perturbed copies of the input (sigma = `sigma_frac` times the
/// input's value range), with the class fixed from the unperturbed
/// prediction; then reduce and normalize exactly as [`saliency`] does.
///
/// With `sigma_frac == 0` the gradient is computed once, so the result is
/// bit-identical to [`saliency`] for any sample count.
pub fn smoothgrad(net: &Network, x: &Tensor, cfg: &SaliencyConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (c, h, w) = single_image_dims(x)?;
    let class = predicted_class(net, x)?;

    let range = {
        let min = x.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max - min
    };
    let sigma = cfg.sigma_frac * range;
    if sigma == 0.0 {
        let grad = class_input_gradient(net, x, class)?;
        return Tensor::new(vec![h, w], reduce_and_normalize(&grad, c, h, w));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = vec![0.0; x.len()];
    let mut noisy = x.clone();
    for _ in 0..cfg.samples {
        for (n, &orig) in noisy.data_mut().iter_mut().zip(x.data()) {
            *n = orig + rng.sample::<f64, _>(StandardNormal) * sigma;
        }
        let grad = class_input_gradient(net, &noisy, class)?;
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += g;
        }
    }
    for a in &mut acc {
        *a /= cfg.samples as f64;
    }
    Tensor::new(vec![h, w], reduce_and_normalize(&acc, c, h, w))
}

/// Root-mean-square error between two equal-shape `[0, 1]` heatmaps.
pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            context: "rmse".into(),
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Render an `[H, W]` heatmap as an 8-bit grayscale raster.
pub fn heatmap_to_raster(map: &Tensor) -> Result<RasterImage> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::Shape {
            context: "heatmap_to_raster".into(),
            detail: format!("expected [H,W], got {s:?}"),
        });
    }
    let bytes: Vec<u8> =
        map.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RasterImage::from_gray8(s[1], s[0], &bytes)
}

/// Convert a decoded `[1, 3, H, W]` image in `[0, 1]` to an RGB raster.
pub fn image_to_raster(image: &Tensor) -> Result<RasterImage> {
    let s = image.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 3 {
        return Err(Error::Shape {
            context: "image_to_raster".into(),
            detail: format!("expected [1,3,H,W], got {s:?}"),
        });
    }
    let (h, w) = (s[2], s[3]);
    let hw = h * w;
    let d = image.data();
    let mut out = Vec::with_capacity(hw * 3);
    for p in 0..hw {
        out.push(d[p]);
        out.push(d[hw + p]);
        out.push(d[2 * hw + p]);
    }
    RasterImage::new(w, h, 3, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Padding;

    fn linear_image_net(k: usize, h: usize, w: usize) -> Network {
        // conv with kernel covering the whole input, valid padding: a true
        // per-pixel linear model y_c = sum w_c[ch][y][x] * x[ch][y][x] + b_c
        Network::builder(3)
            .conv(k, h.max(w), Padding::Valid)
            .global_avg_pool()
            .build(77)
            .unwrap()
    }

    #[test]
    fn zero_network_gives_zero_heatmap() {
        let mut net = Network::desk32(0);
        for (_, t) in net.params_mut().iter_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::filled(vec![1, 3, 16, 16], 0.5);
        let map = saliency(&net, &x).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_heatmap_is_normalized_weight_magnitude() {
        let net = linear_image_net(2, 6, 6);
        let x = Tensor::filled(vec![1, 3, 6, 6], 0.2);
        let map = saliency(&net, &x).unwrap();

        // the gradient of logit c w.r.t. pixel (ch,y,x) is w_c[ch][y][x]
        let fwd = net.forward(&x).unwrap();
        let class = argmax(fwd.output_tensor().data());
        let wt = &net.params()["conv1.weight"];
        let hw = 36;
        let mut expected = vec![0.0f64; hw];
        for ch in 0..3 {
            for p in 0..hw {
                let v = wt.data()[(class * 3 + ch) * hw + p].abs();
                expected[p] = expected[p].max(v);
            }
        }
        let max = expected.iter().cloned().fold(0.0f64, f64::max);
        for e in &mut expected {
            *e /= max;
        }
        for (a, b) in map.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothgrad_degenerate_settings_equal_saliency_bitwise() {
        let net = Network::desk32(31);
        let x = {
            let mut t = Tensor::zeros(vec![1, 3, 16, 16]);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = ((i * 31) % 97) as f64 / 97.0;
            }
            t
        };
        let plain = saliency(&net, &x).unwrap();
        for samples in [1, 5] {
            let cfg = SaliencyConfig { samples, sigma_frac: 0.0, seed: 3 };
            let sg = smoothgrad(&net, &x, &cfg).unwrap();
            let a: Vec<u64> = plain.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = sg.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "samples = {samples}");
        }
    }

    #[test]
    fn smoothgrad_on_linear_model_matches_vanilla() {
        // the gradient of a linear model does not depend on the input, so
        // the Monte-Carlo average equals the vanilla map up to sampling
        // noise of exactly zero
        let net = linear_image_net(3, 6, 6);
        let x = Tensor::filled(vec![1, 3, 6, 6], 0.4);
        let plain = saliency(&net, &x).unwrap();
        let cfg = SaliencyConfig { samples: 200, sigma_frac: 0.1, seed: 5 };
        let sg = smoothgrad(&net, &x, &cfg).unwrap();
        for (a, b) in plain.data().iter().zip(sg.data()) {
            let denom = a.abs().max(1e-12);
            assert!(
                ((a - b).abs() / denom) < 0.02,
                "smoothgrad should match vanilla within 2% on a linear model"
            );
        }
    }

    #[test]
    fn saliency_is_invariant_to_constant_logit_shift() {
        // adding a constant to every logit leaves each logit's input
        // gradient unchanged; emulate by adding a constant to the final bias
        let net = Network::desk32(12);
        let x = Tensor::filled(vec![1, 3, 16, 16], 0.3);
        let base = saliency(&net, &x).unwrap();
        let mut shifted = net.clone();
        for b in shifted.params_mut().get_mut("fc1.bias").unwrap().data_mut() {
            *b += 10.0;
        }
        let after = saliency(&shifted, &x).unwrap();
        for (a, b) in base.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pixels_outside_every_receptive_field_get_zero_saliency() {
        // input 9x9: valid 3x3 conv gives 7x7; maxpool floors to 3x3,
        // dropping conv row/column 6, which are the only outputs that see
        // input row/column 8
        let net = Network::builder(3)
            .conv(4, 3, Padding::Valid)
            .relu()
            .maxpool()
            .global_avg_pool()
            .linear(2)
            .build(13)
            .unwrap();
        let mut x = Tensor::zeros(vec![1, 3, 9, 9]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 7) % 23) as f64 / 23.0;
        }
        let map = saliency(&net, &x).unwrap();
        for i in 0..9 {
            assert_eq!(map.data()[8 * 9 + i], 0.0, "row 8, col {i}");
            assert_eq!(map.data()[i * 9 + 8], 0.0, "row {i}, col 8");
        }
        // interior pixels do influence the logit
        assert!(map.data()[4 * 9 + 4] > 0.0);
    }

    #[test]
    fn minimize_flips_only_the_sign_of_the_loss() {
        let net = Network::desk32(3);
        let color = ColorMatrix::identity(3);
        let spectrum = fourier_param_init(32, 32, 3, 8).unwrap();
        let image = spectrum.decode(&color).unwrap();
        let obj_max = VizObjective { layer: 6, channel: 2, sign: Sign::Maximize };
        let v = objective_value(&net, &obj_max, &image).unwrap();
        // the recorded loss is -mean for maximize and +mean for minimize
        let mut g = Graph::new();
        let input = g.leaf(&image);
        let (outs, _) = net.forward_on(&mut g, input, Some(6)).unwrap();
        let mean = g.channel_mean(outs[6], 2, "t").unwrap();
        let neg = g.neg(mean);
        assert_eq!(g.scalar(mean), v);
        assert_eq!(g.scalar(neg), -v);
    }

    #[test]
    fn zero_lr_single_step_returns_the_initial_decode() {
        let net = Network::desk32(3);
        let color = ColorMatrix::identity(3);
        let cfg = VizConfig { steps: 1, lr: 0.0, seed: 21, ..VizConfig::default() };
        let obj = VizObjective { layer: 6, channel: 0, sign: Sign::Maximize };
        let out = visualize(&net, &obj, &cfg, &color, 32, 32).unwrap();
        let init = fourier_param_init(32, 32, 3, 21).unwrap().decode(&color).unwrap();
        assert_eq!(out.image.data(), init.data());
        assert_eq!(out.objective_start, out.objective_end);
    }

    #[test]
    fn visualization_follows_a_fixed_edge_filter_orientation() {
        // a conv filter responding to horizontal gradients (vertical edges)
        // should produce an image whose horizontal finite differences carry
        // more energy than its vertical ones
        let mut net = Network::builder(3)
            .conv(1, 3, Padding::Same)
            .global_avg_pool()
            .build(0)
            .unwrap();
        {
            let w = net.params_mut().get_mut("conv1.weight").unwrap();
            let sobel_x = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
            for ch in 0..3 {
                for (i, &v) in sobel_x.iter().enumerate() {
                    w.data_mut()[ch * 9 + i] = v;
                }
            }
        }
        let cfg = VizConfig { steps: 128, seed: 4, ..VizConfig::default() };
        let obj = VizObjective { layer: 0, channel: 0, sign: Sign::Maximize };
        let out = visualize(&net, &obj, &cfg, &ColorMatrix::identity(3), 32, 32).unwrap();
        assert!(out.objective_end > out.objective_start, "objective should improve");

        let d = out.image.data();
        let hw = 32 * 32;
        let (mut eh, mut ev) = (0.0, 0.0);
        for c in 0..3 {
            let img = &d[c * hw..(c + 1) * hw];
            for y in 0..32 {
                for x in 0..31 {
                    eh += (img[y * 32 + x + 1] - img[y * 32 + x]).powi(2);
                }
            }
            for y in 0..31 {
                for x in 0..32 {
                    ev += (img[(y + 1) * 32 + x] - img[y * 32 + x]).powi(2);
                }
            }
        }
        assert!(
            eh > 2.0 * ev,
            "horizontal difference energy ({eh:.4}) should dominate vertical ({ev:.4})"
        );
    }

    #[test]
    fn objective_validation_errors() {
        let net = Network::desk32(0);
        let cfg = VizConfig::default();
        let color = ColorMatrix::identity(3);
        let bad_layer = VizObjective { layer: 9, channel: 0, sign: Sign::Maximize };
        assert!(visualize(&net, &bad_layer, &cfg, &color, 32, 32).is_err());
        let bad_channel = VizObjective { layer: 6, channel: 32, sign: Sign::Maximize };
        assert!(visualize(&net, &bad_channel, &cfg, &color, 32, 32).is_err());
        let bad_scale = VizConfig { scale_min: 1.2, ..VizConfig::default() };
        let obj = VizObjective { layer: 6, channel: 0, sign: Sign::Maximize };
        assert!(visualize(&net, &obj, &bad_scale, &color, 32, 32).is_err());
    }
}
