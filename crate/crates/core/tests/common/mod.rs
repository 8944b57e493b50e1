//! Shared test support: random network instances and the central
//! finite-difference gradient oracle.

use ediv_core::engine::{Layer, Network, Padding, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One differentiable instance: a network, an input batch, and fixed
/// weights that scalarize the network output.
pub struct FdInstance {
    pub net: Network,
    pub input: Tensor,
    pub loss_weights: Vec<f64>,
}

/// Rejection threshold keeping instances away from ReLU kinks and pooling
/// ties, where finite differences are invalid.
const KINK_MARGIN: f64 = 1e-3;

/// Draw a random small network (every layer kind represented across draws)
/// and an input, resampling until no activation sits near a kink.
pub fn random_instance(rng: &mut ChaCha8Rng) -> FdInstance {
    loop {
        let channels = rng.gen_range(1..=3usize);
        let size = rng.gen_range(5..=8usize);
        let c1 = rng.gen_range(1..=4usize);
        let with_pool = rng.gen_bool(0.5) && size >= 6;
        let with_second_conv = rng.gen_bool(0.5);
        let classes = rng.gen_range(2..=4usize);

        let mut b = Network::builder(channels)
            .conv(c1, 3, if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid })
            .relu();
        if with_pool {
            b = b.maxpool();
        }
        if with_second_conv {
            let c2 = rng.gen_range(1..=4usize);
            b = b.conv(c2, 3, Padding::Same).relu();
        }
        let net = match b.global_avg_pool().linear(classes).build(rng.gen()) {
            Ok(n) => n,
            Err(_) => continue,
        };
        let param_count: usize = net.params().values().map(|t| t.len()).sum();
        assert!(param_count <= 2000, "instance exceeds the 2k parameter budget");

        let data: Vec<f64> =
            (0..channels * size * size).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let input = Tensor::new(vec![1, channels, size, size], data).expect("consistent");
        if !safe_from_kinks(&net, &input) {
            continue;
        }
        let k = net.params()["fc1.bias"].len();
        let loss_weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        return FdInstance { net, input, loss_weights };
    }
}

/// True when every ReLU input and every pooling decision has margin from
/// the non-differentiable boundary.
fn safe_from_kinks(net: &Network, input: &Tensor) -> bool {
    let fwd = net.forward(input).expect("forward succeeds");
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Relu => {
                let pre = fwd.layer_output_tensor(i - 1).expect("previous layer exists");
                if pre.data().iter().any(|v| v.abs() < KINK_MARGIN) {
                    return false;
                }
            }
            Layer::MaxPool2x2 => {
                let pre = fwd.layer_output_tensor(i - 1).expect("previous layer exists");
                let s = pre.shape();
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                for bc in 0..b * c {
                    let img = &pre.data()[bc * h * w..(bc + 1) * h * w];
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            let mut cell = [
                                img[2 * oy * w + 2 * ox],
                                img[2 * oy * w + 2 * ox + 1],
                                img[(2 * oy + 1) * w + 2 * ox],
                                img[(2 * oy + 1) * w + 2 * ox + 1],
                            ];
                            cell.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
                            if cell[0] - cell[1] < KINK_MARGIN {
                                return false;
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    true
}

/// Scalar loss: fixed weights dotted with the network output.
pub fn scalar_loss(net: &Network, input: &Tensor, weights: &[f64]) -> f64 {
    let fwd = net.forward(input).expect("forward succeeds");
    fwd.output_tensor().data().iter().zip(weights).map(|(o, w)| o * w).sum()
}

/// Max relative error between reverse-mode gradients and central finite
/// differences (step 1e-4) over all parameters and the input.
pub fn max_relative_fd_error(instance: &FdInstance) -> f64 {
    let FdInstance { net, input, loss_weights } = instance;
    let h = 1e-4;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);

    // analytic gradients via one forward + backward
    let mut fwd = net.forward(input).expect("forward succeeds");
    let out_id = fwd.output_id();
    let ws = fwd
        .graph_mut()
        .weighted_sum(out_id, loss_weights.clone(), "loss")
        .expect("weights match output");
    fwd.graph_mut().backward(ws, &[1.0]).expect("backward succeeds");

    let mut worst = 0.0f64;
    for name in net.params().keys() {
        let node = fwd.param_node(name).expect("parameter on tape");
        let analytic = fwd.graph().grad(node).expect("gradient filled").to_vec();
        for i in 0..analytic.len() {
            let mut plus = net.clone();
            plus.params_mut().get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut().get_mut(name).unwrap().data_mut()[i] -= h;
            let fd =
                (scalar_loss(&plus, input, loss_weights) - scalar_loss(&minus, input, loss_weights))
                    / (2.0 * h);
            worst = worst.max(rel(analytic[i], fd));
        }
    }
    let input_grad = fwd.graph().grad(fwd.input_id()).expect("input gradient").to_vec();
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let fd = (scalar_loss(net, &plus, loss_weights) - scalar_loss(net, &minus, loss_weights))
            / (2.0 * h);
        worst = worst.max(rel(input_grad[i], fd));
    }
    worst
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
