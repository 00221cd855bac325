//! Shared fixtures for integration tests: a catalog of differentiable-op
//! instances with randomly drawn inputs (driving finite-difference
//! gradient verification from more than one test target) and a
//! brute-force Pareto oracle.

#![allow(dead_code)] // each test target uses its own slice of this module

pub mod pareto;

use fusenas_core::tensor::Tensor;
use fusenas_core::Result;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Build = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

pub struct OpInstance {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    /// Contraction weights handed to the checker; longer than any output.
    pub weights: Vec<f64>,
    pub build: Build,
}

/// Values bounded away from zero (and from every kink the catalog uses)
/// so central differences never straddle a non-smooth point.
fn smooth_vals(rng: &mut ChaCha8Rng, n: usize, signed: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(0.5..2.0);
            if signed && rng.random_range(0..2) == 0 {
                -v
            } else {
                v
            }
        })
        .collect()
}

/// Unrestricted smooth values for ops without kinks.
fn free_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn weights(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..256).map(|_| rng.random_range(0.5..1.5)).collect()
}

/// One randomly drawn instance of every differentiable op in the tensor
/// module (plus a few composites), repeated `per_op` times with fresh
/// draws. Deterministic in `seed`.
pub fn op_instances(seed: u64, per_op: usize) -> Vec<OpInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..per_op {
        push_round(&mut rng, &mut out);
    }
    out
}

fn push_round(rng: &mut ChaCha8Rng, out: &mut Vec<OpInstance>) {
    // Inputs are drawn eagerly (before the push) so the rng is never
    // captured by a stored closure.
    macro_rules! case {
        ($name:expr, $inputs:expr, $build:expr) => {{
            let inputs = $inputs;
            let w = weights(rng);
            out.push(OpInstance { name: $name, inputs, weights: w, build: $build });
        }};
    }
    fn pair(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<(Vec<usize>, Vec<f64>)> {
        let n: usize = shape.iter().product();
        vec![(shape.to_vec(), free_vals(rng, n)), (shape.to_vec(), free_vals(rng, n))]
    }

    case!("add", pair(rng, &[2, 3, 4]), Box::new(|t| t[0].add(&t[1])));
    case!("sub", pair(rng, &[2, 3, 4]), Box::new(|t| t[0].sub(&t[1])));
    case!("mul", pair(rng, &[2, 3, 4]), Box::new(|t| t[0].mul(&t[1])));

    let c = rng.random_range(-1.5..1.5);
    case!(
        "scale",
        vec![(vec![3, 4], free_vals(rng, 12))],
        Box::new(move |t| t[0].scale(c))
    );
    case!(
        "scale_by",
        vec![(vec![2, 3], free_vals(rng, 6)), (vec![1], free_vals(rng, 1))],
        Box::new(|t| t[0].scale_by(&t[1]))
    );
    case!(
        "add_row",
        vec![(vec![3, 4], free_vals(rng, 12)), (vec![4], free_vals(rng, 4))],
        Box::new(|t| t[0].add_row(&t[1]))
    );
    case!(
        "matmul2",
        vec![(vec![3, 4], free_vals(rng, 12)), (vec![4, 2], free_vals(rng, 8))],
        Box::new(|t| t[0].matmul2(&t[1]))
    );
    case!(
        "bmm",
        vec![(vec![2, 3, 4], free_vals(rng, 24)), (vec![2, 4, 2], free_vals(rng, 16))],
        Box::new(|t| t[0].bmm(&t[1]))
    );
    case!(
        "transpose_last",
        vec![(vec![2, 3, 4], free_vals(rng, 24))],
        Box::new(|t| t[0].transpose_last())
    );
    case!(
        "concat",
        vec![
            (vec![2, 2, 3], free_vals(rng, 12)),
            (vec![2, 3, 3], free_vals(rng, 18)),
            (vec![2, 1, 3], free_vals(rng, 6)),
        ],
        Box::new(|t| Tensor::concat(1, &[&t[0], &t[1], &t[2]]))
    );
    case!(
        "narrow",
        vec![(vec![2, 5, 3], free_vals(rng, 30))],
        Box::new(|t| t[0].narrow(1, 1, 3))
    );
    case!(
        "mean_axis",
        vec![(vec![2, 4, 3], free_vals(rng, 24))],
        Box::new(|t| t[0].mean_axis(1))
    );
    case!(
        "sum_axis",
        vec![(vec![2, 4, 3], free_vals(rng, 24))],
        Box::new(|t| t[0].sum_axis(2))
    );

    case!("relu", vec![(vec![3, 4], smooth_vals(rng, 12, true))], Box::new(|t| t[0].relu()));
    case!("sigmoid", vec![(vec![3, 4], free_vals(rng, 12))], Box::new(|t| t[0].sigmoid()));
    case!("tanh", vec![(vec![3, 4], free_vals(rng, 12))], Box::new(|t| t[0].tanh()));
    case!("softplus", vec![(vec![3, 4], free_vals(rng, 12))], Box::new(|t| t[0].softplus()));
    case!("mish", vec![(vec![3, 4], free_vals(rng, 12))], Box::new(|t| t[0].mish()));
    case!("softmax", vec![(vec![2, 5], free_vals(rng, 10))], Box::new(|t| t[0].softmax(1)));
    case!(
        "log_softmax",
        vec![(vec![2, 5], free_vals(rng, 10))],
        Box::new(|t| t[0].log_softmax(1))
    );

    case!(
        "conv1d",
        vec![
            (vec![2, 3, 6], free_vals(rng, 36)),
            (vec![2, 3, 3], free_vals(rng, 18)),
            (vec![2], free_vals(rng, 2)),
        ],
        Box::new(|t| t[0].conv1d(&t[1], Some(&t[2])))
    );
    case!(
        "conv1d_k5_nobias",
        vec![(vec![1, 2, 7], free_vals(rng, 14)), (vec![3, 2, 5], free_vals(rng, 30))],
        Box::new(|t| t[0].conv1d(&t[1], None))
    );

    let p = rng.random_range(1.3..2.7);
    case!(
        "pow_scalar",
        vec![(vec![2, 3], smooth_vals(rng, 6, false))],
        Box::new(move |t| t[0].pow_scalar(p))
    );
    case!(
        "clamp_min",
        vec![(vec![2, 3], smooth_vals(rng, 6, true))],
        Box::new(|t| t[0].clamp_min(0.2))
    );
    case!(
        "scale_channels",
        vec![(vec![2, 3], free_vals(rng, 6)), (vec![2, 3, 4], free_vals(rng, 24))],
        Box::new(|t| Tensor::scale_channels(&t[0], &t[1]))
    );

    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
    case!(
        "cross_entropy",
        vec![(vec![3, 4], free_vals(rng, 12))],
        Box::new(move |t| t[0].cross_entropy(&labels))
    );
    let targets: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    case!(
        "bce_with_logits",
        vec![(vec![5], free_vals(rng, 5))],
        Box::new(move |t| t[0].bce_with_logits(&targets))
    );
    case!(
        "kl_div_rows",
        vec![(vec![3, 4], free_vals(rng, 12)), (vec![3, 4], free_vals(rng, 12))],
        Box::new(|t| Tensor::kl_div_rows(&t[0], &t[1]))
    );

    // Composite chain shaped like a backbone layer feeding a gated fusion:
    // conv -> glu-style gate -> pooled logits -> softmax mix.
    case!(
        "conv_gate_pool_chain",
        vec![
            (vec![2, 2, 5], free_vals(rng, 20)),
            (vec![3, 2, 3], free_vals(rng, 18)),
            (vec![3, 2, 3], free_vals(rng, 18)),
        ],
        Box::new(|t| {
            let a = t[0].conv1d(&t[1], None)?;
            let g = t[0].conv1d(&t[2], None)?.sigmoid()?;
            a.mul(&g)?.mean_axis(2)?.softmax(1)
        })
    );
}
