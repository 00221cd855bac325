//! The fusion operator set: six ways to merge two `(B, C, L)` feature
//! maps into one, each shape-preserving so operators are freely
//! interchangeable inside a fusion node.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The candidate operator set. Order matters: γ vectors, LUT rows, and
/// discretization tie-breaking all index ops in this declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionOpKind {
    Sum,
    ScaleDotAttn,
    LinearGLU,
    ConcatFC,
    SqueezeExcitation,
    ConcatMish,
}

pub const ALL_FUSION_OPS: [FusionOpKind; 6] = [
    FusionOpKind::Sum,
    FusionOpKind::ScaleDotAttn,
    FusionOpKind::LinearGLU,
    FusionOpKind::ConcatFC,
    FusionOpKind::SqueezeExcitation,
    FusionOpKind::ConcatMish,
];

impl FusionOpKind {
    pub fn index(self) -> usize {
        ALL_FUSION_OPS.iter().position(|o| *o == self).expect("op is in the set")
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionOpKind::Sum => "Sum",
            FusionOpKind::ScaleDotAttn => "ScaleDotAttn",
            FusionOpKind::LinearGLU => "LinearGLU",
            FusionOpKind::ConcatFC => "ConcatFC",
            FusionOpKind::SqueezeExcitation => "SqueezeExcitation",
            FusionOpKind::ConcatMish => "ConcatMish",
        }
    }
}

/// The two input gates a relaxed edge mixes over. Column 0 of every α/β
/// gate matrix is Identity, column 1 is Zero; since Zero contributes
/// nothing, a relaxed mixture reduces to candidates weighted by their
/// Identity-gate softmax probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputGate {
    Identity,
    Zero,
}

pub const GATES: [InputGate; 2] = [InputGate::Identity, InputGate::Zero];

/// Learnable parameter shapes for one op instance at fusion width `c`.
/// Ops without parameters return an empty list.
pub fn op_param_shapes(kind: FusionOpKind, c: usize) -> Vec<(&'static str, Vec<usize>)> {
    match kind {
        FusionOpKind::Sum | FusionOpKind::ScaleDotAttn => vec![],
        FusionOpKind::LinearGLU => {
            vec![("w1", vec![c, c, 1]), ("w2", vec![c, c, 1])]
        }
        FusionOpKind::ConcatFC => vec![("w", vec![c, 2 * c, 1]), ("b", vec![c])],
        FusionOpKind::SqueezeExcitation => vec![("w", vec![c, c]), ("b", vec![c])],
        FusionOpKind::ConcatMish => {
            vec![("w1", vec![c, c, 1]), ("w2", vec![c, c, 1]), ("proj", vec![c, 2 * c, 1])]
        }
    }
}

fn check_params(kind: FusionOpKind, c: usize, params: &[Tensor]) -> Result<()> {
    let spec = op_param_shapes(kind, c);
    if params.len() != spec.len() {
        return Err(Error::invalid(
            "params",
            format!("{} takes {} parameters, got {}", kind.name(), spec.len(), params.len()),
        ));
    }
    for ((name, shape), p) in spec.iter().zip(params) {
        if p.shape() != shape.as_slice() {
            return Err(Error::invalid(
                "params",
                format!("{}.{name} wants shape {shape:?}, got {:?}", kind.name(), p.shape()),
            ));
        }
    }
    Ok(())
}

/// Apply one fusion operator to a pair of `(B, C, L)` maps.
pub fn apply_fusion_op(
    kind: FusionOpKind,
    x: &Tensor,
    y: &Tensor,
    params: &[Tensor],
) -> Result<Tensor> {
    let (_, c, _) = match (x.shape(), y.shape()) {
        ([b, c, l], [b2, c2, l2]) if b == b2 && c == c2 && l == l2 => (*b, *c, *l),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "apply_fusion_op",
                detail: format!("{:?} vs {:?}, want equal (B, C, L)", x.shape(), y.shape()),
            })
        }
    };
    check_params(kind, c, params)?;
    match kind {
        FusionOpKind::Sum => x.add(y),
        FusionOpKind::ScaleDotAttn => {
            // softmax(X^T Y / sqrt(C)) attends over the length axis of Y.
            let xt = x.transpose_last()?; // (B, L, C)
            let scores = xt.bmm(y)?.scale(1.0 / (c as f64).sqrt())?; // (B, L, L)
            let attn = scores.softmax(2)?;
            attn.bmm(&y.transpose_last()?)?.transpose_last() // (B, C, L)
        }
        FusionOpKind::LinearGLU => {
            let a = x.conv1d(&params[0], None)?;
            let g = y.conv1d(&params[1], None)?.sigmoid()?;
            a.mul(&g)
        }
        FusionOpKind::ConcatFC => {
            let cat = Tensor::concat(1, &[x, y])?;
            cat.conv1d(&params[0], Some(&params[1]))?.relu()
        }
        FusionOpKind::SqueezeExcitation => {
            // Squeeze X over length, excite Y per channel.
            let s = x.mean_axis(2)?; // (B, C)
            let e = s.matmul2(&params[0].transpose_last()?)?.add_row(&params[1])?.sigmoid()?;
            Tensor::scale_channels(&e, y)
        }
        FusionOpKind::ConcatMish => {
            let cx = x.conv1d(&params[0], None)?;
            let cy = y.conv1d(&params[1], None)?;
            let cat = Tensor::concat(1, &[&cx, &cy])?;
            cat.mish()?.conv1d(&params[2], None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    fn rand_params(kind: FusionOpKind, c: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        op_param_shapes(kind, c)
            .iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                Tensor::param(data, shape).unwrap()
            })
            .collect()
    }

    #[test]
    fn sum_adds_elementwise() {
        let x = t(&[1.0, 2.0], &[1, 1, 2]);
        let y = t(&[3.0, 4.0], &[1, 1, 2]);
        let out = apply_fusion_op(FusionOpKind::Sum, &x, &y, &[]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn attention_with_single_key_returns_y() {
        // L = 1: the softmax over one key is 1, so attention passes Y
        // through untouched.
        let x = t(&[0.3, -1.0, 2.0], &[1, 3, 1]);
        let y = t(&[5.0, 7.0, -2.0], &[1, 3, 1]);
        let out = apply_fusion_op(FusionOpKind::ScaleDotAttn, &x, &y, &[]).unwrap();
        for (o, want) in out.data().iter().zip(y.data()) {
            assert_abs_diff_eq!(*o, *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn squeeze_excitation_hand_example() {
        // X = [2, 4] -> squeeze 3 -> sigmoid(3) ~ 0.95257; Y = [1, 1].
        let x = t(&[2.0, 4.0], &[1, 1, 2]);
        let y = t(&[1.0, 1.0], &[1, 1, 2]);
        let w = t(&[1.0], &[1, 1]);
        let b = t(&[0.0], &[1]);
        let out = apply_fusion_op(FusionOpKind::SqueezeExcitation, &x, &y, &[w, b]).unwrap();
        for o in out.data() {
            assert_abs_diff_eq!(*o, 0.95257, epsilon = 1e-5);
        }
    }

    #[test]
    fn glu_with_identity_weights_and_zero_inputs_is_zero() {
        let c = 2;
        let id = t(&[1.0, 0.0, 0.0, 1.0], &[c, c, 1]);
        let x = t(&[0.0; 4], &[1, 2, 2]);
        let out =
            apply_fusion_op(FusionOpKind::LinearGLU, &x, &x, &[id.clone(), id.clone()]).unwrap();
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn concat_mish_matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = 3;
        let params = rand_params(FusionOpKind::ConcatMish, c, &mut rng);
        let x = t(&(0..12).map(|i| (i as f64) / 7.0 - 0.9).collect::<Vec<_>>(), &[1, 3, 4]);
        let y = t(&(0..12).map(|i| (i as f64) / 5.0 - 1.1).collect::<Vec<_>>(), &[1, 3, 4]);
        let got = apply_fusion_op(FusionOpKind::ConcatMish, &x, &y, &params).unwrap();
        let cx = x.conv1d(&params[0], None).unwrap();
        let cy = y.conv1d(&params[1], None).unwrap();
        let want = Tensor::concat(1, &[&cx, &cy])
            .unwrap()
            .mish()
            .unwrap()
            .conv1d(&params[2], None)
            .unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn every_op_preserves_shape_and_is_differentiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (b, c, l) in [(1, 2, 3), (2, 4, 5), (3, 1, 1)] {
            for kind in ALL_FUSION_OPS {
                let n = b * c * l;
                let x = Tensor::param((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), &[b, c, l]).unwrap();
                let y = Tensor::param((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), &[b, c, l]).unwrap();
                let params = rand_params(kind, c, &mut rng);
                let out = apply_fusion_op(kind, &x, &y, &params).unwrap();
                assert_eq!(out.shape(), &[b, c, l], "{} at ({b},{c},{l})", kind.name());
                out.sum_all().unwrap().backward().unwrap();
                assert!(
                    x.grad().is_some() || y.grad().is_some(),
                    "{}: no gradient reached the inputs",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn mismatched_shapes_and_params_are_rejected() {
        let x = t(&[0.0; 4], &[1, 2, 2]);
        let y = t(&[0.0; 6], &[1, 2, 3]);
        assert!(apply_fusion_op(FusionOpKind::Sum, &x, &y, &[]).is_err());
        // Sum takes no params.
        let junk = t(&[1.0], &[1]);
        assert!(apply_fusion_op(FusionOpKind::Sum, &x, &x, &[junk.clone()]).is_err());
        // GLU params of the wrong shape.
        assert!(apply_fusion_op(FusionOpKind::LinearGLU, &x, &x, &[junk.clone(), junk]).is_err());
    }

    #[test]
    fn op_order_is_stable() {
        // The γ/LUT index convention: declaration order.
        assert_eq!(FusionOpKind::Sum.index(), 0);
        assert_eq!(FusionOpKind::ConcatMish.index(), 5);
        for (i, op) in ALL_FUSION_OPS.iter().enumerate() {
            assert_eq!(op.index(), i);
        }
    }
}
