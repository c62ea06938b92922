//! Central finite-difference validation of the analytic gradients.
//!
//! Tensor-valued targets are contracted to a scalar through a fixed
//! pseudo-random projection so a single backward pass covers every output.
//! Runs in f64: f32 central differences are far too noisy for the 1e-5
//! tolerances this engine is held to.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};

fn projection(shape: Shape) -> Tensor<f64> {
    // Any fixed full-rank-ish projection works; keep entries well away from 0.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E3779B97F4A7C15);
    Tensor::rand_uniform(shape, 0.5, 1.5, &mut rng)
}

fn forward_scalar<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    with_grad: bool,
) -> Result<(Graph<f64>, NodeId, Vec<NodeId>, f64)>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| {
            if with_grad {
                let mut t = t.clone();
                t.requires_grad = true;
                g.leaf(&t)
            } else {
                g.constant(t)
            }
        })
        .collect::<Result<_>>()?;
    let out = f(&mut g, &ids)?;
    let scalar = if g.shape(out).is_scalar() {
        out
    } else {
        let proj = g.constant(&projection(g.shape(out)))?;
        let weighted = g.mul(out, proj)?;
        g.sum(weighted)?
    };
    let value = g.value(scalar)[0];
    Ok((g, scalar, ids, value))
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Returns the max over all input coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    // Two clean evaluations must agree bitwise, otherwise finite differences
    // are meaningless (unseeded dropout, for instance).
    let (_, _, _, v1) = forward_scalar(&f, inputs, false)?;
    let (_, _, _, v2) = forward_scalar(&f, inputs, false)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic {
            detail: format!("two forward evaluations differ: {v1} vs {v2}"),
        });
    }

    let (mut g, scalar, ids, _) = forward_scalar(&f, inputs, true)?;
    g.backward(scalar)?;
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| g.grad(id).expect("leaf gradient populated").to_vec()).collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let (_, _, _, plus) = forward_scalar(&f, &probe, false)?;
            probe[i].data_mut()[j] = orig - eps;
            let (_, _, _, minus) = forward_scalar(&f, &probe, false)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
