//! Activation-threshold pruning oracle.

use crate::error::{Error, Result};
use crate::kan::KanNet;

pub const PRUNE_THRESHOLD: f64 = 0.01;

/// Mean post-activation value of every edge over `inputs`, in graph edge
/// order. With `signed == false` absolute values are averaged.
pub fn edge_activation_means(net: &KanNet, inputs: &[Vec<f64>], signed: bool) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = vec![0.0; net.num_edges()];
    for x in inputs {
        let t = net.forward_trace(x)?;
        for (a, v) in acc.iter_mut().zip(t.edges.iter().flatten()) {
            *a += if signed { *v } else { v.abs() };
        }
    }
    let n = inputs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Keep mask: `false` for edges whose mean activation is below `threshold`.
/// The signed variant compares the magnitude of the signed mean.
pub fn oracle_prune(net: &KanNet, inputs: &[Vec<f64>], threshold: f64, signed: bool) -> Result<Vec<bool>> {
    Ok(edge_activation_means(net, inputs, signed)?
        .into_iter()
        .map(|m| m.abs() >= threshold)
        .collect())
}

/// Zeroes every parameter of the masked-out edges.
pub fn apply_mask(net: &KanNet, mask: &[bool]) -> Result<KanNet> {
    if mask.len() != net.num_edges() {
        return Err(Error::DimensionMismatch {
            expected: net.num_edges(),
            got: mask.len(),
        });
    }
    let mut out = net.clone();
    let mut e = 0;
    for layer in out.layers_mut() {
        for p in 0..layer.d_out() {
            for q in 0..layer.d_in() {
                if !mask[e] {
                    layer.edge_mut(p, q).fill(0.0);
                }
                e += 1;
            }
        }
    }
    Ok(out)
}

/// Fraction of edges kept.
pub fn kept_fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}
