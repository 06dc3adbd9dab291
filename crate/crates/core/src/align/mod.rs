//! Weight matching between KANs.
//!
//! Network `B` is aligned to `A` by picking the group element `g` that
//! maximizes `sum_l sum_c w_c <phi_A^l[.,.,c], (g.phi_B)^l[.,.,c]>`, where
//! `c` runs over the per-edge parameter channels `(w_b, w_s, c_0, ...)`.
//! Since `g` preserves norms this is the same as minimizing the summed
//! squared distance. The search is coordinate descent over hidden layers,
//! each step an exact linear assignment.

mod lap;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use lap::{solve_lap, solve_lap_exhaustive};

use crate::engine::Mat;
use crate::error::{Error, Result};
use crate::kan::KanNet;
use crate::parallel::{self, derive_seed};
use crate::symmetry::{act, permute_phi, GroupElement, Permutation};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub max_sweeps: usize,
    /// Stop once a sweep (or a merge round) improves the objective by less.
    pub tol: f64,
    pub seed: u64,
    /// Per-channel weights, all ones when `None`.
    pub channel_weights: Option<Vec<f64>>,
    /// Cap on merge rounds.
    pub max_rounds: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tol: 1e-3,
            seed: 0,
            channel_weights: None,
            max_rounds: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Applying `g` to `B` aligns it with `A`.
    pub g: GroupElement,
    /// Objective before the first sweep, then after every sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl AlignmentResult {
    pub fn apply(&self, net_b: &KanNet) -> Result<KanNet> {
        act(&self.g, net_b)
    }

    /// Plain-text summary: one line per sweep, then one per permutation.
    pub fn report(&self) -> String {
        let mut s = String::from("alignment v1\n");
        let _ = writeln!(
            s,
            "sweeps {} converged {}",
            self.objective_trace.len().saturating_sub(1),
            self.converged
        );
        for (i, v) in self.objective_trace.iter().enumerate() {
            let _ = writeln!(s, "objective {i} {v:?}");
        }
        for (l, p) in self.g.perms.iter().enumerate() {
            let list: Vec<String> = p.as_slice().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "perm {} {}", l + 1, list.join(" "));
        }
        s
    }
}

/// `out[p][q][c] = phi[left(p)][right(q)][c]`: multiplication by permutation
/// matrices on the two unit indices, done as a gather. `None` is the identity.
pub fn contract(
    left: Option<&Permutation>,
    phi: &[f64],
    shape: (usize, usize, usize),
    right: Option<&Permutation>,
) -> Result<Vec<f64>> {
    let (rows, cols, ch) = shape;
    let inv = left.map(Permutation::inverse);
    permute_phi(phi, rows, cols, ch, inv.as_ref(), right)
}

fn check_pair(a: &KanNet, b: &KanNet) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InconsistentDims);
    }
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

fn weights(net: &KanNet, w: Option<&[f64]>) -> Result<Vec<f64>> {
    let ch = net.params_per_edge();
    match w {
        None => Ok(vec![1.0; ch]),
        Some(w) if w.len() == ch => Ok(w.to_vec()),
        Some(w) => Err(Error::DimensionMismatch {
            expected: ch,
            got: w.len(),
        }),
    }
}

fn wdot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum()
}

/// Channel-weighted inner product of all parameters.
pub fn objective(a: &KanNet, b: &KanNet, channel_weights: Option<&[f64]>) -> Result<f64> {
    check_pair(a, b)?;
    let w = weights(a, channel_weights)?;
    let ch = w.len();
    Ok(a.flatten()
        .chunks(ch)
        .zip(b.flatten().chunks(ch))
        .map(|(x, y)| wdot(&w, x, y))
        .sum())
}

/// Euclidean distance between parameter vectors.
pub fn param_distance(a: &KanNet, b: &KanNet) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Gain matrix for hidden layer `l` (1-based) with every other hidden
/// permutation taken from `g`: entry `[p][p']` is the objective contributed
/// by the edges touching unit `p` of `A` when it is matched with unit `p'`
/// of `B`.
pub fn layer_cost_matrix(
    a: &KanNet,
    b: &KanNet,
    g: &GroupElement,
    l: usize,
    channel_weights: Option<&[f64]>,
) -> Result<Mat> {
    check_pair(a, b)?;
    let dims = a.dims();
    g.check(dims)?;
    if l == 0 || l + 1 >= dims.len() {
        return Err(Error::InvalidConfig(format!("layer {l} is not a hidden layer")));
    }
    let w = weights(a, channel_weights)?;
    let n = dims[l];
    let prev = g.layer_perm(l - 1, dims);
    let next = g.layer_perm(l + 1, dims);
    let (ia, ib) = (&a.layers()[l - 1], &b.layers()[l - 1]);
    let (oa, ob) = (&a.layers()[l], &b.layers()[l]);
    let mut c = Mat::zeros(n, n);
    for p in 0..n {
        for pp in 0..n {
            let mut s = 0.0;
            for q in 0..dims[l - 1] {
                s += wdot(&w, ia.edge(p, q), ib.edge(pp, prev.apply(q)));
            }
            for r in 0..dims[l + 1] {
                s += wdot(&w, oa.edge(r, p), ob.edge(next.apply(r), pp));
            }
            c.data[p * n + pp] = s;
        }
    }
    Ok(c)
}

/// Aligns `b` to `a` starting from the identity.
pub fn align_pair(a: &KanNet, b: &KanNet, cfg: &AlignConfig) -> Result<AlignmentResult> {
    check_pair(a, b)?;
    align_pair_from(a, b, GroupElement::identity(a.dims()), cfg)
}

/// Aligns `b` to `a` starting from `init`. Each layer update is accepted
/// only when it strictly raises the objective, so the trace never drops.
pub fn align_pair_from(a: &KanNet, b: &KanNet, init: GroupElement, cfg: &AlignConfig) -> Result<AlignmentResult> {
    check_pair(a, b)?;
    let dims = a.dims();
    init.check(dims)?;
    if init.perms.is_empty() {
        return Err(Error::NoHiddenLayers);
    }
    let w = cfg.channel_weights.as_deref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = init;
    let mut trace = vec![objective(a, &act(&g, b)?, w)?];
    let mut converged = false;
    let mut order: Vec<usize> = (1..dims.len() - 1).collect();
    for _ in 0..cfg.max_sweeps {
        order.shuffle(&mut rng);
        for &l in &order {
            let c = layer_cost_matrix(a, b, &g, l, w)?;
            let cur = &g.perms[l - 1];
            let cand = solve_lap(&c, true)?;
            let value = |p: &Permutation| (0..c.rows).map(|i| c.at(i, p.apply(i))).sum::<f64>();
            let (vc, vn) = (value(cur), value(&cand));
            if vn > vc + 1e-12 * (1.0 + vc.abs()) {
                g.perms[l - 1] = cand;
            }
        }
        let obj = objective(a, &act(&g, b)?, w)?;
        let gain = obj - trace[trace.len() - 1];
        trace.push(obj);
        if gain < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(AlignmentResult {
        g,
        objective_trace: trace,
        converged,
    })
}

/// Aligns every net to a fixed reference. Net `i` uses seed
/// `derive_seed(cfg.seed, i)`, so results do not depend on scheduling.
pub fn align_to_reference(reference: &KanNet, nets: &[KanNet], cfg: &AlignConfig) -> Result<Vec<AlignmentResult>> {
    let idx: Vec<usize> = (0..nets.len()).collect();
    parallel::map(&idx, |&i| {
        let c = AlignConfig {
            seed: derive_seed(cfg.seed, i as u64),
            ..cfg.clone()
        };
        align_pair(reference, &nets[i], &c)
    })
    .into_iter()
    .collect()
}

/// Parameter-wise mean of networks with equal shape.
pub fn mean_net(nets: &[&KanNet]) -> Result<KanNet> {
    let first = nets.first().ok_or(Error::EmptyDataset)?;
    let mut acc = vec![0.0; first.num_params()];
    for n in nets {
        check_pair(first, n)?;
        for (a, v) in acc.iter_mut().zip(n.flatten()) {
            *a += v;
        }
    }
    let k = nets.len() as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    first.with_flat(&acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    /// Mean of the aligned subset.
    pub reference: KanNet,
    /// Indices of the nets used to build the reference.
    pub subset: Vec<usize>,
    /// One element per input net, in input order.
    pub alignments: Vec<GroupElement>,
    pub aligned: Vec<KanNet>,
    /// Sum of pairwise objectives within the subset, initially and after each round.
    pub round_objectives: Vec<f64>,
}

fn pairwise_objective(nets: &[KanNet], w: Option<&[f64]>) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..nets.len() {
        for j in i + 1..nets.len() {
            s += objective(&nets[i], &nets[j], w)?;
        }
    }
    Ok(s)
}

/// Aligns a random subset of `subset_size` nets to each other by repeatedly
/// matching each one to the mean of the rest, then aligns every net to the
/// mean of the aligned subset.
pub fn merge_many<R: Rng + ?Sized>(
    nets: &[KanNet],
    subset_size: usize,
    cfg: &AlignConfig,
    rng: &mut R,
) -> Result<MergeResult> {
    if nets.len() < 2 || subset_size < 2 {
        return Err(Error::InvalidConfig("merging needs at least two nets".into()));
    }
    for n in nets {
        check_pair(&nets[0], n)?;
    }
    let dims = nets[0].dims();
    if dims.len() < 3 {
        return Err(Error::NoHiddenLayers);
    }
    let w = cfg.channel_weights.as_deref();
    let mut subset: Vec<usize> = (0..nets.len()).collect();
    subset.shuffle(rng);
    subset.truncate(subset_size.min(nets.len()));
    subset.sort_unstable();

    let mut gs: Vec<GroupElement> = subset.iter().map(|_| GroupElement::identity(dims)).collect();
    let mut cur: Vec<KanNet> = subset.iter().map(|&i| nets[i].clone()).collect();
    let mut trace = vec![pairwise_objective(&cur, w)?];
    let mut order: Vec<usize> = (0..subset.len()).collect();
    for round in 0..cfg.max_rounds {
        order.shuffle(rng);
        for &k in &order {
            let others: Vec<&KanNet> = cur.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, n)| n).collect();
            let target = mean_net(&others)?;
            let c = AlignConfig {
                seed: derive_seed(cfg.seed, ((round as u64) << 32) | k as u64),
                ..cfg.clone()
            };
            let res = align_pair_from(&target, &nets[subset[k]], gs[k].clone(), &c)?;
            cur[k] = res.apply(&nets[subset[k]])?;
            gs[k] = res.g;
        }
        let obj = pairwise_objective(&cur, w)?;
        let gain = obj - trace[trace.len() - 1];
        trace.push(obj);
        if gain.abs() < cfg.tol {
            break;
        }
    }
    let reference = mean_net(&cur.iter().collect::<Vec<_>>())?;

    let idx: Vec<usize> = (0..nets.len()).collect();
    let results = parallel::map(&idx, |&i| -> Result<(GroupElement, KanNet)> {
        let init = subset
            .binary_search(&i)
            .map_or_else(|_| GroupElement::identity(dims), |k| gs[k].clone());
        let c = AlignConfig {
            seed: derive_seed(cfg.seed ^ 0xa11, i as u64),
            ..cfg.clone()
        };
        let res = align_pair_from(&reference, &nets[i], init, &c)?;
        let aligned = res.apply(&nets[i])?;
        Ok((res.g, aligned))
    });
    let mut alignments = Vec::with_capacity(nets.len());
    let mut aligned = Vec::with_capacity(nets.len());
    for r in results {
        let (g, n) = r?;
        alignments.push(g);
        aligned.push(n);
    }
    Ok(MergeResult {
        reference,
        subset,
        alignments,
        aligned,
        round_objectives: trace,
    })
}
