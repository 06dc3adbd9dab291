//! Hidden-neuron permutation symmetries of KANs.
//!
//! A group element holds one permutation `sigma_l` per hidden layer. Acting
//! on a network relabels hidden units so that unit `p` of the new layer `l`
//! is unit `sigma_l(p)` of the old one:
//! `phi'^l[p][q] = phi^l[sigma_l(p)][sigma_{l-1}(q)]`, with the input and
//! output layers left untouched. The function computed is unchanged.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kan::{KanLayer, KanNet};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; sigma.len()];
        for &s in &sigma {
            if s >= sigma.len() || seen[s] {
                return Err(Error::InvalidPermutation(format!("{sigma:?} is not a bijection")));
            }
            seen[s] = true;
        }
        Ok(Self(sigma))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s] = i;
        }
        Self(inv)
    }

    /// `i -> self(other(i))`.
    pub fn then_after(&self, other: &Self) -> Self {
        Self(other.0.iter().map(|&j| self.0[j]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &s)| i == s)
    }
}

/// One permutation per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub perms: Vec<Permutation>,
}

impl GroupElement {
    pub fn identity(dims: &[usize]) -> Self {
        Self {
            perms: hidden(dims).iter().map(|&d| Permutation::identity(d)).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(Permutation::is_identity)
    }

    /// Checks that this element acts on networks of widths `dims`.
    pub fn check(&self, dims: &[usize]) -> Result<()> {
        let h = hidden(dims);
        if h.len() != self.perms.len() || h.iter().zip(&self.perms).any(|(&d, p)| d != p.len()) {
            return Err(Error::SizeMismatch(format!(
                "group element with sizes {:?} does not fit hidden widths {h:?}",
                self.perms.iter().map(Permutation::len).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    /// The element whose action is `act(self) . act(first)`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        if self.perms.len() != first.perms.len()
            || self.perms.iter().zip(&first.perms).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::SizeMismatch("group elements of different shapes".into()));
        }
        Ok(Self {
            perms: self
                .perms
                .iter()
                .zip(&first.perms)
                .map(|(s2, s1)| s1.then_after(s2))
                .collect(),
        })
    }

    pub fn inverse(&self) -> Self {
        Self {
            perms: self.perms.iter().map(Permutation::inverse).collect(),
        }
    }

    /// Permutation of layer-`l` units (0 = input), identity at the ends.
    pub fn layer_perm(&self, l: usize, dims: &[usize]) -> Permutation {
        if l == 0 || l + 1 >= dims.len() {
            Permutation::identity(dims[l])
        } else {
            self.perms[l - 1].clone()
        }
    }
}

fn hidden(dims: &[usize]) -> &[usize] {
    if dims.len() < 2 {
        &[]
    } else {
        &dims[1..dims.len() - 1]
    }
}

/// Reorders a row-major `rows x cols` matrix of blocks (each `block` long)
/// so that `out[p][q] = in[row_perm^{-1}(p)][col_perm(q)]`. `None` stands
/// for the identity.
pub fn permute_phi(
    blocks: &[f64],
    rows: usize,
    cols: usize,
    block: usize,
    row_perm: Option<&Permutation>,
    col_perm: Option<&Permutation>,
) -> Result<Vec<f64>> {
    if blocks.len() != rows * cols * block {
        return Err(Error::SizeMismatch(format!(
            "{} values for a {rows}x{cols} matrix of {block}-blocks",
            blocks.len()
        )));
    }
    if row_perm.is_some_and(|p| p.len() != rows) || col_perm.is_some_and(|p| p.len() != cols) {
        return Err(Error::SizeMismatch("permutation size does not match matrix".into()));
    }
    let row_inv = row_perm.map(Permutation::inverse);
    let mut out = Vec::with_capacity(blocks.len());
    for p in 0..rows {
        let sp = row_inv.as_ref().map_or(p, |s| s.apply(p));
        for q in 0..cols {
            let sq = col_perm.map_or(q, |s| s.apply(q));
            let o = (sp * cols + sq) * block;
            out.extend_from_slice(&blocks[o..o + block]);
        }
    }
    Ok(out)
}

/// Applies `g` to the hidden units of `net`.
pub fn act(g: &GroupElement, net: &KanNet) -> Result<KanNet> {
    g.check(net.dims())?;
    let dims = net.dims();
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let rows = g.layer_perm(l + 1, dims).inverse();
            let cols = g.layer_perm(l, dims);
            let params = permute_phi(
                layer.params(),
                layer.d_out(),
                layer.d_in(),
                layer.stride(),
                Some(&rows),
                Some(&cols),
            )?;
            KanLayer::from_params(layer.d_in(), layer.d_out(), layer.stride(), params)
        })
        .collect::<Result<Vec<_>>>()?;
    KanNet::from_layers(net.spec().clone(), layers)
}

/// Uniformly random element of the hidden-layer permutation group.
pub fn sample_group_element<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<GroupElement> {
    let h = hidden(dims);
    if h.is_empty() {
        return Err(Error::NoHiddenLayers);
    }
    Ok(GroupElement {
        perms: h.iter().map(|&d| Permutation::random(d, rng)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub max_deviation: f64,
    pub pass: bool,
}

/// Largest absolute output difference between two nets over `inputs`.
pub fn max_deviation(a: &KanNet, b: &KanNet, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in inputs {
        let ya = a.forward(x)?;
        let yb = b.forward(x)?;
        for (u, v) in ya.iter().zip(&yb) {
            let d = (u - v).abs();
            worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
        }
    }
    Ok(worst)
}

/// Uniform random inputs over the spline domain.
pub fn random_inputs<R: Rng + ?Sized>(net: &KanNet, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let (a, b) = (net.spec().a(), net.spec().b());
    (0..n)
        .map(|_| (0..net.dims()[0]).map(|_| rng.random_range(a..=b)).collect())
        .collect()
}

/// Draws a random group element and `n_inputs` inputs and compares the
/// original and permuted networks. Networks without hidden layers only
/// admit the identity.
pub fn verify_invariance<R: Rng + ?Sized>(
    net: &KanNet,
    n_inputs: usize,
    tol: f64,
    rng: &mut R,
) -> Result<InvarianceReport> {
    if tol <= 0.0 || tol.is_nan() {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let g = match sample_group_element(net.dims(), rng) {
        Ok(g) => g,
        Err(Error::NoHiddenLayers) => GroupElement::identity(net.dims()),
        Err(e) => return Err(e),
    };
    let permuted = act(&g, net)?;
    let inputs = random_inputs(net, n_inputs, rng);
    let max_deviation = max_deviation(net, &permuted, &inputs)?;
    Ok(InvarianceReport {
        max_deviation,
        pass: max_deviation < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::InitConfig;
    use crate::spline::SplineSpec;
    use proptest::prelude::{prop_assert, proptest, Just, Strategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn net(dims: &[usize], seed: u64) -> KanNet {
        let spec = SplineSpec::new(-1.0, 1.0, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = KanNet::init(dims, spec, &InitConfig::default(), &mut rng).unwrap();
        for l in n.layers_mut() {
            for v in l.params_mut() {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        n
    }

    #[test]
    fn permute_phi_identity_inverse_and_index_oracle() {
        let m: Vec<f64> = (0..9).map(|v| v as f64).collect();
        assert_eq!(permute_phi(&m, 3, 3, 1, None, None).unwrap(), m);
        let s = Permutation::new(vec![2, 0, 1]).unwrap();
        let once = permute_phi(&m, 3, 3, 1, Some(&s), None).unwrap();
        let back = permute_phi(&once, 3, 3, 1, Some(&s.inverse()), None).unwrap();
        assert_eq!(back, m);

        // Transposition of rows 0 and 2 (1-based (1,3)).
        let t = Permutation::new(vec![2, 1, 0]).unwrap();
        let out = permute_phi(&m, 3, 3, 1, Some(&t), None).unwrap();
        assert_eq!(out, vec![6.0, 7.0, 8.0, 3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);

        let r = Permutation::new(vec![1, 2, 0]).unwrap();
        let c = Permutation::new(vec![2, 0, 1]).unwrap();
        let out = permute_phi(&m, 3, 3, 1, Some(&r), Some(&c)).unwrap();
        let ri = r.inverse();
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(out[p * 3 + q], m[ri.apply(p) * 3 + c.apply(q)]);
            }
        }
        assert!(permute_phi(&m, 3, 3, 1, Some(&Permutation::identity(2)), None).is_err());
    }

    #[test]
    fn bad_permutations_rejected() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![1, 2]).is_err());
    }

    #[test]
    fn identity_action_and_invariance() {
        let n = net(&[2, 4, 3, 1], 1);
        assert_eq!(act(&GroupElement::identity(n.dims()), &n).unwrap(), n);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = sample_group_element(n.dims(), &mut rng).unwrap();
            let m = act(&g, &n).unwrap();
            let xs = random_inputs(&n, 50, &mut rng);
            assert!(max_deviation(&n, &m, &xs).unwrap() < 1e-10);
        }
    }

    #[test]
    fn composition_law() {
        let n = net(&[2, 4, 3, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g1 = sample_group_element(n.dims(), &mut rng).unwrap();
            let g2 = sample_group_element(n.dims(), &mut rng).unwrap();
            let two_step = act(&g2, &act(&g1, &n).unwrap()).unwrap();
            let composed = act(&g2.compose(&g1).unwrap(), &n).unwrap();
            assert_eq!(two_step, composed);
            assert_eq!(act(&g1.inverse(), &act(&g1, &n).unwrap()).unwrap(), n);
        }
    }

    #[test]
    fn ends_untouched() {
        let n = net(&[3, 4, 2], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = sample_group_element(n.dims(), &mut rng).unwrap();
        let m = act(&g, &n).unwrap();
        let s = &g.perms[0];
        for p in 0..4 {
            for q in 0..3 {
                assert_eq!(m.layers()[0].edge(p, q), n.layers()[0].edge(s.apply(p), q));
            }
        }
        for r in 0..2 {
            for p in 0..4 {
                assert_eq!(m.layers()[1].edge(r, p), n.layers()[1].edge(r, s.apply(p)));
            }
        }
    }

    #[test]
    fn sampling_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            assert!(sample_group_element(&[2, 1, 1], &mut rng).unwrap().is_identity());
        }
        assert!(matches!(sample_group_element(&[2, 1], &mut rng), Err(Error::NoHiddenLayers)));
        let a = sample_group_element(&[2, 5, 5, 1], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_group_element(&[2, 5, 5, 1], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6000;
        let mut counts: HashMap<GroupElement, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(sample_group_element(&[2, 3, 3, 1], &mut rng).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 36);
        let p = 1.0 / 36.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in counts.values() {
            assert!((c as f64 - mean).abs() < 3.0 * sd + 1.0, "count {c}");
        }
        // Chi-square with 35 dof; 99.9th percentile is about 66.6.
        let chi: f64 = counts.values().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        assert!(chi < 66.6, "chi-square {chi}");
    }

    #[test]
    fn verify_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shallow = net(&[2, 3], 1);
        let r = verify_invariance(&shallow, 20, 1e-8, &mut rng).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        assert!(r.pass);
        let deep = net(&[2, 6, 5, 1], 13);
        assert!(verify_invariance(&deep, 50, 1e-8, &mut rng).unwrap().pass);
        assert!(verify_invariance(&deep, 5, 0.0, &mut rng).is_err());

        // Corrupted action: shift every coefficient feeding from one hidden
        // unit of the last hidden layer.
        let g = sample_group_element(deep.dims(), &mut rng).unwrap();
        let mut bad = act(&g, &deep).unwrap();
        for r in 0..1 {
            for c in &mut bad.layers_mut()[2].edge_mut(r, 0)[2..] {
                *c += 0.5;
            }
        }
        let xs = random_inputs(&deep, 50, &mut rng);
        assert!(max_deviation(&deep, &bad, &xs).unwrap() > 1e-8);
    }

    proptest! {
        #[test]
        fn prop_action_preserves_function(seed in 0u64..10_000, h1 in 1usize..6, h2 in 1usize..6) {
            let n = net(&[2, h1, h2, 2], seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let g = sample_group_element(n.dims(), &mut rng).unwrap();
            let m = act(&g, &n).unwrap();
            let xs = random_inputs(&n, 10, &mut rng);
            prop_assert!(max_deviation(&n, &m, &xs).unwrap() < 1e-10);
        }

        #[test]
        fn prop_inverse_roundtrip(v in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle()) {
            let p = Permutation::new(v).unwrap();
            prop_assert!(p.then_after(&p.inverse()).is_identity());
            prop_assert!(p.inverse().then_after(&p).is_identity());
        }
    }
}
