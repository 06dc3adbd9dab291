//! Kolmogorov-Arnold networks with B-spline edge functions.
//!
//! Every edge carries `psi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)`.
//! A layer of shape `d_out x d_in` sums its edge outputs per output unit and
//! a network composes layers. Edge parameters are stored flat per layer in
//! row-major edge order (`p` outer, `q` inner), each edge as
//! `[w_b, w_s, c_0, ..., c_{G+k-1}]`; this is also the checkpoint order.

mod checkpoint;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    classification_accuracy, dataset_loss, train_kan, Dataset, LossKind, Targets, TrainConfig,
    TrainReport,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::spline::{dot_local, SplineSpec, MAX_DEGREE};

/// `x / (1 + e^{-x})`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// One edge function with its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFn {
    pub w_b: f64,
    pub w_s: f64,
    pub coeffs: Vec<f64>,
}

impl EdgeFn {
    pub fn zeros(spec: &SplineSpec) -> Self {
        Self {
            w_b: 0.0,
            w_s: 0.0,
            coeffs: vec![0.0; spec.num_basis()],
        }
    }

    pub fn from_slice(params: &[f64]) -> Self {
        Self {
            w_b: params[0],
            w_s: params[1],
            coeffs: params[2..].to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.coeffs.len());
        v.push(self.w_b);
        v.push(self.w_s);
        v.extend_from_slice(&self.coeffs);
        v
    }

    /// Evaluates the edge function. Non-finite inputs propagate as NaN.
    pub fn eval(&self, spec: &SplineSpec, x: f64) -> f64 {
        debug_assert_eq!(self.coeffs.len(), spec.num_basis());
        let mut local = [0.0; MAX_DEGREE + 1];
        let start = spec.basis_local(x, &mut local);
        self.w_b * silu(x) + self.w_s * dot_local(&self.coeffs, start, &local[..=spec.degree()])
    }
}

#[inline]
fn edge_value(e: &[f64], silu_x: f64, start: usize, local: &[f64]) -> f64 {
    e[0] * silu_x + e[1] * dot_local(&e[2..], start, local)
}

/// Per-input quantities shared by every edge leaving that input.
struct InputCache {
    silu: Vec<f64>,
    start: Vec<usize>,
    /// `d_in x (k + 1)` local basis values.
    basis: Vec<f64>,
    width: usize,
}

impl InputCache {
    fn new(spec: &SplineSpec, x: &[f64]) -> Self {
        let width = spec.degree() + 1;
        let mut basis = vec![0.0; x.len() * width];
        let mut start = Vec::with_capacity(x.len());
        for (q, &xq) in x.iter().enumerate() {
            start.push(spec.basis_local(xq, &mut basis[q * width..(q + 1) * width]));
        }
        Self {
            silu: x.iter().map(|&v| silu(v)).collect(),
            start,
            basis,
            width,
        }
    }

    #[inline]
    fn local(&self, q: usize) -> &[f64] {
        &self.basis[q * self.width..(q + 1) * self.width]
    }
}

/// Input cache extended with derivatives for backpropagation.
struct GradCache {
    inner: InputCache,
    dsilu: Vec<f64>,
    dbasis: Vec<f64>,
    /// Derivative of the clamp onto `[a, b]` (right limit).
    inside: Vec<f64>,
}

impl GradCache {
    fn new(spec: &SplineSpec, x: &[f64]) -> Self {
        let width = spec.degree() + 1;
        let mut basis = vec![0.0; x.len() * width];
        let mut dbasis = vec![0.0; x.len() * width];
        let mut start = Vec::with_capacity(x.len());
        for (q, &xq) in x.iter().enumerate() {
            let r = q * width..(q + 1) * width;
            let (vals, grads) = (&mut basis[r.clone()], &mut dbasis[r]);
            start.push(spec.basis_local_with_grad(xq, vals, grads));
        }
        Self {
            inner: InputCache {
                silu: x.iter().map(|&v| silu(v)).collect(),
                start,
                basis,
                width,
            },
            dsilu: x.iter().map(|&v| silu_grad(v)).collect(),
            dbasis,
            inside: x
                .iter()
                .map(|&v| if v >= spec.a() && v < spec.b() { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// A `d_out x d_in` matrix of edge functions over a shared spline spec.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    d_in: usize,
    d_out: usize,
    stride: usize,
    params: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(d_in: usize, d_out: usize, spec: &SplineSpec) -> Self {
        let stride = 2 + spec.num_basis();
        Self {
            d_in,
            d_out,
            stride,
            params: vec![0.0; d_in * d_out * stride],
        }
    }

    pub fn from_params(d_in: usize, d_out: usize, stride: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != d_in * d_out * stride {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out * stride,
                got: params.len(),
            });
        }
        Ok(Self {
            d_in,
            d_out,
            stride,
            params,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Parameters per edge, `2 + G + k`.
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter slice of edge `(p, q)`: output unit `p`, input unit `q`.
    #[inline]
    pub fn edge(&self, p: usize, q: usize) -> &[f64] {
        let o = (p * self.d_in + q) * self.stride;
        &self.params[o..o + self.stride]
    }

    #[inline]
    pub fn edge_mut(&mut self, p: usize, q: usize) -> &mut [f64] {
        let o = (p * self.d_in + q) * self.stride;
        &mut self.params[o..o + self.stride]
    }

    pub fn edge_fn(&self, p: usize, q: usize) -> EdgeFn {
        EdgeFn::from_slice(self.edge(p, q))
    }

    pub fn set_edge_fn(&mut self, p: usize, q: usize, f: &EdgeFn) {
        self.edge_mut(p, q).copy_from_slice(&f.to_vec());
    }

    /// `out_p = sum_q psi_{p,q}(x_q)`, summed in ascending `q`.
    pub fn forward(&self, spec: &SplineSpec, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let cache = InputCache::new(spec, x);
        Ok(self.forward_cached(&cache))
    }

    fn forward_cached(&self, cache: &InputCache) -> Vec<f64> {
        (0..self.d_out)
            .map(|p| {
                let mut acc = 0.0;
                for q in 0..self.d_in {
                    acc += edge_value(self.edge(p, q), cache.silu[q], cache.start[q], cache.local(q));
                }
                acc
            })
            .collect()
    }
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `x^0, ..., x^L`.
    pub activations: Vec<Vec<f64>>,
    /// Per layer, the `d_out x d_in` row-major edge outputs `psi_{p,q}(x_q)`.
    pub edges: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

/// Gradient of a scalar objective with respect to every network parameter
/// (same layout as the layers) and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct KanGrad {
    pub layers: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl KanGrad {
    pub fn zeros_like(net: &KanNet) -> Self {
        Self {
            layers: net.layers.iter().map(|l| vec![0.0; l.params.len()]).collect(),
            input: vec![0.0; net.dims[0]],
        }
    }
}

/// Initialization of a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub w_b: f64,
    pub w_s: f64,
    pub coeff_std: f64,
    /// When set, every edge's parameters are scaled by `10^u` with `u`
    /// uniform on the given range, so some edges start nearly silent.
    pub edge_scale_log10: Option<(f64, f64)>,
    /// Draw `w_b` per edge as `w_b * U(-1, 1) / sqrt(d_in)` instead of the constant.
    pub random_base: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            w_b: 1.0,
            w_s: 1.0,
            coeff_std: 0.1,
            edge_scale_log10: None,
            random_base: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanNet {
    spec: SplineSpec,
    dims: Vec<usize>,
    layers: Vec<KanLayer>,
}

impl KanNet {
    /// All-zero network of the given shape.
    pub fn zeros(dims: &[usize], spec: SplineSpec) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| KanLayer::zeros(w[0], w[1], &spec))
            .collect();
        Ok(Self {
            spec,
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(spec: SplineSpec, layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        let stride = 2 + spec.num_basis();
        let mut dims = vec![layers[0].d_in];
        for l in &layers {
            if l.d_in != *dims.last().unwrap() {
                return Err(Error::ShapeMismatch(format!(
                    "layer input {} does not chain onto {}",
                    l.d_in,
                    dims.last().unwrap()
                )));
            }
            if l.stride != stride {
                return Err(Error::SpecMismatch);
            }
            dims.push(l.d_out);
        }
        validate_dims(&dims)?;
        Ok(Self { spec, dims, layers })
    }

    /// Random network: `w_s` constant, coefficients Gaussian, `w_b` per [`InitConfig`].
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        spec: SplineSpec,
        cfg: &InitConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, spec)?;
        let normal = Normal::new(0.0, cfg.coeff_std)
            .map_err(|e| Error::InvalidConfig(format!("coefficient std: {e}")))?;
        for layer in &mut net.layers {
            let fan = (layer.d_in as f64).sqrt();
            for e in layer.params.chunks_mut(layer.stride) {
                e[0] = if cfg.random_base {
                    cfg.w_b * rng.random_range(-1.0..=1.0) / fan
                } else {
                    cfg.w_b
                };
                e[1] = cfg.w_s;
                for c in &mut e[2..] {
                    *c = normal.sample(rng);
                }
                if let Some((lo, hi)) = cfg.edge_scale_log10 {
                    let scale = 10f64.powf(rng.random_range(lo..=hi));
                    e.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_edges(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn params_per_edge(&self) -> usize {
        2 + self.spec.num_basis()
    }

    pub fn num_params(&self) -> usize {
        self.num_edges() * self.params_per_edge()
    }

    /// All parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.params);
        }
        v
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut out = self.clone();
        let mut off = 0;
        for l in &mut out.layers {
            let n = l.params.len();
            l.params.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.dims[0],
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            let cache = InputCache::new(&self.spec, &h);
            h = layer.forward_cached(&cache);
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut activations = vec![x.to_vec()];
        let mut edges = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = activations.last().unwrap();
            let cache = InputCache::new(&self.spec, h);
            let mut vals = Vec::with_capacity(layer.d_in * layer.d_out);
            let mut out = Vec::with_capacity(layer.d_out);
            for p in 0..layer.d_out {
                let mut acc = 0.0;
                for q in 0..layer.d_in {
                    let v = edge_value(layer.edge(p, q), cache.silu[q], cache.start[q], cache.local(q));
                    vals.push(v);
                    acc += v;
                }
                out.push(acc);
            }
            edges.push(vals);
            activations.push(out);
        }
        Ok(ForwardTrace { activations, edges })
    }

    /// Gradient of `<upstream, f(x)>` with respect to all parameters and `x`.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<KanGrad> {
        let mut g = KanGrad::zeros_like(self);
        self.accumulate_grad(x, upstream, &mut g)?;
        Ok(g)
    }

    /// Adds the gradient of `<upstream, f(x)>` into `acc` and returns `f(x)`.
    /// `acc.input` is overwritten with the input gradient.
    pub fn accumulate_grad(&self, x: &[f64], upstream: &[f64], acc: &mut KanGrad) -> Result<Vec<f64>> {
        let out = self.accumulate_grad_with(x, |_| upstream.to_vec(), acc)?;
        Ok(out)
    }

    /// Backpropagation where the upstream gradient is computed from the
    /// forward output (used by the trainers to avoid a second forward).
    pub(crate) fn accumulate_grad_with<F>(&self, x: &[f64], upstream: F, acc: &mut KanGrad) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let cache = GradCache::new(&self.spec, &h);
            h = layer.forward_cached(&cache.inner);
            caches.push(cache);
        }
        let mut g = upstream(&h);
        if g.len() != *self.dims.last().unwrap() {
            return Err(Error::DimensionMismatch {
                expected: *self.dims.last().unwrap(),
                got: g.len(),
            });
        }
        let w = self.spec.degree() + 1;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[li];
            let grads = &mut acc.layers[li];
            let mut dx = vec![0.0; layer.d_in];
            for (p, &gp) in g.iter().enumerate() {
                for q in 0..layer.d_in {
                    let e = layer.edge(p, q);
                    let start = cache.inner.start[q];
                    let local = cache.inner.local(q);
                    let dlocal = &cache.dbasis[q * w..(q + 1) * w];
                    let coeffs = &e[2..];
                    let spl = dot_local(coeffs, start, local);
                    let o = (p * layer.d_in + q) * layer.stride;
                    let ge = &mut grads[o..o + layer.stride];
                    ge[0] += gp * cache.inner.silu[q];
                    ge[1] += gp * spl;
                    let gs = gp * e[1];
                    for (r, b) in local.iter().enumerate() {
                        ge[2 + start + r] += gs * b;
                    }
                    let dspl = dot_local(coeffs, start, dlocal) * cache.inside[q];
                    dx[q] += gp * (e[0] * cache.dsilu[q] + e[1] * dspl);
                }
            }
            g = dx;
        }
        acc.input = g;
        Ok(h)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "dims need an input and an output width".into(),
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig("layer widths must be positive".into()));
    }
    Ok(())
}
