//! Uniform B-spline bases on an extended knot vector.
//!
//! A spec with `grid` intervals on `[a, b]` and degree `k` owns the knots
//! `t_{-k}, ..., t_{grid+k}` (stored at array indices `0..=grid+2k`) and
//! exposes `grid + k` basis functions. Basis function `i` is the degree-`k`
//! Cox-de Boor function starting at array knot `i`.
//!
//! Conventions:
//! - inputs outside `[a, b]` are clamped onto the domain;
//! - the last core interval is closed, so `x = b` has a full basis row;
//! - derivatives at interior knots take the right limit.

use crate::error::{Error, Result};

/// Maximum supported degree for the stack buffers used in hot loops.
pub const MAX_DEGREE: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpec {
    a: f64,
    b: f64,
    grid: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl SplineSpec {
    pub fn new(a: f64, b: f64, grid: usize, degree: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || b <= a {
            return Err(Error::InvalidDomain { a, b });
        }
        if grid < 1 {
            return Err(Error::InvalidGrid { grid });
        }
        if degree > MAX_DEGREE {
            return Err(Error::InvalidConfig(format!(
                "spline degree {degree} exceeds supported maximum {MAX_DEGREE}"
            )));
        }
        let step = (b - a) / grid as f64;
        let n_knots = grid + 2 * degree + 1;
        let mut knots: Vec<f64> = (0..n_knots)
            .map(|j| a + (j as f64 - degree as f64) * step)
            .collect();
        knots[degree] = a;
        knots[degree + grid] = b;
        Ok(Self {
            a,
            b,
            grid,
            degree,
            knots,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot spacing `(b - a) / grid`.
    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.grid as f64
    }

    /// Number of basis functions, `grid + degree`.
    pub fn num_basis(&self) -> usize {
        self.grid + self.degree
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.a, self.b)
    }

    /// Knot-array index `s` of the core interval `[t_s, t_{s+1})` holding `x`.
    /// `x` must already be clamped.
    fn span(&self, x: f64) -> usize {
        let k = self.degree;
        let last = k + self.grid - 1;
        let guess = ((x - self.a) / self.step()).floor();
        let mut s = if guess <= 0.0 {
            k
        } else {
            (k + guess as usize).min(last)
        };
        while s > k && x < self.knots[s] {
            s -= 1;
        }
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Writes the `degree + 1` possibly-nonzero basis values at `x` into
    /// `out[..=degree]` and returns the index of the first one.
    ///
    /// `x` is clamped; callers must pass a finite value.
    pub fn basis_local(&self, x: f64, out: &mut [f64]) -> usize {
        let x = self.clamp(x);
        let s = self.span(x);
        self.triangle(x, s, self.degree, out);
        s - self.degree
    }

    /// Like [`basis_local`](Self::basis_local) but also writes the
    /// derivatives of the same basis functions with respect to `x` (before
    /// clamping is taken into account) into `grad[..=degree]`.
    pub fn basis_local_with_grad(&self, x: f64, vals: &mut [f64], grad: &mut [f64]) -> usize {
        let x = self.clamp(x);
        let s = self.span(x);
        let k = self.degree;
        if k == 0 {
            vals[0] = 1.0;
            grad[0] = 0.0;
            return s;
        }
        let mut lower = [0.0; MAX_DEGREE + 1];
        self.triangle(x, s, k - 1, &mut lower);
        self.triangle(x, s, k, vals);
        let start = s - k;
        for r in 0..=k {
            let i = start + r;
            let left = if r >= 1 {
                lower[r - 1] * k as f64 / (self.knots[i + k] - self.knots[i])
            } else {
                0.0
            };
            let right = if r < k {
                lower[r] * k as f64 / (self.knots[i + k + 1] - self.knots[i + 1])
            } else {
                0.0
            };
            grad[r] = left - right;
        }
        start
    }

    /// Triangular Cox-de Boor evaluation of the `p + 1` degree-`p` functions
    /// nonzero on span `s`.
    fn triangle(&self, x: f64, s: usize, p: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// All `grid + degree` basis values at `x`.
    pub fn basis_eval(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let mut local = [0.0; MAX_DEGREE + 1];
        let start = self.basis_local(x, &mut local);
        let mut full = vec![0.0; self.num_basis()];
        full[start..=start + self.degree].copy_from_slice(&local[..=self.degree]);
        Ok(full)
    }

    /// Derivatives of all basis functions at `x`.
    pub fn basis_grad_x(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let mut vals = [0.0; MAX_DEGREE + 1];
        let mut grad = [0.0; MAX_DEGREE + 1];
        let start = self.basis_local_with_grad(x, &mut vals, &mut grad);
        let mut full = vec![0.0; self.num_basis()];
        full[start..=start + self.degree].copy_from_slice(&grad[..=self.degree]);
        Ok(full)
    }

    /// `sum_i c_i B_i(x)`.
    pub fn eval(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        if coeffs.len() != self.num_basis() {
            return Err(Error::DimensionMismatch {
                expected: self.num_basis(),
                got: coeffs.len(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let mut local = [0.0; MAX_DEGREE + 1];
        let start = self.basis_local(x, &mut local);
        Ok(dot_local(coeffs, start, &local[..=self.degree]))
    }
}

/// Dot product of a full coefficient vector with a local basis window.
#[inline]
pub fn dot_local(coeffs: &[f64], start: usize, local: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (c, v) in coeffs[start..start + local.len()].iter().zip(local) {
        acc += c * v;
    }
    acc
}
