//! Synthetic base tasks for the zoos.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `g(x) = sin(w . x)` on the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTask {
    pub w: [f64; 2],
}

pub const SINE_FREQ_RANGE: (f64, f64) = (0.5, 10.0);

impl SineTask {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.w[0] * x[0] + self.w[1] * x[1]).sin()
    }
}

/// Frequency vector uniform on `[0.5, 10]^2`.
pub fn gen_sine_task<R: Rng + ?Sized>(rng: &mut R) -> SineTask {
    let (lo, hi) = SINE_FREQ_RANGE;
    SineTask {
        w: [rng.random_range(lo..=hi), rng.random_range(lo..=hi)],
    }
}

/// `side x side` points spanning `[a, b]^2`, row-major.
pub fn coordinate_grid(side: usize, a: f64, b: f64) -> Vec<Vec<f64>> {
    let at = |i: usize| {
        if side == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (side - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            out.push(vec![at(i), at(j)]);
        }
    }
    out
}

/// Labeled 2D points split into train and test parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationData {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub n_classes: usize,
}

pub const BLOB_CENTER: f64 = 1.5;

fn blob_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        // Cycle through the four quadrants so clusters stay balanced.
        let (sx, sy) = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)][i % 4];
        let label = usize::from(sx != sy);
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        pts.push((vec![sx * BLOB_CENTER + nx, sy * BLOB_CENTER + ny], label));
    }
    pts.shuffle(rng);
    pts.into_iter().unzip()
}

/// Four unit-variance Gaussian clusters centred at `(+-1.5, +-1.5)`; the
/// class is 1 when the centre coordinates differ in sign (XOR layout).
pub fn blob_dataset<R: Rng + ?Sized>(n_train: usize, n_test: usize, rng: &mut R) -> ClassificationData {
    let (train_x, train_y) = blob_points(n_train, rng);
    let (test_x, test_y) = blob_points(n_test, rng);
    ClassificationData {
        train_x,
        train_y,
        test_x,
        test_y,
        n_classes: 2,
    }
}

/// Shuffles the labels of a random `noise` fraction of `labels` among
/// themselves.
pub fn shuffle_label_fraction<R: Rng + ?Sized>(labels: &[usize], noise: f64, rng: &mut R) -> Vec<usize> {
    let n = labels.len();
    let k = ((noise.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let picked = &idx[..k];
    let mut vals: Vec<usize> = picked.iter().map(|&i| labels[i]).collect();
    vals.shuffle(rng);
    let mut out = labels.to_vec();
    for (&i, v) in picked.iter().zip(vals) {
        out[i] = v;
    }
    out
}
