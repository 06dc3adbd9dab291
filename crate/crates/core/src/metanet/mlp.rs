use rand::Rng;

use crate::engine::{Mat, ParamId, ParamSet, Tape, Var};

/// `Linear -> silu -> dropout` repeated, then a final `Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers weights in `ps`, uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut u = |r, c| {
                    Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect())
                };
                let wt = u(w[0], w[1]);
                let b = u(1, w[1]);
                (ps.add(wt), ps.add(b))
            })
            .collect();
        Self { layers }
    }

    /// Sizes `[input, hidden x n_hidden, output]`.
    pub fn sizes(input: usize, hidden: usize, n_hidden: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(hidden, n_hidden));
        s.push(output);
        s
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        x: Var,
        dropout: f64,
        rng: &mut R,
    ) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(ps, w);
            let bv = tape.param(ps, b);
            h = tape.linear(h, wv, bv);
            if i < last {
                h = tape.silu(h);
                h = tape.dropout(h, dropout, rng);
            }
        }
        h
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
