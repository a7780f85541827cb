//! Single-layer GRU cell.
//!
//! Gate layout follows the fused convention: the input and hidden weight
//! matrices stack the reset, update, and candidate blocks as [3H x I] and
//! [3H x H], with separate input and hidden biases so the reset gate
//! multiplies only the hidden half of the candidate:
//!
//! r = sigmoid(Wr x + br + Ur h + cr)
//! z = sigmoid(Wz x + bz + Uz h + cz)
//! n = tanh(Wn x + bn + r * (Un h + cn))
//! h' = (1 - z) * n + z * h

use crate::error::Result;
use crate::tensor::{Rng, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Gru {
    /// [3*hidden, input]
    pub w_ih: Tensor,
    /// [3*hidden, hidden]
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl Gru {
    pub fn init(rng: &mut Rng, input: usize, hidden: usize) -> Gru {
        let bound_ih = (6.0 / (input + hidden) as f64).sqrt();
        let bound_hh = (6.0 / (2 * hidden) as f64).sqrt();
        let fill = |rng: &mut Rng, shape: &[usize], bound: f64| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
            Tensor::from_vec(shape, data).expect("length matches shape")
        };
        Gru {
            w_ih: fill(rng, &[3 * hidden, input], bound_ih),
            w_hh: fill(rng, &[3 * hidden, hidden], bound_hh),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

/// One recurrence step: consumes input `x` and state `h`, returns `h'`.
pub fn gru_step(t: &mut Tape, g: &GruVars, x: Var, h: Var) -> Result<Var> {
    let hidden = t.shape_of(h)[0];
    let wx = t.matmul(g.w_ih, x)?;
    let gi = t.add(wx, g.b_ih)?;
    let uh = t.matmul(g.w_hh, h)?;
    let gh = t.add(uh, g.b_hh)?;

    let gi_r = t.slice(gi, 0, hidden)?;
    let gi_z = t.slice(gi, hidden, hidden)?;
    let gi_n = t.slice(gi, 2 * hidden, hidden)?;
    let gh_r = t.slice(gh, 0, hidden)?;
    let gh_z = t.slice(gh, hidden, hidden)?;
    let gh_n = t.slice(gh, 2 * hidden, hidden)?;

    let r_pre = t.add(gi_r, gh_r)?;
    let r = t.sigmoid(r_pre)?;
    let z_pre = t.add(gi_z, gh_z)?;
    let z = t.sigmoid(z_pre)?;
    let gated = t.mul(r, gh_n)?;
    let n_pre = t.add(gi_n, gated)?;
    let n = t.tanh(n_pre)?;

    // (1 - z) * n + z * h  ==  n + z * (h - n)
    let h_minus_n = t.sub(h, n)?;
    let carry = t.mul(z, h_minus_n)?;
    t.add(n, carry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(t: &mut Tape, g: &Gru) -> GruVars {
        GruVars {
            w_ih: t.leaf_tensor(&g.w_ih).unwrap(),
            w_hh: t.leaf_tensor(&g.w_hh).unwrap(),
            b_ih: t.leaf_tensor(&g.b_ih).unwrap(),
            b_hh: t.leaf_tensor(&g.b_hh).unwrap(),
        }
    }

    /// Plain-f64 recomputation of the cell, independent of the tape.
    fn reference_step(g: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hidden = g.hidden_size();
        let input = x.len();
        let mv = |w: &Tensor, v: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            (0..rows)
                .map(|i| (0..cols).map(|j| w.data()[i * cols + j] * v[j]).sum())
                .collect()
        };
        let gi: Vec<f64> = mv(&g.w_ih, x, 3 * hidden, input)
            .iter()
            .zip(g.b_ih.data())
            .map(|(a, b)| a + b)
            .collect();
        let gh: Vec<f64> = mv(&g.w_hh, h, 3 * hidden, hidden)
            .iter()
            .zip(g.b_hh.data())
            .map(|(a, b)| a + b)
            .collect();
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        (0..hidden)
            .map(|i| {
                let r = sigmoid(gi[i] + gh[i]);
                let z = sigmoid(gi[hidden + i] + gh[hidden + i]);
                let n = (gi[2 * hidden + i] + r * gh[2 * hidden + i]).tanh();
                (1.0 - z) * n + z * h[i]
            })
            .collect()
    }

    #[test]
    fn matches_independent_recomputation() {
        let mut rng = Rng::new(42);
        let gru = Gru::init(&mut rng, 5, 4);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

        let mut tape = Tape::new();
        let vars = bind(&mut tape, &gru);
        let xv = tape.leaf(&[5], &x).unwrap();
        let hv = tape.leaf(&[4], &h).unwrap();
        let out = gru_step(&mut tape, &vars, xv, hv).unwrap();

        let expect = reference_step(&gru, &x, &h);
        for (a, b) in tape.value(out).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let gru = Gru {
            w_ih: Tensor::zeros(&[12, 3]),
            w_hh: Tensor::zeros(&[12, 4]),
            b_ih: Tensor::zeros(&[12]),
            b_hh: Tensor::zeros(&[12]),
        };
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &gru);
        let x = tape.leaf(&[3], &[9.0, -3.0, 1.0]).unwrap();
        let h = tape.leaf(&[4], &[1.0, -2.0, 0.5, 4.0]).unwrap();
        let out = gru_step(&mut tape, &vars, x, h).unwrap();
        // r = z = 0.5, n = 0, so h' = 0.5 h regardless of input.
        assert_eq!(tape.value(out), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn gradients_flow_to_all_weights() {
        let mut rng = Rng::new(9);
        let gru = Gru::init(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &gru);
        let x = tape.leaf(&[3], &[0.3, -0.2, 0.9]).unwrap();
        let h = tape.leaf(&[4], &[0.1, 0.4, -0.5, 0.2]).unwrap();
        let out = gru_step(&mut tape, &vars, x, h).unwrap();
        let loss = tape.sum(out).unwrap();
        tape.backward(loss).unwrap();
        for v in [vars.w_ih, vars.w_hh, vars.b_ih, vars.b_hh, x, h] {
            assert!(tape.grad(v).iter().any(|&g| g != 0.0));
        }
    }
}
