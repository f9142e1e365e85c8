//! Single-layer LSTM with gate order `[input, forget, cell, output]`.

use super::linalg::{gemv_acc, gemv_t_acc, outer_acc, sigmoid};

#[derive(Clone, Copy)]
pub(crate) struct LstmWeights<'a> {
    pub w_input: &'a [f64],
    pub w_hidden: &'a [f64],
    pub bias: &'a [f64],
    pub hidden: usize,
    pub inputs: usize,
}

pub(crate) struct LstmGrads<'a> {
    pub w_input: &'a mut [f64],
    pub w_hidden: &'a mut [f64],
    pub bias: &'a mut [f64],
}

/// Activations of one unrolled run, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct LstmTrace {
    pub xs: Vec<Vec<f64>>,
    /// `hs[0]` is the zero initial state; `hs[t + 1]` follows input `t`.
    pub hs: Vec<Vec<f64>>,
    pub cs: Vec<Vec<f64>>,
    /// Post-activation gates, `4 * hidden` per step.
    pub gates: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn last_hidden(&self) -> &[f64] {
        self.hs.last().expect("trace has an initial state")
    }
}

pub(crate) fn forward(w: LstmWeights<'_>, xs: Vec<Vec<f64>>) -> LstmTrace {
    let d = w.hidden;
    let mut trace = LstmTrace { hs: vec![vec![0.0; d]], cs: vec![vec![0.0; d]], ..Default::default() };
    for x in &xs {
        let h_prev = trace.hs.last().unwrap();
        let c_prev = trace.cs.last().unwrap();
        let mut z = w.bias.to_vec();
        gemv_acc(&mut z, w.w_input, w.inputs, x);
        gemv_acc(&mut z, w.w_hidden, d, h_prev);
        let mut gates = z;
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * d..3 * d).contains(&k) { g.tanh() } else { sigmoid(*g) };
        }
        let mut c = vec![0.0; d];
        let mut h = vec![0.0; d];
        for j in 0..d {
            let (i, f, g, o) = (gates[j], gates[d + j], gates[2 * d + j], gates[3 * d + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        trace.gates.push(gates);
        trace.cs.push(c);
        trace.hs.push(h);
    }
    trace.xs = xs;
    trace
}

/// Backpropagates `dh[t]` (loss gradient w.r.t. the hidden output after input
/// `t`) through the run. Accumulates weight gradients and returns the
/// gradient w.r.t. every input.
pub(crate) fn backward(w: LstmWeights<'_>, trace: &LstmTrace, dh: &[Vec<f64>], g: &mut LstmGrads<'_>) -> Vec<Vec<f64>> {
    let d = w.hidden;
    let steps = trace.xs.len();
    let mut dx_all = vec![vec![0.0; w.inputs]; steps];
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    let mut dz = vec![0.0; 4 * d];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let c = &trace.cs[t + 1];
        let c_prev = &trace.cs[t];
        for j in 0..d {
            let (i, f, gg, o) = (gates[j], gates[d + j], gates[2 * d + j], gates[3 * d + j]);
            let dh_j = dh[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dc_next[j] + dh_j * o * (1.0 - tc * tc);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[d + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * d + j] = dc * i * (1.0 - gg * gg);
            dz[3 * d + j] = dh_j * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        outer_acc(g.w_input, &dz, &trace.xs[t]);
        outer_acc(g.w_hidden, &dz, &trace.hs[t]);
        for (b, z) in g.bias.iter_mut().zip(&dz) {
            *b += z;
        }
        gemv_t_acc(&mut dx_all[t], w.w_input, w.inputs, &dz);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(&mut dh_next, w.w_hidden, d, &dz);
    }
    dx_all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let (wi, wh, b) = (vec![0.0; 8 * 3], vec![0.0; 8 * 2], vec![0.0; 8]);
        let w = LstmWeights { w_input: &wi, w_hidden: &wh, bias: &b, hidden: 2, inputs: 3 };
        let tr = forward(w, vec![vec![1.0, -2.0, 5.0]; 6]);
        assert!(tr.last_hidden().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn single_step_by_hand() {
        // hidden = 1, inputs = 1, all weights 0.5, bias 0, x = 1, zero state:
        // z = 0.5 for every gate.
        let (wi, wh, b) = (vec![0.5; 4], vec![0.5; 4], vec![0.0; 4]);
        let w = LstmWeights { w_input: &wi, w_hidden: &wh, bias: &b, hidden: 1, inputs: 1 };
        let tr = forward(w, vec![vec![1.0]]);
        let s = sigmoid(0.5);
        let c = s * 0.5f64.tanh();
        assert!((tr.cs[1][0] - c).abs() < 1e-15);
        assert!((tr.hs[1][0] - s * c.tanh()).abs() < 1e-15);
    }
}
