//! LSTM cell and stacked sequence encoder with backpropagation through time.
//!
//! Gate equations, per timestep `j`:
//!
//! ```text
//! i_j = σ(W_i x_j + U_i h_{j-1} + b_i)
//! o_j = σ(W_o x_j + U_o h_{j-1} + b_o)
//! f_j = σ(W_f x_j + U_f h_{j-1} + b_f)
//! c_j = f_j ⊙ c_{j-1} + i_j ⊙ tanh(W_c x_j + U_c h_{j-1} + b_c)
//! h_j = o_j ⊙ tanh(c_j)
//! ```
//!
//! Initial states are zero. Layer `l + 1` reads the (dropout-masked, in
//! training) hidden sequence of layer `l`.

use crate::error::{Error, Result};
use crate::layers::DropoutSpec;
use crate::numeric::activation::sigmoid_scalar;
use crate::numeric::kernels;
use crate::numeric::{Matrix, Rng, Vector};

/// Parameter names in canonical (checkpoint) order.
pub const TENSOR_NAMES: [&str; 12] = [
    "w_i", "u_i", "b_i", "w_o", "u_o", "b_o", "w_f", "u_f", "b_f", "w_c", "u_c", "b_c",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_f: Matrix,
    pub w_c: Matrix,
    pub u_i: Matrix,
    pub u_o: Matrix,
    pub u_f: Matrix,
    pub u_c: Matrix,
    pub b_i: Vector,
    pub b_o: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Matrix::zeros(hidden, input);
        let u = || Matrix::zeros(hidden, hidden);
        let b = || Vector::zeros(hidden);
        LstmCellParams {
            w_i: w(),
            w_o: w(),
            w_f: w(),
            w_c: w(),
            u_i: u(),
            u_o: u(),
            u_f: u(),
            u_c: u(),
            b_i: b(),
            b_o: b(),
            b_f: b(),
            b_c: b(),
        }
    }

    /// W and U entries ~ Uniform(−1/√H, 1/√H); biases zero except the forget
    /// gate bias, which starts at 1.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut p = LstmCellParams::zeros(input, hidden);
        for (t, values) in p.tensors_mut().into_iter().enumerate() {
            // Every third canonical tensor is a bias.
            if t % 3 != 2 {
                for v in values.iter_mut() {
                    *v = rng.uniform_range(-k, k);
                }
            }
        }
        p.b_f = Vector::filled(hidden, 1.0);
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_i.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_i.rows()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn gate(&self, k: usize) -> (&Matrix, &Matrix, &Vector) {
        match k {
            0 => (&self.w_i, &self.u_i, &self.b_i),
            1 => (&self.w_o, &self.u_o, &self.b_o),
            2 => (&self.w_f, &self.u_f, &self.b_f),
            _ => (&self.w_c, &self.u_c, &self.b_c),
        }
    }

    fn gate_mut(&mut self, k: usize) -> (&mut Matrix, &mut Matrix, &mut Vector) {
        match k {
            0 => (&mut self.w_i, &mut self.u_i, &mut self.b_i),
            1 => (&mut self.w_o, &mut self.u_o, &mut self.b_o),
            2 => (&mut self.w_f, &mut self.u_f, &mut self.b_f),
            _ => (&mut self.w_c, &mut self.u_c, &mut self.b_c),
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 12] {
        [
            self.w_i.as_slice(),
            self.u_i.as_slice(),
            self.b_i.as_slice(),
            self.w_o.as_slice(),
            self.u_o.as_slice(),
            self.b_o.as_slice(),
            self.w_f.as_slice(),
            self.u_f.as_slice(),
            self.b_f.as_slice(),
            self.w_c.as_slice(),
            self.u_c.as_slice(),
            self.b_c.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.w_i.as_mut_slice(),
            self.u_i.as_mut_slice(),
            self.b_i.as_mut_slice(),
            self.w_o.as_mut_slice(),
            self.u_o.as_mut_slice(),
            self.b_o.as_mut_slice(),
            self.w_f.as_mut_slice(),
            self.u_f.as_mut_slice(),
            self.b_f.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.u_c.as_mut_slice(),
            self.b_c.as_mut_slice(),
        ]
    }

    /// Shapes in [`TENSOR_NAMES`] order; biases are rank 1.
    pub fn tensor_shapes(&self) -> [Vec<usize>; 12] {
        let (h, m) = (self.hidden_size(), self.input_size());
        std::array::from_fn(|t| match t % 3 {
            0 => vec![h, m],
            1 => vec![h, h],
            _ => vec![h],
        })
    }

    fn check(&self) -> Result<()> {
        let (h, m) = (self.hidden_size(), self.input_size());
        for k in 0..4 {
            let (w, u, b) = self.gate(k);
            if w.shape() != (h, m) || u.shape() != (h, h) || b.len() != h {
                return Err(Error::shape("LstmCellParams", w.shape(), u.shape()));
            }
        }
        Ok(())
    }

    /// One timestep. Gate activations are written to `gates` as
    /// `[i | o | f | g]` (each `H` long) when provided.
    fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        z: &mut [f64],
        h_out: &mut [f64],
        c_out: &mut [f64],
    ) {
        let hs = self.hidden_size();
        let m = self.input_size();
        for k in 0..4 {
            let (w, u, b) = self.gate(k);
            let zk = &mut z[k * hs..(k + 1) * hs];
            zk.copy_from_slice(b.as_slice());
            kernels::gemv_acc(w.as_slice(), m, x, zk);
            kernels::gemv_acc(u.as_slice(), hs, h_prev, zk);
            if k < 3 {
                zk.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
            } else {
                zk.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        let (i, rest) = z.split_at(hs);
        let (o, rest) = rest.split_at(hs);
        let (f, g) = rest.split_at(hs);
        for u in 0..hs {
            let c = f[u] * c_prev[u] + i[u] * g[u];
            c_out[u] = c;
            h_out[u] = o[u] * c.tanh();
        }
    }

    /// Single LSTM step from `prev`.
    pub fn cell_step(&self, x: &Vector, prev: &LstmState) -> Result<LstmState> {
        self.check()?;
        let hs = self.hidden_size();
        if x.len() != self.input_size() {
            return Err(Error::shape("cell_step", self.w_i.shape(), (x.len(), 1)));
        }
        if prev.h.len() != hs || prev.c.len() != hs {
            return Err(Error::shape("cell_step", (hs, hs), (prev.h.len(), prev.c.len())));
        }
        let mut z = vec![0.0; 4 * hs];
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        self.step_into(x.as_slice(), prev.h.as_slice(), prev.c.as_slice(), &mut z, &mut h, &mut c);
        Ok(LstmState {
            h: Vector::from_vec(h).map_err(|_| Error::NonFinite("cell_step".into()))?,
            c: Vector::from_vec(c).map_err(|_| Error::NonFinite("cell_step".into()))?,
        })
    }
}

/// Per-layer activations saved for BPTT (all row-major, one row per step).
#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Everything [`LstmStack::sequence_backward`] needs from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct StackCache {
    steps: usize,
    layers: Vec<LayerCache>,
    /// Dropout scale factors applied to the output of every layer except
    /// the top one (`steps × H` each).
    masks: Vec<Vec<f64>>,
}

/// Stacked LSTM encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCellParams>,
}

impl LstmStack {
    pub fn new(layers: Vec<LstmCellParams>) -> Result<Self> {
        let stack = LstmStack { layers };
        stack.validate()?;
        Ok(stack)
    }

    pub fn init(input: usize, hidden: usize, depth: usize, rng: &mut Rng) -> Self {
        let layers = (0..depth)
            .map(|l| LstmCellParams::init(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        LstmStack { layers }
    }

    pub fn zeros(input: usize, hidden: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| LstmCellParams::zeros(if l == 0 { input } else { hidden }, hidden))
            .collect();
        LstmStack { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("LSTM stack needs at least one layer".into()));
        }
        let hs = self.hidden_size();
        for (l, p) in self.layers.iter().enumerate() {
            p.check()?;
            if p.hidden_size() != hs || (l > 0 && p.input_size() != hs) {
                return Err(Error::shape(
                    "LstmStack",
                    (hs, hs),
                    (p.hidden_size(), p.input_size()),
                ));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmCellParams::param_count).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::InvalidInput("empty input sequence".into()));
        }
        if x.cols() != self.input_size() {
            return Err(Error::shape(
                "sequence_forward",
                (x.rows(), self.input_size()),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Runs the stack from zero states. Returns the top layer's hidden
    /// sequence (`n × H`), its final hidden state, and the BPTT cache.
    pub fn sequence_forward(
        &self,
        x: &Matrix,
        dropout: &DropoutSpec,
        rng: &mut Rng,
    ) -> Result<(Matrix, Vector, StackCache)> {
        self.check_input(x)?;
        let n = x.rows();
        let hs = self.hidden_size();
        let mut cache = StackCache {
            steps: n,
            layers: Vec::with_capacity(self.depth()),
            masks: Vec::with_capacity(self.depth() - 1),
        };
        let mut input = x.as_slice().to_vec();
        let zeros = vec![0.0; hs];
        for (l, p) in self.layers.iter().enumerate() {
            let m = p.input_size();
            let mut lc = LayerCache {
                input,
                gates: vec![0.0; n * 4 * hs],
                c: vec![0.0; n * hs],
                h: vec![0.0; n * hs],
            };
            for j in 0..n {
                let (h_done, h_rest) = lc.h.split_at_mut(j * hs);
                let (c_done, c_rest) = lc.c.split_at_mut(j * hs);
                let (h_prev, c_prev) = if j == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&h_done[(j - 1) * hs..], &c_done[(j - 1) * hs..])
                };
                p.step_into(
                    &lc.input[j * m..(j + 1) * m],
                    h_prev,
                    c_prev,
                    &mut lc.gates[j * 4 * hs..(j + 1) * 4 * hs],
                    &mut h_rest[..hs],
                    &mut c_rest[..hs],
                );
            }
            input = if l + 1 < self.depth() {
                let mask = dropout.mask(n * hs, rng);
                let next = lc.h.iter().zip(&mask).map(|(h, s)| h * s).collect();
                cache.masks.push(mask);
                next
            } else {
                Vec::new()
            };
            cache.layers.push(lc);
        }
        let top = &cache.layers[self.depth() - 1].h;
        let h_seq = Matrix::from_vec(n, hs, top.clone())
            .map_err(|_| Error::NonFinite("sequence_forward".into()))?;
        let h_n = Vector::from_vec(top[(n - 1) * hs..].to_vec())?;
        Ok((h_seq, h_n, cache))
    }

    /// Inference-only pass continuing from `states` (one per layer), which
    /// are updated in place. Returns the top layer's hidden sequence.
    pub fn run_from(&self, x: &Matrix, states: &mut [LstmState]) -> Result<Matrix> {
        self.check_input(x)?;
        if states.len() != self.depth() {
            return Err(Error::shape("run_from", (self.depth(), 1), (states.len(), 1)));
        }
        let hs = self.hidden_size();
        let n = x.rows();
        let mut seq = x.as_slice().to_vec();
        let mut z = vec![0.0; 4 * hs];
        for (p, st) in self.layers.iter().zip(states.iter_mut()) {
            let m = p.input_size();
            let mut out = vec![0.0; n * hs];
            let mut h = st.h.as_slice().to_vec();
            let mut c = st.c.as_slice().to_vec();
            let mut c_next = vec![0.0; hs];
            for j in 0..n {
                let (hj, _) = out[j * hs..].split_at_mut(hs);
                p.step_into(&seq[j * m..(j + 1) * m], &h, &c, &mut z, hj, &mut c_next);
                h.copy_from_slice(hj);
                std::mem::swap(&mut c, &mut c_next);
            }
            *st = LstmState {
                h: Vector::from_vec(h)?,
                c: Vector::from_vec(c)?,
            };
            seq = out;
        }
        Matrix::from_vec(n, hs, seq).map_err(|_| Error::NonFinite("run_from".into()))
    }

    /// Final top-layer hidden state for an inference pass from zero states.
    pub(crate) fn final_hidden(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut states: Vec<_> = (0..self.depth())
            .map(|_| LstmState::zeros(self.hidden_size()))
            .collect();
        self.run_from(x, &mut states)?;
        Ok(states.pop().expect("depth >= 1").h.into_vec())
    }

    /// BPTT. `upstream_h_seq` is the loss gradient with respect to every
    /// top-layer hidden state and `upstream_h_n` an extra gradient with
    /// respect to the final one; both contributions are summed.
    pub fn sequence_backward(
        &self,
        cache: &StackCache,
        upstream_h_seq: &Matrix,
        upstream_h_n: &Vector,
    ) -> Result<(Vec<LstmCellParams>, Matrix)> {
        let hs = self.hidden_size();
        let n = cache.steps;
        if upstream_h_seq.shape() != (n, hs) || upstream_h_n.len() != hs {
            return Err(Error::shape(
                "sequence_backward",
                (n, hs),
                upstream_h_seq.shape(),
            ));
        }
        let mut upstream = upstream_h_seq.as_slice().to_vec();
        if n > 0 {
            for (u, g) in upstream[(n - 1) * hs..].iter_mut().zip(upstream_h_n.as_slice()) {
                *u += g;
            }
        }
        let mut grads: Vec<LstmCellParams> = self
            .layers
            .iter()
            .map(|p| LstmCellParams::zeros(p.input_size(), hs))
            .collect();
        let gx = self.backward_acc(cache, upstream, &mut grads)?;
        let gx = Matrix::from_vec(n, self.input_size(), gx)?;
        Ok((grads, gx))
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient (`n × m`, row-major).
    pub(crate) fn backward_acc(
        &self,
        cache: &StackCache,
        mut upstream: Vec<f64>,
        grads: &mut [LstmCellParams],
    ) -> Result<Vec<f64>> {
        let hs = self.hidden_size();
        let n = cache.steps;
        if n == 0 || cache.layers.len() != self.depth() || cache.masks.len() + 1 != self.depth() {
            return Err(Error::State(
                "sequence_backward called without a matching forward pass".into(),
            ));
        }
        if upstream.len() != n * hs || grads.len() != self.depth() {
            return Err(Error::shape("sequence_backward", (n, hs), (upstream.len(), grads.len())));
        }
        for l in (0..self.depth()).rev() {
            let p = &self.layers[l];
            let lc = &cache.layers[l];
            let m = p.input_size();
            if lc.h.len() != n * hs || lc.input.len() != n * m {
                return Err(Error::State("LSTM cache does not match the stack".into()));
            }
            let mut gx = vec![0.0; n * m];
            layer_backward(p, lc, n, &upstream, &mut grads[l], &mut gx);
            if l > 0 {
                for (g, s) in gx.iter_mut().zip(&cache.masks[l - 1]) {
                    *g *= s;
                }
            }
            upstream = gx;
        }
        Ok(upstream)
    }
}

fn layer_backward(
    p: &LstmCellParams,
    lc: &LayerCache,
    n: usize,
    upstream: &[f64],
    grads: &mut LstmCellParams,
    gx: &mut [f64],
) {
    let hs = p.hidden_size();
    let m = p.input_size();
    let zeros = vec![0.0; hs];
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut dz = vec![0.0; 4 * hs];
    for j in (0..n).rev() {
        let gates = &lc.gates[j * 4 * hs..(j + 1) * 4 * hs];
        let (i, rest) = gates.split_at(hs);
        let (o, rest) = rest.split_at(hs);
        let (f, g) = rest.split_at(hs);
        let c = &lc.c[j * hs..(j + 1) * hs];
        let (h_prev, c_prev) = if j == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&lc.h[(j - 1) * hs..j * hs], &lc.c[(j - 1) * hs..j * hs])
        };
        let x = &lc.input[j * m..(j + 1) * m];
        for u in 0..hs {
            let dh = upstream[j * hs + u] + dh_next[u];
            let tc = c[u].tanh();
            let d_o = dh * tc;
            let dc = dh * o[u] * (1.0 - tc * tc) + dc_next[u];
            let d_i = dc * g[u];
            let d_g = dc * i[u];
            let d_f = dc * c_prev[u];
            dc_next[u] = dc * f[u];
            dz[u] = d_i * i[u] * (1.0 - i[u]);
            dz[hs + u] = d_o * o[u] * (1.0 - o[u]);
            dz[2 * hs + u] = d_f * f[u] * (1.0 - f[u]);
            dz[3 * hs + u] = d_g * (1.0 - g[u] * g[u]);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let gx_j = &mut gx[j * m..(j + 1) * m];
        for k in 0..4 {
            let dzk = &dz[k * hs..(k + 1) * hs];
            let (gw, gu, gb) = grads.gate_mut(k);
            kernels::outer_acc(gw.as_mut_slice(), m, dzk, x);
            kernels::outer_acc(gu.as_mut_slice(), hs, dzk, h_prev);
            for (b, d) in gb.as_mut_slice().iter_mut().zip(dzk) {
                *b += d;
            }
            let (w, u, _) = p.gate(k);
            kernels::gemv_t_acc(w.as_slice(), m, dzk, gx_j);
            kernels::gemv_t_acc(u.as_slice(), hs, dzk, &mut dh_next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, Differentiable};
    use crate::layers::Mode;
    use crate::numeric::{sigmoid, tanh_act};

    fn rand_params(input: usize, hidden: usize, scale: f64, rng: &mut Rng) -> LstmCellParams {
        let mut p = LstmCellParams::zeros(input, hidden);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.uniform_range(-scale, scale);
            }
        }
        p
    }

    fn rand_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::random_uniform(r, c, 1.0, rng)
    }

    fn add(a: &Vector, b: &Vector) -> Vector {
        Vector::from_vec(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect()).unwrap()
    }

    fn mul(a: &Vector, b: &Vector) -> Vector {
        Vector::from_vec(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect()).unwrap()
    }

    /// Direct transcription of the gate equations through the public
    /// matrix/activation API (a separate code path from `step_into`).
    fn oracle_step(p: &LstmCellParams, x: &Vector, prev: &LstmState) -> LstmState {
        let pre = |w: &Matrix, u: &Matrix, b: &Vector| {
            add(&add(&w.matvec(x).unwrap(), &u.matvec(&prev.h).unwrap()), b)
        };
        let i = sigmoid(&pre(&p.w_i, &p.u_i, &p.b_i));
        let o = sigmoid(&pre(&p.w_o, &p.u_o, &p.b_o));
        let f = sigmoid(&pre(&p.w_f, &p.u_f, &p.b_f));
        let g = tanh_act(&pre(&p.w_c, &p.u_c, &p.b_c));
        let c = add(&mul(&f, &prev.c), &mul(&i, &g));
        let h = mul(&o, &tanh_act(&c));
        LstmState { h, c }
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmCellParams::zeros(2, 3);
        let s = p.cell_step(&Vector::filled(2, 0.7), &LstmState::zeros(3)).unwrap();
        assert_eq!(s.c.as_slice(), &[0.0; 3]);
        assert_eq!(s.h.as_slice(), &[0.0; 3]);
        let mut z = vec![0.0; 12];
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        p.step_into(&[0.7, 0.7], &[0.0; 3], &[0.0; 3], &mut z, &mut h, &mut c);
        assert!(z[..9].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_forget_gate_is_perfect_memory() {
        let mut p = LstmCellParams::zeros(2, 3);
        p.b_f = Vector::filled(3, 1000.0);
        let v = Vector::from_vec(vec![0.3, -1.2, 2.5]).unwrap();
        let mut st = LstmState {
            h: Vector::zeros(3),
            c: v.clone(),
        };
        for _ in 0..100 {
            st = p.cell_step(&Vector::filled(2, 1.0), &st).unwrap();
            assert_eq!(st.c, v);
        }
    }

    #[test]
    fn cell_step_matches_transcription_oracle() {
        let mut rng = Rng::new(31);
        let p = rand_params(2, 3, 1.0, &mut rng);
        let prev = LstmState {
            h: Vector::from_vec(vec![0.1, -0.4, 0.8]).unwrap(),
            c: Vector::from_vec(vec![-1.0, 0.5, 0.25]).unwrap(),
        };
        let x = Vector::from_vec(vec![0.9, -0.6]).unwrap();
        let got = p.cell_step(&x, &prev).unwrap();
        let want = oracle_step(&p, &x, &prev);
        for (a, b) in got.h.as_slice().iter().zip(want.h.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in got.c.as_slice().iter().zip(want.c.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let p = LstmCellParams::zeros(2, 3);
        assert!(p.cell_step(&Vector::zeros(3), &LstmState::zeros(3)).is_err());
        let stack = LstmStack::zeros(2, 3, 1);
        let err = stack
            .sequence_forward(&Matrix::zeros(0, 2), &DropoutSpec::eval(), &mut Rng::new(0))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn single_step_sequence_is_one_cell_step_per_layer() {
        let mut rng = Rng::new(4);
        let stack = LstmStack::new(vec![rand_params(2, 4, 0.5, &mut rng), rand_params(4, 4, 0.5, &mut rng)]).unwrap();
        let x = rand_matrix(1, 2, &mut rng);
        let (h_seq, h_n, _) = stack.sequence_forward(&x, &DropoutSpec::eval(), &mut rng).unwrap();
        let s1 = stack.layers[0]
            .cell_step(&Vector::from_vec(x.row(0).to_vec()).unwrap(), &LstmState::zeros(4))
            .unwrap();
        let s2 = stack.layers[1].cell_step(&s1.h, &LstmState::zeros(4)).unwrap();
        assert_eq!(h_n, s2.h);
        assert_eq!(h_seq.row(0), s2.h.as_slice());
    }

    #[test]
    fn zero_model_zero_input_gives_zero_sequence() {
        let stack = LstmStack::zeros(2, 4, 2);
        let (h_seq, _, _) = stack
            .sequence_forward(&Matrix::zeros(6, 2), &DropoutSpec::eval(), &mut Rng::new(0))
            .unwrap();
        assert!(h_seq.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacked_forward_matches_unrolled_oracle() {
        let mut rng = Rng::new(77);
        let stack = LstmStack::new(vec![rand_params(3, 4, 0.8, &mut rng), rand_params(4, 4, 0.8, &mut rng)]).unwrap();
        let x = rand_matrix(8, 3, &mut rng);
        let (h_seq, h_n, _) = stack.sequence_forward(&x, &DropoutSpec::eval(), &mut rng).unwrap();
        let mut inputs: Vec<Vector> = (0..8).map(|j| Vector::from_vec(x.row(j).to_vec()).unwrap()).collect();
        for p in &stack.layers {
            let mut st = LstmState::zeros(4);
            let mut outs = Vec::new();
            for xj in &inputs {
                st = oracle_step(p, xj, &st);
                outs.push(st.h.clone());
            }
            inputs = outs;
        }
        for j in 0..8 {
            for u in 0..4 {
                assert!((h_seq.get(j, u) - inputs[j][u]).abs() < 1e-12);
            }
        }
        assert_eq!(h_n.as_slice(), h_seq.row(7));
    }

    #[test]
    fn length_covariance() {
        let mut rng = Rng::new(5);
        let stack = LstmStack::init(2, 5, 2, &mut rng);
        let x = rand_matrix(13, 2, &mut rng);
        let mut whole: Vec<_> = (0..2).map(|_| LstmState::zeros(5)).collect();
        let full = stack.run_from(&x, &mut whole).unwrap();
        let head = Matrix::from_vec(8, 2, x.as_slice()[..16].to_vec()).unwrap();
        let tail = Matrix::from_vec(5, 2, x.as_slice()[16..].to_vec()).unwrap();
        let mut split: Vec<_> = (0..2).map(|_| LstmState::zeros(5)).collect();
        let a = stack.run_from(&head, &mut split).unwrap();
        let b = stack.run_from(&tail, &mut split).unwrap();
        assert_eq!(&full.as_slice()[..40], a.as_slice());
        assert_eq!(&full.as_slice()[40..], b.as_slice());
        assert_eq!(whole, split);
        // And the cached path agrees with the inference path.
        let (h_seq, _, _) = stack.sequence_forward(&x, &DropoutSpec::eval(), &mut rng).unwrap();
        assert_eq!(h_seq, full);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(6);
        let stack = LstmStack::init(2, 3, 2, &mut rng);
        let x = rand_matrix(5, 2, &mut rng);
        let (_, _, cache) = stack.sequence_forward(&x, &DropoutSpec::eval(), &mut rng).unwrap();
        let (grads, gx) = stack
            .sequence_backward(&cache, &Matrix::zeros(5, 3), &Vector::zeros(3))
            .unwrap();
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
        for g in &grads {
            assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let stack = LstmStack::zeros(2, 3, 2);
        let err = stack
            .sequence_backward(&StackCache::default(), &Matrix::zeros(0, 3), &Vector::zeros(3))
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    /// Single step, single layer, H = m = 1: the chain rule written out by
    /// hand for loss = h_1 (upstream 1).
    #[test]
    fn single_step_hand_chain_rule() {
        let mut p = LstmCellParams::zeros(1, 1);
        let (wi, wo, wf, wc) = (0.01, -0.02, 0.03, 0.015);
        p.w_i.as_mut_slice()[0] = wi;
        p.w_o.as_mut_slice()[0] = wo;
        p.w_f.as_mut_slice()[0] = wf;
        p.w_c.as_mut_slice()[0] = wc;
        p.b_i[0] = 0.02;
        p.b_o[0] = -0.01;
        p.b_c[0] = 0.005;
        let x = 0.7;
        let stack = LstmStack::new(vec![p.clone()]).unwrap();
        let xm = Matrix::from_vec(1, 1, vec![x]).unwrap();
        let (_, _, cache) = stack.sequence_forward(&xm, &DropoutSpec::eval(), &mut Rng::new(0)).unwrap();
        let (grads, gx) = stack
            .sequence_backward(&cache, &Matrix::from_vec(1, 1, vec![1.0]).unwrap(), &Vector::zeros(1))
            .unwrap();

        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(wi * x + 0.02);
        let o = s(wo * x - 0.01);
        let g = (wc * x + 0.005f64).tanh();
        let c = i * g; // c_0 = 0
        let tc = c.tanh();
        // h = o tanh(c)
        let dh_do = tc;
        let dh_dc = o * (1.0 - tc * tc);
        let dwo = dh_do * o * (1.0 - o) * x;
        let dwi = dh_dc * g * i * (1.0 - i) * x;
        let dwc = dh_dc * i * (1.0 - g * g) * x;
        let dx = dh_do * o * (1.0 - o) * wo + dh_dc * g * i * (1.0 - i) * wi + dh_dc * i * (1.0 - g * g) * wc;
        let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
        assert!(close(grads[0].w_o.as_slice()[0], dwo));
        assert!(close(grads[0].w_i.as_slice()[0], dwi));
        assert!(close(grads[0].w_c.as_slice()[0], dwc));
        // c_{-1} = 0 so the forget gate receives no gradient.
        assert_eq!(grads[0].w_f.as_slice()[0], 0.0);
        assert!(close(gx.get(0, 0), dx));
    }

    /// loss = Σ_j <a_j, h_j> + <b, h_n> with fixed random projections.
    struct StackProbe {
        stack: LstmStack,
        x: Matrix,
        a: Matrix,
        b: Vector,
    }

    impl StackProbe {
        fn index(&self, t: usize) -> (usize, usize) {
            (t / 12, t % 12)
        }
    }

    impl Differentiable for StackProbe {
        fn tensor_names(&self) -> Vec<String> {
            (0..self.stack.depth())
                .flat_map(|l| TENSOR_NAMES.iter().map(move |n| format!("layer{l}.{n}")))
                .collect()
        }
        fn tensor_mut(&mut self, t: usize) -> &mut [f64] {
            let (l, k) = self.index(t);
            self.stack.layers[l].tensors_mut().into_iter().nth(k).unwrap()
        }
        fn loss(&mut self) -> Result<f64> {
            let (h_seq, h_n, _) = self.stack.sequence_forward(&self.x, &DropoutSpec::eval(), &mut Rng::new(0))?;
            let seq: f64 = h_seq.as_slice().iter().zip(self.a.as_slice()).map(|(h, a)| h * a).sum();
            let last: f64 = h_n.as_slice().iter().zip(self.b.as_slice()).map(|(h, b)| h * b).sum();
            Ok(seq + last)
        }
        fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
            let (_, _, cache) = self.stack.sequence_forward(&self.x, &DropoutSpec::eval(), &mut Rng::new(0))?;
            let (grads, _) = self.stack.sequence_backward(&cache, &self.a, &self.b)?;
            Ok(grads
                .iter()
                .flat_map(|g| g.tensors().into_iter().map(|t| t.to_vec()).collect::<Vec<_>>())
                .collect())
        }
    }

    #[test]
    fn bptt_passes_gradient_check_across_seeds() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let mut probe = StackProbe {
                stack: LstmStack::new(vec![rand_params(2, 3, 0.8, &mut rng), rand_params(3, 3, 0.8, &mut rng)])
                    .unwrap(),
                x: rand_matrix(5, 2, &mut rng),
                a: rand_matrix(5, 3, &mut rng),
                b: Vector::from_vec((0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap(),
            };
            for r in grad_check(&mut probe, &mut rng, 1e-4).unwrap() {
                assert!(r.passed, "seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn dropout_between_layers_is_part_of_the_gradient() {
        let mut rng = Rng::new(12);
        let stack = LstmStack::new(vec![rand_params(2, 3, 0.8, &mut rng), rand_params(3, 3, 0.8, &mut rng)]).unwrap();
        let x = rand_matrix(4, 2, &mut rng);
        let spec = DropoutSpec::new(0.5, Mode::Train).unwrap();
        let (_, _, cache) = stack.sequence_forward(&x, &spec, &mut Rng::new(1)).unwrap();
        assert_eq!(cache.masks.len(), 1);
        assert!(cache.masks[0].iter().all(|&s| s == 0.0 || s == 2.0));
        // Same mask stream reproduces the same outputs.
        let (a, _, _) = stack.sequence_forward(&x, &spec, &mut Rng::new(1)).unwrap();
        let (b, _, _) = stack.sequence_forward(&x, &spec, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
    }
}
