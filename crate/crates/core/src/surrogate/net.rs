//! Scalar feed-forward network with `σ(z) = max(z,0)²` hidden activations.
//!
//! Batches are evaluated together with the forward-mode tangents
//! `∂/∂u_j` of every layer. Rows are stacked as `S = 1 + d` blocks of the
//! batch size: block 0 carries the activations, block `j` the tangent along
//! input `j`. One matrix product per layer then advances all streams, and
//! the same stacked layout makes the reverse pass a pair of products.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn sigma(z: f64) -> f64 {
    let r = z.max(0.0);
    r * r
}

#[inline]
fn dsigma(z: f64) -> f64 {
    2.0 * z.max(0.0)
}

/// `c = A·B + beta·c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + n - 1 < c.len());
    if n == 1 {
        // matrix-vector shapes: the packed kernel is slower than direct loops
        for i in 0..m {
            let mut acc = [0.0; 4];
            let mut p = 0;
            while p + 4 <= k {
                for (q, a_q) in acc.iter_mut().enumerate() {
                    *a_q += a[i * rsa + (p + q) * csa] * b[(p + q) * rsb];
                }
                p += 4;
            }
            for p in p..k {
                acc[0] += a[i * rsa + p * csa] * b[p * rsb];
            }
            let dot = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            let ci = &mut c[i * rsc];
            *ci = if beta == 0.0 { dot } else { beta * *ci + dot };
        }
        return;
    }
    if m == 1 || k == 1 {
        for i in 0..m {
            let row = &mut c[i * rsc..i * rsc + n];
            if beta == 0.0 {
                row.fill(0.0);
            } else if beta != 1.0 {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                for (j, cv) in row.iter_mut().enumerate() {
                    *cv += aip * b[p * rsb + j * csb];
                }
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Affine maps between the physical box and the network's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub u_min: f64,
    pub u_max: f64,
    /// The network output is multiplied by this factor.
    pub output_scale: f64,
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling { u_min: -1.0, u_max: 1.0, output_scale: 1.0 }
    }

    /// `dx/du` of the input normalization.
    pub fn input_factor(&self) -> f64 {
        2.0 / (self.u_max - self.u_min)
    }

    pub fn normalize(&self, u: f64) -> f64 {
        (2.0 * u - (self.u_min + self.u_max)) / (self.u_max - self.u_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    input_dim: usize,
    hidden: Vec<usize>,
    component: usize,
    scaling: Scaling,
    /// Per layer: `W` row-major (out × in), then `b`.
    params: Vec<f64>,
}

/// Intermediate values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    streams: usize,
    /// `acts[0]` is the stacked input, `acts[k]` the output of hidden layer `k`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers (block 0: `z`, block `j`: tangent before `σ'`).
    pre: Vec<Vec<f64>>,
    /// Stacked output `(y, g_1, …, g_d)` in network units.
    out: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network value at sample `s`, physical units.
    pub fn value(&self, net: &SurrogateNet, s: usize) -> f64 {
        net.scaling.output_scale * self.out[s]
    }

    /// `∂/∂u_j` at sample `s`, physical units.
    pub fn gradient(&self, net: &SurrogateNet, s: usize, j: usize) -> f64 {
        debug_assert!(self.streams > 1);
        net.scaling.output_scale * net.scaling.input_factor() * self.out[(j + 1) * self.batch + s]
    }
}

impl SurrogateNet {
    /// Uniform `±1/√fan_in` initialization of all weights and biases.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        component: usize,
        scaling: Scaling,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::shell(input_dim, hidden, component, scaling)?;
        let mut params = Vec::with_capacity(net.n_params());
        for (nin, nout) in net.layer_shapes() {
            let bound = 1.0 / (nin as f64).sqrt();
            for _ in 0..(nin + 1) * nout {
                params.push(rng.random_range(-bound..bound));
            }
        }
        net.params = params;
        Ok(net)
    }

    fn shell(input_dim: usize, hidden: &[usize], component: usize, scaling: Scaling) -> Result<Self> {
        if input_dim == 0 || hidden.iter().any(|&w| w == 0) || component >= input_dim {
            return Err(Error::InvalidInput(format!(
                "invalid architecture: input {input_dim}, hidden {hidden:?}, component {component}"
            )));
        }
        if !(scaling.u_max > scaling.u_min) || !(scaling.output_scale > 0.0) || !scaling.output_scale.is_finite() {
            return Err(Error::InvalidInput(format!("invalid scaling {scaling:?}")));
        }
        Ok(SurrogateNet { input_dim, hidden: hidden.to_vec(), component, scaling, params: Vec::new() })
    }

    /// Builds a network from explicit parameters (layout as [`Self::params`]).
    pub fn from_params(
        input_dim: usize,
        hidden: &[usize],
        component: usize,
        scaling: Scaling,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::shell(input_dim, hidden, component, scaling)?;
        if params.len() != net.n_params() {
            return Err(Error::InvalidInput(format!("expected {} parameters, got {}", net.n_params(), params.len())));
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().map(|(i, o)| (i + 1) * o).sum()
    }

    /// `(fan_in, fan_out)` of every layer including the output layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let dims: Vec<usize> =
            std::iter::once(self.input_dim).chain(self.hidden.iter().copied()).chain(std::iter::once(1)).collect();
        (0..dims.len() - 1).map(move |k| (dims[k], dims[k + 1]))
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for (i, o) in self.layer_shapes() {
            off.push(off.last().unwrap() + (i + 1) * o);
        }
        off
    }

    /// Value at `u` (physical units).
    pub fn forward(&self, u: &[f64]) -> Result<f64> {
        let tape = self.forward_batch(&[u], false)?;
        Ok(tape.value(self, 0))
    }

    /// Value and input gradient at `u` (physical units).
    pub fn forward_with_input_jacobian(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward_batch(&[u], true)?;
        let grad = (0..self.input_dim).map(|j| tape.gradient(self, 0, j)).collect();
        Ok((tape.value(self, 0), grad))
    }

    /// `∇_u (∇y(u) · w)`, the Hessian of the output applied to `w` (physical units).
    pub fn input_hessian_vector(&self, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim;
        if u.len() != d || w.len() != d {
            return Err(Error::InvalidInput(format!("expected inputs of length {d}")));
        }
        let factor = self.scaling.input_factor();
        let offsets = self.offsets();
        let shapes: Vec<_> = self.layer_shapes().collect();
        let layer = |l: usize| {
            let (nin, nout) = shapes[l];
            let w = &self.params[offsets[l]..offsets[l] + nin * nout];
            let b = &self.params[offsets[l] + nin * nout..offsets[l + 1]];
            (nin, nout, w, b)
        };
        let mut h: Vec<f64> = u.iter().map(|&v| self.scaling.normalize(v)).collect();
        let mut ht: Vec<f64> = w.iter().map(|&v| factor * v).collect();
        // (z, ż) of every hidden layer
        let mut tape = Vec::with_capacity(shapes.len() - 1);
        for l in 0..shapes.len() - 1 {
            let (nin, nout, wl, b) = layer(l);
            let mut z = b.to_vec();
            let mut zt = vec![0.0; nout];
            for o in 0..nout {
                for i in 0..nin {
                    z[o] += wl[o * nin + i] * h[i];
                    zt[o] += wl[o * nin + i] * ht[i];
                }
            }
            h = z.iter().map(|&v| sigma(v)).collect();
            ht = z.iter().zip(&zt).map(|(&v, &t)| dsigma(v) * t).collect();
            tape.push((z, zt));
        }
        let (_, nout_last, w_last, _) = layer(shapes.len() - 1);
        debug_assert_eq!(nout_last, 1);
        // adjoints of h and ḣ for D = output_scale · W_L ḣ
        let mut hb = vec![0.0; w_last.len()];
        let mut htb: Vec<f64> = w_last.iter().map(|&v| self.scaling.output_scale * v).collect();
        for l in (0..tape.len()).rev() {
            let (z, zt) = &tape[l];
            let (nin, nout, wl, _) = layer(l);
            let zb: Vec<f64> = (0..nout)
                .map(|o| {
                    let curv = if z[o] > 0.0 { 2.0 * zt[o] * htb[o] } else { 0.0 };
                    dsigma(z[o]) * hb[o] + curv
                })
                .collect();
            let ztb: Vec<f64> = (0..nout).map(|o| dsigma(z[o]) * htb[o]).collect();
            hb = vec![0.0; nin];
            htb = vec![0.0; nin];
            for o in 0..nout {
                for i in 0..nin {
                    hb[i] += wl[o * nin + i] * zb[o];
                    htb[i] += wl[o * nin + i] * ztb[o];
                }
            }
        }
        Ok(hb.into_iter().map(|v| factor * v).collect())
    }

    /// Evaluates a batch; with `tangents` the input Jacobian is propagated too.
    pub fn forward_batch<U: AsRef<[f64]>>(&self, inputs: &[U], tangents: bool) -> Result<Tape> {
        let d = self.input_dim;
        let batch = inputs.len();
        let streams = if tangents { 1 + d } else { 1 };
        let rows = streams * batch;
        let mut a0 = vec![0.0; rows * d];
        for (s, u) in inputs.iter().enumerate() {
            let u = u.as_ref();
            if u.len() != d {
                return Err(Error::InvalidInput(format!("expected input of length {d}, got {}", u.len())));
            }
            if !u.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network input"));
            }
            for (j, &v) in u.iter().enumerate() {
                a0[s * d + j] = self.scaling.normalize(v);
            }
        }
        if tangents {
            for j in 0..d {
                for s in 0..batch {
                    a0[((j + 1) * batch + s) * d + j] = 1.0;
                }
            }
        }
        let offsets = self.offsets();
        let shapes: Vec<_> = self.layer_shapes().collect();
        let n_layers = shapes.len();
        let mut acts = vec![a0];
        let mut pre = Vec::with_capacity(n_layers - 1);
        for (l, &(nin, nout)) in shapes.iter().enumerate() {
            let w = &self.params[offsets[l]..offsets[l] + nin * nout];
            let b = &self.params[offsets[l] + nin * nout..offsets[l + 1]];
            let mut q = vec![0.0; rows * nout];
            gemm(rows, nin, nout, acts.last().unwrap(), (nin, 1), w, (1, nin), 0.0, &mut q, nout);
            for s in 0..batch {
                for (qv, bv) in q[s * nout..(s + 1) * nout].iter_mut().zip(b) {
                    *qv += bv;
                }
            }
            if l + 1 == n_layers {
                return Ok(Tape { batch, streams, acts, pre, out: q });
            }
            let mut a = vec![0.0; rows * nout];
            let (z, tangents) = q.split_at(batch * nout);
            for (av, &zv) in a.iter_mut().zip(z) {
                *av = sigma(zv);
            }
            for (blk, t) in tangents.chunks(batch * nout).enumerate() {
                let dst = &mut a[(blk + 1) * batch * nout..(blk + 2) * batch * nout];
                for ((av, &tv), &zv) in dst.iter_mut().zip(t).zip(z) {
                    *av = dsigma(zv) * tv;
                }
            }
            acts.push(a);
            pre.push(q);
        }
        unreachable!("a network has an output layer")
    }

    /// Reverse pass. `out_bar` is the adjoint of the stacked output in network
    /// units (same layout as the tape output); the parameter gradient is
    /// accumulated into `grad`.
    pub fn backward(&self, tape: &Tape, out_bar: &[f64], grad: &mut [f64]) {
        let batch = tape.batch;
        let rows = tape.streams * batch;
        assert_eq!(out_bar.len(), rows);
        assert_eq!(grad.len(), self.params.len());
        let offsets = self.offsets();
        let shapes: Vec<_> = self.layer_shapes().collect();
        let mut q_bar = out_bar.to_vec();
        for l in (0..shapes.len()).rev() {
            let (nin, nout) = shapes[l];
            if l + 1 < shapes.len() {
                // q_bar currently holds the adjoint of acts[l + 1]
                let z_len = batch * nout;
                let q = &tape.pre[l];
                let (z, t) = q.split_at(z_len);
                let mut qb = vec![0.0; rows * nout];
                for k in 0..z_len {
                    let zv = z[k];
                    let s = dsigma(zv);
                    let mut zb = q_bar[k] * s;
                    if zv > 0.0 {
                        let mut acc = 0.0;
                        for blk in 1..tape.streams {
                            acc += q_bar[blk * z_len + k] * t[(blk - 1) * z_len + k];
                        }
                        zb += 2.0 * acc;
                    }
                    qb[k] = zb;
                    for blk in 1..tape.streams {
                        qb[blk * z_len + k] = q_bar[blk * z_len + k] * s;
                    }
                }
                q_bar = qb;
            }
            let (gw, gb) = grad[offsets[l]..offsets[l + 1]].split_at_mut(nin * nout);
            gemm(nout, rows, nin, &q_bar, (1, nout), &tape.acts[l], (nin, 1), 1.0, gw, nin);
            for s in 0..batch {
                for (g, v) in gb.iter_mut().zip(&q_bar[s * nout..(s + 1) * nout]) {
                    *g += v;
                }
            }
            if l > 0 {
                let w = &self.params[offsets[l]..offsets[l] + nin * nout];
                let mut a_bar = vec![0.0; rows * nin];
                gemm(rows, nout, nin, &q_bar, (nout, 1), w, (nin, 1), 0.0, &mut a_bar, nin);
                q_bar = a_bar;
            }
        }
    }
}
