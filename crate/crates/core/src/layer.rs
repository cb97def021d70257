//! The LSTM spiking layer.
//!
//! Forward dynamics per step, with `a_q = w_{q,h} h_{t-1} + w_{q,x} x_t + b_{q,h} + b_{q,x}`:
//!
//! ```text
//! f = σ₁(a_f)   i = σ₁(a_i)   g = σ₂(a_g)   o = σ₁(a_o)
//! c_pre = f⊙c_{t-1} + i⊙g  ∈ {0,1,2}
//! c_t   = threshold(c_pre) ∈ {0,1}
//! h_t   = o⊙c_t
//! ```
//!
//! The backward pass replaces every σ′ by the Gaussian surrogate evaluated at
//! `|a_q| - |θ|`, and the cell threshold by its γ factor.

use crate::error::{Error, Result};
use crate::head::Head;
use crate::numerics::{axpy, Matrix, RngStream, Vector};
use crate::spike::{cell_threshold, cell_threshold_grad, SurrogateConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Forget,
    Input,
    Modulation,
    Output,
}

impl Gate {
    /// Storage and iteration order of the gates everywhere in the crate.
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Modulation, Gate::Output];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Modulation => "g",
            Gate::Output => "o",
        }
    }

    /// Gates other than `g` use σ₁.
    #[inline]
    pub fn uses_sigma2(self) -> bool {
        self == Gate::Modulation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    /// hidden × hidden
    pub w_h: Matrix,
    /// hidden × input
    pub w_x: Matrix,
    pub b_h: Vector,
    pub b_x: Vector,
}

impl GateParams {
    fn zeros(input_size: usize, hidden_size: usize) -> Self {
        GateParams {
            w_h: Matrix::zeros(hidden_size, hidden_size),
            w_x: Matrix::zeros(hidden_size, input_size),
            b_h: vec![0.0; hidden_size],
            b_x: vec![0.0; hidden_size],
        }
    }
}

/// Weights and biases of one LSTM spiking layer, indexed by [`Gate`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    input_size: usize,
    hidden_size: usize,
    pub gates: [GateParams; 4],
}

impl LayerParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LayerParams {
            input_size,
            hidden_size,
            gates: std::array::from_fn(|_| GateParams::zeros(input_size, hidden_size)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    #[inline]
    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g.index()]
    }

    #[inline]
    pub fn gate_mut(&mut self, g: Gate) -> &mut GateParams {
        &mut self.gates[g.index()]
    }

    /// Named tables in checkpoint order: for each gate f, i, g, o the tables
    /// `w_q_h`, `w_q_x`, `b_q_h`, `b_q_x`.
    pub fn tables(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(16);
        for g in Gate::ALL {
            let p = self.gate(g);
            let q = g.symbol();
            out.push((format!("w_{q}_h"), p.w_h.as_slice()));
            out.push((format!("w_{q}_x"), p.w_x.as_slice()));
            out.push((format!("b_{q}_h"), p.b_h.as_slice()));
            out.push((format!("b_{q}_x"), p.b_x.as_slice()));
        }
        out
    }

    pub fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(16);
        for (g, p) in Gate::ALL.into_iter().zip(self.gates.iter_mut()) {
            let q = g.symbol();
            out.push((format!("w_{q}_h"), p.w_h.as_mut_slice()));
            out.push((format!("w_{q}_x"), p.w_x.as_mut_slice()));
            out.push((format!("b_{q}_h"), p.b_h.as_mut_slice()));
            out.push((format!("b_{q}_x"), p.b_x.as_mut_slice()));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        4 * (self.hidden_size * (self.hidden_size + self.input_size + 2))
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tables_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for (_, t) in self.tables_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }
}

/// Standard-normal weights, zero biases.
///
/// Fill order: gates f, i, g, o; within a gate `w_h` then `w_x`, each row-major.
pub fn init_params(input_size: usize, hidden_size: usize, rng: &mut RngStream) -> Result<LayerParams> {
    if input_size == 0 || hidden_size == 0 {
        return Err(Error::Config(format!(
            "layer sizes must be positive (input {input_size}, hidden {hidden_size})"
        )));
    }
    let mut p = LayerParams::zeros(input_size, hidden_size);
    for gate in p.gates.iter_mut() {
        gate.w_h = Matrix::standard_normal(hidden_size, hidden_size, rng);
        gate.w_x = Matrix::standard_normal(hidden_size, input_size, rng);
    }
    Ok(p)
}

/// Recurrent state carried between steps. Both vectors are binary.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vector,
    pub c: Vector,
}

impl LayerState {
    pub fn zeros(hidden_size: usize) -> Self {
        LayerState {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Everything the backward pass reads from one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    /// Membrane potentials `a_q`, indexed by [`Gate`].
    pub pre: [Vector; 4],
    /// Spiking gate outputs, indexed by [`Gate`].
    pub gates: [Vector; 4],
    pub c_pre: Vec<u8>,
    pub c: Vector,
    pub h: Vector,
}

impl StepCache {
    #[inline]
    pub fn gate(&self, g: Gate) -> &[f64] {
        &self.gates[g.index()]
    }

    #[inline]
    pub fn pre(&self, g: Gate) -> &[f64] {
        &self.pre[g.index()]
    }

    pub fn state(&self) -> LayerState {
        LayerState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }

    /// Re-checks the binary/ternary structure of the cached step.
    pub fn check_invariants(&self) -> Result<()> {
        for g in Gate::ALL {
            ensure_binary(self.gate(g), g.symbol())?;
        }
        ensure_binary(&self.c, "c")?;
        ensure_binary(&self.h, "h")?;
        let f = self.gate(Gate::Forget);
        let i = self.gate(Gate::Input);
        let g = self.gate(Gate::Modulation);
        let o = self.gate(Gate::Output);
        for k in 0..self.c.len() {
            let sum = f[k] * self.c_prev[k] + i[k] * g[k];
            if self.c_pre[k] > 2 || sum != self.c_pre[k] as f64 {
                return Err(Error::Invariant(format!("c_pre[{k}] = {}", self.c_pre[k])));
            }
            if self.h[k] != o[k] * self.c[k] {
                return Err(Error::Invariant(format!("h[{k}] != o⊙c")));
            }
        }
        Ok(())
    }
}

fn ensure_binary(v: &[f64], name: &str) -> Result<()> {
    match v.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(k) => Err(Error::Invariant(format!(
            "{name}[{k}] = {} is not a spike value",
            v[k]
        ))),
        None => Ok(()),
    }
}

/// Indices of the 1-entries of a binary vector.
#[inline]
fn active(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter_map(|(k, &x)| (x != 0.0).then_some(k))
        .collect()
}

/// Nonzero entries of a real vector.
#[inline]
fn nonzero(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter()
        .enumerate()
        .filter_map(|(k, &x)| (x != 0.0).then_some((k, x)))
        .collect()
}

pub fn forward_step(
    params: &LayerParams,
    cfg: &SurrogateConfig,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<StepCache> {
    let hidden = params.hidden_size;
    if x.len() != params.input_size {
        return Err(Error::shape("forward_step input", params.input_size, x.len()));
    }
    if h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::shape(
            "forward_step state",
            hidden,
            format!("h {} / c {}", h_prev.len(), c_prev.len()),
        ));
    }
    ensure_binary(h_prev, "h_prev")?;
    ensure_binary(c_prev, "c_prev")?;

    let h_on = active(h_prev);
    let x_nz = nonzero(x);

    let pre: [Vector; 4] = std::array::from_fn(|q| {
        let p = &params.gates[q];
        (0..hidden)
            .map(|r| {
                let wh = p.w_h.row(r);
                let wx = p.w_x.row(r);
                let from_h: f64 = h_on.iter().map(|&j| wh[j]).sum();
                let from_x: f64 = x_nz.iter().map(|&(j, v)| wx[j] * v).sum();
                from_h + from_x + p.b_h[r] + p.b_x[r]
            })
            .collect()
    });
    let gates: [Vector; 4] = std::array::from_fn(|q| {
        let g = Gate::ALL[q];
        pre[q]
            .iter()
            .map(|&a| if g.uses_sigma2() { cfg.sigma2(a) } else { cfg.sigma1(a) })
            .collect()
    });

    let mut c_pre = Vec::with_capacity(hidden);
    let mut c = Vec::with_capacity(hidden);
    let mut h = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let f = gates[Gate::Forget.index()][k];
        let i = gates[Gate::Input.index()][k];
        let g = gates[Gate::Modulation.index()][k];
        let o = gates[Gate::Output.index()][k];
        let sum = (f * c_prev[k] + i * g) as u8;
        let ck = cell_threshold(sum)? as f64;
        c_pre.push(sum);
        c.push(ck);
        h.push(o * ck);
    }

    Ok(StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        pre,
        gates,
        c_pre,
        c,
        h,
    })
}

/// Runs [`forward_step`] over `inputs`, starting from `initial`.
pub fn forward_sequence(
    params: &LayerParams,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    initial: &LayerState,
) -> Result<Vec<StepCache>> {
    if inputs.is_empty() {
        return Err(Error::Domain("forward_sequence needs at least one step".into()));
    }
    let mut caches: Vec<StepCache> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let cache = match caches.last() {
            Some(prev) => forward_step(params, cfg, x, &prev.h, &prev.c)?,
            None => forward_step(params, cfg, x, &initial.h, &initial.c)?,
        };
        caches.push(cache);
    }
    Ok(caches)
}

/// Result of one backward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrads {
    /// `∂L/∂q` for each gate output q.
    pub d_gate: [Vector; 4],
    /// `σ′(Δ[a_q]) ⊙ ∂L/∂q`, the gradient at each membrane potential.
    pub d_pre: [Vector; 4],
    /// `∂L/∂c_pre`, the cell gradient below the threshold.
    pub d_cell: Vector,
    pub dh_prev: Vector,
    pub dc_prev: Vector,
}

/// One step of the backward chain.
///
/// `dh` is the total gradient reaching `h_t` (head plus recurrent carry) and
/// `dc_carry` the gradient reaching the thresholded `c_t` from step `t+1`.
///
/// ```text
/// ∂L/∂o      = c_t ⊙ dh
/// ∂L/∂c_pre  = γ(c_pre) ⊙ (o_t ⊙ dh + dc_carry)
/// ∂L/∂i      = g_t ⊙ ∂L/∂c_pre      ∂L/∂g = i_t ⊙ ∂L/∂c_pre
/// ∂L/∂f      = c_{t-1} ⊙ ∂L/∂c_pre  ∂L/∂c_{t-1} = f_t ⊙ ∂L/∂c_pre
/// ∂L/∂h_{t-1} = Σ_q w_{q,h}ᵀ (σ′(Δ[a_q]) ⊙ ∂L/∂q)
/// ```
pub fn backward_step(
    params: &LayerParams,
    cfg: &SurrogateConfig,
    cache: &StepCache,
    dh: &[f64],
    dc_carry: &[f64],
) -> Result<StepGrads> {
    let hidden = params.hidden_size;
    if dh.len() != hidden || dc_carry.len() != hidden || cache.h.len() != hidden {
        return Err(Error::shape(
            "backward_step",
            hidden,
            format!("dh {} / dc {} / cache {}", dh.len(), dc_carry.len(), cache.h.len()),
        ));
    }
    let f = cache.gate(Gate::Forget);
    let i = cache.gate(Gate::Input);
    let g = cache.gate(Gate::Modulation);
    let o = cache.gate(Gate::Output);

    let mut d_gate: [Vector; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    let mut d_cell = vec![0.0; hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let gamma = cell_threshold_grad(cache.c_pre[k], cfg)?;
        let dc = gamma * (o[k] * dh[k] + dc_carry[k]);
        d_cell[k] = dc;
        d_gate[Gate::Output.index()][k] = cache.c[k] * dh[k];
        d_gate[Gate::Input.index()][k] = g[k] * dc;
        d_gate[Gate::Modulation.index()][k] = i[k] * dc;
        d_gate[Gate::Forget.index()][k] = cache.c_prev[k] * dc;
        dc_prev[k] = f[k] * dc;
    }

    let d_pre: [Vector; 4] = std::array::from_fn(|q| {
        let gate = Gate::ALL[q];
        d_gate[q]
            .iter()
            .zip(&cache.pre[q])
            .map(|(&d, &a)| {
                if d == 0.0 {
                    0.0
                } else if gate.uses_sigma2() {
                    cfg.sigma2_prime(a) * d
                } else {
                    cfg.sigma1_prime(a) * d
                }
            })
            .collect()
    });

    let mut dh_prev = vec![0.0; hidden];
    for q in 0..4 {
        let w = &params.gates[q].w_h;
        for (r, &d) in d_pre[q].iter().enumerate() {
            if d != 0.0 {
                axpy(d, w.row(r), &mut dh_prev);
            }
        }
    }

    Ok(StepGrads {
        d_gate,
        d_pre,
        d_cell,
        dh_prev,
        dc_prev,
    })
}

/// Gradient accumulators for every trainable table, plus the carries that
/// leave the sequence through the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layer: LayerParams,
    pub head: Option<Head>,
    pub dh0: Vector,
    pub dc0: Vector,
}

impl GradientSet {
    pub fn zeros_like(params: &LayerParams, head: Option<&Head>) -> Self {
        GradientSet {
            layer: LayerParams::zeros(params.input_size, params.hidden_size),
            head: head.map(Head::zeros_like),
            dh0: vec![0.0; params.hidden_size],
            dc0: vec![0.0; params.hidden_size],
        }
    }

    /// Layer tables followed by the head tables, same names as the parameters.
    pub fn tables(&self) -> Vec<(String, &[f64])> {
        let mut out = self.layer.tables();
        if let Some(h) = &self.head {
            out.extend(h.tables());
        }
        out
    }

    pub fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.layer.tables_mut();
        if let Some(h) = &mut self.head {
            out.extend(h.tables_mut());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tables_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
        self.dh0.iter_mut().for_each(|v| *v *= s);
        self.dc0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.tables()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Adds one step's parameter gradients into `acc`.
fn accumulate_step(acc: &mut LayerParams, cache: &StepCache, step: &StepGrads) {
    let h_on = active(&cache.h_prev);
    let x_nz = nonzero(&cache.x);
    for (q, gate) in acc.gates.iter_mut().enumerate() {
        for (r, &d) in step.d_pre[q].iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let wh = gate.w_h.row_mut(r);
            for &j in &h_on {
                wh[j] += d;
            }
            let wx = gate.w_x.row_mut(r);
            for &(j, v) in &x_nz {
                wx[j] += d * v;
            }
            gate.b_h[r] += d;
            gate.b_x[r] += d;
        }
    }
}

/// Backpropagation through time over the whole sequence, adding into `acc`.
///
/// `dh_seq[t]` is the gradient reaching `h_t` from outside the recurrence
/// (the output head). Returns the carries `(∂L/∂h_0, ∂L/∂c_0)`.
pub fn bptt_accumulate(
    params: &LayerParams,
    cfg: &SurrogateConfig,
    caches: &[StepCache],
    dh_seq: &[Vector],
    acc: &mut LayerParams,
) -> Result<(Vector, Vector)> {
    if caches.len() != dh_seq.len() {
        return Err(Error::shape("bptt", caches.len(), dh_seq.len()));
    }
    let hidden = params.hidden_size;
    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];
    for (cache, dh_out) in caches.iter().zip(dh_seq).rev() {
        if dh_out.len() != hidden {
            return Err(Error::shape("bptt cotangent", hidden, dh_out.len()));
        }
        let dh: Vector = dh_out.iter().zip(&dh_carry).map(|(a, b)| a + b).collect();
        let step = backward_step(params, cfg, cache, &dh, &dc_carry)?;
        accumulate_step(acc, cache, &step);
        dh_carry = step.dh_prev;
        dc_carry = step.dc_prev;
    }
    Ok((dh_carry, dc_carry))
}

pub fn bptt(
    params: &LayerParams,
    cfg: &SurrogateConfig,
    caches: &[StepCache],
    dh_seq: &[Vector],
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params, None);
    let (dh0, dc0) = bptt_accumulate(params, cfg, caches, dh_seq, &mut grads.layer)?;
    grads.dh0 = dh0;
    grads.dc0 = dc0;
    Ok(grads)
}
