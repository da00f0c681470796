//! Scalar-memory LSTM cell with exponential input gating, a normalizer
//! state and a log-space stabilizer.
//!
//! The stabilized recurrence keeps `c` and `n` scaled by `exp(-m)`; the
//! ratio `c / n` is unaffected, so `h` matches the unstabilized cell while
//! every exponential stays bounded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{log_sigmoid, sigmoid, tanh_act, uniform_vec, Matrix};

/// How the forget gate maps its pre-activation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgetGate {
    #[default]
    Sigmoid,
    Exp,
}

impl ForgetGate {
    /// `log f(x)`.
    #[inline]
    pub fn log_value(self, x: f64) -> f64 {
        match self {
            ForgetGate::Sigmoid => log_sigmoid(x),
            ForgetGate::Exp => x,
        }
    }

    /// `f(x)`.
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            ForgetGate::Sigmoid => sigmoid(x),
            ForgetGate::Exp => x.exp(),
        }
    }

    /// `d log f / dx`.
    #[inline]
    pub fn log_derivative(self, x: f64) -> f64 {
        match self {
            ForgetGate::Sigmoid => sigmoid(-x),
            ForgetGate::Exp => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SLstmParams {
    pub w_z: Matrix,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub r_z: Matrix,
    pub r_i: Matrix,
    pub r_f: Matrix,
    pub r_o: Matrix,
    pub b_z: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl SLstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Matrix::zeros(hidden_dim, input_dim);
        let r = || Matrix::zeros(hidden_dim, hidden_dim);
        let b = || vec![0.0; hidden_dim];
        SLstmParams {
            w_z: w(),
            w_i: w(),
            w_f: w(),
            w_o: w(),
            r_z: r(),
            r_i: r(),
            r_f: r(),
            r_o: r(),
            b_z: b(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
        }
    }

    /// Uniform `±1/√fan_in` initialization. Input weights and biases use the
    /// input fan-in, recurrent weights the hidden fan-in.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let kw = 1.0 / (input_dim as f64).sqrt();
        let kr = 1.0 / (hidden_dim as f64).sqrt();
        SLstmParams {
            w_z: Matrix::uniform(hidden_dim, input_dim, kw, rng),
            w_i: Matrix::uniform(hidden_dim, input_dim, kw, rng),
            w_f: Matrix::uniform(hidden_dim, input_dim, kw, rng),
            w_o: Matrix::uniform(hidden_dim, input_dim, kw, rng),
            r_z: Matrix::uniform(hidden_dim, hidden_dim, kr, rng),
            r_i: Matrix::uniform(hidden_dim, hidden_dim, kr, rng),
            r_f: Matrix::uniform(hidden_dim, hidden_dim, kr, rng),
            r_o: Matrix::uniform(hidden_dim, hidden_dim, kr, rng),
            b_z: uniform_vec(hidden_dim, kw, rng),
            b_i: uniform_vec(hidden_dim, kw, rng),
            b_f: uniform_vec(hidden_dim, kw, rng),
            b_o: uniform_vec(hidden_dim, kw, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    /// Named views of every parameter array, in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_z", self.w_z.as_slice()),
            ("w_i", self.w_i.as_slice()),
            ("w_f", self.w_f.as_slice()),
            ("w_o", self.w_o.as_slice()),
            ("r_z", self.r_z.as_slice()),
            ("r_i", self.r_i.as_slice()),
            ("r_f", self.r_f.as_slice()),
            ("r_o", self.r_o.as_slice()),
            ("b_z", &self.b_z),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_z", self.w_z.as_mut_slice()),
            ("w_i", self.w_i.as_mut_slice()),
            ("w_f", self.w_f.as_mut_slice()),
            ("w_o", self.w_o.as_mut_slice()),
            ("r_z", self.r_z.as_mut_slice()),
            ("r_i", self.r_i.as_mut_slice()),
            ("r_f", self.r_f.as_mut_slice()),
            ("r_o", self.r_o.as_mut_slice()),
            ("b_z", &mut self.b_z),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
        ]
    }

    fn check(&self) -> Result<()> {
        let (h, d) = self.w_z.shape();
        for (name, m) in [("w_i", &self.w_i), ("w_f", &self.w_f), ("w_o", &self.w_o)] {
            if m.shape() != (h, d) {
                return Err(Error::contract(format!(
                    "sLSTM {name} is {:?}, expected {:?}",
                    m.shape(),
                    (h, d)
                )));
            }
        }
        for (name, m) in [
            ("r_z", &self.r_z),
            ("r_i", &self.r_i),
            ("r_f", &self.r_f),
            ("r_o", &self.r_o),
        ] {
            if m.shape() != (h, h) {
                return Err(Error::contract(format!(
                    "sLSTM {name} is {:?}, expected {:?}",
                    m.shape(),
                    (h, h)
                )));
            }
        }
        for (name, b) in [
            ("b_z", &self.b_z),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
        ] {
            if b.len() != h {
                return Err(Error::contract(format!(
                    "sLSTM {name} has length {}, expected {h}",
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

/// Recurrent state: cell `c`, normalizer `n`, hidden `h`, stabilizer `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SLstmState {
    pub c: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
    pub m: Vec<f64>,
}

impl SLstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        SLstmState {
            c: vec![0.0; hidden_dim],
            n: vec![0.0; hidden_dim],
            h: vec![0.0; hidden_dim],
            m: vec![0.0; hidden_dim],
        }
    }

    fn check(&self, hidden_dim: usize) -> Result<()> {
        for (name, v) in [("c", &self.c), ("n", &self.n), ("h", &self.h), ("m", &self.m)] {
            if v.len() != hidden_dim {
                return Err(Error::contract(format!(
                    "sLSTM state {name} has length {}, expected {hidden_dim}",
                    v.len()
                )));
            }
            ensure_finite(&format!("sLSTM state {name}"), v)?;
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct SLstmCache {
    pub x: Vec<f64>,
    pub prev: SLstmState,
    /// Pre-activations `z̃, ĩ, f̃, õ`.
    pub z_pre: Vec<f64>,
    pub i_pre: Vec<f64>,
    pub f_pre: Vec<f64>,
    pub o_pre: Vec<f64>,
    /// `tanh(z̃)`.
    pub z: Vec<f64>,
    /// Stabilized gates `i′`, `f′` and output gate `o`.
    pub i_gate: Vec<f64>,
    pub f_gate: Vec<f64>,
    pub o_gate: Vec<f64>,
    /// Whether the `log f + m_prev` branch won the stabilizer max.
    pub forget_branch: Vec<bool>,
    pub next: SLstmState,
}

/// One stabilized sLSTM step.
pub fn slstm_step(
    params: &SLstmParams,
    forget: ForgetGate,
    prev: &SLstmState,
    x: &[f64],
) -> Result<(SLstmState, SLstmCache)> {
    params.check()?;
    let hd = params.hidden_dim();
    if x.len() != params.input_dim() {
        return Err(Error::contract(format!(
            "sLSTM input has length {}, expected {}",
            x.len(),
            params.input_dim()
        )));
    }
    prev.check(hd)?;
    ensure_finite("sLSTM input", x)?;
    Ok(step_unchecked(params, forget, prev, x))
}

fn preact(w: &Matrix, r: &Matrix, b: &[f64], x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    r.matvec_acc(h, &mut out);
    out
}

fn step_unchecked(
    params: &SLstmParams,
    forget: ForgetGate,
    prev: &SLstmState,
    x: &[f64],
) -> (SLstmState, SLstmCache) {
    let hd = params.hidden_dim();
    let z_pre = preact(&params.w_z, &params.r_z, &params.b_z, x, &prev.h);
    let i_pre = preact(&params.w_i, &params.r_i, &params.b_i, x, &prev.h);
    let f_pre = preact(&params.w_f, &params.r_f, &params.b_f, x, &prev.h);
    let o_pre = preact(&params.w_o, &params.r_o, &params.b_o, x, &prev.h);

    let mut next = SLstmState::zeros(hd);
    let mut z = vec![0.0; hd];
    let mut i_gate = vec![0.0; hd];
    let mut f_gate = vec![0.0; hd];
    let mut o_gate = vec![0.0; hd];
    let mut forget_branch = vec![false; hd];
    for j in 0..hd {
        let log_f = forget.log_value(f_pre[j]) + prev.m[j];
        // ĩ is log i exactly.
        let keep = log_f >= i_pre[j];
        let m = if keep { log_f } else { i_pre[j] };
        let ig = (i_pre[j] - m).exp();
        let fg = (log_f - m).exp();
        let zj = tanh_act(z_pre[j]);
        let c = fg * prev.c[j] + ig * zj;
        let n = fg * prev.n[j] + ig;
        let o = sigmoid(o_pre[j]);
        next.c[j] = c;
        next.n[j] = n;
        next.m[j] = m;
        next.h[j] = o * (c / n);
        z[j] = zj;
        i_gate[j] = ig;
        f_gate[j] = fg;
        o_gate[j] = o;
        forget_branch[j] = keep;
    }
    debug_assert!(next.n.iter().all(|&n| n > 0.0));
    let cache = SLstmCache {
        x: x.to_vec(),
        prev: prev.clone(),
        z_pre,
        i_pre,
        f_pre,
        o_pre,
        z,
        i_gate,
        f_gate,
        o_gate,
        forget_branch,
        next: next.clone(),
    };
    (next, cache)
}

/// Unrolls [`slstm_step`] over `xs`, returning every hidden state and cache.
pub fn slstm_forward(
    params: &SLstmParams,
    forget: ForgetGate,
    init: &SLstmState,
    xs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<SLstmCache>)> {
    if xs.is_empty() {
        return Err(Error::contract("sLSTM forward needs a nonempty sequence"));
    }
    params.check()?;
    init.check(params.hidden_dim())?;
    for (t, x) in xs.iter().enumerate() {
        if x.len() != params.input_dim() {
            return Err(Error::contract(format!(
                "sLSTM input {t} has length {}, expected {}",
                x.len(),
                params.input_dim()
            )));
        }
        ensure_finite(&format!("sLSTM input {t}"), x)?;
    }
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    let mut state = init.clone();
    for x in xs {
        let (next, cache) = step_unchecked(params, forget, &state, x);
        hs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    Ok((hs, caches))
}

/// Reverse-mode pass through an unrolled sequence.
///
/// Returns gradients of `Σ_t ⟨grad_h[t], h_t⟩` with respect to every
/// parameter (as an [`SLstmParams`]) and every input.
pub fn slstm_backward(
    params: &SLstmParams,
    forget: ForgetGate,
    caches: &[SLstmCache],
    grad_h: &[Vec<f64>],
) -> Result<(SLstmParams, Vec<Vec<f64>>)> {
    if caches.len() != grad_h.len() {
        return Err(Error::contract(format!(
            "sLSTM backward: {} caches but {} hidden gradients",
            caches.len(),
            grad_h.len()
        )));
    }
    let hd = params.hidden_dim();
    if let Some((t, g)) = grad_h.iter().enumerate().find(|(_, g)| g.len() != hd) {
        return Err(Error::contract(format!(
            "sLSTM backward: hidden gradient {t} has length {}, expected {hd}",
            g.len()
        )));
    }

    let mut grads = SLstmParams::zeros(params.input_dim(), hd);
    let mut grad_x = vec![Vec::new(); caches.len()];

    // Gradients flowing into the state produced by step t from step t+1.
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dn_next = vec![0.0; hd];
    let mut dm_next = vec![0.0; hd];

    let mut dz_pre = vec![0.0; hd];
    let mut di_pre = vec![0.0; hd];
    let mut df_pre = vec![0.0; hd];
    let mut do_pre = vec![0.0; hd];

    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let prev = &cache.prev;
        let next = &cache.next;
        for j in 0..hd {
            let dh = grad_h[t][j] + dh_next[j];
            let n = next.n[j];
            let ratio = next.c[j] / n;
            let o = cache.o_gate[j];
            do_pre[j] = dh * ratio * o * (1.0 - o);
            let dratio = dh * o;
            let dc = dratio / n + dc_next[j];
            let dn = -dratio * ratio / n + dn_next[j];

            let ig = cache.i_gate[j];
            let fg = cache.f_gate[j];
            let z = cache.z[j];
            let dfg = dc * prev.c[j] + dn * prev.n[j];
            let dig = dc * z + dn;
            dz_pre[j] = dc * ig * (1.0 - z * z);
            dc_next[j] = dc * fg;
            dn_next[j] = dn * fg;

            // i′ = exp(ĩ − m), f′ = exp(log f + m_prev − m)
            let mut di = dig * ig;
            let mut dlog_f = dfg * fg;
            let dm = dm_next[j] - dig * ig - dfg * fg;
            // m = max(log f + m_prev, ĩ), ties go to the first branch
            if cache.forget_branch[j] {
                dlog_f += dm;
            } else {
                di += dm;
            }
            di_pre[j] = di;
            df_pre[j] = dlog_f * forget.log_derivative(cache.f_pre[j]);
            dm_next[j] = dlog_f;
        }

        let mut dx = vec![0.0; params.input_dim()];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (d, w, r, gw, gr, gb) in [
            (&dz_pre, &params.w_z, &params.r_z, &mut grads.w_z, &mut grads.r_z, &mut grads.b_z),
            (&di_pre, &params.w_i, &params.r_i, &mut grads.w_i, &mut grads.r_i, &mut grads.b_i),
            (&df_pre, &params.w_f, &params.r_f, &mut grads.w_f, &mut grads.r_f, &mut grads.b_f),
            (&do_pre, &params.w_o, &params.r_o, &mut grads.w_o, &mut grads.r_o, &mut grads.b_o),
        ] {
            gw.add_outer(1.0, d, &cache.x);
            gr.add_outer(1.0, d, &prev.h);
            gb.iter_mut().zip(d.iter()).for_each(|(b, v)| *b += v);
            w.matvec_t_acc(d, &mut dx);
            r.matvec_t_acc(d, &mut dh_next);
        }
        grad_x[t] = dx;
    }
    Ok((grads, grad_x))
}
