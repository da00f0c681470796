//! Matrix-memory LSTM cell.
//!
//! Keys and values are written into a `d × d` memory through rank-one
//! covariance updates `C ← f·C + i·v kᵀ` and read back with a query. Gates
//! depend on the current input only; there is no hidden-to-hidden path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{dot, sigmoid, uniform_vec, Matrix};
use crate::slstm::ForgetGate;

/// Upper clamp on the input-gate pre-activation before exponentiation.
pub const INPUT_GATE_CLAMP: f64 = 30.0;

/// Readout denominator convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// `max(|nᵀq|, 1)`
    #[default]
    Abs,
    /// `max(nᵀq, 1)`
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLstmParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub b_q: Vec<f64>,
    pub b_k: Vec<f64>,
    pub b_v: Vec<f64>,
    /// Scalar input-gate weights over the input.
    pub w_i: Vec<f64>,
    pub b_i: f64,
    /// Scalar forget-gate weights over the input.
    pub w_f: Vec<f64>,
    pub b_f: f64,
    /// Output gate, one unit per memory row.
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
}

impl MLstmParams {
    pub fn zeros(input_dim: usize, head_dim: usize) -> Self {
        MLstmParams {
            w_q: Matrix::zeros(head_dim, input_dim),
            w_k: Matrix::zeros(head_dim, input_dim),
            w_v: Matrix::zeros(head_dim, input_dim),
            b_q: vec![0.0; head_dim],
            b_k: vec![0.0; head_dim],
            b_v: vec![0.0; head_dim],
            w_i: vec![0.0; input_dim],
            b_i: 0.0,
            w_f: vec![0.0; input_dim],
            b_f: 0.0,
            w_o: Matrix::zeros(head_dim, input_dim),
            b_o: vec![0.0; head_dim],
        }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, head_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / (input_dim as f64).sqrt();
        MLstmParams {
            w_q: Matrix::uniform(head_dim, input_dim, k, rng),
            w_k: Matrix::uniform(head_dim, input_dim, k, rng),
            w_v: Matrix::uniform(head_dim, input_dim, k, rng),
            b_q: uniform_vec(head_dim, k, rng),
            b_k: uniform_vec(head_dim, k, rng),
            b_v: uniform_vec(head_dim, k, rng),
            w_i: uniform_vec(input_dim, k, rng),
            b_i: rng.random_range(-k..=k),
            w_f: uniform_vec(input_dim, k, rng),
            b_f: rng.random_range(-k..=k),
            w_o: Matrix::uniform(head_dim, input_dim, k, rng),
            b_o: uniform_vec(head_dim, k, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_q", self.w_q.as_slice()),
            ("w_k", self.w_k.as_slice()),
            ("w_v", self.w_v.as_slice()),
            ("b_q", &self.b_q),
            ("b_k", &self.b_k),
            ("b_v", &self.b_v),
            ("w_i", &self.w_i),
            ("b_i", std::slice::from_ref(&self.b_i)),
            ("w_f", &self.w_f),
            ("b_f", std::slice::from_ref(&self.b_f)),
            ("w_o", self.w_o.as_slice()),
            ("b_o", &self.b_o),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_q", self.w_q.as_mut_slice()),
            ("w_k", self.w_k.as_mut_slice()),
            ("w_v", self.w_v.as_mut_slice()),
            ("b_q", &mut self.b_q),
            ("b_k", &mut self.b_k),
            ("b_v", &mut self.b_v),
            ("w_i", &mut self.w_i),
            ("b_i", std::slice::from_mut(&mut self.b_i)),
            ("w_f", &mut self.w_f),
            ("b_f", std::slice::from_mut(&mut self.b_f)),
            ("w_o", self.w_o.as_mut_slice()),
            ("b_o", &mut self.b_o),
        ]
    }

    fn check(&self) -> Result<()> {
        let (d, din) = self.w_q.shape();
        if d == 0 {
            return Err(Error::contract("mLSTM head dimension must be at least 1"));
        }
        for (name, m) in [("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o)] {
            if m.shape() != (d, din) {
                return Err(Error::contract(format!(
                    "mLSTM {name} is {:?}, expected {:?}",
                    m.shape(),
                    (d, din)
                )));
            }
        }
        for (name, v, len) in [
            ("b_q", &self.b_q, d),
            ("b_k", &self.b_k, d),
            ("b_v", &self.b_v, d),
            ("b_o", &self.b_o, d),
            ("w_i", &self.w_i, din),
            ("w_f", &self.w_f, din),
        ] {
            if v.len() != len {
                return Err(Error::contract(format!(
                    "mLSTM {name} has length {}, expected {len}",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Matrix memory `c` (d×d), normalizer `n` and hidden `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct MLstmState {
    pub c: Matrix,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
}

impl MLstmState {
    pub fn zeros(head_dim: usize) -> Self {
        MLstmState {
            c: Matrix::zeros(head_dim, head_dim),
            n: vec![0.0; head_dim],
            h: vec![0.0; head_dim],
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.c.shape() != (d, d) || self.n.len() != d || self.h.len() != d {
            return Err(Error::contract(format!(
                "mLSTM state shapes C {:?}, n {}, h {} do not match head dim {d}",
                self.c.shape(),
                self.n.len(),
                self.h.len()
            )));
        }
        ensure_finite("mLSTM state C", self.c.as_slice())?;
        ensure_finite("mLSTM state n", &self.n)
    }
}

#[derive(Clone, Debug)]
pub struct MLstmCache {
    pub x: Vec<f64>,
    pub prev: MLstmState,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub i_pre: f64,
    pub f_pre: f64,
    pub i_gate: f64,
    pub f_gate: f64,
    pub o_gate: Vec<f64>,
    /// `nᵀq`.
    pub score: f64,
    /// `max(|nᵀq|, 1)` (or the strict form).
    pub denom: f64,
    /// Retrieved memory before the output gate.
    pub h_tilde: Vec<f64>,
    pub next: MLstmState,
}

pub fn mlstm_step(
    params: &MLstmParams,
    forget: ForgetGate,
    denominator: Denominator,
    prev: &MLstmState,
    x: &[f64],
) -> Result<(MLstmState, MLstmCache)> {
    params.check()?;
    prev.check(params.head_dim())?;
    if x.len() != params.input_dim() {
        return Err(Error::contract(format!(
            "mLSTM input has length {}, expected {}",
            x.len(),
            params.input_dim()
        )));
    }
    ensure_finite("mLSTM input", x)?;
    Ok(step_unchecked(params, forget, denominator, prev, x))
}

fn step_unchecked(
    params: &MLstmParams,
    forget: ForgetGate,
    denominator: Denominator,
    prev: &MLstmState,
    x: &[f64],
) -> (MLstmState, MLstmCache) {
    let d = params.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let mut q = params.b_q.clone();
    params.w_q.matvec_acc(x, &mut q);
    let mut k = vec![0.0; d];
    params.w_k.matvec_into(x, &mut k);
    k.iter_mut()
        .zip(&params.b_k)
        .for_each(|(kj, b)| *kj = *kj * scale + b);
    let mut v = params.b_v.clone();
    params.w_v.matvec_acc(x, &mut v);

    let i_pre = dot(&params.w_i, x) + params.b_i;
    let i_gate = i_pre.min(INPUT_GATE_CLAMP).exp();
    let f_pre = dot(&params.w_f, x) + params.b_f;
    let f_gate = forget.value(f_pre);
    let mut o_gate = params.b_o.clone();
    params.w_o.matvec_acc(x, &mut o_gate);
    o_gate.iter_mut().for_each(|o| *o = sigmoid(*o));

    let mut c = prev.c.clone();
    c.scale(f_gate);
    c.add_outer(i_gate, &v, &k);
    let n: Vec<f64> = prev
        .n
        .iter()
        .zip(&k)
        .map(|(np, kj)| f_gate * np + i_gate * kj)
        .collect();

    let score = dot(&n, &q);
    let denom = match denominator {
        Denominator::Abs => score.abs().max(1.0),
        Denominator::Strict => score.max(1.0),
    };
    let mut h_tilde = vec![0.0; d];
    c.matvec_into(&q, &mut h_tilde);
    h_tilde.iter_mut().for_each(|v| *v /= denom);
    let h: Vec<f64> = o_gate.iter().zip(&h_tilde).map(|(o, v)| o * v).collect();

    let next = MLstmState { c, n, h };
    let cache = MLstmCache {
        x: x.to_vec(),
        prev: prev.clone(),
        q,
        k,
        v,
        i_pre,
        f_pre,
        i_gate,
        f_gate,
        o_gate,
        score,
        denom,
        h_tilde,
        next: next.clone(),
    };
    (next, cache)
}

pub fn mlstm_forward(
    params: &MLstmParams,
    forget: ForgetGate,
    denominator: Denominator,
    init: &MLstmState,
    xs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<MLstmCache>)> {
    if xs.is_empty() {
        return Err(Error::contract("mLSTM forward needs a nonempty sequence"));
    }
    params.check()?;
    init.check(params.head_dim())?;
    for (t, x) in xs.iter().enumerate() {
        if x.len() != params.input_dim() {
            return Err(Error::contract(format!(
                "mLSTM input {t} has length {}, expected {}",
                x.len(),
                params.input_dim()
            )));
        }
        ensure_finite(&format!("mLSTM input {t}"), x)?;
    }
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    let mut state = init.clone();
    for x in xs {
        let (next, cache) = step_unchecked(params, forget, denominator, &state, x);
        hs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    Ok((hs, caches))
}

/// Reverse-mode pass for [`mlstm_forward`].
///
/// At the denominator kink the constant branch wins: the gradient flows
/// through `nᵀq` only when it strictly exceeds 1 in the active convention.
pub fn mlstm_backward(
    params: &MLstmParams,
    forget: ForgetGate,
    denominator: Denominator,
    caches: &[MLstmCache],
    grad_h: &[Vec<f64>],
) -> Result<(MLstmParams, Vec<Vec<f64>>)> {
    if caches.len() != grad_h.len() {
        return Err(Error::contract(format!(
            "mLSTM backward: {} caches but {} hidden gradients",
            caches.len(),
            grad_h.len()
        )));
    }
    let d = params.head_dim();
    let din = params.input_dim();
    if let Some((t, g)) = grad_h.iter().enumerate().find(|(_, g)| g.len() != d) {
        return Err(Error::contract(format!(
            "mLSTM backward: hidden gradient {t} has length {}, expected {d}",
            g.len()
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();

    let mut grads = MLstmParams::zeros(din, d);
    let mut grad_x = vec![Vec::new(); caches.len()];
    let mut dc_next = Matrix::zeros(d, d);
    let mut dn_next = vec![0.0; d];

    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let gh = &grad_h[t];
        let c = &cache.next.c;

        let do_pre: Vec<f64> = (0..d)
            .map(|j| {
                let o = cache.o_gate[j];
                gh[j] * cache.h_tilde[j] * o * (1.0 - o)
            })
            .collect();
        let dh_tilde: Vec<f64> = gh.iter().zip(&cache.o_gate).map(|(g, o)| g * o).collect();

        // h̃ = C q / denom
        let inv = 1.0 / cache.denom;
        let mut dc = dc_next;
        dc.add_outer(inv, &dh_tilde, &cache.q);
        let mut dq = vec![0.0; d];
        c.matvec_t_acc(&dh_tilde, &mut dq);
        dq.iter_mut().for_each(|v| *v *= inv);
        let ddenom = -dot(&dh_tilde, &cache.h_tilde) * inv;
        let dscore = match denominator {
            Denominator::Abs if cache.score.abs() > 1.0 => ddenom * cache.score.signum(),
            Denominator::Strict if cache.score > 1.0 => ddenom,
            _ => 0.0,
        };
        let mut dn = dn_next;
        for j in 0..d {
            dn[j] += dscore * cache.q[j];
            dq[j] += dscore * cache.next.n[j];
        }

        // C = f C_prev + i v kᵀ ; n = f n_prev + i k
        let prev = &cache.prev;
        let ig = cache.i_gate;
        let fg = cache.f_gate;
        let df = dc.frobenius_dot(&prev.c) + dot(&dn, &prev.n);
        let mut dc_k = vec![0.0; d];
        dc.matvec_into(&cache.k, &mut dc_k);
        let di = dot(&cache.v, &dc_k) + dot(&dn, &cache.k);
        let dv: Vec<f64> = dc_k.iter().map(|v| ig * v).collect();
        let mut dk = vec![0.0; d];
        dc.matvec_t_acc(&cache.v, &mut dk);
        for j in 0..d {
            dk[j] = ig * (dk[j] + dn[j]);
        }
        let di_pre = if cache.i_pre > INPUT_GATE_CLAMP { 0.0 } else { di * ig };
        let df_pre = df * fg * forget.log_derivative(cache.f_pre);

        dc.scale(fg);
        dn.iter_mut().for_each(|v| *v *= fg);
        dc_next = dc;
        dn_next = dn;

        let x = &cache.x;
        let dk_raw: Vec<f64> = dk.iter().map(|v| v * scale).collect();
        let mut dx = vec![0.0; din];
        for (dpre, w, gw, gb) in [
            (&dq, &params.w_q, &mut grads.w_q, &mut grads.b_q),
            (&dv, &params.w_v, &mut grads.w_v, &mut grads.b_v),
            (&do_pre, &params.w_o, &mut grads.w_o, &mut grads.b_o),
        ] {
            gw.add_outer(1.0, dpre, x);
            gb.iter_mut().zip(dpre.iter()).for_each(|(b, v)| *b += v);
            w.matvec_t_acc(dpre, &mut dx);
        }
        grads.w_k.add_outer(1.0, &dk_raw, x);
        grads.b_k.iter_mut().zip(&dk).for_each(|(b, v)| *b += v);
        params.w_k.matvec_t_acc(&dk_raw, &mut dx);

        for j in 0..din {
            grads.w_i[j] += di_pre * x[j];
            grads.w_f[j] += df_pre * x[j];
            dx[j] += di_pre * params.w_i[j] + df_pre * params.w_f[j];
        }
        grads.b_i += di_pre;
        grads.b_f += df_pre;
        grad_x[t] = dx;
    }
    Ok((grads, grad_x))
}
