//! Single-hidden-layer tanh network `η(x) = w2·tanh(W1 x + b1) + b2` with closed-form
//! input derivatives up to second order and their parameter derivatives.
//!
//! Flattened parameter layout: `W1` (row-major, `H×n`), `b1`, `w2`, `b2`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WIDTH: usize = 48;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("network needs n >= 1 and H >= 1 (got n = {n}, H = {width})")]
    Shape { n: usize, width: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialNetwork {
    n: usize,
    width: usize,
    params: Vec<f64>,
    seed: u64,
}

/// Value, input gradient and input Hessian (row-major `n×n`) of η at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl NetworkJet {
    fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        }
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.grad.len() + j]
    }
}

/// Hidden-layer activations cached by [`PotentialNetwork::jet_into`] for reuse by
/// [`PotentialNetwork::accumulate_vjp`].
#[derive(Debug, Clone)]
pub struct JetWorkspace {
    pub jet: NetworkJet,
    s: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    // scratch for the pullback
    r: Vec<f64>,
}

impl JetWorkspace {
    pub fn new(net: &PotentialNetwork) -> Self {
        let h = net.width;
        Self {
            jet: NetworkJet::zeros(net.n),
            s: vec![0.0; h],
            s1: vec![0.0; h],
            s2: vec![0.0; h],
            r: vec![0.0; net.n],
        }
    }
}

/// Dense derivatives of every jet component with respect to the flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamJacobians {
    /// `∂η/∂θ`, length P.
    pub value: Vec<f64>,
    /// `∂g_i/∂θ`, n rows of length P.
    pub grad: Vec<Vec<f64>>,
    /// `∂Hm_ij/∂θ`, n·n rows (row-major in (i, j)) of length P.
    pub hess: Vec<Vec<f64>>,
}

/// Weights for a vector-Jacobian product through the jet.
#[derive(Debug, Clone, Copy)]
pub struct JetCotangent<'a> {
    pub value: f64,
    pub grad: &'a [f64],
    /// Row-major `n×n`.
    pub hess: &'a [f64],
}

/// JSON snapshot used for warm starts and `dump-solution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSnapshot {
    pub n: usize,
    #[serde(rename = "H")]
    pub width: usize,
    /// Row-major `H×n`.
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
}

pub fn param_count(n: usize, width: usize) -> usize {
    width * n + 2 * width + 1
}

impl PotentialNetwork {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(n: usize, width: usize, seed: u64) -> Result<Self, NetworkError> {
        if n == 0 || width == 0 {
            return Err(NetworkError::Shape { n, width });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count(n, width)];
        let lim1 = (6.0 / (n + width) as f64).sqrt();
        let lim2 = (6.0 / (width + 1) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-lim1, lim1);
        let u2 = Uniform::new_inclusive(-lim2, lim2);
        for w in &mut params[..width * n] {
            *w = u1.sample(&mut rng);
        }
        let w2_start = width * n + width;
        for w in &mut params[w2_start..w2_start + width] {
            *w = u2.sample(&mut rng);
        }
        Ok(Self {
            n,
            width,
            params,
            seed,
        })
    }

    pub fn from_params(
        n: usize,
        width: usize,
        params: Vec<f64>,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        if n == 0 || width == 0 {
            return Err(NetworkError::Shape { n, width });
        }
        let expected = param_count(n, width);
        if params.len() != expected {
            return Err(NetworkError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            n,
            width,
            params,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.params.len() {
            return Err(NetworkError::ParamLength {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.width * self.n]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.width * self.n;
        &self.params[o..o + self.width]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.width * self.n + self.width;
        &self.params[o..o + self.width]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.width * self.n;
        (b1, b1 + self.width, b1 + 2 * self.width)
    }

    /// Plain forward pass.
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut out = self.b2();
        for k in 0..self.width {
            let row = &w1[k * n..(k + 1) * n];
            let z: f64 = b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out += w2[k] * z.tanh();
        }
        out
    }

    pub fn evaluate_jet(&self, x: &[f64]) -> NetworkJet {
        let mut ws = JetWorkspace::new(self);
        self.jet_into(x, &mut ws);
        ws.jet
    }

    /// Fills `ws.jet` and caches the hidden activations for a following VJP.
    pub fn jet_into(&self, x: &[f64], ws: &mut JetWorkspace) {
        let n = self.n;
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let jet = &mut ws.jet;
        jet.value = self.b2();
        jet.grad.iter_mut().for_each(|g| *g = 0.0);
        jet.hess.iter_mut().for_each(|h| *h = 0.0);
        for k in 0..self.width {
            let row = &w1[k * n..(k + 1) * n];
            let z: f64 = b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let s = z.tanh();
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            ws.s[k] = s;
            ws.s1[k] = s1;
            ws.s2[k] = s2;
            let a = w2[k];
            jet.value += a * s;
            let c1 = a * s1;
            let c2 = a * s2;
            for i in 0..n {
                jet.grad[i] += c1 * row[i];
                let ci = c2 * row[i];
                // upper triangle, mirrored below
                for j in i..n {
                    jet.hess[i * n + j] += ci * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                jet.hess[i * n + j] = jet.hess[j * n + i];
            }
        }
    }

    /// Adds `scale · (∂⟨cot, jet⟩/∂θ)` to `out`, using activations cached in `ws` for `x`.
    pub fn accumulate_vjp(
        &self,
        x: &[f64],
        ws: &mut JetWorkspace,
        cot: JetCotangent<'_>,
        scale: f64,
        out: &mut [f64],
    ) {
        let n = self.n;
        let (ob1, ow2, ob2) = self.offsets();
        let w1 = &self.params[..ob1];
        let w2 = &self.params[ow2..ob2];
        for k in 0..self.width {
            let row = &w1[k * n..(k + 1) * n];
            let (s, s1, s2) = (ws.s[k], ws.s1[k], ws.s2[k]);
            let s3 = -2.0 * s1 * (1.0 - 3.0 * s * s);
            let a = w2[k];
            // gk = W_k·G, qk = W_kᵀ Hs W_k, r = (Hs + Hsᵀ) W_k
            let mut gk = 0.0;
            let mut qk = 0.0;
            for i in 0..n {
                gk += row[i] * cot.grad[i];
                let mut acc = 0.0;
                for j in 0..n {
                    let hij = cot.hess[i * n + j];
                    qk += hij * row[i] * row[j];
                    acc += (hij + cot.hess[j * n + i]) * row[j];
                }
                ws.r[i] = acc;
            }
            let dz = a * (cot.value * s1 + s2 * gk + s3 * qk);
            for l in 0..n {
                out[k * n + l] += scale * (dz * x[l] + a * (s1 * cot.grad[l] + s2 * ws.r[l]));
            }
            out[ob1 + k] += scale * dz;
            out[ow2 + k] += scale * (cot.value * s + s1 * gk + s2 * qk);
        }
        out[ob2] += scale * cot.value;
    }

    /// Materialized Jacobians of `(η, g, Hm)` with respect to the flattened parameters.
    pub fn parameter_jacobians(&self, x: &[f64]) -> ParamJacobians {
        let n = self.n;
        let p = self.num_params();
        let (ob1, ow2, ob2) = self.offsets();
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut value = vec![0.0; p];
        let mut grad = vec![vec![0.0; p]; n];
        let mut hess = vec![vec![0.0; p]; n * n];
        for k in 0..self.width {
            let row = &w1[k * n..(k + 1) * n];
            let z: f64 = b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let s = z.tanh();
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            let s3 = -2.0 * s1 * (1.0 - 3.0 * s * s);
            let a = w2[k];

            value[ow2 + k] = s;
            value[ob1 + k] = a * s1;
            for l in 0..n {
                value[k * n + l] = a * s1 * x[l];
            }
            for i in 0..n {
                grad[i][ow2 + k] = s1 * row[i];
                grad[i][ob1 + k] = a * s2 * row[i];
                for l in 0..n {
                    let delta = if i == l { s1 } else { 0.0 };
                    grad[i][k * n + l] = a * (s2 * x[l] * row[i] + delta);
                }
                for j in 0..n {
                    let h = &mut hess[i * n + j];
                    h[ow2 + k] = s2 * row[i] * row[j];
                    h[ob1 + k] = a * s3 * row[i] * row[j];
                    for l in 0..n {
                        let mut d = s3 * x[l] * row[i] * row[j];
                        if i == l {
                            d += s2 * row[j];
                        }
                        if j == l {
                            d += s2 * row[i];
                        }
                        h[k * n + l] = a * d;
                    }
                }
            }
        }
        value[ob2] = 1.0;
        ParamJacobians { value, grad, hess }
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            n: self.n,
            width: self.width,
            w1: self.w1().to_vec(),
            b1: self.b1().to_vec(),
            w2: self.w2().to_vec(),
            b2: self.b2(),
            seed: self.seed,
        }
    }

    pub fn from_snapshot(s: &NetworkSnapshot) -> Result<Self, NetworkError> {
        if s.w1.len() != s.width * s.n || s.b1.len() != s.width || s.w2.len() != s.width {
            return Err(NetworkError::ParamLength {
                expected: param_count(s.n, s.width),
                got: s.w1.len() + s.b1.len() + s.w2.len() + 1,
            });
        }
        let mut params = Vec::with_capacity(param_count(s.n, s.width));
        params.extend_from_slice(&s.w1);
        params.extend_from_slice(&s.b1);
        params.extend_from_slice(&s.w2);
        params.push(s.b2);
        Self::from_params(s.n, s.width, params, s.seed)
    }
}
