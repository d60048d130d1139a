//! A small fully connected network used as the Q-function approximator.
//!
//! Parameters live in one flat vector. For each layer `l` mapping `in -> out`
//! the block is the `out × in` weight matrix (row-major) followed by `out`
//! biases; layers are stored in order. Hidden layers use the rectifier, the
//! output layer is linear.
//!
//! # Serialized layout
//!
//! All integers and floats are little-endian:
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 8            | magic `AFLMLP01`                          |
//! | 4 (`u32`)    | number of entries in the layer-dims list  |
//! | 4 each       | layer dims, input first                   |
//! | 8 (`u64`)    | parameter count `P`                       |
//! | 8·P (`f64`)  | flat parameters in the layout above       |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"AFLMLP01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// He-style uniform initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let mut rng = seed::rng(seed, &[seed::stream::NETWORK]);
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            params.extend((0..fan_in * out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn from_parts(dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let expected = param_count(&dims);
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: params.len(),
            });
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.dims[..=l]);
        (start, start + self.dims[l] * self.dims[l + 1])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Multiplies the output layer's weights and biases by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let l = self.num_layers() - 1;
        let (w, _) = self.layer_offsets(l);
        for p in &mut self.params[w..] {
            *p *= c;
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut acts = Vec::new();
        self.forward_cached(input, &mut acts);
        Ok(acts.pop().unwrap())
    }

    /// Fills `acts` with the input followed by each layer's output
    /// (post-activation for hidden layers).
    fn forward_cached(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(input.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let x = &acts[l];
            let mut out = self.params[b..b + n_out].to_vec();
            for (o, y) in out.iter_mut().enumerate() {
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                *y += dot(row, x);
                if l != last && *y < 0.0 {
                    *y = 0.0;
                }
            }
            acts.push(out);
        }
    }

    /// Squared TD error on the chosen actions and its gradient.
    ///
    /// `loss = 1/2 · mean_i (targets[i] − Q(states[i], actions[i]))²`; only the
    /// chosen action's output unit receives gradient.
    pub fn td_loss_and_grads(
        &self,
        states: &[&[f64]],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if states.is_empty() || states.len() != actions.len() || states.len() != targets.len() {
            return Err(Error::Dimension {
                expected: states.len(),
                got: actions.len().min(targets.len()),
            });
        }
        let n = states.len() as f64;
        let mut grads = vec![0.0; self.params.len()];
        let mut acts = Vec::with_capacity(self.dims.len());
        let mut loss = 0.0;
        for ((state, &action), &y) in states.iter().zip(actions).zip(targets) {
            if state.len() != self.input_dim() {
                return Err(Error::Dimension {
                    expected: self.input_dim(),
                    got: state.len(),
                });
            }
            if action >= self.output_dim() {
                return Err(Error::Dimension {
                    expected: self.output_dim(),
                    got: action + 1,
                });
            }
            self.forward_cached(state, &mut acts);
            let q = acts[self.num_layers()][action];
            let err = y - q;
            loss += 0.5 * err * err;

            let mut delta = vec![0.0; self.output_dim()];
            delta[action] = -err / n;
            for l in (0..self.num_layers()).rev() {
                let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
                let (w, b) = self.layer_offsets(l);
                let x = &acts[l];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grads[b + o] += d;
                    let row = w + o * n_in..w + (o + 1) * n_in;
                    let weights = &self.params[row.clone()];
                    for ((g, p), (xj, wj)) in grads[row].iter_mut().zip(prev.iter_mut()).zip(x.iter().zip(weights)) {
                        *g += d * xj;
                        *p += d * wj;
                    }
                }
                if l > 0 {
                    // Rectifier derivative, using the stored post-activation.
                    for (p, a) in prev.iter_mut().zip(x) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((loss / n, grads))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + 4 * self.dims.len() + 8 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a network parameter file".into()));
        }
        let layers = r.u32()? as usize;
        let dims = (0..layers)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = r.u64()? as usize;
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after network parameters".into()));
        }
        Self::from_parts(dims, params)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// RMSprop optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub acc: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl RmsPropState {
    pub fn new(num_params: usize, learning_rate: f64, rho: f64, eps: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || !(learning_rate >= 0.0) || !(eps >= 0.0) {
            return Err(Error::Config(format!(
                "rmsprop: need 0 < rho < 1, lr >= 0, eps >= 0 (got rho={rho}, lr={learning_rate}, eps={eps})"
            )));
        }
        Ok(Self {
            acc: vec![0.0; num_params],
            rho,
            eps,
            learning_rate,
        })
    }

    /// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − η·g / sqrt(acc + ε)`.
    pub fn step(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<()> {
        if grads.len() != net.params.len() || self.acc.len() != grads.len() {
            return Err(Error::Dimension {
                expected: net.params.len(),
                got: grads.len(),
            });
        }
        for ((p, a), &g) in net.params.iter_mut().zip(self.acc.iter_mut()).zip(grads) {
            *a = self.rho * *a + (1.0 - self.rho) * g * g;
            *p -= self.learning_rate * g / (*a + self.eps).sqrt();
        }
        Ok(())
    }
}

/// Inner product with four partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
