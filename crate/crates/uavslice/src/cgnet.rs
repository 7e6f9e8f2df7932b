//! Online channel-gain coefficient estimators.
//!
//! One two-hidden-layer MLP per link estimates the distance-free coefficient
//! from endpoint coordinates plus an LoS flag; the gain is reconstructed as
//! `coeff / D^2` downstream. Networks train on a replay buffer of measured
//! coefficients with Adam. Coordinates are scaled to about [0,1] and targets
//! are regressed in log10 space, since raw linear coefficients span orders of
//! magnitude; losses are therefore reported in the trained (log) domain.

use crate::geom::Vec3;
use crate::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const N_FEATURES: usize = 7;

/// Raw network input: two 3D endpoints plus the LoS flag.
///
/// For the BS-to-UAV link `a` is the UAV and `b` the BS position; for the
/// UAV-to-ground link `a` is the user and `b` the UAV position.
#[derive(Debug, Clone, Copy)]
pub struct CgInput {
    pub a: Vec3,
    pub b: Vec3,
    pub los: bool,
}

impl CgInput {
    pub fn features(&self, scale: f64) -> [f64; N_FEATURES] {
        [
            self.a.x / scale,
            self.a.y / scale,
            self.a.z / scale,
            self.b.x / scale,
            self.b.y / scale,
            self.b.z / scale,
            if self.los { 1.0 } else { 0.0 },
        ]
    }
}

/// Ring buffer of (features, log10-coefficient) training pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    pub minibatch: usize,
    data: VecDeque<([f64; N_FEATURES], f64)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, minibatch: usize) -> Self {
        Self {
            capacity,
            minibatch,
            data: VecDeque::new(),
        }
    }

    /// Store a measured coefficient; the newest sample replaces the oldest
    /// once the buffer is full. Nonpositive measurements are rejected since
    /// the log-domain target would be undefined.
    pub fn observe(&mut self, features: [f64; N_FEATURES], measured_coeff: f64) -> Result<()> {
        if !(measured_coeff > 0.0) {
            return Err(Error::Domain(format!(
                "measured coefficient must be positive, got {measured_coeff}"
            )));
        }
        self.data.push_back((features, measured_coeff.log10()));
        while self.data.len() > self.capacity {
            self.data.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: usize) -> &([f64; N_FEATURES], f64) {
        &self.data[idx]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    step: u64,
}

/// MLP coefficient estimator: input -> h1 -> h2 -> 1, rectifier hidden
/// layers, identity output, Xavier-initialized, Adam-trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CgNet {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
    adam: AdamState,
    pub lr: f64,
    /// Coordinate scale used by `CgInput::features`.
    pub norm_scale: f64,
    /// Linear floor applied to the reconstructed coefficient.
    pub coeff_floor: f64,
}

fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

impl CgNet {
    pub fn new(hidden: (usize, usize), lr: f64, norm_scale: f64, rng: &mut impl Rng) -> Self {
        let dims = [N_FEATURES, hidden.0, hidden.1, 1];
        let mut w = Vec::new();
        let mut b = Vec::new();
        for k in 0..3 {
            w.push(xavier(dims[k], dims[k + 1], rng));
            b.push(Array1::zeros(dims[k + 1]));
        }
        let adam = AdamState {
            m: w.iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            v: w.iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            mb: b.iter().map(|m| Array1::zeros(m.raw_dim())).collect(),
            vb: b.iter().map(|m| Array1::zeros(m.raw_dim())).collect(),
            step: 0,
        };
        CgNet {
            w,
            b,
            adam,
            lr,
            norm_scale,
            coeff_floor: 1e-12,
        }
    }

    fn forward_cached(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut acts = Vec::with_capacity(2);
        let mut h = x.clone();
        for k in 0..2 {
            let mut z = h.dot(&self.w[k]) + &self.b[k];
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z.clone());
            h = z;
        }
        let out = h.dot(&self.w[2]) + &self.b[2];
        (acts, out)
    }

    /// Raw trained-domain output (log10 of the coefficient).
    pub fn forward_features(&self, feat: &[f64; N_FEATURES]) -> f64 {
        let x = Array2::from_shape_vec((1, N_FEATURES), feat.to_vec()).expect("shape");
        let (_, out) = self.forward_cached(&x);
        out[(0, 0)]
    }

    pub fn forward(&self, input: &CgInput) -> f64 {
        self.forward_features(&input.features(self.norm_scale))
    }

    /// Linear coefficient estimate, floored at a small positive value.
    pub fn estimate_coeff(&self, input: &CgInput) -> f64 {
        10f64.powf(self.forward(input)).max(self.coeff_floor)
    }

    /// Reconstructed linear gain `coeff / D^2`.
    pub fn estimate_gain(&self, input: &CgInput, distance_m: f64) -> Result<f64> {
        if distance_m <= 0.0 {
            return Err(Error::Domain("gain needs a positive distance".into()));
        }
        Ok(self.estimate_coeff(input) / (distance_m * distance_m))
    }

    /// Mean squared error and gradients on a batch (targets in log domain).
    pub fn loss_and_grads(
        &self,
        x: &Array2<f64>,
        y: &Array1<f64>,
    ) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let n = x.nrows() as f64;
        let (acts, out) = self.forward_cached(x);
        let err = &out.column(0).to_owned() - y;
        let loss = err.iter().map(|e| e * e).sum::<f64>() / n;

        let dout = err.insert_axis(Axis(1)) * (2.0 / n);
        let mut gw = vec![Array2::zeros((0, 0)); 3];
        let mut gb = vec![Array1::zeros(0); 3];

        gw[2] = acts[1].t().dot(&dout);
        gb[2] = dout.sum_axis(Axis(0));
        let da2 = dout.dot(&self.w[2].t());
        let dz2 = &da2 * &acts[1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        gw[1] = acts[0].t().dot(&dz2);
        gb[1] = dz2.sum_axis(Axis(0));
        let da1 = dz2.dot(&self.w[1].t());
        let dz1 = &da1 * &acts[0].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        gw[0] = x.t().dot(&dz1);
        gb[0] = dz1.sum_axis(Axis(0));

        (loss, gw, gb)
    }

    pub fn loss_on(&self, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let n = x.nrows() as f64;
        let (_, out) = self.forward_cached(x);
        out.column(0)
            .iter()
            .zip(y.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / n
    }

    fn adam_apply(&mut self, gw: Vec<Array2<f64>>, gb: Vec<Array1<f64>>) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        for k in 0..3 {
            let m = &mut self.adam.m[k];
            let v = &mut self.adam.v[k];
            *m = &*m * B1 + &(&gw[k] * (1.0 - B1));
            *v = &*v * B2 + &gw[k].mapv(|g| g * g) * (1.0 - B2);
            let update = m.mapv(|mi| mi / c1)
                / (v.mapv(|vi| (vi / c2).sqrt()) + EPS);
            self.w[k] = &self.w[k] - &(update * self.lr);

            let mb = &mut self.adam.mb[k];
            let vb = &mut self.adam.vb[k];
            *mb = &*mb * B1 + &(&gb[k] * (1.0 - B1));
            *vb = &*vb * B2 + &gb[k].mapv(|g| g * g) * (1.0 - B2);
            let upd_b = mb.mapv(|mi| mi / c1)
                / (vb.mapv(|vi| (vi / c2).sqrt()) + EPS);
            self.b[k] = &self.b[k] - &(upd_b * self.lr);
        }
    }

    /// One Adam step on a random minibatch; returns the pre-update minibatch
    /// loss, or `None` while the buffer is smaller than a minibatch.
    pub fn train_step(&mut self, buf: &ReplayBuffer, rng: &mut impl Rng) -> Option<f64> {
        if buf.len() < buf.minibatch {
            return None;
        }
        let picks = rand::seq::index::sample(rng, buf.len(), buf.minibatch);
        let mut x = Array2::zeros((buf.minibatch, N_FEATURES));
        let mut y = Array1::zeros(buf.minibatch);
        for (row, idx) in picks.iter().enumerate() {
            let (f, t) = buf.get(idx);
            for c in 0..N_FEATURES {
                x[(row, c)] = f[c];
            }
            y[row] = *t;
        }
        let (loss, gw, gb) = self.loss_and_grads(&x, &y);
        self.adam_apply(gw, gb);
        Some(loss)
    }

    /// Hidden layer widths `(h1, h2)`.
    pub fn hidden_widths(&self) -> (usize, usize) {
        (self.w[0].ncols(), self.w[1].ncols())
    }

    /// Nudge one weight; used by finite-difference gradient verification.
    pub fn perturb_weight(&mut self, layer: usize, row: usize, col: usize, delta: f64) {
        self.w[layer][(row, col)] += delta;
    }

    /// Nudge one bias; used by finite-difference gradient verification.
    pub fn perturb_bias(&mut self, layer: usize, idx: usize, delta: f64) {
        self.b[layer][idx] += delta;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("net serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("net json: {e}"),
        })
    }

    #[cfg(test)]
    pub(crate) fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0..3 {
            out.extend(self.w[k].iter());
            out.extend(self.b[k].iter());
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn set_params_flat(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for k in 0..3 {
            for v in self.w[k].iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in self.b[k].iter_mut() {
                *v = *it.next().unwrap();
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn zero_params(&mut self) {
        for k in 0..3 {
            self.w[k].fill(0.0);
            self.b[k].fill(0.0);
        }
    }
}
