//! Distributed echo-state-network location prediction.
//!
//! Each agent keeps a per-user reservoir state driven by the (forward-filled)
//! Beacon history and a ring of the most recent input/state pairs. Training
//! solves one ridge regression per user whose data are scattered across
//! agents, via ADMM consensus on the readout matrix: local normal-equation
//! solves, a global aggregation, and gradient-ascent multiplier updates.
//! Prediction rolls the readout out closed-loop for `K` future slots.
//!
//! Positions are handled in kilometres throughout this module so the tanh
//! reservoir operates in its responsive range.

use crate::geom::Vec2;
use crate::linalg::{frobenius, spectral_radius, Lu};
use crate::mobility::BeaconLog;
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const N_INPUT: usize = 2;
pub const N_OUTPUT: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsnHyper {
    /// History length: number of training pairs per window.
    pub q_history: usize,
    /// Prediction horizon in slots.
    pub k_horizon: usize,
    /// Ridge factor on the global readout.
    pub xi: f64,
    /// Consensus penalty.
    pub lambda: f64,
    /// Multiplier step size.
    pub eta: f64,
    /// Maximum ADMM iterations.
    pub r_max: usize,
    /// Reservoir recurrent matrix is rescaled to this spectral radius.
    pub spectral_radius: f64,
    /// Consensus residual threshold (Frobenius) for early exit.
    pub tol: f64,
}

impl EsnHyper {
    pub fn validate(&self) -> Result<()> {
        if self.q_history < 2 || self.k_horizon < 1 {
            return Err(Error::Config("need q_history >= 2 and k_horizon >= 1".into()));
        }
        if self.xi <= 0.0 || self.lambda <= 0.0 || self.eta <= 0.0 {
            return Err(Error::Config("xi, lambda, eta must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed random reservoir, shared by every agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reservoir {
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
}

impl Reservoir {
    /// Uniform(0,1) init; the recurrent matrix is rescaled to the requested
    /// spectral radius so the echo-state property holds at this size.
    pub fn generate(n_reservoir: usize, radius: f64, rng: &mut impl Rng) -> Self {
        let w_in = Array2::from_shape_fn((n_reservoir, N_INPUT), |_| rng.random_range(0.0..1.0));
        let mut w_rec =
            Array2::from_shape_fn((n_reservoir, n_reservoir), |_| rng.random_range(0.0..1.0));
        let rho = spectral_radius(&w_rec, 100);
        if rho > 0.0 {
            w_rec *= radius / rho;
        }
        Reservoir { w_in, w_rec }
    }

    pub fn size(&self) -> usize {
        self.w_rec.nrows()
    }

    /// One state update: `q <- tanh(W_in x + W_rec q)`.
    pub fn step(&self, prev: &Array1<f64>, x_km: Vec2) -> Array1<f64> {
        let inp = Array1::from(vec![x_km.x, x_km.y]);
        let mut s = self.w_in.dot(&inp) + self.w_rec.dot(prev);
        s.mapv_inplace(f64::tanh);
        s
    }
}

/// One remembered slot: the forward-filled input and the state after it.
#[derive(Debug, Clone)]
pub struct RingEntry {
    pub slot: usize,
    pub input_km: Vec2,
    pub state: Array1<f64>,
}

/// Per-agent reservoir states and input/state rings for every user.
#[derive(Debug, Clone)]
pub struct AgentMemory {
    states: Vec<Array1<f64>>,
    rings: Vec<VecDeque<RingEntry>>,
    seen: Vec<bool>,
    ring_cap: usize,
}

impl AgentMemory {
    pub fn new(n_users: usize, n_reservoir: usize, q_history: usize) -> Self {
        Self {
            states: vec![Array1::zeros(n_reservoir); n_users],
            rings: vec![VecDeque::new(); n_users],
            seen: vec![false; n_users],
            ring_cap: q_history + 1,
        }
    }

    /// Advance every observed user by one slot, forward-filling positions
    /// from the Beacon log (missing beacons repeat the last known position).
    pub fn ingest(&mut self, res: &Reservoir, log: &BeaconLog, t: usize) {
        for user in 0..self.rings.len() {
            let Some((_, pos_m)) = log.last(user) else {
                continue; // never heard from this user
            };
            let x = pos_m * 1e-3;
            let next = res.step(&self.states[user], x);
            self.states[user] = next.clone();
            self.seen[user] = true;
            let ring = &mut self.rings[user];
            ring.push_back(RingEntry {
                slot: t,
                input_km: x,
                state: next,
            });
            while ring.len() > self.ring_cap {
                ring.pop_front();
            }
        }
    }

    pub fn warm(&self, user: usize) -> bool {
        self.rings[user].len() >= self.ring_cap
    }

    pub fn seen(&self, user: usize) -> bool {
        self.seen[user]
    }

    pub fn state(&self, user: usize) -> &Array1<f64> {
        &self.states[user]
    }

    pub fn last_input(&self, user: usize) -> Option<Vec2> {
        self.rings[user].back().map(|e| e.input_km)
    }

    pub fn last_slot(&self, user: usize) -> Option<usize> {
        self.rings[user].back().map(|e| e.slot)
    }

    pub fn ring(&self, user: usize) -> &VecDeque<RingEntry> {
        &self.rings[user]
    }
}

/// The per-user training system of one agent: rows `[x^T q^T]` at slots
/// `t-1..t-Q` paired with the next-slot positions.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Assemble the hidden matrix and targets from an agent's ring.
/// Returns `None` while the window is cold (fewer than Q+1 samples).
pub fn build_local_system(mem: &AgentMemory, user: usize, q_history: usize) -> Option<LocalSystem> {
    let ring = mem.ring(user);
    if ring.len() < q_history + 1 {
        return None;
    }
    let n_res = ring.back().expect("nonempty ring").state.len();
    let d = N_INPUT + n_res;
    let mut x = Array2::zeros((q_history, d));
    let mut y = Array2::zeros((q_history, N_OUTPUT));
    let newest = ring.len() - 1;
    for r in 1..=q_history {
        let src = &ring[newest - r];
        let tgt = &ring[newest - r + 1];
        let row = r - 1;
        x[(row, 0)] = src.input_km.x;
        x[(row, 1)] = src.input_km.y;
        for (c, v) in src.state.iter().enumerate() {
            x[(row, N_INPUT + c)] = *v;
        }
        y[(row, 0)] = tgt.input_km.x;
        y[(row, 1)] = tgt.input_km.y;
    }
    Some(LocalSystem { x, y })
}

/// Readout weights: per-agent locals, multipliers, and the global consensus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputWeights {
    pub w_hat: Array2<f64>,
    pub locals: Vec<Array2<f64>>,
    pub multipliers: Vec<Array2<f64>>,
}

impl OutputWeights {
    pub fn zeros(dim: usize, n_agents: usize) -> Self {
        Self {
            w_hat: Array2::zeros((dim, N_OUTPUT)),
            locals: vec![Array2::zeros((dim, N_OUTPUT)); n_agents],
            multipliers: vec![Array2::zeros((dim, N_OUTPUT)); n_agents],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("weights json: {e}"),
        })
    }
}

struct Prepared<'a> {
    x: &'a Array2<f64>,
    xty: Array2<f64>,
    /// LU of the small Gram matrix `lambda I + X X^T` (Woodbury form).
    lu: Lu,
}

fn prepare<'a>(systems: &'a [LocalSystem], lambda: f64) -> Result<Vec<Prepared<'a>>> {
    systems
        .iter()
        .map(|s| {
            let q = s.x.nrows();
            let mut gram = s.x.dot(&s.x.t());
            for i in 0..q {
                gram[(i, i)] += lambda;
            }
            Ok(Prepared {
                x: &s.x,
                xty: s.x.t().dot(&s.y),
                lu: Lu::factor(&gram)
                    .map_err(|_| Error::Numerical("ADMM local factorization failed".into()))?,
            })
        })
        .collect()
}

/// Solve `(X^T X + lambda I) W = rhs` through the Q-dimensional Gram system.
fn local_solve(p: &Prepared<'_>, rhs: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let xr = p.x.dot(rhs);
    let s = p.lu.solve_mat(&xr);
    let corr = p.x.t().dot(&s);
    (rhs - &corr) / lambda
}

fn round_prepared(prep: &[Prepared<'_>], w: &mut OutputWeights, hyper: &EsnHyper) -> f64 {
    let j = prep.len();
    // Local ridge solves against the broadcast consensus.
    for (a, p) in prep.iter().enumerate() {
        let rhs = &p.xty + &(&w.w_hat * hyper.lambda) - &w.multipliers[a];
        w.locals[a] = local_solve(p, &rhs, hyper.lambda);
    }
    // Aggregation.
    let mut acc = Array2::zeros(w.w_hat.raw_dim());
    for a in 0..j {
        acc = acc + &w.multipliers[a] + &(&w.locals[a] * hyper.lambda);
    }
    w.w_hat = acc / (hyper.xi + hyper.lambda * j as f64);
    // Multiplier ascent.
    let mut residual: f64 = 0.0;
    for a in 0..j {
        let diff = &w.locals[a] - &w.w_hat;
        let r = frobenius(&diff);
        residual = if r.is_finite() { residual.max(r) } else { f64::INFINITY };
        w.multipliers[a] = &w.multipliers[a] + &(diff * hyper.eta);
    }
    residual
}

/// One ADMM iteration; returns the post-round consensus residual
/// `max_j ||W_j - W_hat||_F`.
pub fn admm_round(systems: &[LocalSystem], w: &mut OutputWeights, hyper: &EsnHyper) -> Result<f64> {
    let prep = prepare(systems, hyper.lambda)?;
    Ok(round_prepared(&prep, w, hyper))
}

/// The augmented Lagrangian of the consensus problem.
pub fn lagrangian(systems: &[LocalSystem], w: &OutputWeights, hyper: &EsnHyper) -> f64 {
    let mut l = 0.5 * hyper.xi * w.w_hat.iter().map(|v| v * v).sum::<f64>();
    for (a, s) in systems.iter().enumerate() {
        let fit = s.x.dot(&w.locals[a]) - &s.y;
        l += 0.5 * fit.iter().map(|v| v * v).sum::<f64>();
        let diff = &w.locals[a] - &w.w_hat;
        l += (&w.multipliers[a] * &diff).sum();
        l += 0.5 * hyper.lambda * diff.iter().map(|v| v * v).sum::<f64>();
    }
    l
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub weights: OutputWeights,
    pub iterations: usize,
    pub converged: bool,
    /// Consensus residual after every round.
    pub residuals: Vec<f64>,
}

/// Iterate ADMM rounds from the zero initialization until the consensus
/// residual drops below tolerance or `r_max` is hit. Non-convergence still
/// returns the final iterate, flagged through `converged`.
pub fn train_consensus(systems: &[LocalSystem], hyper: &EsnHyper) -> Result<TrainResult> {
    if systems.is_empty() {
        return Err(Error::Integrity("consensus needs at least one agent".into()));
    }
    let dim = systems[0].x.ncols();
    for s in systems {
        if s.x.ncols() != dim || s.y.ncols() != N_OUTPUT || s.x.nrows() != s.y.nrows() {
            return Err(Error::Integrity("inconsistent local system shapes".into()));
        }
    }
    let mut w = OutputWeights::zeros(dim, systems.len());
    let prep = prepare(systems, hyper.lambda)?;
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut best = (f64::INFINITY, w.clone());
    for r in 0..hyper.r_max {
        let res = round_prepared(&prep, &mut w, hyper);
        residuals.push(res);
        iterations = r + 1;
        if res < best.0 {
            best = (res, w.clone());
        }
        if res <= hyper.tol {
            converged = true;
            break;
        }
        // A diverging multiplier step cannot recover; hand back the best
        // iterate seen instead of amplified garbage.
        if !res.is_finite() || res > 1e9 * (residuals[0] + 1.0) {
            w = best.1.clone();
            break;
        }
    }
    if !converged {
        w = best.1.clone();
    }
    Ok(TrainResult {
        weights: w,
        iterations,
        converged,
        residuals,
    })
}

/// Closed-loop K-step rollout: emit `W^T [x; q]`, feed the (area-clipped)
/// prediction back as the next input, and advance the reservoir state.
pub fn predict_k(
    res: &Reservoir,
    w_hat: &Array2<f64>,
    state: &Array1<f64>,
    x_km: Vec2,
    k: usize,
    area_km: (f64, f64),
) -> Vec<Vec2> {
    let mut q = state.clone();
    let mut x = x_km;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut y = [0.0f64; N_OUTPUT];
        for (o, yo) in y.iter_mut().enumerate() {
            let mut acc = x.x * w_hat[(0, o)] + x.y * w_hat[(1, o)];
            for (i, s) in q.iter().enumerate() {
                acc += s * w_hat[(N_INPUT + i, o)];
            }
            *yo = acc;
        }
        let p = Vec2::new(y[0], y[1]).clamp_to(area_km.0, area_km.1);
        out.push(p);
        x = p;
        q = res.step(&q, x);
    }
    out
}
