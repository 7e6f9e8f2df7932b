//! Virtual queues and drift-plus-penalty bookkeeping.
//!
//! Three queue families turn the time-average constraints into per-slot
//! pressure: `Q` tracks the per-user rate floor, `Z` couples the auxiliary
//! rates to realized service, and `H` tracks the per-UAV average power cap.
//! Mean-rate stability of the positive parts is the success signal. The
//! auxiliary rates themselves have a closed-form per-user solution.
//!
//! Rates are carried in Mbps and powers in watts throughout.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueState {
    /// Rate-floor queues, one per user.
    pub q: Vec<f64>,
    /// Auxiliary-rate queues, one per user.
    pub z: Vec<f64>,
    /// Average-power queues, one per UAV.
    pub h: Vec<f64>,
    /// Slot counter, starting at 1.
    pub t: usize,
}

impl QueueState {
    pub fn new(n_users: usize, n_uavs: usize) -> Self {
        Self {
            q: vec![0.0; n_users],
            z: vec![0.0; n_users],
            h: vec![0.0; n_uavs],
            t: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapParams {
    /// Penalty weight trading constraint pressure against utility.
    pub v: f64,
    /// Power trade-off coefficient in the utility.
    pub rho: f64,
    /// Per-user rate requirement, Mbps.
    pub c_th: Vec<f64>,
    /// Per-UAV average total power cap, watts.
    pub p_tilde: Vec<f64>,
    /// Per-UAV instantaneous total power cap, watts.
    pub p_hat: Vec<f64>,
    /// Per-UAV circuit power, watts.
    pub p_c: Vec<f64>,
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Apply the three queue recurrences once and advance the slot counter.
pub fn update_queues(
    state: &mut QueueState,
    u: &[f64],
    gamma: &[f64],
    p_tot: &[f64],
    params: &LyapParams,
) -> Result<()> {
    let n = state.q.len();
    let j = state.h.len();
    if u.len() != n || gamma.len() != n || params.c_th.len() != n {
        return Err(Error::Integrity("user-indexed vectors disagree in length".into()));
    }
    if p_tot.len() != j || params.p_tilde.len() != j {
        return Err(Error::Integrity("uav-indexed vectors disagree in length".into()));
    }
    for i in 0..n {
        state.q[i] += params.c_th[i] - u[i];
        state.z[i] += gamma[i] - u[i];
    }
    for k in 0..j {
        state.h[k] += p_tot[k] - params.p_tilde[k];
    }
    state.t += 1;
    Ok(())
}

/// `(S_Q, S_Z, S_H)`: largest positive part of each family divided by t.
pub fn stability_metrics(state: &QueueState) -> (f64, f64, f64) {
    let t = state.t.max(1) as f64;
    let fold = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(pos(*x))) / t;
    (fold(&state.q), fold(&state.z), fold(&state.h))
}

/// Drift bound constant: sum of squared per-user rate caps plus half the sum
/// of squared per-UAV power caps.
pub fn bound_constant(u_max: &[f64], p_hat: &[f64]) -> f64 {
    u_max.iter().map(|v| v * v).sum::<f64>() + p_hat.iter().map(|v| v * v / 2.0).sum::<f64>()
}

/// Quadratic Lyapunov function of the positive parts.
pub fn lyapunov_value(state: &QueueState) -> f64 {
    let s = |v: &[f64]| v.iter().map(|x| pos(*x) * pos(*x)).sum::<f64>();
    0.5 * (s(&state.q) + s(&state.z) + s(&state.h))
}

/// Utility of a rate vector: sum of log2(1 + rate).
pub fn fairness_utility(rates: &[f64]) -> f64 {
    rates.iter().map(|g| (1.0 + g).log2()).sum()
}

/// Upper bound of the per-slot drift-plus-penalty at a complete decision
/// (`p_tx` is transmit power only, circuit power enters via the params).
pub fn drift_penalty_rhs(
    state: &QueueState,
    u: &[f64],
    gamma: &[f64],
    p_tx: &[f64],
    u_max: &[f64],
    params: &LyapParams,
) -> f64 {
    let b = bound_constant(u_max, &params.p_hat);
    let mut rhs = b;
    for i in 0..state.q.len() {
        rhs += pos(state.q[i]) * params.c_th[i];
        rhs += pos(state.z[i]) * gamma[i];
        rhs -= (pos(state.q[i]) + pos(state.z[i])) * u[i];
    }
    for j in 0..state.h.len() {
        rhs -= pos(state.h[j]) * (params.p_tilde[j] - params.p_c[j]);
        rhs += params.v * params.rho * params.p_c[j];
        rhs += (params.v * params.rho + pos(state.h[j])) * p_tx[j];
    }
    rhs - params.v * fairness_utility(gamma)
}

/// Closed-form per-user auxiliary rates on `[0, u_max]`.
pub fn solve_gamma(state: &QueueState, u_max: &[f64], params: &LyapParams) -> Vec<f64> {
    state
        .z
        .iter()
        .zip(u_max)
        .map(|(z, um)| {
            let zp = pos(*z);
            if zp == 0.0 {
                *um
            } else {
                (params.v / (zp * LN_2) - 1.0).max(0.0).min(*um)
            }
        })
        .collect()
}

/// Interference-free cap on a user's rate in Mbps: full system bandwidth at
/// the best coefficient over UAVs, with the vertical gap as the closest
/// possible approach.
pub fn u_max_mbps(w_tot_hz: f64, p_hat: f64, p_c: f64, theta: f64, n0: f64, dg2: f64) -> f64 {
    let snr = (p_hat - p_c) * theta / (n0 * w_tot_hz * dg2);
    w_tot_hz * (1.0 + snr).log2() * 1e-6
}
