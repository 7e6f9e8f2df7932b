//! Per-slot MBB decision engine.
//!
//! One slot's decision is an acceptance matching, UAV positions and transmit
//! powers. The three blocks are optimized alternately: an exact max-weight
//! bipartite matching, then two convex subproblems obtained by linearizing
//! the nonconvex rate and collision expressions around the current anchor
//! (touching, gradient-consistent minorants). The merit tracked across
//! iterations is the minimized objective of the slot problem; each block
//! leaves it no worse, so the loop converges monotonically.
//!
//! The solvers are deliberately small: the position problem is a smooth
//! concave maximization over per-UAV movement discs with a log-barrier on
//! the affine collision minorants; the power problem is a concave
//! maximization over a box. Both run projected gradient ascent with
//! backtracking to the configured KKT tolerance.

use crate::geom::Vec2;
use crate::lyap::QueueState;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

const MBPS: f64 = 1e-6;

fn pos_part(x: f64) -> f64 {
    x.max(0.0)
}

/// Controller-side channel model: estimated distance-free coefficients plus
/// the fixed vertical gaps, so gains vary analytically with UAV positions.
#[derive(Debug, Clone)]
pub struct GainModel {
    /// Estimated coefficient per (user, uav).
    pub theta: Vec<Vec<f64>>,
    /// Squared altitude gap per (user, uav).
    pub dg2: Vec<Vec<f64>>,
    /// Horizontal user positions the controller believes in.
    pub user_xy: Vec<Vec2>,
    /// Noise power spectral density, W/Hz.
    pub n0_w: f64,
    /// MBB bandwidth, Hz.
    pub w_e_hz: f64,
}

impl GainModel {
    pub fn n_users(&self) -> usize {
        self.theta.len()
    }

    pub fn n_uavs(&self) -> usize {
        self.theta.first().map_or(0, |r| r.len())
    }

    pub fn gain(&self, i: usize, k: usize, pos: &[Vec2]) -> f64 {
        self.theta[i][k] / (self.dg2[i][k] + pos[k].dist_sq(self.user_xy[i]))
    }

    /// Materialize the full gain matrix at given positions.
    pub fn gains_at(&self, pos: &[Vec2]) -> Vec<Vec<f64>> {
        (0..self.n_users())
            .map(|i| (0..self.n_uavs()).map(|k| self.gain(i, k, pos)).collect())
            .collect()
    }
}

/// SINR of user `i` served by UAV `j` under a gain matrix and powers.
pub fn sinr(i: usize, j: usize, powers: &[f64], gains: &[Vec<f64>], n0_w: f64, w_e_hz: f64) -> f64 {
    let interference: f64 = (0..powers.len())
        .filter(|k| *k != j)
        .map(|k| powers[k] * gains[i][k])
        .sum();
    powers[j] * gains[i][j] / (n0_w * w_e_hz + interference)
}

/// Achievable rate of user `i` in Mbps; zero when unserved.
pub fn user_rate_mbps(
    i: usize,
    accept: &[Option<usize>],
    powers: &[f64],
    gains: &[Vec<f64>],
    n0_w: f64,
    w_e_hz: f64,
) -> f64 {
    match accept[i] {
        None => 0.0,
        Some(j) => {
            if w_e_hz <= 0.0 {
                return 0.0;
            }
            let s = sinr(i, j, powers, gains, n0_w, w_e_hz);
            w_e_hz * (1.0 + s).log2() * MBPS
        }
    }
}

/// Per-user queue pressure `[Q]^+ + [Z]^+`.
pub fn queue_weights(queues: &QueueState) -> Vec<f64> {
    queues
        .q
        .iter()
        .zip(&queues.z)
        .map(|(q, z)| pos_part(*q) + pos_part(*z))
        .collect()
}

/// Matching weights: queue pressure times the rate the pair would achieve.
/// When every queue is empty (the initial slot), the queue-free fallback
/// weighs pairs by the rate alone.
pub fn match_weights(
    queues: &QueueState,
    pos: &[Vec2],
    powers: &[f64],
    gm: &GainModel,
) -> Vec<Vec<f64>> {
    let w = queue_weights(queues);
    let all_zero = w.iter().all(|v| *v == 0.0);
    let gains = gm.gains_at(pos);
    (0..gm.n_users())
        .map(|i| {
            (0..gm.n_uavs())
                .map(|j| {
                    if gm.w_e_hz <= 0.0 {
                        return 0.0;
                    }
                    let s = sinr(i, j, powers, &gains, gm.n0_w, gm.w_e_hz);
                    let rate = gm.w_e_hz * (1.0 + s).log2() * MBPS;
                    if all_zero {
                        rate
                    } else {
                        w[i] * rate
                    }
                })
                .collect()
        })
        .collect()
}

/// Min-cost rectangular assignment (rows <= cols, every row assigned) via
/// shortest augmenting paths with potentials. Returns col per row.
fn assign_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let r = cost.len();
    let c = cost.first().map_or(0, |row| row.len());
    debug_assert!(r <= c);
    const NONE: usize = usize::MAX;
    let mut job = vec![NONE; c + 1];
    let mut ys = vec![0.0f64; r];
    let mut yt = vec![0.0f64; c + 1];
    for cur in 0..r {
        let mut w_cur = c;
        job[w_cur] = cur;
        let mut min_to = vec![f64::INFINITY; c + 1];
        let mut prv = vec![NONE; c + 1];
        let mut in_z = vec![false; c + 1];
        while job[w_cur] != NONE {
            in_z[w_cur] = true;
            let j = job[w_cur];
            let mut delta = f64::INFINITY;
            let mut w_next = 0;
            for w in 0..c {
                if !in_z[w] {
                    let diff = cost[j][w] - ys[j] - yt[w];
                    if diff < min_to[w] {
                        min_to[w] = diff;
                        prv[w] = w_cur;
                    }
                    if min_to[w] < delta {
                        delta = min_to[w];
                        w_next = w;
                    }
                }
            }
            for w in 0..=c {
                if in_z[w] {
                    ys[job[w]] += delta;
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_cur = w_next;
        }
        loop {
            if w_cur == c {
                break;
            }
            let w_prev = prv[w_cur];
            job[w_cur] = job[w_prev];
            w_cur = w_prev;
        }
    }
    let mut row_to_col = vec![NONE; r];
    for w in 0..c {
        if job[w] != NONE {
            row_to_col[job[w]] = w;
        }
    }
    row_to_col
}

/// Best achievable total weight over one-to-one pairings, with some rows and
/// columns excluded.
fn matching_value(weights: &[Vec<f64>], banned_user: &[bool], banned_uav: &[bool]) -> f64 {
    let users: Vec<usize> = (0..weights.len()).filter(|i| !banned_user[*i]).collect();
    let uavs: Vec<usize> =
        (0..weights.first().map_or(0, |r| r.len())).filter(|j| !banned_uav[*j]).collect();
    if users.is_empty() || uavs.is_empty() {
        return 0.0;
    }
    // Nonnegative weights: a full assignment of the smaller side is optimal.
    let maxw = users
        .iter()
        .flat_map(|i| uavs.iter().map(move |j| weights[*i][*j]))
        .fold(0.0f64, f64::max);
    let (rows, cols, transposed) = if users.len() <= uavs.len() {
        (users.clone(), uavs.clone(), false)
    } else {
        (uavs.clone(), users.clone(), true)
    };
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|ri| {
            cols.iter()
                .map(|cj| {
                    let w = if transposed {
                        weights[*cj][*ri]
                    } else {
                        weights[*ri][*cj]
                    };
                    maxw - w
                })
                .collect()
        })
        .collect();
    let asg = assign_min_cost(&cost);
    rows.iter()
        .zip(&asg)
        .map(|(ri, cj)| {
            if transposed {
                weights[cols[*cj]][*ri]
            } else {
                weights[*ri][cols[*cj]]
            }
        })
        .sum()
}

/// Exact maximum-total-weight one-to-one matching. Among equal-weight optima
/// the lexicographically smallest (user, uav) pairs win, which pins the
/// result down deterministically. Pairs of zero weight are left unmatched.
pub fn match_requests(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_users = weights.len();
    let n_uavs = weights.first().map_or(0, |r| r.len());
    let mut accept = vec![None; n_users];
    if n_users == 0 || n_uavs == 0 {
        return accept;
    }
    let clean: Vec<Vec<f64>> = weights
        .iter()
        .map(|row| row.iter().map(|w| if w.is_finite() { pos_part(*w) } else { 0.0 }).collect())
        .collect();
    let mut banned_user = vec![false; n_users];
    let mut banned_uav = vec![false; n_uavs];
    let total = matching_value(&clean, &banned_user, &banned_uav);
    if total <= 0.0 {
        return accept;
    }
    let tol = 1e-9 * total.max(1.0);
    let mut remaining = total;
    let mut slots_left = n_uavs.min(n_users);
    'outer: for i in 0..n_users {
        if slots_left == 0 || remaining <= tol {
            break 'outer;
        }
        for j in 0..n_uavs {
            if banned_user[i] || banned_uav[j] || clean[i][j] <= 0.0 {
                continue;
            }
            banned_user[i] = true;
            banned_uav[j] = true;
            let rest = matching_value(&clean, &banned_user, &banned_uav);
            if clean[i][j] + rest >= remaining - tol {
                accept[i] = Some(j);
                remaining -= clean[i][j];
                slots_left -= 1;
                if banned_user.iter().all(|b| *b) {
                    break 'outer;
                }
                break;
            }
            banned_user[i] = false;
            banned_uav[j] = false;
        }
    }
    accept
}

/// Linearization of the position subproblem around an anchor.
#[derive(Debug, Clone)]
pub struct ScaLocation {
    pub anchor: Vec<Vec2>,
    /// Log of total received density at the anchor, per user.
    pub d: Vec<f64>,
    /// Sensitivity of that log to each squared distance, per (user, uav).
    pub e: Vec<Vec<f64>>,
    /// Squared anchor distances per (user, uav).
    pub anchor_dist_sq: Vec<Vec<f64>>,
}

/// First-order coefficients of the rate lower bound at `anchor`.
pub fn linearize_location(anchor: &[Vec2], powers: &[f64], gm: &GainModel) -> ScaLocation {
    let n = gm.n_users();
    let j = gm.n_uavs();
    let mut d = vec![0.0; n];
    let mut e = vec![vec![0.0; j]; n];
    let mut ad = vec![vec![0.0; j]; n];
    for i in 0..n {
        let mut s = gm.n0_w * gm.w_e_hz;
        for k in 0..j {
            ad[i][k] = anchor[k].dist_sq(gm.user_xy[i]);
            s += powers[k] * gm.theta[i][k] / (gm.dg2[i][k] + ad[i][k]);
        }
        d[i] = s.log2();
        for k in 0..j {
            let dom = gm.dg2[i][k] + ad[i][k];
            e[i][k] = powers[k] * gm.theta[i][k] / (dom * dom * s * LN_2);
        }
    }
    ScaLocation {
        anchor: anchor.to_vec(),
        d,
        e,
        anchor_dist_sq: ad,
    }
}

/// Affine minorant of the squared distance from UAV `k` to user `i`.
pub fn b_minorant(lin: &ScaLocation, gm: &GainModel, i: usize, k: usize, v_k: Vec2) -> f64 {
    let a = lin.anchor[k] - gm.user_xy[i];
    -lin.anchor_dist_sq[i][k] + 2.0 * a.dot(v_k - gm.user_xy[i])
}

/// SCA rate lower bound for user `i` served by `j` at positions `v`, Mbps.
/// Returns `None` when a slack distance leaves the log domain.
pub fn sca_rate_mbps(
    lin: &ScaLocation,
    gm: &GainModel,
    i: usize,
    j: usize,
    v: &[Vec2],
    powers: &[f64],
) -> Option<f64> {
    let mut val = lin.d[i];
    for k in 0..gm.n_uavs() {
        val -= lin.e[i][k] * (v[k].dist_sq(gm.user_xy[i]) - lin.anchor_dist_sq[i][k]);
    }
    let mut s_int = gm.n0_w * gm.w_e_hz;
    for k in 0..gm.n_uavs() {
        if k == j || powers[k] * gm.theta[i][k] <= 0.0 {
            continue;
        }
        let dom = gm.dg2[i][k] + b_minorant(lin, gm, i, k, v[k]);
        if dom <= 0.0 {
            return None;
        }
        s_int += powers[k] * gm.theta[i][k] / dom;
    }
    if s_int <= 0.0 {
        return None;
    }
    Some(gm.w_e_hz * (val - s_int.log2()) * MBPS)
}

/// Analytic gradient of the SCA rate bound with respect to every UAV
/// position, Mbps per metre.
pub fn sca_rate_grad(
    lin: &ScaLocation,
    gm: &GainModel,
    i: usize,
    j: usize,
    v: &[Vec2],
    powers: &[f64],
) -> Vec<Vec2> {
    let scale = gm.w_e_hz * MBPS;
    let mut g = vec![Vec2::default(); v.len()];
    for k in 0..v.len() {
        let to_user = v[k] - gm.user_xy[i];
        g[k] = to_user * (-2.0 * scale * lin.e[i][k]);
    }
    let mut s_int = gm.n0_w * gm.w_e_hz;
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for k in 0..v.len() {
        if k == j || powers[k] * gm.theta[i][k] <= 0.0 {
            continue;
        }
        let dom = gm.dg2[i][k] + b_minorant(lin, gm, i, k, v[k]);
        let u = powers[k] * gm.theta[i][k] / dom;
        s_int += u;
        terms.push((k, u));
    }
    for (k, u) in terms {
        let coeff = scale * u * u / (powers[k] * gm.theta[i][k] * s_int * LN_2);
        let a = lin.anchor[k] - gm.user_xy[i];
        g[k] = g[k] + a * (2.0 * coeff);
    }
    g
}

/// Model rate of user `i` served by `j` at positions `v`, Mbps (the
/// nonconvex expression the SCA bound minorizes).
pub fn model_rate_mbps(gm: &GainModel, i: usize, j: usize, v: &[Vec2], powers: &[f64]) -> f64 {
    let gains = gm.gains_at(v);
    if gm.w_e_hz <= 0.0 {
        return 0.0;
    }
    let s = sinr(i, j, powers, &gains, gm.n0_w, gm.w_e_hz);
    gm.w_e_hz * (1.0 + s).log2() * MBPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptParams {
    pub v: f64,
    pub rho: f64,
    pub e_max_m: f64,
    pub d_min_m: f64,
    /// Per-UAV transmit power cap (instantaneous cap minus circuit power).
    pub p_max: Vec<f64>,
    /// Watts-to-queue-power-unit factor: the virtual power queues are kept
    /// in milliwatts, so the per-slot objective weighs decision watts by
    /// `(V rho + [H]^+) * power_scale`.
    pub power_scale: f64,
    pub kkt_tol: f64,
    pub sca_rel_tol: f64,
    pub sca_max_iters: usize,
}

/// How UAV positions evolve inside the alternating loop.
#[derive(Debug, Clone)]
pub enum MovementMode {
    /// Solve the SCA position subproblem.
    Optimize,
    /// Hovering deployment: positions never move.
    Frozen,
    /// Externally prescribed waypoints for this slot.
    Prescribed(Vec<Vec2>),
}

/// Complete per-slot decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotDecision {
    /// Serving UAV per user, at most one each way.
    pub accept: Vec<Option<usize>>,
    pub uav_pos: Vec<Vec2>,
    pub powers: Vec<f64>,
    pub w_u_hz: f64,
    pub w_e_hz: f64,
    pub gamma: Vec<f64>,
    /// Rate slack per user at the last position solve.
    pub eta: Vec<f64>,
    /// Squared-distance slack per (user, uav) at the last position solve.
    pub b_slack: Vec<Vec<f64>>,
    pub location_fallback: bool,
    pub power_fallback: bool,
}

impl SlotDecision {
    pub fn idle(n_users: usize, uav_pos: Vec<Vec2>, w_u_hz: f64, w_e_hz: f64) -> Self {
        let n_uavs = uav_pos.len();
        SlotDecision {
            accept: vec![None; n_users],
            uav_pos,
            powers: vec![0.0; n_uavs],
            w_u_hz,
            w_e_hz,
            gamma: vec![0.0; n_users],
            eta: vec![0.0; n_users],
            b_slack: vec![vec![0.0; n_uavs]; n_users],
            location_fallback: false,
            power_fallback: false,
        }
    }
}

/// Minimized slot objective: power pressure minus queue-weighted service,
/// evaluated with the controller's gain model.
pub fn merit(
    accept: &[Option<usize>],
    pos: &[Vec2],
    powers: &[f64],
    queues: &QueueState,
    gm: &GainModel,
    opt: &OptParams,
) -> f64 {
    let w = queue_weights(queues);
    let gains = gm.gains_at(pos);
    let mut val = 0.0;
    for (j, p) in powers.iter().enumerate() {
        val += (opt.v * opt.rho + pos_part(queues.h[j])) * opt.power_scale * p;
    }
    for i in 0..accept.len() {
        val -= w[i] * user_rate_mbps(i, accept, powers, &gains, gm.n0_w, gm.w_e_hz);
    }
    val
}

fn project_discs(v: &mut [Vec2], centers: &[Vec2], radius: f64) {
    for (p, c) in v.iter_mut().zip(centers) {
        let d = *p - *c;
        let n = d.norm();
        if n > radius {
            *p = *c + d * (radius / n);
        }
    }
}

struct LocationObjective<'a> {
    lin: &'a ScaLocation,
    gm: &'a GainModel,
    served: Vec<(usize, usize, f64)>, // (user, uav, weight)
    pairs: Vec<(usize, usize)>,       // interfering (user, uav) pairs in R~ terms
    d_min_sq: f64,
    powers: &'a [f64],
}

impl LocationObjective<'_> {
    fn f(&self, v: &[Vec2]) -> Option<f64> {
        let mut total = 0.0;
        for (i, j, w) in &self.served {
            total += w * sca_rate_mbps(self.lin, self.gm, *i, *j, v, self.powers)?;
        }
        Some(total)
    }

    fn collision_slacks(&self, v: &[Vec2]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..v.len() {
            for k in j + 1..v.len() {
                let delta = self.lin.anchor[j] - self.lin.anchor[k];
                let s = 2.0 * delta.dot(v[j] - v[k]) - delta.norm_sq() - self.d_min_sq;
                out.push((j, k, s));
            }
        }
        out
    }

    fn barrier(&self, v: &[Vec2], mu: f64) -> Option<f64> {
        let mut total = self.f(v)?;
        for (_, _, s) in self.collision_slacks(v) {
            if s <= 0.0 {
                return None;
            }
            total += mu * s.ln();
        }
        for (i, k) in &self.pairs {
            let dom = self.gm.dg2[*i][*k] + b_minorant(self.lin, self.gm, *i, *k, v[*k]);
            if dom <= 0.0 {
                return None;
            }
            total += mu * dom.ln();
        }
        Some(total)
    }

    fn grad(&self, v: &[Vec2], mu: f64) -> Vec<Vec2> {
        let gm = self.gm;
        let mut g = vec![Vec2::default(); v.len()];
        for (i, j, w) in &self.served {
            let scale = w * gm.w_e_hz * MBPS;
            // Quadratic minorant part.
            for k in 0..v.len() {
                let to_user = v[k] - gm.user_xy[*i];
                g[k] = g[k] + to_user * (-2.0 * scale * self.lin.e[*i][k]);
            }
            // Interference bound part.
            let mut s_int = gm.n0_w * gm.w_e_hz;
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for k in 0..v.len() {
                if k == *j || self.powers[k] * gm.theta[*i][k] <= 0.0 {
                    continue;
                }
                let dom = gm.dg2[*i][k] + b_minorant(self.lin, gm, *i, k, v[k]);
                let u = self.powers[k] * gm.theta[*i][k] / dom;
                s_int += u;
                terms.push((k, u));
            }
            for (k, u) in terms {
                let coeff = scale * u * u / (self.powers[k] * gm.theta[*i][k] * s_int * LN_2);
                let a = self.lin.anchor[k] - gm.user_xy[*i];
                g[k] = g[k] + a * (2.0 * coeff);
            }
        }
        // Barrier gradients.
        for (j, k, s) in self.collision_slacks(v) {
            let delta = self.lin.anchor[j] - self.lin.anchor[k];
            g[j] = g[j] + delta * (2.0 * mu / s);
            g[k] = g[k] + delta * (-2.0 * mu / s);
        }
        for (i, k) in &self.pairs {
            let dom = gm.dg2[*i][*k] + b_minorant(self.lin, gm, *i, *k, v[*k]);
            let a = self.lin.anchor[*k] - gm.user_xy[*i];
            g[*k] = g[*k] + a * (2.0 * mu / dom);
        }
        g
    }
}

/// One SCA position solve. Returns the new positions plus the slack values;
/// falls back to the anchor (flagged) when the solve cannot improve.
pub fn solve_location(
    prev_pos: &[Vec2],
    anchor: &[Vec2],
    accept: &[Option<usize>],
    powers: &[f64],
    queues: &QueueState,
    gm: &GainModel,
    opt: &OptParams,
) -> (Vec<Vec2>, Vec<f64>, Vec<Vec<f64>>, bool) {
    let n_uavs = anchor.len();
    let w = queue_weights(queues);
    let served: Vec<(usize, usize, f64)> = accept
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| (i, j, w[i])))
        .filter(|(_, _, wi)| *wi > 0.0)
        .collect();

    let finish = |v: &[Vec2], lin: &ScaLocation, fallback: bool| {
        let mut eta = vec![0.0; gm.n_users()];
        for (i, a) in accept.iter().enumerate() {
            if let Some(j) = a {
                eta[i] = sca_rate_mbps(lin, gm, i, *j, v, powers).unwrap_or(0.0);
            }
        }
        let mut b = vec![vec![0.0; n_uavs]; gm.n_users()];
        for i in 0..gm.n_users() {
            for k in 0..n_uavs {
                b[i][k] = b_minorant(lin, gm, i, k, v[k]);
            }
        }
        (v.to_vec(), eta, b, fallback)
    };

    // Degenerate anchors: separate coincident or touching UAVs slightly so
    // the collision minorant has an interior.
    let mut anchor = anchor.to_vec();
    let d_min_sq = opt.d_min_m * opt.d_min_m;
    for j in 0..n_uavs {
        for k in j + 1..n_uavs {
            if anchor[j].dist_sq(anchor[k]) <= d_min_sq * (1.0 + 1e-9) {
                let dir = if anchor[j].dist_sq(anchor[k]) < 1e-12 {
                    let a = 2.4 * (j as f64 + 1.0);
                    Vec2::new(a.cos(), a.sin()) * 0.1
                } else {
                    let d = anchor[j] - anchor[k];
                    d * (1e-3 / d.norm())
                };
                anchor[j] = anchor[j] + dir;
                anchor[k] = anchor[k] + dir * (-1.0);
            }
        }
    }
    project_discs(&mut anchor, prev_pos, opt.e_max_m);

    let lin = linearize_location(&anchor, powers, gm);
    if served.is_empty() {
        return finish(&anchor, &lin, false);
    }

    let pairs: Vec<(usize, usize)> = served
        .iter()
        .flat_map(|(i, j, _)| {
            (0..n_uavs)
                .filter(move |k| k != j)
                .map(move |k| (*i, k))
        })
        .filter(|(i, k)| powers[*k] * gm.theta[*i][*k] > 0.0)
        .collect();

    // UAVs the objective cannot see (serving nobody, interfering with
    // nobody at positive power) would otherwise drift to the analytic
    // center of the barrier; pin them to their anchors.
    let mut active = vec![false; n_uavs];
    for (_, j, _) in &served {
        active[*j] = true;
    }
    for (_, k) in &pairs {
        active[*k] = true;
    }

    let obj = LocationObjective {
        lin: &lin,
        gm,
        served,
        pairs,
        d_min_sq,
        powers: &powers.to_vec(),
    };

    let f_anchor = match obj.f(&anchor) {
        Some(v) => v,
        None => return finish(&anchor, &lin, true),
    };
    let scale = f_anchor.abs().max(1.0);

    let mut v = anchor.clone();
    let mut mu = 1e-2 * scale;
    let mut step = opt.e_max_m * 0.25;
    while mu > 1e-8 * scale {
        let mut cur = match obj.barrier(&v, mu) {
            Some(val) => val,
            None => break,
        };
        for _ in 0..200 {
            let mut g = obj.grad(&v, mu);
            for (j, gj) in g.iter_mut().enumerate() {
                if !active[j] {
                    *gj = Vec2::default();
                }
            }
            let gnorm = g.iter().map(|p| p.norm_sq()).sum::<f64>().sqrt();
            if gnorm * step < 1e-12 * opt.e_max_m {
                break;
            }
            let mut improved = false;
            let mut alpha = step;
            for _ in 0..40 {
                let mut cand: Vec<Vec2> = v
                    .iter()
                    .zip(&g)
                    .map(|(p, d)| *p + *d * (alpha / gnorm.max(1e-300)))
                    .collect();
                project_discs(&mut cand, prev_pos, opt.e_max_m);
                if let Some(val) = obj.barrier(&cand, mu) {
                    if val > cur + 1e-14 * scale {
                        v = cand;
                        cur = val;
                        step = alpha * 2.0;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        mu *= 0.1;
    }

    match obj.f(&v) {
        Some(f_final) if f_final >= f_anchor - 1e-12 * scale => finish(&v, &lin, false),
        _ => finish(&anchor, &lin, true),
    }
}

/// Power linearization constants at an anchor.
#[derive(Debug, Clone)]
pub struct ScaPower {
    pub anchor: Vec<f64>,
    /// Interference log at the anchor, per served user.
    pub f: Vec<f64>,
    /// Interference sensitivity, per (user, uav).
    pub g: Vec<Vec<f64>>,
}

pub fn linearize_power(
    anchor_p: &[f64],
    accept: &[Option<usize>],
    gains: &[Vec<f64>],
    n0_w: f64,
    w_e_hz: f64,
) -> ScaPower {
    let n = accept.len();
    let j_n = anchor_p.len();
    let mut f = vec![0.0; n];
    let mut g = vec![vec![0.0; j_n]; n];
    for i in 0..n {
        let Some(j) = accept[i] else { continue };
        let mut s_int = n0_w * w_e_hz;
        for k in 0..j_n {
            if k != j {
                s_int += anchor_p[k] * gains[i][k];
            }
        }
        f[i] = s_int.log2();
        for k in 0..j_n {
            if k != j {
                g[i][k] = gains[i][k] / (s_int * LN_2);
            }
        }
    }
    ScaPower {
        anchor: anchor_p.to_vec(),
        f,
        g,
    }
}

/// SCA rate lower bound of user `i` served by `j` at powers `p`, Mbps.
pub fn sca_power_rate_mbps(
    lin: &ScaPower,
    gains: &[Vec<f64>],
    i: usize,
    j: usize,
    p: &[f64],
    n0_w: f64,
    w_e_hz: f64,
) -> f64 {
    let mut s = n0_w * w_e_hz;
    for k in 0..p.len() {
        s += p[k] * gains[i][k];
    }
    let mut lin_term = 0.0;
    for k in 0..p.len() {
        if k != j {
            lin_term += lin.g[i][k] * (p[k] - lin.anchor[k]);
        }
    }
    w_e_hz * (s.log2() - lin.f[i] - lin_term) * MBPS
}

struct PowerObjective<'a> {
    lin: &'a ScaPower,
    gains: &'a [Vec<f64>],
    served: Vec<(usize, usize, f64)>,
    kappa: Vec<f64>,
    n0_w: f64,
    w_e_hz: f64,
}

impl PowerObjective<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        for (j, k) in self.kappa.iter().enumerate() {
            total -= k * p[j];
        }
        for (i, j, w) in &self.served {
            let mut s = self.n0_w * self.w_e_hz;
            for k in 0..p.len() {
                s += p[k] * self.gains[*i][k];
            }
            let mut lin_term = 0.0;
            for k in 0..p.len() {
                if k != *j {
                    lin_term += self.lin.g[*i][k] * (p[k] - self.lin.anchor[k]);
                }
            }
            total += w * self.w_e_hz * MBPS * (s.log2() - self.lin.f[*i] - lin_term);
        }
        total
    }

    fn grad(&self, p: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = self.kappa.iter().map(|k| -k).collect();
        for (i, j, w) in &self.served {
            let mut s = self.n0_w * self.w_e_hz;
            for k in 0..p.len() {
                s += p[k] * self.gains[*i][k];
            }
            let scale = w * self.w_e_hz * MBPS;
            for k in 0..p.len() {
                g[k] += scale * self.gains[*i][k] / (s * LN_2);
                if k != *j {
                    g[k] -= scale * self.lin.g[*i][k];
                }
            }
        }
        g
    }
}

/// One SCA power solve over the per-UAV box `[0, p_max]`.
pub fn solve_power(
    anchor_p: &[f64],
    accept: &[Option<usize>],
    pos: &[Vec2],
    queues: &QueueState,
    gm: &GainModel,
    opt: &OptParams,
) -> (Vec<f64>, bool) {
    let j_n = anchor_p.len();
    let p0: Vec<f64> = anchor_p
        .iter()
        .enumerate()
        .map(|(j, p)| p.clamp(0.0, opt.p_max[j]))
        .collect();
    let gains = gm.gains_at(pos);
    let w = queue_weights(queues);
    let served: Vec<(usize, usize, f64)> = accept
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| (i, j, w[i])))
        .filter(|(_, _, wi)| *wi > 0.0)
        .collect();
    let kappa: Vec<f64> = queues
        .h
        .iter()
        .map(|h| (opt.v * opt.rho + pos_part(*h)) * opt.power_scale)
        .collect();
    let obj = PowerObjective {
        lin: &linearize_power(&p0, accept, &gains, gm.n0_w, gm.w_e_hz),
        gains: &gains,
        served,
        kappa,
        n0_w: gm.n0_w,
        w_e_hz: gm.w_e_hz,
    };

    let v_anchor = obj.value(&p0);
    let scale = v_anchor.abs().max(1.0);
    let p_ref = opt.p_max.iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-9);
    let mut p = p0.clone();
    let mut cur = v_anchor;
    let mut step = p_ref * 0.25;
    for _ in 0..500 {
        let g = obj.grad(&p);
        // Projected-gradient KKT residual on the box.
        let mut residual = 0.0f64;
        for j in 0..j_n {
            let r = if p[j] <= 0.0 {
                pos_part(g[j])
            } else if p[j] >= opt.p_max[j] {
                pos_part(-g[j])
            } else {
                g[j].abs()
            };
            residual = residual.max(r);
        }
        if residual <= opt.kkt_tol * scale / p_ref {
            break;
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let mut improved = false;
        let mut alpha = step;
        for _ in 0..60 {
            let cand: Vec<f64> = p
                .iter()
                .zip(&g)
                .enumerate()
                .map(|(j, (pj, gj))| (pj + gj * (alpha / gnorm)).clamp(0.0, opt.p_max[j]))
                .collect();
            let val = obj.value(&cand);
            if val > cur + 1e-15 * scale {
                p = cand;
                cur = val;
                step = alpha * 2.0;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }

    if cur >= v_anchor - 1e-12 * scale {
        (p, false)
    } else {
        (p0.clone(), true)
    }
}

/// Alternating request / location / power optimization for one slot.
/// Returns the decision plus the merit recorded after every iteration
/// (index 0 is the initialization).
pub fn alternate(
    prev: &SlotDecision,
    queues: &QueueState,
    gm: &GainModel,
    opt: &OptParams,
    movement: &MovementMode,
) -> (SlotDecision, Vec<f64>) {
    let mut accept = prev.accept.clone();
    let mut pos = match movement {
        MovementMode::Prescribed(w) => w.clone(),
        _ => prev.uav_pos.clone(),
    };
    let mut powers: Vec<f64> = prev
        .powers
        .iter()
        .enumerate()
        .map(|(j, p)| p.clamp(0.0, opt.p_max[j]))
        .collect();
    let mut eta = prev.eta.clone();
    let mut b_slack = prev.b_slack.clone();
    let mut loc_fb = false;
    let mut pow_fb = false;

    let mut trace = vec![merit(&accept, &pos, &powers, queues, gm, opt)];
    for _ in 0..opt.sca_max_iters {
        let wmat = match_weights(queues, &pos, &powers, gm);
        accept = match_requests(&wmat);
        if matches!(movement, MovementMode::Optimize) {
            let (new_pos, new_eta, new_b, fb) =
                solve_location(&prev.uav_pos, &pos, &accept, &powers, queues, gm, opt);
            pos = new_pos;
            eta = new_eta;
            b_slack = new_b;
            loc_fb |= fb;
        }
        let (new_p, fb_p) = solve_power(&powers, &accept, &pos, queues, gm, opt);
        powers = new_p;
        pow_fb |= fb_p;

        let m = merit(&accept, &pos, &powers, queues, gm, opt);
        let prev_m = *trace.last().expect("nonempty trace");
        trace.push(m);
        if (prev_m - m).abs() <= opt.sca_rel_tol * prev_m.abs().max(1.0) {
            break;
        }
    }

    let d = SlotDecision {
        accept,
        uav_pos: pos,
        powers,
        w_u_hz: prev.w_u_hz,
        w_e_hz: prev.w_e_hz,
        gamma: prev.gamma.clone(),
        eta,
        b_slack,
        location_fallback: loc_fb,
        power_fallback: pow_fb,
    };
    (d, trace)
}

/// Check every hard per-slot constraint; returns human-readable violations.
pub fn validate(
    d: &SlotDecision,
    prev_pos: &[Vec2],
    opt: &OptParams,
    w_tot_hz: f64,
) -> Vec<String> {
    let mut bad = Vec::new();
    let tol = 1e-9;
    let mut used = vec![false; d.uav_pos.len()];
    for (i, a) in d.accept.iter().enumerate() {
        if let Some(j) = a {
            if used[*j] {
                bad.push(format!("uav {j} serves more than one user"));
            }
            used[*j] = true;
            if *j >= d.uav_pos.len() {
                bad.push(format!("user {i} matched to unknown uav {j}"));
            }
        }
    }
    for (j, p) in d.powers.iter().enumerate() {
        if *p < -tol || *p > opt.p_max[j] * (1.0 + tol) + tol {
            bad.push(format!("power {p} of uav {j} outside [0, {}]", opt.p_max[j]));
        }
    }
    for (j, (v, prev)) in d.uav_pos.iter().zip(prev_pos).enumerate() {
        let dist = v.dist(*prev);
        if dist > opt.e_max_m * (1.0 + 1e-9) + tol {
            bad.push(format!("uav {j} moved {dist} m, cap {}", opt.e_max_m));
        }
    }
    for j in 0..d.uav_pos.len() {
        for k in j + 1..d.uav_pos.len() {
            let dist = d.uav_pos[j].dist(d.uav_pos[k]);
            if dist < opt.d_min_m * (1.0 - 1e-9) - tol {
                bad.push(format!("uavs {j},{k} at {dist} m, floor {}", opt.d_min_m));
            }
        }
    }
    if d.w_u_hz <= 0.0 {
        bad.push("urllc bandwidth not positive".into());
    }
    if (d.w_u_hz + d.w_e_hz - w_tot_hz).abs() > tol * w_tot_hz.max(1.0) {
        bad.push(format!(
            "bandwidths {} + {} do not sum to {}",
            d.w_u_hz, d.w_e_hz, w_tot_hz
        ));
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::{sub_rng, Stream};
    use rand::Rng;

    fn simple_gm(n_users: usize, n_uavs: usize) -> GainModel {
        GainModel {
            theta: vec![vec![1e-4; n_uavs]; n_users],
            dg2: vec![vec![2323.24; n_uavs]; n_users],
            user_xy: (0..n_users)
                .map(|i| Vec2::new(100.0 + 200.0 * i as f64, 400.0))
                .collect(),
            n0_w: 3.98e-21,
            w_e_hz: 9e6,
        }
    }

    fn opt(n_uavs: usize) -> OptParams {
        OptParams {
            v: 2.0,
            rho: 0.01,
            e_max_m: 50.0,
            d_min_m: 5.0,
            p_max: vec![1.63; n_uavs],
            power_scale: 1.0,
            kkt_tol: 1e-6,
            sca_rel_tol: 1e-5,
            sca_max_iters: 1000,
        }
    }

    fn rand_queues(rng: &mut impl Rng, n: usize, j: usize) -> QueueState {
        let mut q = QueueState::new(n, j);
        q.q = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        q.z = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        q.h = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
        q
    }

    #[test]
    fn sinr_no_interference() {
        let gains = vec![vec![2e-9]];
        let s = sinr(0, 0, &[1.0], &gains, 1e-20, 1e7);
        assert!((s - 2e-9 / 1e-13).abs() / s < 1e-12);
    }

    #[test]
    fn sinr_interference_limit_and_hand_sum() {
        let gains = vec![vec![1e-9, 5e-10, 2e-10]];
        let p = [1.0, 0.5, 0.25];
        let got = sinr(0, 0, &p, &gains, 1e-20, 1e7);
        let hand = 1e-9 / (1e-13 + 0.5 * 5e-10 + 0.25 * 2e-10);
        assert!((got - hand).abs() / hand < 1e-12);
        // Interferers off: reduces to the single-UAV value.
        let off = sinr(0, 0, &[1.0, 0.0, 0.0], &gains, 1e-20, 1e7);
        let single = sinr(0, 0, &[1.0], &vec![vec![1e-9]], 1e-20, 1e7);
        assert!((off - single).abs() / single < 1e-12);
    }

    #[test]
    fn rate_units_and_unmatched() {
        let gains = vec![vec![1.0]];
        // SINR exactly 1 -> rate equals the bandwidth.
        let n0 = 1.0 / 9e6; // makes n0*w = 1 with p*h = 1
        let r = user_rate_mbps(0, &[Some(0)], &[1.0], &gains, n0, 9e6);
        assert!((r - 9.0).abs() < 1e-9);
        assert_eq!(user_rate_mbps(0, &[None], &[1.0], &gains, n0, 9e6), 0.0);
    }

    #[test]
    fn rate_recompute_random() {
        let mut rng = sub_rng(41, Stream::PretrainGeometry, 9);
        let gains: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.random_range(1e-10..1e-8)).collect())
            .collect();
        let p = [0.3, 0.8, 1.2];
        let r = user_rate_mbps(0, &[Some(1), None], &p, &gains, 3.98e-21, 9e6);
        let inter = p[0] * gains[0][0] + p[2] * gains[0][2];
        let manual = 9e6 * (1.0 + p[1] * gains[0][1] / (3.98e-21 * 9e6 + inter)).log2() * 1e-6;
        assert!((r - manual).abs() / manual < 1e-12);
    }

    #[test]
    fn matching_diagonal_dominant() {
        let w = vec![
            vec![10.0, 1.0, 1.0],
            vec![1.0, 10.0, 1.0],
            vec![1.0, 1.0, 10.0],
        ];
        let a = match_requests(&w);
        assert_eq!(a, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn matching_all_zero_weights() {
        let w = vec![vec![0.0; 3]; 3];
        let a = match_requests(&w);
        assert!(a.iter().all(|x| x.is_none()));
    }

    /// Exhaustive enumeration of all partial matchings.
    fn brute_force(w: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = go(w, i + 1, used); // leave user i unmatched
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[i][j] + go(w, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let n_uavs = w.first().map_or(0, |r| r.len());
        go(w, 0, &mut vec![false; n_uavs])
    }

    #[test]
    fn matching_equals_brute_force() {
        let mut rng = sub_rng(42, Stream::PretrainGeometry, 10);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=4);
            let w: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let a = match_requests(&w);
            let got: f64 = a
                .iter()
                .enumerate()
                .filter_map(|(i, x)| x.map(|j| w[i][j]))
                .sum();
            let best = brute_force(&w);
            assert!((got - best).abs() <= 1e-9 * best.max(1.0), "{got} vs {best}");
            // One-to-one check.
            let mut used = vec![false; m];
            for x in a.iter().flatten() {
                assert!(!used[*x]);
                used[*x] = true;
            }
        }
    }

    #[test]
    fn matching_prefers_lowest_indices_on_ties() {
        let w = vec![vec![5.0, 5.0], vec![5.0, 5.0]];
        let a = match_requests(&w);
        assert_eq!(a, vec![Some(0), Some(1)]);
    }

    #[test]
    fn sca_touches_model_at_anchor() {
        let gm = simple_gm(2, 3);
        let anchor = vec![
            Vec2::new(150.0, 350.0),
            Vec2::new(420.0, 430.0),
            Vec2::new(700.0, 380.0),
        ];
        let powers = [0.8, 1.2, 0.5];
        let lin = linearize_location(&anchor, &powers, &gm);
        for i in 0..2 {
            for j in 0..3 {
                let sca = sca_rate_mbps(&lin, &gm, i, j, &anchor, &powers).unwrap();
                let truth = model_rate_mbps(&gm, i, j, &anchor, &powers);
                assert!(
                    (sca - truth).abs() <= 1e-9,
                    "touch violated: {sca} vs {truth}"
                );
            }
        }
        // Coefficients are finite and sensitivities nonnegative.
        for i in 0..2 {
            assert!(lin.d[i].is_finite());
            for j in 0..3 {
                assert!(lin.e[i][j] >= 0.0 && lin.e[i][j].is_finite());
            }
        }
    }

    #[test]
    fn sca_gradient_matches_finite_differences() {
        let gm = simple_gm(2, 3);
        let anchor = vec![
            Vec2::new(150.0, 350.0),
            Vec2::new(420.0, 430.0),
            Vec2::new(700.0, 380.0),
        ];
        let powers = [0.8, 1.2, 0.5];
        let lin = linearize_location(&anchor, &powers, &gm);
        let h = 1e-3;
        for i in 0..2 {
            for j in 0..3 {
                let analytic = sca_rate_grad(&lin, &gm, i, j, &anchor, &powers);
                let gmax = analytic
                    .iter()
                    .fold(0.0f64, |m, g| m.max(g.x.abs()).max(g.y.abs()));
                for k in 0..3 {
                    for axis in 0..2 {
                        let mut vp = anchor.clone();
                        let mut vm = anchor.clone();
                        if axis == 0 {
                            vp[k].x += h;
                            vm[k].x -= h;
                        } else {
                            vp[k].y += h;
                            vm[k].y -= h;
                        }
                        let fd_true = (model_rate_mbps(&gm, i, j, &vp, &powers)
                            - model_rate_mbps(&gm, i, j, &vm, &powers))
                            / (2.0 * h);
                        let an = if axis == 0 { analytic[k].x } else { analytic[k].y };
                        let denom = fd_true.abs().max(an.abs()).max(1e-4 * gmax);
                        assert!(
                            (fd_true - an).abs() / denom <= 1e-5,
                            "grad mismatch i={i} j={j} k={k} axis={axis}: {fd_true} vs {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sca_minorizes_model_on_perturbations() {
        let mut rng = sub_rng(43, Stream::PretrainGeometry, 11);
        let gm = simple_gm(2, 3);
        let anchor = vec![
            Vec2::new(150.0, 350.0),
            Vec2::new(420.0, 430.0),
            Vec2::new(700.0, 380.0),
        ];
        let powers = [0.8, 1.2, 0.5];
        let lin = linearize_location(&anchor, &powers, &gm);
        let mut checked = 0;
        while checked < 1000 {
            let v: Vec<Vec2> = anchor
                .iter()
                .map(|a| {
                    *a + Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))
                })
                .collect();
            let i = rng.random_range(0..2);
            let j = rng.random_range(0..3);
            if let Some(sca) = sca_rate_mbps(&lin, &gm, i, j, &v, &powers) {
                let truth = model_rate_mbps(&gm, i, j, &v, &powers);
                assert!(sca <= truth + 1e-9, "{sca} > {truth}");
                checked += 1;
            }
        }
    }

    #[test]
    fn location_single_user_moves_toward_user() {
        let gm = simple_gm(1, 1);
        let o = opt(1);
        let prev = vec![Vec2::new(600.0, 800.0)];
        let mut q = QueueState::new(1, 1);
        q.q = vec![10.0];
        let (newp, eta, _, fb) =
            solve_location(&prev, &prev, &[Some(0)], &[1.0], &q, &gm, &o);
        assert!(!fb);
        // Grid oracle over the movement disc of the true objective.
        let mut best = (f64::NEG_INFINITY, prev[0]);
        for dx in -50..=50 {
            for dy in -50..=50 {
                let c = Vec2::new(prev[0].x + dx as f64, prev[0].y + dy as f64);
                if c.dist(prev[0]) > 50.0 {
                    continue;
                }
                let r = model_rate_mbps(&gm, 0, 0, &[c], &[1.0]);
                if r > best.0 {
                    best = (r, c);
                }
            }
        }
        let got = model_rate_mbps(&gm, 0, 0, &newp, &[1.0]);
        assert!(got >= best.0 - 1e-3, "rate {got} vs grid {}", best.0);
        // Step within the cap, along the line toward the user.
        let step = newp[0].dist(prev[0]);
        assert!(step <= 50.0 + 1e-9);
        let to_user = gm.user_xy[0] - prev[0];
        let cosang = to_user.dot(newp[0] - prev[0]) / (to_user.norm() * step);
        assert!(cosang > 0.999, "direction cos {cosang}");
        assert!(eta[0] > 0.0);
    }

    #[test]
    fn location_zero_weights_returns_anchor() {
        let gm = simple_gm(1, 2);
        let o = opt(2);
        let prev = vec![Vec2::new(600.0, 800.0), Vec2::new(200.0, 100.0)];
        let q = QueueState::new(1, 2);
        let (newp, _, _, fb) = solve_location(&prev, &prev, &[Some(0)], &[1.0, 1.0], &q, &gm, &o);
        assert!(!fb);
        assert_eq!(newp[0], prev[0]);
        assert_eq!(newp[1], prev[1]);
    }

    #[test]
    fn location_respects_safety_floor_from_touching_anchor() {
        let gm = simple_gm(2, 2);
        let o = opt(2);
        // Anchors exactly at the safety distance.
        let prev = vec![Vec2::new(400.0, 400.0), Vec2::new(405.0, 400.0)];
        let mut q = QueueState::new(2, 2);
        q.q = vec![5.0, 5.0];
        let (newp, _, _, _) =
            solve_location(&prev, &prev, &[Some(0), Some(1)], &[1.0, 1.0], &q, &gm, &o);
        let dist = newp[0].dist(newp[1]);
        assert!(dist >= 5.0 - 1e-9, "distance {dist}");
        for (n, p) in newp.iter().zip(&prev) {
            assert!(n.dist(*p) <= 50.0 + 1e-9);
        }
    }

    #[test]
    fn power_minorant_touches_and_dominates() {
        let mut rng = sub_rng(46, Stream::PretrainGeometry, 14);
        let gm = simple_gm(2, 3);
        let pos = vec![
            Vec2::new(120.0, 380.0),
            Vec2::new(400.0, 420.0),
            Vec2::new(680.0, 390.0),
        ];
        let gains = gm.gains_at(&pos);
        let anchor_p = [0.9, 0.4, 1.1];
        let accept = [Some(0), Some(2)];
        let lin = linearize_power(&anchor_p, &accept, &gains, gm.n0_w, gm.w_e_hz);
        for (i, a) in accept.iter().enumerate() {
            let j = a.unwrap();
            let sca = sca_power_rate_mbps(&lin, &gains, i, j, &anchor_p, gm.n0_w, gm.w_e_hz);
            let truth = user_rate_mbps(i, &accept, &anchor_p, &gains, gm.n0_w, gm.w_e_hz);
            assert!((sca - truth).abs() <= 1e-9, "touch {sca} vs {truth}");
        }
        for _ in 0..500 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.63)).collect();
            for (i, a) in accept.iter().enumerate() {
                let j = a.unwrap();
                let sca = sca_power_rate_mbps(&lin, &gains, i, j, &p, gm.n0_w, gm.w_e_hz);
                let truth = {
                    let s = sinr(i, j, &p, &gains, gm.n0_w, gm.w_e_hz);
                    gm.w_e_hz * (1.0 + s).log2() * 1e-6
                };
                assert!(sca <= truth + 1e-9, "dominance {sca} > {truth}");
            }
        }
    }

    #[test]
    fn power_single_user_matches_grid() {
        let gm = simple_gm(1, 1);
        let o = opt(1);
        let pos = vec![Vec2::new(150.0, 420.0)];
        let mut q = QueueState::new(1, 1);
        q.q = vec![4.0];
        q.h = vec![50.0];
        let (p, fb) = solve_power(&[0.5], &[Some(0)], &pos, &q, &gm, &o);
        assert!(!fb);
        // 1e-4-resolution scan of the true 1D objective (no interference, so
        // the SCA objective and the true objective coincide).
        let gains = gm.gains_at(&pos);
        let value = |pw: f64| {
            let r = user_rate_mbps(0, &[Some(0)], &[pw], &gains, gm.n0_w, gm.w_e_hz);
            -(o.v * o.rho + 50.0) * pw + 4.0 * r
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut x = 0.0;
        while x <= 1.63 {
            let v = value(x);
            if v > best.0 {
                best = (v, x);
            }
            x += 1e-4;
        }
        assert!(
            value(p[0]) >= best.0 - 1e-6 * best.0.abs().max(1.0),
            "value {} vs grid {}",
            value(p[0]),
            best.0
        );
    }

    #[test]
    fn power_heavy_queue_drives_to_zero() {
        let gm = simple_gm(1, 1);
        let o = opt(1);
        let pos = vec![Vec2::new(150.0, 420.0)];
        let mut q = QueueState::new(1, 1);
        q.h = vec![1e9];
        // No queue pressure: pure power penalty.
        let (p, _) = solve_power(&[1.0], &[Some(0)], &pos, &q, &gm, &o);
        assert!(p[0] < 1e-9, "power {}", p[0]);
    }

    #[test]
    fn power_decomposes_without_interference() {
        // Two users, two UAVs, cross coefficients zero.
        let mut gm = simple_gm(2, 2);
        gm.theta[0][1] = 0.0;
        gm.theta[1][0] = 0.0;
        let o = opt(2);
        let pos = vec![Vec2::new(100.0, 400.0), Vec2::new(300.0, 400.0)];
        let mut q = QueueState::new(2, 2);
        q.q = vec![3.0, 7.0];
        q.h = vec![20.0, 5.0];
        let accept = [Some(0), Some(1)];
        let (joint, _) = solve_power(&[0.5, 0.5], &accept, &pos, &q, &gm, &o);

        // Independent single-UAV solves.
        for j in 0..2 {
            let gm1 = GainModel {
                theta: vec![vec![gm.theta[j][j]]],
                dg2: vec![vec![gm.dg2[j][j]]],
                user_xy: vec![gm.user_xy[j]],
                n0_w: gm.n0_w,
                w_e_hz: gm.w_e_hz,
            };
            let mut q1 = QueueState::new(1, 1);
            q1.q = vec![q.q[j]];
            q1.h = vec![q.h[j]];
            let (alone, _) = solve_power(&[0.5], &[Some(0)], &[pos[j]], &q1, &gm1, &opt(1));
            assert!(
                (joint[j] - alone[0]).abs() < 1e-4,
                "uav {j}: joint {} vs alone {}",
                joint[j],
                alone[0]
            );
        }
    }

    #[test]
    fn alternate_zero_iterations_returns_initialization() {
        let gm = simple_gm(2, 2);
        let mut o = opt(2);
        o.sca_max_iters = 0;
        let q = rand_queues(&mut sub_rng(44, Stream::PretrainGeometry, 12), 2, 2);
        let prev = SlotDecision {
            accept: vec![Some(1), None],
            uav_pos: vec![Vec2::new(100.0, 100.0), Vec2::new(500.0, 500.0)],
            powers: vec![0.7, 0.2],
            w_u_hz: 1e6,
            w_e_hz: 9e6,
            gamma: vec![0.0, 0.0],
            eta: vec![0.0, 0.0],
            b_slack: vec![vec![0.0; 2]; 2],
            location_fallback: false,
            power_fallback: false,
        };
        let (d, trace) = alternate(&prev, &q, &gm, &o, &MovementMode::Optimize);
        assert_eq!(trace.len(), 1);
        assert_eq!(d.accept, prev.accept);
        assert_eq!(d.powers, prev.powers);
    }

    #[test]
    fn alternate_merit_monotone_and_valid() {
        let mut rng = sub_rng(45, Stream::PretrainGeometry, 13);
        for trial in 0..10 {
            let n = rng.random_range(2..=4);
            let j = rng.random_range(2..=3);
            let mut gm = simple_gm(n, j);
            for i in 0..n {
                gm.user_xy[i] = Vec2::new(
                    rng.random_range(50.0..950.0),
                    rng.random_range(50.0..950.0),
                );
                for k in 0..j {
                    gm.theta[i][k] = 10f64.powf(rng.random_range(-5.0..-3.0));
                }
            }
            let o = opt(j);
            let q = rand_queues(&mut rng, n, j);
            let mut positions = Vec::new();
            while positions.len() < j {
                let c = Vec2::new(rng.random_range(50.0..950.0), rng.random_range(50.0..950.0));
                if positions.iter().all(|p: &Vec2| p.dist(c) >= 5.0) {
                    positions.push(c);
                }
            }
            let prev = SlotDecision::idle(n, positions.clone(), 1e6, 9e6);
            let (d, trace) = alternate(&prev, &q, &gm, &o, &MovementMode::Optimize);
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-6 * w[0].abs().max(1.0),
                    "trial {trial}: merit rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
            let bad = validate(&d, &positions, &o, 1e7);
            assert!(bad.is_empty(), "trial {trial}: {bad:?}");
        }
    }

    #[test]
    fn validate_flags_violations() {
        let o = opt(2);
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let mut d = SlotDecision::idle(1, prev.clone(), 1e6, 9e6);
        d.powers = vec![5.0, 0.0]; // over the cap
        d.uav_pos[0] = Vec2::new(200.0, 0.0); // moved 200 m
        let bad = validate(&d, &prev, &o, 1e7);
        assert_eq!(bad.len(), 2);
        // Collision.
        let mut d2 = SlotDecision::idle(1, vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], 1e6, 9e6);
        d2.accept = vec![Some(0)];
        let bad2 = validate(&d2, &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], &o, 1e7);
        assert!(bad2.iter().any(|m| m.contains("floor")));
    }
}
