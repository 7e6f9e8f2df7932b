//! Orchestrator: the proactive slicing pipeline end to end, plus the two
//! baselines and metric output.
//!
//! Time is driven by a wall clock. A warm phase collects Beacons and
//! pre-trains the location predictor on live traces (channel networks
//! pre-train separately on randomly sampled geometries). In the scored
//! phase the controller at wall slot `t` computes the decision that takes
//! effect at `t+K`: predict user positions K slots ahead, estimate channel
//! coefficients there, size the URLLC slice, solve the auxiliary rates, run
//! the alternating slot optimization, and queue the decision. When the wall
//! clock reaches the effect slot the world is scored with true gains and
//! fresh fading, and the virtual queues advance on realized service.
//!
//! The first K scored slots have nothing precomputed and fall back to the
//! initial deployment with no MBB service.

use crate::cgnet::{CgInput, CgNet, ReplayBuffer};
use crate::env::{
    generate_buildings, measure_coeff, sample_true_channel, BuildingMap, LinkKind, RadioParams,
};
use crate::esn::{build_local_system, predict_k, train_consensus, AgentMemory, Reservoir};
use crate::geom::{Vec2, Vec3};
use crate::lyap::{self, LyapParams, QueueState};
use crate::mbbopt::{
    alternate, user_rate_mbps, validate, GainModel, MovementMode, OptParams, SlotDecision,
};
use crate::mobility::{load_traces, positions_at, synthetic_traces, BeaconLog, TraceConfig, UserTrace};
use crate::rngutil::{sub_rng, Stream};
use crate::scenario::{Algo, Scenario};
use crate::urllc::{fb_rate_bps, min_bandwidth, UrllcAlloc};
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Watts to queue power units (milliwatts).
const W_TO_QUEUE: f64 = 1e3;

/// One scored slot of output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotRow {
    pub t: usize,
    pub rates_mbps: Vec<f64>,
    pub powers_w: Vec<f64>,
    pub s_q: f64,
    pub s_z: f64,
    pub s_h: f64,
    pub w_u_hz: f64,
    pub w_e_hz: f64,
    pub merit: f64,
    pub loss_btu: f64,
    pub loss_utg: f64,
    pub urllc_feasible: bool,
    pub urllc_true_violations: usize,
    /// Mean distance between predicted and true user positions, metres.
    pub pred_err_m: f64,
    pub uav_xy: Vec<Vec2>,
    pub q_max: f64,
    pub z_max: f64,
    pub h_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub algo: String,
    pub seed: u64,
    pub users: usize,
    pub uavs: usize,
    pub horizon: usize,
    /// Utility of mean rates minus the weighted mean total power.
    pub energy_efficiency: f64,
    pub jain_index: f64,
    pub mean_user_rates_mbps: Vec<f64>,
    pub mean_p_tot_w: Vec<f64>,
    pub urllc_infeasible_slots: usize,
    /// Fraction of (slot, UAV) pairs where the realized finite-blocklength
    /// rate missed the QoS floor under true gains.
    pub urllc_true_violation_frac: f64,
    pub constraint_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub rows: Vec<SlotRow>,
    pub summary: Summary,
    /// Per-slot merit traces (slot, per-iteration values), when enabled.
    pub merit_traces: Vec<(usize, Vec<f64>)>,
}

/// Jain's fairness index of a rate vector, in `[1/n, 1]`; an all-zero
/// vector is reported as 0.
pub fn jain_index(rates: &[f64]) -> f64 {
    let n = rates.len();
    if n == 0 {
        return 0.0;
    }
    let s: f64 = rates.iter().sum();
    let s2: f64 = rates.iter().map(|r| r * r).sum();
    if s2 <= 0.0 {
        return 0.0;
    }
    s * s / (n as f64 * s2)
}

/// Utility of time-average rates: sum of log2(1 + rate).
pub fn rate_utility(mean_rates: &[f64]) -> f64 {
    lyap::fairness_utility(mean_rates)
}

fn fmt(x: f64) -> String {
    format!("{x:.9e}")
}

impl RunMetrics {
    pub fn metrics_csv(&self) -> String {
        let n = self.summary.users;
        let j = self.summary.uavs;
        let mut head = vec!["t".to_string()];
        head.extend((0..n).map(|i| format!("u_{i}")));
        head.extend((0..j).map(|k| format!("p_{k}")));
        head.extend(
            [
                "s_q", "s_z", "s_h", "w_u_hz", "w_e_hz", "merit", "loss_btu", "loss_utg",
                "urllc_feasible", "urllc_true_viol",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        let mut out = head.join(",") + "\n";
        for r in &self.rows {
            let mut cells = vec![r.t.to_string()];
            cells.extend(r.rates_mbps.iter().map(|v| fmt(*v)));
            cells.extend(r.powers_w.iter().map(|v| fmt(*v)));
            cells.push(fmt(r.s_q));
            cells.push(fmt(r.s_z));
            cells.push(fmt(r.s_h));
            cells.push(fmt(r.w_u_hz));
            cells.push(fmt(r.w_e_hz));
            cells.push(fmt(r.merit));
            cells.push(fmt(r.loss_btu));
            cells.push(fmt(r.loss_utg));
            cells.push(if r.urllc_feasible { "1" } else { "0" }.to_string());
            cells.push(r.urllc_true_violations.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn queues_csv(&self) -> String {
        let mut out = String::from("t,q_max,z_max,h_max,s_q,s_z,s_h\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t,
                fmt(r.q_max),
                fmt(r.z_max),
                fmt(r.h_max),
                fmt(r.s_q),
                fmt(r.s_z),
                fmt(r.s_h)
            ));
        }
        out
    }

    pub fn tracks_csv(&self) -> String {
        let j = self.summary.uavs;
        let mut head = vec!["t".to_string()];
        for k in 0..j {
            head.push(format!("x_{k}"));
            head.push(format!("y_{k}"));
        }
        let mut out = head.join(",") + "\n";
        for r in &self.rows {
            let mut cells = vec![r.t.to_string()];
            for p in &r.uav_xy {
                cells.push(fmt(p.x));
                cells.push(fmt(p.y));
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn gamma_trace_csv(&self) -> String {
        let mut out = String::from("t,iter,merit\n");
        for (t, trace) in &self.merit_traces {
            for (i, m) in trace.iter().enumerate() {
                out.push_str(&format!("{t},{i},{}\n", fmt(*m)));
            }
        }
        out
    }

    pub fn write_outputs(&self, dir: &Path, gamma_trace: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, body: &str| -> Result<()> {
            let mut f = std::fs::File::create(dir.join(name))?;
            f.write_all(body.as_bytes())?;
            Ok(())
        };
        write("metrics.csv", &self.metrics_csv())?;
        write("queues.csv", &self.queues_csv())?;
        write("uav_tracks.csv", &self.tracks_csv())?;
        let summary =
            serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        write("summary.json", &(summary + "\n"))?;
        if gamma_trace {
            write("gamma_trace.csv", &self.gamma_trace_csv())?;
        }
        Ok(())
    }
}

/// Pairwise-separated random deployment inside the area.
fn initial_deployment(sc: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(sc.uav.count);
    while out.len() < sc.uav.count {
        let c = Vec2::new(
            rng.random_range(0.0..sc.area.width_m),
            rng.random_range(0.0..sc.area.height_m),
        );
        if out.iter().all(|p| p.dist(c) >= sc.uav.d_min_m * 2.0) {
            out.push(c);
        }
    }
    out
}

/// Circular-trajectory waypoint for UAV `j` at a scored slot.
fn cct_waypoint(sc: &Scenario, j: usize, slot: usize) -> Vec2 {
    let unit = sc.area.width_m.min(sc.area.height_m);
    let n = sc.uav.count as f64;
    let center = Vec2::new(sc.area.width_m / 2.0, sc.area.height_m / 2.0);
    let radius = unit * (1.0 / (4.0 * n) + j as f64 / (2.0 * n));
    let omega = 10.0 * sc.mobility.slot_seconds / radius;
    let ang = omega * slot as f64;
    center + Vec2::new(radius * ang.cos(), radius * ang.sin())
}

/// Clamp prescribed waypoints to the movement cap and hold back any UAV that
/// would breach the safety floor.
fn prescribe_positions(sc: &Scenario, prev: &[Vec2], slot: usize) -> Vec<Vec2> {
    let mut out = prev.to_vec();
    for j in 0..prev.len() {
        let target = cct_waypoint(sc, j, slot);
        let to = target - prev[j];
        let d = to.norm();
        let cand = if d <= sc.uav.e_max_m {
            target
        } else {
            prev[j] + to * (sc.uav.e_max_m / d)
        };
        let cand = cand.clamp_to(sc.area.width_m, sc.area.height_m);
        let safe = out
            .iter()
            .enumerate()
            .all(|(k, p)| k == j || p.dist(cand) >= sc.uav.d_min_m);
        if safe {
            out[j] = cand;
        }
    }
    out
}

struct Pending {
    decision: SlotDecision,
    alloc: Option<UrllcAlloc>,
    trace: Vec<f64>,
    predicted_xy: Vec<Vec2>,
}

struct Sim {
    sc: Scenario,
    map: BuildingMap,
    radio: RadioParams,
    traces: Vec<UserTrace>,
    warm: usize,
    initial_pos: Vec<Vec2>,
    reservoir: Reservoir,
    agents: Vec<AgentMemory>,
    logs: Vec<BeaconLog>,
    /// Latest consensus readout per user.
    readouts: Vec<Option<ndarray::Array2<f64>>>,
    btu_nets: Vec<CgNet>,
    btu_bufs: Vec<ReplayBuffer>,
    utg_nets: Vec<CgNet>,
    utg_bufs: Vec<ReplayBuffer>,
    btu_batch_rngs: Vec<ChaCha8Rng>,
    utg_batch_rngs: Vec<ChaCha8Rng>,
    btu_measure_rngs: Vec<ChaCha8Rng>,
    utg_measure_rngs: Vec<ChaCha8Rng>,
    realized_rng: ChaCha8Rng,
    queues: QueueState,
    lyap_params: LyapParams,
    opt_params: OptParams,
    scheduled: Vec<Option<Pending>>,
    effects: Vec<Option<SlotDecision>>,
}

impl Sim {
    fn new(sc: &Scenario) -> Result<Sim> {
        sc.validate()?;
        let seed = sc.seed;
        let map = generate_buildings(
            sc.env.itu,
            sc.area,
            sc.env.height_cap_m,
            &mut sub_rng(seed, Stream::Buildings, 0),
        )?;
        let warm = sc.esn.pretrain_episodes;
        let tc = TraceConfig {
            area: sc.area,
            n_users: sc.n_users,
            horizon_slots: warm + sc.esn.k_horizon + sc.horizon + 1,
            slot_seconds: sc.mobility.slot_seconds,
            user_height_m: sc.mobility.user_height_m,
            n_classes: sc.mobility.rate_classes_mbps.len() as u8,
        };
        let traces = match &sc.mobility.trace_path {
            Some(p) => load_traces(Path::new(p), &tc, seed)?,
            None => synthetic_traces(&tc, seed),
        };
        let initial_pos = initial_deployment(sc, &mut sub_rng(seed, Stream::Deployment, 0));
        let reservoir = Reservoir::generate(
            sc.esn.n_reservoir,
            sc.esn.spectral_radius,
            &mut sub_rng(seed, Stream::Reservoir, 0),
        );
        let j = sc.uav.count;
        let n = sc.n_users;
        let agents = (0..j)
            .map(|_| AgentMemory::new(n, sc.esn.n_reservoir, sc.esn.q_history))
            .collect();
        let logs = (0..j)
            .map(|_| BeaconLog::new(n, sc.esn.q_history + 1))
            .collect();
        let scale = sc.area.width_m.max(sc.area.height_m);
        let mk_net = |idx: u64| {
            CgNet::new(
                sc.cgnet.hidden,
                sc.cgnet.lr,
                scale,
                &mut sub_rng(seed, Stream::CgNetInit, idx),
            )
        };
        let btu_nets: Vec<CgNet> = (0..j).map(|k| mk_net(k as u64)).collect();
        let utg_nets: Vec<CgNet> = (0..j).map(|k| mk_net(1000 + k as u64)).collect();
        let mk_buf = || ReplayBuffer::new(sc.cgnet.buffer_capacity, sc.cgnet.minibatch);
        let c_th: Vec<f64> = traces
            .iter()
            .map(|t| sc.mobility.rate_classes_mbps[(t.rate_class as usize - 1).min(
                sc.mobility.rate_classes_mbps.len() - 1,
            )])
            .collect();
        // The virtual queues carry rates in Mbps and powers in milliwatts;
        // decision variables and channel physics stay in watts.
        let lyap_params = LyapParams {
            v: sc.lyap.v,
            rho: sc.lyap.rho,
            c_th: c_th.clone(),
            p_tilde: vec![sc.uav.p_tilde_w * W_TO_QUEUE; j],
            p_hat: vec![sc.uav.p_hat_w * W_TO_QUEUE; j],
            p_c: vec![sc.uav.p_circuit_w * W_TO_QUEUE; j],
        };
        let opt_params = OptParams {
            v: sc.lyap.v,
            rho: sc.lyap.rho,
            e_max_m: sc.uav.e_max_m,
            d_min_m: sc.uav.d_min_m,
            p_max: vec![sc.uav.p_hat_w - sc.uav.p_circuit_w; j],
            power_scale: W_TO_QUEUE,
            kkt_tol: sc.opt.kkt_tol,
            sca_rel_tol: sc.opt.sca_rel_tol,
            sca_max_iters: sc.opt.sca_max_iters,
        };
        Ok(Sim {
            sc: sc.clone(),
            map,
            radio: sc.env.radio.clone(),
            traces,
            warm,
            initial_pos,
            reservoir,
            agents,
            logs,
            readouts: vec![None; n],
            btu_nets,
            btu_bufs: (0..j).map(|_| mk_buf()).collect(),
            utg_nets,
            utg_bufs: (0..j).map(|_| mk_buf()).collect(),
            btu_batch_rngs: (0..j)
                .map(|k| sub_rng(seed, Stream::CgNetBatch, k as u64))
                .collect(),
            utg_batch_rngs: (0..j)
                .map(|k| sub_rng(seed, Stream::CgNetBatch, 1000 + k as u64))
                .collect(),
            btu_measure_rngs: (0..j)
                .map(|k| sub_rng(seed, Stream::FadingMeasure, k as u64))
                .collect(),
            utg_measure_rngs: (0..j)
                .map(|k| sub_rng(seed, Stream::FadingMeasure, 1000 + k as u64))
                .collect(),
            realized_rng: sub_rng(seed, Stream::FadingRealized, 0),
            queues: QueueState::new(n, j),
            lyap_params,
            opt_params,
            scheduled: vec![],
            effects: vec![],
        })
    }

    fn uav3(&self, p: Vec2) -> Vec3 {
        p.with_z(self.sc.uav.altitude_m)
    }

    fn user3(&self, p: Vec2) -> Vec3 {
        p.with_z(self.sc.mobility.user_height_m)
    }

    /// Random-geometry pre-training of both channel estimators.
    fn pretrain_cgnets(&mut self) -> Result<()> {
        let sc = &self.sc;
        let draws = sc.cgnet.measurement_avg_draws;
        for k in 0..sc.uav.count {
            let mut geo = sub_rng(sc.seed, Stream::PretrainGeometry, k as u64);
            for _ in 0..sc.cgnet.btu_pretrain_episodes {
                let uav = Vec3::new(
                    geo.random_range(0.0..sc.area.width_m),
                    geo.random_range(0.0..sc.area.height_m),
                    sc.uav.altitude_m,
                );
                let s = measure_coeff(
                    LinkKind::BtU,
                    self.radio.bs_pos,
                    uav,
                    &self.map,
                    &self.radio,
                    draws,
                    &mut self.btu_measure_rngs[k],
                )?;
                let inp = CgInput {
                    a: uav,
                    b: self.radio.bs_pos,
                    los: s.los,
                };
                self.btu_bufs[k]
                    .observe(inp.features(self.btu_nets[k].norm_scale), s.coeff)?;
                self.btu_nets[k].train_step(&self.btu_bufs[k], &mut self.btu_batch_rngs[k]);
            }
            let mut geo = sub_rng(sc.seed, Stream::PretrainGeometry, 1000 + k as u64);
            for _ in 0..sc.cgnet.utg_pretrain_episodes {
                let uav = Vec3::new(
                    geo.random_range(0.0..sc.area.width_m),
                    geo.random_range(0.0..sc.area.height_m),
                    sc.uav.altitude_m,
                );
                let user = Vec3::new(
                    geo.random_range(0.0..sc.area.width_m),
                    geo.random_range(0.0..sc.area.height_m),
                    sc.mobility.user_height_m,
                );
                let s = measure_coeff(
                    LinkKind::UtG,
                    uav,
                    user,
                    &self.map,
                    &self.radio,
                    draws,
                    &mut self.utg_measure_rngs[k],
                )?;
                let inp = CgInput {
                    a: user,
                    b: uav,
                    los: s.los,
                };
                self.utg_bufs[k]
                    .observe(inp.features(self.utg_nets[k].norm_scale), s.coeff)?;
                self.utg_nets[k].train_step(&self.utg_bufs[k], &mut self.utg_batch_rngs[k]);
            }
        }
        Ok(())
    }

    /// Beacon reception, reservoir updates and one consensus train per user.
    fn learn_locations(&mut self, wall: usize, user_pos: &[Vec2], uav_xy: &[Vec2]) -> Result<()> {
        for (k, log) in self.logs.iter_mut().enumerate() {
            log.refresh(
                uav_xy[k],
                user_pos,
                wall,
                self.sc.mobility.beacon_period_slots,
                self.sc.mobility.beacon_radius_m,
            );
        }
        for (k, mem) in self.agents.iter_mut().enumerate() {
            mem.ingest(&self.reservoir, &self.logs[k], wall);
        }
        let hyper = self.sc.esn.hyper();
        for i in 0..self.sc.n_users {
            let systems: Vec<_> = self
                .agents
                .iter()
                .filter_map(|m| build_local_system(m, i, hyper.q_history))
                .collect();
            if systems.is_empty() {
                continue;
            }
            let res = train_consensus(&systems, &hyper)?;
            self.readouts[i] = Some(res.weights.w_hat);
        }
        Ok(())
    }

    /// Online measurement and one Adam step per network.
    fn learn_channels(
        &mut self,
        user_pos: &[Vec2],
        uav_xy: &[Vec2],
        accept: &[Option<usize>],
    ) -> Result<(f64, f64)> {
        let draws = self.sc.cgnet.measurement_avg_draws;
        let mut btu_loss = 0.0;
        let mut utg_loss = 0.0;
        let mut btu_n = 0usize;
        let mut utg_n = 0usize;
        for k in 0..self.sc.uav.count {
            let uav = self.uav3(uav_xy[k]);
            let s = measure_coeff(
                LinkKind::BtU,
                self.radio.bs_pos,
                uav,
                &self.map,
                &self.radio,
                draws,
                &mut self.btu_measure_rngs[k],
            )?;
            let inp = CgInput {
                a: uav,
                b: self.radio.bs_pos,
                los: s.los,
            };
            self.btu_bufs[k].observe(inp.features(self.btu_nets[k].norm_scale), s.coeff)?;
            if let Some(l) = self.btu_nets[k].train_step(&self.btu_bufs[k], &mut self.btu_batch_rngs[k]) {
                btu_loss += l;
                btu_n += 1;
            }

            // Measure the served user, or the nearest one when idle.
            let target = accept
                .iter()
                .position(|a| *a == Some(k))
                .or_else(|| {
                    (0..user_pos.len()).min_by(|a, b| {
                        let da = user_pos[*a].dist_sq(uav_xy[k]);
                        let db = user_pos[*b].dist_sq(uav_xy[k]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                });
            if let Some(i) = target {
                let user = self.user3(user_pos[i]);
                let s = measure_coeff(
                    LinkKind::UtG,
                    uav,
                    user,
                    &self.map,
                    &self.radio,
                    draws,
                    &mut self.utg_measure_rngs[k],
                )?;
                let inp = CgInput {
                    a: user,
                    b: uav,
                    los: s.los,
                };
                self.utg_bufs[k].observe(inp.features(self.utg_nets[k].norm_scale), s.coeff)?;
                if let Some(l) =
                    self.utg_nets[k].train_step(&self.utg_bufs[k], &mut self.utg_batch_rngs[k])
                {
                    utg_loss += l;
                    utg_n += 1;
                }
            }
        }
        let avg = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
        Ok((avg(btu_loss, btu_n), avg(utg_loss, utg_n)))
    }

    /// K-step-ahead position prediction for every user, metres.
    fn predict_positions(&self) -> Vec<Vec2> {
        let area_km = (self.sc.area.width_m * 1e-3, self.sc.area.height_m * 1e-3);
        let center = Vec2::new(self.sc.area.width_m / 2.0, self.sc.area.height_m / 2.0);
        (0..self.sc.n_users)
            .map(|i| {
                // Freshest agent wins; ties go to the lowest index.
                let best = (0..self.agents.len())
                    .filter_map(|k| self.agents[k].last_slot(i).map(|s| (k, s)))
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
                let Some((agent, _)) = best else {
                    return center; // never observed
                };
                let mem = &self.agents[agent];
                let x_km = mem.last_input(i).expect("agent has data");
                match &self.readouts[i] {
                    Some(w) => {
                        let preds = predict_k(
                            &self.reservoir,
                            w,
                            mem.state(i),
                            x_km,
                            self.sc.esn.k_horizon,
                            area_km,
                        );
                        *preds.last().expect("k >= 1") * 1e3
                    }
                    None => x_km * 1e3, // cold model holds the last position
                }
            })
            .collect()
    }

    /// Estimated BS-to-UAV gains at given UAV positions.
    fn estimate_btu_gains(&self, uav_xy: &[Vec2]) -> Vec<f64> {
        uav_xy
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let uav = self.uav3(*p);
                let los = self.map.is_los(self.radio.bs_pos, uav);
                let inp = CgInput {
                    a: uav,
                    b: self.radio.bs_pos,
                    los,
                };
                let d = uav.dist(self.radio.bs_pos);
                self.btu_nets[k]
                    .estimate_gain(&inp, d)
                    .expect("positive distance")
            })
            .collect()
    }

    /// Controller step: build the decision taking effect at `effect_slot`.
    fn plan(&mut self, effect_slot: usize) -> Result<()> {
        let sc = &self.sc;
        // The previous effect slot is still in flight at planning time; its
        // decision lives in the schedule, not in the realized record.
        let anchor = self
            .scheduled
            .get(effect_slot - 1)
            .and_then(|p| p.as_ref())
            .map(|p| &p.decision)
            .or_else(|| self.effects.get(effect_slot - 1).and_then(|d| d.as_ref()))
            .map(|d| (d.uav_pos.clone(), d.powers.clone(), d.accept.clone()))
            .unwrap_or_else(|| {
                (
                    self.initial_pos.clone(),
                    vec![0.0; sc.uav.count],
                    vec![None; sc.n_users],
                )
            });
        let (anchor_pos, mut anchor_powers, anchor_accept) = anchor;
        // A silent radio yields zero pairing rates, which would deadlock the
        // alternating loop; anchor the first solve at full transmit power.
        if anchor_powers.iter().all(|p| *p <= 0.0) {
            anchor_powers = self.opt_params.p_max.clone();
        }

        // URLLC sizing with estimated gains at the anchor.
        let btu = self.estimate_btu_gains(&anchor_pos);
        let alloc = min_bandwidth(
            &btu,
            &sc.urllc.req,
            self.radio.noise_psd_w_hz(),
            sc.urllc.p_b_max_w,
            sc.w_tot_hz,
            sc.urllc.tol_hz,
        )?;
        let (w_u, w_e) = if alloc.feasible {
            (alloc.w_u_hz, sc.w_tot_hz - alloc.w_u_hz)
        } else {
            (sc.w_tot_hz, 0.0)
        };

        // Predicted geometry and coefficients.
        let predicted = self.predict_positions();
        let n = sc.n_users;
        let j = sc.uav.count;
        let mut theta = vec![vec![0.0; j]; n];
        let mut dg2 = vec![vec![0.0; j]; n];
        for i in 0..n {
            let user = self.user3(predicted[i]);
            for k in 0..j {
                let uav = self.uav3(anchor_pos[k]);
                let los = self.map.is_los(uav, user);
                let inp = CgInput {
                    a: user,
                    b: uav,
                    los,
                };
                theta[i][k] = self.utg_nets[k].estimate_coeff(&inp);
                let dz = sc.uav.altitude_m - sc.mobility.user_height_m;
                dg2[i][k] = dz * dz;
            }
        }

        // Auxiliary rates from the latest queue state.
        let n0 = self.radio.noise_psd_w_hz();
        let u_max: Vec<f64> = (0..n)
            .map(|i| {
                let best = (0..j).fold(0.0f64, |m, k| m.max(theta[i][k]));
                lyap::u_max_mbps(
                    sc.w_tot_hz,
                    sc.uav.p_hat_w,
                    sc.uav.p_circuit_w,
                    best,
                    n0,
                    dg2[i][0].max(1e-9),
                )
            })
            .collect();
        let gamma = lyap::solve_gamma(&self.queues, &u_max, &self.lyap_params);

        if w_e <= 0.0 {
            // URLLC takes the whole band: release all MBB slices this slot.
            let mut d = SlotDecision::idle(n, anchor_pos, w_u, 0.0);
            d.gamma = gamma;
            self.scheduled[effect_slot] = Some(Pending {
                decision: d,
                alloc: Some(alloc),
                trace: vec![],
                predicted_xy: predicted,
            });
            return Ok(());
        }

        let gm = GainModel {
            theta,
            dg2,
            user_xy: predicted.clone(),
            n0_w: n0,
            w_e_hz: w_e,
        };
        let movement = match sc.algo {
            Algo::Re2fs => MovementMode::Optimize,
            Algo::Suav => MovementMode::Frozen,
            Algo::Cct => {
                MovementMode::Prescribed(prescribe_positions(sc, &anchor_pos, effect_slot))
            }
        };
        let seed_decision = SlotDecision {
            accept: anchor_accept,
            uav_pos: anchor_pos,
            powers: anchor_powers,
            w_u_hz: w_u,
            w_e_hz: w_e,
            gamma: gamma.clone(),
            eta: vec![0.0; n],
            b_slack: vec![vec![0.0; j]; n],
            location_fallback: false,
            power_fallback: false,
        };
        let (mut decision, trace) =
            alternate(&seed_decision, &self.queues, &gm, &self.opt_params, &movement);
        decision.gamma = gamma;
        self.scheduled[effect_slot] = Some(Pending {
            decision,
            alloc: Some(alloc),
            trace,
            predicted_xy: predicted,
        });
        Ok(())
    }

    /// Score one effect slot with true gains and advance the queues.
    fn realize(&mut self, effect_slot: usize, user_pos: &[Vec2]) -> Result<SlotRow> {
        let sc = &self.sc;
        let n = sc.n_users;
        let j = sc.uav.count;
        let pending = self.scheduled[effect_slot].take();
        let (decision, alloc, trace, predicted) = match pending {
            Some(p) => (p.decision, p.alloc, p.trace, Some(p.predicted_xy)),
            None => {
                // Proactive lead: nothing was precomputed for this slot.
                let btu = self.estimate_btu_gains(&self.initial_pos.clone());
                let alloc = min_bandwidth(
                    &btu,
                    &sc.urllc.req,
                    self.radio.noise_psd_w_hz(),
                    sc.urllc.p_b_max_w,
                    sc.w_tot_hz,
                    sc.urllc.tol_hz,
                )?;
                let (w_u, w_e) = if alloc.feasible {
                    (alloc.w_u_hz, sc.w_tot_hz - alloc.w_u_hz)
                } else {
                    (sc.w_tot_hz, 0.0)
                };
                let mut d = SlotDecision::idle(n, self.initial_pos.clone(), w_u, w_e);
                d.w_e_hz = 0.0; // no MBB service during the lead
                d.w_u_hz = sc.w_tot_hz;
                (d, Some(alloc), vec![], None)
            }
        };
        let pred_err_m = predicted
            .map(|pr| {
                pr.iter()
                    .zip(user_pos)
                    .map(|(a, b)| a.dist(*b))
                    .sum::<f64>()
                    / n as f64
            })
            .unwrap_or(f64::NAN);

        // True channel draws, one per link per slot.
        let mut gains = vec![vec![0.0; j]; n];
        for i in 0..n {
            let user = self.user3(user_pos[i]);
            for k in 0..j {
                let s = sample_true_channel(
                    LinkKind::UtG,
                    self.uav3(decision.uav_pos[k]),
                    user,
                    &self.map,
                    &self.radio,
                    &mut self.realized_rng,
                )?;
                gains[i][k] = s.gain;
            }
        }
        let n0 = self.radio.noise_psd_w_hz();
        let rates: Vec<f64> = (0..n)
            .map(|i| {
                user_rate_mbps(i, &decision.accept, &decision.powers, &gains, n0, decision.w_e_hz)
            })
            .collect();
        let p_tot: Vec<f64> = decision
            .powers
            .iter()
            .map(|p| p + sc.uav.p_circuit_w)
            .collect();
        let p_tot_queue: Vec<f64> = p_tot.iter().map(|p| p * W_TO_QUEUE).collect();

        // Realized URLLC QoS check with true BS-to-UAV gains.
        let mut true_viol = 0usize;
        let feasible = alloc.as_ref().map(|a| a.feasible).unwrap_or(false);
        if let Some(a) = &alloc {
            if a.feasible {
                let w = a.w_u_hz / j as f64;
                let need = sc.urllc.req.b_req_bits / sc.urllc.req.tau_req_s;
                for k in 0..j {
                    let s = sample_true_channel(
                        LinkKind::BtU,
                        self.radio.bs_pos,
                        self.uav3(decision.uav_pos[k]),
                        &self.map,
                        &self.radio,
                        &mut self.realized_rng,
                    )?;
                    let r = fb_rate_bps(s.gain, a.p_b_j[k], w, &sc.urllc.req, n0)?;
                    if r < need {
                        true_viol += 1;
                    }
                }
            }
        }

        lyap::update_queues(&mut self.queues, &rates, &decision.gamma, &p_tot_queue, &self.lyap_params)?;
        let (s_q, s_z, s_h) = lyap::stability_metrics(&self.queues);
        let maxes = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.max(0.0)));

        let slot_merit = trace.last().copied().unwrap_or(0.0);
        self.effects[effect_slot] = Some(decision.clone());
        Ok(SlotRow {
            t: effect_slot,
            rates_mbps: rates,
            powers_w: p_tot,
            s_q,
            s_z,
            s_h,
            w_u_hz: decision.w_u_hz,
            w_e_hz: decision.w_e_hz,
            merit: slot_merit,
            loss_btu: f64::NAN,
            loss_utg: f64::NAN,
            urllc_feasible: feasible,
            urllc_true_violations: true_viol,
            pred_err_m,
            uav_xy: decision.uav_pos.clone(),
            q_max: maxes(&self.queues.q),
            z_max: maxes(&self.queues.z),
            h_max: maxes(&self.queues.h),
        })
    }
}

/// Run one scenario end to end.
pub fn run(sc: &Scenario) -> Result<RunMetrics> {
    let mut sim = Sim::new(sc)?;
    sim.pretrain_cgnets()?;
    // Wall timeline: predictor warm-up, then a K-slot deployment hold while
    // the first proactive decisions ride through the pipeline, then the
    // scored horizon. Every scored slot carries a decision planned K slots
    // earlier; the queue clock starts at the first scored slot.
    let lead = sc.esn.k_horizon;
    let t_total = sim.warm + lead + sc.horizon;
    sim.scheduled = (0..=sc.horizon).map(|_| None).collect();
    sim.effects = (0..=sc.horizon).map(|_| None).collect();

    let mut rows: Vec<SlotRow> = Vec::with_capacity(sc.horizon);
    let mut merit_traces = Vec::new();
    let mut violations = 0usize;

    for wall in 0..t_total {
        let user_pos = positions_at(&sim.traces, wall)?;
        let in_scored = wall >= sim.warm + lead;
        let effect_slot = if in_scored { wall - sim.warm - lead + 1 } else { 0 };

        let mut row = None;
        if in_scored {
            let r = sim.realize(effect_slot, &user_pos)?;
            // Constraint audit against the previous effect positions.
            let prev_pos = if effect_slot >= 2 {
                sim.effects[effect_slot - 1]
                    .as_ref()
                    .map(|d| d.uav_pos.clone())
                    .unwrap_or_else(|| sim.initial_pos.clone())
            } else {
                sim.initial_pos.clone()
            };
            let d = sim.effects[effect_slot].as_ref().expect("just realized");
            let bad = validate(d, &prev_pos, &sim.opt_params, sc.w_tot_hz);
            violations += bad.len();
            row = Some(r);
        }

        let uav_now: Vec<Vec2> = if in_scored {
            sim.effects[effect_slot]
                .as_ref()
                .expect("realized this slot")
                .uav_pos
                .clone()
        } else {
            sim.initial_pos.clone()
        };
        let accept_now: Vec<Option<usize>> = if in_scored {
            sim.effects[effect_slot].as_ref().expect("realized").accept.clone()
        } else {
            vec![None; sc.n_users]
        };

        sim.learn_locations(wall, &user_pos, &uav_now)?;
        let (lb, lu) = sim.learn_channels(&user_pos, &uav_now, &accept_now)?;
        if let Some(mut r) = row {
            r.loss_btu = lb;
            r.loss_utg = lu;
            rows.push(r);
        }

        // Plan the decision that takes effect K slots from now.
        if wall >= sim.warm {
            let target = wall - sim.warm + 1;
            if target <= sc.horizon {
                sim.plan(target)?;
                if sc.gamma_trace {
                    if let Some(p) = &sim.scheduled[target] {
                        merit_traces.push((target, p.trace.clone()));
                    }
                }
            }
        }
    }

    // Summaries over the scored window.
    let n = sc.n_users;
    let j = sc.uav.count;
    let t = rows.len().max(1) as f64;
    let mut mean_rates = vec![0.0; n];
    let mut mean_ptot = vec![0.0; j];
    let mut infeasible = 0usize;
    let mut viol_pairs = 0usize;
    let mut feasible_pairs = 0usize;
    for r in &rows {
        for i in 0..n {
            mean_rates[i] += r.rates_mbps[i] / t;
        }
        for k in 0..j {
            mean_ptot[k] += r.powers_w[k] / t;
        }
        if r.urllc_feasible {
            feasible_pairs += j;
            viol_pairs += r.urllc_true_violations;
        } else {
            infeasible += 1;
        }
    }
    let ee = rate_utility(&mean_rates)
        - sc.lyap.rho * W_TO_QUEUE * mean_ptot.iter().sum::<f64>();
    let summary = Summary {
        algo: sc.algo.to_string(),
        seed: sc.seed,
        users: n,
        uavs: j,
        horizon: sc.horizon,
        energy_efficiency: ee,
        jain_index: jain_index(&mean_rates),
        mean_user_rates_mbps: mean_rates,
        mean_p_tot_w: mean_ptot,
        urllc_infeasible_slots: infeasible,
        urllc_true_violation_frac: if feasible_pairs > 0 {
            viol_pairs as f64 / feasible_pairs as f64
        } else {
            0.0
        },
        constraint_violations: violations,
    };
    Ok(RunMetrics {
        rows,
        summary,
        merit_traces,
    })
}

/// Convenience wrapper selecting the algorithm field by name.
pub fn run_algo(sc: &Scenario, algo: Algo) -> Result<RunMetrics> {
    let mut sc = sc.clone();
    sc.algo = algo;
    run(&sc)
}
