//! Experiment configuration.
//!
//! A scenario is a hierarchical TOML document mirroring this module's
//! structs; every default reproduces the reference setup (1x1 km urban area,
//! one URLLC slice, three MBB rate classes, 10 MHz system bandwidth).

use crate::env::{Area, ItuParams, RadioParams};
use crate::esn::EsnHyper;
use crate::geom::Vec3;
use crate::urllc::UrllcSliceReq;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    /// Proactive slicing with optimized movement.
    Re2fs,
    /// Static hovering deployment.
    Suav,
    /// Circular trajectories.
    Cct,
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "re2fs" => Ok(Algo::Re2fs),
            "suav" => Ok(Algo::Suav),
            "cct" => Ok(Algo::Cct),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algo::Re2fs => "re2fs",
            Algo::Suav => "suav",
            Algo::Cct => "cct",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub itu: ItuParams,
    pub height_cap_m: f64,
    pub radio: RadioParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            itu: ItuParams {
                alpha: 0.3,
                beta_per_km2: 300.0,
                sigma_m: 30.0,
            },
            height_cap_m: 40.0,
            radio: RadioParams {
                carrier_hz: 2.0e9,
                noise_psd_dbm_hz: -235.0,
                rician_k_db: 15.0,
                bs_pos: Vec3::new(25.0, 37.5, 25.0),
                bs_array_elements: 8,
                bs_beamwidth_deg: 65.0,
                bs_azimuth_deg: 45.0,
                uav_gain_dbi: 1.0,
                rx_gain_dbi: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    /// Optional CSV trace file `user_id,timestamp_s,x,y`; synthetic
    /// random-waypoint pedestrians otherwise.
    pub trace_path: Option<String>,
    pub slot_seconds: f64,
    /// Beacon broadcast period in slots.
    pub beacon_period_slots: usize,
    pub beacon_radius_m: f64,
    pub user_height_m: f64,
    /// Rate requirement of each MBB class, Mbps.
    pub rate_classes_mbps: Vec<f64>,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            trace_path: None,
            slot_seconds: 200.0,
            beacon_period_slots: 1,
            beacon_radius_m: 500.0,
            user_height_m: 1.8,
            rate_classes_mbps: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UrllcConfig {
    pub req: UrllcSliceReq,
    /// BS transmit power budget, watts.
    pub p_b_max_w: f64,
    /// Bandwidth search tolerance, Hz.
    pub tol_hz: f64,
}

impl Default for UrllcConfig {
    fn default() -> Self {
        UrllcConfig {
            req: UrllcSliceReq {
                tau_req_s: 5e-3,
                eps_req: 1e-7,
                b_req_bits: 160.0,
            },
            p_b_max_w: 50.0,
            tol_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UavConfig {
    pub count: usize,
    pub altitude_m: f64,
    pub p_circuit_w: f64,
    pub p_hat_w: f64,
    pub p_tilde_w: f64,
    pub e_max_m: f64,
    pub d_min_m: f64,
}

impl Default for UavConfig {
    fn default() -> Self {
        UavConfig {
            count: 3,
            altitude_m: 50.0,
            p_circuit_w: 0.02,
            p_hat_w: 1.65,
            p_tilde_w: 1.5,
            e_max_m: 50.0,
            d_min_m: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnConfig {
    pub n_reservoir: usize,
    pub q_history: usize,
    pub k_horizon: usize,
    pub xi: f64,
    pub lambda: f64,
    pub eta: f64,
    pub r_max: usize,
    pub spectral_radius: f64,
    pub tol: f64,
    pub pretrain_episodes: usize,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            n_reservoir: 300,
            q_history: 6,
            k_horizon: 10,
            xi: 1e-3,
            lambda: 1e-3,
            eta: 1e-3,
            r_max: 100,
            spectral_radius: 0.9,
            tol: 1e-6,
            pretrain_episodes: 500,
        }
    }
}

impl EsnConfig {
    pub fn hyper(&self) -> EsnHyper {
        EsnHyper {
            q_history: self.q_history,
            k_horizon: self.k_horizon,
            xi: self.xi,
            lambda: self.lambda,
            eta: self.eta,
            r_max: self.r_max,
            spectral_radius: self.spectral_radius,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CgNetConfig {
    pub hidden: (usize, usize),
    pub lr: f64,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    pub btu_pretrain_episodes: usize,
    pub utg_pretrain_episodes: usize,
    /// Fading realizations averaged into one measurement.
    pub measurement_avg_draws: usize,
}

impl Default for CgNetConfig {
    fn default() -> Self {
        CgNetConfig {
            hidden: (512, 256),
            lr: 1e-3,
            minibatch: 64,
            buffer_capacity: 1_000_000,
            btu_pretrain_episodes: 3000,
            utg_pretrain_episodes: 1000,
            measurement_avg_draws: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapConfig {
    pub v: f64,
    pub rho: f64,
}

impl Default for LyapConfig {
    fn default() -> Self {
        LyapConfig { v: 2.0, rho: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub sca_max_iters: usize,
    pub sca_rel_tol: f64,
    pub kkt_tol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            sca_max_iters: 1000,
            sca_rel_tol: 1e-5,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub algo: Algo,
    /// Scored horizon in slots.
    pub horizon: usize,
    pub n_users: usize,
    pub area: Area,
    pub env: EnvConfig,
    pub mobility: MobilityConfig,
    pub urllc: UrllcConfig,
    pub uav: UavConfig,
    pub esn: EsnConfig,
    pub cgnet: CgNetConfig,
    pub lyap: LyapConfig,
    pub opt: OptConfig,
    /// Total system bandwidth, Hz.
    pub w_tot_hz: f64,
    /// Emit the per-iteration merit trace.
    pub gamma_trace: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            algo: Algo::Re2fs,
            horizon: 500,
            n_users: 64,
            area: Area {
                width_m: 1000.0,
                height_m: 1000.0,
            },
            env: EnvConfig::default(),
            mobility: MobilityConfig::default(),
            urllc: UrllcConfig::default(),
            uav: UavConfig::default(),
            esn: EsnConfig::default(),
            cgnet: CgNetConfig::default(),
            lyap: LyapConfig::default(),
            opt: OptConfig::default(),
            w_tot_hz: 1e7,
            gamma_trace: false,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("scenario toml: {e}"),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Scenario> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_users == 0 || self.uav.count == 0 {
            return Err(Error::Config("horizon, users and uavs must be positive".into()));
        }
        if self.w_tot_hz <= 0.0 {
            return Err(Error::Config("total bandwidth must be positive".into()));
        }
        if self.mobility.rate_classes_mbps.is_empty() {
            return Err(Error::Config("need at least one MBB rate class".into()));
        }
        if self.uav.p_hat_w <= self.uav.p_circuit_w {
            return Err(Error::Config("instantaneous power cap below circuit power".into()));
        }
        self.esn.hyper().validate()?;
        self.urllc.req.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_values() {
        let s = Scenario::default();
        assert_eq!(s.w_tot_hz, 1e7);
        assert_eq!(s.horizon, 500);
        assert_eq!(s.esn.k_horizon, 10);
        assert_eq!(s.uav.e_max_m, 50.0);
        assert_eq!(s.uav.d_min_m, 5.0);
        assert_eq!(s.uav.p_circuit_w, 0.02);
        assert_eq!(s.uav.p_hat_w, 1.65);
        assert_eq!(s.uav.p_tilde_w, 1.5);
        assert_eq!(s.lyap.rho, 0.01);
        assert_eq!(s.lyap.v, 2.0);
        assert_eq!(s.env.radio.bs_pos.x, 25.0);
        assert_eq!(s.env.radio.bs_pos.y, 37.5);
        assert_eq!(s.env.radio.bs_pos.z, 25.0);
        assert_eq!(s.uav.altitude_m, 50.0);
        assert_eq!(s.mobility.rate_classes_mbps, vec![1.0, 2.0, 4.0]);
        assert_eq!(s.urllc.req.b_req_bits, 160.0);
        assert_eq!(s.cgnet.hidden, (512, 256));
        s.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_override() {
        let s = Scenario::default();
        let text = s.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back.n_users, s.n_users);
        assert_eq!(back.esn.n_reservoir, s.esn.n_reservoir);

        let partial = "seed = 9\nhorizon = 50\n[uav]\ncount = 2\n";
        let sc = Scenario::from_toml_str(partial).unwrap();
        assert_eq!(sc.seed, 9);
        assert_eq!(sc.horizon, 50);
        assert_eq!(sc.uav.count, 2);
        assert_eq!(sc.n_users, 64); // default survives
    }

    #[test]
    fn invalid_scenario_rejected() {
        let bad = "horizon = 0\n";
        assert!(Scenario::from_toml_str(bad).is_err());
    }
}
