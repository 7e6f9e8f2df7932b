//! Synthetic urban radio ground truth.
//!
//! Buildings are laid out on a jittered grid following the ITU-R built-up
//! statistics (built ratio `alpha`, density `beta`, Rayleigh heights), path
//! loss follows the 3GPP urban-macro LoS/NLoS model, and the BS carries an
//! N-element vertical uniform linear array with the 3GPP element pattern.
//! Everything is a pure function of its inputs plus an explicit RNG handle.

use crate::geom::{segment_intersects_box, Vec2, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Built-up statistics of the ITU local building model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ItuParams {
    /// Ratio of land covered by buildings.
    pub alpha: f64,
    /// Buildings per square kilometre.
    pub beta_per_km2: f64,
    /// Mean building height in metres (heights are Rayleigh distributed).
    pub sigma_m: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

impl Area {
    pub fn km2(&self) -> f64 {
        self.width_m * self.height_m / 1e6
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width_m && p.y >= 0.0 && p.y <= self.height_m
    }
}

/// One axis-aligned building footprint with a flat roof.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Building {
    pub min: Vec2,
    pub max: Vec2,
    pub height_m: f64,
}

/// A realization of the urban environment, serializable for replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildingMap {
    pub buildings: Vec<Building>,
    pub area: Area,
    pub itu_params: ItuParams,
    pub height_cap_m: f64,
}

/// Jittered-grid realization of the ITU statistics: square footprints with
/// side chosen so the built ratio matches `alpha`, count matching `beta`,
/// Rayleigh heights with mean `sigma` clipped at the cap.
pub fn generate_buildings(
    itu: ItuParams,
    area: Area,
    height_cap_m: f64,
    rng: &mut impl Rng,
) -> Result<BuildingMap> {
    if area.width_m <= 0.0 || area.height_m <= 0.0 {
        return Err(Error::Config("area dimensions must be positive".into()));
    }
    if !(itu.alpha > 0.0 && itu.alpha < 1.0) || itu.beta_per_km2 <= 0.0 || itu.sigma_m <= 0.0 {
        return Err(Error::Config("ITU parameters out of range".into()));
    }

    let target = itu.beta_per_km2 * area.km2();
    let mut buildings = Vec::new();
    if target >= 0.5 {
        // Grid with one building per cell; pitch keeps the count near beta.
        let aspect = area.width_m / area.height_m;
        let ny = (target / aspect).sqrt().round().max(1.0) as usize;
        let nx = ((target / ny as f64).round().max(1.0)) as usize;
        let pitch_x = area.width_m / nx as f64;
        let pitch_y = area.height_m / ny as f64;
        let n = (nx * ny) as f64;
        // n * side^2 = alpha * area
        let side = (itu.alpha * area.width_m * area.height_m / n).sqrt();
        let side = side.min(pitch_x.min(pitch_y) * 0.98);
        // Rayleigh scale from the requested mean.
        let scale = itu.sigma_m * (2.0 / PI).sqrt();
        for iy in 0..ny {
            for ix in 0..nx {
                let cx = (ix as f64 + 0.5) * pitch_x;
                let cy = (iy as f64 + 0.5) * pitch_y;
                let jx = (pitch_x - side) * 0.5 * rng.random_range(-0.9..0.9);
                let jy = (pitch_y - side) * 0.5 * rng.random_range(-0.9..0.9);
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let h = (scale * (-2.0 * u.ln()).sqrt()).min(height_cap_m);
                let min = Vec2::new(cx + jx - side / 2.0, cy + jy - side / 2.0);
                let max = Vec2::new(min.x + side, min.y + side);
                buildings.push(Building {
                    min: Vec2::new(min.x.max(0.0), min.y.max(0.0)),
                    max: Vec2::new(max.x.min(area.width_m), max.y.min(area.height_m)),
                    height_m: h,
                });
            }
        }
    }

    Ok(BuildingMap {
        buildings,
        area,
        itu_params: itu,
        height_cap_m,
    })
}

impl BuildingMap {
    /// True iff the 3D segment `p1..p2` intersects no building volume.
    pub fn is_los(&self, p1: Vec3, p2: Vec3) -> bool {
        let top = p1.z.max(p2.z);
        let bottom = p1.z.min(p2.z);
        for b in &self.buildings {
            if bottom >= b.height_m && top >= b.height_m {
                continue;
            }
            let lo = Vec3::new(b.min.x, b.min.y, 0.0);
            let hi = Vec3::new(b.max.x, b.max.y, b.height_m);
            if segment_intersects_box(p1, p2, lo, hi) {
                return false;
            }
        }
        true
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("building map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("building map json: {e}"),
        })
    }
}

/// Radio-layer constants shared by both link directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadioParams {
    pub carrier_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub rician_k_db: f64,
    pub bs_pos: Vec3,
    pub bs_array_elements: usize,
    pub bs_beamwidth_deg: f64,
    /// Boresight azimuth of the BS panel, degrees from +x.
    pub bs_azimuth_deg: f64,
    pub uav_gain_dbi: f64,
    pub rx_gain_dbi: f64,
}

impl RadioParams {
    pub fn noise_psd_w_hz(&self) -> f64 {
        10f64.powf(self.noise_psd_dbm_hz / 10.0) * 1e-3
    }
}

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// 3GPP urban-macro path loss (38.901 family), LoS or NLoS branch.
///
/// `d_m` is the 3D distance; `heights` carries the two endpoint heights. The
/// lower endpoint plays the UT role; its height is clamped into the model's
/// validated range for the NLoS height correction. NLoS is floored at the LoS
/// value as in the standard.
pub fn path_loss_db(params: &RadioParams, d_m: f64, los: bool, heights: (f64, f64)) -> Result<f64> {
    if d_m <= 0.0 {
        return Err(Error::Domain("path loss needs a positive distance".into()));
    }
    let fc_ghz = params.carrier_hz / 1e9;
    let h_bs = heights.0.max(heights.1);
    let h_ut = heights.0.min(heights.1).clamp(1.5, 22.5);
    let dh = h_bs - h_ut;
    let d2d_sq = (d_m * d_m - dh * dh).max(0.0);
    let d2d = d2d_sq.sqrt();
    // Breakpoint with effective antenna heights (environment height 1 m).
    let d_bp = 4.0 * (h_bs - 1.0).max(0.0) * (h_ut - 1.0).max(0.0) * params.carrier_hz
        / SPEED_OF_LIGHT;

    let pl_los = if d2d <= d_bp || d_bp <= 0.0 {
        28.0 + 22.0 * d_m.log10() + 20.0 * fc_ghz.log10()
    } else {
        28.0 + 40.0 * d_m.log10() + 20.0 * fc_ghz.log10()
            - 9.0 * (d_bp * d_bp + dh * dh).log10()
    };
    if los {
        return Ok(pl_los);
    }
    let pl_nlos = 13.54 + 39.08 * d_m.log10() + 20.0 * fc_ghz.log10() - 0.6 * (h_ut - 1.5);
    Ok(pl_nlos.max(pl_los))
}

/// BS transmit antenna gain toward `uav_pos` (linear power ratio).
///
/// 3GPP directional element (8 dBi peak, 30 dB floors) combined with the
/// vertical uniform linear array factor at half-wavelength spacing, steered
/// to the horizon (0 degree downtilt).
pub fn bs_antenna_gain(params: &RadioParams, uav_pos: Vec3) -> f64 {
    let d = Vec3::new(
        uav_pos.x - params.bs_pos.x,
        uav_pos.y - params.bs_pos.y,
        uav_pos.z - params.bs_pos.z,
    );
    let r = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    // Zenith angle from vertical: 90 deg = horizon.
    let theta_deg = (d.z / r).clamp(-1.0, 1.0).acos().to_degrees();
    let mut phi_deg = d.y.atan2(d.x).to_degrees() - params.bs_azimuth_deg;
    while phi_deg > 180.0 {
        phi_deg -= 360.0;
    }
    while phi_deg < -180.0 {
        phi_deg += 360.0;
    }

    let bw = params.bs_beamwidth_deg;
    let a_v = -(12.0 * ((theta_deg - 90.0) / bw).powi(2)).min(30.0);
    let a_h = -(12.0 * (phi_deg / bw).powi(2)).min(30.0);
    let element_db = 8.0 - (-(a_v + a_h)).min(30.0);

    // Vertical ULA, spacing lambda/2, steered to 90 deg zenith.
    let n = params.bs_array_elements.max(1);
    let psi = PI * (theta_deg.to_radians().cos() - 0.0);
    let af = if psi.abs() < 1e-12 {
        n as f64
    } else {
        let num = (n as f64 * psi / 2.0).sin();
        let den = (psi / 2.0).sin();
        (num / den).powi(2) / n as f64
    };
    db_to_lin(element_db) * af
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// BS to UAV uplink control channel.
    BtU,
    /// UAV to ground-user downlink.
    UtG,
}

/// One draw of the true channel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrueChannelSample {
    /// Linear power gain h.
    pub gain: f64,
    /// Distance-free coefficient: gain with the inverse-square factored out.
    pub coeff: f64,
    pub los: bool,
    pub distance_m: f64,
}

fn fading_power(los: bool, rician_k_db: f64, rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let a: f64 = normal.sample(rng);
    let b: f64 = normal.sample(rng);
    if los {
        // Rician with unit mean power: fixed component plus scattered CN(0,1).
        let k = db_to_lin(rician_k_db);
        let los_amp = (k / (k + 1.0)).sqrt();
        let sc = (1.0 / (k + 1.0)).sqrt();
        let re = los_amp + sc * a / 2f64.sqrt();
        let im = sc * b / 2f64.sqrt();
        re * re + im * im
    } else {
        // Rayleigh |CN(0,1)|^2, unit mean.
        (a * a + b * b) / 2.0
    }
}

fn antenna_product(kind: LinkKind, params: &RadioParams, tx: Vec3, rx: Vec3) -> f64 {
    match kind {
        LinkKind::BtU => {
            let uav = if (tx.x, tx.y, tx.z) == (params.bs_pos.x, params.bs_pos.y, params.bs_pos.z) {
                rx
            } else {
                tx
            };
            bs_antenna_gain(params, uav) * db_to_lin(params.rx_gain_dbi)
        }
        LinkKind::UtG => db_to_lin(params.uav_gain_dbi) * db_to_lin(params.rx_gain_dbi),
    }
}

/// Draw the instantaneous channel between `tx_pos` and `rx_pos`.
pub fn sample_true_channel(
    kind: LinkKind,
    tx_pos: Vec3,
    rx_pos: Vec3,
    map: &BuildingMap,
    params: &RadioParams,
    rng: &mut impl Rng,
) -> Result<TrueChannelSample> {
    let d = tx_pos.dist(rx_pos);
    if d == 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    let los = map.is_los(tx_pos, rx_pos);
    let pl = path_loss_db(params, d, los, (tx_pos.z, rx_pos.z))?;
    let g = antenna_product(kind, params, tx_pos, rx_pos);
    let f2 = fading_power(los, params.rician_k_db, rng);
    let gain = g * db_to_lin(-pl) * f2;
    Ok(TrueChannelSample {
        gain,
        coeff: gain * (d * d),
        los,
        distance_m: d,
    })
}

/// Measured channel-gain coefficient: the instantaneous coefficient with
/// small-scale fading averaged over `draws` realizations, as a receiver
/// reporting averaged signal power would produce.
pub fn measure_coeff(
    kind: LinkKind,
    tx_pos: Vec3,
    rx_pos: Vec3,
    map: &BuildingMap,
    params: &RadioParams,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<TrueChannelSample> {
    let d = tx_pos.dist(rx_pos);
    if d == 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    let los = map.is_los(tx_pos, rx_pos);
    let pl = path_loss_db(params, d, los, (tx_pos.z, rx_pos.z))?;
    let g = antenna_product(kind, params, tx_pos, rx_pos);
    let n = draws.max(1);
    let mut f2 = 0.0;
    for _ in 0..n {
        f2 += fading_power(los, params.rician_k_db, rng);
    }
    f2 /= n as f64;
    let gain = g * db_to_lin(-pl) * f2;
    Ok(TrueChannelSample {
        gain,
        coeff: gain * (d * d),
        los,
        distance_m: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::{sub_rng, Stream};

    fn itu() -> ItuParams {
        ItuParams {
            alpha: 0.3,
            beta_per_km2: 300.0,
            sigma_m: 30.0,
        }
    }

    fn area1km() -> Area {
        Area {
            width_m: 1000.0,
            height_m: 1000.0,
        }
    }

    fn radio() -> RadioParams {
        RadioParams {
            carrier_hz: 2.0e9,
            noise_psd_dbm_hz: -235.0,
            rician_k_db: 15.0,
            bs_pos: Vec3::new(25.0, 37.5, 25.0),
            bs_array_elements: 8,
            bs_beamwidth_deg: 65.0,
            bs_azimuth_deg: 45.0,
            uav_gain_dbi: 1.0,
            rx_gain_dbi: 1.0,
        }
    }

    #[test]
    fn building_count_and_heights_match_itu_statistics() {
        let mut rng = sub_rng(7, Stream::Buildings, 0);
        let map = generate_buildings(itu(), area1km(), 40.0, &mut rng).unwrap();
        let n = map.buildings.len() as f64;
        assert!((n - 300.0).abs() <= 30.0, "count {n} not near 300");
        for b in &map.buildings {
            assert!(b.height_m > 0.0 && b.height_m <= 40.0);
            assert!(b.min.x >= 0.0 && b.max.x <= 1000.0);
            assert!(b.min.y >= 0.0 && b.max.y <= 1000.0);
        }
        // Built ratio near alpha.
        let built: f64 = map
            .buildings
            .iter()
            .map(|b| (b.max.x - b.min.x) * (b.max.y - b.min.y))
            .sum();
        let ratio = built / 1e6;
        assert!((ratio - 0.3).abs() < 0.05, "built ratio {ratio}");
    }

    #[test]
    fn zero_intensity_gives_empty_map() {
        let mut rng = sub_rng(1, Stream::Buildings, 0);
        let tiny = Area {
            width_m: 10.0,
            height_m: 10.0,
        };
        let map = generate_buildings(
            ItuParams {
                alpha: 0.3,
                beta_per_km2: 1.0,
                sigma_m: 30.0,
            },
            tiny,
            40.0,
            &mut rng,
        )
        .unwrap();
        assert!(map.buildings.is_empty());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let m1 = generate_buildings(itu(), area1km(), 40.0, &mut sub_rng(9, Stream::Buildings, 0))
            .unwrap();
        let m2 = generate_buildings(itu(), area1km(), 40.0, &mut sub_rng(9, Stream::Buildings, 0))
            .unwrap();
        assert_eq!(m1.to_json(), m2.to_json());
    }

    #[test]
    fn bad_area_is_config_error() {
        let mut rng = sub_rng(1, Stream::Buildings, 0);
        let bad = Area {
            width_m: -5.0,
            height_m: 100.0,
        };
        assert!(generate_buildings(itu(), bad, 40.0, &mut rng).is_err());
    }

    #[test]
    fn los_above_all_buildings() {
        let mut rng = sub_rng(3, Stream::Buildings, 0);
        let map = generate_buildings(itu(), area1km(), 40.0, &mut rng).unwrap();
        assert!(map.is_los(Vec3::new(10.0, 10.0, 50.0), Vec3::new(900.0, 900.0, 50.0)));
    }

    #[test]
    fn blocked_by_explicit_building() {
        let map = BuildingMap {
            buildings: vec![Building {
                min: Vec2::new(40.0, -10.0),
                max: Vec2::new(60.0, 10.0),
                height_m: 30.0,
            }],
            area: area1km(),
            itu_params: itu(),
            height_cap_m: 40.0,
        };
        assert!(!map.is_los(Vec3::new(0.0, 0.0, 5.0), Vec3::new(100.0, 0.0, 5.0)));
        // Above the roof: clear.
        assert!(map.is_los(Vec3::new(0.0, 0.0, 35.0), Vec3::new(100.0, 0.0, 35.0)));
    }

    #[test]
    fn rooftop_to_vertical_point_is_los() {
        let map = BuildingMap {
            buildings: vec![Building {
                min: Vec2::new(0.0, 0.0),
                max: Vec2::new(20.0, 20.0),
                height_m: 30.0,
            }],
            area: area1km(),
            itu_params: itu(),
            height_cap_m: 40.0,
        };
        assert!(map.is_los(Vec3::new(10.0, 10.0, 30.0), Vec3::new(10.0, 10.0, 80.0)));
    }

    #[test]
    fn los_is_symmetric() {
        let mut rng = sub_rng(11, Stream::Buildings, 0);
        let map = generate_buildings(itu(), area1km(), 40.0, &mut rng).unwrap();
        let mut geo = sub_rng(11, Stream::PretrainGeometry, 0);
        for _ in 0..200 {
            let a = Vec3::new(
                geo.random_range(0.0..1000.0),
                geo.random_range(0.0..1000.0),
                geo.random_range(1.0..60.0),
            );
            let b = Vec3::new(
                geo.random_range(0.0..1000.0),
                geo.random_range(0.0..1000.0),
                geo.random_range(1.0..60.0),
            );
            assert_eq!(map.is_los(a, b), map.is_los(b, a));
        }
    }

    #[test]
    fn path_loss_doubling_distance_pre_breakpoint() {
        let p = radio();
        // Horizontal LoS geometry well below the breakpoint.
        let pl1 = path_loss_db(&p, 100.0, true, (25.0, 50.0)).unwrap();
        let pl2 = path_loss_db(&p, 200.0, true, (25.0, 50.0)).unwrap();
        let expect = 22.0 * 2f64.log10();
        assert!(((pl2 - pl1) - expect).abs() < 1e-9);
    }

    #[test]
    fn nlos_never_below_los() {
        let p = radio();
        let mut d = 10.0;
        while d <= 2000.0 {
            for heights in [(25.0, 50.0), (50.0, 1.8)] {
                let los = path_loss_db(&p, d, true, heights).unwrap();
                let nlos = path_loss_db(&p, d, false, heights).unwrap();
                assert!(nlos >= los - 1e-12, "d={d} heights={heights:?}");
            }
            d *= 1.3;
        }
    }

    #[test]
    fn path_loss_monotone_in_distance() {
        let p = radio();
        for los in [true, false] {
            let mut prev = 0.0;
            let mut d = 10.0;
            let mut first = true;
            while d <= 2000.0 {
                let pl = path_loss_db(&p, d, los, (50.0, 1.8)).unwrap();
                if !first {
                    assert!(pl >= prev);
                }
                prev = pl;
                first = false;
                d *= 1.1;
            }
        }
    }

    #[test]
    fn path_loss_rejects_zero_distance() {
        assert!(path_loss_db(&radio(), 0.0, true, (25.0, 50.0)).is_err());
    }

    #[test]
    fn antenna_peak_at_boresight_and_bounded() {
        let p = radio();
        // Boresight: horizon direction along the panel azimuth.
        let dir = Vec3::new(
            p.bs_pos.x + 45f64.to_radians().cos() * 500.0,
            p.bs_pos.y + 45f64.to_radians().sin() * 500.0,
            p.bs_pos.z,
        );
        let peak = bs_antenna_gain(&p, dir);
        let bound = 8.0 * db_to_lin(8.0);
        assert!(peak <= bound * (1.0 + 1e-9));
        assert!((peak - bound).abs() / bound < 1e-6);
        // Any other direction is below the peak.
        for zdeg in [30.0f64, 60.0, 80.0, 100.0] {
            let z = p.bs_pos.z + 500.0 * (90.0 - zdeg).to_radians().tan();
            let g = bs_antenna_gain(&p, Vec3::new(dir.x, dir.y, z));
            assert!(g <= peak * (1.0 + 1e-9));
        }
    }

    #[test]
    fn element_rolloff_is_3db_at_half_beamwidth() {
        // Isolate the element pattern with a single-element "array".
        let mut p = radio();
        p.bs_array_elements = 1;
        let az = p.bs_azimuth_deg.to_radians();
        let boresight = Vec3::new(
            p.bs_pos.x + az.cos() * 500.0,
            p.bs_pos.y + az.sin() * 500.0,
            p.bs_pos.z,
        );
        let peak = bs_antenna_gain(&p, boresight);
        // Half the beamwidth off in azimuth.
        let half = (p.bs_azimuth_deg + p.bs_beamwidth_deg / 2.0).to_radians();
        let off = Vec3::new(
            p.bs_pos.x + half.cos() * 500.0,
            p.bs_pos.y + half.sin() * 500.0,
            p.bs_pos.z,
        );
        let g = bs_antenna_gain(&p, off);
        let drop_db = 10.0 * (peak / g).log10();
        assert!((drop_db - 3.0).abs() < 0.02, "rolloff {drop_db} dB");
    }

    #[test]
    fn antenna_azimuth_symmetry() {
        let p = radio();
        for dphi in [10.0f64, 25.0, 50.0] {
            let a1 = (p.bs_azimuth_deg + dphi).to_radians();
            let a2 = (p.bs_azimuth_deg - dphi).to_radians();
            let g1 = bs_antenna_gain(
                &p,
                Vec3::new(p.bs_pos.x + a1.cos() * 400.0, p.bs_pos.y + a1.sin() * 400.0, 50.0),
            );
            let g2 = bs_antenna_gain(
                &p,
                Vec3::new(p.bs_pos.x + a2.cos() * 400.0, p.bs_pos.y + a2.sin() * 400.0, 50.0),
            );
            assert!((g1 - g2).abs() / g1 < 1e-9);
        }
    }

    #[test]
    fn coeff_is_gain_times_distance_squared() {
        let mut rng = sub_rng(5, Stream::Buildings, 0);
        let map = generate_buildings(itu(), area1km(), 40.0, &mut rng).unwrap();
        let p = radio();
        let mut frng = sub_rng(5, Stream::FadingRealized, 0);
        for _ in 0..50 {
            let s = sample_true_channel(
                LinkKind::UtG,
                Vec3::new(400.0, 400.0, 50.0),
                Vec3::new(
                    frng.random_range(0.0..1000.0),
                    frng.random_range(0.0..1000.0),
                    1.8,
                ),
                &map,
                &p,
                &mut frng,
            )
            .unwrap();
            assert!(s.gain > 0.0);
            let d2 = s.distance_m * s.distance_m;
            assert_eq!(s.coeff, s.gain * d2);
        }
    }

    #[test]
    fn same_rng_state_gives_same_sample() {
        let map = generate_buildings(itu(), area1km(), 40.0, &mut sub_rng(5, Stream::Buildings, 0))
            .unwrap();
        let p = radio();
        let tx = Vec3::new(300.0, 300.0, 50.0);
        let rx = Vec3::new(500.0, 600.0, 1.8);
        let s1 =
            sample_true_channel(LinkKind::UtG, tx, rx, &map, &p, &mut sub_rng(8, Stream::FadingRealized, 1))
                .unwrap();
        let s2 =
            sample_true_channel(LinkKind::UtG, tx, rx, &map, &p, &mut sub_rng(8, Stream::FadingRealized, 1))
                .unwrap();
        assert_eq!(s1.gain, s2.gain);
    }

    #[test]
    fn fading_has_unit_mean_power() {
        let mut rng = sub_rng(13, Stream::FadingRealized, 0);
        for los in [false, true] {
            let n = 100_000;
            let mean: f64 =
                (0..n).map(|_| fading_power(los, 15.0, &mut rng)).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 0.02, "los={los} mean={mean}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn los_symmetry(
                ax in 0.0..1000.0f64, ay in 0.0..1000.0f64, az in 1.0..80.0f64,
                bx in 0.0..1000.0f64, by in 0.0..1000.0f64, bz in 1.0..80.0f64,
            ) {
                let map = generate_buildings(
                    super::itu(),
                    super::area1km(),
                    40.0,
                    &mut crate::rngutil::sub_rng(99, crate::rngutil::Stream::Buildings, 0),
                )
                .unwrap();
                let a = Vec3::new(ax, ay, az);
                let b = Vec3::new(bx, by, bz);
                prop_assert_eq!(map.is_los(a, b), map.is_los(b, a));
            }

            #[test]
            fn nlos_dominates_los(d in 10.0..2000.0f64, h in 1.8..60.0f64) {
                let p = super::radio();
                let los = path_loss_db(&p, d, true, (50.0, h)).unwrap();
                let nlos = path_loss_db(&p, d, false, (50.0, h)).unwrap();
                prop_assert!(nlos >= los - 1e-12);
            }
        }
    }

    #[test]
    fn map_json_round_trip() {
        let map = generate_buildings(itu(), area1km(), 40.0, &mut sub_rng(2, Stream::Buildings, 0))
            .unwrap();
        let back = BuildingMap::from_json(&map.to_json()).unwrap();
        assert_eq!(map.buildings.len(), back.buildings.len());
        assert_eq!(map.buildings[0].height_m, back.buildings[0].height_m);
    }
}
