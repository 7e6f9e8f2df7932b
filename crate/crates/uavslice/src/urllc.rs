//! Finite-blocklength URLLC provisioning.
//!
//! For short control packets the Shannon rate overstates what a link can
//! carry; the rate loses a dispersion penalty proportional to the inverse
//! Q-function of the decoding-error target. Setting the rate to `b/tau` and
//! solving for power gives the per-UAV requirement; the total over UAVs is
//! U-shaped in the URLLC bandwidth, so the smallest feasible bandwidth is
//! found with two binary searches: one for the stationary point bounding the
//! search interval, one for the feasibility boundary itself.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// QoS tuple of one URLLC slice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UrllcSliceReq {
    /// Packet transmission latency budget, seconds.
    pub tau_req_s: f64,
    /// Codeword decoding error probability.
    pub eps_req: f64,
    /// Packet size, bits.
    pub b_req_bits: f64,
}

impl UrllcSliceReq {
    pub fn validate(&self) -> Result<()> {
        if self.tau_req_s <= 0.0 || self.b_req_bits < 1.0 {
            return Err(Error::Config("need tau > 0 and b >= 1".into()));
        }
        if !(self.eps_req > 0.0 && self.eps_req < 0.5) {
            return Err(Error::Config("decoding error must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Result of the bandwidth/power split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UrllcAlloc {
    pub w_u_hz: f64,
    /// Per-UAV BS transmit powers meeting the QoS at `w_u/J` each.
    pub p_b_j: Vec<f64>,
    pub feasible: bool,
    /// Stationary bandwidth of the total-power curve.
    pub w_th_hz: f64,
    /// Headroom `p_max - sum(p_b_j)` left by the tolerance of the search.
    pub power_gap_w: f64,
}

/// Gaussian Q-function.
pub fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse Q-function: bisection bracketing plus Newton polish, accurate to
/// machine-level relative error in the round trip.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("q_inv needs p in (0,1), got {p}")));
    }
    let mut lo = -40.0;
    let mut hi = 40.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if q_func(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton steps on Q(x) - p with Q'(x) = -pdf(x).
    for _ in 0..3 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf == 0.0 {
            break;
        }
        x += (q_func(x) - p) / pdf;
    }
    Ok(x)
}

/// Exponent of the power requirement at per-UAV bandwidth `w`.
fn rate_exponent(w: f64, req: &UrllcSliceReq, qinv_eps: f64) -> f64 {
    req.b_req_bits * LN_2 / (req.tau_req_s * w) + qinv_eps / (req.tau_req_s * w).sqrt()
}

fn required_power_inner(h: f64, w: f64, req: &UrllcSliceReq, n0: f64, qinv_eps: f64) -> f64 {
    n0 * w / h * (rate_exponent(w, req, qinv_eps).exp() - 1.0)
}

/// BS transmit power required to close a finite-blocklength link of gain `h`
/// over bandwidth `w` at the slice QoS (dispersion approximated at one).
pub fn required_power(h: f64, w_hz: f64, req: &UrllcSliceReq, n0: f64) -> Result<f64> {
    if h <= 0.0 || w_hz <= 0.0 {
        return Err(Error::Domain("required_power needs h > 0 and w > 0".into()));
    }
    Ok(required_power_inner(h, w_hz, req, n0, q_inv(req.eps_req)?))
}

fn total_power_inner(h: &[f64], w_u: f64, req: &UrllcSliceReq, n0: f64, qinv_eps: f64) -> f64 {
    let w = w_u / h.len().max(1) as f64;
    h.iter()
        .map(|hj| required_power_inner(*hj, w, req, n0, qinv_eps))
        .sum()
}

/// Total BS power to serve every UAV with the URLLC bandwidth split equally.
pub fn total_power(h: &[f64], w_u_hz: f64, req: &UrllcSliceReq, n0: f64) -> Result<f64> {
    if w_u_hz <= 0.0 {
        return Err(Error::Domain("total_power needs w_u > 0".into()));
    }
    Ok(total_power_inner(h, w_u_hz, req, n0, q_inv(req.eps_req)?))
}

/// Analytic derivative of the total-power curve in the URLLC bandwidth.
fn total_power_derivative_inner(
    h: &[f64],
    w_u: f64,
    req: &UrllcSliceReq,
    n0: f64,
    qinv_eps: f64,
) -> f64 {
    let j = h.len().max(1) as f64;
    let w = w_u / j;
    let a = req.b_req_bits * LN_2 / req.tau_req_s;
    let c = qinv_eps / req.tau_req_s.sqrt();
    let g = a / w + c / w.sqrt();
    let gp = -a / (w * w) - 0.5 * c / w.powf(1.5);
    let eg = g.exp();
    // d/dw of w (e^g - 1) = e^g (1 + w g') - 1
    let shape = eg * (1.0 + w * gp) - 1.0;
    h.iter().map(|hj| n0 / hj * shape).sum::<f64>() / j
}

pub fn total_power_derivative(h: &[f64], w_u_hz: f64, req: &UrllcSliceReq, n0: f64) -> Result<f64> {
    if w_u_hz <= 0.0 {
        return Err(Error::Domain("derivative needs w_u > 0".into()));
    }
    Ok(total_power_derivative_inner(h, w_u_hz, req, n0, q_inv(req.eps_req)?))
}

/// Minimum URLLC bandwidth meeting the BS power budget.
///
/// First binary search locates the stationary bandwidth of the total-power
/// curve; the upper bound of the feasible search interval is its minimum with
/// the system bandwidth. The second binary search finds the smallest
/// bandwidth whose total power fits the budget, to within `tol_hz`.
/// Infeasibility is a state, not an error.
pub fn min_bandwidth(
    h: &[f64],
    req: &UrllcSliceReq,
    n0: f64,
    p_b_max: f64,
    w_tot_hz: f64,
    tol_hz: f64,
) -> Result<UrllcAlloc> {
    if tol_hz <= 0.0 {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if h.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain("gains must be positive".into()));
    }
    let qinv_eps = q_inv(req.eps_req)?;
    let j = h.len().max(1) as f64;

    // Stationary point of the U-shaped curve.
    let mut hi = w_tot_hz.max(1.0);
    let mut guard = 0;
    while total_power_derivative_inner(h, hi, req, n0, qinv_eps) <= 0.0 && guard < 300 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = (tol_hz * 1e-3).min(1e-3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total_power_derivative_inner(h, mid, req, n0, qinv_eps) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w_th = 0.5 * (lo + hi);

    let w_ub = w_th.min(w_tot_hz);
    if total_power_inner(h, w_ub, req, n0, qinv_eps) > p_b_max {
        // Even the power-optimal bandwidth misses the budget.
        let p = h
            .iter()
            .map(|hj| required_power_inner(*hj, w_ub / j, req, n0, qinv_eps))
            .collect();
        return Ok(UrllcAlloc {
            w_u_hz: w_tot_hz,
            p_b_j: p,
            feasible: false,
            w_th_hz: w_th,
            power_gap_w: 0.0,
        });
    }

    // Smallest feasible bandwidth: p(0+) is infinite, p(w_ub) fits.
    let mut lo = 0.0f64;
    let mut hi = w_ub;
    while hi - lo > tol_hz {
        let mid = 0.5 * (lo + hi);
        if total_power_inner(h, mid, req, n0, qinv_eps) <= p_b_max {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let w_opt = hi;
    let p_b_j: Vec<f64> = h
        .iter()
        .map(|hj| required_power_inner(*hj, w_opt / j, req, n0, qinv_eps))
        .collect();
    let total: f64 = p_b_j.iter().sum();
    Ok(UrllcAlloc {
        w_u_hz: w_opt,
        p_b_j,
        feasible: true,
        w_th_hz: w_th,
        power_gap_w: p_b_max - total,
    })
}

/// Inverse-square-gain power split normalized to exhaust the BS budget.
pub fn closing_powers(h: &[f64], p_b_max: f64) -> Vec<f64> {
    let inv_sum: f64 = h.iter().map(|hj| 1.0 / (hj * hj)).sum();
    h.iter()
        .map(|hj| p_b_max / (hj * hj * inv_sum))
        .collect()
}

/// Achievable finite-blocklength rate in bits per second (dispersion one).
pub fn fb_rate_bps(h: f64, p: f64, w_hz: f64, req: &UrllcSliceReq, n0: f64) -> Result<f64> {
    if h <= 0.0 || w_hz <= 0.0 {
        return Err(Error::Domain("fb_rate needs h > 0 and w > 0".into()));
    }
    let qinv_eps = q_inv(req.eps_req)?;
    let snr = h * p / (n0 * w_hz);
    Ok(w_hz / LN_2 * ((1.0 + snr).ln() - qinv_eps / (req.tau_req_s * w_hz).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::{sub_rng, Stream};
    use rand::Rng;

    fn paper_req() -> UrllcSliceReq {
        UrllcSliceReq {
            tau_req_s: 5e-3,
            eps_req: 1e-7,
            b_req_bits: 160.0,
        }
    }

    const THERMAL_N0: f64 = 3.9810717055349694e-21; // -174 dBm/Hz in W/Hz

    #[test]
    fn q_inv_median_is_zero() {
        assert!(q_inv(0.5).unwrap().abs() < 1e-9);
    }

    #[test]
    fn q_inv_of_1e7() {
        let x = q_inv(1e-7).unwrap();
        assert!((x - 5.1993).abs() < 1e-3, "got {x}");
    }

    #[test]
    fn q_inv_round_trip_is_tight() {
        for p in [1e-3, 1e-5, 1e-9] {
            let x = q_inv(p).unwrap();
            let back = q_func(x);
            assert!(((back - p) / p).abs() <= 1e-12, "p={p} back={back}");
        }
    }

    #[test]
    fn q_inv_domain_errors() {
        assert!(q_inv(0.0).is_err());
        assert!(q_inv(1.0).is_err());
        assert!(q_inv(-0.1).is_err());
    }

    #[test]
    fn zero_rate_zero_margin_needs_no_power() {
        let req = UrllcSliceReq {
            tau_req_s: 5e-3,
            eps_req: 0.5 - 1e-15,
            b_req_bits: 1e-30,
        };
        let p = required_power(1e-9, 1e6, &req, THERMAL_N0).unwrap();
        assert!(p.abs() < 1e-20, "p = {p}");
    }

    #[test]
    fn required_power_cross_check() {
        // Independent scalar evaluation of the closed form.
        let req = paper_req();
        let h = 1e-9;
        let w = 1e6;
        let qi = q_inv(1e-7).unwrap();
        let expect = THERMAL_N0 * w / h
            * ((160.0 * std::f64::consts::LN_2 / (5e-3 * w) + qi / (5e-3f64 * w).sqrt()).exp()
                - 1.0);
        let got = required_power(h, w, &req, THERMAL_N0).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn power_inverse_in_gain() {
        let req = paper_req();
        let p1 = required_power(1e-9, 1e6, &req, THERMAL_N0).unwrap();
        let p2 = required_power(2e-9, 1e6, &req, THERMAL_N0).unwrap();
        assert!(((p1 / p2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_power_structure() {
        let req = paper_req();
        let single = total_power(&[1e-9], 1e6, &req, THERMAL_N0).unwrap();
        let direct = required_power(1e-9, 1e6, &req, THERMAL_N0).unwrap();
        assert_eq!(single, direct);
        // Two identical UAVs at equal split: exactly twice the single value
        // at half the bandwidth.
        let two = total_power(&[1e-9, 1e-9], 1e6, &req, THERMAL_N0).unwrap();
        let half = required_power(1e-9, 5e5, &req, THERMAL_N0).unwrap();
        assert!(((two - 2.0 * half) / two).abs() < 1e-12);
    }

    #[test]
    fn curve_is_u_shaped_with_matching_derivative_signs() {
        let mut rng = sub_rng(21, Stream::PretrainGeometry, 3);
        for _ in 0..10 {
            let h: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-10.0..-7.0))).collect();
            let req = UrllcSliceReq {
                tau_req_s: rng.random_range(1e-3..1e-2),
                eps_req: 1e-7,
                b_req_bits: rng.random_range(100.0..1000.0),
            };
            // Dense log grid; find the interior minimizer.
            let grid: Vec<f64> = (0..2000)
                .map(|k| 10f64.powf(1.0 + 7.0 * k as f64 / 1999.0))
                .collect();
            let vals: Vec<f64> = grid
                .iter()
                .map(|w| total_power(&h, *w, &req, THERMAL_N0).unwrap())
                .collect();
            let (imin, _) = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            assert!(imin > 0 && imin < grid.len() - 1, "minimum not interior");
            let w_min = grid[imin];
            // Derivative sign pattern around the stationary point.
            assert!(total_power_derivative(&h, w_min * 0.2, &req, THERMAL_N0).unwrap() < 0.0);
            assert!(total_power_derivative(&h, w_min * 5.0, &req, THERMAL_N0).unwrap() > 0.0);
        }
    }

    #[test]
    fn infeasible_when_budget_unreachable() {
        let req = paper_req();
        let h = vec![1e-12, 1e-12, 1e-12];
        let alloc = min_bandwidth(&h, &req, 1e-9, 1e-12, 1e7, 1.0).unwrap();
        assert!(!alloc.feasible);
        assert_eq!(alloc.w_u_hz, 1e7);
    }

    /// Two-level 1 Hz grid scan for the smallest feasible bandwidth.
    fn grid_oracle(h: &[f64], req: &UrllcSliceReq, n0: f64, p_max: f64, w_ub: f64) -> f64 {
        let qi = q_inv(req.eps_req).unwrap();
        let coarse = 1000.0f64;
        let mut first_ok = w_ub;
        let mut w = coarse.min(w_ub);
        while w <= w_ub {
            if total_power_inner(h, w, req, n0, qi) <= p_max {
                first_ok = w;
                break;
            }
            w += coarse;
        }
        let mut fine = (first_ok - coarse).max(1.0);
        while fine <= first_ok {
            if total_power_inner(h, fine, req, n0, qi) <= p_max {
                return fine;
            }
            fine += 1.0;
        }
        first_ok
    }

    #[test]
    fn min_bandwidth_matches_grid_oracle() {
        let mut rng = sub_rng(22, Stream::PretrainGeometry, 4);
        for trial in 0..10 {
            let h: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-10.0..-7.0))).collect();
            let req = UrllcSliceReq {
                tau_req_s: rng.random_range(1e-3..1e-2),
                eps_req: 1e-7,
                b_req_bits: rng.random_range(100.0..500.0),
            };
            let p_max = rng.random_range(0.5..20.0);
            let alloc = min_bandwidth(&h, &req, THERMAL_N0, p_max, 1e7, 1.0).unwrap();
            if !alloc.feasible {
                continue;
            }
            let oracle = grid_oracle(&h, &req, THERMAL_N0, p_max, alloc.w_th_hz.min(1e7));
            assert!(
                (alloc.w_u_hz - oracle).abs() <= 10.0,
                "trial {trial}: {} vs oracle {}",
                alloc.w_u_hz,
                oracle
            );
        }
    }

    #[test]
    fn min_bandwidth_is_minimal_within_tol() {
        let req = paper_req();
        let h = vec![1e-9, 3e-9, 2e-9];
        let alloc = min_bandwidth(&h, &req, THERMAL_N0, 5.0, 1e7, 1.0).unwrap();
        assert!(alloc.feasible);
        let at = total_power(&h, alloc.w_u_hz, &req, THERMAL_N0).unwrap();
        assert!(at <= 5.0);
        if alloc.w_u_hz > 1.0 {
            let below = total_power(&h, alloc.w_u_hz - 1.0, &req, THERMAL_N0).unwrap();
            assert!(below > 5.0, "not minimal: p(w-tol) = {below}");
        }
    }

    #[test]
    fn qos_closes_at_the_allocation() {
        let req = paper_req();
        let h = vec![1e-9, 3e-9, 2e-9];
        let alloc = min_bandwidth(&h, &req, THERMAL_N0, 5.0, 1e7, 1.0).unwrap();
        assert!(alloc.feasible);
        let need = req.b_req_bits / req.tau_req_s;
        let w = alloc.w_u_hz / h.len() as f64;
        for (hj, pj) in h.iter().zip(&alloc.p_b_j) {
            let r = fb_rate_bps(*hj, *pj, w, &req, THERMAL_N0).unwrap();
            assert!(r >= need * (1.0 - 1e-9), "rate {r} below {need}");
        }
        assert!(alloc.power_gap_w >= 0.0);
    }

    #[test]
    fn closing_powers_rules() {
        let p = closing_powers(&[1e-9, 1e-9, 1e-9, 1e-9], 50.0);
        for v in &p {
            assert!((v - 12.5).abs() < 1e-9);
        }
        let p2 = closing_powers(&[1.0, 2.0], 10.0);
        assert!(((p2[0] / p2[1]) - 4.0).abs() < 1e-12);
        let s: f64 = p2.iter().sum();
        assert!(((s - 10.0) / 10.0).abs() < 1e-12);
    }
}
