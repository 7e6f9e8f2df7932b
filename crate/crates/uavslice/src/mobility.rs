//! Pedestrian traces and the Beacon refresh.
//!
//! Traces come either from a CSV file (`user_id,timestamp_s,x,y`) or from a
//! bundled random-waypoint generator. They are linearly resampled to one
//! position per slot and affinely rescaled onto the simulation area. UAVs
//! collect user positions through periodic Beacon broadcasts with a finite
//! reception radius, which is what makes each UAV's view partial.

use crate::env::Area;
use crate::geom::Vec2;
use crate::rngutil::{sub_rng, Stream};
use crate::{Error, Result};
use rand::Rng;
use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct UserTrace {
    pub user_id: u32,
    /// One position per slot, 0..horizon.
    pub samples: Vec<Vec2>,
    /// MBB slice class index, 1-based.
    pub rate_class: u8,
    pub height_m: f64,
}

#[derive(Debug, Clone)]
pub struct TraceConfig {
    pub area: Area,
    pub n_users: usize,
    pub horizon_slots: usize,
    pub slot_seconds: f64,
    pub user_height_m: f64,
    /// Number of MBB classes; classes are assigned uniformly.
    pub n_classes: u8,
}

/// Load, resample and rescale traces from a CSV file.
///
/// Rows may arrive in any order; they are sorted per user by timestamp. The
/// bounding box of all anchors is affinely mapped onto the area, then each
/// user is resampled to one position per slot (piecewise linear, clamped at
/// the trace ends).
pub fn load_traces(path: &Path, cfg: &TraceConfig, seed: u64) -> Result<Vec<UserTrace>> {
    let text = std::fs::read_to_string(path)?;
    let mut per_user: BTreeMap<u32, Vec<(f64, Vec2)>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.starts_with("user_id") {
            continue; // optional header
        }
        let fields: Vec<&str> = trimmed.split(',').map(|f| f.trim()).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("bad {what}"),
        };
        let id: u32 = fields[0].parse().map_err(|_| parse_err("user_id"))?;
        let ts: f64 = fields[1].parse().map_err(|_| parse_err("timestamp_s"))?;
        let x: f64 = fields[2].parse().map_err(|_| parse_err("x"))?;
        let y: f64 = fields[3].parse().map_err(|_| parse_err("y"))?;
        per_user.entry(id).or_default().push((ts, Vec2::new(x, y)));
    }
    if per_user.len() < cfg.n_users {
        return Err(Error::Config(format!(
            "trace file has {} users, {} requested",
            per_user.len(),
            cfg.n_users
        )));
    }
    let selected: Vec<(u32, Vec<(f64, Vec2)>)> = per_user
        .into_iter()
        .take(cfg.n_users)
        .map(|(id, mut rows)| {
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite timestamps"));
            (id, rows)
        })
        .collect();

    // Bounding box of all anchors -> area.
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, rows) in &selected {
        for (_, p) in rows {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
    }
    let span = hi - lo;
    let rescale = |p: Vec2| -> Vec2 {
        let fx = if span.x > 0.0 {
            (p.x - lo.x) / span.x
        } else {
            0.5
        };
        let fy = if span.y > 0.0 {
            (p.y - lo.y) / span.y
        } else {
            0.5
        };
        Vec2::new(fx * cfg.area.width_m, fy * cfg.area.height_m)
    };

    let mut class_rng = sub_rng(seed, Stream::RateClasses, 0);
    let mut traces = Vec::with_capacity(cfg.n_users);
    for (id, rows) in selected {
        let anchors: Vec<(f64, Vec2)> = rows.into_iter().map(|(t, p)| (t, rescale(p))).collect();
        let samples = resample(&anchors, cfg.horizon_slots, cfg.slot_seconds);
        traces.push(UserTrace {
            user_id: id,
            samples,
            rate_class: class_rng.random_range(1..=cfg.n_classes),
            height_m: cfg.user_height_m,
        });
    }
    Ok(traces)
}

fn resample(anchors: &[(f64, Vec2)], horizon: usize, slot_seconds: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let t = k as f64 * slot_seconds;
        out.push(interp(anchors, t));
    }
    out
}

fn interp(anchors: &[(f64, Vec2)], t: f64) -> Vec2 {
    match anchors {
        [] => Vec2::default(),
        [only] => only.1,
        _ => {
            if t <= anchors[0].0 {
                return anchors[0].1;
            }
            if t >= anchors[anchors.len() - 1].0 {
                return anchors[anchors.len() - 1].1;
            }
            let idx = anchors.partition_point(|(ts, _)| *ts <= t);
            let (t0, p0) = anchors[idx - 1];
            let (t1, p1) = anchors[idx];
            if t1 <= t0 {
                return p0;
            }
            let f = (t - t0) / (t1 - t0);
            p0 + (p1 - p0) * f
        }
    }
}

/// Random-waypoint pedestrians over a handful of hotspots: pick a
/// destination (mostly near a hotspot, occasionally anywhere), drift there
/// slowly, loiter several slots, repeat. Urban foot traffic concentrates
/// around points of interest and moves at strolling-crowd speeds, far below
/// the 1.5 m/s walking cap; the dwells keep the motion trackable by a
/// location predictor.
pub fn synthetic_traces(cfg: &TraceConfig, seed: u64) -> Vec<UserTrace> {
    let mut rng = sub_rng(seed, Stream::Traces, 0);
    let mut class_rng = sub_rng(seed, Stream::RateClasses, 0);
    let hotspots: Vec<Vec2> = (0..3)
        .map(|_| {
            Vec2::new(
                rng.random_range(0.15..0.85) * cfg.area.width_m,
                rng.random_range(0.15..0.85) * cfg.area.height_m,
            )
        })
        .collect();
    let pick_target = |rng: &mut rand_chacha::ChaCha8Rng, hotspots: &[Vec2]| -> Vec2 {
        if rng.random_range(0.0..1.0) < 0.8 {
            let h = hotspots[rng.random_range(0..hotspots.len())];
            let spread = 120.0;
            Vec2::new(
                h.x + rng.random_range(-2.0..2.0) * spread,
                h.y + rng.random_range(-2.0..2.0) * spread,
            )
            .clamp_to(cfg.area.width_m, cfg.area.height_m)
        } else {
            Vec2::new(
                rng.random_range(0.0..cfg.area.width_m),
                rng.random_range(0.0..cfg.area.height_m),
            )
        }
    };
    let mut traces = Vec::with_capacity(cfg.n_users);
    for uid in 0..cfg.n_users {
        let mut pos = pick_target(&mut rng, &hotspots);
        let mut target = pos;
        let mut speed = 0.0f64;
        let mut dwell = 0usize;
        let mut samples = Vec::with_capacity(cfg.horizon_slots);
        for _ in 0..cfg.horizon_slots {
            samples.push(pos);
            if dwell > 0 {
                dwell -= 1;
                continue;
            }
            if pos.dist(target) < 1.0 {
                target = pick_target(&mut rng, &hotspots);
                speed = rng.random_range(0.02..0.25);
                dwell = rng.random_range(2..=10);
                continue;
            }
            let step = speed * cfg.slot_seconds;
            let to = target - pos;
            let d = to.norm();
            pos = if d <= step { target } else { pos + to * (step / d) };
        }
        traces.push(UserTrace {
            user_id: uid as u32,
            samples,
            rate_class: class_rng.random_range(1..=cfg.n_classes),
            height_m: cfg.user_height_m,
        });
    }
    traces
}

/// Exact per-slot ground truth, ordered by trace index.
pub fn positions_at(traces: &[UserTrace], t: usize) -> Result<Vec<Vec2>> {
    let mut out = Vec::with_capacity(traces.len());
    for tr in traces {
        let p = tr
            .samples
            .get(t)
            .ok_or_else(|| Error::Domain(format!("slot {t} outside trace horizon")))?;
        out.push(*p);
    }
    Ok(out)
}

/// Per-UAV store of received Beacon samples, capacity-bounded per user.
#[derive(Debug, Clone)]
pub struct BeaconLog {
    capacity: usize,
    entries: Vec<VecDeque<(usize, Vec2)>>,
}

impl BeaconLog {
    pub fn new(n_users: usize, capacity: usize) -> Self {
        Self {
            capacity,
            entries: vec![VecDeque::new(); n_users],
        }
    }

    /// On refresh slots, record every user within `coverage_radius_m` of the
    /// UAV, evicting the oldest sample beyond capacity.
    pub fn refresh(
        &mut self,
        uav_xy: Vec2,
        user_positions: &[Vec2],
        t: usize,
        t_p: usize,
        coverage_radius_m: f64,
    ) {
        assert!(t_p >= 1, "beacon period must be at least one slot");
        if t % t_p != 0 {
            return;
        }
        for (i, pos) in user_positions.iter().enumerate() {
            if uav_xy.dist(*pos) <= coverage_radius_m {
                let q = &mut self.entries[i];
                q.push_back((t, *pos));
                while q.len() > self.capacity {
                    q.pop_front();
                }
            }
        }
    }

    pub fn samples(&self, user: usize) -> &VecDeque<(usize, Vec2)> {
        &self.entries[user]
    }

    pub fn len(&self, user: usize) -> usize {
        self.entries[user].len()
    }

    pub fn last(&self, user: usize) -> Option<(usize, Vec2)> {
        self.entries[user].back().copied()
    }

    pub fn n_users(&self) -> usize {
        self.entries.len()
    }
}
