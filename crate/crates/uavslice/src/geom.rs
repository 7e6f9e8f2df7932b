//! Small 2D/3D vector types and the segment/box intersection used by the
//! line-of-sight test.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Vec2) -> f64 {
        (self - o).norm_sq()
    }

    /// Clamp into the axis-aligned rectangle `[0, w] x [0, h]`.
    pub fn clamp_to(self, w: f64, h: f64) -> Vec2 {
        Vec2::new(self.x.clamp(0.0, w), self.y.clamp(0.0, h))
    }

    pub fn with_z(self, z: f64) -> Vec3 {
        Vec3::new(self.x, self.y, z)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn dist(self, o: Vec3) -> f64 {
        let d = (self.x - o.x, self.y - o.y, self.z - o.z);
        (d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt()
    }
}

/// True iff the segment `p1..p2` passes through the open interior of the
/// axis-aligned box `[min, max]`. Face or edge contact does not count, so a
/// ray grazing a rooftop is still line-of-sight.
pub fn segment_intersects_box(p1: Vec3, p2: Vec3, min: Vec3, max: Vec3) -> bool {
    const EPS: f64 = 1e-12;
    let p = [p1.x, p1.y, p1.z];
    let d = [p2.x - p1.x, p2.y - p1.y, p2.z - p1.z];
    let lo = [min.x, min.y, min.z];
    let hi = [max.x, max.y, max.z];

    let mut t_enter = 0.0f64;
    let mut t_exit = 1.0f64;
    for a in 0..3 {
        if d[a].abs() < EPS {
            // Parallel to this slab: must lie strictly inside it.
            if p[a] <= lo[a] + EPS || p[a] >= hi[a] - EPS {
                return false;
            }
        } else {
            let inv = 1.0 / d[a];
            let mut t0 = (lo[a] - p[a]) * inv;
            let mut t1 = (hi[a] - p[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter >= t_exit - EPS {
                return false;
            }
        }
    }
    // Positive-measure overlap with the open interior.
    t_exit - t_enter > EPS
}
