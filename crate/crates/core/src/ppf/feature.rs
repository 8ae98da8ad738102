use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between_unit, RigidTransform, Vec3};

/// Minimum separation for a pair to define a feature.
pub const MIN_PAIR_DISTANCE: f64 = 1e-9;

/// Four-dimensional feature of an ordered oriented point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ppf {
    pub dist: f64,
    pub angle_n1_d: f64,
    pub angle_n2_d: f64,
    pub angle_n1_n2: f64,
}

impl Ppf {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dist, self.angle_n1_d, self.angle_n2_d, self.angle_n1_n2]
    }
}

pub fn compute_ppf(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Result<Ppf> {
    let d = p2 - p1;
    let dist = d.norm();
    if !(dist > MIN_PAIR_DISTANCE) {
        return Err(Error::CoincidentPoints);
    }
    let dn = d / dist;
    Ok(Ppf {
        dist,
        angle_n1_d: angle_between_unit(n1, &dn),
        angle_n2_d: angle_between_unit(n2, &dn),
        angle_n1_n2: angle_between_unit(n1, n2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationParams {
    /// Largest pair distance, the model diameter (mm).
    pub d_max: f64,
    pub n_dist_bins: u32,
    pub n_angle_bins: u32,
    /// A value closer than this fraction of a bin width to a bin boundary
    /// also votes for the bin across that boundary.
    pub noise_fraction: f64,
    /// Pairs whose normals are closer than this angle (radians) are left
    /// out of the table. Zero keeps every pair.
    #[serde(default)]
    pub min_pair_normal_angle: f64,
}

impl QuantizationParams {
    pub fn with_diameter(d_max: f64) -> Self {
        Self {
            d_max,
            n_dist_bins: 20,
            n_angle_bins: 15,
            noise_fraction: 0.2,
            min_pair_normal_angle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::InvalidParam(format!("d_max must be > 0, got {}", self.d_max)));
        }
        if self.n_dist_bins == 0 || self.n_angle_bins == 0 {
            return Err(Error::InvalidParam("bin counts must be at least 1".into()));
        }
        // keeps b_dist·n³ + ... inside u32
        let n_a = self.n_angle_bins as u64;
        if (self.n_dist_bins as u64) * n_a * n_a * n_a > u32::MAX as u64 {
            return Err(Error::InvalidParam("bin counts overflow the 32-bit key".into()));
        }
        if !(0.0..0.5).contains(&self.noise_fraction) {
            return Err(Error::InvalidParam(format!(
                "noise_fraction must lie in [0, 0.5), got {}",
                self.noise_fraction
            )));
        }
        Ok(())
    }

    pub fn dist_step(&self) -> f64 {
        self.d_max / self.n_dist_bins as f64
    }

    pub fn angle_step(&self) -> f64 {
        PI / self.n_angle_bins as f64
    }

    fn bins(&self, dim: usize) -> u32 {
        if dim == 0 {
            self.n_dist_bins
        } else {
            self.n_angle_bins
        }
    }

    /// Continuous position of each feature component in bin units.
    fn scaled(&self, f: &Ppf) -> [f64; 4] {
        let a = self.angle_step();
        [
            f.dist / self.dist_step(),
            f.angle_n1_d / a,
            f.angle_n2_d / a,
            f.angle_n1_n2 / a,
        ]
    }
}

/// Discretized feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PpfKey {
    pub b_dist: u32,
    pub b1: u32,
    pub b2: u32,
    pub b3: u32,
}

impl PpfKey {
    pub fn from_bins(b: [u32; 4]) -> Self {
        Self {
            b_dist: b[0],
            b1: b[1],
            b2: b[2],
            b3: b[3],
        }
    }

    pub fn bins(&self) -> [u32; 4] {
        [self.b_dist, self.b1, self.b2, self.b3]
    }

    /// `b_dist·n³ + b1·n² + b2·n + b3` with `n` the angle bin count.
    pub fn pack(&self, q: &QuantizationParams) -> u32 {
        let n = q.n_angle_bins;
        ((self.b_dist * n + self.b1) * n + self.b2) * n + self.b3
    }

    pub fn unpack(packed: u32, q: &QuantizationParams) -> Self {
        let n = q.n_angle_bins;
        Self {
            b3: packed % n,
            b2: (packed / n) % n,
            b1: (packed / (n * n)) % n,
            b_dist: packed / (n * n * n),
        }
    }
}

fn bin_of(scaled: f64, bins: u32) -> u32 {
    if scaled <= 0.0 {
        return 0;
    }
    (scaled.floor() as u64).min(bins as u64 - 1) as u32
}

pub fn discretize(f: &Ppf, q: &QuantizationParams) -> PpfKey {
    let s = q.scaled(f);
    PpfKey::from_bins([
        bin_of(s[0], q.n_dist_bins),
        bin_of(s[1], q.n_angle_bins),
        bin_of(s[2], q.n_angle_bins),
        bin_of(s[3], q.n_angle_bins),
    ])
}

/// Base key plus the neighboring keys a small measurement error could have
/// produced. In every dimension independently, the adjacent bin is added
/// when the value lies within `noise_fraction` of a bin width of the shared
/// boundary; no wraparound. The result is the Cartesian product of the
/// per-dimension candidates, so it holds between 1 and 16 keys.
pub fn neighbor_keys(f: &Ppf, q: &QuantizationParams) -> Vec<PpfKey> {
    let mut out = Vec::with_capacity(16);
    neighbor_keys_into(f, q, &mut out);
    out
}

pub fn neighbor_keys_into(f: &Ppf, q: &QuantizationParams, out: &mut Vec<PpfKey>) {
    out.clear();
    let s = q.scaled(f);
    let mut cand = [[0u32; 2]; 4];
    let mut count = [1usize; 4];
    for dim in 0..4 {
        let bins = q.bins(dim);
        let b = bin_of(s[dim], bins);
        cand[dim][0] = b;
        let frac = s[dim] - b as f64;
        if frac < q.noise_fraction && b > 0 {
            cand[dim][1] = b - 1;
            count[dim] = 2;
        } else if frac > 1.0 - q.noise_fraction && b + 1 < bins {
            cand[dim][1] = b + 1;
            count[dim] = 2;
        }
    }
    for i0 in 0..count[0] {
        for i1 in 0..count[1] {
            for i2 in 0..count[2] {
                for i3 in 0..count[3] {
                    out.push(PpfKey::from_bins([
                        cand[0][i0],
                        cand[1][i1],
                        cand[2][i2],
                        cand[3][i3],
                    ]));
                }
            }
        }
    }
}

/// Transform taking `p` to the origin and `n` onto +x. The roll about x is
/// fixed by the shortest rotation from `n` to +x; for `n ≈ −x` a half turn
/// about z is used.
pub fn intermediate_frame(p: &Vec3, n: &Vec3) -> RigidTransform {
    let x = Vec3::x();
    let axis = n.cross(&x);
    let s = axis.norm();
    let c = n.dot(&x);
    let rotation = if s < 1e-12 {
        if c > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)
        }
    } else {
        let k = axis / s;
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        // Rodrigues with sin θ = s, cos θ = c
        Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
    };
    RigidTransform::new(rotation, -(rotation * p))
}

/// Angle about +x of `p_other` expressed in `frame`, `atan2(z, y)` in
/// (−π, π]. Points on the x axis give 0.
pub fn alpha_angle(frame: &RigidTransform, p_other: &Vec3) -> f64 {
    let q = frame.apply_point(p_other);
    if q.y.abs() < 1e-12 && q.z.abs() < 1e-12 {
        return 0.0;
    }
    let a = q.z.atan2(q.y);
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Wraps an angle into [−π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Pose aligning a model pair with a scene pair given their frames and the
/// rotation `delta` about x taking the model angle to the scene angle
/// (`delta = alpha_scene − alpha_model`).
pub fn pose_from_frames(
    scene_frame: &RigidTransform,
    model_frame: &RigidTransform,
    delta: f64,
) -> RigidTransform {
    scene_frame
        .inverse()
        .compose(&RigidTransform::rot_x(delta))
        .compose(model_frame)
}
