//! Quaternion and rotation primitives.
//!
//! Quaternions are stored as `(w, x, y, z)` with Hamilton multiplication and
//! act on vectors as active rotations. Every constructor returns a unit,
//! hemisphere-canonical quaternion: `w > 0`, or `w == 0` and the first
//! nonzero of `(x, y, z)` positive. Negation is the only way to obtain the
//! antipodal representative, and every distance in this crate is invariant
//! to it.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes `(w, x, y, z)`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        canonicalize([w, x, y, z])
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Rotation by `angle` about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        canonical_unit([c, 0.0, 0.0, s])
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }
    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    #[inline]
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conj(&self) -> Quaternion {
        canonical_unit([self.w, -self.x, -self.y, -self.z])
    }

    /// Canonical representative of the same rotation.
    pub fn canonical(&self) -> Quaternion {
        canonical_unit(self.to_array())
    }

    pub fn is_canonical(&self) -> bool {
        is_canonical(&self.to_array())
    }

    /// Hamilton product without renormalization or canonicalization.
    fn hamilton(&self, b: &Quaternion) -> [f64; 4] {
        let a = self;
        [
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        ]
    }

    pub fn rotate_vec(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let uv = u.cross(v);
        v + 2.0 * self.w * uv + 2.0 * u.cross(&uv)
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    /// Antipodal representative (same rotation, not canonical).
    fn neg(self) -> Quaternion {
        Quaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        compose(&self, &rhs)
    }
}

impl TryFrom<[f64; 4]> for Quaternion {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        canonicalize(v)
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

fn is_canonical(v: &[f64; 4]) -> bool {
    if v[0] != 0.0 {
        return v[0] > 0.0;
    }
    v[1..]
        .iter()
        .find(|c| **c != 0.0)
        .is_some_and(|c| *c > 0.0)
}

fn canonical_unit(v: [f64; 4]) -> Quaternion {
    let v = if is_canonical(&v) { v } else { v.map(|c| -c) };
    Quaternion {
        w: v[0],
        x: v[1],
        y: v[2],
        z: v[3],
    }
}

/// Normalizes a raw 4-vector and maps it into the canonical hemisphere.
pub fn canonicalize(raw: [f64; 4]) -> Result<Quaternion> {
    let n = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateQuaternion);
    }
    Ok(canonical_unit(raw.map(|c| c / n)))
}

/// `|a . b|` clamped to `[0, 1]`.
#[inline]
pub fn abs_dot(a: &Quaternion, b: &Quaternion) -> f64 {
    a.dot(b).abs().min(1.0)
}

/// Half the relative rotation angle, in `[0, pi/2]`.
///
/// Uses `2 atan2(|a - b|, |a + b|)` after aligning signs; mathematically
/// `acos(|a . b|)` with the dot clamped to `[0, 1]`, but exact at zero.
#[inline]
fn half_angle(a: &Quaternion, b: &Quaternion) -> f64 {
    let s = if a.dot(b) < 0.0 { -1.0 } else { 1.0 };
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.to_array().iter().zip(b.to_array()) {
        let y = s * y;
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Geodesic angle divided by pi, in `[0, 1]`.
#[inline]
pub fn normalized_distance(a: &Quaternion, b: &Quaternion) -> f64 {
    (2.0 * half_angle(a, b) / PI).min(1.0)
}

/// Rotation angle of the relative rotation between `a` and `b`, in `[0, pi]`.
#[inline]
pub fn geodesic_angle(a: &Quaternion, b: &Quaternion) -> f64 {
    (2.0 * half_angle(a, b)).min(PI)
}

/// Hamilton product `a * b` (apply `b` first), renormalized and canonicalized.
pub fn compose(a: &Quaternion, b: &Quaternion) -> Quaternion {
    let p = a.hamilton(b);
    let n = p.iter().map(|c| c * c).sum::<f64>().sqrt();
    canonical_unit(p.map(|c| c / n))
}

pub fn rotate_vec(q: &Quaternion, v: &Vec3) -> Vec3 {
    q.rotate_vec(v)
}

/// Intrinsic Z-Y-X Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    /// About z, in `[-pi, pi)`.
    pub yaw: f64,
    /// About the once-rotated y, in `[-pi/2, pi/2]`.
    pub pitch: f64,
    /// About the twice-rotated x, in `[-pi, pi)`.
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    // floor can land exactly on the upper bound after roundoff
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

pub fn euler_to_quat(e: &EulerAngles) -> Quaternion {
    let (sy, cy) = (e.yaw / 2.0).sin_cos();
    let (sp, cp) = (e.pitch / 2.0).sin_cos();
    let (sr, cr) = (e.roll / 2.0).sin_cos();
    let raw = [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ];
    let n = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    canonical_unit(raw.map(|c| c / n))
}

/// Inverse of [`euler_to_quat`]. At gimbal lock the representative with
/// `roll = 0` is returned.
pub fn quat_to_euler(q: &Quaternion) -> EulerAngles {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let sin_pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
    let cp_sr = 2.0 * (w * x + y * z);
    let cp_cr = 1.0 - 2.0 * (x * x + y * y);
    let cos_pitch = cp_sr.hypot(cp_cr);

    if cos_pitch < 1e-10 {
        let pitch = if sin_pitch > 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
        return EulerAngles {
            yaw: wrap_angle(2.0 * z.atan2(w)),
            pitch,
            roll: 0.0,
        };
    }

    EulerAngles {
        yaw: wrap_angle((2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))),
        pitch: sin_pitch.atan2(cos_pitch),
        roll: wrap_angle(cp_sr.atan2(cp_cr)),
    }
}

/// Haar-uniform random rotation (normalized Gaussian 4-vector).
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return canonical_unit(v.map(|c| c / n));
        }
    }
}

/// Proper 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Checks orthonormality and `det = +1` within `1e-9`.
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax() <= 1e-9;
        let det = (m.determinant() - 1.0).abs() <= 1e-9;
        (ortho && det).then_some(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Shepperd's method.
    pub fn to_quaternion(&self) -> Quaternion {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let raw = if trace > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = 2.0 * (1.0 + trace).sqrt();
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        let n = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
        canonical_unit(raw.map(|c| c / n))
    }
}

impl Mul<&Vec3> for &RotationMatrix {
    type Output = Vec3;

    fn mul(self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}
