//! Pose losses, soft-label cross-entropy and closed-form keypoint alignment.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::codec::SoftAssignment;
use crate::error::{Error, Result};
use crate::linalg::{svd3, Svd3};
use crate::rotation::{abs_dot, Quaternion, RotationMatrix, Vec3};

/// Clamp on `|q . q_gt|` keeping the arccos derivative finite.
pub const ALPHA_CLAMP: f64 = 1.0 - 1e-7;
/// Added to probabilities before the log in [`soft_cross_entropy`].
pub const CE_EPSILON: f64 = 1e-12;
/// Minimum keypoint triangle area, square meters.
pub const MIN_KEYPOINT_AREA: f64 = 1e-9;

/// Orientation (body to camera) and object origin in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub q: Quaternion,
    pub t: [f64; 3],
}

impl PoseSample {
    pub fn new(q: Quaternion, t: Vec3) -> Self {
        Self {
            q,
            t: [t.x, t.y, t.z],
        }
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
}

impl LossWeights {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        let valid = |b: f64| b >= 0.0 && b.is_finite();
        if !valid(beta1) || !valid(beta2) || beta1 + beta2 == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be nonnegative and not both zero, got ({beta1}, {beta2})"
            )));
        }
        Ok(Self { beta1, beta2 })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
        }
    }
}

fn relative_error(t: &Vec3, t_gt: &Vec3) -> Result<f64> {
    let n = t_gt.norm();
    if !(n > 0.0) {
        return Err(Error::UndefinedRelativeError);
    }
    Ok((t - t_gt).norm() / n)
}

/// `sum_i |t_i - t_gt_i| / |t_gt_i|` over `(t, t_gt)` pairs.
pub fn loss_translation_rel(batch: &[(Vec3, Vec3)]) -> Result<f64> {
    batch.iter().map(|(t, g)| relative_error(t, g)).sum()
}

/// Batch mean of the relative translation error; 0 for an empty batch.
pub fn loss_translation_rel_mean(batch: &[(Vec3, Vec3)]) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    Ok(loss_translation_rel(batch)? / batch.len() as f64)
}

/// `arccos(|q . q_gt|)` with `|q . q_gt|` clamped to [`ALPHA_CLAMP`].
pub fn loss_alpha(q: &Quaternion, q_gt: &Quaternion) -> f64 {
    abs_dot(q, q_gt).min(ALPHA_CLAMP).acos()
}

pub fn loss_cos_alpha(q: &Quaternion, q_gt: &Quaternion) -> f64 {
    (1.0 - abs_dot(q, q_gt)).max(0.0)
}

pub fn loss_total(batch: &[(Vec3, Vec3)], ori_loss: f64, w: &LossWeights) -> Result<f64> {
    let trans = if w.beta1 == 0.0 {
        0.0
    } else {
        loss_translation_rel(batch)?
    };
    Ok(w.beta1 * trans + w.beta2 * ori_loss)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Cross-entropy of `softmax(logits)` against a soft target and its analytic
/// gradient `softmax(logits) - target`.
pub fn soft_cross_entropy(target: &SoftAssignment, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let t = target.values();
    if t.len() != logits.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            got: logits.len(),
        });
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidActivations("logits must be finite".into()));
    }
    let p = softmax(logits);
    let loss = -t
        .iter()
        .zip(&p)
        .map(|(ti, pi)| ti * (pi + CE_EPSILON).ln())
        .sum::<f64>();
    let grad = p.iter().zip(t).map(|(pi, ti)| pi - ti).collect();
    Ok((loss, grad))
}

/// Rigid pose from three body-frame keypoints and their camera-frame images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub pose: PoseSample,
    pub rotation: RotationMatrix,
    /// Largest `|R a_i + t - b_i|`.
    pub max_residual: f64,
}

fn centroid(p: &[Vec3; 3]) -> Vec3 {
    (p[0] + p[1] + p[2]) / 3.0
}

pub fn triangle_area(p: &[Vec3; 3]) -> f64 {
    0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
}

/// Least-squares rotation and translation with `b_i ~ R a_i + t` via the SVD
/// of the cross-covariance, with the reflection case corrected.
pub fn align_keypoints(body: &[Vec3; 3], cam: &[Vec3; 3]) -> Result<Alignment> {
    let area = triangle_area(body);
    if !(area > MIN_KEYPOINT_AREA) {
        return Err(Error::DegenerateKeypoints { area });
    }
    let (ca, cb) = (centroid(body), centroid(cam));
    let h: Matrix3<f64> = body
        .iter()
        .zip(cam)
        .map(|(a, b)| (a - ca) * (b - cb).transpose())
        .sum();
    let Svd3 { u, v, .. } = svd3(&h);
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = RotationMatrix::new(r).ok_or(Error::DegenerateKeypoints { area })?;
    let t = cb - r * ca;
    let max_residual = body
        .iter()
        .zip(cam)
        .map(|(a, b)| (r * a + t - b).norm())
        .fold(0.0, f64::max);
    Ok(Alignment {
        pose: PoseSample::new(rotation.to_quaternion(), t),
        rotation,
        max_residual,
    })
}

/// Body-frame unit basis points scaled to `radius`.
pub fn default_keypoints(radius: f64) -> [Vec3; 3] {
    [
        Vec3::x() * radius,
        Vec3::y() * radius,
        Vec3::z() * radius,
    ]
}
