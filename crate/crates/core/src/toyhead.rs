//! Desk-scale orientation-ambiguity experiment: a linear softmax head over
//! the orientation grid, trained with soft cross-entropy on point-set
//! features of an object with s-fold symmetry about its body z axis, and
//! scored with single-hypothesis (Top-1) and best-of-two mixture (Top-2)
//! errors.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, weighted_average, KernelParams, SoftAssignment};
use crate::error::{Error, Result};
use crate::grid::{GridId, OrientationGrid};
use crate::losses::{soft_cross_entropy, softmax};
use crate::mixture::{fit_mixture, EmConfig};
use crate::rotation::{compose, geodesic_angle, sample_uniform, Quaternion, Vec3};

const BASE_POINTS: [[f64; 3]; 6] = [
    [1.0, 0.2, 0.3],
    [-0.3, 1.0, -0.2],
    [0.2, -0.4, 1.0],
    [-0.8, -0.6, 0.1],
    [0.5, -0.9, -0.6],
    [-0.1, 0.7, -0.9],
];

/// Body points as orbits: `ceil(6 / s)` base points, each with its `s`
/// copies rotated about body z.
pub fn body_orbits(symmetry: usize) -> Vec<Vec<Vec3>> {
    let n_base = BASE_POINTS.len().div_ceil(symmetry);
    BASE_POINTS[..n_base]
        .iter()
        .map(|p| {
            let p = Vec3::from(*p);
            (0..symmetry)
                .map(|j| Quaternion::about_z(TAU * j as f64 / symmetry as f64).rotate_vec(&p))
                .collect()
        })
        .collect()
}

pub fn feature_dim(symmetry: usize) -> usize {
    3 * symmetry * BASE_POINTS.len().div_ceil(symmetry)
}

/// Camera-frame coordinates of the body points, each orbit sorted by camera
/// x then y, so that symmetric orientations give the same vector.
pub fn toy_features(q: &Quaternion, symmetry: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_dim(symmetry));
    for orbit in body_orbits(symmetry) {
        let mut cam: Vec<Vec3> = orbit.iter().map(|p| q.rotate_vec(p)).collect();
        cam.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        out.extend(cam.iter().flat_map(|c| [c.x, c.y, c.z]));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Quaternion>,
    pub symmetry: usize,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn make_toy_dataset<R: Rng + ?Sized>(count: usize, symmetry: usize, rng: &mut R) -> Result<ToyDataset> {
    if symmetry == 0 {
        return Err(Error::InvalidConfig("symmetry order must be >= 1".into()));
    }
    let labels: Vec<Quaternion> = (0..count).map(|_| sample_uniform(rng)).collect();
    Ok(ToyDataset {
        features: labels.iter().map(|q| toy_features(q, symmetry)).collect(),
        labels,
        symmetry,
    })
}

/// The `s` orientations indistinguishable from `q`.
pub fn symmetric_equivalents(q: &Quaternion, symmetry: usize) -> Vec<Quaternion> {
    (0..symmetry)
        .map(|j| compose(q, &Quaternion::about_z(TAU * j as f64 / symmetry as f64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyHead {
    n: usize,
    d: usize,
    /// Row-major `n x d`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    grid_id: Option<GridId>,
}

impl ToyHead {
    pub fn zeros(grid: &OrientationGrid, d: usize) -> Self {
        Self {
            n: grid.len(),
            d,
            weights: vec![0.0; grid.len() * d],
            bias: vec![0.0; grid.len()],
            grid_id: Some(grid.id()),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.d)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect())
    }

    /// `softmax(W x + b)` over the grid.
    pub fn predict(&self, grid: &OrientationGrid, x: &[f64]) -> Result<SoftAssignment> {
        if self.grid_id.is_some_and(|id| id != grid.id()) || self.n != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: grid.len(),
            });
        }
        SoftAssignment::normalized(softmax(&self.logits(x)?), grid)
    }

    fn sgd_step(&mut self, x: &[f64], grad: &[f64], lr: f64) {
        for ((row, b), g) in self.weights.chunks_exact_mut(self.d).zip(&mut self.bias).zip(grad) {
            let step = lr * g;
            if step == 0.0 {
                continue;
            }
            *b -= step;
            for (w, xi) in row.iter_mut().zip(x) {
                *w -= step * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub head: ToyHead,
    /// Mean soft cross-entropy seen during each epoch, before each update.
    pub epoch_losses: Vec<f64>,
}

/// Per-sample SGD on soft cross-entropy against encoded labels, starting
/// from zero weights; the sample order is reshuffled every epoch.
pub fn train<R: Rng + ?Sized>(
    data: &ToyDataset,
    grid: &OrientationGrid,
    params: &KernelParams,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainResult> {
    if data.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) || config.epochs == 0 {
        return Err(Error::InvalidConfig(format!("{config:?}")));
    }
    let targets: Vec<SoftAssignment> = data.labels.iter().map(|q| encode(grid, q, params)).collect();
    let mut head = ToyHead::zeros(grid, feature_dim(data.symmetry));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &i in &order {
            let x = &data.features[i];
            let (loss, grad) = soft_cross_entropy(&targets[i], &head.logits(x)?)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            head.sgd_step(x, &grad, config.lr);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainResult { head, epoch_losses })
}

/// Single-hypothesis estimate: the decoded average, or the dominant
/// eigenvector when the average is indeterminate.
pub fn top1(grid: &OrientationGrid, activations: &SoftAssignment) -> Result<Quaternion> {
    match decode(grid, activations) {
        Err(Error::IndeterminateAverage { .. }) => Ok(weighted_average(grid.bins(), activations.values())?.q),
        other => other,
    }
}

/// Means of the (at most) two strongest mixture components.
pub fn top2(grid: &OrientationGrid, activations: &SoftAssignment, em: &EmConfig) -> Result<Vec<Quaternion>> {
    let model = fit_mixture(grid, activations, em)?;
    Ok(model.components.iter().take(2).map(|c| c.mean).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_deg: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins over [0, 180] degrees; 180 itself falls in the last bin.
    pub fn of(errors_deg: &[f64], bin_width_deg: f64) -> Self {
        let n = (180.0 / bin_width_deg).ceil() as usize;
        let mut counts = vec![0; n];
        for e in errors_deg {
            let k = ((e / bin_width_deg).floor() as usize).min(n - 1);
            counts[k] += 1;
        }
        Self { bin_width_deg, counts }
    }

    pub fn center_deg(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width_deg
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEvaluation {
    pub top1_errors_deg: Vec<f64>,
    pub top2_errors_deg: Vec<f64>,
    /// Number of test inputs for which the mixture fit chose K components,
    /// indexed by K - 1.
    pub k_counts: Vec<usize>,
}

impl ToyEvaluation {
    pub fn top1_median_deg(&self) -> f64 {
        median(&self.top1_errors_deg)
    }

    pub fn top2_median_deg(&self) -> f64 {
        median(&self.top2_errors_deg)
    }
}

/// Errors of both estimators on every sample of `data`.
pub fn evaluate(head: &ToyHead, grid: &OrientationGrid, data: &ToyDataset, em: &EmConfig) -> Result<ToyEvaluation> {
    let mut eval = ToyEvaluation {
        top1_errors_deg: Vec::with_capacity(data.len()),
        top2_errors_deg: Vec::with_capacity(data.len()),
        k_counts: vec![0; em.k_max],
    };
    for (x, q) in data.features.iter().zip(&data.labels) {
        let a = head.predict(grid, x)?;
        eval.top1_errors_deg.push(geodesic_angle(&top1(grid, &a)?, q).to_degrees());
        let model = fit_mixture(grid, &a, em)?;
        eval.k_counts[model.k() - 1] += 1;
        let best = model
            .components
            .iter()
            .take(2)
            .map(|c| geodesic_angle(&c.mean, q).to_degrees())
            .fold(f64::INFINITY, f64::min);
        eval.top2_errors_deg.push(best);
    }
    Ok(eval)
}
