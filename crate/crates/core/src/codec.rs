//! Soft-assignment coding of orientation labels over an [`OrientationGrid`]
//! and weighted quaternion averaging to decode bin activations.
//!
//! A label `q` is encoded as the normalized kernel affinities
//! `K(b_i, q) / sum_j K(b_j, q)` with a Gaussian kernel on the normalized
//! angular distance. Decoding returns the quaternion maximizing
//! `sum_i w_i (b_i . q)^2`, i.e. the dominant eigenvector of
//! `sum_i w_i b_i b_i^T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridId, OrientationGrid};
use crate::linalg::sym_eigen4;
use crate::rotation::{canonicalize, normalized_distance, Quaternion};

/// Tolerance on `sum(values) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Top-two eigenvalue gap, relative to the total weight, below which an
/// average is indeterminate.
pub const INDETERMINATE_GAP: f64 = 1e-12;

/// Smoothing factor and bins per dimension of the encoding kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    delta: f64,
    m_per_dim: usize,
}

impl KernelParams {
    pub fn new(delta: f64, m_per_dim: usize) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidKernel(format!("delta must be > 0, got {delta}")));
        }
        if m_per_dim == 0 {
            return Err(Error::InvalidKernel("m_per_dim must be > 0".into()));
        }
        Ok(Self { delta, m_per_dim })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m_per_dim(&self) -> usize {
        self.m_per_dim
    }

    /// Quantization step `delta / M` in normalized-distance units.
    pub fn step(&self) -> f64 {
        self.delta / self.m_per_dim as f64
    }

    /// Quantization-error variance `(delta / M)^2 / 12`.
    pub fn sigma_sq(&self) -> f64 {
        self.step().powi(2) / 12.0
    }
}

/// Nonnegative weights over the bins of one grid, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    values: Vec<f64>,
    grid_id: GridId,
}

impl SoftAssignment {
    /// Validates an already normalized vector.
    pub fn new(values: Vec<f64>, grid: &OrientationGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidActivations(format!(
                "value {} at bin {i} is negative or not finite",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidActivations(format!("values sum to {sum}, expected 1")));
        }
        Ok(Self {
            values,
            grid_id: grid.id(),
        })
    }

    /// Rescales nonnegative weights to unit sum.
    pub fn normalized(mut values: Vec<f64>, grid: &OrientationGrid) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidActivations(format!("cannot normalize, sum = {sum}")));
        }
        values.iter_mut().for_each(|v| *v /= sum);
        Self::new(values, grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grid_id(&self) -> GridId {
        self.grid_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn check_grid(&self, grid: &OrientationGrid) -> Result<()> {
        if self.grid_id != grid.id() {
            return Err(Error::InvalidActivations(
                "activations were built for a different grid".into(),
            ));
        }
        Ok(())
    }
}

/// `exp(-d^2 / (2 sigma^2))` with `d` the normalized angular distance.
pub fn kernel(x: &Quaternion, y: &Quaternion, sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::InvalidKernel(format!("sigma^2 must be > 0, got {sigma_sq}")));
    }
    let d = normalized_distance(x, y);
    Ok((-d * d / (2.0 * sigma_sq)).exp())
}

/// Unnormalized log-kernel of every bin against `q`.
fn log_affinities(grid: &OrientationGrid, q: &Quaternion, sigma_sq: f64) -> Vec<f64> {
    grid.bins()
        .iter()
        .map(|b| {
            let d = normalized_distance(b, q);
            -d * d / (2.0 * sigma_sq)
        })
        .collect()
}

/// Normalizes log-weights, shifting by the maximum so the nearest bins never
/// underflow.
fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

pub fn encode(grid: &OrientationGrid, q_gt: &Quaternion, params: &KernelParams) -> SoftAssignment {
    let mut values = log_affinities(grid, q_gt, params.sigma_sq());
    softmax_in_place(&mut values);
    SoftAssignment {
        values,
        grid_id: grid.id(),
    }
}

/// Weighted mixture of single-label encodings.
pub fn encode_multi(
    grid: &OrientationGrid,
    labels: &[(Quaternion, f64)],
    params: &KernelParams,
) -> Result<SoftAssignment> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if labels.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidActivations("label weights must be nonnegative".into()));
    }
    let total: f64 = labels.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidActivations("label weights sum to zero".into()));
    }
    let mut values = vec![0.0; grid.len()];
    for (q, w) in labels.iter().filter(|(_, w)| *w > 0.0) {
        let enc = encode(grid, q, params);
        for (v, e) in values.iter_mut().zip(enc.values()) {
            *v += w / total * e;
        }
    }
    SoftAssignment::normalized(values, grid)
}

/// Dominant eigenvector of the weighted outer-product matrix.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Average {
    pub q: Quaternion,
    /// Top-two eigenvalue gap divided by the total weight.
    pub relative_gap: f64,
}

pub(crate) fn weighted_average(qs: &[Quaternion], weights: &[f64]) -> Result<Average> {
    if qs.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: qs.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidActivations("weights must be nonnegative and finite".into()));
    }
    let mut a = [[0.0; 4]; 4];
    let mut total = 0.0;
    for (q, &w) in qs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        total += w;
        let v = q.to_array();
        for i in 0..4 {
            for j in i..4 {
                a[i][j] += w * v[i] * v[j];
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidActivations("no strictly positive weight".into()));
    }
    for i in 0..4 {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    let eig = sym_eigen4(&a);
    Ok(Average {
        q: canonicalize(eig.vectors[0])?,
        relative_gap: (eig.values[0] - eig.values[1]) / total,
    })
}

fn determinate(avg: Average) -> Result<Quaternion> {
    if avg.relative_gap < INDETERMINATE_GAP {
        return Err(Error::IndeterminateAverage {
            gap: avg.relative_gap,
        });
    }
    Ok(avg.q)
}

/// Single orientation estimate from bin activations.
pub fn decode(grid: &OrientationGrid, activations: &SoftAssignment) -> Result<Quaternion> {
    activations.check_grid(grid)?;
    determinate(weighted_average(grid.bins(), activations.values())?)
}

/// Weighted quaternion average, same contract as [`decode`].
pub fn average_quaternions(qs: &[Quaternion], weights: &[f64]) -> Result<Quaternion> {
    if qs.is_empty() {
        return Err(Error::EmptyLabels);
    }
    determinate(weighted_average(qs, weights)?)
}

/// `sum_i w_i (b_i . q)^2`, the objective maximized by [`decode`].
pub fn average_objective(qs: &[Quaternion], weights: &[f64], q: &Quaternion) -> f64 {
    qs.iter().zip(weights).map(|(b, w)| w * b.dot(q).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, default_merge_tolerance};
    use crate::rotation::{geodesic_angle, sample_uniform, Vec3};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn grid(m: usize) -> OrientationGrid {
        build_grid(m, default_merge_tolerance(m)).unwrap()
    }

    #[test]
    fn sigma_sq_for_delta6_m16() {
        let p = KernelParams::new(6.0, 16).unwrap();
        assert_eq!(p.sigma_sq(), 0.01171875);
        assert!(KernelParams::new(0.0, 16).is_err());
        assert!(KernelParams::new(6.0, 0).is_err());
    }

    #[test]
    fn kernel_examples() {
        let q = Quaternion::about_z(0.3);
        assert_eq!(kernel(&q, &q, 0.01).unwrap(), 1.0);
        let z180 = Quaternion::about_z(PI);
        let k = kernel(&Quaternion::IDENTITY, &z180, 0.01171875).unwrap();
        let expected = (-1.0f64 / 0.0234375).exp();
        assert!((k - expected).abs() < 1e-30);
        assert!((k - 2.9e-19).abs() < 0.1e-19, "{k}");
        assert!(kernel(&q, &q, 0.0).is_err());
        assert!(kernel(&q, &q, -1.0).is_err());
    }

    #[test]
    fn encode_single_bin_grid() {
        let g = OrientationGrid::from_bins([Quaternion::IDENTITY], 0.0).unwrap();
        let p = KernelParams::new(6.0, 16).unwrap();
        let e = encode(&g, &Quaternion::about_z(1.0), &p);
        assert_eq!(e.values(), &[1.0]);
    }

    #[test]
    fn encode_peaks_at_bin_and_is_sign_invariant() {
        let g = grid(8);
        let p = KernelParams::new(2.0, 8).unwrap();
        for j in [0, 17, 200] {
            let e = encode(&g, &g.bins()[j], &p);
            assert_eq!(e.argmax(), j);
            assert_abs_diff_eq!(e.values().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = sample_uniform(&mut rng);
        let a = encode(&g, &q, &p);
        let b = encode(&g, &-q, &p);
        assert_eq!(a.values(), b.values());
        let (near, _) = g.nearest_bin(&q).unwrap();
        assert_eq!(a.argmax(), near);
    }

    #[test]
    fn encode_multi_examples() {
        let g = grid(8);
        let p = KernelParams::new(6.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = sample_uniform(&mut rng);
        let one = encode_multi(&g, &[(q, 1.0)], &p).unwrap();
        assert_abs_diff_eq!(one.values(), encode(&g, &q, &p).values(), epsilon = 1e-15);

        let other = sample_uniform(&mut rng);
        let first = encode_multi(&g, &[(q, 1.0), (other, 0.0)], &p).unwrap();
        assert_abs_diff_eq!(first.values(), encode(&g, &q, &p).values(), epsilon = 1e-15);

        assert!(matches!(encode_multi(&g, &[], &p), Err(Error::EmptyLabels)));
        assert!(encode_multi(&g, &[(q, -1.0)], &p).is_err());
        assert!(encode_multi(&g, &[(q, 0.0)], &p).is_err());
    }

    #[test]
    fn encode_multi_symmetric_pair_has_equal_lobes() {
        // bins invariant under right-multiplication by Rz(pi): each bin b
        // paired with b * Rz(pi), so lobe masses can be compared exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let half: Vec<Quaternion> = (0..300).map(|_| sample_uniform(&mut rng)).collect();
        let flip = Quaternion::about_z(PI);
        let bins: Vec<Quaternion> = half.iter().flat_map(|b| [*b, *b * flip]).collect();
        let g = OrientationGrid::from_bins(bins, 0.0).unwrap();
        let p = KernelParams::new(6.0, 16).unwrap();
        let q = sample_uniform(&mut rng);
        let e = encode_multi(&g, &[(q, 1.0), (q * flip, 1.0)], &p).unwrap();
        let (mut near_a, mut near_b) = (0.0, 0.0);
        for (b, v) in g.bins().iter().zip(e.values()) {
            if normalized_distance(b, &q) < normalized_distance(b, &(q * flip)) {
                near_a += v;
            } else {
                near_b += v;
            }
        }
        assert_abs_diff_eq!(near_a, near_b, epsilon = 1e-9);
        assert_abs_diff_eq!(near_a, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn decode_one_hot() {
        let g = grid(8);
        for j in [0, 5, 300] {
            let mut v = vec![0.0; g.len()];
            v[j] = 1.0;
            let a = SoftAssignment::new(v, &g).unwrap();
            let q = decode(&g, &a).unwrap();
            assert_abs_diff_eq!(q.to_array()[..], g.bins()[j].to_array()[..], epsilon = 1e-15);
        }
    }

    #[test]
    fn decode_two_bins_90_apart_gives_45() {
        let a = Quaternion::IDENTITY;
        let b = Quaternion::about_z(FRAC_PI_2);
        let avg = average_quaternions(&[a, b], &[0.5, 0.5]).unwrap();
        assert!(geodesic_angle(&avg, &Quaternion::about_z(FRAC_PI_4)) < 1e-12);

        // dense random-search oracle over the same objective
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut best = (f64::NEG_INFINITY, Quaternion::IDENTITY);
        for _ in 0..1_000_000 {
            let q = sample_uniform(&mut rng);
            let f = average_objective(&[a, b], &[0.5, 0.5], &q);
            if f > best.0 {
                best = (f, q);
            }
        }
        assert!(geodesic_angle(&best.1, &avg) < 0.05);
        assert!(average_objective(&[a, b], &[0.5, 0.5], &avg) >= best.0 - 1e-12);
    }

    #[test]
    fn average_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = sample_uniform(&mut rng);
        assert!(geodesic_angle(&average_quaternions(&[q, q], &[1.0, 1.0]).unwrap(), &q) < 1e-7);
        assert!(geodesic_angle(&average_quaternions(&[q, -q], &[1.0, 1.0]).unwrap(), &q) < 1e-7);

        let axis = Vec3::new(0.3, -0.2, 0.9);
        let phi = 0.4;
        let a = q * Quaternion::from_axis_angle(&axis, -phi).unwrap();
        let b = q * Quaternion::from_axis_angle(&axis, phi).unwrap();
        let mid = average_quaternions(&[a, b], &[1.0, 1.0]).unwrap();
        assert!(geodesic_angle(&mid, &q) < 1e-7);

        assert!(average_quaternions(&[], &[]).is_err());
        assert!(average_quaternions(&[q], &[0.0]).is_err());
        assert!(average_quaternions(&[q], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn antipodal_rotations_are_indeterminate() {
        // identity and 180 deg about z are orthogonal quaternions
        let r = average_quaternions(&[Quaternion::IDENTITY, Quaternion::about_z(PI)], &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::IndeterminateAverage { .. })));
    }

    #[test]
    fn decode_is_scale_invariant() {
        let g = grid(8);
        let p = KernelParams::new(6.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let enc = encode(&g, &sample_uniform(&mut rng), &p);
            let base = weighted_average(g.bins(), enc.values()).unwrap().q;
            for s in [1e-3, 7.0, 1e4] {
                let scaled: Vec<f64> = enc.values().iter().map(|v| v * s).collect();
                let q = weighted_average(g.bins(), &scaled).unwrap().q;
                assert!(geodesic_angle(&q, &base) < 1e-7);
            }
        }
    }

    #[test]
    fn soft_assignment_validation() {
        let g = grid(4);
        assert!(SoftAssignment::new(vec![0.0; 3], &g).is_err());
        let mut v = vec![0.0; g.len()];
        v[0] = 0.5;
        assert!(SoftAssignment::new(v.clone(), &g).is_err());
        v[1] = -0.5;
        v[2] = 1.0;
        assert!(SoftAssignment::new(v, &g).is_err());
        let other = grid(8);
        let a = SoftAssignment::normalized(vec![1.0; other.len()], &other).unwrap();
        assert!(decode(&g, &a).is_err());
    }
}
