//! Multimodal orientation extraction: a Gaussian mixture over bin
//! activations fitted by EM, initialized from non-maximum-suppressed peaks,
//! with the component count chosen by log-likelihood gain.
//!
//! Each component is an isotropic Gaussian in normalized-distance units on
//! the three-dimensional rotation space,
//! `p(b | q, s2) = (2 pi s2)^(-3/2) exp(-d(b, q)^2 / (2 s2))`,
//! so its shape is the encoding kernel and `s2` is directly comparable with
//! the kernel variance `(delta / M)^2 / 12`. The normalization makes the
//! log-likelihood comparable across component counts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codec::{weighted_average, KernelParams, SoftAssignment};
use crate::error::{Error, Result};
use crate::grid::OrientationGrid;
use crate::rotation::{normalized_distance, Quaternion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    #[serde(rename = "q")]
    pub mean: Quaternion,
    #[serde(rename = "sigma_sq")]
    pub variance: f64,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<MixtureComponent>,
    pub log_likelihood: f64,
}

impl MixtureModel {
    /// Model with uniform priors and a shared variance, log-likelihood unset.
    pub fn from_means(means: &[Quaternion], variance: f64) -> Self {
        let prior = 1.0 / means.len() as f64;
        Self {
            components: means
                .iter()
                .map(|&mean| MixtureComponent {
                    mean,
                    variance,
                    prior,
                })
                .collect(),
            log_likelihood: f64::NEG_INFINITY,
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn sort_by_prior(&mut self) {
        self.components.sort_by(|a, b| {
            b.prior
                .total_cmp(&a.prior)
                .then_with(|| cmp_quat(&a.mean, &b.mean))
        });
    }
}

fn cmp_quat(a: &Quaternion, b: &Quaternion) -> std::cmp::Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k_max: usize,
    /// Suppression radius for peak initialization, normalized distance.
    pub nms_radius: f64,
    /// Minimum log-likelihood gain (nats) to accept one more component.
    pub ll_threshold: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
    pub prior_floor: f64,
    /// Convergence threshold on the largest mean displacement.
    pub mean_tol: f64,
    pub init_variance: f64,
}

impl EmConfig {
    /// Defaults tied to the encoding kernel: suppression radius `delta / M`,
    /// initial variance `(delta / M)^2 / 12`, gain threshold 0.05 nats.
    pub fn for_kernel(params: &KernelParams) -> Self {
        Self {
            k_max: 4,
            nms_radius: params.step(),
            ll_threshold: 0.05,
            max_iter: 100,
            variance_floor: 1e-4,
            prior_floor: 1e-3,
            mean_tol: 1e-4,
            init_variance: params.sigma_sq(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.k_max >= 1
            && self.nms_radius >= 0.0
            && self.ll_threshold.is_finite()
            && self.max_iter >= 1
            && self.variance_floor > 0.0
            && (0.0..1.0).contains(&self.prior_floor)
            && self.mean_tol > 0.0
            && self.init_variance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Posterior memberships `p(component j | bin i)`, row-major `[bin][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    k: usize,
    values: Vec<f64>,
    /// Bins whose posterior denominator was not finite and positive; they
    /// received uniform membership.
    pub guarded_bins: Vec<usize>,
    /// Log-likelihood of the model that produced these memberships.
    pub log_likelihood: f64,
}

impl Membership {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_bins(&self) -> usize {
        self.values.len() / self.k.max(1)
    }

    pub fn row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.k..(bin + 1) * self.k]
    }

    pub fn get(&self, bin: usize, component: usize) -> f64 {
        self.values[bin * self.k + component]
    }
}

fn log_density(d: f64, variance: f64) -> f64 {
    -1.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance)
}

fn check_model(model: &MixtureModel) -> Result<()> {
    if model.components.is_empty() {
        return Err(Error::InvalidConfig("mixture needs at least one component".into()));
    }
    for c in &model.components {
        if !(c.variance > 0.0) || !(c.prior > 0.0) {
            return Err(Error::InvalidConfig(
                "component variances and priors must be positive".into(),
            ));
        }
    }
    Ok(())
}

/// Memberships and the data log-likelihood
/// `sum_i a_i ln sum_j p(b_i | theta_j) p(theta_j)`.
pub fn e_step(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    model: &MixtureModel,
) -> Result<Membership> {
    activations.check_grid(grid)?;
    check_model(model)?;
    let k = model.k();
    let mut values = vec![0.0; grid.len() * k];
    let mut guarded_bins = Vec::new();
    let mut ll = 0.0;
    let mut logs = vec![0.0; k];

    for (i, (b, &a)) in grid.bins().iter().zip(activations.values()).enumerate() {
        for (l, c) in logs.iter_mut().zip(&model.components) {
            *l = c.prior.ln() + log_density(normalized_distance(b, &c.mean), c.variance);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = &mut values[i * k..(i + 1) * k];
        let sum: f64 = if max.is_finite() {
            logs.iter().map(|l| (l - max).exp()).sum()
        } else {
            f64::NAN
        };
        if !(sum > 0.0) || !sum.is_finite() {
            row.fill(1.0 / k as f64);
            guarded_bins.push(i);
            continue;
        }
        for (r, l) in row.iter_mut().zip(&logs) {
            *r = (l - max).exp() / sum;
        }
        if a > 0.0 {
            ll += a * (max + sum.ln());
        }
    }

    Ok(Membership {
        k,
        values,
        guarded_bins,
        log_likelihood: ll,
    })
}

fn weighted_spread(bins: &[Quaternion], weights: &[f64], q: &Quaternion) -> f64 {
    bins.iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(b, w)| w * normalized_distance(b, q).powi(2))
        .sum()
}

/// Prior, mean and variance updates. Components whose prior falls below
/// `prior_floor` are dropped and the remaining priors renormalized.
///
/// The mean is the weighted quaternion average; if it has a larger weighted
/// squared distance than the current mean in `model`, the current mean is
/// kept so the log-likelihood cannot decrease.
pub fn m_step(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    membership: &Membership,
    model: &MixtureModel,
    config: &EmConfig,
) -> Result<MixtureModel> {
    activations.check_grid(grid)?;
    if membership.n_bins() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: membership.n_bins(),
        });
    }
    if membership.k() != model.k() {
        return Err(Error::DimensionMismatch {
            expected: model.k(),
            got: membership.k(),
        });
    }
    let a = activations.values();
    let k = membership.k();

    let priors: Vec<f64> = (0..k)
        .map(|j| (0..grid.len()).map(|i| a[i] * membership.get(i, j)).sum())
        .collect();
    let kept: Vec<usize> = (0..k).filter(|&j| priors[j] >= config.prior_floor).collect();
    if kept.is_empty() {
        return Err(Error::InvalidActivations("every component fell below the prior floor".into()));
    }
    let kept_mass: f64 = kept.iter().map(|&j| priors[j]).sum();

    let mut components = Vec::with_capacity(kept.len());
    let mut weights = vec![0.0; grid.len()];
    for &j in &kept {
        for (i, w) in weights.iter_mut().enumerate() {
            *w = a[i] * membership.get(i, j) / priors[j];
        }
        let candidate = weighted_average(grid.bins(), &weights)?.q;
        let old = model.components[j].mean;
        let s_new = weighted_spread(grid.bins(), &weights, &candidate);
        let s_old = weighted_spread(grid.bins(), &weights, &old);
        let (mean, spread) = if s_new <= s_old {
            (candidate, s_new)
        } else {
            (old, s_old)
        };
        components.push(MixtureComponent {
            mean,
            // weighted mean squared distance spans three axes
            variance: (spread / 3.0).max(config.variance_floor),
            prior: priors[j] / kept_mass,
        });
    }

    Ok(MixtureModel {
        components,
        log_likelihood: f64::NEG_INFINITY,
    })
}

/// One EM run from a given initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub model: MixtureModel,
    /// `(component count, log-likelihood)` of every visited model, initial
    /// model first.
    pub trace: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub guarded_bins: usize,
}

pub fn run_em(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    init: MixtureModel,
    config: &EmConfig,
) -> Result<EmRun> {
    config.validate()?;
    let mut model = init;
    let mut trace = Vec::new();
    let mut guarded = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        let membership = e_step(grid, activations, &model)?;
        guarded += membership.guarded_bins.len();
        model.log_likelihood = membership.log_likelihood;
        trace.push((model.k(), model.log_likelihood));

        let next = m_step(grid, activations, &membership, &model, config)?;
        iterations += 1;
        let shift = if next.k() == model.k() {
            next.components
                .iter()
                .zip(&model.components)
                .map(|(n, o)| normalized_distance(&n.mean, &o.mean))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        model = next;
        if shift < config.mean_tol {
            converged = true;
            break;
        }
    }

    let membership = e_step(grid, activations, &model)?;
    guarded += membership.guarded_bins.len();
    model.log_likelihood = membership.log_likelihood;
    trace.push((model.k(), model.log_likelihood));
    model.sort_by_prior();

    Ok(EmRun {
        model,
        trace,
        iterations,
        converged,
        guarded_bins: guarded,
    })
}

/// Greedy non-maximum suppression: strongest bins first, skipping any bin
/// within `radius` of an already selected one. Returns up to `max_peaks`
/// bin indices.
pub fn nms_peaks(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    radius: f64,
    max_peaks: usize,
) -> Vec<usize> {
    let a = activations.values();
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));
    let bins = grid.bins();
    let mut peaks: Vec<usize> = Vec::new();
    for i in order {
        if peaks.len() == max_peaks {
            break;
        }
        if peaks
            .iter()
            .all(|&p| normalized_distance(&bins[p], &bins[i]) > radius)
        {
            peaks.push(i);
        }
    }
    peaks
}

/// Fitted model together with the per-K search.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub model: MixtureModel,
    /// EM runs for K = 1, 2, ... in order.
    pub runs: Vec<EmRun>,
}

impl MixtureFit {
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.model.log_likelihood).collect()
    }
}

pub fn fit_mixture(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    config: &EmConfig,
) -> Result<MixtureModel> {
    Ok(fit_mixture_detailed(grid, activations, config)?.model)
}

/// Increases K until the log-likelihood gain of one more component is at
/// most `ll_threshold`, returning the smaller model.
pub fn fit_mixture_detailed(
    grid: &OrientationGrid,
    activations: &SoftAssignment,
    config: &EmConfig,
) -> Result<MixtureFit> {
    config.validate()?;
    activations.check_grid(grid)?;
    let peaks = nms_peaks(grid, activations, config.nms_radius, config.k_max);
    let k_cap = peaks.len().min(config.k_max);
    if k_cap == 0 {
        return Err(Error::EmptyGrid);
    }

    let mut runs: Vec<EmRun> = Vec::new();
    for k in 1..=k_cap {
        let means: Vec<Quaternion> = peaks[..k].iter().map(|&i| grid.bins()[i]).collect();
        let init = MixtureModel::from_means(&means, config.init_variance);
        let run = run_em(grid, activations, init, config)?;
        if let Some(prev) = runs.last() {
            if run.model.log_likelihood - prev.model.log_likelihood <= config.ll_threshold {
                let model = prev.model.clone();
                runs.push(run);
                return Ok(MixtureFit { model, runs });
            }
        }
        runs.push(run);
    }
    let model = runs.last().expect("k_cap >= 1").model.clone();
    Ok(MixtureFit { model, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, encode_multi};
    use crate::grid::{build_grid, default_merge_tolerance};
    use crate::rotation::{geodesic_angle, sample_uniform};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(m: usize) -> (OrientationGrid, KernelParams, EmConfig) {
        let g = build_grid(m, default_merge_tolerance(m)).unwrap();
        let p = KernelParams::new(6.0, m).unwrap();
        let c = EmConfig::for_kernel(&p);
        (g, p, c)
    }

    #[test]
    fn e_step_single_component_is_all_ones() {
        let (g, p, c) = setup(8);
        let a = encode(&g, &g.bins()[3], &p);
        let model = MixtureModel::from_means(&[g.bins()[40]], c.init_variance);
        let m = e_step(&g, &a, &model).unwrap();
        assert!((0..g.len()).all(|i| m.get(i, 0) == 1.0));
        assert!(m.guarded_bins.is_empty());
    }

    #[test]
    fn e_step_membership_rows_sum_to_one() {
        let (g, p, c) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = encode(&g, &sample_uniform(&mut rng), &p);
        let means: Vec<_> = (0..3).map(|_| sample_uniform(&mut rng)).collect();
        let m = e_step(&g, &a, &MixtureModel::from_means(&means, c.init_variance)).unwrap();
        for i in 0..g.len() {
            assert_abs_diff_eq!(m.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn e_step_coincident_and_symmetric_bins() {
        let q1 = Quaternion::IDENTITY;
        let q2 = Quaternion::about_z(1.0);
        let mid = Quaternion::about_z(0.5);
        let g = OrientationGrid::from_bins([q1, q2, mid], 0.0).unwrap();
        let a = SoftAssignment::new(vec![0.4, 0.4, 0.2], &g).unwrap();
        let model = MixtureModel::from_means(&[q1, q2], 0.01);
        let m = e_step(&g, &a, &model).unwrap();
        assert!(m.get(0, 0) > 0.5);
        assert!(m.get(1, 1) > 0.5);
        assert_abs_diff_eq!(m.get(2, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(2, 1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn e_step_guards_non_finite_denominators() {
        let g = OrientationGrid::from_bins([Quaternion::IDENTITY, Quaternion::about_z(1.0)], 0.0).unwrap();
        let a = SoftAssignment::new(vec![0.5, 0.5], &g).unwrap();
        let mut model = MixtureModel::from_means(&[Quaternion::IDENTITY, Quaternion::about_z(2.0)], 0.01);
        model.components[0].variance = f64::INFINITY;
        model.components[1].variance = f64::INFINITY;
        let m = e_step(&g, &a, &model).unwrap();
        assert_eq!(m.guarded_bins, vec![0, 1]);
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn e_step_rejects_invalid_model() {
        let (g, p, _) = setup(4);
        let a = encode(&g, &Quaternion::IDENTITY, &p);
        let bad = MixtureModel::from_means(&[Quaternion::IDENTITY], 0.0);
        assert!(e_step(&g, &a, &bad).is_err());
        let empty = MixtureModel {
            components: vec![],
            log_likelihood: 0.0,
        };
        assert!(e_step(&g, &a, &empty).is_err());
    }

    #[test]
    fn m_step_unimodal_recovers_label() {
        let (g, p, c) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let q = sample_uniform(&mut rng);
            let a = encode(&g, &q, &p);
            let init = MixtureModel::from_means(&[g.bins()[a.argmax()]], c.init_variance);
            let mem = e_step(&g, &a, &init).unwrap();
            let model = m_step(&g, &a, &mem, &init, &c).unwrap();
            assert_eq!(model.k(), 1);
            assert_abs_diff_eq!(model.components[0].prior, 1.0, epsilon = 1e-12);
            // within the codec roundtrip tolerance (max 6.8 deg at M=16)
            assert!(geodesic_angle(&model.components[0].mean, &q).to_degrees() < 7.0);
        }
    }

    #[test]
    fn m_step_drops_starved_component() {
        let (g, p, c) = setup(8);
        let a = encode(&g, &Quaternion::IDENTITY, &p);
        let k = 2;
        let mut values = vec![0.0; g.len() * k];
        for i in 0..g.len() {
            values[i * k] = 1.0;
        }
        let membership = Membership {
            k,
            values,
            guarded_bins: vec![],
            log_likelihood: 0.0,
        };
        let init = MixtureModel::from_means(&[Quaternion::IDENTITY, Quaternion::about_z(2.0)], 0.01);
        let model = m_step(&g, &a, &membership, &init, &c).unwrap();
        assert_eq!(model.k(), 1);
        assert_eq!(model.components[0].prior, 1.0);
    }

    #[test]
    fn m_step_bimodal_recovers_both_lobes() {
        let (g, p, c) = setup(16);
        let qa = Quaternion::about_z(0.2);
        // both lobes at zero pitch, where the grid's decode bias is near zero
        let qb = qa * Quaternion::from_axis_angle(&crate::rotation::Vec3::x(), 1.6).unwrap();
        let a = encode_multi(&g, &[(qa, 0.5), (qb, 0.5)], &p).unwrap();
        let mut model = MixtureModel::from_means(&[g.nearest_bin(&qa).unwrap().0, g.nearest_bin(&qb).unwrap().0].map(|i| g.bins()[i]), c.init_variance);
        for _ in 0..20 {
            let mem = e_step(&g, &a, &model).unwrap();
            model = m_step(&g, &a, &mem, &model, &c).unwrap();
        }
        assert!(geodesic_angle(&model.components[0].mean, &qa).to_degrees() < 5.0);
        assert!(geodesic_angle(&model.components[1].mean, &qb).to_degrees() < 5.0);
        for comp in &model.components {
            assert!((comp.prior - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn fit_unimodal_selects_one_component() {
        let (g, p, c) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let q = sample_uniform(&mut rng);
            let fit = fit_mixture_detailed(&g, &encode(&g, &q, &p), &c).unwrap();
            assert_eq!(fit.model.k(), 1, "ll {:?}", fit.log_likelihoods());
            assert!(geodesic_angle(&fit.model.components[0].mean, &q).to_degrees() < 7.0);
        }
    }

    #[test]
    fn nms_respects_radius() {
        let (g, p, _) = setup(8);
        let a = encode(&g, &Quaternion::IDENTITY, &p);
        let peaks = nms_peaks(&g, &a, 0.3, 4);
        assert_eq!(peaks[0], a.argmax());
        for (x, &i) in peaks.iter().enumerate() {
            for &j in &peaks[..x] {
                assert!(normalized_distance(&g.bins()[i], &g.bins()[j]) > 0.3);
            }
        }
        // a radius covering everything leaves a single peak, capping K
        assert_eq!(nms_peaks(&g, &a, 1.0, 4).len(), 1);
        let mut c = EmConfig::for_kernel(&p);
        c.nms_radius = 1.0;
        let fit = fit_mixture_detailed(&g, &a, &c).unwrap();
        assert_eq!(fit.runs.len(), 1);
    }

    fn two_lobes(seed: u64, g: &OrientationGrid, p: &KernelParams) -> SoftAssignment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qa = sample_uniform(&mut rng);
        let qb = loop {
            let q = sample_uniform(&mut rng);
            if geodesic_angle(&qa, &q) >= 60f64.to_radians() {
                break q;
            }
        };
        encode_multi(g, &[(qa, 0.5), (qb, 0.5)], p).unwrap()
    }

    #[test]
    fn log_likelihood_monotone_for_fixed_k() {
        let (g, p, c) = setup(12);
        for seed in 0..10 {
            let fit = fit_mixture_detailed(&g, &two_lobes(seed, &g, &p), &c).unwrap();
            for run in &fit.runs {
                for w in run.trace.windows(2) {
                    if w[0].0 == w[1].0 {
                        assert!(w[1].1 >= w[0].1 - 1e-9, "seed {seed}: {:?}", run.trace);
                    }
                }
            }
        }
    }

    #[test]
    fn component_order_does_not_matter() {
        let (g, p, c) = setup(12);
        let a = two_lobes(4, &g, &p);
        let peaks = nms_peaks(&g, &a, c.nms_radius, 3);
        let means: Vec<_> = peaks.iter().map(|&i| g.bins()[i]).collect();
        let reversed: Vec<_> = means.iter().rev().copied().collect();
        let x = run_em(&g, &a, MixtureModel::from_means(&means, c.init_variance), &c).unwrap().model;
        let y = run_em(&g, &a, MixtureModel::from_means(&reversed, c.init_variance), &c).unwrap().model;
        assert_eq!(x.k(), y.k());
        for (u, v) in x.components.iter().zip(&y.components) {
            assert!(normalized_distance(&u.mean, &v.mean) < 1e-9);
            assert_abs_diff_eq!(u.variance, v.variance, epsilon = 1e-9);
            assert_abs_diff_eq!(u.prior, v.prior, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_is_deterministic_and_well_formed() {
        let (g, p, c) = setup(12);
        let a = two_lobes(9, &g, &p);
        let x = fit_mixture(&g, &a, &c).unwrap();
        assert_eq!(x, fit_mixture(&g, &a, &c).unwrap());
        assert_eq!(x.k(), 2);
        assert_abs_diff_eq!(x.components.iter().map(|c| c.prior).sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(x.components.windows(2).all(|w| w[0].prior >= w[1].prior));
        assert!(x.components.iter().all(|k| k.variance >= c.variance_floor));
    }

    #[test]
    fn invalid_config_rejected() {
        let (g, p, mut c) = setup(4);
        c.k_max = 0;
        assert!(fit_mixture(&g, &encode(&g, &Quaternion::IDENTITY, &p), &c).is_err());
    }
}
