//! Discrete orientation output space: an Euler-angle histogram with
//! redundant bins merged in quaternion space.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use crate::error::{Error, Result};
use crate::rotation::{abs_dot, euler_to_quat, normalized_distance, EulerAngles, Quaternion};

/// Identifies the grid a [`SoftAssignment`](crate::codec::SoftAssignment)
/// indexes. Two grids built from the same inputs share an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridId {
    pub m_per_dim: usize,
    pub merge_tolerance_bits: u64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationGrid {
    bins: Vec<Quaternion>,
    m_per_dim: usize,
    merge_tolerance: f64,
}

/// One fifth of the normalized one-dimensional bin step `2 / M`.
pub fn default_merge_tolerance(m_per_dim: usize) -> f64 {
    0.2 * 2.0 / m_per_dim as f64
}

/// Candidate bin centers in generation order: yaw outermost, roll innermost.
fn euler_centers(m: usize) -> impl Iterator<Item = EulerAngles> {
    let step_full = TAU / m as f64;
    let step_half = PI / m as f64;
    (0..m).flat_map(move |i| {
        (0..m).flat_map(move |j| {
            (0..m).map(move |k| EulerAngles {
                yaw: -PI + (i as f64 + 0.5) * step_full,
                pitch: -FRAC_PI_2 + (j as f64 + 0.5) * step_half,
                roll: -PI + (k as f64 + 0.5) * step_full,
            })
        })
    })
}

/// Greedy in-order merge: a candidate is dropped when it lies within
/// `tolerance` (normalized distance) of an already kept bin.
fn merge_candidates(candidates: impl IntoIterator<Item = Quaternion>, tolerance: f64) -> Vec<Quaternion> {
    // |dot| below this is certainly farther than `tolerance`
    let dot_cut = (tolerance * PI / 2.0).cos() - 1e-12;
    let mut kept: Vec<Quaternion> = Vec::new();
    for c in candidates {
        let redundant = kept.iter().any(|b| {
            let ad = abs_dot(b, &c);
            ad >= dot_cut && normalized_distance(b, &c) <= tolerance
        });
        if !redundant {
            kept.push(c);
        }
    }
    kept
}

/// Builds the `M^3` Euler grid and merges near-duplicates.
pub fn build_grid(m_per_dim: usize, merge_tolerance: f64) -> Result<OrientationGrid> {
    if m_per_dim < 2 {
        return Err(Error::GridTooCoarse(m_per_dim));
    }
    if !(merge_tolerance >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "merge tolerance must be >= 0, got {merge_tolerance}"
        )));
    }
    let bins = merge_candidates(
        euler_centers(m_per_dim).map(|e| euler_to_quat(&e)),
        merge_tolerance,
    );
    Ok(OrientationGrid {
        bins,
        m_per_dim,
        merge_tolerance,
    })
}

impl OrientationGrid {
    /// Grid over an arbitrary bin list; bins are canonicalized and merged with
    /// the same rule as [`build_grid`]. `m_per_dim` is recorded as 0.
    pub fn from_bins(bins: impl IntoIterator<Item = Quaternion>, merge_tolerance: f64) -> Result<Self> {
        let bins = merge_candidates(bins.into_iter().map(|q| q.canonical()), merge_tolerance);
        if bins.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(Self {
            bins,
            m_per_dim: 0,
            merge_tolerance,
        })
    }

    pub fn bins(&self) -> &[Quaternion] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn m_per_dim(&self) -> usize {
        self.m_per_dim
    }

    pub fn merge_tolerance(&self) -> f64 {
        self.merge_tolerance
    }

    pub fn id(&self) -> GridId {
        GridId {
            m_per_dim: self.m_per_dim,
            merge_tolerance_bits: self.merge_tolerance.to_bits(),
            len: self.bins.len(),
        }
    }

    /// Index and normalized distance of the closest bin; ties go to the
    /// lowest index.
    pub fn nearest_bin(&self, q: &Quaternion) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in self.bins.iter().enumerate() {
            let ad = abs_dot(b, q);
            if best.is_none_or(|(_, d)| ad > d) {
                best = Some((i, ad));
            }
        }
        let (i, _) = best.ok_or(Error::EmptyGrid)?;
        Ok((i, normalized_distance(&self.bins[i], q)))
    }

    /// CSV with header `index,w,x,y,z`, 17 significant digits per component.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,w,x,y,z")?;
        for (i, b) in self.bins.iter().enumerate() {
            let [w, x, y, z] = b.to_array();
            writeln!(out, "{i},{w:.16e},{x:.16e},{y:.16e},{z:.16e}")?;
        }
        Ok(())
    }
}
