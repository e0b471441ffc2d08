use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DetectorGeometry, DetsimError, EnergyDeposit};

/// Gaussian support is truncated at this many standard deviations.
pub const SPLAT_TRUNCATION_SIGMAS: f64 = 4.0;

/// Drift-dependent Gaussian smearing widths, in mm per metre of drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionModel {
    pub sigma_transverse_per_m: f64,
    pub sigma_longitudinal_per_m: f64,
}

impl Default for DiffusionModel {
    fn default() -> Self {
        Self {
            sigma_transverse_per_m: 1.3,
            sigma_longitudinal_per_m: 0.9,
        }
    }
}

impl DiffusionModel {
    pub fn validate(&self) -> Result<(), DetsimError> {
        if !(self.sigma_transverse_per_m >= 0.0 && self.sigma_longitudinal_per_m >= 0.0) {
            return Err(DetsimError::Geometry(format!(
                "diffusion coefficients must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(sigma_x, sigma_y, sigma_z)` in mm for a given drift distance in metres.
    /// The drift axis `x` is longitudinal.
    pub fn sigmas_mm(&self, drift_m: f64) -> [f64; 3] {
        let t = self.sigma_transverse_per_m * drift_m;
        [self.sigma_longitudinal_per_m * drift_m, t, t]
    }
}

/// Sparse voxel energies keyed by `(ix, iy, iz)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelGrid {
    voxels: BTreeMap<[u32; 3], f64>,
}

impl VoxelGrid {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds energy to a voxel; non-positive amounts are ignored.
    pub fn add(&mut self, index: [usize; 3], energy: f64) {
        if energy > 0.0 {
            *self.voxels.entry(index.map(|i| i as u32)).or_insert(0.0) += energy;
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, index: [usize; 3]) -> Option<f64> {
        self.voxels.get(&index.map(|i| i as u32)).copied()
    }

    pub fn total_energy(&self) -> f64 {
        self.voxels.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
        self.voxels.iter().map(|(k, &e)| (k.map(|i| i as usize), e))
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Fraction of a truncated, renormalised Gaussian falling in each bin of
/// width `pitch` along one axis. Bins outside `[0, n_bins)` are dropped after
/// normalisation, so mass leaving the detector is lost.
pub fn axis_weights(center_mm: f64, sigma_mm: f64, pitch_mm: f64, n_bins: usize) -> Vec<(usize, f64)> {
    if sigma_mm <= 0.0 {
        let idx = (center_mm / pitch_mm).floor();
        if idx >= 0.0 && (idx as usize) < n_bins {
            return vec![(idx as usize, 1.0)];
        }
        // a point exactly on the far face belongs to the last bin
        if idx as usize == n_bins && center_mm <= n_bins as f64 * pitch_mm {
            return vec![(n_bins - 1, 1.0)];
        }
        return Vec::new();
    }
    let lo = center_mm - SPLAT_TRUNCATION_SIGMAS * sigma_mm;
    let hi = center_mm + SPLAT_TRUNCATION_SIGMAS * sigma_mm;
    let first = (lo / pitch_mm).floor() as i64;
    let last = (hi / pitch_mm).ceil() as i64 - 1;
    let mut raw = Vec::with_capacity((last - first + 1).max(0) as usize);
    let mut total = 0.0;
    for i in first..=last {
        let a = (i as f64 * pitch_mm).max(lo);
        let b = ((i + 1) as f64 * pitch_mm).min(hi);
        if b <= a {
            continue;
        }
        let w = normal_cdf((b - center_mm) / sigma_mm) - normal_cdf((a - center_mm) / sigma_mm);
        total += w;
        raw.push((i, w));
    }
    raw.into_iter()
        .filter(|&(i, w)| i >= 0 && (i as usize) < n_bins && w > 0.0)
        .map(|(i, w)| (i as usize, w / total))
        .collect()
}

/// Splats one deposit into `grid` given an explicit drift distance.
pub fn splat_deposit(
    grid: &mut VoxelGrid,
    deposit: &EnergyDeposit,
    drift_m: f64,
    model: &DiffusionModel,
    geom: &DetectorGeometry,
) {
    let local = geom.to_local_mm(deposit.position);
    let sigmas = model.sigmas_mm(drift_m);
    let counts = geom.voxel_counts();
    let w: [Vec<(usize, f64)>; 3] =
        std::array::from_fn(|a| axis_weights(local[a], sigmas[a], geom.voxel_pitch_mm[a], counts[a]));
    for &(ix, wx) in &w[0] {
        for &(iy, wy) in &w[1] {
            let wxy = wx * wy;
            for &(iz, wz) in &w[2] {
                grid.add([ix, iy, iz], deposit.energy * wxy * wz);
            }
        }
    }
}

/// Smears every deposit with a Gaussian whose width grows linearly with the
/// distance to the nearest anode, and accumulates the result into voxels.
pub fn smear_and_voxelize(
    deposits: &[EnergyDeposit],
    model: &DiffusionModel,
    geom: &DetectorGeometry,
) -> Result<VoxelGrid, DetsimError> {
    let mut grid = VoxelGrid::new();
    for dep in deposits {
        if !geom.contains(dep.position) {
            return Err(DetsimError::DepositOutside { position: dep.position });
        }
        let drift = geom.nearest_anode_distance(dep.position[0])?;
        splat_deposit(&mut grid, dep, drift, model, geom);
    }
    Ok(grid)
}
