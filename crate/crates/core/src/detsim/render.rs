use serde::{Deserialize, Serialize};

use super::{DetectorGeometry, DetsimError, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    XZ,
    YZ,
}

impl View {
    pub fn tag(self) -> u8 {
        match self {
            View::XZ => 0,
            View::YZ => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(View::XZ),
            1 => Some(View::YZ),
            _ => None,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            View::XZ => "xz",
            View::YZ => "yz",
        }
    }

    /// Detector axis shown along image rows.
    fn transverse_axis(self) -> usize {
        match self {
            View::XZ => 0,
            View::YZ => 1,
        }
    }
}

/// Pixel energies of one view before intensity normalisation.
///
/// Rows follow the transverse axis (`x` or `y`), columns follow `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawView {
    pub view: View,
    pub size: usize,
    pub energies: Vec<f64>,
}

impl RawView {
    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }
}

/// Grayscale event display with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMap {
    pub view: View,
    pub width: usize,
    pub height: usize,
    pub intensities: Vec<f32>,
    /// In-window pixel energy before normalisation.
    pub raw_energy_total: f64,
}

impl PixelMap {
    pub fn new(view: View, width: usize, height: usize, intensities: Vec<f32>, raw_energy_total: f64) -> Self {
        assert_eq!(intensities.len(), width * height, "pixel buffer length");
        Self {
            view,
            width,
            height,
            intensities,
            raw_energy_total,
        }
    }

    pub fn zeros(view: View, size: usize) -> Self {
        Self::new(view, size, size, vec![0.0; size * size], 0.0)
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.intensities[row * self.width + col]
    }

    pub fn mean_intensity(&self) -> f64 {
        self.intensities.iter().map(|&v| v as f64).sum::<f64>() / self.intensities.len() as f64
    }
}

/// Maps pixel energy to gray level as `min(1, energy / scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
}

impl Normalization {
    pub fn new(scale: f64) -> Result<Self, DetsimError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DetsimError::Normalization(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn apply(&self, raw: &RawView) -> PixelMap {
        let intensities = raw
            .energies
            .iter()
            .map(|&e| (e / self.scale).min(1.0) as f32)
            .collect();
        PixelMap::new(raw.view, raw.size, raw.size, intensities, raw.total())
    }
}

/// Projects voxels into `pixel_pitch` bins on both views, cropping an
/// `image_size` window centred on the pixel that contains `vertex`.
/// Window cells beyond the detector stay zero.
pub fn project_views(
    grid: &VoxelGrid,
    vertex: [f64; 3],
    geom: &DetectorGeometry,
) -> Result<(RawView, RawView), DetsimError> {
    if grid.is_empty() {
        return Err(DetsimError::EmptyGrid);
    }
    let size = geom.image_size;
    let vpp = geom.voxels_per_pixel();
    let vertex_px = geom.pixel_index(vertex);
    let origin: [i64; 3] = std::array::from_fn(|a| vertex_px[a] - (size / 2) as i64);
    let mut views = [View::XZ, View::YZ].map(|view| RawView {
        view,
        size,
        energies: vec![0.0; size * size],
    });
    for (idx, energy) in grid.iter() {
        let px: [i64; 3] = std::array::from_fn(|a| (idx[a] / vpp[a]) as i64 - origin[a]);
        let col = px[2];
        if col < 0 || col >= size as i64 {
            continue;
        }
        for raw in &mut views {
            let row = px[raw.view.transverse_axis()];
            if row >= 0 && row < size as i64 {
                raw.energies[row as usize * size + col as usize] += energy;
            }
        }
    }
    let [xz, yz] = views;
    Ok((xz, yz))
}

pub fn render_views(
    grid: &VoxelGrid,
    vertex: [f64; 3],
    geom: &DetectorGeometry,
    norm: &Normalization,
) -> Result<(PixelMap, PixelMap), DetsimError> {
    let (xz, yz) = project_views(grid, vertex, geom)?;
    Ok((norm.apply(&xz), norm.apply(&yz)))
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of the nonzero pixel
/// energies across all supplied views.
pub fn percentile_scale<'a>(views: impl IntoIterator<Item = &'a RawView>, q: f64) -> Result<f64, DetsimError> {
    let mut values: Vec<f64> = views
        .into_iter()
        .flat_map(|v| v.energies.iter().copied().filter(|&e| e > 0.0))
        .collect();
    if values.is_empty() {
        return Err(DetsimError::Normalization("no nonzero pixels in calibration sample".into()));
    }
    values.sort_by(f64::total_cmp);
    let rank = (q / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(values[lo] + (values[hi] - values[lo]) * frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_lands_at_predicted_pixel() {
        let geom = DetectorGeometry::desk();
        let mut grid = VoxelGrid::new();
        // voxel (ix, iy, iz) = (1234, 77, 801) -> pixel (24, 7, 80)
        grid.add([1234, 77, 801], 3.0);
        // vertex at local mm (1010, 512, 3620) -> pixel (20, 10, 72)
        let vertex = [0.010, -0.488, 0.120];
        let (xz, yz) = project_views(&grid, vertex, &geom).unwrap();
        // origin = vertex pixel - 32 -> (-12, -22, 40)
        let (row_x, row_y, col) = (24 + 12, 7 + 22, 80 - 40);
        let nz: Vec<usize> = (0..64 * 64).filter(|&i| xz.energies[i] > 0.0).collect();
        assert_eq!(nz, vec![row_x * 64 + col]);
        let nz: Vec<usize> = (0..64 * 64).filter(|&i| yz.energies[i] > 0.0).collect();
        assert_eq!(nz, vec![row_y * 64 + col]);
        assert_eq!(xz.total(), 3.0);
    }

    #[test]
    fn empty_grid_is_error() {
        let geom = DetectorGeometry::desk();
        assert!(matches!(
            project_views(&VoxelGrid::new(), [0.0; 3], &geom),
            Err(DetsimError::EmptyGrid)
        ));
    }

    #[test]
    fn intensities_clip_at_one() {
        let raw = RawView { view: View::XZ, size: 2, energies: vec![0.0, 0.5, 1.0, 4.0] };
        let map = Normalization::new(2.0).unwrap().apply(&raw);
        assert_eq!(map.intensities, vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(map.raw_energy_total, 5.5);
        assert!(Normalization::new(0.0).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let raw = RawView { view: View::YZ, size: 2, energies: vec![0.0, 1.0, 2.0, 3.0] };
        assert_eq!(percentile_scale([&raw], 50.0).unwrap(), 2.0);
        assert_eq!(percentile_scale([&raw], 100.0).unwrap(), 3.0);
        assert_eq!(percentile_scale([&raw], 75.0).unwrap(), 2.5);
    }
}
