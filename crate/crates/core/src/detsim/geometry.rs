use serde::{Deserialize, Serialize};

use super::DetsimError;

/// Modular LArTPC volume centred on the origin, drifting along `x`.
///
/// Extents are in metres, pitches in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorGeometry {
    pub extent: [f64; 3],
    pub anode_x: Vec<f64>,
    pub cathode_x: Vec<f64>,
    pub voxel_pitch_mm: [f64; 3],
    pub pixel_pitch_mm: f64,
    pub image_size: usize,
}

impl Default for DetectorGeometry {
    fn default() -> Self {
        Self {
            extent: [2.0, 2.0, 7.0],
            anode_x: vec![-0.9, -0.3, 0.3, 0.9],
            cathode_x: vec![-0.6, 0.0, 0.6],
            voxel_pitch_mm: [1.0, 5.0, 5.0],
            pixel_pitch_mm: 50.0,
            image_size: 512,
        }
    }
}

fn is_integer_ratio(num: f64, den: f64) -> bool {
    let r = num / den;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-9
}

impl DetectorGeometry {
    /// Full-size geometry with 512 x 512 pixel maps.
    pub fn full_scale() -> Self {
        Self::default()
    }

    /// Same detector, 64 x 64 pixel maps.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            ..Self::default()
        }
    }

    pub fn with_image_size(mut self, image_size: usize) -> Result<Self, DetsimError> {
        self.image_size = image_size;
        self.validate()?;
        Ok(self)
    }

    pub fn new(
        extent: [f64; 3],
        anode_x: Vec<f64>,
        cathode_x: Vec<f64>,
        voxel_pitch_mm: [f64; 3],
        pixel_pitch_mm: f64,
        image_size: usize,
    ) -> Result<Self, DetsimError> {
        let geom = Self {
            extent,
            anode_x,
            cathode_x,
            voxel_pitch_mm,
            pixel_pitch_mm,
            image_size,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), DetsimError> {
        let bad = |msg: String| Err(DetsimError::Geometry(msg));
        if self.extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad(format!("extents must be positive, got {:?}", self.extent));
        }
        if self.voxel_pitch_mm.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad(format!("voxel pitches must be positive, got {:?}", self.voxel_pitch_mm));
        }
        if !(self.pixel_pitch_mm > 0.0 && self.pixel_pitch_mm.is_finite()) {
            return bad(format!("pixel pitch must be positive, got {}", self.pixel_pitch_mm));
        }
        if self.image_size == 0 {
            return bad("image size must be positive".into());
        }
        for (axis, (&extent, &pitch)) in self.extent.iter().zip(&self.voxel_pitch_mm).enumerate() {
            if !is_integer_ratio(extent * 1000.0, pitch) {
                return bad(format!("extent along axis {axis} is not a whole number of {pitch} mm voxels"));
            }
            if !is_integer_ratio(self.pixel_pitch_mm, pitch) {
                return bad(format!(
                    "pixel pitch {} mm is not an integer multiple of voxel pitch {pitch} mm on axis {axis}",
                    self.pixel_pitch_mm
                ));
            }
        }
        if self.anode_x.is_empty() {
            return bad("at least one anode plane is required".into());
        }
        let half = self.extent[0] / 2.0;
        let mut planes: Vec<(f64, bool)> = self
            .anode_x
            .iter()
            .map(|&x| (x, true))
            .chain(self.cathode_x.iter().map(|&x| (x, false)))
            .collect();
        if let Some((x, _)) = planes.iter().find(|(x, _)| !(x.abs() < half)) {
            return bad(format!("plane at x = {x} m is not strictly inside ±{half} m"));
        }
        planes.sort_by(|a, b| a.0.total_cmp(&b.0));
        if planes.windows(2).any(|w| w[0].0 == w[1].0 || w[0].1 == w[1].1) {
            return bad("anode and cathode planes must be distinct and interleaved".into());
        }
        Ok(())
    }

    pub fn half_extent(&self) -> [f64; 3] {
        [self.extent[0] / 2.0, self.extent[1] / 2.0, self.extent[2] / 2.0]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let h = self.half_extent();
        (0..3).all(|a| p[a].abs() <= h[a])
    }

    /// Number of voxels along each axis.
    pub fn voxel_counts(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.extent[a] * 1000.0 / self.voxel_pitch_mm[a]).round() as usize)
    }

    /// Voxels per pixel along each axis.
    pub fn voxels_per_pixel(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.pixel_pitch_mm / self.voxel_pitch_mm[a]).round() as usize)
    }

    /// Coordinate in millimetres from the low face of the detector.
    pub fn to_local_mm(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.half_extent();
        std::array::from_fn(|a| (p[a] + h[a]) * 1000.0)
    }

    pub fn voxel_index(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        if !self.contains(p) {
            return None;
        }
        let local = self.to_local_mm(p);
        let counts = self.voxel_counts();
        Some(std::array::from_fn(|a| {
            ((local[a] / self.voxel_pitch_mm[a]).floor() as usize).min(counts[a] - 1)
        }))
    }

    /// Global pixel index (over the whole detector) containing point `p`;
    /// may be negative or past the detector for points outside it.
    pub fn pixel_index(&self, p: [f64; 3]) -> [i64; 3] {
        let local = self.to_local_mm(p);
        std::array::from_fn(|a| (local[a] / self.pixel_pitch_mm).floor() as i64)
    }

    /// Distance along `x` from `x` to the closest anode plane.
    pub fn nearest_anode_distance(&self, x: f64) -> Result<f64, DetsimError> {
        let half = self.extent[0] / 2.0;
        if !(x.abs() <= half) {
            return Err(DetsimError::OutsideDetector { x, half_extent: half });
        }
        Ok(self
            .anode_x
            .iter()
            .map(|a| (x - a).abs())
            .fold(f64::INFINITY, f64::min))
    }
}
