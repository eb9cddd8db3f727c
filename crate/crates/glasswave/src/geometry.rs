//! Microphone-array geometry, acoustic propagation responses, and the
//! diffuse-noise covariance model.

use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in air, m/s. Propagation helpers take it as an argument
/// so tests can pin it; this is the default everywhere else.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Wearable-scale sanity bound on the array aperture, meters.
pub const MAX_PAIRWISE_DISTANCE: f64 = 0.5;

/// Microphone positions in an array-centered frame (+x forward, +y left,
/// +z up), all in meters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayGeometry {
    pub name: String,
    pub reference_index: usize,
    pub mics: Vec<[f64; 3]>,
    /// Nominal wearer-mouth position in the array frame, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mouth: Option<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn new(name: impl Into<String>, mics: Vec<[f64; 3]>, reference_index: usize) -> Result<Self> {
        let geometry = ArrayGeometry {
            name: name.into(),
            reference_index,
            mics,
            mouth: None,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mics.is_empty() {
            return Err(Error::InvalidGeometry("at least one microphone required".into()));
        }
        if self.reference_index >= self.mics.len() {
            return Err(Error::InvalidGeometry(format!(
                "reference_index {} out of range for {} mics",
                self.reference_index,
                self.mics.len()
            )));
        }
        for (i, a) in self.mics.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGeometry(format!("mic {i} has non-finite coordinates")));
            }
            for (j, b) in self.mics.iter().enumerate().skip(i + 1) {
                let d = dist(a, b);
                if d >= MAX_PAIRWISE_DISTANCE {
                    return Err(Error::InvalidGeometry(format!(
                        "mics {i} and {j} are {d:.3} m apart, beyond the wearable bound of {MAX_PAIRWISE_DISTANCE} m"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mic_count(&self) -> usize {
        self.mics.len()
    }

    pub fn reference_mic(&self) -> [f64; 3] {
        self.mics[self.reference_index]
    }

    /// Default 7-mic glasses-like layout. The coordinates are a plausible
    /// stand-in for a head-worn frame, not measurements of any real device;
    /// pass your own geometry file whenever you have one.
    pub fn glasses_preset() -> Self {
        ArrayGeometry {
            name: "glasses-7".into(),
            reference_index: 0,
            mics: vec![
                [0.080, 0.000, 0.010],   // nose bridge (reference)
                [0.075, 0.065, 0.005],   // left brow
                [0.075, -0.065, 0.005],  // right brow
                [0.030, 0.080, 0.000],   // left hinge
                [0.030, -0.080, 0.000],  // right hinge
                [-0.060, 0.075, -0.005], // left temple arm
                [-0.060, -0.075, -0.005], // right temple arm
            ],
            mouth: Some([0.08, 0.0, -0.08]),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::file(path.as_ref(), e))
    }
}

/// Parses a geometry config file and checks its invariants.
pub fn load_geometry(path: impl AsRef<Path>) -> Result<ArrayGeometry> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
    let geometry: ArrayGeometry = serde_json::from_str(&text)?;
    geometry.validate()?;
    Ok(geometry)
}

/// Discrete frequency axis shared by responses, designs, and spectrograms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrequencyGrid {
    pub sample_rate_hz: f64,
    pub fft_size: usize,
    pub retained_bins: usize,
}

impl FrequencyGrid {
    pub fn new(sample_rate_hz: f64, fft_size: usize, retained_bins: usize) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if fft_size == 0 || fft_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be a positive even integer, got {fft_size}"
            )));
        }
        if retained_bins == 0 || retained_bins > fft_size / 2 + 1 {
            return Err(Error::InvalidArgument(format!(
                "retained_bins must be in 1..={} for fft_size {fft_size}",
                fft_size / 2 + 1
            )));
        }
        Ok(FrequencyGrid {
            sample_rate_hz,
            fft_size,
            retained_bins,
        })
    }

    /// 256 retained bins of a 512-point transform at 16 kHz.
    pub fn default_16k() -> Self {
        FrequencyGrid::new(16_000.0, 512, 256).expect("default grid is valid")
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate_hz / self.fft_size as f64
    }

    pub fn bin_frequencies_hz(&self) -> Vec<f64> {
        (0..self.retained_bins).map(|k| self.bin_hz(k)).collect()
    }

    pub fn omega(&self, bin: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.bin_hz(bin)
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }
}

/// Where a source sits relative to the array.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceDescriptor {
    /// Far-field direction of arrival, degrees.
    Direction { azimuth_deg: f64, elevation_deg: f64 },
    /// Near-field point in the array frame, meters.
    Point { xyz: [f64; 3] },
}

impl SourceDescriptor {
    pub fn azimuth(azimuth_deg: f64) -> Self {
        SourceDescriptor::Direction {
            azimuth_deg,
            elevation_deg: 0.0,
        }
    }

    pub fn unit_vector(&self) -> Result<[f64; 3]> {
        match self {
            SourceDescriptor::Direction {
                azimuth_deg,
                elevation_deg,
            } => {
                let az = azimuth_deg.to_radians();
                let el = elevation_deg.to_radians();
                Ok([el.cos() * az.cos(), el.cos() * az.sin(), el.sin()])
            }
            SourceDescriptor::Point { .. } => Err(Error::InvalidArgument(
                "far-field propagation needs a direction, not a point".into(),
            )),
        }
    }

    pub fn natural_model(&self) -> PropagationModel {
        match self {
            SourceDescriptor::Direction { .. } => PropagationModel::FarField,
            SourceDescriptor::Point { .. } => PropagationModel::NearField,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationModel {
    /// Plane wave: unit-modulus entries, pure inter-channel phase.
    FarField,
    /// Spherical spreading from a point, amplitudes relative to the reference mic.
    NearField,
}

/// Per-frequency complex response from one source to every microphone,
/// relative to the reference channel.
#[derive(Debug, Clone)]
pub struct ChannelResponse {
    /// `[bins x mics]` complex entries.
    pub entries: Array2<Complex64>,
    pub source: SourceDescriptor,
    pub model: PropagationModel,
    pub grid: FrequencyGrid,
}

impl ChannelResponse {
    pub fn mic_count(&self) -> usize {
        self.entries.ncols()
    }

    pub fn bin_count(&self) -> usize {
        self.entries.nrows()
    }

    /// `sum_m |G_m|^2` at one bin.
    pub fn energy(&self, bin: usize) -> f64 {
        self.entries.row(bin).iter().map(|g| g.norm_sqr()).sum()
    }
}

/// Per-frequency Hermitian covariance, `[bins x mics x mics]`.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub data: Array3<Complex64>,
    pub grid: FrequencyGrid,
}

impl CovarianceMatrix {
    pub fn identity(grid: &FrequencyGrid, mic_count: usize) -> Self {
        let mut data = Array3::zeros((grid.retained_bins, mic_count, mic_count));
        for bin in 0..grid.retained_bins {
            for m in 0..mic_count {
                data[(bin, m, m)] = Complex64::new(1.0, 0.0);
            }
        }
        CovarianceMatrix {
            data,
            grid: grid.clone(),
        }
    }

    pub fn mic_count(&self) -> usize {
        self.data.dim().1
    }

    /// Largest Hermitian-asymmetry magnitude across all bins.
    pub fn hermitian_defect(&self) -> f64 {
        let (bins, m, _) = self.data.dim();
        let mut worst = 0.0f64;
        for bin in 0..bins {
            for i in 0..m {
                for j in 0..m {
                    let defect = (self.data[(bin, i, j)] - self.data[(bin, j, i)].conj()).norm();
                    worst = worst.max(defect);
                }
            }
        }
        worst
    }

    /// Smallest eigenvalue across all bins.
    pub fn min_eigenvalue(&self) -> f64 {
        let bins = self.data.dim().0;
        (0..bins)
            .map(|bin| {
                let slice = self.data.index_axis(ndarray::Axis(0), bin);
                crate::linalg::hermitian_eigenvalues(slice)[0]
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Channel response `g(jw)` from a source to every microphone.
///
/// Far field: entry `m` is `exp(-j w tau_m)` with `tau_m` the plane-wave
/// delay relative to the reference mic. Near field: entry `m` is
/// `(d_ref/d_m) exp(-j w (d_m - d_ref)/c)`.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    source: &SourceDescriptor,
    grid: &FrequencyGrid,
    model: PropagationModel,
) -> Result<ChannelResponse> {
    steering_vector_in_medium(geometry, source, grid, model, SPEED_OF_SOUND)
}

pub fn steering_vector_in_medium(
    geometry: &ArrayGeometry,
    source: &SourceDescriptor,
    grid: &FrequencyGrid,
    model: PropagationModel,
    speed_of_sound: f64,
) -> Result<ChannelResponse> {
    geometry.validate()?;
    let m = geometry.mic_count();
    let reference = geometry.reference_mic();
    let mut entries = Array2::zeros((grid.retained_bins, m));
    match model {
        PropagationModel::FarField => {
            let u = source.unit_vector()?;
            // Relative delay: mics closer to the source hear the wavefront earlier.
            let delays: Vec<f64> = geometry
                .mics
                .iter()
                .map(|p| {
                    let rel = [p[0] - reference[0], p[1] - reference[1], p[2] - reference[2]];
                    -(rel[0] * u[0] + rel[1] * u[1] + rel[2] * u[2]) / speed_of_sound
                })
                .collect();
            for bin in 0..grid.retained_bins {
                let omega = grid.omega(bin);
                for (mic, tau) in delays.iter().enumerate() {
                    entries[(bin, mic)] = Complex64::from_polar(1.0, -omega * tau);
                }
            }
        }
        PropagationModel::NearField => {
            let point = match source {
                SourceDescriptor::Point { xyz } => *xyz,
                SourceDescriptor::Direction { .. } => {
                    return Err(Error::InvalidArgument(
                        "near-field propagation needs a point, not a direction".into(),
                    ))
                }
            };
            let dists: Vec<f64> = geometry.mics.iter().map(|p| dist(p, &point)).collect();
            for (mic, d) in dists.iter().enumerate() {
                if *d < 1e-6 {
                    return Err(Error::DegenerateGeometry { mic_index: mic });
                }
            }
            let d_ref = dists[geometry.reference_index];
            for bin in 0..grid.retained_bins {
                let omega = grid.omega(bin);
                for (mic, d) in dists.iter().enumerate() {
                    let phase = -omega * (d - d_ref) / speed_of_sound;
                    entries[(bin, mic)] = Complex64::from_polar(d_ref / d, phase);
                }
            }
        }
    }
    Ok(ChannelResponse {
        entries,
        source: *source,
        model,
        grid: grid.clone(),
    })
}

/// Spherically-isotropic diffuse-noise covariance: entry `(i,j)` is
/// `sinc(w d_ij / c)` with unit diagonal.
pub fn diffuse_covariance(geometry: &ArrayGeometry, grid: &FrequencyGrid) -> Result<CovarianceMatrix> {
    diffuse_covariance_in_medium(geometry, grid, SPEED_OF_SOUND)
}

pub fn diffuse_covariance_in_medium(
    geometry: &ArrayGeometry,
    grid: &FrequencyGrid,
    speed_of_sound: f64,
) -> Result<CovarianceMatrix> {
    geometry.validate()?;
    let m = geometry.mic_count();
    let mut data = Array3::zeros((grid.retained_bins, m, m));
    for bin in 0..grid.retained_bins {
        let omega = grid.omega(bin);
        for i in 0..m {
            data[(bin, i, i)] = Complex64::new(1.0, 0.0);
            for j in i + 1..m {
                let d = dist(&geometry.mics[i], &geometry.mics[j]);
                let value = Complex64::new(sinc(omega * d / speed_of_sound), 0.0);
                data[(bin, i, j)] = value;
                data[(bin, j, i)] = value;
            }
        }
    }
    Ok(CovarianceMatrix {
        data,
        grid: grid.clone(),
    })
}

/// Far-field response at a single arbitrary frequency, for analyses that
/// sweep directions off the design grid.
pub fn far_field_response_at(
    geometry: &ArrayGeometry,
    azimuth_deg: f64,
    elevation_deg: f64,
    frequency_hz: f64,
    speed_of_sound: f64,
) -> Vec<Complex64> {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    let u = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
    let reference = geometry.reference_mic();
    let omega = 2.0 * std::f64::consts::PI * frequency_hz;
    geometry
        .mics
        .iter()
        .map(|p| {
            let rel = [p[0] - reference[0], p[1] - reference[1], p[2] - reference[2]];
            let tau = -(rel[0] * u[0] + rel[1] * u[1] + rel[2] * u[2]) / speed_of_sound;
            Complex64::from_polar(1.0, -omega * tau)
        })
        .collect()
}

/// Unnormalized sinc: `sin(x)/x`, 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_geometry(d: f64) -> ArrayGeometry {
        ArrayGeometry::new("pair", vec![[0.0, 0.0, 0.0], [d, 0.0, 0.0]], 0).unwrap()
    }

    fn grid() -> FrequencyGrid {
        FrequencyGrid::default_16k()
    }

    #[test]
    fn single_mic_steering_is_unity() {
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let response = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(123.0),
            &grid(),
            PropagationModel::FarField,
        )
        .unwrap();
        for value in response.entries.iter() {
            assert!((value - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn broadside_pair_has_equal_entries() {
        let geometry = pair_geometry(0.1);
        let response = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(90.0),
            &grid(),
            PropagationModel::FarField,
        )
        .unwrap();
        for bin in 0..response.bin_count() {
            assert!((response.entries[(bin, 0)] - response.entries[(bin, 1)]).norm() < 1e-12);
        }
    }

    #[test]
    fn endfire_pair_phase_matches_hand_computed_delay() {
        // d = 0.343 m at 500 Hz: tau = 1 ms, inter-channel phase = pi.
        let geometry = pair_geometry(0.343);
        let response = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(0.0),
            &grid(),
            PropagationModel::FarField,
        )
        .unwrap();
        let bin = 16; // 500 Hz on the 31.25 Hz grid
        assert!((grid().bin_hz(bin) - 500.0).abs() < 1e-9);
        let phase = (response.entries[(bin, 1)] / response.entries[(bin, 0)]).arg();
        assert!((phase.abs() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn far_field_entries_are_unit_modulus() {
        let geometry = ArrayGeometry::glasses_preset();
        let response = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(37.0),
            &grid(),
            PropagationModel::FarField,
        )
        .unwrap();
        for value in response.entries.iter() {
            assert!((value.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_field_reference_entry_is_unity() {
        let geometry = ArrayGeometry::glasses_preset();
        let response = steering_vector(
            &geometry,
            &SourceDescriptor::Point { xyz: [0.08, 0.0, -0.08] },
            &grid(),
            PropagationModel::NearField,
        )
        .unwrap();
        for bin in [0, 100, 255] {
            let r = response.entries[(bin, geometry.reference_index)];
            assert!((r - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn near_field_rejects_point_on_mic() {
        let geometry = ArrayGeometry::glasses_preset();
        let on_mic = geometry.mics[2];
        let err = steering_vector(
            &geometry,
            &SourceDescriptor::Point { xyz: on_mic },
            &grid(),
            PropagationModel::NearField,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { mic_index: 2 }));
    }

    #[test]
    fn steering_is_continuous_in_direction() {
        let geometry = pair_geometry(0.4999);
        let hi = FrequencyGrid::new(16_000.0, 512, 257).unwrap(); // includes 8 kHz
        let base = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(10.0),
            &hi,
            PropagationModel::FarField,
        )
        .unwrap();
        let nudged = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(10.0 + 1e-6f64.to_degrees()),
            &hi,
            PropagationModel::FarField,
        )
        .unwrap();
        let top = hi.retained_bins - 1;
        assert!((hi.bin_hz(top) - 8000.0).abs() < 1e-9);
        let worst = (0..2)
            .map(|m| (base.entries[(top, m)] - nudged.entries[(top, m)]).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "worst entry change {worst}");
    }

    #[test]
    fn diffuse_covariance_zero_hz_is_all_ones() {
        let geometry = ArrayGeometry::glasses_preset();
        let cov = diffuse_covariance(&geometry, &grid()).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert!((cov.data[(0, i, j)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn diffuse_covariance_sinc_zero_crossing() {
        // d = 0.343 m at 500 Hz: w d / c = pi, so sinc = 0.
        let geometry = pair_geometry(0.343);
        let cov = diffuse_covariance(&geometry, &grid()).unwrap();
        assert!(cov.data[(16, 0, 1)].norm() < 1e-12);
        assert!((cov.data[(16, 0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn diffuse_covariance_is_hermitian_psd() {
        let geometry = ArrayGeometry::glasses_preset();
        let cov = diffuse_covariance(&geometry, &grid()).unwrap();
        assert!(cov.hermitian_defect() < 1e-12);
        assert!(cov.min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn preset_has_seven_mics() {
        let geometry = ArrayGeometry::glasses_preset();
        assert_eq!(geometry.mic_count(), 7);
        geometry.validate().unwrap();
    }

    #[test]
    fn geometry_roundtrip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geometry.json");
        let preset = ArrayGeometry::glasses_preset();
        preset.save(&path).unwrap();
        let loaded = load_geometry(&path).unwrap();
        assert_eq!(loaded, preset);

        let single = dir.path().join("single.json");
        std::fs::write(
            &single,
            r#"{"name":"one","reference_index":0,"mics":[[0.0,0.0,0.0]]}"#,
        )
        .unwrap();
        assert_eq!(load_geometry(&single).unwrap().mic_count(), 1);

        let wide = dir.path().join("wide.json");
        std::fs::write(
            &wide,
            r#"{"name":"wide","reference_index":0,"mics":[[0.0,0.0,0.0],[1.0,0.0,0.0]]}"#,
        )
        .unwrap();
        assert!(matches!(load_geometry(&wide), Err(Error::InvalidGeometry(_))));

        let bad_ref = dir.path().join("badref.json");
        std::fs::write(
            &bad_ref,
            r#"{"name":"bad","reference_index":3,"mics":[[0.0,0.0,0.0]]}"#,
        )
        .unwrap();
        assert!(load_geometry(&bad_ref).is_err());
    }

    #[test]
    fn grid_invariants() {
        let g = FrequencyGrid::default_16k();
        let freqs = g.bin_frequencies_hz();
        assert_eq!(freqs.len(), 256);
        assert!(freqs.windows(2).all(|w| w[1] > w[0]));
        assert!(*freqs.last().unwrap() <= g.nyquist_hz());
        assert!(FrequencyGrid::new(16_000.0, 512, 258).is_err());
        assert!(FrequencyGrid::new(16_000.0, 511, 256).is_err());
        assert!(FrequencyGrid::new(-1.0, 512, 256).is_err());
    }
}
