//! Azimuth sweeps of beamformer gain at a fixed frequency.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{far_field_response_at, ArrayGeometry, SPEED_OF_SOUND};

use super::BeamformerWeights;

/// Gains below this are clamped so the tables stay finite.
pub const BEAM_PATTERN_FLOOR_DB: f64 = -80.0;

#[derive(Debug, Clone)]
pub struct BeamPattern {
    pub frequency_hz: f64,
    pub azimuth_deg: Vec<f64>,
    pub gain_db: Vec<f64>,
}

impl BeamPattern {
    /// Gain at the grid azimuth closest to `azimuth_deg`.
    pub fn gain_near(&self, azimuth_deg: f64) -> f64 {
        let target = azimuth_deg.rem_euclid(360.0);
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, az) in self.azimuth_deg.iter().enumerate() {
            let d = (az - target).abs().min(360.0 - (az - target).abs());
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        self.gain_db[best]
    }

    /// Tab-separated `azimuth_deg\tgain_db` rows with a header line.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# frequency_hz\t{}", self.frequency_hz)?;
        writeln!(out, "azimuth_deg\tgain_db")?;
        for (az, gain) in self.azimuth_deg.iter().zip(self.gain_db.iter()) {
            writeln!(out, "{az:.3}\t{gain:.6}")?;
        }
        Ok(())
    }
}

/// Interpolates the per-bin weights at an arbitrary frequency on the grid.
pub(crate) fn weights_at_frequency(
    weights: &BeamformerWeights,
    frequency_hz: f64,
) -> Result<Vec<Complex64>> {
    let grid = &weights.grid;
    let position = frequency_hz * grid.fft_size as f64 / grid.sample_rate_hz;
    let top = (grid.retained_bins - 1) as f64;
    if !(0.0..=top).contains(&position) {
        return Err(Error::InvalidArgument(format!(
            "frequency {frequency_hz} Hz is outside the design grid (0..={:.1} Hz)",
            grid.bin_hz(grid.retained_bins - 1)
        )));
    }
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    let t = position - lo as f64;
    Ok((0..weights.mic_count())
        .map(|mic| {
            let a = weights.weights[(lo, mic)];
            let b = weights.weights[(hi, mic)];
            a * (1.0 - t) + b * t
        })
        .collect())
}

/// Far-field gain `20 log10 |h^H g(theta)|` over the horizontal plane.
pub fn beam_pattern(
    weights: &BeamformerWeights,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    azimuth_step_deg: f64,
) -> Result<BeamPattern> {
    if !(azimuth_step_deg > 0.0) || azimuth_step_deg > 360.0 {
        return Err(Error::InvalidArgument(format!(
            "azimuth step must be in (0, 360], got {azimuth_step_deg}"
        )));
    }
    if geometry.mic_count() != weights.mic_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mics", weights.mic_count()),
            got: format!("{}", geometry.mic_count()),
        });
    }
    let h = weights_at_frequency(weights, frequency_hz)?;
    let mut azimuth_deg = Vec::new();
    let mut gain_db = Vec::new();
    let steps = (360.0 / azimuth_step_deg).round() as usize;
    for i in 0..steps {
        let az = i as f64 * azimuth_step_deg;
        azimuth_deg.push(az);
        gain_db.push(gain_at(&h, geometry, az, 0.0, frequency_hz));
    }
    Ok(BeamPattern {
        frequency_hz,
        azimuth_deg,
        gain_db,
    })
}

/// Gain of a fixed weight vector toward one far-field direction, dB.
pub fn gain_at(
    h: &[Complex64],
    geometry: &ArrayGeometry,
    azimuth_deg: f64,
    elevation_deg: f64,
    frequency_hz: f64,
) -> f64 {
    let g = far_field_response_at(geometry, azimuth_deg, elevation_deg, frequency_hz, SPEED_OF_SOUND);
    let response: Complex64 = h.iter().zip(g.iter()).map(|(w, v)| w.conj() * v).sum();
    let db = 20.0 * response.norm().log10();
    db.max(BEAM_PATTERN_FLOOR_DB)
}
