//! Fixed-beamformer design, beamformer banks, and their analyses.

use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    diffuse_covariance, steering_vector, ArrayGeometry, ChannelResponse, CovarianceMatrix,
    FrequencyGrid, PropagationModel, SourceDescriptor,
};
use crate::linalg;
use crate::spectral::Spectrogram;

mod nlcmv;
mod pattern;

pub use nlcmv::{design_nlcmv, NlcmvDiagnostics, NlcmvProblem, NlcmvSolverConfig, PointPsd, PointSource};
pub use pattern::{beam_pattern, BeamPattern, BEAM_PATTERN_FLOOR_DB};

/// Default diagonal loading applied before every matrix inverse,
/// as a fraction of the mean diagonal.
pub const DEFAULT_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Designer {
    Das,
    Mvdr,
    Nlcmv,
    Refined,
}

/// Per-frequency complex weight vector for one steering direction.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    /// `[bins x mics]`.
    pub weights: Array2<Complex64>,
    pub steer: SourceDescriptor,
    pub steer_model: PropagationModel,
    pub designer: Designer,
    pub grid: FrequencyGrid,
}

impl BeamformerWeights {
    pub fn mic_count(&self) -> usize {
        self.weights.ncols()
    }

    pub fn bin_count(&self) -> usize {
        self.weights.nrows()
    }

    /// Largest `|h^H g - 1|` across bins against the given target response.
    pub fn distortionless_defect(&self, target: &ChannelResponse) -> f64 {
        let mut worst = 0.0f64;
        for bin in 0..self.bin_count() {
            let resp = linalg::cdot(self.weights.row(bin), target.entries.row(bin));
            worst = worst.max((resp - Complex64::new(1.0, 0.0)).norm());
        }
        worst
    }
}

/// Delay-and-sum: `h = g / (g^H g)`.
pub fn design_das(target: &ChannelResponse) -> Result<BeamformerWeights> {
    let bins = target.bin_count();
    let m = target.mic_count();
    let mut weights = Array2::zeros((bins, m));
    for bin in 0..bins {
        let g = target.entries.row(bin);
        let energy: f64 = g.iter().map(|v| v.norm_sqr()).sum();
        if energy < 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "zero channel response at bin {bin}"
            )));
        }
        for mic in 0..m {
            weights[(bin, mic)] = g[mic] / energy;
        }
    }
    Ok(BeamformerWeights {
        weights,
        steer: target.source,
        steer_model: target.model,
        designer: Designer::Das,
        grid: target.grid.clone(),
    })
}

/// Minimum variance distortionless response on the given noise covariance:
/// `h = P^-1 g / (g^H P^-1 g)` with `P = cov + loading * (trace/M) * I`.
pub fn design_mvdr(
    target: &ChannelResponse,
    noise_cov: &CovarianceMatrix,
    loading: f64,
) -> Result<BeamformerWeights> {
    if loading < 0.0 || !loading.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "loading must be nonnegative, got {loading}"
        )));
    }
    let bins = target.bin_count();
    let m = target.mic_count();
    if noise_cov.mic_count() != m || noise_cov.data.dim().0 != bins {
        return Err(Error::ShapeMismatch {
            expected: format!("covariance of {bins} bins x {m} mics"),
            got: format!(
                "{} bins x {} mics",
                noise_cov.data.dim().0,
                noise_cov.mic_count()
            ),
        });
    }
    let defect = noise_cov.hermitian_defect();
    if defect > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "noise covariance is not Hermitian (defect {defect:.3e})"
        )));
    }
    let mut weights = Array2::zeros((bins, m));
    for bin in 0..bins {
        let g = target.entries.row(bin);
        let mut phi = noise_cov.data.index_axis(ndarray::Axis(0), bin).to_owned();
        linalg::diagonal_load(&mut phi, loading);
        let x = linalg::solve(phi.view(), g)
            .map_err(|e| Error::NumericalFailure(format!("mvdr bin {bin}: {e}")))?;
        let denom = linalg::cdot(g, x.view());
        if denom.norm() < 1e-300 {
            return Err(Error::NumericalFailure(format!(
                "mvdr bin {bin}: distortionless normalization collapsed"
            )));
        }
        for mic in 0..m {
            weights[(bin, mic)] = x[mic] / denom;
        }
    }
    Ok(BeamformerWeights {
        weights,
        steer: target.source,
        steer_model: target.model,
        designer: Designer::Mvdr,
        grid: target.grid.clone(),
    })
}

/// White noise gain `10 log10(|h^H g|^2 / ||h||^2)` per bin, dB.
pub fn white_noise_gain(weights: &BeamformerWeights, target: &ChannelResponse) -> Result<Vec<f64>> {
    if weights.bin_count() != target.bin_count() || weights.mic_count() != target.mic_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins x {} mics", weights.bin_count(), weights.mic_count()),
            got: format!("{} bins x {} mics", target.bin_count(), target.mic_count()),
        });
    }
    let mut out = Vec::with_capacity(weights.bin_count());
    for bin in 0..weights.bin_count() {
        let h = weights.weights.row(bin);
        let norm_sq = linalg::norm_sq(h);
        if norm_sq < 1e-300 {
            return Err(Error::InvalidArgument(format!("zero-norm weights at bin {bin}")));
        }
        let gain = linalg::cdot(h, target.entries.row(bin)).norm_sqr() / norm_sq;
        out.push(10.0 * gain.log10());
    }
    Ok(out)
}

/// How each bank channel is designed.
#[derive(Debug, Clone)]
pub enum DesignerSpec {
    Das,
    Mvdr {
        loading: f64,
    },
    Nlcmv {
        /// Null directions and their objective weights.
        nulls: Vec<(SourceDescriptor, f64)>,
        point_psd: PointPsd,
        solver: NlcmvSolverConfig,
    },
}

impl DesignerSpec {
    pub fn mvdr_default() -> Self {
        DesignerSpec::Mvdr {
            loading: DEFAULT_LOADING,
        }
    }

    pub fn nlcmv_default() -> Self {
        DesignerSpec::Nlcmv {
            nulls: vec![],
            point_psd: PointPsd::default(),
            solver: NlcmvSolverConfig::default(),
        }
    }
}

/// Provenance carried by refined banks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RefinementProvenance {
    pub seed: u64,
    pub scenes: Vec<String>,
    pub iterations: usize,
    pub step_size: f64,
    pub loss_weights: [f64; 3],
}

/// The K+1-channel front-end: channel 0 steers at the wearer's mouth,
/// channels 1..=K sweep the horizon at evenly spaced azimuths.
#[derive(Debug, Clone)]
pub struct BeamformerBank {
    pub k: usize,
    pub channels: Vec<BeamformerWeights>,
    pub geometry: ArrayGeometry,
    pub grid: FrequencyGrid,
    pub provenance: Option<RefinementProvenance>,
}

impl BeamformerBank {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn mic_count(&self) -> usize {
        self.geometry.mic_count()
    }

    /// Steered azimuths of the horizontal channels, degrees.
    pub fn horizontal_azimuths(&self) -> Vec<f64> {
        (0..self.k).map(|k| 360.0 * k as f64 / self.k as f64).collect()
    }

    /// Short label like `bf-13-mvdr` for reports.
    pub fn label(&self) -> String {
        let designer = match self.channels[0].designer {
            Designer::Das => "das",
            Designer::Mvdr => "mvdr",
            Designer::Nlcmv => "nlcmv",
            Designer::Refined => "refined",
        };
        format!("bf-{}-{designer}", self.channel_count())
    }
}

/// Designs the mouth beam plus `k` horizontal beams.
pub fn design_bank(
    geometry: &ArrayGeometry,
    grid: &FrequencyGrid,
    k: usize,
    mouth: &SourceDescriptor,
    designer: &DesignerSpec,
) -> Result<BeamformerBank> {
    if k < 1 {
        return Err(Error::InvalidArgument("bank needs K >= 1 horizontal steers".into()));
    }
    geometry.validate()?;
    let mut steers = Vec::with_capacity(k + 1);
    steers.push(*mouth);
    for index in 0..k {
        steers.push(SourceDescriptor::azimuth(360.0 * index as f64 / k as f64));
    }

    let diffuse = match designer {
        DesignerSpec::Das => None,
        _ => Some(diffuse_covariance(geometry, grid)?),
    };

    let mut channels = Vec::with_capacity(k + 1);
    for (channel, steer) in steers.iter().enumerate() {
        let design = design_channel(geometry, grid, steer, designer, diffuse.as_ref()).map_err(
            |source| Error::BankChannel {
                channel,
                source: Box::new(source),
            },
        )?;
        channels.push(design);
    }

    Ok(BeamformerBank {
        k,
        channels,
        geometry: geometry.clone(),
        grid: grid.clone(),
        provenance: None,
    })
}

fn design_channel(
    geometry: &ArrayGeometry,
    grid: &FrequencyGrid,
    steer: &SourceDescriptor,
    designer: &DesignerSpec,
    diffuse: Option<&CovarianceMatrix>,
) -> Result<BeamformerWeights> {
    let target = steering_vector(geometry, steer, grid, steer.natural_model())?;
    match designer {
        DesignerSpec::Das => design_das(&target),
        DesignerSpec::Mvdr { loading } => {
            design_mvdr(&target, diffuse.expect("diffuse built for mvdr"), *loading)
        }
        DesignerSpec::Nlcmv {
            nulls,
            point_psd,
            solver,
        } => {
            let point_sources = nulls
                .iter()
                .map(|(source, weight)| {
                    Ok(PointSource {
                        response: steering_vector(geometry, source, grid, source.natural_model())?,
                        weight: *weight,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let problem = NlcmvProblem {
                target,
                diffuse_cov: diffuse.expect("diffuse built for nlcmv").clone(),
                point_sources,
                point_psd: point_psd.clone(),
            };
            Ok(design_nlcmv(&problem, solver)?.0)
        }
    }
}

/// Runs every bank channel over a multichannel spectrogram:
/// output bin `(k, w, t)` is `h_k(jw)^H x(w, t)`.
pub fn apply_bank(bank: &BeamformerBank, input: &Spectrogram) -> Result<Spectrogram> {
    let (channels, bins, frames) = input.data.dim();
    if channels != bank.mic_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input channels", bank.mic_count()),
            got: format!("{channels}"),
        });
    }
    if bins != bank.grid.retained_bins
        || input.config.fft_size != bank.grid.fft_size
        || input.sample_rate_hz != bank.grid.sample_rate_hz
    {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "spectrogram on the bank grid ({} bins, fft {}, {} Hz)",
                bank.grid.retained_bins, bank.grid.fft_size, bank.grid.sample_rate_hz
            ),
            got: format!(
                "{bins} bins, fft {}, {} Hz",
                input.config.fft_size, input.sample_rate_hz
            ),
        });
    }
    let mut out = Array3::zeros((bank.channel_count(), bins, frames));
    for (index, channel) in bank.channels.iter().enumerate() {
        for bin in 0..bins {
            let h = channel.weights.row(bin);
            for frame in 0..frames {
                let mut acc = Complex64::ZERO;
                for mic in 0..channels {
                    acc += h[mic].conj() * input.data[(mic, bin, frame)];
                }
                out[(index, bin, frame)] = acc;
            }
        }
    }
    Ok(Spectrogram {
        data: out,
        config: input.config.clone(),
        sample_rate_hz: input.sample_rate_hz,
    })
}

// --- bank file format -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BankFile {
    format: String,
    k: usize,
    grid: FrequencyGrid,
    geometry: ArrayGeometry,
    channels: Vec<ChannelFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<RefinementProvenance>,
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    steer: SourceDescriptor,
    steer_model: PropagationModel,
    designer: Designer,
    /// `[bins][mics]` of `[re, im]` doubles.
    weights: Vec<Vec<[f64; 2]>>,
}

pub fn save_bank(bank: &BeamformerBank, path: impl AsRef<Path>) -> Result<()> {
    let file = BankFile {
        format: "glasswave-bank-v1".into(),
        k: bank.k,
        grid: bank.grid.clone(),
        geometry: bank.geometry.clone(),
        channels: bank
            .channels
            .iter()
            .map(|c| ChannelFile {
                steer: c.steer,
                steer_model: c.steer_model,
                designer: c.designer,
                weights: (0..c.bin_count())
                    .map(|bin| {
                        c.weights
                            .row(bin)
                            .iter()
                            .map(|v| [v.re, v.im])
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
        provenance: bank.provenance.clone(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::file(path.as_ref(), e))
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<BeamformerBank> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
    let file: BankFile = serde_json::from_str(&text)?;
    if file.format != "glasswave-bank-v1" {
        return Err(Error::InvalidArgument(format!(
            "unsupported bank format {:?}",
            file.format
        )));
    }
    file.geometry.validate()?;
    let m = file.geometry.mic_count();
    let bins = file.grid.retained_bins;
    let mut channels = Vec::with_capacity(file.channels.len());
    for (index, channel) in file.channels.iter().enumerate() {
        if channel.weights.len() != bins || channel.weights.iter().any(|row| row.len() != m) {
            return Err(Error::ShapeMismatch {
                expected: format!("channel {index}: {bins} bins x {m} mics"),
                got: format!("{} bins", channel.weights.len()),
            });
        }
        let mut weights = Array2::zeros((bins, m));
        for (bin, row) in channel.weights.iter().enumerate() {
            for (mic, value) in row.iter().enumerate() {
                weights[(bin, mic)] = Complex64::new(value[0], value[1]);
            }
        }
        channels.push(BeamformerWeights {
            weights,
            steer: channel.steer,
            steer_model: channel.steer_model,
            designer: channel.designer,
            grid: file.grid.clone(),
        });
    }
    if channels.len() != file.k + 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels for K={}", file.k + 1, file.k),
            got: format!("{}", channels.len()),
        });
    }
    Ok(BeamformerBank {
        k: file.k,
        channels,
        geometry: file.geometry,
        grid: file.grid,
        provenance: file.provenance,
    })
}
