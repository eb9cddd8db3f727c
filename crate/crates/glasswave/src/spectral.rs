//! STFT analysis/synthesis, time-frequency masks, IPD features, and the
//! composite separation loss.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;

/// Transform parameters. The analysis window is a periodic Hann; synthesis
/// is plain overlap-add, so the window itself must satisfy constant
/// overlap-add at the hop.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub retained_bins: usize,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize, retained_bins: usize) -> Result<Self> {
        if fft_size == 0 || fft_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be a positive even integer, got {fft_size}"
            )));
        }
        if hop == 0 || fft_size % hop != 0 {
            return Err(Error::InvalidArgument(format!(
                "hop {hop} must divide fft_size {fft_size}"
            )));
        }
        if retained_bins == 0 || retained_bins > fft_size / 2 + 1 {
            return Err(Error::InvalidArgument(format!(
                "retained_bins must be in 1..={}",
                fft_size / 2 + 1
            )));
        }
        let config = StftConfig {
            fft_size,
            hop,
            retained_bins,
        };
        let defect = config.cola_defect();
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "window violates constant overlap-add at hop {hop} (defect {defect:.3e})"
            )));
        }
        Ok(config)
    }

    /// 512/256 with 256 retained bins (the Nyquist bin is dropped).
    pub fn default_512() -> Self {
        StftConfig::new(512, 256, 256).expect("default stft config is valid")
    }

    /// Transform matching a design grid, at 50% overlap.
    pub fn for_grid(grid: &crate::geometry::FrequencyGrid) -> Result<Self> {
        StftConfig::new(grid.fft_size, grid.fft_size / 2, grid.retained_bins)
    }

    /// Periodic Hann analysis window.
    pub fn window(&self) -> Vec<f64> {
        (0..self.fft_size)
            .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / self.fft_size as f64).cos()))
            .collect()
    }

    /// Deviation of `sum_m w(n - m hop)` from its mean over one period.
    fn cola_defect(&self) -> f64 {
        let window = self.window();
        let mut sums = vec![0.0f64; self.hop];
        for (n, w) in window.iter().enumerate() {
            sums[n % self.hop] += w;
        }
        let mean = sums.iter().sum::<f64>() / self.hop as f64;
        sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max)
    }

    /// Constant the overlap-added analysis window sums to.
    pub(crate) fn cola_gain(&self) -> f64 {
        let window = self.window();
        let mut sum = 0.0;
        let mut n = 0;
        while n < self.fft_size {
            sum += window[n];
            n += self.hop;
        }
        sum
    }

    pub fn frame_count(&self, samples: usize) -> Result<usize> {
        if samples < self.fft_size {
            return Err(Error::TooShort {
                len: samples,
                min: self.fft_size,
            });
        }
        Ok(1 + (samples - self.fft_size) / self.hop)
    }

    /// Samples covered by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.fft_size
        }
    }
}

/// Complex time-frequency tensor, `[channels x bins x frames]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub sample_rate_hz: f64,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn channel(&self, index: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(ndarray::Axis(0), index)
    }
}

/// Shared FFT plans for one config.
pub(crate) struct StftEngine {
    pub config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftEngine {
    pub fn new(config: &StftConfig) -> StftEngine {
        let mut planner = FftPlanner::new();
        StftEngine {
            config: config.clone(),
            window: config.window(),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        }
    }

    /// Windowed forward transform of the frame starting at `offset`.
    fn analyze_frame(&self, samples: &[f64], offset: usize, out: &mut [Complex64]) {
        let n = self.config.fft_size;
        let mut buffer: Vec<Complex64> = (0..n)
            .map(|j| Complex64::new(samples[offset + j] * self.window[j], 0.0))
            .collect();
        self.forward.process(&mut buffer);
        out.copy_from_slice(&buffer[..self.config.retained_bins]);
    }

    /// Forward transform of an unwindowed frame (adjoint of the overlap-add
    /// synthesis); samples past the end count as zero.
    pub(crate) fn forward_unwindowed(&self, samples: &[f64], offset: usize) -> Vec<Complex64> {
        let n = self.config.fft_size;
        let mut buffer: Vec<Complex64> = (0..n)
            .map(|j| {
                let idx = offset + j;
                let v = if idx < samples.len() { samples[idx] } else { 0.0 };
                Complex64::new(v, 0.0)
            })
            .collect();
        self.forward.process(&mut buffer);
        buffer.truncate(self.config.retained_bins);
        buffer
    }

    /// `v[j] = sum_k q[k] e^{+i 2 pi j k / N}` over the retained bins, no
    /// conjugate inflation and no normalization (adjoint of the windowed
    /// analysis transform).
    pub(crate) fn unnormalized_inverse(&self, bins: &[Complex64]) -> Vec<Complex64> {
        let n = self.config.fft_size;
        let mut full = vec![Complex64::ZERO; n];
        full[..bins.len()].copy_from_slice(bins);
        self.inverse.process(&mut full);
        full
    }

    /// Real time-domain frame for one one-sided spectrum (conjugate-symmetric
    /// inflation, inverse FFT, real part, no normalization).
    pub(crate) fn synthesize_frame(&self, bins: &[Complex64]) -> Vec<f64> {
        let n = self.config.fft_size;
        let mut full = vec![Complex64::ZERO; n];
        full[..bins.len()].copy_from_slice(bins);
        for k in 1..n / 2 {
            let value = if k < bins.len() { bins[k] } else { Complex64::ZERO };
            full[n - k] = value.conj();
        }
        // A complex DC or (dropped) Nyquist component would make the inverse
        // transform complex; taking the real part keeps synthesis R-linear.
        self.inverse.process(&mut full);
        full.iter().map(|v| v.re / n as f64).collect()
    }

    /// Window helper for adjoint paths.
    pub(crate) fn window(&self) -> &[f64] {
        &self.window
    }
}

/// Multichannel STFT of `[channels x samples]` audio.
pub fn stft(
    audio: ArrayView2<f64>,
    config: &StftConfig,
    sample_rate_hz: f64,
) -> Result<Spectrogram> {
    let (channels, samples) = audio.dim();
    if channels == 0 {
        return Err(Error::InvalidArgument("no channels".into()));
    }
    let frames = config.frame_count(samples)?;
    let engine = StftEngine::new(config);
    let mut data = Array3::zeros((channels, config.retained_bins, frames));
    let mut row = vec![Complex64::ZERO; config.retained_bins];
    for ch in 0..channels {
        let channel: Vec<f64> = audio.row(ch).to_vec();
        for frame in 0..frames {
            engine.analyze_frame(&channel, frame * config.hop, &mut row);
            for (bin, value) in row.iter().enumerate() {
                data[(ch, bin, frame)] = *value;
            }
        }
    }
    Ok(Spectrogram {
        data,
        config: config.clone(),
        sample_rate_hz,
    })
}

/// Mono convenience wrapper around [`stft`].
pub fn stft_mono(samples: &[f64], config: &StftConfig, sample_rate_hz: f64) -> Result<Spectrogram> {
    let audio = Array2::from_shape_vec((1, samples.len()), samples.to_vec())
        .expect("shape follows from len");
    stft(audio.view(), config, sample_rate_hz)
}

/// Inverse STFT by plain overlap-add; reconstructs interior samples exactly
/// for content inside the retained band.
pub fn istft(spec: &Spectrogram) -> Array2<f64> {
    let engine = StftEngine::new(&spec.config);
    let (channels, bins, frames) = spec.data.dim();
    let out_len = spec.config.span(frames);
    let gain = spec.config.cola_gain();
    let mut out = Array2::zeros((channels, out_len));
    let mut row = vec![Complex64::ZERO; bins];
    for ch in 0..channels {
        for frame in 0..frames {
            for bin in 0..bins {
                row[bin] = spec.data[(ch, bin, frame)];
            }
            let synth = engine.synthesize_frame(&row);
            let start = frame * spec.config.hop;
            for (j, v) in synth.iter().enumerate() {
                out[(ch, start + j)] += v / gain;
            }
        }
    }
    out
}

/// Mono inverse for single-channel spectrograms.
pub fn istft_mono(spec: &Spectrogram) -> Vec<f64> {
    istft(spec).row(0).to_vec()
}

/// Inter-channel phase differences against a reference channel, wrapped to
/// `(-pi, pi]`; output is `[channels-1 x bins x frames]`.
pub fn ipd_features(spec: &Spectrogram, reference_channel: usize) -> Result<Array3<f64>> {
    let (channels, bins, frames) = spec.data.dim();
    if channels < 2 {
        return Err(Error::InvalidArgument(
            "IPD features need at least two channels".into(),
        ));
    }
    if reference_channel >= channels {
        return Err(Error::InvalidArgument(format!(
            "reference channel {reference_channel} out of range for {channels} channels"
        )));
    }
    let mut out = Array3::zeros((channels - 1, bins, frames));
    let mut pair = 0;
    for ch in 0..channels {
        if ch == reference_channel {
            continue;
        }
        for bin in 0..bins {
            for frame in 0..frames {
                let diff = spec.data[(ch, bin, frame)].arg()
                    - spec.data[(reference_channel, bin, frame)].arg();
                out[(pair, bin, frame)] = wrap_phase(diff);
            }
        }
        pair += 1;
    }
    Ok(out)
}

/// Wraps a phase difference into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let mut w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// Real-valued time-frequency mask in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Mask {
    pub data: Array2<f64>,
}

impl Mask {
    pub fn new(data: Array2<f64>) -> Result<Mask> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument("mask values must lie in [0, 1]".into()));
        }
        Ok(Mask { data })
    }

    pub fn ones(bins: usize, frames: usize) -> Mask {
        Mask {
            data: Array2::from_elem((bins, frames), 1.0),
        }
    }
}

/// Elementwise product of a real mask with one complex channel; phase comes
/// through unchanged.
pub fn apply_mask(channel: ArrayView2<Complex64>, mask: &Mask) -> Result<Array2<Complex64>> {
    if channel.dim() != mask.data.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", channel.dim()),
            got: format!("{:?}", mask.data.dim()),
        });
    }
    let mut out = channel.to_owned();
    for (value, m) in out.iter_mut().zip(mask.data.iter()) {
        *value *= *m;
    }
    Ok(out)
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub stft: f64,
    pub neg_log_si_sdr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            stft: 1.0,
            neg_log_si_sdr: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// Mean absolute time-domain error.
    pub l1: f64,
    /// Mean absolute spectral-magnitude error.
    pub stft: f64,
    /// Negated clamped SI-SDR, dB.
    pub neg_log_si_sdr: f64,
    pub total: f64,
}

/// Composite separation loss: time-domain L1, STFT-magnitude L1, and the
/// negated (clamped) SI-SDR, combined with the given weights.
pub fn separation_loss(
    estimate: &[f64],
    reference: &[f64],
    weights: &LossWeights,
    config: &StftConfig,
    sample_rate_hz: f64,
) -> Result<LossBreakdown> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", reference.len()),
            got: format!("{}", estimate.len()),
        });
    }
    if reference.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("reference signal is all zero".into()));
    }
    let l1 = estimate
        .iter()
        .zip(reference.iter())
        .map(|(e, r)| (e - r).abs())
        .sum::<f64>()
        / estimate.len() as f64;

    let est_spec = stft_mono(estimate, config, sample_rate_hz)?;
    let ref_spec = stft_mono(reference, config, sample_rate_hz)?;
    let count = (est_spec.bins() * est_spec.frames()) as f64;
    let stft_term = est_spec
        .data
        .iter()
        .zip(ref_spec.data.iter())
        .map(|(e, r)| (e.norm() - r.norm()).abs())
        .sum::<f64>()
        / count;

    let neg_log_si_sdr = -metrics::si_sdr(estimate, reference)?;
    let total =
        weights.l1 * l1 + weights.stft * stft_term + weights.neg_log_si_sdr * neg_log_si_sdr;
    Ok(LossBreakdown {
        l1,
        stft: stft_term,
        neg_log_si_sdr,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random multisine with content only at bin-center frequencies of the
    /// retained band, so nothing leaks through the dropped Nyquist bin.
    fn band_interior_signal(len: usize, config: &StftConfig, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.fft_size as f64;
        // Keep one guard bin below the last retained bin: the Hann kernel
        // spreads each component into its immediate neighbors only.
        let max_bin = config.retained_bins.min(config.fft_size / 2) - 2;
        let mut out = vec![0.0; len];
        for _ in 0..40 {
            let bin = rng.random_range(1..=max_bin) as f64;
            let amp: f64 = rng.random_range(0.05..1.0);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            for (i, v) in out.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * bin * i as f64 / n + phase).cos();
            }
        }
        out
    }

    #[test]
    fn config_rejects_non_cola_hop() {
        assert!(StftConfig::new(512, 512, 256).is_err());
        assert!(StftConfig::new(512, 7, 256).is_err());
        StftConfig::new(512, 256, 256).unwrap();
        StftConfig::new(512, 128, 257).unwrap();
    }

    #[test]
    fn round_trip_reconstructs_band_interior_signals() {
        let config = StftConfig::default_512();
        for seed in 0..5 {
            let signal = band_interior_signal(16_000, &config, seed);
            let spec = stft_mono(&signal, &config, 16_000.0).unwrap();
            let rebuilt = istft_mono(&spec);
            let peak = signal.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let worst = (config.fft_size..signal.len() - config.fft_size)
                .map(|i| (signal[i] - rebuilt[i]).abs())
                .fold(0.0, f64::max);
            assert!(worst / peak < 1e-6, "seed {seed}: relative error {}", worst / peak);
        }
    }

    #[test]
    fn full_grid_round_trip_handles_white_noise() {
        // With every bin retained nothing is dropped, so even broadband
        // noise reconstructs to machine precision.
        let config = StftConfig::new(512, 256, 257).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let signal: Vec<f64> = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = stft_mono(&signal, &config, 16_000.0).unwrap();
        let rebuilt = istft_mono(&spec);
        let worst = (config.fft_size..signal.len() - config.fft_size)
            .map(|i| (signal[i] - rebuilt[i]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let config = StftConfig::default_512();
        let spec = stft_mono(&vec![0.0; 4096], &config, 16_000.0).unwrap();
        assert!(spec.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let config = StftConfig::default_512();
        assert!(matches!(
            stft_mono(&vec![0.0; 100], &config, 16_000.0),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn bin_centered_sine_concentrates_in_three_bin_cluster() {
        // The periodic Hann kernel spreads a bin-centered sine over exactly
        // three bins with amplitude ratio 0.5 : 0.25, so the center bin holds
        // 2/3 of the frame energy and the cluster holds all of it.
        let config = StftConfig::default_512();
        let bin = 40usize;
        let signal: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * bin as f64 * i as f64 / 512.0).sin())
            .collect();
        let spec = stft_mono(&signal, &config, 16_000.0).unwrap();
        let frame = 3;
        let total: f64 = (0..spec.bins()).map(|b| spec.data[(0, b, frame)].norm_sqr()).sum();
        let center = spec.data[(0, bin, frame)].norm_sqr();
        let cluster = center
            + spec.data[(0, bin - 1, frame)].norm_sqr()
            + spec.data[(0, bin + 1, frame)].norm_sqr();
        assert!(cluster / total > 0.9999);
        assert!((center / total - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn parseval_holds_for_band_interior_frames() {
        let config = StftConfig::default_512();
        let signal = band_interior_signal(8192, &config, 3);
        let spec = stft_mono(&signal, &config, 16_000.0).unwrap();
        let window = config.window();
        for frame in [0usize, 5, 11] {
            let offset = frame * config.hop;
            let time_energy: f64 = (0..config.fft_size)
                .map(|j| (signal[offset + j] * window[j]).powi(2))
                .sum();
            let mut spec_energy = spec.data[(0, 0, frame)].norm_sqr();
            for bin in 1..spec.bins() {
                spec_energy += 2.0 * spec.data[(0, bin, frame)].norm_sqr();
            }
            spec_energy /= config.fft_size as f64;
            let rel = (spec_energy - time_energy).abs() / time_energy;
            assert!(rel < 1e-6, "frame {frame}: relative defect {rel}");
        }
    }

    #[test]
    fn ipd_of_duplicated_channel_is_zero() {
        let config = StftConfig::default_512();
        let signal = band_interior_signal(4096, &config, 9);
        let mut audio = Array2::zeros((2, signal.len()));
        for (i, v) in signal.iter().enumerate() {
            audio[(0, i)] = *v;
            audio[(1, i)] = *v;
        }
        let spec = stft(audio.view(), &config, 16_000.0).unwrap();
        let ipd = ipd_features(&spec, 0).unwrap();
        assert_eq!(ipd.dim().0, 1);
        assert!(ipd.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ipd_matches_shift_theorem_for_delayed_impulse() {
        // An impulse has a flat spectrum; delaying it by D samples rotates
        // every bin by exactly -2 pi k D / N, window effects cancel in phase.
        let config = StftConfig::default_512();
        let delay = 7usize;
        let center = 600usize;
        let mut audio = Array2::zeros((2, 2048));
        audio[(0, center)] = 1.0;
        audio[(1, center + delay)] = 1.0;
        let spec = stft(audio.view(), &config, 16_000.0).unwrap();
        let ipd = ipd_features(&spec, 0).unwrap();
        let frame = 1; // covers samples 256..768
        for bin in 1..spec.bins() {
            let expected = wrap_phase(-2.0 * PI * bin as f64 * delay as f64 / 512.0);
            let got = ipd[(0, bin, frame)];
            let diff = wrap_phase(got - expected).abs();
            assert!(diff < 1e-3, "bin {bin}: got {got}, expected {expected}");
        }
    }

    #[test]
    fn ipd_rejects_single_channel() {
        let config = StftConfig::default_512();
        let spec = stft_mono(&vec![0.1; 2048], &config, 16_000.0).unwrap();
        assert!(ipd_features(&spec, 0).is_err());
    }

    #[test]
    fn ipd_range_is_half_open() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!(wrap_phase(3.0 * PI - 1e-9) <= PI);
        for x in [-10.0, -3.2, 0.0, 3.2, 10.0, 100.0] {
            let w = wrap_phase(x);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn mask_identity_zero_and_half() {
        let config = StftConfig::default_512();
        let signal = band_interior_signal(4096, &config, 5);
        let spec = stft_mono(&signal, &config, 16_000.0).unwrap();
        let channel = spec.channel(0);

        let ones = Mask::ones(spec.bins(), spec.frames());
        let same = apply_mask(channel, &ones).unwrap();
        assert_eq!(same, channel.to_owned());

        let zeros = Mask::new(Array2::zeros((spec.bins(), spec.frames()))).unwrap();
        let nothing = apply_mask(channel, &zeros).unwrap();
        assert!(nothing.iter().all(|v| v.norm() == 0.0));

        let half = Mask::new(Array2::from_elem((spec.bins(), spec.frames()), 0.5)).unwrap();
        let halved = apply_mask(channel, &half).unwrap();
        for (a, b) in halved.iter().zip(channel.iter()) {
            assert!((a.norm() - 0.5 * b.norm()).abs() < 1e-12);
            if b.norm() > 1e-12 {
                assert!((a.arg() - b.arg()).abs() < 1e-12);
            }
        }

        let bad = Mask::new(Array2::from_elem((2, 2), 1.5));
        assert!(bad.is_err());
        let narrow = Mask::ones(3, 3);
        assert!(apply_mask(channel, &narrow).is_err());
    }

    #[test]
    fn loss_of_identical_signals_is_zero_terms_and_floor_si_sdr() {
        let config = StftConfig::default_512();
        let signal = band_interior_signal(4096, &config, 21);
        let loss = separation_loss(&signal, &signal, &LossWeights::default(), &config, 16_000.0)
            .unwrap();
        assert_eq!(loss.l1, 0.0);
        assert_eq!(loss.stft, 0.0);
        assert_eq!(loss.neg_log_si_sdr, -metrics::SI_SDR_CLAMP_DB);
        assert_eq!(loss.total, loss.neg_log_si_sdr);
    }

    #[test]
    fn loss_scale_term_behaviour() {
        let config = StftConfig::default_512();
        let signal = band_interior_signal(4096, &config, 22);
        let doubled: Vec<f64> = signal.iter().map(|v| v * 2.0).collect();
        let loss = separation_loss(&doubled, &signal, &LossWeights::default(), &config, 16_000.0)
            .unwrap();
        assert!(loss.l1 > 0.0);
        assert!(loss.stft > 0.0);
        assert_eq!(loss.neg_log_si_sdr, -metrics::SI_SDR_CLAMP_DB);
        let expected = loss.l1 + loss.stft + loss.neg_log_si_sdr;
        assert_eq!(loss.total, expected);
    }

    #[test]
    fn loss_si_sdr_term_matches_hand_case() {
        // reference [1, 0, ...], estimate [1, 1, 0, ...]: SI-SDR is 0 dB.
        let mut reference = vec![0.0; 1024];
        reference[0] = 1.0;
        let mut estimate = vec![0.0; 1024];
        estimate[0] = 1.0;
        estimate[1] = 1.0;
        let config = StftConfig::default_512();
        let loss =
            separation_loss(&estimate, &reference, &LossWeights::default(), &config, 16_000.0)
                .unwrap();
        assert!(loss.neg_log_si_sdr.abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_zero_reference_and_length_mismatch() {
        let config = StftConfig::default_512();
        let zeros = vec![0.0; 1024];
        let ones = vec![1.0; 1024];
        assert!(separation_loss(&ones, &zeros, &LossWeights::default(), &config, 16_000.0).is_err());
        assert!(
            separation_loss(&ones[..512], &ones, &LossWeights::default(), &config, 16_000.0)
                .is_err()
        );
    }
}
