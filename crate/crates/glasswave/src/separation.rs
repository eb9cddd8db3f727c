//! Mask-based directional separation over the beamformed front-end, and
//! gradient refinement of the bank weights against the separation loss.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamforming::{apply_bank, BeamformerBank, Designer};
use crate::error::{Error, Result};
use crate::metrics;
use crate::scene::SceneAudio;
use crate::spectral::{
    istft_mono, stft, LossWeights, Mask, Spectrogram, StftConfig, StftEngine,
};

/// Regularizer in the oracle-mask denominator.
pub const ORACLE_MASK_EPSILON: f64 = 1e-8;

/// Where the wearer/partner masks come from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// Magnitude-ratio masks computed from the scene's ground-truth stems.
    Oracle,
    Provided { wearer: Mask, partner: Mask },
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub wearer_estimate: Vec<f64>,
    pub partner_estimate: Vec<f64>,
    pub wearer_mask: Mask,
    pub partner_mask: Mask,
    pub bank_label: String,
}

/// Magnitude-ratio mask `|T| / (|T| + |I| + eps)` on the reference channel.
/// The mixture spectrogram fixes the expected shape.
pub fn oracle_mask(
    mix_ref: ArrayView2<Complex64>,
    target_ref: ArrayView2<Complex64>,
    interferer_ref: ArrayView2<Complex64>,
) -> Result<Mask> {
    if target_ref.dim() != mix_ref.dim() || interferer_ref.dim() != mix_ref.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", mix_ref.dim()),
            got: format!("{:?} / {:?}", target_ref.dim(), interferer_ref.dim()),
        });
    }
    let mut data = Array2::zeros(mix_ref.dim());
    for ((value, t), i) in data.iter_mut().zip(target_ref.iter()).zip(interferer_ref.iter()) {
        *value = t.norm() / (t.norm() + i.norm() + ORACLE_MASK_EPSILON);
    }
    Mask::new(data)
}

/// Beamforms one bank channel over a multichannel spectrogram. This is the
/// same per-channel kernel [`apply_bank`] runs for every channel.
fn apply_channel(weights: &Array2<Complex64>, spec: &Spectrogram) -> Array2<Complex64> {
    let (channels, bins, frames) = spec.data.dim();
    let mut out = Array2::zeros((bins, frames));
    for bin in 0..bins {
        for frame in 0..frames {
            let mut acc = Complex64::ZERO;
            for mic in 0..channels {
                acc += weights[(bin, mic)].conj() * spec.data[(mic, bin, frame)];
            }
            out[(bin, frame)] = acc;
        }
    }
    out
}

fn fit_length(mut samples: Vec<f64>, len: usize) -> Vec<f64> {
    samples.resize(len, 0.0);
    samples
}

fn mask_times(mask: &Mask, spec: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = spec.clone();
    for (v, m) in out.iter_mut().zip(mask.data.iter()) {
        *v *= *m;
    }
    out
}

/// Runs the separation pipeline on one scene: bank the mixture, take banked
/// channel 0 as the reference spectrogram, mask it for wearer and partner,
/// and invert back to waveforms of the mixture's length.
pub fn separate(
    bank: &BeamformerBank,
    scene: &SceneAudio,
    mask_source: &MaskSource,
) -> Result<SeparationResult> {
    if scene.channels() != bank.mic_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", bank.mic_count()),
            got: format!("{}", scene.channels()),
        });
    }
    if (scene.sample_rate_hz - bank.grid.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::SampleRateMismatch {
            left: scene.sample_rate_hz,
            right: bank.grid.sample_rate_hz,
        });
    }
    let config = StftConfig::for_grid(&bank.grid)?;
    let banked = apply_bank(bank, &stft(scene.mixture.view(), &config, scene.sample_rate_hz)?)?;
    let reference = banked.channel(0).to_owned();

    let (wearer_mask, partner_mask) = match mask_source {
        MaskSource::Provided { wearer, partner } => {
            if wearer.data.dim() != reference.dim() || partner.data.dim() != reference.dim() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", reference.dim()),
                    got: format!("{:?} / {:?}", wearer.data.dim(), partner.data.dim()),
                });
            }
            (wearer.clone(), partner.clone())
        }
        MaskSource::Oracle => {
            let channel0 = &bank.channels[0].weights;
            let wearer_banked = apply_channel(
                channel0,
                &stft(scene.stems.wearer.view(), &config, scene.sample_rate_hz)?,
            );
            let partner_banked = apply_channel(
                channel0,
                &stft(scene.stems.partner.view(), &config, scene.sample_rate_hz)?,
            );
            let wearer_interferer = &reference - &wearer_banked;
            let partner_interferer = &reference - &partner_banked;
            (
                oracle_mask(reference.view(), wearer_banked.view(), wearer_interferer.view())?,
                oracle_mask(reference.view(), partner_banked.view(), partner_interferer.view())?,
            )
        }
    };

    let synthesize = |mask: &Mask| -> Result<Vec<f64>> {
        let masked = crate::spectral::apply_mask(reference.view(), mask)?;
        let (bins, frames) = masked.dim();
        let spec = Spectrogram {
            data: masked.into_shape_with_order((1, bins, frames)).expect("mono reshape"),
            config: config.clone(),
            sample_rate_hz: scene.sample_rate_hz,
        };
        Ok(fit_length(istft_mono(&spec), scene.len()))
    };

    Ok(SeparationResult {
        wearer_estimate: synthesize(&wearer_mask)?,
        partner_estimate: synthesize(&partner_mask)?,
        wearer_mask,
        partner_mask,
        bank_label: bank.label(),
    })
}

/// Oracle-separates every scene of a rendered dataset, writing mono
/// `wearer.wav` / `partner.wav` estimates under `out_dir/<rel_path>/`.
pub fn separate_dataset(
    bank: &BeamformerBank,
    dataset_dir: impl AsRef<std::path::Path>,
    out_dir: impl AsRef<std::path::Path>,
) -> Result<usize> {
    use rayon::prelude::*;

    let dataset_dir = dataset_dir.as_ref();
    let out_dir = out_dir.as_ref();
    let manifest = crate::scene::load_dataset_manifest(dataset_dir.join("dataset.json"))?;
    manifest
        .scenes
        .par_iter()
        .map(|entry| -> Result<()> {
            let scene = crate::scene::load_scene_audio(dataset_dir.join(&entry.rel_path))?;
            let result = separate(bank, &scene, &MaskSource::Oracle)?;
            let scene_out = out_dir.join(&entry.rel_path);
            std::fs::create_dir_all(&scene_out).map_err(|e| Error::file(&scene_out, e))?;
            let write_mono = |name: &str, samples: &[f64]| -> Result<()> {
                let data = Array2::from_shape_vec((1, samples.len()), samples.to_vec())
                    .expect("mono shape");
                crate::wav::write_wav(scene_out.join(name), data.view(), scene.sample_rate_hz)
            };
            write_mono("wearer.wav", &result.wearer_estimate)?;
            write_mono("partner.wav", &result.partner_estimate)?;
            Ok(())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(manifest.scenes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    /// Central differences over every weight component; only sensible for
    /// toy problems.
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub loss_weights: LossWeights,
    pub gradient_mode: GradientMode,
    /// Central-difference half step for `FiniteDifference` mode.
    pub fd_step: f64,
    /// Step halvings tried before an iteration is declared a no-op.
    pub max_backtracks: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            step_size: 1e-3,
            iterations: 50,
            loss_weights: LossWeights::default(),
            gradient_mode: GradientMode::Analytic,
            fd_step: 1e-5,
            max_backtracks: 12,
        }
    }
}

/// Per-scene tensors that do not change while weights move.
struct SceneCache {
    mixture_spec: Spectrogram,
    wearer_spec: Spectrogram,
    partner_spec: Spectrogram,
    wearer_ref: Vec<f64>,
    partner_ref: Vec<f64>,
    len: usize,
}

impl SceneCache {
    fn build(scene: &SceneAudio, config: &StftConfig, reference_index: usize) -> Result<SceneCache> {
        Ok(SceneCache {
            mixture_spec: stft(scene.mixture.view(), config, scene.sample_rate_hz)?,
            wearer_spec: stft(scene.stems.wearer.view(), config, scene.sample_rate_hz)?,
            partner_spec: stft(scene.stems.partner.view(), config, scene.sample_rate_hz)?,
            wearer_ref: scene.stems.wearer.row(reference_index).to_vec(),
            partner_ref: scene.stems.partner.row(reference_index).to_vec(),
            len: scene.len(),
        })
    }
}

/// Loss of one scene under the given channel-0 weights, with the masks the
/// oracle would produce for those weights.
fn scene_loss(
    cache: &SceneCache,
    weights0: &Array2<Complex64>,
    loss_weights: &LossWeights,
    engine: &StftEngine,
) -> Result<f64> {
    let (reference, masks) = banked_and_masks(cache, weights0);
    let mut total = 0.0;
    for (mask, target_ref) in [
        (&masks.0, &cache.wearer_ref),
        (&masks.1, &cache.partner_ref),
    ] {
        let masked = mask_times(mask, &reference);
        let estimate = fit_length(synthesize_masked(engine, &masked), cache.len);
        let loss = crate::spectral::separation_loss(
            &estimate,
            target_ref,
            loss_weights,
            &engine.config,
            cache.mixture_spec.sample_rate_hz,
        )?;
        total += loss.total;
    }
    if !total.is_finite() {
        return Err(Error::NumericalFailure("non-finite separation loss".into()));
    }
    Ok(total)
}

/// Overlap-add synthesis of a single masked channel.
fn synthesize_masked(engine: &StftEngine, masked: &Array2<Complex64>) -> Vec<f64> {
    let (bins, frames) = masked.dim();
    let config = &engine.config;
    let mut out = vec![0.0; config.span(frames)];
    let gain = config.cola_gain();
    let mut row = vec![Complex64::ZERO; bins];
    for frame in 0..frames {
        for bin in 0..bins {
            row[bin] = masked[(bin, frame)];
        }
        let synth = engine.synthesize_frame(&row);
        let start = frame * config.hop;
        for (j, v) in synth.iter().enumerate() {
            out[start + j] += v / gain;
        }
    }
    out
}

/// Banked channel-0 reference plus oracle wearer/partner masks.
fn banked_and_masks(
    cache: &SceneCache,
    weights0: &Array2<Complex64>,
) -> (Array2<Complex64>, (Mask, Mask)) {
    let reference = apply_channel(weights0, &cache.mixture_spec);
    let wearer_banked = apply_channel(weights0, &cache.wearer_spec);
    let partner_banked = apply_channel(weights0, &cache.partner_spec);
    let wearer_mask = oracle_mask(
        reference.view(),
        wearer_banked.view(),
        (&reference - &wearer_banked).view(),
    )
    .expect("shapes agree by construction");
    let partner_mask = oracle_mask(
        reference.view(),
        partner_banked.view(),
        (&reference - &partner_banked).view(),
    )
    .expect("shapes agree by construction");
    (reference, (wearer_mask, partner_mask))
}

/// Loss and its gradient w.r.t. the channel-0 weights, with both masks held
/// fixed at the values passed in.
fn loss_and_gradient_fixed_masks(
    cache: &SceneCache,
    weights0: &Array2<Complex64>,
    masks: &(Mask, Mask),
    loss_weights: &LossWeights,
    engine: &StftEngine,
) -> Result<(f64, Array2<Complex64>)> {
    let config = &engine.config;
    let n = config.fft_size;
    let hop = config.hop;
    let bins = config.retained_bins;
    let reference = apply_channel(weights0, &cache.mixture_spec);
    let frames = reference.ncols();
    let out_len = config.span(frames);
    let window = engine.window().to_vec();
    let cola = config.cola_gain();

    let mut total_loss = 0.0;
    let mut grad_reference: Array2<Complex64> = Array2::zeros((bins, frames));

    for (mask, target_ref) in [
        (&masks.0, &cache.wearer_ref),
        (&masks.1, &cache.partner_ref),
    ] {
        let masked = mask_times(mask, &reference);
        let estimate_raw = synthesize_masked(engine, &masked);
        let estimate = fit_length(estimate_raw, cache.len);
        let len = cache.len;

        // ----- forward loss terms -----
        let l1: f64 = estimate
            .iter()
            .zip(target_ref.iter())
            .map(|(e, r)| (e - r).abs())
            .sum::<f64>()
            / len as f64;

        let est_spec = stft(
            Array2::from_shape_vec((1, len), estimate.clone())
                .expect("length matches")
                .view(),
            config,
            cache.mixture_spec.sample_rate_hz,
        )?;
        let ref_spec = stft(
            Array2::from_shape_vec((1, len), target_ref.clone())
                .expect("length matches")
                .view(),
            config,
            cache.mixture_spec.sample_rate_hz,
        )?;
        let tf_count = (est_spec.bins() * est_spec.frames()) as f64;
        let stft_term: f64 = est_spec
            .data
            .iter()
            .zip(ref_spec.data.iter())
            .map(|(e, r)| (e.norm() - r.norm()).abs())
            .sum::<f64>()
            / tf_count;

        let si_sdr_pre = metrics::si_sdr_pre_clamp(&estimate, target_ref)?;
        let si_sdr_clamped = si_sdr_pre.clamp(-metrics::SI_SDR_CLAMP_DB, metrics::SI_SDR_CLAMP_DB);
        total_loss += loss_weights.l1 * l1 + loss_weights.stft * stft_term
            - loss_weights.neg_log_si_sdr * si_sdr_clamped;

        // ----- time-domain cogradient u = dL/d estimate -----
        let mut u = vec![0.0f64; len];
        for i in 0..len {
            let d = estimate[i] - target_ref[i];
            u[i] += loss_weights.l1 * d.signum() / len as f64;
        }
        if si_sdr_pre.abs() < metrics::SI_SDR_CLAMP_DB {
            let ref_energy: f64 = target_ref.iter().map(|v| v * v).sum();
            let dot: f64 = estimate.iter().zip(target_ref.iter()).map(|(e, r)| e * r).sum();
            let alpha = dot / ref_energy;
            let target_energy = alpha * alpha * ref_energy;
            let error_energy: f64 = estimate
                .iter()
                .zip(target_ref.iter())
                .map(|(e, r)| (e - alpha * r).powi(2))
                .sum();
            let scale = 10.0 / std::f64::consts::LN_10;
            for i in 0..len {
                let s_i = alpha * target_ref[i];
                let n_i = estimate[i] - s_i;
                let dsisdr = scale * (2.0 * s_i / target_energy - 2.0 * n_i / error_energy);
                u[i] += -loss_weights.neg_log_si_sdr * dsisdr;
            }
        }
        // STFT-magnitude term backpropagated through the analysis transform.
        {
            let est_frames = est_spec.frames();
            let mut q_frame = vec![Complex64::ZERO; bins];
            for frame in 0..est_frames {
                for bin in 0..bins {
                    let e = est_spec.data[(0, bin, frame)];
                    let r = ref_spec.data[(0, bin, frame)];
                    let mag = e.norm();
                    q_frame[bin] = if mag > 0.0 {
                        let sign = (mag - r.norm()).signum();
                        e / mag * (loss_weights.stft * sign / tf_count)
                    } else {
                        Complex64::ZERO
                    };
                }
                let v = engine.unnormalized_inverse(&q_frame);
                let start = frame * hop;
                for j in 0..n {
                    let idx = start + j;
                    if idx < len {
                        u[idx] += window[j] * v[j].re;
                    }
                }
            }
        }

        // ----- back through overlap-add synthesis to the masked spectrum -----
        // Samples beyond the synthesis span were zero padding.
        u.truncate(out_len.min(len));
        u.resize(out_len, 0.0);
        for frame in 0..frames {
            let spectrum = engine.forward_unwindowed(&u, frame * hop);
            for bin in 0..bins {
                let c = if bin == 0 || (bin == n / 2) { 1.0 } else { 2.0 };
                let g_s = spectrum[bin] * (c / (n as f64 * cola));
                // Chain through the real mask onto the reference spectrogram.
                grad_reference[(bin, frame)] += g_s * mask.data[(bin, frame)];
            }
        }
    }

    // ----- back through the beamformer: g_h[bin, mic] = sum_t X conj(gR) -----
    let mics = cache.mixture_spec.channels();
    let mut grad: Array2<Complex64> = Array2::zeros((bins, mics));
    for bin in 0..bins {
        for frame in 0..frames {
            let g_r = grad_reference[(bin, frame)];
            if g_r == Complex64::ZERO {
                continue;
            }
            for mic in 0..mics {
                grad[(bin, mic)] += cache.mixture_spec.data[(mic, bin, frame)] * g_r.conj();
            }
        }
    }
    if !total_loss.is_finite() || grad.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
        return Err(Error::NumericalFailure("non-finite loss or gradient".into()));
    }
    Ok((total_loss, grad))
}

/// Summed fixed-mask loss and gradient across scenes (index order, so the
/// result does not depend on scheduling).
fn total_loss_and_gradient(
    caches: &[SceneCache],
    weights0: &Array2<Complex64>,
    masks: &[(Mask, Mask)],
    loss_weights: &LossWeights,
    engine: &StftEngine,
) -> Result<(f64, Array2<Complex64>)> {
    let mut loss = 0.0;
    let mut grad: Array2<Complex64> =
        Array2::zeros((weights0.nrows(), weights0.ncols()));
    for (cache, mask_pair) in caches.iter().zip(masks.iter()) {
        let (l, g) = loss_and_gradient_fixed_masks(cache, weights0, mask_pair, loss_weights, engine)?;
        loss += l;
        grad += &g;
    }
    Ok((loss, grad))
}

fn total_loss(
    caches: &[SceneCache],
    weights0: &Array2<Complex64>,
    loss_weights: &LossWeights,
    engine: &StftEngine,
) -> Result<f64> {
    let mut loss = 0.0;
    for cache in caches {
        loss += scene_loss(cache, weights0, loss_weights, engine)?;
    }
    Ok(loss)
}

/// Central-difference gradient of the summed fixed-mask loss, every real and
/// imaginary component of the channel-0 weights.
fn finite_difference_gradient(
    caches: &[SceneCache],
    weights0: &Array2<Complex64>,
    masks: &[(Mask, Mask)],
    loss_weights: &LossWeights,
    engine: &StftEngine,
    step: f64,
) -> Result<Array2<Complex64>> {
    let fixed_loss = |w: &Array2<Complex64>| -> Result<f64> {
        let mut loss = 0.0;
        for (cache, mask_pair) in caches.iter().zip(masks.iter()) {
            let reference = apply_channel(w, &cache.mixture_spec);
            for (mask, target_ref) in [
                (&mask_pair.0, &cache.wearer_ref),
                (&mask_pair.1, &cache.partner_ref),
            ] {
                let masked = mask_times(mask, &reference);
                let estimate = fit_length(synthesize_masked(engine, &masked), cache.len);
                let breakdown = crate::spectral::separation_loss(
                    &estimate,
                    target_ref,
                    loss_weights,
                    &engine.config,
                    cache.mixture_spec.sample_rate_hz,
                )?;
                loss += breakdown.total;
            }
        }
        Ok(loss)
    };
    let mut grad = Array2::zeros((weights0.nrows(), weights0.ncols()));
    for bin in 0..weights0.nrows() {
        for mic in 0..weights0.ncols() {
            let mut d = [0.0f64; 2];
            for (part, slot) in d.iter_mut().enumerate() {
                let delta = if part == 0 {
                    Complex64::new(step, 0.0)
                } else {
                    Complex64::new(0.0, step)
                };
                let mut plus = weights0.clone();
                plus[(bin, mic)] += delta;
                let mut minus = weights0.clone();
                minus[(bin, mic)] -= delta;
                *slot = (fixed_loss(&plus)? - fixed_loss(&minus)?) / (2.0 * step);
            }
            grad[(bin, mic)] = Complex64::new(d[0], d[1]);
        }
    }
    Ok(grad)
}

/// Gradient refinement of the bank against the oracle-mask separation loss.
///
/// Each iteration recomputes the oracle masks for the current weights, takes
/// a descent step on the fixed-mask loss, and accepts the step only if the
/// end-to-end loss (with the candidate's own masks) does not increase; the
/// step is halved up to `max_backtracks` times first. The returned trace has
/// `iterations + 1` entries and is non-increasing.
pub fn refine_beamformer(
    bank: &BeamformerBank,
    scenes: &[SceneAudio],
    config: &RefinementConfig,
) -> Result<(BeamformerBank, Vec<f64>)> {
    if !(config.step_size >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be nonnegative, got {}",
            config.step_size
        )));
    }
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("refinement needs at least one scene".into()));
    }
    for scene in scenes {
        if scene.channels() != bank.mic_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", bank.mic_count()),
                got: format!("{}", scene.channels()),
            });
        }
    }
    let stft_config = StftConfig::for_grid(&bank.grid)?;
    let engine = StftEngine::new(&stft_config);
    let reference_index = bank.geometry.reference_index;
    let caches = scenes
        .iter()
        .map(|scene| SceneCache::build(scene, &stft_config, reference_index))
        .collect::<Result<Vec<_>>>()?;

    let mut refined = bank.clone();
    let mut weights0 = refined.channels[0].weights.clone();
    let mut current_loss = total_loss(&caches, &weights0, &config.loss_weights, &engine)
        .map_err(|e| at_iteration(e, 0))?;
    let mut trace = vec![current_loss];

    for iteration in 0..config.iterations {
        let masks: Vec<(Mask, Mask)> = caches
            .iter()
            .map(|cache| banked_and_masks(cache, &weights0).1)
            .collect();
        let gradient = match config.gradient_mode {
            GradientMode::Analytic => {
                total_loss_and_gradient(&caches, &weights0, &masks, &config.loss_weights, &engine)
                    .map_err(|e| at_iteration(e, iteration))?
                    .1
            }
            GradientMode::FiniteDifference => finite_difference_gradient(
                &caches,
                &weights0,
                &masks,
                &config.loss_weights,
                &engine,
                config.fd_step,
            )
            .map_err(|e| at_iteration(e, iteration))?,
        };

        let mut step = config.step_size;
        for _ in 0..=config.max_backtracks {
            if step == 0.0 {
                break;
            }
            let candidate = &weights0 - &gradient.mapv(|g| g * step);
            let candidate_loss = total_loss(&caches, &candidate, &config.loss_weights, &engine)
                .map_err(|e| at_iteration(e, iteration))?;
            if candidate_loss <= current_loss {
                weights0 = candidate;
                current_loss = candidate_loss;
                break;
            }
            step *= 0.5;
        }
        trace.push(current_loss);
    }

    refined.channels[0].weights = weights0;
    for channel in refined.channels.iter_mut() {
        channel.designer = Designer::Refined;
    }
    Ok((refined, trace))
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::NumericalFailure(msg) => Error::NonFinite {
            what: msg,
            iteration,
        },
        other => other,
    }
}

/// Analytic-vs-central-difference agreement on the summed fixed-mask loss:
/// `max |ga - gfd| / max(||gfd||_inf, 1e-12)` over every component of every
/// bank channel. Channels past the first never influence the loss, so both
/// gradients must vanish there.
pub fn gradient_check(
    bank: &BeamformerBank,
    scenes: &[SceneAudio],
    loss_weights: &LossWeights,
    fd_step: f64,
) -> Result<f64> {
    let stft_config = StftConfig::for_grid(&bank.grid)?;
    let engine = StftEngine::new(&stft_config);
    let reference_index = bank.geometry.reference_index;
    let caches = scenes
        .iter()
        .map(|scene| SceneCache::build(scene, &stft_config, reference_index))
        .collect::<Result<Vec<_>>>()?;
    let weights0 = bank.channels[0].weights.clone();
    let masks: Vec<(Mask, Mask)> = caches
        .iter()
        .map(|cache| banked_and_masks(cache, &weights0).1)
        .collect();
    let (_, analytic) =
        total_loss_and_gradient(&caches, &weights0, &masks, loss_weights, &engine)?;
    let fd = finite_difference_gradient(&caches, &weights0, &masks, loss_weights, &engine, fd_step)?;
    let scale = fd
        .iter()
        .map(|g| g.re.abs().max(g.im.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let worst = analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs()))
        .fold(0.0, f64::max);
    Ok(worst / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{design_bank, DesignerSpec};
    use crate::geometry::{ArrayGeometry, FrequencyGrid, SourceDescriptor};
    use crate::scene::SceneStems;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_geometry() -> ArrayGeometry {
        ArrayGeometry::new(
            "tri",
            vec![[0.0, 0.0, 0.0], [0.04, 0.0, 0.0], [0.0, 0.04, 0.0]],
            0,
        )
        .unwrap()
    }

    /// A synthetic scene: random stems summed directly (no room).
    fn toy_scene(mics: usize, len: usize, seed: u64, fs: f64) -> SceneAudio {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_stem = |scale: f64| -> Array2<f64> {
            let mut stem = Array2::zeros((mics, len));
            for v in stem.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
            stem
        };
        let wearer = rand_stem(1.0);
        let partner = rand_stem(0.8);
        let noise = rand_stem(0.2);
        let mut mixture = wearer.clone();
        mixture += &partner;
        mixture += &noise;
        SceneAudio {
            mixture,
            stems: SceneStems {
                wearer,
                partner,
                bystanders: vec![],
                noise,
            },
            alignment: crate::scene::SceneAlignment {
                scene_len: len,
                wearer: (0, len),
                partner: (0, len),
                bystanders: vec![],
                realized_overlap: vec![],
                noise_gain: 1.0,
                realized_snr_db: None,
            },
            sample_rate_hz: fs,
        }
    }

    fn toy_bank(k: usize) -> crate::beamforming::BeamformerBank {
        let grid = FrequencyGrid::new(16_000.0, 16, 8).unwrap();
        design_bank(
            &toy_geometry(),
            &grid,
            k,
            &SourceDescriptor::Point { xyz: [0.05, 0.0, -0.05] },
            &DesignerSpec::mvdr_default(),
        )
        .unwrap()
    }

    #[test]
    fn oracle_mask_limits() {
        let t = Array2::from_elem((4, 3), Complex64::new(1.0, 0.0));
        let zero: Array2<Complex64> = Array2::zeros((4, 3));
        let mix = &t + &zero;
        let mask = oracle_mask(mix.view(), t.view(), zero.view()).unwrap();
        assert!(mask.data.iter().all(|v| (v - 1.0).abs() < 1e-7));
        let mask = oracle_mask(mix.view(), zero.view(), t.view()).unwrap();
        assert!(mask.data.iter().all(|v| *v < 1e-7));
        let mask = oracle_mask(mix.view(), t.view(), t.view()).unwrap();
        assert!(mask.data.iter().all(|v| (v - 0.5).abs() < 1e-7));
        let narrow: Array2<Complex64> = Array2::zeros((2, 2));
        assert!(oracle_mask(mix.view(), narrow.view(), zero.view()).is_err());
    }

    #[test]
    fn zero_mixture_gives_zero_estimates() {
        let bank = toy_bank(1);
        let mut scene = toy_scene(3, 400, 1, 16_000.0);
        scene.mixture.fill(0.0);
        scene.stems.wearer.fill(0.0);
        scene.stems.partner.fill(0.0);
        scene.stems.noise.fill(0.0);
        let result = separate(&bank, &scene, &MaskSource::Oracle).unwrap();
        assert_eq!(result.wearer_estimate.len(), 400);
        assert!(result.wearer_estimate.iter().all(|v| *v == 0.0));
        assert!(result.partner_estimate.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ones_mask_reproduces_banked_channel_zero() {
        let bank = toy_bank(1);
        let scene = toy_scene(3, 512, 2, 16_000.0);
        let config = StftConfig::for_grid(&bank.grid).unwrap();
        let spec = stft(scene.mixture.view(), &config, 16_000.0).unwrap();
        let banked = apply_bank(&bank, &spec).unwrap();
        let frames = banked.frames();
        let ones = Mask::ones(8, frames);
        let result = separate(
            &bank,
            &scene,
            &MaskSource::Provided {
                wearer: ones.clone(),
                partner: ones,
            },
        )
        .unwrap();
        let direct = fit_length(
            istft_mono(&Spectrogram {
                data: banked
                    .channel(0)
                    .to_owned()
                    .into_shape_with_order((1, 8, frames))
                    .unwrap(),
                config,
                sample_rate_hz: 16_000.0,
            }),
            scene.len(),
        );
        for (a, b) in result.wearer_estimate.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separation_scales_linearly_with_the_scene() {
        let bank = toy_bank(2);
        let scene = toy_scene(3, 600, 3, 16_000.0);
        let mut scaled = scene.clone();
        scaled.mixture.mapv_inplace(|v| v * 4.0);
        scaled.stems.wearer.mapv_inplace(|v| v * 4.0);
        scaled.stems.partner.mapv_inplace(|v| v * 4.0);
        scaled.stems.noise.mapv_inplace(|v| v * 4.0);
        let base = separate(&bank, &scene, &MaskSource::Oracle).unwrap();
        let big = separate(&bank, &scaled, &MaskSource::Oracle).unwrap();
        let peak = base
            .wearer_estimate
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in base.wearer_estimate.iter().zip(big.wearer_estimate.iter()) {
            assert!((4.0 * a - b).abs() <= 1e-6 * peak.max(1.0));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let bank = toy_bank(1);
        let scene = toy_scene(5, 400, 4, 16_000.0);
        assert!(matches!(
            separate(&bank, &scene, &MaskSource::Oracle),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_iterations_returns_identical_bank() {
        let bank = toy_bank(1);
        let scenes = vec![toy_scene(3, 512, 5, 16_000.0)];
        let config = RefinementConfig {
            iterations: 0,
            ..RefinementConfig::default()
        };
        let (refined, trace) = refine_beamformer(&bank, &scenes, &config).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(refined.channels[0].weights, bank.channels[0].weights);
    }

    #[test]
    fn tiny_step_leaves_weights_unchanged() {
        let bank = toy_bank(1);
        let scenes = vec![toy_scene(3, 512, 6, 16_000.0)];
        let config = RefinementConfig {
            iterations: 2,
            step_size: 0.0,
            ..RefinementConfig::default()
        };
        let (refined, _) = refine_beamformer(&bank, &scenes, &config).unwrap();
        let worst = refined.channels[0]
            .weights
            .iter()
            .zip(bank.channels[0].weights.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_on_toy_problem() {
        let bank = toy_bank(1);
        let scenes = vec![toy_scene(3, 200, 7, 16_000.0)];
        let error = gradient_check(&bank, &scenes, &LossWeights::default(), 1e-5).unwrap();
        assert!(error < 1e-4, "max relative gradient error {error}");
    }

    #[test]
    fn refinement_loss_trace_is_non_increasing() {
        let bank = toy_bank(1);
        let scenes = vec![toy_scene(3, 512, 8, 16_000.0)];
        let config = RefinementConfig {
            iterations: 10,
            ..RefinementConfig::default()
        };
        let (_, trace) = refine_beamformer(&bank, &scenes, &config).unwrap();
        assert_eq!(trace.len(), 11);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn finite_difference_mode_also_descends() {
        let bank = toy_bank(1);
        let scenes = vec![toy_scene(3, 128, 9, 16_000.0)];
        let config = RefinementConfig {
            iterations: 2,
            gradient_mode: GradientMode::FiniteDifference,
            ..RefinementConfig::default()
        };
        let (_, trace) = refine_beamformer(&bank, &scenes, &config).unwrap();
        assert!(trace.last().unwrap() <= trace.first().unwrap());
    }
}
